use clap::error::ErrorKind;
use clap::Parser;

use fedcross_cli::config::{resolve, Cli};
use fedcross_cli::runner::{prepare_shared_dataset, run_experiments};

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };

    let exp = match resolve(&cli) {
        Ok(exp) => exp,
        Err(e) => {
            eprintln!("configuration error: {e:#}");
            return 1;
        }
    };

    let shared = match prepare_shared_dataset(&exp) {
        Ok(shared) => shared,
        Err(e) => {
            eprintln!("configuration error: {e:#}");
            return 1;
        }
    };

    match run_experiments(&exp, &shared) {
        Ok(report) => {
            println!("\n{}", report.summary_table.trim_end());
            if let Some(path) = &report.summary_path {
                println!("summary written to {}", path.display());
            }
            if report.any_failed() {
                2
            } else {
                0
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}
