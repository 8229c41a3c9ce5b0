//! Persistence: metrics CSV and the binary model format.
//!
//! The model file is one ASCII descriptor line (`mlp <sizes> <activation>`),
//! a little-endian `u64` length, then the parameters as little-endian
//! 64-bit floats.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};

use fedcross::{MetricsLog, MlpArchitecture, ParamVector};

use crate::config::parse_activation;

/// Fixed column set of every metrics file.
pub const METRICS_HEADER: &str = "round,method,alpha,strategy,global_accuracy,global_loss,\
                                  mw_acc_mean,mw_acc_min,mw_acc_max,bytes_down,bytes_up,elapsed_ms";

fn opt(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

/// Renders the evaluation rounds of a log as CSV text.
pub fn render_metrics(log: &MetricsLog) -> String {
    let mut out = String::from(METRICS_HEADER.trim());
    out.push('\n');
    for round in log.rounds.iter().filter(|r| r.global_accuracy.is_some()) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            round.round,
            log.method.as_str(),
            round.alpha_used,
            log.strategy.kind.as_str(),
            opt(round.global_accuracy),
            opt(round.global_loss),
            opt(round.middleware_acc_mean),
            opt(round.middleware_acc_min),
            opt(round.middleware_acc_max),
            round.bytes_down,
            round.bytes_up,
            round.elapsed_ms,
        ));
    }
    out
}

pub fn emit_metrics(log: &MetricsLog, path: &Path) -> Result<()> {
    std::fs::write(path, render_metrics(log))
        .with_context(|| format!("cannot write metrics to {}", path.display()))
}

pub fn emit_model(params: &ParamVector, arch: &MlpArchitecture, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)
        .with_context(|| format!("cannot create model file {}", path.display()))?;
    let mut writer = std::io::BufWriter::new(file);
    let sizes: Vec<String> = arch.layer_sizes().iter().map(|s| s.to_string()).collect();
    writeln!(writer, "mlp {} {}", sizes.join(","), arch.activation().as_str())?;
    writer.write_all(&(params.len() as u64).to_le_bytes())?;
    for &value in params.as_slice() {
        writer.write_all(&value.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(ParamVector, MlpArchitecture)> {
    let data = std::fs::read(path)
        .with_context(|| format!("cannot read model file {}", path.display()))?;
    let mut reader = data.as_slice();

    let newline = reader
        .iter()
        .position(|&b| b == b'\n')
        .context("model file is missing its descriptor line")?;
    let header = std::str::from_utf8(&reader[..newline]).context("descriptor is not UTF-8")?;
    reader = &reader[newline + 1..];

    let mut parts = header.split_whitespace();
    match parts.next() {
        Some("mlp") => {}
        other => bail!("unsupported model kind {other:?}"),
    }
    let sizes: Vec<usize> = parts
        .next()
        .context("descriptor is missing layer sizes")?
        .split(',')
        .map(|s| s.parse().map_err(|_| anyhow::anyhow!("bad layer size {s:?}")))
        .collect::<Result<_>>()?;
    let activation = parse_activation(parts.next().context("descriptor is missing activation")?)?;
    let arch = MlpArchitecture::new(sizes, activation).map_err(anyhow::Error::from)?;

    let mut len_bytes = [0u8; 8];
    reader.read_exact(&mut len_bytes).context("model file is missing its length header")?;
    let len = u64::from_le_bytes(len_bytes) as usize;
    if len != arch.param_count() {
        bail!("length header {len} does not match architecture ({})", arch.param_count());
    }

    let mut values = Vec::with_capacity(len);
    let mut buf = [0u8; 8];
    for i in 0..len {
        reader.read_exact(&mut buf).with_context(|| format!("model truncated at value {i}"))?;
        values.push(f64::from_le_bytes(buf));
    }
    let params = ParamVector::new(values).map_err(anyhow::Error::from)?;
    Ok((params, arch))
}
