//! Library surface of the experiment front-end, split out so integration
//! tests can drive configuration parsing, persistence, and sweeps without
//! spawning the binary.

pub mod config;
pub mod output;
pub mod runner;
