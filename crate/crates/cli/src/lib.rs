//! Pipeline orchestration behind the `dtsp` binary.
//!
//! Four commands cover the full flow: `train` produces policy checkpoints,
//! `generate-pool` samples a tour pool from them, `select` filters the pool
//! by cost factors and extracts maximally diverse subsets, and `scaling`
//! times pool generation across instance sizes. Every command is a plain
//! library function here, so tests drive them directly; the binary only
//! parses flags and a key = value config file.
//!
//! Reproducibility contract: one root seed per command, split into named
//! streams per subsystem and sample index. Re-running any command with the
//! same configuration yields byte-identical pool files and identical report
//! fields apart from wall-clock columns.

pub mod commands;
pub mod files;

pub use commands::{
    cmd_generate_pool, cmd_scaling, cmd_select, cmd_train, Method, PoolArgs, ScalingArgs,
    SelectArgs, TrainArgs,
};
pub use files::InstanceSpec;

/// Output directory fallback: flag, then this environment variable, then
/// `./dtsp-out`.
pub const OUTPUT_DIR_ENV: &str = "DTSP_OUTPUT_DIR";

pub fn default_output_dir() -> std::path::PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(Into::into)
        .unwrap_or_else(|| "dtsp-out".into())
}
