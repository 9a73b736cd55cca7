//! Experiment harness for `attnmix-core`: flat JSON run configs, training
//! over several seeds, the dense/sparse ablation grid, attention dumps and
//! checkpoints.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod output;

pub use checkpoint::Checkpoint;
pub use commands::{cmd_ablate, cmd_inspect_attention, cmd_train, run_seed};
pub use config::{parse_config, parse_config_str, ConfigError, RunConfig};

/// Keeps freed memory inside the process.
///
/// Training allocates and frees the same multi-megabyte activation buffers
/// every step. With glibc's defaults those large blocks are returned to the
/// kernel on free and faulted back in on the next allocation, which costs
/// about as much as the arithmetic. Raising the mmap and trim thresholds
/// roughly halves the time per update. A no-op on other platforms.
pub fn tune_allocator() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator tunables; it is called before
    // any other thread exists and takes plain integer arguments.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 32 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TOP_PAD, 256 << 20);
    }
}
