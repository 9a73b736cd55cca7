use std::path::{Path, PathBuf};
use std::process::ExitCode;

use attnmix::config::{parse_config, RunConfig};
use attnmix::{cmd_ablate, cmd_inspect_attention, cmd_train};
use clap::{Parser, Subcommand};

/// Dense/sparse entity attention for cooperative multi-agent Q-learning.
#[derive(Parser, Debug)]
#[command(name = "attnmix", version, about)]
struct Cli {
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress per-evaluation progress lines.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train every seed of a config and summarise win rates.
    Train { config: PathBuf },
    /// Run {vdn, qmix} × {dense_only, s2rl, sparse_only} over the config's seeds.
    Ablate { config: PathBuf },
    /// Roll greedy episodes from a checkpoint and dump attention weights.
    InspectAttention {
        checkpoint: PathBuf,
        /// Seed of the environment resets.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of environment steps to record.
        #[arg(long, default_value_t = 200)]
        steps: usize,
    },
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

fn load(path: &Path, out: &Option<PathBuf>) -> Result<RunConfig, ExitCode> {
    match parse_config(path) {
        Ok(mut run) => {
            if let Some(out) = out {
                run.out_dir = out.clone();
            }
            Ok(run)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(ExitCode::from(EXIT_CONFIG))
        }
    }
}

fn main() -> ExitCode {
    attnmix::tune_allocator();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { config } => {
            let run = match load(config, &cli.out) {
                Ok(run) => run,
                Err(code) => return code,
            };
            cmd_train(&run, cli.quiet).map(|results| {
                for r in results {
                    println!("seed {}: final win rate {:.3}, best {:.3}", r.seed, r.final_win_rate, r.best_win_rate);
                }
                println!("wrote {}", run.out_dir.join("summary.json").display());
            })
        }
        Command::Ablate { config } => {
            let run = match load(config, &cli.out) {
                Ok(run) => run,
                Err(code) => return code,
            };
            cmd_ablate(&run, cli.quiet).map(|path| println!("wrote {}", path.display()))
        }
        Command::InspectAttention { checkpoint, seed, steps } => {
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            cmd_inspect_attention(checkpoint, *seed, *steps, &out).map(|path| println!("wrote {}", path.display()))
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
