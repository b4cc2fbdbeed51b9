//! Diverse TSP tour pools from the command line.
//!
//! Flags override a key = value config file (`--config`), which overrides
//! built-in defaults. Keys use the flag names with underscores, e.g.
//! `pool_size = 1000`. The default output directory comes from
//! `DTSP_OUTPUT_DIR` when set.

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use dtsp_cli::commands::{
    cmd_generate_pool, cmd_scaling, cmd_select, cmd_train, Method, PoolArgs, ScalingArgs,
    SelectArgs, TrainArgs,
};
use dtsp_cli::files::{load_kv, InstanceSpec};
use dtsp_core::policy::Mode;
use std::collections::BTreeMap;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "dtsp",
    about = "Generate pools of high-quality, structurally diverse TSP tours and select dispersed subsets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value config file supplying defaults for any flag
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $DTSP_OUTPUT_DIR or ./dtsp-out)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Root seed split into per-subsystem streams
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write checkpoints plus a per-epoch report
    Train {
        #[command(flatten)]
        common: Common,
        /// tree | matching
        #[arg(long)]
        mode: Option<Mode>,
        /// Entropy coefficient (>= 0)
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        steps_per_epoch: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long)]
        layers: Option<usize>,
    },
    /// Sample a pool of tours from trained checkpoints
    GeneratePool {
        #[command(flatten)]
        common: Common,
        /// TSPLIB path or random:n=<count>,seed=<seed>
        #[arg(long)]
        instance: Option<String>,
        /// gpn-tree | gpn-treem
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        tree_checkpoint: Option<PathBuf>,
        #[arg(long)]
        matching_checkpoint: Option<PathBuf>,
        #[arg(long)]
        pool_size: Option<usize>,
        #[arg(long)]
        matchings_per_tree: Option<usize>,
    },
    /// Filter a pool by cost factors and select diverse subsets
    Select {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        /// Comma-separated dispersion factors, e.g. 2,4,8,16
        #[arg(long)]
        c: Option<String>,
        /// Best-known-cost registry file (name cost per line)
        #[arg(long)]
        registry: Option<PathBuf>,
        /// Seed the first selected tour randomly instead of lowest-index
        #[arg(long)]
        random_first: bool,
    },
    /// Time pool generation across instance sizes and fit the growth rate
    Scaling {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated instance sizes, e.g. 50,100,200,400
        #[arg(long)]
        sizes: Option<String>,
        #[arg(long)]
        pool_size: Option<usize>,
    },
}

/// Flag value, then config-file value, then default.
struct Merge {
    config: BTreeMap<String, String>,
}

impl Merge {
    fn load(path: &Option<PathBuf>) -> Result<Self> {
        let config = match path {
            Some(p) => load_kv(p)?,
            None => BTreeMap::new(),
        };
        Ok(Self { config })
    }

    fn get<T: std::str::FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.config.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|e| anyhow::anyhow!("config key {key}: {e}")),
            None => Ok(default),
        }
    }

    fn require<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        match self.config.get(key) {
            Some(raw) => raw
                .parse()
                .map_err(|e| anyhow::anyhow!("config key {key}: {e}")),
            None => anyhow::bail!("missing required option --{}", key.replace('_', "-")),
        }
    }

    fn out_dir(&self, flag: Option<PathBuf>) -> PathBuf {
        flag.or_else(|| self.config.get("out_dir").map(PathBuf::from))
            .unwrap_or_else(dtsp_cli::default_output_dir)
    }
}

fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| anyhow::anyhow!("bad list entry {s:?}: {e}"))
        })
        .collect()
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Train {
            common,
            mode,
            alpha,
            n_train,
            epochs,
            steps_per_epoch,
            batch_size,
            learning_rate,
            checkpoint_every,
            hidden,
            layers,
        } => {
            let m = Merge::load(&common.config)?;
            let mode: Mode = m.require(mode, "mode")?;
            let args = TrainArgs {
                mode,
                alpha: m.require(alpha, "alpha")?,
                n_train: m.get(n_train, "n_train", 40)?,
                epochs: m.get(epochs, "epochs", 100)?,
                steps_per_epoch: m.get(steps_per_epoch, "steps_per_epoch", 1000)?,
                batch_size: m.get(
                    batch_size,
                    "batch_size",
                    match mode {
                        Mode::Tree => 256,
                        Mode::Matching => 128,
                    },
                )?,
                learning_rate: m.get(learning_rate, "learning_rate", 5e-4)?,
                seed: m.get(common.seed, "seed", 0)?,
                checkpoint_every: m.get(checkpoint_every, "checkpoint_every", 10)?,
                hidden: m.get(hidden, "hidden", 128)?,
                layers: m.get(layers, "layers", 3)?,
                out_dir: m.out_dir(common.out_dir),
            };
            let out = cmd_train(&args)?;
            println!("checkpoint: {}", out.final_checkpoint.display());
            println!("report: {}", out.report_csv.display());
        }
        Command::GeneratePool {
            common,
            instance,
            method,
            tree_checkpoint,
            matching_checkpoint,
            pool_size,
            matchings_per_tree,
        } => {
            let m = Merge::load(&common.config)?;
            let instance_text: String = m.require(instance, "instance")?;
            let args = PoolArgs {
                instance: InstanceSpec::parse(&instance_text)?,
                method: m.get(method, "method", Method::GpnTree)?,
                tree_checkpoint: m.require(tree_checkpoint, "tree_checkpoint")?,
                matching_checkpoint: matching_checkpoint
                    .or_else(|| m.config.get("matching_checkpoint").map(PathBuf::from)),
                pool_size: m.get(pool_size, "pool_size", 1000)?,
                matchings_per_tree: m.get(matchings_per_tree, "matchings_per_tree", 1)?,
                seed: m.get(common.seed, "seed", 0)?,
                out_dir: m.out_dir(common.out_dir),
            };
            let out = cmd_generate_pool(&args)?;
            println!("pool: {}", out.pool_file.display());
            println!("manifest: {}", out.manifest_file.display());
            println!("generation seconds: {}", out.gen_seconds);
        }
        Command::Select {
            common,
            pool,
            k,
            c,
            registry,
            random_first,
        } => {
            let m = Merge::load(&common.config)?;
            let c_text: String = m.get(c, "c", "2,4,8,16".to_string())?;
            let args = SelectArgs {
                pool_file: m.require(pool, "pool")?,
                k: m.require(k, "k")?,
                c_values: parse_list(&c_text)?,
                registry: registry.or_else(|| m.config.get("registry").map(PathBuf::from)),
                seed: m.get(common.seed, "seed", 0)?,
                random_first: random_first
                    || m.config.get("random_first").map(|v| v == "true").unwrap_or(false),
                out_dir: m.out_dir(common.out_dir),
            };
            let out = cmd_select(&args)?;
            for row in &out.rows {
                let stats = row
                    .selection
                    .as_ref()
                    .map(|s| format!("avg_jaccard {} +- {}", s.avg_jaccard, s.std_jaccard))
                    .unwrap_or_else(|| "-".to_string());
                println!(
                    "c={} status={} filtered={} distinct={} {}",
                    row.c, row.status, row.filtered_size, row.distinct_size, stats
                );
            }
            println!("bench: {}", out.bench_csv.display());
            println!("selection: {}", out.selection_csv.display());
        }
        Command::Scaling {
            common,
            checkpoint,
            sizes,
            pool_size,
        } => {
            let m = Merge::load(&common.config)?;
            let sizes_text: String = m.get(sizes, "sizes", "50,100,200,400".to_string())?;
            let args = ScalingArgs {
                checkpoint: m.require(checkpoint, "checkpoint")?,
                sizes: parse_list(&sizes_text)?,
                pool_size: m.get(pool_size, "pool_size", 100)?,
                seed: m.get(common.seed, "seed", 0)?,
                out_dir: m.out_dir(common.out_dir),
            };
            let out = cmd_scaling(&args)?;
            for (n, t) in &out.rows {
                println!("n={n} pool_seconds={t}");
            }
            if let Some(slope) = out.slope {
                println!("log-log slope: {slope}");
            }
            println!("csv: {}", out.csv.display());
        }
    }
    Ok(())
}
