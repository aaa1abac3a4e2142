use std::fs;
use std::path::PathBuf;
use std::thread;

use anyhow::{bail, Context, Result};
use clap::Parser;
use symdqn_core::harness::{emit_outputs, resume_run, run_experiment, Condition, ExperimentConfig};

// The training loop allocates and frees multi-megabyte gradient buffers every
// step; the system allocator returns them to the kernel each time.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Train and evaluate the SymDQN ablation conditions on the shapes grid.
#[derive(Debug, Parser)]
#[command(name = "symdqn", version)]
struct Args {
    /// Condition to run (dueldqn, symdqn, symdqn-ar, symdqn-af, symdqn-ar-af);
    /// all five when omitted.
    #[arg(long)]
    condition: Option<Condition>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// Base seed; run k uses seed + k.
    #[arg(long)]
    seed: Option<u64>,
    /// Full experiment configuration as JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Quick run: 5 epochs, 1 run.
    #[arg(long)]
    smoke: bool,
    /// Only regenerate summary.txt and plots from the CSVs under this directory.
    #[arg(long, value_name = "CSVDIR")]
    plots_only: Option<PathBuf>,
    /// Conditions trained in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Continue a run from one of its checkpoints (needs --condition).
    #[arg(long, value_name = "CHECKPOINT")]
    resume: Option<PathBuf>,
    /// Run index the resumed checkpoint belongs to.
    #[arg(long, default_value_t = 0, requires = "resume")]
    run: usize,
}

fn config(args: &Args) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if args.smoke {
        cfg.epochs = 5;
        cfg.runs = 1;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(r) = args.runs {
        cfg.runs = r;
    }
    if let Some(s) = args.seed {
        cfg.base_seed = s;
    }
    if let Some(o) = &args.out {
        cfg.output_dir = o.clone();
    }
    if let Some(c) = args.condition {
        cfg.condition = c;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    if let Some(dir) = &args.plots_only {
        let out = args.out.clone().unwrap_or_else(|| dir.clone());
        print!("{}", emit_outputs(dir, &out)?);
        return Ok(());
    }
    let base = config(&args)?;
    if let Some(ckpt) = &args.resume {
        if args.condition.is_none() {
            bail!("--resume needs --condition");
        }
        resume_run(&base, args.run, ckpt)?;
    } else {
        let conditions: Vec<Condition> = match args.condition {
            Some(c) => vec![c],
            None => Condition::ALL.to_vec(),
        };
        let jobs = args.jobs.max(1);
        for chunk in conditions.chunks(jobs) {
            thread::scope(|s| -> Result<()> {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&c| {
                        let cfg = ExperimentConfig {
                            condition: c,
                            ..base.clone()
                        };
                        s.spawn(move || run_experiment(&cfg).map(|_| ()))
                    })
                    .collect();
                for h in handles {
                    h.join().expect("worker panicked")?;
                }
                Ok(())
            })?;
        }
    }
    print!("{}", emit_outputs(&base.output_dir, &base.output_dir)?);
    Ok(())
}
