use std::path::PathBuf;
use std::process::ExitCode;

use beamfl::config::RunConfig;
use beamfl::nn::{grad_check, ModelKind};
use beamfl::pipeline;
use beamfl::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Federated beam selection for LEO constellations.
#[derive(Debug, Parser)]
#[command(name = "beamfl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for the dataset, checkpoints and reports.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Mlp,
    Gnn,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Mlp => ModelKind::Mlp,
            ModelArg::Gnn => ModelKind::Gnn,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the labelled dataset and its sidecar.
    Simulate,
    /// Federated training of one model on the generated dataset.
    Train {
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
    },
    /// Write report CSVs for trained checkpoints.
    Eval {
        /// Restrict to one model's checkpoint.
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        /// Explicit checkpoint files (repeatable).
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Evaluate a freshly initialized model instead of a checkpoint.
        #[arg(long)]
        untrained: bool,
    },
    /// Print the full default configuration.
    PrintDefaultConfig,
    /// Compare analytic gradients with central differences.
    GradCheck {
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Command::PrintDefaultConfig = cli.command {
        print!("{}", RunConfig::default().to_toml());
        return Ok(());
    }
    let cfg = load_config(&cli.common)?;
    let out = &cli.common.out_dir;
    match cli.command {
        Command::PrintDefaultConfig => unreachable!(),
        Command::Simulate => {
            let s = pipeline::simulate(&cfg, out)?;
            println!("wrote {} samples to {}", s.samples, s.path.display());
            for (plane, n) in s.per_plane {
                println!("plane {plane}: {n}");
            }
        }
        Command::Train { model } => {
            let kind = model.map_or(cfg.model.default_kind, Into::into);
            let t = pipeline::train(&cfg, out, kind)?;
            for r in &t.history.rounds {
                let top1 = r.global_top1.map_or("n/a".into(), |a| format!("{a:.4}"));
                println!("round {}: global top-1 {top1}", r.round);
            }
            println!(
                "trained {kind} in {:.1} s; checkpoint {}",
                t.train_time_s,
                t.checkpoint.display()
            );
        }
        Command::Eval {
            model,
            checkpoint,
            untrained,
        } => {
            if untrained {
                let ds = pipeline::load_dataset(&cfg, out)?;
                let kinds = model.map_or(vec![ModelKind::Mlp, ModelKind::Gnn], |m| vec![m.into()]);
                for kind in kinds {
                    let r = pipeline::evaluate_untrained(&cfg, &ds, kind)?;
                    println!(
                        "untrained {kind}: top-1 {:.4} top-3 {:.4} (n = {})",
                        r.top1, r.top3, r.n_test
                    );
                }
                return Ok(());
            }
            let mut paths = if checkpoint.is_empty() {
                pipeline::existing_checkpoints(&cfg, out)
            } else {
                checkpoint
            };
            if let Some(m) = model {
                let want = pipeline::Layout::new(&cfg, out).checkpoint(m.into());
                paths.retain(|p| *p == want);
            }
            for r in pipeline::evaluate(&cfg, out, &paths)? {
                println!(
                    "{}: top-1 {:.4} top-3 {:.4} client mean {:.4} (n = {})",
                    r.model, r.top1, r.top3, r.per_client.mean, r.n_test
                );
            }
        }
        Command::GradCheck { model } => {
            let kinds = model.map_or(vec![ModelKind::Mlp, ModelKind::Gnn], |m| vec![m.into()]);
            let mut worst: f64 = 0.0;
            for kind in kinds {
                let r = grad_check(&cfg.arch(kind), cfg.master_seed, cfg.eval.grad_check_batch)?;
                println!(
                    "{kind}: max relative error {:.3e} over {} coordinates ({} skipped at rectifier kinks)",
                    r.max_rel_error, r.checked, r.skipped
                );
                worst = worst.max(r.max_rel_error);
            }
            if worst >= 1e-4 {
                return Err(Error::Numeric(format!("gradient check failed: {worst:.3e} >= 1e-4")));
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Range { .. } | Error::Domain(_) | Error::Dimension { .. } => 2,
        Error::Divergence { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Error::Validation(errs) = &e {
                eprintln!("invalid configuration:");
                for msg in errs {
                    eprintln!("  - {msg}");
                }
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
