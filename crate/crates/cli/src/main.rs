use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use flowsan::inference::EvalMode;
use flowsan::learn::Exec;
use flowsan::pipeline::{self, Layout, RunConfig, Status};

/// Gender-privacy perturbation experiments: SAN ensembles and FlowSAN.
#[derive(Debug, Parser)]
#[command(name = "flowsan", version)]
struct Cli {
    /// TOML config (or a `run.json` manifest); defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Evaluation depths, e.g. `1..5`.
    #[arg(long, global = true)]
    depths: Option<String>,
    /// Comma-separated false match rates for TMR, e.g. `0.01,0.001`.
    #[arg(long, global = true)]
    fmr: Option<String>,
    /// Run every loop on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic face dataset and its splits.
    GenData,
    /// Train auxiliary/unseen models, the SAN ensemble, or the FlowSAN chain.
    Train {
        #[arg(value_enum)]
        regime: Regime,
    },
    /// Evaluate both chains against the unseen models.
    Evaluate {
        /// Write to `eval-<TAG>/` instead of `eval/`, e.g. for other depths.
        #[arg(long)]
        tag: Option<String>,
    },
    /// Trace one image through a chain and write an annotated grid.
    Demo {
        /// PGM or PNG image of the dataset's size; defaults to the first
        /// evaluation sample.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Gender label of `--image` (0 female, 1 male); predicted when absent.
        #[arg(long)]
        label: Option<u8>,
        #[arg(long, value_enum)]
        mode: Option<DemoMode>,
        /// Trace depth; the whole chain when absent.
        #[arg(long)]
        depth: Option<usize>,
    },
    /// gen-data, train aux, train ensemble, train flowsan and evaluate.
    Run,
    /// Print the effective config as TOML.
    Config,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Regime {
    Aux,
    Ensemble,
    Flowsan,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DemoMode {
    Flow,
    EnsAvg,
    EnsGibbs,
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(d) = &cli.depths {
        cfg.eval.metrics.depths = RunConfig::parse_depths(d)?;
    }
    if let Some(f) = &cli.fmr {
        cfg.eval.metrics.fmrs = RunConfig::parse_fmrs(f)?;
    }
    if cli.sequential {
        cfg.exec = Exec::Sequential;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn notice(what: &str, status: Status) {
    match status {
        Status::Created => println!("{what}: done"),
        Status::UpToDate => println!("{what}: up to date"),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = config(&cli)?;
    match cli.command {
        Command::GenData => notice("gen-data", pipeline::gen_data(&cfg)?),
        Command::Train { regime } => match regime {
            Regime::Aux => notice("train aux", pipeline::train_aux(&cfg)?),
            Regime::Ensemble => notice("train ensemble", pipeline::train_ensemble_cmd(&cfg)?),
            Regime::Flowsan => notice("train flowsan", pipeline::train_flowsan_cmd(&cfg)?),
        },
        Command::Evaluate { tag } => {
            let dir = match tag {
                Some(t) => cfg.out.join(format!("eval-{t}")),
                None => Layout::new(&cfg.out).eval(),
            };
            let (report, status) = pipeline::evaluate_into(&cfg, &dir)?;
            print!("{}", pipeline::summary(&cfg, &report));
            notice(&format!("evaluate ({})", dir.display()), status);
        }
        Command::Demo { image, label, mode, depth } => {
            if let Some(m) = mode {
                cfg.demo.mode = match m {
                    DemoMode::Flow => EvalMode::Flow,
                    DemoMode::EnsAvg => EvalMode::EnsAvg,
                    DemoMode::EnsGibbs => EvalMode::EnsGibbs,
                };
            }
            if let Some(d) = depth {
                cfg.demo.depth = d;
            }
            cfg.validate()?;
            let out = pipeline::demo(&cfg, image.as_deref(), label)?;
            print!("{}", out.annotations);
            notice(&format!("demo ({})", out.dir.display()), out.status);
        }
        Command::Run => {
            let report = pipeline::run_all(&cfg)?;
            print!("{}", pipeline::summary(&cfg, &report));
        }
        Command::Config => print!("{}", cfg.to_toml()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
