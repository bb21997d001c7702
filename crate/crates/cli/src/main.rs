//! `cxrnet`: synthesize data, prepare cohorts, train, evaluate and inspect
//! network sizes.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! Errors are printed to standard error prefixed with `error:`.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use cxrnet::data::{SplitUnit, UncertainPolicy};
use cxrnet::evaluation::F1Objective;

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "cxrnet", version, about = "Dense-connectivity CNN pipeline for binary chest X-ray findings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (images, manifest and split cohort).
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Extract and split a cohort from a CheXpert-style manifest.
    Prepare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        /// Directory manifest paths are relative to [default: the manifest's directory].
        #[arg(long, value_name = "DIR")]
        image_root: Option<PathBuf>,
        #[arg(long, value_name = "POLICY")]
        uncertain: Option<UncertainPolicy>,
        #[arg(long, value_name = "UNIT")]
        split_unit: Option<SplitUnit>,
    },
    /// Train on a cohort; keeps the least-validation-loss checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        cohort: Option<PathBuf>,
    },
    /// Score the test split of a cohort with a checkpoint.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        cohort: Option<PathBuf>,
        /// Decision threshold [default: chosen on the validation split].
        #[arg(long, value_name = "FLOAT")]
        threshold: Option<f64>,
        /// F1 maximized when choosing the threshold: macro or positive.
        #[arg(long, value_name = "OBJECTIVE")]
        objective: Option<F1Objective>,
    },
    /// Print trainable and non-trainable parameter counts.
    Params {
        #[arg(long, value_name = "PATH")]
        config: Option<PathBuf>,
        #[arg(long, value_name = "NAME")]
        preset: Option<String>,
        /// Also run one forward pass and print each stage's output shape.
        #[arg(long)]
        trace: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth { .. } => "synth",
            Command::Prepare { .. } => "prepare",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Params { .. } => "params",
        }
    }
}

/// Flags shared by the data and training subcommands.
#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; flags override its keys.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    #[arg(long, value_name = "NAME")]
    pathology: Option<String>,
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Output directory; nothing is written outside it.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(p) = self.pathology {
            cfg.synthetic.pathology.clone_from(&p);
            cfg.pathology = p;
        }
        if let Some(p) = self.preset {
            cfg.preset = p;
            cfg.network = None;
        }
        if self.out.is_some() {
            cfg.out = self.out;
        }
        cfg.propagate_seed();
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { common } => commands::synth(common.resolve()?),
        Command::Prepare { common, manifest, image_root, uncertain, split_unit } => {
            let mut cfg = common.resolve()?;
            cfg.manifest = manifest.or(cfg.manifest);
            cfg.image_root = image_root.or(cfg.image_root);
            cfg.uncertain = uncertain.unwrap_or(cfg.uncertain);
            cfg.split_unit = split_unit.unwrap_or(cfg.split_unit);
            commands::prepare(cfg)
        }
        Command::Train { common, cohort } => {
            let mut cfg = common.resolve()?;
            cfg.cohort = cohort.or(cfg.cohort);
            commands::train(cfg)
        }
        Command::Evaluate { common, checkpoint, cohort, threshold, objective } => {
            let mut cfg = common.resolve()?;
            cfg.checkpoint = checkpoint.or(cfg.checkpoint);
            cfg.cohort = cohort.or(cfg.cohort);
            cfg.threshold = threshold.or(cfg.threshold);
            cfg.objective = objective.unwrap_or(cfg.objective);
            commands::evaluate(cfg)
        }
        Command::Params { config, preset, trace } => {
            let mut cfg = match &config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig::default(),
            };
            match preset {
                Some(p) => {
                    cfg.preset = p;
                    cfg.network = None;
                }
                None if config.is_none() => {
                    return Err(CliError::Usage("params needs --preset or --config".into()));
                }
                None => {}
            }
            commands::params(&cfg, trace)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("error: {}", e.render().to_string().trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    let name = cli.command.name();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            if let CliError::Usage(_) = e {
                let mut cmd = Cli::command();
                cmd.build();
                if let Some(sub) = cmd.find_subcommand_mut(name) {
                    eprintln!("\n{}", sub.render_usage());
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
