//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::PipelineConfig;
use crate::pipeline;
use crate::policy::Variant;
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "swarm-imitation", version, about = "Simulate, infer and imitate a multi-robot defense team")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML config file; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Episode count override (demonstration episodes; evaluation episodes
    /// for `evaluate`; runs for `infer-demo`).
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Accept inputs produced under a different config hash.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VariantArg {
    Gt,
    Imm,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Gt => Variant::Gt,
            VariantArg::Imm => Variant::Imm,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out the expert and write the mission log and the ground-truth dataset.
    SimulateExpert(Common),
    /// Run the IMM filter over a mission log and write the inferred dataset.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Directory holding mission.jsonl / attacks.jsonl (default: --out).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Random-switching inference test without intruders.
    InferDemo(Common),
    /// Train an imitator on one dataset variant.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        variant: VariantArg,
        /// Dataset file (default: dataset_<variant>.jsonl in --out).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Evaluate expert, both imitators and the random baseline.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory holding model_gt.txt / model_imm.txt (default: --out).
        #[arg(long)]
        models: Option<PathBuf>,
    },
}

enum EpisodeTarget {
    Demo,
    Eval,
    DemoRuns,
}

fn load_config(common: &Common, target: EpisodeTarget) -> Result<PipelineConfig> {
    let mut config = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(n) = common.episodes {
        match target {
            EpisodeTarget::Demo => config.episodes.demo = n,
            EpisodeTarget::Eval => config.episodes.eval = n,
            EpisodeTarget::DemoRuns => config.infer_demo.runs = n,
        }
    }
    config.validate()?;
    Ok(config)
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn execute(cli: Cli) -> Result<String> {
    match cli.command {
        Command::SimulateExpert(common) => {
            let config = load_config(&common, EpisodeTarget::Demo)?;
            prepare_out(&common.out)?;
            pipeline::run_simulate_expert(&config, &common.out)
        }
        Command::Infer { common, log } => {
            let config = load_config(&common, EpisodeTarget::Demo)?;
            prepare_out(&common.out)?;
            let log_dir = log.unwrap_or_else(|| common.out.clone());
            pipeline::run_infer(&config, &log_dir, &common.out, common.force)
        }
        Command::InferDemo(common) => {
            let config = load_config(&common, EpisodeTarget::DemoRuns)?;
            prepare_out(&common.out)?;
            pipeline::run_infer_demo(&config, &common.out)
        }
        Command::Train {
            common,
            variant,
            dataset,
        } => {
            let config = load_config(&common, EpisodeTarget::Demo)?;
            prepare_out(&common.out)?;
            let variant = Variant::from(variant);
            let path = dataset.unwrap_or_else(|| common.out.join(pipeline::dataset_file(variant)));
            pipeline::run_train(&config, variant, &path, &common.out, common.force)
        }
        Command::Evaluate { common, models } => {
            let config = load_config(&common, EpisodeTarget::Eval)?;
            prepare_out(&common.out)?;
            let model_dir = models.unwrap_or_else(|| common.out.clone());
            pipeline::run_evaluate(&config, &model_dir, &common.out, common.force)
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 success, 2 config/usage error, 3 I/O or format error, 4 numerical failure.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
