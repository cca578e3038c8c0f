//! Command-line front end. Exit codes: 0 success, 2 configuration, 3 data,
//! 4 numerical failure.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::{config, Result};
use crate::experiment::Variant;
use crate::pipeline::{self as p, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "cityadapt", version, about = "City-adaptive, mobility-aware sentiment classification")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides CITYADAPT_OUTPUT_DIR and the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Global seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Tweets JSONL (overrides paths.tweets).
    #[arg(long, global = true)]
    pub tweets: Option<PathBuf>,
    /// City features CSV (overrides paths.cities).
    #[arg(long, global = true)]
    pub cities: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus and held-out set.
    Synth,
    /// Validate a corpus and attach OD-derived mobility features.
    Ingest {
        #[arg(long)]
        od: Option<PathBuf>,
        #[arg(long)]
        crosswalk: Option<PathBuf>,
    },
    /// Screen city features for multicollinearity.
    Vif,
    /// Train the city encoder and write embeddings.
    TrainCities,
    /// Write the top-K neighbor report from city embeddings.
    Index {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Two-stage training of the global model.
    TrainGlobal {
        /// Zero the mobility input.
        #[arg(long)]
        pure_text: bool,
    },
    /// Adapt the global model to each city.
    Adapt {
        #[arg(long)]
        global: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
    },
    /// Score gold-labeled tweets and write metrics and predictions.
    Evaluate {
        #[arg(long)]
        global: PathBuf,
        /// Directory of per-city checkpoints.
        #[arg(long)]
        city_models: Option<PathBuf>,
        /// Annotation table for inter-annotator agreement.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Accumulative sentiment per city and day.
    AccSentiment {
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Regress daily mobility on accumulative sentiment per city.
    Correlate {
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Compare model variants on one split.
    Ablation {
        /// Comma-separated variant names (default: all).
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
    },
    /// Run everything end to end and write a manifest.
    Pipeline {
        /// Replay the configuration recorded in a manifest.
        #[arg(long)]
        from_manifest: Option<PathBuf>,
        /// Zero the mobility input (text-only ablation).
        #[arg(long)]
        pure_text: bool,
        /// Skip city adaptation.
        #[arg(long)]
        global_only: bool,
    },
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(t) = &common.tweets {
        cfg.paths.tweets = Some(t.clone());
    }
    if let Some(c) = &common.cities {
        cfg.paths.cities = Some(c.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(files: &[PathBuf]) {
    for f in files {
        println!("{}", f.display());
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.common)?;
    let out = p::output_dir(&cfg, cli.common.out.as_deref());
    let out = out.as_path();
    let files = match cli.command {
        Command::Synth => p::cmd_synth(&cfg, out)?,
        Command::Ingest { od, crosswalk } => {
            cfg.paths.od = od.or(cfg.paths.od);
            cfg.paths.crosswalk = crosswalk.or(cfg.paths.crosswalk);
            if cfg.paths.od.is_some() != cfg.paths.crosswalk.is_some() {
                return Err(config("--od and --crosswalk must be given together"));
            }
            p::cmd_ingest(&cfg, out)?
        }
        Command::Vif => p::cmd_vif(&cfg, out)?,
        Command::TrainCities => p::cmd_train_cities(&cfg, out)?,
        Command::Index { embeddings, k } => p::cmd_index(&embeddings, k, out)?,
        Command::TrainGlobal { pure_text } => {
            cfg.pure_text |= pure_text;
            p::cmd_train_global(&cfg, out)?
        }
        Command::Adapt { global, embeddings } => p::cmd_adapt(&cfg, &global, &embeddings, out)?,
        Command::Evaluate { global, city_models, annotations } => {
            cfg.paths.annotations = annotations.or(cfg.paths.annotations);
            p::cmd_evaluate(&cfg, &global, city_models.as_deref(), out)?
        }
        Command::AccSentiment { predictions } => p::cmd_acc_sentiment(&cfg, predictions.as_deref(), out)?,
        Command::Correlate { predictions } => p::cmd_correlate(&cfg, predictions.as_deref(), out)?,
        Command::Ablation { variants } => {
            let parsed = variants
                .iter()
                .map(|v| Variant::parse(v).ok_or_else(|| config(format!("unknown variant {v:?}"))))
                .collect::<Result<Vec<_>>>()?;
            p::cmd_ablation(&cfg, &parsed, out)?
        }
        Command::Pipeline { from_manifest, pure_text, global_only } => {
            cfg.pure_text |= pure_text;
            cfg.global_only |= global_only;
            let m = match from_manifest {
                Some(path) => p::rerun_from_manifest(&path, out)?,
                None => p::cmd_pipeline(&cfg, out)?,
            };
            println!("config_hash {}", m.config_hash);
            vec![out.join(p::MANIFEST_FILE)]
        }
    };
    report(&files);
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    main_with(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(main_with(["cityadapt", "no-such-command"]), 2);
        assert_eq!(main_with(["cityadapt", "ablation", "--variants", "Bogus"]), 2);
    }

    #[test]
    fn missing_input_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(main_with(["cityadapt", "--out", out, "vif"]), 2);
    }
}
