//! `apnea` command line: stagewise batch pipeline over WFDB records.

pub mod artifacts;
pub mod config;
pub mod features;
pub mod ingest;
pub mod model;
pub mod stats;
pub mod synth;

use std::path::PathBuf;

use anyhow::{Context, Result};
use apnea_core::feature_extract::{BoundaryPolicy, FeatureSet};
use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some records failed; the rest were processed.
    Partial,
}

impl Outcome {
    pub fn code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Partial => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "apnea", version, about = "Single-lead ECG sleep apnea detection pipeline")]
pub struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for record-level and batch parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Overrides the training seed (and the synthetic data seed for `synth`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inventory the WFDB records in a directory.
    Ingest {
        dir: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write synthetic labelled records, or score the peak detector on synthetic ECG.
    Synth(synth::SynthArgs),
    /// Detect beats and build feature segments for every record.
    Features(FeatureArgs),
    /// Per-class histograms of each feature channel.
    Stats(stats::StatsArgs),
    /// Train a classifier on one feature set.
    Train(model::TrainArgs),
    /// Score a checkpoint on the test features.
    Eval(model::EvalArgs),
    /// Train and evaluate both feature sets and compare them.
    Ablate(model::AblateArgs),
}

#[derive(Debug, Args)]
pub struct FeatureArgs {
    /// Directory with WFDB records (overrides `dataset_dir`).
    pub dataset: Option<PathBuf>,
    /// Feature set(s) to build; repeatable.
    #[arg(long = "feature-set", value_parser = parse_feature_set)]
    pub feature_sets: Vec<FeatureSet>,
    /// Reject minutes whose 5-minute window leaves the recording.
    #[arg(long, conflicts_with = "shift_boundary")]
    pub drop_boundary: bool,
    /// Slide edge windows inward instead of rejecting them.
    #[arg(long)]
    pub shift_boundary: bool,
    #[command(flatten)]
    pub beats: BeatArgs,
}

/// Command-line overrides for the beat pipeline.
#[derive(Debug, Clone, Default, Args)]
pub struct BeatArgs {
    /// Band-pass edges in Hz, e.g. `8,12`.
    #[arg(long, value_parser = parse_band)]
    pub band: Option<(f64, f64)>,
    #[arg(long)]
    pub fir_order: Option<usize>,
    #[arg(long)]
    pub rr_min: Option<f64>,
    #[arg(long)]
    pub rr_max: Option<f64>,
    #[arg(long)]
    pub rr_window: Option<usize>,
}

impl BeatArgs {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        let b = &mut cfg.beats;
        if let Some(band) = self.band {
            b.band = band;
        }
        if let Some(order) = self.fir_order {
            b.filter_order = order;
        }
        if let Some(v) = self.rr_min {
            b.rr_bounds.rr_min = v;
        }
        if let Some(v) = self.rr_max {
            b.rr_bounds.rr_max = v;
        }
        if let Some(v) = self.rr_window {
            b.rr_bounds.window = v;
        }
    }
}

pub fn parse_feature_set(s: &str) -> Result<FeatureSet, String> {
    s.parse()
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected `lo,hi`")?;
    let lo = lo.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = hi.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

fn init_pool(jobs: Option<usize>) -> Result<()> {
    if let Some(n) = jobs {
        // A second call in the same process (tests) keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<Outcome> {
    init_pool(cli.jobs)?;
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    match cli.command {
        Command::Ingest { dir, json } => {
            let dir = dir.or_else(|| cfg.dataset_dir.clone()).context("no dataset directory given")?;
            ingest::cmd_ingest(&dir, json.as_deref())
        }
        Command::Synth(args) => synth::cmd_synth(&cfg, &args, cli.seed.unwrap_or(0)),
        Command::Features(args) => {
            if let Some(d) = args.dataset {
                cfg.dataset_dir = Some(d);
            }
            if !args.feature_sets.is_empty() {
                cfg.feature_sets = args.feature_sets;
            }
            if args.drop_boundary {
                cfg.boundary = BoundaryPolicy::Drop;
            }
            if args.shift_boundary {
                cfg.boundary = BoundaryPolicy::Shift;
            }
            args.beats.apply(&mut cfg);
            cfg.validate()?;
            features::cmd_features(&cfg)
        }
        Command::Stats(args) => stats::cmd_stats(&cfg, &args),
        Command::Train(args) => {
            args.overrides.apply(&mut cfg);
            cfg.validate()?;
            model::cmd_train(&cfg, &args).map(|_| Outcome::Success)
        }
        Command::Eval(args) => model::cmd_eval(&cfg, &args).map(|_| Outcome::Success),
        Command::Ablate(args) => {
            args.overrides.apply(&mut cfg);
            cfg.validate()?;
            model::cmd_ablate(&cfg, &args)
        }
    }
}
