use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use apnea_core::feature_extract::{FeatureSegment, FeatureSet};
use apnea_core::metrics_eval::{compare_feature_sets, compute_metrics, confusion, AblationTable, MetricsReport};
use apnea_core::se_cnn::{record_level_split, train, Checkpoint, EpochStats, SeCnn};
use apnea_core::wfdb_io::read_feature_file;
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::artifacts::{hashed_path, sha256_hex, write_file, write_json};
use crate::config::PipelineConfig;
use crate::features::{feature_path, Split};
use crate::{parse_feature_set, Outcome};

#[derive(Debug, Clone, Default, Args)]
pub struct TrainOverrides {
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub val_fraction: Option<f64>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.train.batch_size = b;
        }
        if let Some(lr) = self.lr {
            cfg.train.learning_rate = lr;
        }
        if let Some(v) = self.val_fraction {
            cfg.val_fraction = v;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long = "feature-set", default_value = "rs", value_parser = parse_feature_set)]
    pub feature_set: FeatureSet,
    /// Training features (default `<output_dir>/features/train-<set>.apnfeat`).
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long = "feature-set", default_value = "rs", value_parser = parse_feature_set)]
    pub feature_set: FeatureSet,
    /// Checkpoint (default: the latest one trained for this feature set).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Test features (default `<output_dir>/features/test-<set>.apnfeat`).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// SA probability at or above which a minute is called SA.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

/// Written next to each checkpoint and as `latest-<set>.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainManifest {
    pub feature_set: FeatureSet,
    pub checkpoint: PathBuf,
    pub features: PathBuf,
    pub best_epoch: u32,
    pub val_f1_sa: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub seed: u64,
    pub history: Vec<EpochRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_f1_sa: f64,
}

impl From<&EpochStats> for EpochRow {
    fn from(e: &EpochStats) -> Self {
        Self {
            epoch: e.epoch,
            train_loss: e.train_loss,
            val_accuracy: e.val.accuracy,
            val_f1_sa: e.val.f1_sa,
        }
    }
}

fn load_segments(path: &Path, set: FeatureSet) -> Result<Vec<FeatureSegment>> {
    let segments = read_feature_file(path).with_context(|| format!("reading features {}", path.display()))?;
    if segments.is_empty() {
        bail!("{} holds no segments", path.display());
    }
    let found = segments[0].n_channels();
    if found != set.n_channels() {
        bail!(
            "{} has {found} channels but feature set {} needs {}",
            path.display(),
            set.tag(),
            set.n_channels()
        );
    }
    Ok(segments)
}

fn latest_path(cfg: &PipelineConfig, set: FeatureSet) -> PathBuf {
    cfg.dir("checkpoints").join(format!("latest-{}.json", set.tag()))
}

pub fn cmd_train(cfg: &PipelineConfig, args: &TrainArgs) -> Result<TrainManifest> {
    let set = args.feature_set;
    let path = args.features.clone().unwrap_or_else(|| feature_path(cfg, Split::Train, set));
    let segments = load_segments(&path, set).context("train")?;
    let model_cfg = cfg.model.for_set(set);
    let (train_set, val_set) = record_level_split(&segments, cfg.val_fraction, cfg.train.seed);
    log::info!(
        "training {} on {} segments, validating on {}",
        set.tag(),
        train_set.len(),
        val_set.len()
    );
    let outcome = train(model_cfg, &cfg.train, &train_set, &val_set).context("train")?;

    let bytes = std::fs::read(&path)?;
    let settings = serde_json::to_vec(&(&model_cfg, &cfg.train, cfg.val_fraction))?;
    let hash = sha256_hex(&[&bytes, &settings]);
    let dir = cfg.dir("checkpoints");
    let ckpt_path = hashed_path(&dir, set.tag(), &hash, "apnckpt");
    write_file(&ckpt_path, &outcome.best.to_bytes())?;
    let manifest = TrainManifest {
        feature_set: set,
        checkpoint: ckpt_path.clone(),
        features: path,
        best_epoch: outcome.best.meta.epoch,
        val_f1_sa: outcome.best.meta.val_f1_sa,
        n_train: train_set.len(),
        n_val: val_set.len(),
        seed: cfg.train.seed,
        history: outcome.history.iter().map(EpochRow::from).collect(),
    };
    write_json(&ckpt_path.with_extension("json"), &manifest)?;
    write_json(&latest_path(cfg, set), &manifest)?;
    println!(
        "{}: best epoch {} (val F1 SA {:.2}%), checkpoint {}",
        set.tag(),
        manifest.best_epoch,
        100.0 * manifest.val_f1_sa,
        ckpt_path.display()
    );
    Ok(manifest)
}

pub fn evaluate(model: &SeCnn, segments: &[FeatureSegment], threshold: f64) -> Result<MetricsReport> {
    let predicted = model.predict(segments, threshold)?;
    let truth: Vec<_> = segments.iter().map(|s| s.label).collect();
    Ok(compute_metrics(&confusion(&predicted, &truth)?))
}

fn resolve_checkpoint(cfg: &PipelineConfig, set: FeatureSet, explicit: Option<&Path>) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    let latest = latest_path(cfg, set);
    let text = std::fs::read_to_string(&latest)
        .with_context(|| format!("no checkpoint given and {} is missing; run `train` first", latest.display()))?;
    let manifest: TrainManifest = serde_json::from_str(&text).with_context(|| format!("parsing {}", latest.display()))?;
    Ok(manifest.checkpoint)
}

pub fn cmd_eval(cfg: &PipelineConfig, args: &EvalArgs) -> Result<MetricsReport> {
    let set = args.feature_set;
    let ckpt_path = resolve_checkpoint(cfg, set, args.checkpoint.as_deref()).context("eval")?;
    let ckpt = Checkpoint::load(&ckpt_path)
        .with_context(|| format!("loading checkpoint {}", ckpt_path.display()))
        .context("eval")?;
    let path = args.features.clone().unwrap_or_else(|| feature_path(cfg, Split::Test, set));
    let segments = read_feature_file(&path)
        .with_context(|| format!("reading features {}", path.display()))
        .context("eval")?;
    if segments.is_empty() {
        bail!("eval: {} holds no segments", path.display());
    }
    let report = evaluate(&ckpt.model, &segments, args.threshold).context("eval")?;
    let text = format!("{} on {} segments\n{report}\n", set.tag(), segments.len());
    print!("{text}");
    let reports = cfg.dir("reports");
    write_file(&reports.join(format!("eval-{}.txt", set.tag())), text.as_bytes())?;
    write_file(&reports.join(format!("eval-{}.json", set.tag())), report.to_json().as_bytes())?;
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationReport {
    pub common_segments: usize,
    pub dropped_r: usize,
    pub dropped_rs: usize,
    pub table: AblationTable,
}

fn key(s: &FeatureSegment) -> (String, u32) {
    (s.record_id.clone(), s.minute_index)
}

/// Test segments both feature sets produced; a minute with too few S knots
/// exists only in the R-only file.
fn common_subset(a: Vec<FeatureSegment>, b: Vec<FeatureSegment>) -> (Vec<FeatureSegment>, Vec<FeatureSegment>, usize, usize) {
    let ka: BTreeSet<_> = a.iter().map(key).collect();
    let kb: BTreeSet<_> = b.iter().map(key).collect();
    let (na, nb) = (a.len(), b.len());
    let a: Vec<_> = a.into_iter().filter(|s| kb.contains(&key(s))).collect();
    let b: Vec<_> = b.into_iter().filter(|s| ka.contains(&key(s))).collect();
    let (da, db) = (na - a.len(), nb - b.len());
    (a, b, da, db)
}

pub fn cmd_ablate(cfg: &PipelineConfig, args: &AblateArgs) -> Result<Outcome> {
    let mut models = Vec::new();
    for set in [FeatureSet::ROnly, FeatureSet::RAndS] {
        let manifest = cmd_train(
            cfg,
            &TrainArgs {
                feature_set: set,
                features: None,
                overrides: TrainOverrides::default(),
            },
        )
        .with_context(|| format!("ablate: training {}", set.tag()))?;
        let ckpt = Checkpoint::load(&manifest.checkpoint)?;
        models.push(ckpt.model);
    }
    let test_r = load_segments(&feature_path(cfg, Split::Test, FeatureSet::ROnly), FeatureSet::ROnly).context("ablate")?;
    let test_rs = load_segments(&feature_path(cfg, Split::Test, FeatureSet::RAndS), FeatureSet::RAndS).context("ablate")?;
    let (test_r, test_rs, dropped_r, dropped_rs) = common_subset(test_r, test_rs);
    if test_r.is_empty() {
        bail!("ablate: the two feature sets share no test segments");
    }
    let report_r = evaluate(&models[0], &test_r, args.threshold).context("ablate: evaluating r")?;
    let report_rs = evaluate(&models[1], &test_rs, args.threshold).context("ablate: evaluating rs")?;
    let table = compare_feature_sets(&report_r, &report_rs).context("ablate")?;
    let mut text = format!("{} common test segments", test_r.len());
    if dropped_r + dropped_rs > 0 {
        text.push_str(&format!(" ({dropped_r} R-only and {dropped_rs} R+S segments had no counterpart)"));
    }
    text.push('\n');
    text.push_str(&table.render());
    print!("{text}");
    let reports = cfg.dir("reports");
    write_file(&reports.join("ablation.txt"), text.as_bytes())?;
    write_json(
        &reports.join("ablation.json"),
        &AblationReport {
            common_segments: test_r.len(),
            dropped_r,
            dropped_rs,
            table,
        },
    )?;
    Ok(Outcome::Success)
}
