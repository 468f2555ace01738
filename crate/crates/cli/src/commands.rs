use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dasc_core::audio::read_wav;
use dasc_core::augment::{augment_manifest, write_failure_report, AugmentationPlan, NoiseSource, RecordFailure};
use dasc_core::cqt::{read_feature_file, write_feature_file, CqtExtractor};
use dasc_core::exec;
use dasc_core::fixture::{write_fixture, FixtureCorpus, FixtureLayout};
use dasc_core::lcnn::{
    load_checkpoint, read_scores, save_checkpoint, score_set, train, DirFeatureStore, FeatureStore, LabeledSet,
    Optimizer, TrainConfig, TrainOutcome,
};
use dasc_core::metrics::{evaluate as eval_scores, join_scores, write_det_csv, write_eval_result, EvalResult};
use dasc_core::protocol::parse_protocol;
use dasc_core::{DatasetManifest, Subset};

use crate::config::{Architecture, AugmentSection, DataSection, ModelSection, PipelineConfig, PlanKind};

/// File names under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Layout { root: cfg.output_dir.clone() }
    }
    pub fn augmented_dir(&self) -> PathBuf {
        self.root.join("augmented")
    }
    pub fn augmented_protocol(&self) -> PathBuf {
        self.augmented_dir().join("train_protocol.txt")
    }
    pub fn snr_log(&self) -> PathBuf {
        self.augmented_dir().join("snr_log.tsv")
    }
    pub fn features_dir(&self) -> PathBuf {
        self.root.join("features")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.ckpt")
    }
    pub fn train_log(&self) -> PathBuf {
        self.root.join("train_log.tsv")
    }
    pub fn scores(&self, subset: Subset) -> PathBuf {
        self.root.join(format!("scores_{subset}.txt"))
    }
    pub fn eval_result(&self, subset: Subset) -> PathBuf {
        self.root.join(format!("eval_result_{subset}.txt"))
    }
    pub fn det(&self, subset: Subset) -> PathBuf {
        self.root.join(format!("det_{subset}.csv"))
    }
    pub fn failures(&self, stage: &str) -> PathBuf {
        self.root.join(format!("failures_{stage}.tsv"))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_protocol(path: &Path, subset: Subset, what: &str) -> Result<DatasetManifest> {
    if !path.exists() {
        bail!("{what} protocol {} does not exist", path.display());
    }
    Ok(parse_protocol(path, subset)?)
}

/// Writes the failure report and turns a non-empty list into an error.
fn report_failures(layout: &Layout, stage: &str, failures: &[RecordFailure]) -> Result<()> {
    if failures.is_empty() {
        return Ok(());
    }
    let path = layout.failures(stage);
    write_failure_report(failures, &path)?;
    for f in failures.iter().take(5) {
        log::error!("{stage}: {}: {}", f.utt_id, f.reason);
    }
    bail!("{} record(s) failed in {stage}, listed in {}", failures.len(), path.display())
}

pub fn augment(cfg: &PipelineConfig) -> Result<DatasetManifest> {
    let layout = Layout::new(cfg);
    let manifest = load_protocol(&cfg.data.train_protocol, Subset::Train, "training")?;
    let root = layout.augmented_dir();
    let a = &cfg.augment;
    let plan = match a.plan {
        PlanKind::Dasc => AugmentationPlan::dasc(&root, cfg.seed, a.mode),
        PlanKind::Noise => {
            let source = if a.noise == "white" {
                NoiseSource::White
            } else {
                NoiseSource::File(PathBuf::from(&a.noise))
            };
            AugmentationPlan::noise(&root, cfg.seed, source, a.snr_db)
        }
        PlanKind::None => AugmentationPlan::identity(&root, cfg.seed),
    };
    let out = augment_manifest(&manifest, &plan)?;
    out.manifest.write_protocol(layout.augmented_protocol())?;
    if !out.snr_log.is_empty() {
        let mut text = String::from("utt_id\tsnr_db\n");
        for (utt, snr) in &out.snr_log {
            log::info!("{utt}: measured SNR {snr:.3} dB");
            writeln!(text, "{utt}\t{snr}").unwrap();
        }
        std::fs::write(layout.snr_log(), text).with_context(|| format!("writing {}", layout.snr_log().display()))?;
    }
    log::info!(
        "augment: {} records in, {} out ({} per record)",
        manifest.len(),
        out.manifest.len(),
        plan.multiplier()
    );
    report_failures(&layout, "augment", &out.failures)?;
    Ok(out.manifest)
}

/// The training list produced by `augment`.
fn augmented_train(layout: &Layout) -> Result<DatasetManifest> {
    let path = layout.augmented_protocol();
    if !path.exists() {
        bail!("augmented training list {} not found; run `dasc augment` first", path.display());
    }
    Ok(parse_protocol(&path, Subset::Train)?)
}

fn eval_like(cfg: &PipelineConfig, subset: Subset) -> Result<DatasetManifest> {
    match subset {
        Subset::Evaluation => load_protocol(&cfg.data.eval_protocol, subset, "evaluation"),
        Subset::Development => match &cfg.data.dev_protocol {
            Some(p) => load_protocol(p, subset, "development"),
            None => bail!("no development protocol configured (data.dev_protocol)"),
        },
        Subset::Train => bail!("training data is scored through the augmented list"),
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct FeaturizeCounts {
    pub written: usize,
    pub skipped: usize,
}

enum Outcome {
    Written,
    Skipped,
}

fn featurize_manifest(
    ex: &CqtExtractor,
    manifest: &DatasetManifest,
    dir: &Path,
    skip_existing: bool,
    failures: &mut Vec<RecordFailure>,
) -> FeaturizeCounts {
    let expected = (ex.config().n_bins(), ex.config().n_frames);
    let results = exec::map_slice(&manifest.records, |rec| -> dasc_core::Result<Outcome> {
        let path = dir.join(format!("{}.lps", rec.utt_id));
        if skip_existing && read_feature_file(&path).is_ok_and(|f| f.shape() == expected) {
            return Ok(Outcome::Skipped);
        }
        let clip = read_wav(manifest.audio_path(rec))?;
        let feat = ex.features(&clip, &rec.utt_id)?;
        write_feature_file(&feat, &path)?;
        Ok(Outcome::Written)
    });
    let mut counts = FeaturizeCounts::default();
    for (rec, r) in manifest.records.iter().zip(results) {
        match r {
            Ok(Outcome::Written) => counts.written += 1,
            Ok(Outcome::Skipped) => counts.skipped += 1,
            Err(e) => failures.push(RecordFailure { utt_id: rec.utt_id.clone(), reason: e.to_string() }),
        }
    }
    counts
}

pub fn featurize(cfg: &PipelineConfig, skip_existing: bool) -> Result<FeaturizeCounts> {
    let layout = Layout::new(cfg);
    let mut manifests = vec![augmented_train(&layout)?];
    if cfg.data.dev_protocol.is_some() {
        manifests.push(eval_like(cfg, Subset::Development)?);
    }
    manifests.push(eval_like(cfg, Subset::Evaluation)?);
    let dir = layout.features_dir();
    create_dir(&dir)?;
    let ex = CqtExtractor::new(cfg.cqt.clone())?;
    let mut failures = Vec::new();
    let mut total = FeaturizeCounts::default();
    for m in &manifests {
        let c = featurize_manifest(&ex, m, &dir, skip_existing, &mut failures);
        log::info!("featurize {}: {} written, {} skipped", m.subset, c.written, c.skipped);
        total.written += c.written;
        total.skipped += c.skipped;
    }
    report_failures(&layout, "featurize", &failures)?;
    Ok(total)
}

fn load_set(store: &DirFeatureStore, manifest: &DatasetManifest) -> Result<LabeledSet> {
    let mut set = LabeledSet::default();
    for rec in &manifest.records {
        let feat = store.load(&rec.utt_id).map_err(|e| {
            anyhow!(
                "features for {} ({}) unavailable: {e}; run `dasc featurize` first",
                rec.utt_id,
                store.path_for(&rec.utt_id).display()
            )
        })?;
        set.push(feat, rec.key);
    }
    Ok(set)
}

pub fn train_cmd(cfg: &PipelineConfig) -> Result<TrainOutcome> {
    let layout = Layout::new(cfg);
    let store = DirFeatureStore::new(layout.features_dir());
    let train_set = load_set(&store, &augmented_train(&layout)?)?;
    let dev_set = match cfg.data.dev_protocol {
        Some(_) => Some(load_set(&store, &eval_like(cfg, Subset::Development)?)?),
        None => None,
    };
    let tc = TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
    let spec = cfg.model.spec(&cfg.cqt);
    log::info!("training on {} examples for up to {} epochs", train_set.len(), tc.epochs);
    let out = train(spec, &train_set, dev_set.as_ref(), &tc)?;
    save_checkpoint(&out.model, layout.model())?;

    let mut text = String::from("epoch\ttrain_loss\tdev_loss\tdev_eer\n");
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| v.to_string());
    for e in &out.log {
        writeln!(text, "{}\t{}\t{}\t{}", e.epoch, e.train_loss, opt(e.dev_loss), opt(e.dev_eer)).unwrap();
    }
    writeln!(text, "# best_epoch {}", out.best_epoch).unwrap();
    std::fs::write(layout.train_log(), text).with_context(|| format!("writing {}", layout.train_log().display()))?;
    log::info!("saved {} (best epoch {})", layout.model().display(), out.best_epoch);
    Ok(out)
}

pub fn score(cfg: &PipelineConfig, subset: Subset) -> Result<PathBuf> {
    let layout = Layout::new(cfg);
    let ckpt = layout.model();
    if !ckpt.exists() {
        bail!("model checkpoint {} not found; run `dasc train` first", ckpt.display());
    }
    let model = load_checkpoint(&ckpt)?;
    let expected = (cfg.cqt.n_bins(), cfg.cqt.n_frames);
    if model.spec().input_shape != expected {
        bail!(
            "checkpoint expects {:?} features but the config produces {:?}",
            model.spec().input_shape,
            expected
        );
    }
    let manifest = eval_like(cfg, subset)?;
    let store = DirFeatureStore::new(layout.features_dir());
    let out = score_set(&model, &manifest, &store, cfg.model.score_batch_size)?;
    if out.scores.is_empty() {
        bail!("no {subset} record could be scored; run `dasc featurize` first");
    }
    let path = layout.scores(subset);
    dasc_core::lcnn::write_scores(&out.scores, &path)?;
    log::info!("wrote {} scores to {}", out.scores.len(), path.display());
    report_failures(&layout, "score", &out.failures)?;
    Ok(path)
}

pub fn evaluate(cfg: &PipelineConfig, subset: Subset) -> Result<EvalResult> {
    let layout = Layout::new(cfg);
    let path = layout.scores(subset);
    if !path.exists() {
        bail!("score file {} not found; run `dasc score` first", path.display());
    }
    let scores = read_scores(&path)?;
    let manifest = eval_like(cfg, subset)?;
    let joined = join_scores(&scores, &manifest)?;
    if !joined.missing.is_empty() {
        log::warn!("{} {subset} records have no score and are left out", joined.missing.len());
    }
    let cost = cfg.cost_model()?;
    let result = eval_scores(&joined.bonafide, &joined.spoof, &cost)?;
    write_eval_result(&result, &cost, layout.eval_result(subset))?;
    write_det_csv(&result.det_points, layout.det(subset))?;
    Ok(result)
}

/// Every stage in order.
pub fn run_all(cfg: &PipelineConfig, skip_existing: bool) -> Result<EvalResult> {
    augment(cfg)?;
    featurize(cfg, skip_existing)?;
    train_cmd(cfg)?;
    score(cfg, Subset::Evaluation)?;
    evaluate(cfg, Subset::Evaluation)
}

/// Pipeline settings for the synthetic corpus written by [`write_fixture_corpus`].
pub fn fixture_config() -> PipelineConfig {
    PipelineConfig {
        seed: 0,
        output_dir: PathBuf::from("run"),
        data: DataSection {
            train_protocol: PathBuf::from("train/protocol.txt"),
            dev_protocol: Some(PathBuf::from("development/protocol.txt")),
            eval_protocol: PathBuf::from("evaluation/protocol.txt"),
            asv_operating_point: None,
        },
        augment: AugmentSection::default(),
        model: ModelSection { architecture: Architecture::Compact, ..Default::default() },
        train: TrainConfig {
            batch_size: 16,
            epochs: 20,
            learning_rate: 3e-3,
            optimizer: Optimizer::default(),
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Writes the toy corpus (5 bona fide + 5 spoof clips per subset, evaluation
/// clips passed through an unseen codec) and `pipeline.toml` next to it.
pub fn write_fixture_corpus(dir: &Path, seed: u64) -> Result<FixtureCorpus> {
    let layout = FixtureLayout { seed, ..Default::default() };
    let corpus = write_fixture(dir, &layout)?;
    let cfg = PipelineConfig { seed, ..fixture_config() };
    std::fs::write(dir.join("pipeline.toml"), cfg.to_toml()?)
        .with_context(|| format!("writing {}", dir.join("pipeline.toml").display()))?;
    Ok(corpus)
}
