use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dasc_core::cqt::CqtConfig;
use dasc_core::lcnn::{LayerSpec, LcnnSpec, TrainConfig};
use dasc_core::metrics::TdcfCostModel;
use dasc_core::CompandingMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    /// Originals plus a-law and mu-law copies.
    Dasc,
    /// Originals plus one noisy copy at `snr_db`.
    Noise,
    /// Originals only.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub plan: PlanKind,
    pub mode: CompandingMode,
    pub snr_db: f64,
    /// `"white"` or a path to a 16 kHz mono noise WAV.
    pub noise: String,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            plan: PlanKind::Dasc,
            mode: CompandingMode::Quantized8,
            snr_db: 20.0,
            noise: "white".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub train_protocol: PathBuf,
    pub dev_protocol: Option<PathBuf>,
    pub eval_protocol: PathBuf,
    /// Key-value file with `p_miss_asv`, `p_fa_asv`, `p_miss_spoof_asv`.
    pub asv_operating_point: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Standard,
    Compact,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub architecture: Architecture,
    /// Only read for `architecture = "custom"`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<LayerSpec>,
    pub score_batch_size: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { architecture: Architecture::Standard, layers: Vec::new(), score_batch_size: 32 }
    }
}

impl ModelSection {
    pub fn spec(&self, cqt: &CqtConfig) -> LcnnSpec {
        let mut spec = match self.architecture {
            Architecture::Standard => LcnnSpec::standard(),
            Architecture::Compact => LcnnSpec::compact(),
            Architecture::Custom => LcnnSpec { input_shape: (0, 0), layers: self.layers.clone() },
        };
        spec.input_shape = (cqt.n_bins(), cqt.n_frames);
        spec
    }
}

/// Everything one pipeline run needs. Relative paths are resolved against
/// the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataSection,
    pub augment: AugmentSection,
    pub cqt: CqtConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub tdcf: TdcfCostModel,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            output_dir: PathBuf::from("output"),
            data: DataSection::default(),
            augment: AugmentSection::default(),
            cqt: CqtConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            tdcf: TdcfCostModel::default(),
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if !p.as_os_str().is_empty() && p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        resolve(base, &mut cfg.output_dir);
        resolve(base, &mut cfg.data.train_protocol);
        resolve(base, &mut cfg.data.eval_protocol);
        for p in [&mut cfg.data.dev_protocol, &mut cfg.data.asv_operating_point].into_iter().flatten() {
            resolve(base, p);
        }
        if cfg.augment.noise != "white" {
            let mut p = PathBuf::from(&cfg.augment.noise);
            resolve(base, &mut p);
            cfg.augment.noise = p.to_string_lossy().into_owned();
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Checks values that do not depend on files existing.
    pub fn validate(&self) -> Result<()> {
        self.cqt.validate()?;
        self.train.validate()?;
        self.tdcf.validate()?;
        self.model.spec(&self.cqt).validate()?;
        if self.model.score_batch_size == 0 {
            bail!("model.score_batch_size must be positive");
        }
        if self.augment.plan == PlanKind::Noise && !self.augment.snr_db.is_finite() {
            bail!("augment.snr_db must be finite");
        }
        Ok(())
    }

    /// The t-DCF cost model with the ASV operating point applied, if any.
    pub fn cost_model(&self) -> Result<TdcfCostModel> {
        match &self.data.asv_operating_point {
            Some(p) => Ok(self.tdcf.with_asv_file(p)?),
            None => Ok(self.tdcf),
        }
    }
}
