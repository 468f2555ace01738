//! Training-set augmentation.
//!
//! Companding expansion keeps every original utterance and adds one
//! a-law and one mu-law copy of it, tripling the record count. Noise
//! augmentation mixes a noise clip in at a fixed SNR measured over the
//! whole utterance. Augmented copies always inherit the label of their
//! source.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::{mean_power, read_wav, write_wav, AudioClip, DEFAULT_SAMPLE_RATE};
use crate::companding::{companding_perturb, CompandingLaw, CompandingMode, LawKind};
use crate::error::{Error, Result};
use crate::exec;
use crate::protocol::{DatasetManifest, TrialRecord};

/// Fraction of clipped samples above which mixing logs a warning.
pub const CLIP_WARN_FRACTION: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSource {
    /// Synthesized Gaussian white noise.
    White,
    /// A user-supplied 16 kHz mono WAV (cafe, street, car, ...).
    File(PathBuf),
}

impl NoiseSource {
    fn label(&self) -> String {
        match self {
            NoiseSource::White => "white".into(),
            NoiseSource::File(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "noise".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentMethod {
    Identity,
    Compand(CompandingLaw),
    Noise { source: NoiseSource, snr_db: f64 },
}

impl AugmentMethod {
    /// Suffix for utterance ids produced by this method.
    pub fn suffix(&self) -> String {
        match self {
            AugmentMethod::Identity => String::new(),
            AugmentMethod::Compand(law) => law.kind.suffix().to_string(),
            AugmentMethod::Noise { source, snr_db } => {
                format!("_{}{}", source.label(), format_snr(*snr_db))
            }
        }
    }
}

fn format_snr(snr_db: f64) -> String {
    if snr_db.fract() == 0.0 {
        format!("{}", snr_db as i64)
    } else {
        format!("{snr_db}").replace('.', "p")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub methods: Vec<AugmentMethod>,
    pub output_root: PathBuf,
    pub seed: u64,
}

impl AugmentationPlan {
    /// Originals plus an a-law and a mu-law companded copy of each.
    pub fn dasc(output_root: impl Into<PathBuf>, seed: u64, mode: CompandingMode) -> Self {
        AugmentationPlan {
            methods: vec![
                AugmentMethod::Identity,
                AugmentMethod::Compand(CompandingLaw::a_law().with_mode(mode)),
                AugmentMethod::Compand(CompandingLaw::mu_law().with_mode(mode)),
            ],
            output_root: output_root.into(),
            seed,
        }
    }

    /// Originals plus one noisy copy of each at `snr_db`.
    pub fn noise(
        output_root: impl Into<PathBuf>,
        seed: u64,
        source: NoiseSource,
        snr_db: f64,
    ) -> Self {
        AugmentationPlan {
            methods: vec![
                AugmentMethod::Identity,
                AugmentMethod::Noise { source, snr_db },
            ],
            output_root: output_root.into(),
            seed,
        }
    }

    /// Originals only.
    pub fn identity(output_root: impl Into<PathBuf>, seed: u64) -> Self {
        AugmentationPlan {
            methods: vec![AugmentMethod::Identity],
            output_root: output_root.into(),
            seed,
        }
    }

    pub fn multiplier(&self) -> usize {
        self.methods.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.methods.contains(&AugmentMethod::Identity) {
            return Err(Error::InvalidParameter(
                "augmentation plan must retain the original data (identity)".into(),
            ));
        }
        let mut suffixes: Vec<String> = self.methods.iter().map(|m| m.suffix()).collect();
        suffixes.sort();
        if suffixes.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter(
                "two augmentation methods produce the same utterance suffix".into(),
            ));
        }
        for m in &self.methods {
            match m {
                AugmentMethod::Compand(law) => law.validate()?,
                AugmentMethod::Noise { snr_db, .. } if !snr_db.is_finite() => {
                    return Err(Error::InvalidParameter(format!(
                        "noise SNR must be finite, got {snr_db}"
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn is_dasc(&self) -> bool {
        let has = |kind: LawKind| {
            self.methods
                .iter()
                .any(|m| matches!(m, AugmentMethod::Compand(l) if l.kind == kind))
        };
        self.methods.contains(&AugmentMethod::Identity) && has(LawKind::ALaw) && has(LawKind::MuLaw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordFailure {
    pub utt_id: String,
    pub reason: String,
}

impl fmt::Display for RecordFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}", self.utt_id, self.reason)
    }
}

/// Writes one failed record per line (`UTT_ID<TAB>REASON`).
pub fn write_failure_report(failures: &[RecordFailure], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for fail in failures {
        writeln!(f, "{fail}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    pub manifest: DatasetManifest,
    pub failures: Vec<RecordFailure>,
    /// Measured SNR of every noisy copy, `(utt_id, dB)`.
    pub snr_log: Vec<(String, f64)>,
}

/// Companding expansion: requires identity plus a-law and mu-law
/// companding in the plan.
pub fn dasc_augment(manifest: &DatasetManifest, plan: &AugmentationPlan) -> Result<AugmentOutcome> {
    if !plan.is_dasc() {
        return Err(Error::InvalidParameter(
            "companding augmentation needs identity, a-law and mu-law methods".into(),
        ));
    }
    augment_manifest(manifest, plan)
}

/// Applies every method of `plan` to every record of `manifest`, writing
/// audio under `plan.output_root`. Records whose audio cannot be read are
/// reported and skipped; the rest of the run continues.
pub fn augment_manifest(
    manifest: &DatasetManifest,
    plan: &AugmentationPlan,
) -> Result<AugmentOutcome> {
    plan.validate()?;
    std::fs::create_dir_all(&plan.output_root).map_err(|e| Error::io(&plan.output_root, e))?;

    // File noise is loaded once and shared by all records.
    let mut noise_clips = Vec::with_capacity(plan.methods.len());
    for m in &plan.methods {
        noise_clips.push(match m {
            AugmentMethod::Noise {
                source: NoiseSource::File(p),
                ..
            } => Some(read_wav(p)?),
            _ => None,
        });
    }

    let per_record = exec::map_slice(&manifest.records, |record| {
        augment_record(manifest, record, plan, &noise_clips)
    });

    let mut out = DatasetManifest::new(manifest.subset, &plan.output_root);
    let mut failures = Vec::new();
    let mut snr_log = Vec::new();
    for (record, result) in manifest.records.iter().zip(per_record) {
        match result {
            Ok((records, snrs)) => {
                out.records.extend(records);
                snr_log.extend(snrs);
            }
            Err(e) => failures.push(RecordFailure {
                utt_id: record.utt_id.clone(),
                reason: e.to_string(),
            }),
        }
    }
    Ok(AugmentOutcome {
        manifest: out,
        failures,
        snr_log,
    })
}

type RecordOutput = (Vec<TrialRecord>, Vec<(String, f64)>);

fn augment_record(
    manifest: &DatasetManifest,
    record: &TrialRecord,
    plan: &AugmentationPlan,
    noise_clips: &[Option<AudioClip>],
) -> Result<RecordOutput> {
    let clip = read_wav(manifest.audio_path(record))?;
    let seed = record_seed(plan.seed, &record.utt_id);
    let mut records = Vec::with_capacity(plan.methods.len());
    let mut snrs = Vec::new();
    for (i, (method, file_noise)) in plan.methods.iter().zip(noise_clips).enumerate() {
        let derived = record.derived(&method.suffix());
        let out = match method {
            AugmentMethod::Identity => clip.clone(),
            AugmentMethod::Compand(law) => companding_perturb(&clip, law)?,
            AugmentMethod::Noise { snr_db, .. } => {
                let method_seed = seed.wrapping_add(i as u64);
                let mixed = match file_noise {
                    Some(noise) => mix_noise_at_snr(&clip, noise, *snr_db, method_seed)?,
                    None => {
                        let noise = gen_white_noise(clip.len(), method_seed ^ 0x5eed)?;
                        mix_noise_at_snr(&clip, &noise, *snr_db, method_seed)?
                    }
                };
                snrs.push((derived.utt_id.clone(), measured_snr_db(&clip, &mixed)));
                mixed
            }
        };
        write_wav(&out, plan.output_root.join(format!("{}.wav", derived.utt_id)))?;
        records.push(derived);
    }
    Ok((records, snrs))
}

/// Per-record seed from the global seed and a stable hash of the utterance
/// id, so results do not depend on processing order.
pub fn record_seed(global: u64, utt_id: &str) -> u64 {
    // FNV-1a, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in utt_id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = h ^ global.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Adds `noise` to `clip` scaled so that the clean-to-added power ratio is
/// `snr_db`. A seeded random offset selects the noise segment; noise shorter
/// than the clip is tiled. `snr_db = +inf` returns the clip unchanged.
pub fn mix_noise_at_snr(
    clip: &AudioClip,
    noise: &AudioClip,
    snr_db: f64,
    seed: u64,
) -> Result<AudioClip> {
    if snr_db == f64::INFINITY {
        return Ok(clip.clone());
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidParameter(format!("SNR {snr_db} dB")));
    }
    if clip.sample_rate() != noise.sample_rate() {
        return Err(Error::InvalidParameter(format!(
            "clip at {} Hz, noise at {} Hz",
            clip.sample_rate(),
            noise.sample_rate()
        )));
    }
    let signal_power = clip.power();
    if signal_power == 0.0 {
        return Err(Error::UndefinedSnr("clip has zero power"));
    }
    if noise.is_empty() || noise.power() == 0.0 {
        return Err(Error::UndefinedSnr("noise has zero power"));
    }

    let n = clip.len();
    let nl = noise.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segment: Vec<f64> = if nl >= n {
        let offset = rng.random_range(0..=nl - n);
        noise.samples()[offset..offset + n].to_vec()
    } else {
        let offset = rng.random_range(0..nl);
        (0..n).map(|i| noise.samples()[(offset + i) % nl]).collect()
    };
    let noise_power = mean_power(&segment);
    if noise_power == 0.0 {
        return Err(Error::UndefinedSnr("selected noise segment is silent"));
    }

    let gain = (signal_power / (noise_power * 10f64.powf(snr_db / 10.0))).sqrt();
    let mixed: Vec<f64> = clip
        .samples()
        .iter()
        .zip(&segment)
        .map(|(s, v)| s + gain * v)
        .collect();
    let (out, n_clipped) = AudioClip::clipped(mixed, clip.sample_rate())?;
    let frac = n_clipped as f64 / n as f64;
    if frac > CLIP_WARN_FRACTION {
        log::warn!(
            "noise mixing at {snr_db} dB clipped {:.2}% of samples",
            100.0 * frac
        );
    }
    Ok(out)
}

/// `10 log10(P(clean) / P(mixed - clean))`.
pub fn measured_snr_db(clean: &AudioClip, mixed: &AudioClip) -> f64 {
    let added: Vec<f64> = mixed
        .samples()
        .iter()
        .zip(clean.samples())
        .map(|(m, c)| m - c)
        .collect();
    10.0 * (clean.power() / mean_power(&added)).log10()
}

/// Zero-mean Gaussian noise normalized to unit peak, at 16 kHz.
pub fn gen_white_noise(length: usize, seed: u64) -> Result<AudioClip> {
    if length == 0 {
        return Err(Error::InvalidParameter("white noise length must be > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..length).map(|_| rng.sample(StandardNormal)).collect();
    let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak > 0.0 {
        v.iter_mut().for_each(|x| *x /= peak);
    }
    AudioClip::new(v, DEFAULT_SAMPLE_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Subset;
    use proptest::prelude::*;

    fn tone(len: usize, amp: f64, freq: f64) -> AudioClip {
        let s = (0..len)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16_000.0).sin())
            .collect();
        AudioClip::new(s, 16_000).unwrap()
    }

    #[test]
    fn infinite_snr_is_identity() {
        let c = tone(1000, 0.3, 440.0);
        let n = gen_white_noise(1000, 1).unwrap();
        assert_eq!(mix_noise_at_snr(&c, &n, f64::INFINITY, 3).unwrap(), c);
    }

    #[test]
    fn unit_powers_at_zero_db_give_unit_gain() {
        // +/- 0.5 square waves: both have power 0.25.
        let s: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
        let v: Vec<f64> = (0..64).map(|i| if i % 4 < 2 { 0.5 } else { -0.5 }).collect();
        let clip = AudioClip::new(s.clone(), 16_000).unwrap();
        let noise = AudioClip::new(v.clone(), 16_000).unwrap();
        let out = mix_noise_at_snr(&clip, &noise, 0.0, 9).unwrap();
        for (o, c) in out.samples().iter().zip(&s) {
            let added = o - c;
            assert!((added.abs() - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn silent_inputs_are_errors() {
        let silent = AudioClip::silence(100, 16_000);
        let n = gen_white_noise(100, 1).unwrap();
        assert!(matches!(
            mix_noise_at_snr(&silent, &n, 20.0, 0),
            Err(Error::UndefinedSnr(_))
        ));
        assert!(matches!(
            mix_noise_at_snr(&tone(100, 0.5, 300.0), &silent, 20.0, 0),
            Err(Error::UndefinedSnr(_))
        ));
        assert!(mix_noise_at_snr(&tone(100, 0.5, 300.0), &n, f64::NAN, 0).is_err());
    }

    #[test]
    fn short_noise_is_tiled() {
        let clip = tone(5000, 0.3, 200.0);
        let noise = gen_white_noise(300, 4).unwrap();
        let out = mix_noise_at_snr(&clip, &noise, 20.0, 5).unwrap();
        assert!((measured_snr_db(&clip, &out) - 20.0).abs() < 0.1);
        // The added signal repeats with the noise period.
        let added: Vec<f64> = out.samples().iter().zip(clip.samples()).map(|(a, b)| a - b).collect();
        for i in 0..1000 {
            assert!((added[i] - added[i + 300]).abs() < 1e-9);
        }
    }

    #[test]
    fn white_noise_is_deterministic_and_zero_mean() {
        assert!(gen_white_noise(0, 1).is_err());
        let a = gen_white_noise(1_000_000, 42).unwrap();
        let b = gen_white_noise(1_000_000, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, gen_white_noise(1_000_000, 43).unwrap());
        let peak = a.samples().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        assert!(peak <= 1.0);
        let mean = a.samples().iter().sum::<f64>() / a.len() as f64;
        assert!(mean.abs() < 0.01, "{mean}");
    }

    #[test]
    fn record_seed_is_stable() {
        assert_eq!(record_seed(7, "LA_T_1"), record_seed(7, "LA_T_1"));
        assert_ne!(record_seed(7, "LA_T_1"), record_seed(7, "LA_T_2"));
        assert_ne!(record_seed(7, "LA_T_1"), record_seed(8, "LA_T_1"));
    }

    #[test]
    fn plan_validation() {
        let mut p = AugmentationPlan::dasc("/tmp/x", 0, CompandingMode::Quantized8);
        assert!(p.validate().is_ok());
        assert_eq!(p.multiplier(), 3);
        p.methods.remove(0);
        assert!(p.validate().is_err());
        let p = AugmentationPlan::noise("/tmp/x", 0, NoiseSource::White, f64::INFINITY);
        assert!(p.validate().is_err());
        let p = AugmentationPlan::noise("/tmp/x", 0, NoiseSource::White, 20.0);
        assert_eq!(p.methods[1].suffix(), "_white20");
        assert!(dasc_augment(&DatasetManifest::new(Subset::Train, "/tmp"), &p).is_err());
    }

    #[test]
    fn empty_manifest_stays_empty() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest::new(Subset::Train, dir.path());
        let plan = AugmentationPlan::dasc(dir.path().join("out"), 1, CompandingMode::Quantized8);
        let out = dasc_augment(&m, &plan).unwrap();
        assert!(out.manifest.is_empty());
        assert!(out.failures.is_empty());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn mixing_hits_target_snr(
            amp in 0.05f64..0.5,
            freq in 50.0f64..4000.0,
            len in 200usize..4000,
            snr in -5.0f64..40.0,
            seed in any::<u64>(),
        ) {
            let clip = tone(len, amp, freq);
            prop_assume!(clip.power() > 0.0);
            let noise = gen_white_noise(len + 777, seed).unwrap();
            // Keep the mix inside [-1, 1] so clipping does not bias the measurement.
            prop_assume!(amp * (1.0 + 10f64.powf(-snr / 20.0) * 12.0) < 1.0);
            let out = mix_noise_at_snr(&clip, &noise, snr, seed).unwrap();
            prop_assert!((measured_snr_db(&clip, &out) - snr).abs() < 0.1);
        }
    }
}
