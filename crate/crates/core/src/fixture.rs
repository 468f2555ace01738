//! Synthetic toy corpus for smoke tests and the robustness experiment.
//!
//! Every clip is a voiced harmonic signal with syllable-like bursts.
//! Bona fide clips carry aspiration noise that follows the voicing
//! envelope and keep their full harmonic spectrum. Spoof clips have no
//! aspiration noise and an attenuated band of harmonics. An 8-bit
//! companding codec adds signal-following quantisation noise of about the
//! same level as the aspiration noise, so a classifier that only learned
//! the noise cue is fooled by telephone-like channels.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::audio::{write_wav, AudioClip, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::protocol::{DatasetManifest, Subset, TrialRecord};

/// Attack ids and the harmonic band each one attenuates, in Hz.
pub const ATTACKS: [(&str, f64, f64); 2] = [("A01", 1500.0, 2500.0), ("A02", 2000.0, 3200.0)];

/// Harmonics stop here, leaving the top octave to noise.
pub const VOICE_BAND_HZ: f64 = 3800.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureConfig {
    pub clip_secs: f64,
    /// Aspiration noise level relative to the voiced signal, in dB.
    pub aspiration_db: f64,
    /// Attenuation applied to the spoof band, in dB.
    pub band_cut_db: f64,
    /// Background noise RMS shared by both classes.
    pub background_rms: f64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            clip_secs: 0.5,
            aspiration_db: -36.0,
            band_cut_db: -8.0,
            background_rms: 3e-4,
        }
    }
}

/// One synthetic clip; deterministic in `seed`. `attack` selects the spoof
/// band and must be `None` exactly for bona fide clips.
pub fn synth_clip(attack: Option<usize>, seed: u64, cfg: &FixtureConfig) -> AudioClip {
    let sr = DEFAULT_SAMPLE_RATE as f64;
    let n = (cfg.clip_secs * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let f0 = rng.random_range(95.0..230.0);
    let vibrato_hz = rng.random_range(3.0..6.0);
    let vibrato_depth = rng.random_range(0.005..0.03);
    let peak = rng.random_range(0.25..0.7);
    let tilt = rng.random_range(0.7..1.2);

    // two or three syllables separated by short pauses
    let n_syl = rng.random_range(2..=3);
    let mut bursts = Vec::new();
    let slot = n as f64 / n_syl as f64;
    for s in 0..n_syl {
        let start = s as f64 * slot + rng.random_range(0.05..0.2) * slot;
        let len = rng.random_range(0.5..0.75) * slot;
        bursts.push((start, len));
    }
    let envelope = |i: usize| -> f64 {
        let t = i as f64;
        bursts
            .iter()
            .map(|&(s, l)| {
                if t < s || t > s + l {
                    0.0
                } else {
                    (PI * (t - s) / l).sin().powf(0.6)
                }
            })
            .sum()
    };

    let band = attack.map(|a| (ATTACKS[a].1, ATTACKS[a].2));
    let cut = 10f64.powf(cfg.band_cut_db / 20.0);
    let n_harm = ((VOICE_BAND_HZ / f0) as usize).max(1);
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let gains: Vec<f64> = (1..=n_harm)
        .map(|k| {
            let f = k as f64 * f0;
            let mut g = 1.0 / (k as f64).powf(tilt);
            if let Some((lo, hi)) = band {
                if f >= lo && f <= hi {
                    g *= cut;
                }
            }
            g
        })
        .collect();

    let mut voiced = vec![0.0; n];
    let mut phase = 0.0;
    for (i, v) in voiced.iter_mut().enumerate() {
        let t = i as f64 / sr;
        let f = f0 * (1.0 + vibrato_depth * (2.0 * PI * vibrato_hz * t).sin());
        phase += 2.0 * PI * f / sr;
        let mut s = 0.0;
        for (k, (&g, &p)) in gains.iter().zip(&phases).enumerate() {
            s += g * ((k + 1) as f64 * phase + p).sin();
        }
        *v = s * envelope(i);
    }
    let vmax = voiced.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    voiced.iter_mut().for_each(|v| *v *= peak / vmax);
    let voiced_rms = (voiced.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();

    let asp = voiced_rms * 10f64.powf(cfg.aspiration_db / 20.0);
    let samples: Vec<f64> = voiced
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let bg = cfg.background_rms * rng.sample::<f64, _>(StandardNormal);
            let breath: f64 = if attack.is_none() {
                asp * envelope(i) * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            v + bg + breath
        })
        .collect();
    AudioClip::clipped(samples, DEFAULT_SAMPLE_RATE).expect("finite samples").0
}

/// A telephone-like channel none of the augmentations model: mu-law with
/// mu = 100 quantised to 7 bits in the companded domain.
pub fn unseen_channel(clip: &AudioClip) -> AudioClip {
    const MU: f64 = 100.0;
    const LEVELS: f64 = 64.0;
    let ln1p = MU.ln_1p();
    let samples = clip
        .samples()
        .iter()
        .map(|&x| {
            let y = (MU * x.abs()).ln_1p() / ln1p;
            let q = (y * LEVELS).round().min(LEVELS) / LEVELS;
            (((q * ln1p).exp() - 1.0) / MU).min(1.0).copysign(x)
        })
        .collect();
    AudioClip::clipped(samples, clip.sample_rate()).expect("finite samples").0
}

/// Sizes of one generated subset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetSize {
    pub bonafide: usize,
    pub spoof: usize,
}

#[derive(Debug, Clone)]
pub struct FixtureLayout {
    pub train: SubsetSize,
    pub dev: SubsetSize,
    pub eval: SubsetSize,
    /// Pass evaluation clips through [`unseen_channel`].
    pub eval_channel: bool,
    pub seed: u64,
    pub clip: FixtureConfig,
}

impl Default for FixtureLayout {
    fn default() -> Self {
        let five = SubsetSize { bonafide: 5, spoof: 5 };
        FixtureLayout {
            train: five,
            dev: five,
            eval: five,
            eval_channel: true,
            seed: 0,
            clip: FixtureConfig::default(),
        }
    }
}

/// Generated labelled clips of one subset, in protocol order.
pub fn synth_subset(subset: Subset, size: SubsetSize, layout: &FixtureLayout) -> Vec<(TrialRecord, AudioClip)> {
    let tag = match subset {
        Subset::Train => 'T',
        Subset::Development => 'D',
        Subset::Evaluation => 'E',
    };
    let base = layout.seed.wrapping_mul(1_000_003).wrapping_add(tag as u64 * 100_000);
    (0..size.bonafide + size.spoof)
        .map(|i| {
            let utt = format!("FX_{tag}_{:04}", i + 1);
            let speaker = format!("FX{:02}", i % 4 + 1);
            let (record, attack) = if i < size.bonafide {
                (TrialRecord::bonafide(&speaker, &utt), None)
            } else {
                let a = (i - size.bonafide) % ATTACKS.len();
                (TrialRecord::spoof(&speaker, &utt, ATTACKS[a].0), Some(a))
            };
            let mut clip = synth_clip(attack, base.wrapping_add(i as u64), &layout.clip);
            if subset == Subset::Evaluation && layout.eval_channel {
                clip = unseen_channel(&clip);
            }
            (record, clip)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct FixtureCorpus {
    pub root: PathBuf,
    pub train: DatasetManifest,
    pub dev: DatasetManifest,
    pub eval: DatasetManifest,
}

impl FixtureCorpus {
    pub fn protocol_path(root: &Path, subset: Subset) -> PathBuf {
        root.join(subset.to_string()).join("protocol.txt")
    }
}

/// Writes `<root>/<subset>/protocol.txt` plus one WAV per record for the
/// train, development and evaluation subsets.
pub fn write_fixture(root: impl AsRef<Path>, layout: &FixtureLayout) -> Result<FixtureCorpus> {
    let root = root.as_ref();
    let mut manifests = Vec::new();
    for (subset, size) in [
        (Subset::Train, layout.train),
        (Subset::Development, layout.dev),
        (Subset::Evaluation, layout.eval),
    ] {
        if size.bonafide == 0 || size.spoof == 0 {
            return Err(Error::InvalidParameter(format!("{subset} subset needs both classes")));
        }
        let dir = root.join(subset.to_string());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut manifest = DatasetManifest::new(subset, &dir);
        for (record, clip) in synth_subset(subset, size, layout) {
            write_wav(&clip, manifest.audio_root.join(format!("{}.wav", record.utt_id)))?;
            manifest.records.push(record);
        }
        manifest.write_protocol(FixtureCorpus::protocol_path(root, subset))?;
        manifests.push(manifest);
    }
    let eval = manifests.pop().unwrap();
    let dev = manifests.pop().unwrap();
    let train = manifests.pop().unwrap();
    Ok(FixtureCorpus { root: root.to_path_buf(), train, dev, eval })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::parse_protocol;

    #[test]
    fn clips_are_deterministic_and_valid() {
        let cfg = FixtureConfig::default();
        let a = synth_clip(None, 3, &cfg);
        assert_eq!(a, synth_clip(None, 3, &cfg));
        assert_ne!(a, synth_clip(None, 4, &cfg));
        assert_eq!(a.len(), 8000);
        assert!(a.samples().iter().all(|v| v.abs() <= 1.0));
        assert!(synth_clip(Some(1), 3, &cfg).power() > 0.0);
    }

    #[test]
    fn channel_is_lossy_but_close() {
        let clip = synth_clip(Some(0), 1, &FixtureConfig::default());
        let out = unseen_channel(&clip);
        assert_ne!(out, clip);
        let snr = crate::augment::measured_snr_db(&clip, &out);
        assert!(snr > 15.0 && snr < 45.0, "channel SNR {snr}");
    }

    #[test]
    fn written_fixture_parses_back() {
        let dir = tempfile::tempdir().unwrap();
        let layout = FixtureLayout { eval: SubsetSize { bonafide: 2, spoof: 3 }, ..Default::default() };
        let corpus = write_fixture(dir.path(), &layout).unwrap();
        let eval = parse_protocol(FixtureCorpus::protocol_path(dir.path(), Subset::Evaluation), Subset::Evaluation).unwrap();
        assert_eq!(eval.records, corpus.eval.records);
        assert_eq!(eval.counts(), (2, 3));
        for rec in &eval.records {
            assert!(eval.audio_path(rec).exists());
        }
        assert!(crate::protocol::find_overlap(&[&corpus.train, &corpus.dev, &corpus.eval]).is_none());
    }
}
