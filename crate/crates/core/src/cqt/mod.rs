//! Constant-Q log power spectrogram.
//!
//! Bin `k` is centred at `f_min * 2^(k / bins_per_octave)` and analysed with
//! a Hann-windowed complex exponential of length `ceil(Q * sr / f_k)`, where
//! `Q = 1 / (2^(1/bins_per_octave) - 1)`. Frame `m` is centred on sample
//! `m * hop`; the signal is zero outside the clip. Each entry is
//! `log10(|X|^2 + 1e-10)`.
//!
//! Two backends compute the same transform:
//!
//! * [`CqtBackend::Direct`] correlates every kernel with the signal frame by frame;
//! * [`CqtBackend::Fft`] multiplies one whole-signal FFT by each long
//!   kernel's spectrum and folds the product so that a short inverse FFT
//!   yields exactly the hop-decimated outputs. Bins whose kernels are short
//!   enough that direct correlation is cheaper stay on the direct path.
//!
//! No approximation is involved in either, so they agree to rounding error.

mod io;

pub use io::{read_feature_file, write_feature_file, FEATURE_MAGIC, FEATURE_VERSION};

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioClip, DEFAULT_SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::exec;

/// Floor added to the power before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;
pub const DEFAULT_FRAMES: usize = 550;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    /// Repeat the matrix along time and truncate.
    #[default]
    Tile,
    /// Append silence frames (every entry `log10(1e-10)`).
    Silence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CqtBackend {
    Direct,
    #[default]
    Fft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CqtConfig {
    pub n_octaves: usize,
    pub bins_per_octave: usize,
    pub f_min: f64,
    pub hop: usize,
    pub sample_rate: u32,
    pub n_frames: usize,
    pub pad: PadMode,
    pub backend: CqtBackend,
}

impl Default for CqtConfig {
    fn default() -> Self {
        CqtConfig {
            n_octaves: 7,
            bins_per_octave: 12,
            // 62.5 Hz * 2^7 = 8 kHz, the Nyquist frequency at 16 kHz.
            f_min: 62.5,
            hop: 128,
            sample_rate: DEFAULT_SAMPLE_RATE,
            n_frames: DEFAULT_FRAMES,
            pad: PadMode::Tile,
            backend: CqtBackend::Fft,
        }
    }
}

impl CqtConfig {
    pub fn n_bins(&self) -> usize {
        self.n_octaves * self.bins_per_octave
    }

    pub fn q_factor(&self) -> f64 {
        1.0 / (2f64.powf(1.0 / self.bins_per_octave as f64) - 1.0)
    }

    pub fn center_frequency(&self, bin: usize) -> f64 {
        self.f_min * 2f64.powf(bin as f64 / self.bins_per_octave as f64)
    }

    pub fn window_length(&self, bin: usize) -> usize {
        (self.q_factor() * self.sample_rate as f64 / self.center_frequency(bin)).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.n_octaves == 0 || self.bins_per_octave == 0 {
            return bad("CQT needs at least one octave and one bin per octave".into());
        }
        if self.hop == 0 || self.n_frames == 0 || self.sample_rate == 0 {
            return bad("hop, frame count and sample rate must be positive".into());
        }
        if !(self.f_min > 0.0) {
            return bad(format!("f_min must be positive, got {}", self.f_min));
        }
        let top = self.f_min * 2f64.powi(self.n_octaves as i32);
        if top > self.sample_rate as f64 / 2.0 + 1e-9 {
            return bad(format!(
                "f_min * 2^n_octaves = {top} Hz exceeds Nyquist at {} Hz",
                self.sample_rate
            ));
        }
        Ok(())
    }

    /// Number of frames `cqt_lps` produces for `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        len.div_ceil(self.hop)
    }
}

/// A fixed-size log power spectrogram for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub utt_id: String,
    /// `bins x frames`, row-major.
    pub values: Array2<f32>,
}

impl FeatureMatrix {
    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }
}

struct BinKernel {
    /// `window[n] / N * exp(-i 2 pi f n / sr)`.
    taps: Vec<Complex64>,
}

struct FftPlan {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse_folded: Arc<dyn Fft<f64>>,
    /// Dense spectrum per bin, or `None` for bins computed directly.
    kernels: Vec<Option<Vec<Complex64>>>,
}

/// Kernel bank plus cached FFT plans. Cheap to share across threads.
pub struct CqtExtractor {
    cfg: CqtConfig,
    bins: Vec<BinKernel>,
    plans: Mutex<HashMap<usize, Arc<FftPlan>>>,
}

impl std::fmt::Debug for CqtExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CqtExtractor").field("cfg", &self.cfg).finish()
    }
}

impl CqtExtractor {
    pub fn new(cfg: CqtConfig) -> Result<Self> {
        cfg.validate()?;
        let sr = cfg.sample_rate as f64;
        let bins = (0..cfg.n_bins())
            .map(|k| {
                let n = cfg.window_length(k);
                let f = cfg.center_frequency(k);
                let taps = (0..n)
                    .map(|i| {
                        // periodic Hann, zero at the first tap
                        let w = (PI * i as f64 / n as f64).sin().powi(2);
                        Complex64::from_polar(w / n as f64, -2.0 * PI * f * i as f64 / sr)
                    })
                    .collect();
                BinKernel { taps }
            })
            .collect();
        Ok(CqtExtractor {
            cfg,
            bins,
            plans: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &CqtConfig {
        &self.cfg
    }

    fn max_window(&self) -> usize {
        self.bins.iter().map(|b| b.taps.len()).max().unwrap_or(1)
    }

    fn check_clip(&self, clip: &AudioClip) -> Result<()> {
        if clip.sample_rate() != self.cfg.sample_rate {
            return Err(Error::InvalidParameter(format!(
                "clip at {} Hz, CQT configured for {} Hz",
                clip.sample_rate(),
                self.cfg.sample_rate
            )));
        }
        if clip.len() < self.cfg.hop {
            return Err(Error::InvalidParameter(format!(
                "clip of {} samples is shorter than one hop ({})",
                clip.len(),
                self.cfg.hop
            )));
        }
        Ok(())
    }

    /// Variable-length `bins x ceil(len / hop)` log power spectrogram,
    /// computed with the configured backend.
    pub fn lps(&self, clip: &AudioClip) -> Result<Array2<f64>> {
        match self.cfg.backend {
            CqtBackend::Direct => self.lps_direct(clip),
            CqtBackend::Fft => self.lps_fft(clip),
        }
    }

    /// Reference path: one dot product per bin and frame.
    pub fn lps_direct(&self, clip: &AudioClip) -> Result<Array2<f64>> {
        self.check_clip(clip)?;
        let x = clip.samples();
        let n_frames = self.cfg.frames_for(x.len());
        let mut out = Array2::zeros((self.bins.len(), n_frames));
        for k in 0..self.bins.len() {
            self.direct_bin(k, x, &mut out);
        }
        Ok(out)
    }

    fn direct_bin(&self, k: usize, x: &[f64], out: &mut Array2<f64>) {
        let taps = &self.bins[k].taps;
        let len = x.len() as isize;
        let hop = self.cfg.hop as isize;
        let n = taps.len() as isize;
        for m in 0..out.ncols() {
            let start = m as isize * hop - n / 2;
            let lo = (-start).max(0);
            let hi = (len - start).min(n);
            let mut acc = Complex64::new(0.0, 0.0);
            for i in lo..hi {
                acc += taps[i as usize] * x[(start + i) as usize];
            }
            out[[k, m]] = (acc.norm_sqr() + LOG_FLOOR).log10();
        }
    }

    fn plan_for(&self, len: usize) -> Arc<FftPlan> {
        let n_frames = self.cfg.frames_for(len);
        let nmax = self.max_window();
        let need = len.max((n_frames - 1) * self.cfg.hop + 1) + nmax + 1;
        // Power of two at least `need` and a multiple of the hop.
        let mut l = need.next_power_of_two();
        while !l.is_multiple_of(self.cfg.hop) {
            l *= 2;
        }
        if let Some(p) = self.plans.lock().expect("plan cache poisoned").get(&l) {
            return p.clone();
        }
        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(l);
        let inverse_folded = planner.plan_fft_inverse(l / self.cfg.hop);
        let m_len = l / self.cfg.hop;
        let fft_cost = l + m_len * (m_len.ilog2() as usize + 1);
        let kernels = self
            .bins
            .iter()
            .map(|bin| {
                (bin.taps.len() * n_frames > fft_cost)
                    .then(|| spectral_kernel(&bin.taps, l, forward.as_ref()))
            })
            .collect();
        let plan = Arc::new(FftPlan {
            len: l,
            forward,
            inverse_folded,
            kernels,
        });
        self.plans
            .lock()
            .expect("plan cache poisoned")
            .entry(l)
            .or_insert(plan)
            .clone()
    }

    /// FFT path: identical transform, computed through one forward FFT of
    /// the zero-padded clip and one short inverse FFT per bin.
    pub fn lps_fft(&self, clip: &AudioClip) -> Result<Array2<f64>> {
        self.check_clip(clip)?;
        let x = clip.samples();
        let n_frames = self.cfg.frames_for(x.len());
        let plan = self.plan_for(x.len());
        let l = plan.len;
        let m_len = l / self.cfg.hop;

        let mut spectrum: Vec<Complex64> = Vec::with_capacity(l);
        spectrum.extend(x.iter().map(|&v| Complex64::new(v, 0.0)));
        spectrum.resize(l, Complex64::new(0.0, 0.0));
        plan.forward.process(&mut spectrum);

        let mut out = Array2::zeros((self.bins.len(), n_frames));
        let mut folded = vec![Complex64::new(0.0, 0.0); m_len];
        let scale = 1.0 / l as f64;
        for (k, kernel) in plan.kernels.iter().enumerate() {
            let Some(kernel) = kernel else {
                self.direct_bin(k, x, &mut out);
                continue;
            };
            folded.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            // L is a multiple of M, so index j folds onto j mod M.
            for (sc, kc) in spectrum.chunks_exact(m_len).zip(kernel.chunks_exact(m_len)) {
                for ((f, sv), kv) in folded.iter_mut().zip(sc).zip(kc) {
                    *f += sv * kv;
                }
            }
            plan.inverse_folded.process(&mut folded);
            for m in 0..n_frames {
                let v = folded[m] * scale;
                out[[k, m]] = (v.norm_sqr() + LOG_FLOOR).log10();
            }
        }
        Ok(out)
    }

    /// `lps` followed by [`fix_length`], stored as `f32`.
    pub fn features(&self, clip: &AudioClip, utt_id: &str) -> Result<FeatureMatrix> {
        let lps = self.lps(clip)?;
        Ok(FeatureMatrix {
            utt_id: utt_id.to_string(),
            values: fix_length(&lps, self.cfg.n_frames, self.cfg.pad).mapv(|v| v as f32),
        })
    }

    /// Extracts many clips, in parallel when enabled. Output order follows input.
    pub fn features_batch(&self, clips: &[(String, AudioClip)]) -> Vec<Result<FeatureMatrix>> {
        exec::map_slice(clips, |(id, clip)| self.features(clip, id))
    }
}

/// Spectrum of the time-reversed kernel placed so that output sample
/// `m * hop` of the circular convolution is frame `m`.
fn spectral_kernel(taps: &[Complex64], l: usize, fft: &dyn Fft<f64>) -> Vec<Complex64> {
    let half = taps.len() / 2;
    let mut buf = vec![Complex64::new(0.0, 0.0); l];
    for (i, &t) in taps.iter().enumerate() {
        // f[(half - i) mod L] = taps[i]
        buf[(half + l - i) % l] = t;
    }
    fft.process(&mut buf);
    buf
}

/// Convenience wrapper building a one-off extractor.
pub fn cqt_lps(clip: &AudioClip, cfg: &CqtConfig) -> Result<Array2<f64>> {
    CqtExtractor::new(cfg.clone())?.lps(clip)
}

/// Forces a `bins x T` matrix to `bins x n_frames`: longer inputs keep their
/// first `n_frames` frames, shorter ones are padded per `pad`.
pub fn fix_length(matrix: &Array2<f64>, n_frames: usize, pad: PadMode) -> Array2<f64> {
    let (rows, t) = matrix.dim();
    if t == n_frames {
        return matrix.clone();
    }
    let floor = LOG_FLOOR.log10();
    Array2::from_shape_fn((rows, n_frames), |(r, c)| {
        if c < t {
            matrix[[r, c]]
        } else {
            match pad {
                PadMode::Tile if t > 0 => matrix[[r, c % t]],
                _ => floor,
            }
        }
    })
}
