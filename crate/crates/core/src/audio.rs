//! Mono 16-bit PCM audio clips and WAV I/O.
//!
//! Samples are kept as `f64` in `[-1, 1]`. Integer PCM is normalized by
//! 32768, so `-32768` maps exactly to `-1.0` and the companding domain stays
//! closed.

use std::path::Path;

use crate::error::{Error, Result};

/// The only sample rate the WAV reader accepts.
pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

const PCM_SCALE: f64 = 32768.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    /// Builds a clip, rejecting non-finite or out-of-range samples.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParameter("sample rate must be positive".into()));
        }
        if let Some((index, &value)) = samples
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && v.abs() <= 1.0))
        {
            return Err(Error::SampleRange { index, value });
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    /// Builds a clip after clamping every sample into `[-1, 1]`.
    /// Returns the clip and the number of samples that were clipped.
    pub fn clipped(samples: Vec<f64>, sample_rate: u32) -> Result<(Self, usize)> {
        let mut n_clipped = 0;
        let samples = samples
            .into_iter()
            .map(|v| {
                if v.abs() > 1.0 {
                    n_clipped += 1;
                    v.clamp(-1.0, 1.0)
                } else {
                    v
                }
            })
            .collect();
        Ok((AudioClip::new(samples, sample_rate)?, n_clipped))
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        AudioClip {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean squared sample value.
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

pub(crate) fn mean_power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().map(|v| v * v).sum::<f64>() / samples.len() as f64
}

/// Converts a normalized sample to int16, rounding to nearest and clipping
/// instead of wrapping.
pub fn to_pcm16(x: f64) -> i16 {
    (x * PCM_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

pub fn from_pcm16(v: i16) -> f64 {
    v as f64 / PCM_SCALE
}

/// Reads a 16-bit PCM mono WAV at 16 kHz.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedChannels {
            path: path.into(),
            channels: spec.channels,
        });
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::WavFormat {
            path: path.into(),
            reason: format!(
                "expected 16-bit integer PCM, found {}-bit {:?}",
                spec.bits_per_sample, spec.sample_format
            ),
        });
    }
    if spec.sample_rate != DEFAULT_SAMPLE_RATE {
        return Err(Error::UnsupportedSampleRate {
            path: path.into(),
            rate: spec.sample_rate,
            expected: DEFAULT_SAMPLE_RATE,
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(from_pcm16))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_error(path, e))?;
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
    })
}

/// Writes a clip as 16-bit PCM mono. Samples are already guaranteed to be in
/// range by [`AudioClip::new`], so the quantization error is at most 1/32768.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for (index, &value) in clip.samples.iter().enumerate() {
        if !(value.abs() <= 1.0) {
            return Err(Error::SampleRange { index, value });
        }
        writer
            .write_sample(to_pcm16(value))
            .map_err(|e| wav_error(path, e))?;
    }
    writer.finalize().map_err(|e| wav_error(path, e))
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::WavFormat {
            path: path.into(),
            reason: other.to_string(),
        },
    }
}
