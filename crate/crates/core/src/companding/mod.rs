//! a-law and mu-law companding.
//!
//! Two realizations are provided:
//!
//! * the continuous curves ([`compress`] / [`expand`]), which are exact
//!   inverses of each other on `[-1, 1]`;
//! * the 8-bit segmented G.711 codec ([`g711_encode`] / [`g711_decode`]),
//!   whose encode/decode round trip adds quantization noise.
//!
//! [`companding_perturb`] runs a whole clip through one of the two. The
//! quantized codec is the default because the continuous round trip is a
//! near no-op.

mod g711;

pub use g711::{g711_decode, g711_encode, ALAW_PEAK, MULAW_PEAK};

use serde::{Deserialize, Serialize};

use crate::audio::{from_pcm16, to_pcm16, AudioClip};
use crate::error::{Error, Result};

pub const DEFAULT_A: f64 = 86.5;
pub const DEFAULT_MU: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LawKind {
    ALaw,
    MuLaw,
}

impl LawKind {
    /// Suffix appended to utterance ids of copies companded with this law.
    pub fn suffix(self) -> &'static str {
        match self {
            LawKind::ALaw => "_alaw",
            LawKind::MuLaw => "_mulaw",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompandingMode {
    /// Continuous curves; the round trip is identity up to rounding.
    Continuous,
    /// 8-bit G.711 codec round trip through int16.
    #[default]
    Quantized8,
}

/// A companding law with its compression parameter and realization mode.
///
/// `a` only matters for a-law and `mu` only for mu-law. The G.711 codec uses
/// the fixed standard segment tables whatever the parameters are.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompandingLaw {
    pub kind: LawKind,
    pub a: f64,
    pub mu: f64,
    pub mode: CompandingMode,
}

impl CompandingLaw {
    pub fn a_law() -> Self {
        CompandingLaw {
            kind: LawKind::ALaw,
            a: DEFAULT_A,
            mu: DEFAULT_MU,
            mode: CompandingMode::default(),
        }
    }

    pub fn mu_law() -> Self {
        CompandingLaw {
            kind: LawKind::MuLaw,
            ..CompandingLaw::a_law()
        }
    }

    pub fn with_mode(self, mode: CompandingMode) -> Self {
        CompandingLaw { mode, ..self }
    }

    pub fn continuous(self) -> Self {
        self.with_mode(CompandingMode::Continuous)
    }

    pub fn validate(&self) -> Result<()> {
        // A > 1 keeps ln(A) positive so the two a-law branches meet at 1/A.
        if !(self.a.is_finite() && self.a > 1.0) {
            return Err(Error::InvalidParameter(format!("A must be > 1, got {}", self.a)));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(Error::InvalidParameter(format!("mu must be > 0, got {}", self.mu)));
        }
        Ok(())
    }
}

fn check_domain(v: f64) -> Result<()> {
    if v.is_finite() && v.abs() <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(v))
    }
}

/// Continuous compression curve `F(x)`. Odd, strictly increasing, and maps
/// `[-1, 1]` onto itself.
pub fn compress(x: f64, law: &CompandingLaw) -> Result<f64> {
    check_domain(x)?;
    law.validate()?;
    let m = x.abs();
    let y = match law.kind {
        LawKind::ALaw => {
            let a = law.a;
            let denom = 1.0 + a.ln();
            if m < 1.0 / a {
                a * m / denom
            } else {
                // (1 + ln(A m)) / (1 + ln A), rearranged so that F(1) = 1 exactly
                1.0 + m.ln() / denom
            }
        }
        LawKind::MuLaw => (law.mu * m).ln_1p() / law.mu.ln_1p(),
    };
    Ok(y.min(1.0).copysign(x))
}

/// Continuous expansion curve `F^-1(y)`, the exact inverse of [`compress`].
pub fn expand(y: f64, law: &CompandingLaw) -> Result<f64> {
    check_domain(y)?;
    law.validate()?;
    let m = y.abs();
    let x = match law.kind {
        LawKind::ALaw => {
            let a = law.a;
            let denom = 1.0 + a.ln();
            if m < 1.0 / denom {
                m * denom / a
            } else {
                // exp(m (1 + ln A) - 1) / A, rearranged so that F^-1(1) = 1 exactly
                ((m - 1.0) * denom).exp()
            }
        }
        LawKind::MuLaw => ((1.0 + law.mu).powf(m) - 1.0) / law.mu,
    };
    Ok(x.min(1.0).copysign(y))
}

/// Compress then expand every sample of a clip, through either the
/// continuous curves or the 8-bit codec depending on `law.mode`.
///
/// In quantized mode the float to int16 bridge clips rather than wraps.
pub fn companding_perturb(clip: &AudioClip, law: &CompandingLaw) -> Result<AudioClip> {
    law.validate()?;
    let samples = match law.mode {
        CompandingMode::Quantized8 => clip
            .samples()
            .iter()
            .map(|&x| from_pcm16(g711_decode(g711_encode(to_pcm16(x), law.kind), law.kind)))
            .collect(),
        CompandingMode::Continuous => clip
            .samples()
            .iter()
            .map(|&x| compress(x, law).and_then(|y| expand(y, law)))
            .collect::<Result<Vec<_>>>()?,
    };
    AudioClip::new(samples, clip.sample_rate())
}
