//! Equal error rate, minimum normalised t-DCF and DET curves.
//!
//! Thresholds are the distinct scores plus `-inf` and `+inf`. A trial is
//! accepted as bona fide when its score is `>=` the threshold, so at
//! threshold `t`:
//!
//! * false acceptance `FAR(t)` = fraction of spoof scores `>= t`
//! * false rejection `FRR(t)` = fraction of bona fide scores `< t`
//!
//! The t-DCF follows the ASVspoof 2019 form
//! `C1 * P_miss_cm(t) + C2 * P_fa_cm(t)` with
//! `C1 = pi_tar * (c_miss_cm - c_miss_asv * p_miss_asv) - pi_non * c_fa_asv * p_fa_asv` and
//! `C2 = c_fa_cm * pi_spoof * (1 - p_miss_spoof_asv)`, normalised by
//! `min(C1, C2)`.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lcnn::ScoreRecord;
use crate::protocol::{DatasetManifest, Key};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EerResult {
    pub eer: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdcfResult {
    pub min_tdcf: f64,
    pub threshold: f64,
}

/// Costs, priors and the error rates of a fixed ASV system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TdcfCostModel {
    pub pi_tar: f64,
    pub pi_non: f64,
    pub pi_spoof: f64,
    pub c_miss_asv: f64,
    pub c_fa_asv: f64,
    pub c_miss_cm: f64,
    pub c_fa_cm: f64,
    pub p_miss_asv: f64,
    pub p_fa_asv: f64,
    pub p_miss_spoof_asv: f64,
}

impl Default for TdcfCostModel {
    /// ASVspoof 2019 priors and costs with an error-free ASV system.
    fn default() -> Self {
        TdcfCostModel {
            pi_tar: 0.9405,
            pi_non: 0.0095,
            pi_spoof: 0.05,
            c_miss_asv: 1.0,
            c_fa_asv: 10.0,
            c_miss_cm: 1.0,
            c_fa_cm: 10.0,
            p_miss_asv: 0.0,
            p_fa_asv: 0.0,
            p_miss_spoof_asv: 0.0,
        }
    }
}

impl TdcfCostModel {
    pub fn validate(&self) -> Result<()> {
        let priors = [self.pi_tar, self.pi_non, self.pi_spoof];
        let rates = [self.p_miss_asv, self.p_fa_asv, self.p_miss_spoof_asv];
        let costs = [self.c_miss_asv, self.c_fa_asv, self.c_miss_cm, self.c_fa_cm];
        if priors.iter().chain(&rates).any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter("priors and ASV rates must lie in [0, 1]".into()));
        }
        if (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "priors must sum to 1, got {}",
                priors.iter().sum::<f64>()
            )));
        }
        if costs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::InvalidParameter("costs must be positive".into()));
        }
        Ok(())
    }

    /// `(C1, C2)`; both must be positive for a normalised t-DCF.
    pub fn constants(&self) -> Result<(f64, f64)> {
        self.validate()?;
        let c1 = self.pi_tar * (self.c_miss_cm - self.c_miss_asv * self.p_miss_asv)
            - self.pi_non * self.c_fa_asv * self.p_fa_asv;
        let c2 = self.c_fa_cm * self.pi_spoof * (1.0 - self.p_miss_spoof_asv);
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(Error::DegenerateCost(format!("C1 = {c1}, C2 = {c2}; both must be positive")));
        }
        Ok((c1, c2))
    }

    /// Reads ASV error rates from `key value` (or `key = value`) lines.
    /// Recognised keys: `p_miss_asv`, `p_fa_asv`, `p_miss_spoof_asv`.
    pub fn with_asv_file(mut self, path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| Error::Parse { path: path.to_path_buf(), line: i + 1, reason };
            let mut parts = line.splitn(2, |c: char| c == '=' || c.is_whitespace());
            let key = parts.next().unwrap_or("").trim();
            let value = parts.next().unwrap_or("").trim().trim_start_matches('=').trim();
            let value: f64 = value.parse().map_err(|_| err(format!("bad value for `{key}`")))?;
            match key {
                "p_miss_asv" => self.p_miss_asv = value,
                "p_fa_asv" => self.p_fa_asv = value,
                "p_miss_spoof_asv" => self.p_miss_spoof_asv = value,
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        self.validate()?;
        Ok(self)
    }
}

/// Class scores sorted ascending, checked for emptiness and finiteness.
struct Sorted {
    bona: Vec<f64>,
    spoof: Vec<f64>,
}

impl Sorted {
    fn new(bonafide: &[f64], spoof: &[f64]) -> Result<Self> {
        if bonafide.is_empty() {
            return Err(Error::EmptyClass("bonafide"));
        }
        if spoof.is_empty() {
            return Err(Error::EmptyClass("spoof"));
        }
        if let Some(v) = bonafide.iter().chain(spoof).find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite score {v}")));
        }
        let mut bona = bonafide.to_vec();
        let mut spoof = spoof.to_vec();
        bona.sort_by(f64::total_cmp);
        spoof.sort_by(f64::total_cmp);
        Ok(Sorted { bona, spoof })
    }

    /// Calls `f(threshold, FAR, FRR)` for every threshold in increasing
    /// order, starting at `-inf` and ending at `+inf`.
    fn sweep(&self, mut f: impl FnMut(f64, f64, f64)) {
        let (nb, ns) = (self.bona.len(), self.spoof.len());
        let (mut bi, mut si) = (0, 0);
        f(f64::NEG_INFINITY, 1.0, 0.0);
        loop {
            let t = match (self.bona.get(bi), self.spoof.get(si)) {
                (Some(&b), Some(&s)) => b.min(s),
                (Some(&b), None) => b,
                (None, Some(&s)) => s,
                (None, None) => break,
            };
            // bona fide below t are rejected, spoof at or above t accepted
            while bi < nb && self.bona[bi] < t {
                bi += 1;
            }
            while si < ns && self.spoof[si] < t {
                si += 1;
            }
            f(t, (ns - si) as f64 / ns as f64, bi as f64 / nb as f64);
            while bi < nb && self.bona[bi] <= t {
                bi += 1;
            }
            while si < ns && self.spoof[si] <= t {
                si += 1;
            }
        }
        f(f64::INFINITY, 0.0, 1.0);
    }
}

/// EER as `(FAR + FRR) / 2` at the threshold minimising `|FAR - FRR|`
/// (lowest such threshold on ties).
pub fn compute_eer(bonafide: &[f64], spoof: &[f64]) -> Result<EerResult> {
    let sorted = Sorted::new(bonafide, spoof)?;
    let mut best = (f64::INFINITY, EerResult { eer: 1.0, threshold: 0.0 });
    sorted.sweep(|t, far, frr| {
        let gap = (far - frr).abs();
        if gap < best.0 {
            best = (gap, EerResult { eer: (far + frr) / 2.0, threshold: t });
        }
    });
    Ok(best.1)
}

/// Minimum normalised t-DCF over all thresholds (lowest threshold on ties).
pub fn compute_min_tdcf(bonafide: &[f64], spoof: &[f64], cost: &TdcfCostModel) -> Result<TdcfResult> {
    let (c1, c2) = cost.constants()?;
    let sorted = Sorted::new(bonafide, spoof)?;
    let norm = c1.min(c2);
    let mut best = TdcfResult { min_tdcf: f64::INFINITY, threshold: 0.0 };
    sorted.sweep(|t, far, frr| {
        let v = (c1 * frr + c2 * far) / norm;
        if v < best.min_tdcf {
            best = TdcfResult { min_tdcf: v, threshold: t };
        }
    });
    Ok(best)
}

/// Normalised t-DCF at one threshold.
pub fn tdcf_at(bonafide: &[f64], spoof: &[f64], cost: &TdcfCostModel, threshold: f64) -> Result<f64> {
    let (c1, c2) = cost.constants()?;
    if bonafide.is_empty() {
        return Err(Error::EmptyClass("bonafide"));
    }
    if spoof.is_empty() {
        return Err(Error::EmptyClass("spoof"));
    }
    let frr = bonafide.iter().filter(|&&b| b < threshold).count() as f64 / bonafide.len() as f64;
    let far = spoof.iter().filter(|&&s| s >= threshold).count() as f64 / spoof.len() as f64;
    Ok((c1 * frr + c2 * far) / c1.min(c2))
}

/// `(p_fa, p_miss)` at every distinct score and at `+inf`, in increasing
/// threshold order: starts at `(1, 0)` and ends at `(0, 1)`.
pub fn det_curve(bonafide: &[f64], spoof: &[f64]) -> Result<Vec<(f64, f64)>> {
    let sorted = Sorted::new(bonafide, spoof)?;
    let mut points = Vec::new();
    sorted.sweep(|t, far, frr| {
        if t > f64::NEG_INFINITY {
            points.push((far, frr));
        }
    });
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_tdcf: f64,
    pub tdcf_threshold: f64,
    pub n_bonafide: usize,
    pub n_spoof: usize,
    pub det_points: Vec<(f64, f64)>,
}

pub fn evaluate(bonafide: &[f64], spoof: &[f64], cost: &TdcfCostModel) -> Result<EvalResult> {
    let eer = compute_eer(bonafide, spoof)?;
    let tdcf = compute_min_tdcf(bonafide, spoof, cost)?;
    Ok(EvalResult {
        eer: eer.eer,
        eer_threshold: eer.threshold,
        min_tdcf: tdcf.min_tdcf,
        tdcf_threshold: tdcf.threshold,
        n_bonafide: bonafide.len(),
        n_spoof: spoof.len(),
        det_points: det_curve(bonafide, spoof)?,
    })
}

impl fmt::Display for EvalResult {
    /// Key-value lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "eer = {}", self.eer)?;
        writeln!(f, "eer_percent = {:.4}", self.eer * 100.0)?;
        writeln!(f, "eer_threshold = {}", self.eer_threshold)?;
        writeln!(f, "min_tdcf = {}", self.min_tdcf)?;
        writeln!(f, "tdcf_threshold = {}", self.tdcf_threshold)?;
        writeln!(f, "n_bonafide = {}", self.n_bonafide)?;
        write!(f, "n_spoof = {}", self.n_spoof)
    }
}

pub fn write_eval_result(result: &EvalResult, cost: &TdcfCostModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = format!("{result}\n");
    text.push_str("tdcf_form = asvspoof2019\n");
    for (k, v) in [
        ("pi_tar", cost.pi_tar),
        ("pi_non", cost.pi_non),
        ("pi_spoof", cost.pi_spoof),
        ("c_miss_asv", cost.c_miss_asv),
        ("c_fa_asv", cost.c_fa_asv),
        ("c_miss_cm", cost.c_miss_cm),
        ("c_fa_cm", cost.c_fa_cm),
        ("p_miss_asv", cost.p_miss_asv),
        ("p_fa_asv", cost.p_fa_asv),
        ("p_miss_spoof_asv", cost.p_miss_spoof_asv),
    ] {
        text.push_str(&format!("{k} = {v}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_det_csv(points: &[(f64, f64)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    let mut write = || -> std::io::Result<()> {
        writeln!(f, "p_fa,p_miss")?;
        for (pfa, pmiss) in points {
            writeln!(f, "{pfa},{pmiss}")?;
        }
        f.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Scores grouped by ground truth.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JoinedScores {
    pub bonafide: Vec<f64>,
    pub spoof: Vec<f64>,
    /// Manifest records without a score.
    pub missing: Vec<String>,
}

/// Splits scores by the labels in `manifest`. A score for an utterance that
/// is not in the manifest is an error.
pub fn join_scores(scores: &[ScoreRecord], manifest: &DatasetManifest) -> Result<JoinedScores> {
    let by_id: HashMap<&str, f64> = scores.iter().map(|s| (s.utt_id.as_str(), s.score)).collect();
    let known: HashMap<&str, Key> = manifest.records.iter().map(|r| (r.utt_id.as_str(), r.key)).collect();
    if let Some(s) = scores.iter().find(|s| !known.contains_key(s.utt_id.as_str())) {
        return Err(Error::InvalidParameter(format!(
            "score for `{}`, which is not in the protocol",
            s.utt_id
        )));
    }
    let mut out = JoinedScores::default();
    for rec in &manifest.records {
        match (by_id.get(rec.utt_id.as_str()), rec.key) {
            (Some(&s), Key::Bonafide) => out.bonafide.push(s),
            (Some(&s), Key::Spoof) => out.spoof.push(s),
            (None, _) => out.missing.push(rec.utt_id.clone()),
        }
    }
    Ok(out)
}
