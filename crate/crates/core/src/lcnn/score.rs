use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::Lcnn;
use crate::augment::RecordFailure;
use crate::cqt::{read_feature_file, FeatureMatrix};
use crate::error::{Error, Result};
use crate::protocol::DatasetManifest;

/// Where features for a manifest come from.
pub trait FeatureStore: Sync {
    fn load(&self, utt_id: &str) -> Result<FeatureMatrix>;
}

/// Features stored as `<dir>/<utt_id>.lps`.
#[derive(Debug, Clone)]
pub struct DirFeatureStore {
    pub dir: PathBuf,
}

impl DirFeatureStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        DirFeatureStore { dir: dir.into() }
    }

    pub fn path_for(&self, utt_id: &str) -> PathBuf {
        self.dir.join(format!("{utt_id}.lps"))
    }
}

impl FeatureStore for DirFeatureStore {
    fn load(&self, utt_id: &str) -> Result<FeatureMatrix> {
        read_feature_file(self.path_for(utt_id))
    }
}

impl FeatureStore for HashMap<String, FeatureMatrix> {
    fn load(&self, utt_id: &str) -> Result<FeatureMatrix> {
        self.get(utt_id)
            .cloned()
            .ok_or_else(|| Error::InvalidParameter(format!("no features for {utt_id}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub utt_id: String,
    pub score: f64,
}

impl fmt::Display for ScoreRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.utt_id, self.score)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScoreOutcome {
    /// In manifest order, skipping failed records.
    pub scores: Vec<ScoreRecord>,
    pub failures: Vec<RecordFailure>,
}

/// Scores every record of `manifest` in batches of `batch_size`. Records
/// whose features are missing or malformed are reported, not fatal.
/// Inference is per-example, so scores do not depend on the batch size.
pub fn score_set(
    model: &Lcnn,
    manifest: &DatasetManifest,
    store: &dyn FeatureStore,
    batch_size: usize,
) -> Result<ScoreOutcome> {
    if batch_size == 0 {
        return Err(Error::InvalidParameter("batch size must be positive".into()));
    }
    let mut out = ScoreOutcome::default();
    for chunk in manifest.records.chunks(batch_size) {
        let mut feats = Vec::with_capacity(chunk.len());
        for rec in chunk {
            let loaded = store.load(&rec.utt_id).and_then(|f| {
                if f.shape() == model.spec().input_shape {
                    Ok(f)
                } else {
                    Err(Error::Shape(format!(
                        "feature is {:?}, model expects {:?}",
                        f.shape(),
                        model.spec().input_shape
                    )))
                }
            });
            match loaded {
                Ok(f) => feats.push(f),
                Err(e) => out.failures.push(RecordFailure {
                    utt_id: rec.utt_id.clone(),
                    reason: e.to_string(),
                }),
            }
        }
        if feats.is_empty() {
            continue;
        }
        let refs: Vec<&FeatureMatrix> = feats.iter().collect();
        let logits = model.logits_batch(&model.batch_input(&refs)?)?;
        for (f, row) in feats.iter().zip(logits.rows()) {
            out.scores.push(ScoreRecord {
                utt_id: f.utt_id.clone(),
                score: row[super::BONAFIDE_CLASS] - row[super::SPOOF_CLASS],
            });
        }
    }
    Ok(out)
}

/// One `UTT_ID SCORE` line per record.
pub fn write_scores(scores: &[ScoreRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for s in scores {
        writeln!(f, "{s}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse { path: path.to_path_buf(), line: line_no, reason };
        if fields.len() != 2 {
            return Err(parse_err(format!("expected `UTT_ID SCORE`, got {} fields", fields.len())));
        }
        let score: f64 = fields[1]
            .parse()
            .map_err(|_| parse_err(format!("bad score `{}`", fields[1])))?;
        if !score.is_finite() {
            return Err(parse_err(format!("non-finite score `{}`", fields[1])));
        }
        if !seen.insert(fields[0].to_string()) {
            return Err(Error::DuplicateUtt {
                path: path.to_path_buf(),
                line: line_no,
                utt_id: fields[0].to_string(),
            });
        }
        out.push(ScoreRecord { utt_id: fields[0].to_string(), score });
    }
    Ok(out)
}
