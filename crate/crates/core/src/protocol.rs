//! Trial lists in the five-column protocol format
//! `SPEAKER UTT_ID ENV ATTACK_ID KEY`.
//!
//! The third column is carried through untouched. Bonafide trials use `-` as
//! their attack id, and that pairing is enforced on parse.

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Key {
    Bonafide,
    Spoof,
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Key::Bonafide => "bonafide",
            Key::Spoof => "spoof",
        })
    }
}

impl FromStr for Key {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bonafide" => Ok(Key::Bonafide),
            "spoof" => Ok(Key::Spoof),
            other => Err(format!("unknown key {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Development,
    Evaluation,
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::Train => "train",
            Subset::Development => "development",
            Subset::Evaluation => "evaluation",
        })
    }
}

pub const BONAFIDE_ATTACK: &str = "-";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialRecord {
    pub speaker_id: String,
    pub utt_id: String,
    /// Third protocol column, preserved verbatim.
    pub env: String,
    pub attack_id: String,
    pub key: Key,
}

impl TrialRecord {
    pub fn bonafide(speaker_id: &str, utt_id: &str) -> Self {
        TrialRecord {
            speaker_id: speaker_id.into(),
            utt_id: utt_id.into(),
            env: "-".into(),
            attack_id: BONAFIDE_ATTACK.into(),
            key: Key::Bonafide,
        }
    }

    pub fn spoof(speaker_id: &str, utt_id: &str, attack_id: &str) -> Self {
        TrialRecord {
            speaker_id: speaker_id.into(),
            utt_id: utt_id.into(),
            env: "-".into(),
            attack_id: attack_id.into(),
            key: Key::Spoof,
        }
    }

    /// Copy of this record under a new utterance id; labels are unchanged.
    pub fn derived(&self, suffix: &str) -> Self {
        TrialRecord {
            utt_id: format!("{}{}", self.utt_id, suffix),
            ..self.clone()
        }
    }

    fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [speaker_id, utt_id, env, attack_id, key] = fields[..] else {
            return Err(format!("expected 5 fields, found {}", fields.len()));
        };
        let key: Key = key.parse()?;
        if (key == Key::Bonafide) != (attack_id == BONAFIDE_ATTACK) {
            return Err(format!(
                "key {key} inconsistent with attack id {attack_id:?}"
            ));
        }
        Ok(TrialRecord {
            speaker_id: speaker_id.into(),
            utt_id: utt_id.into(),
            env: env.into(),
            attack_id: attack_id.into(),
            key,
        })
    }
}

impl fmt::Display for TrialRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {} {}",
            self.speaker_id, self.utt_id, self.env, self.attack_id, self.key
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub subset: Subset,
    pub records: Vec<TrialRecord>,
    /// Directory holding `<utt_id>.wav` for every record.
    pub audio_root: PathBuf,
}

impl DatasetManifest {
    pub fn new(subset: Subset, audio_root: impl Into<PathBuf>) -> Self {
        DatasetManifest {
            subset,
            records: Vec::new(),
            audio_root: audio_root.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `(bonafide, spoof)` record counts.
    pub fn counts(&self) -> (usize, usize) {
        let bona = self
            .records
            .iter()
            .filter(|r| r.key == Key::Bonafide)
            .count();
        (bona, self.records.len() - bona)
    }

    pub fn audio_path(&self, record: &TrialRecord) -> PathBuf {
        self.audio_root.join(format!("{}.wav", record.utt_id))
    }

    pub fn find(&self, utt_id: &str) -> Option<&TrialRecord> {
        self.records.iter().find(|r| r.utt_id == utt_id)
    }

    /// Writes the records back out in protocol format.
    pub fn write_protocol(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::with_capacity(self.records.len() * 40);
        for r in &self.records {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Parses a protocol file. Audio is looked up next to the protocol file
/// unless the caller replaces `audio_root`.
pub fn parse_protocol(path: impl AsRef<Path>, subset: Subset) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let audio_root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_protocol_str(&text, path, subset, audio_root)
}

pub fn parse_protocol_str(
    text: &str,
    path: &Path,
    subset: Subset,
    audio_root: PathBuf,
) -> Result<DatasetManifest> {
    let mut manifest = DatasetManifest::new(subset, audio_root);
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = TrialRecord::parse_line(line).map_err(|reason| Error::Parse {
            path: path.into(),
            line: i + 1,
            reason,
        })?;
        if !seen.insert(record.utt_id.clone()) {
            return Err(Error::DuplicateUtt {
                path: path.into(),
                line: i + 1,
                utt_id: record.utt_id,
            });
        }
        manifest.records.push(record);
    }
    Ok(manifest)
}

/// Returns the first utterance id shared by two of the given manifests.
pub fn find_overlap(manifests: &[&DatasetManifest]) -> Option<String> {
    let mut seen = HashSet::new();
    for m in manifests {
        let mine: HashSet<&str> = m.records.iter().map(|r| r.utt_id.as_str()).collect();
        if let Some(dup) = mine.iter().find(|id| seen.contains(*id)) {
            return Some(dup.to_string());
        }
        seen.extend(mine);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str) -> Result<DatasetManifest> {
        parse_protocol_str(text, Path::new("p.txt"), Subset::Train, PathBuf::new())
    }

    #[test]
    fn single_bonafide_line() {
        let m = parse("LA_0001 LA_T_1 - - bonafide\n").unwrap();
        assert_eq!(m.records.len(), 1);
        let r = &m.records[0];
        assert_eq!(r.key, Key::Bonafide);
        assert_eq!(r.attack_id, "-");
        assert_eq!(r.speaker_id, "LA_0001");
        assert_eq!(r.utt_id, "LA_T_1");
    }

    #[test]
    fn empty_file_gives_empty_manifest() {
        let m = parse("").unwrap();
        assert!(m.is_empty());
        assert_eq!(m.counts(), (0, 0));
    }

    #[test]
    fn train_row_counts() {
        let mut text = String::new();
        for i in 0..2580 {
            text.push_str(&format!("LA_0079 LA_T_B{i} - - bonafide\n"));
        }
        for i in 0..22800 {
            text.push_str(&format!("LA_0079 LA_T_S{i} - A0{} spoof\n", 1 + i % 6));
        }
        let m = parse(&text).unwrap();
        assert_eq!(m.counts(), (2580, 22800));
    }

    #[test]
    fn wrong_field_count_reports_line() {
        let err = parse("a b - - bonafide\nc d - spoof\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_and_inconsistent_lines() {
        let err = parse("a u1 - - bonafide\na u1 - A01 spoof\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateUtt { line: 2, .. }));
        assert!(parse("a u1 - A01 bonafide\n").is_err());
        assert!(parse("a u1 - - spoof\n").is_err());
        assert!(parse("a u1 - - maybe\n").is_err());
    }

    #[test]
    fn overlap_detection() {
        let a = parse("s u1 - - bonafide\n").unwrap();
        let b = parse("s u2 - - bonafide\n").unwrap();
        let c = parse("s u1 - A01 spoof\n").unwrap();
        assert_eq!(find_overlap(&[&a, &b]), None);
        assert_eq!(find_overlap(&[&a, &b, &c]).as_deref(), Some("u1"));
    }

    #[test]
    fn write_then_parse_is_identity() {
        let m = parse("s u1 x - bonafide\ns u2 - A07 spoof\n").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        m.write_protocol(&p).unwrap();
        let back = parse_protocol(&p, Subset::Train).unwrap();
        assert_eq!(back.records, m.records);
        assert_eq!(back.audio_root, dir.path());
    }

    proptest! {
        #[test]
        fn record_count_matches_lines(keys in prop::collection::vec(any::<bool>(), 0..200)) {
            let text: String = keys
                .iter()
                .enumerate()
                .map(|(i, &bona)| if bona {
                    format!("spk{i} utt{i} - - bonafide\n")
                } else {
                    format!("spk{i} utt{i} - A{:02} spoof\n", i % 19)
                })
                .collect();
            let m = parse(&text).unwrap();
            prop_assert_eq!(m.len(), keys.len());
            for r in &m.records {
                prop_assert_eq!(r.key == Key::Bonafide, r.attack_id == "-");
            }
        }
    }
}
