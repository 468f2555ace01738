// Feature files: 4-byte magic, u32 version, u32 rows, u32 cols (all
// little-endian), then rows * cols f32 LE values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::FeatureMatrix;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: [u8; 4] = *b"LPSF";
pub const FEATURE_VERSION: u32 = 1;

pub fn write_feature_file(feat: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (rows, cols) = feat.values.dim();
    let mut buf = Vec::with_capacity(16 + rows * cols * 4);
    buf.extend_from_slice(&FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(rows as u32).to_le_bytes());
    buf.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in feat.values.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a feature file; the utterance id is the file stem.
pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bad = |reason: &str| Error::BadFile {
        path: path.into(),
        reason: reason.into(),
    };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || bytes[..4] != FEATURE_MAGIC {
        return Err(bad("missing feature magic"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if word(4) != FEATURE_VERSION {
        return Err(bad("unsupported feature file version"));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    if bytes.len() != 16 + rows * cols * 4 {
        return Err(bad("payload length does not match header"));
    }
    let data: Vec<f32> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let values = Array2::from_shape_vec((rows, cols), data).map_err(|e| bad(&e.to_string()))?;
    let utt_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(FeatureMatrix { utt_id, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let values = Array2::from_shape_fn((84, 550), |(r, c)| {
            ((r * 550 + c) as f32 * 0.37).sin() * 10.0 - 3.3
        });
        let feat = FeatureMatrix {
            utt_id: "LA_T_9".into(),
            values,
        };
        let p = dir.path().join("LA_T_9.lps");
        write_feature_file(&feat, &p).unwrap();
        let back = read_feature_file(&p).unwrap();
        assert_eq!(back.utt_id, "LA_T_9");
        assert_eq!(back.shape(), (84, 550));
        for (a, b) in feat.values.iter().zip(back.values.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let raw = std::fs::read(&p).unwrap();
        assert_eq!(&raw[..4], b"LPSF");
        assert_eq!(u32::from_le_bytes(raw[8..12].try_into().unwrap()), 84);
        assert_eq!(u32::from_le_bytes(raw[12..16].try_into().unwrap()), 550);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.lps");
        std::fs::write(&p, b"LPSF\x01\0\0\0\x02\0\0\0\x02\0\0\0abc").unwrap();
        assert!(matches!(read_feature_file(&p), Err(Error::BadFile { .. })));
        std::fs::write(&p, b"nope").unwrap();
        assert!(read_feature_file(&p).is_err());
    }
}
