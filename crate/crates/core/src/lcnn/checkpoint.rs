//! Binary checkpoints: `LCNNCKPT`, u32 version, u32 header length, a JSON
//! header (architecture and input normalisation), u64 value count, then
//! every parameter and batch-norm buffer as little-endian f32.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Lcnn, LcnnSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LCNNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: LcnnSpec,
    input_mean: f64,
    input_std: f64,
}

fn visit_values(model: &mut Lcnn, mut f: impl FnMut(&mut f64)) {
    for layer in model.layers_mut() {
        for mut a in layer.params_mut() {
            a.iter_mut().for_each(&mut f);
        }
        for mut a in layer.buffers_mut() {
            a.iter_mut().for_each(&mut f);
        }
    }
}

struct Cursor<'a> {
    rest: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.rest.len() < n {
            return None;
        }
        let (head, rest) = self.rest.split_at(n);
        self.rest = rest;
        Some(head)
    }
}

pub fn save_checkpoint(model: &Lcnn, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = serde_json::to_vec(&Header {
        spec: model.spec().clone(),
        input_mean: model.input_mean,
        input_std: model.input_std,
    })
    .map_err(|e| Error::InvalidParameter(format!("serialising checkpoint header: {e}")))?;
    let mut copy = model.clone();
    let mut values = Vec::new();
    visit_values(&mut copy, |v| values.push(*v as f32));

    let mut buf = Vec::with_capacity(24 + header.len() + 4 * values.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Lcnn> {
    let path = path.as_ref();
    let bad = |reason: String| Error::BadFile { path: path.to_path_buf(), reason };
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { rest: &bytes };
    let truncated = || bad("truncated checkpoint".into());
    if cur.take(8).ok_or_else(truncated)? != CHECKPOINT_MAGIC {
        return Err(bad("not a model checkpoint".into()));
    }
    let u32_at = |cur: &mut Cursor| -> Result<u32> {
        Ok(u32::from_le_bytes(cur.take(4).ok_or_else(truncated)?.try_into().unwrap()))
    };
    let version = u32_at(&mut cur)?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u32_at(&mut cur)? as usize;
    let header: Header = serde_json::from_slice(cur.take(header_len).ok_or_else(truncated)?)
        .map_err(|e| bad(format!("bad checkpoint header: {e}")))?;
    let count = u64::from_le_bytes(cur.take(8).ok_or_else(truncated)?.try_into().unwrap()) as usize;

    let mut model = Lcnn::zeros(header.spec).map_err(|e| bad(e.to_string()))?;
    model.input_mean = header.input_mean;
    model.input_std = header.input_std;
    let mut expected = 0;
    visit_values(&mut model, |_| expected += 1);
    if expected != count {
        return Err(bad(format!(
            "checkpoint holds {count} values, architecture needs {expected}"
        )));
    }
    let data = cur.take(4 * count).ok_or_else(truncated)?;
    if !cur.rest.is_empty() {
        return Err(bad("trailing bytes after checkpoint".into()));
    }
    let mut chunks = data.chunks_exact(4);
    visit_values(&mut model, |v| {
        *v = f32::from_le_bytes(chunks.next().unwrap().try_into().unwrap()) as f64;
    });
    Ok(model)
}
