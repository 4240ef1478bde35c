//! Binary params file.
//!
//! Layout (little-endian): 8-byte magic, `u32` version, five `u32` shape
//! fields `(n_features, heads, blocks, head_dim, hidden)`, then per feature
//! slot a `u8` transform tag and `f64` mean and std, then a `u64` parameter
//! count followed by that many `f64` values.

use std::io::{Read, Write};

use super::{FeatureStats, ScorerError, ScorerParams, Shape, TrainedScorer, Transform, NUM_FEATURES};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"SMAPSCR\0";
pub const FORMAT_VERSION: u32 = 1;

fn fmt_err(e: impl std::fmt::Display) -> ScorerError {
    ScorerError::Format(e.to_string())
}

pub fn write_scorer<T: Scalar>(mut w: impl Write, scorer: &TrainedScorer<T>) -> Result<(), ScorerError> {
    let s = scorer.params.shape();
    let mut buf = Vec::with_capacity(64 + scorer.params.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [s.n_features, s.heads, s.blocks, s.head_dim, s.hidden] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for i in 0..NUM_FEATURES {
        buf.push(scorer.stats.transforms[i].tag());
        buf.extend_from_slice(&scorer.stats.means[i].to_le_bytes());
        buf.extend_from_slice(&scorer.stats.stds[i].to_le_bytes());
    }
    buf.extend_from_slice(&(scorer.params.len() as u64).to_le_bytes());
    for v in scorer.params.as_slice() {
        buf.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
    }
    w.write_all(&buf).map_err(fmt_err)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ScorerError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(ScorerError::Format(format!("truncated at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, ScorerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ScorerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, ScorerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_scorer<T: Scalar>(mut r: impl Read) -> Result<TrainedScorer<T>, ScorerError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(fmt_err)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(MAGIC.len())? != MAGIC {
        return Err(ScorerError::Format("bad magic".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(ScorerError::Format(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 5];
    for d in dims.iter_mut() {
        *d = c.u32()? as usize;
    }
    let shape = Shape {
        n_features: dims[0],
        heads: dims[1],
        blocks: dims[2],
        head_dim: dims[3],
        hidden: dims[4],
    };
    if shape.n_features != NUM_FEATURES {
        return Err(ScorerError::Format(format!(
            "expected {NUM_FEATURES} feature slots, file has {}",
            shape.n_features
        )));
    }
    let mut stats = FeatureStats {
        transforms: [Transform::Identity; NUM_FEATURES],
        means: [0.0; NUM_FEATURES],
        stds: [0.0; NUM_FEATURES],
    };
    for i in 0..NUM_FEATURES {
        let tag = c.take(1)?[0];
        stats.transforms[i] =
            Transform::from_tag(tag).ok_or_else(|| ScorerError::Format(format!("unknown transform tag {tag}")))?;
        stats.means[i] = c.f64()?;
        stats.stds[i] = c.f64()?;
    }
    let count = c.u64()? as usize;
    if count != shape.param_count() {
        return Err(ScorerError::Format(format!(
            "header shape implies {} parameters, file declares {count}",
            shape.param_count()
        )));
    }
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let v = c.f64()?;
        data.push(T::from_f64(v).ok_or_else(|| ScorerError::Format("unrepresentable value".into()))?);
    }
    if c.pos != bytes.len() {
        return Err(ScorerError::Format(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(TrainedScorer {
        params: ScorerParams::from_vec(shape, data)?,
        stats,
    })
}
