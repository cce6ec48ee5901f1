//! `.dxat` attribution matrices.
//!
//! ```text
//! "DXAT" | u32 version=1 | u64 T | u64 N | T x u32 target classes | T x u64 test ids | T x N f32 scores
//! ```
//!
//! The method tag is not part of the format; loaded matrices are tagged "unknown".

use std::path::Path;

use ndarray::Array2;

use super::AttributionMatrix;
use crate::error::{Error, Result};
use crate::store::binio::{checked_u32, write_file, Reader, Writer};

pub const ATTRIBUTION_MAGIC: &[u8; 4] = b"DXAT";
const VERSION: u32 = 1;

impl AttributionMatrix {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (t, n) = self.scores.dim();
        let mut w = Writer::with_capacity(24 + t * 12 + 4 * t * n);
        w.bytes(ATTRIBUTION_MAGIC);
        w.u32(VERSION);
        w.u64(t as u64);
        w.u64(n as u64);
        for &c in &self.target_classes {
            w.u32(checked_u32(c, "target class")?);
        }
        for &id in &self.test_ids {
            w.u64(id);
        }
        for &v in self.scores.iter() {
            w.f32(v as f32);
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "attribution matrix");
        r.magic(ATTRIBUTION_MAGIC)?;
        r.version(VERSION)?;
        let t = usize::try_from(r.u64()?).map_err(|_| Error::Corrupt("T exceeds address space".into()))?;
        let n = usize::try_from(r.u64()?).map_err(|_| Error::Corrupt("N exceeds address space".into()))?;
        let classes = r.u32_vec(t)?.into_iter().map(|c| c as usize).collect();
        let ids = r.u64_vec(t)?;
        let len = t.checked_mul(n).ok_or_else(|| Error::Corrupt("T*N overflows".into()))?;
        let scores = r.f32_vec(len)?.into_iter().map(f64::from).collect();
        r.finish()?;
        let scores = Array2::from_shape_vec((t, n), scores).map_err(|e| Error::Corrupt(e.to_string()))?;
        AttributionMatrix::new(ids, classes, scores, "unknown")
    }
}

pub fn save_attributions(attr: &AttributionMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &attr.to_bytes()?)
}

pub fn load_attributions(path: impl AsRef<Path>) -> Result<AttributionMatrix> {
    let bytes = std::fs::read(path.as_ref())?;
    AttributionMatrix::from_bytes(&bytes)
}
