//! Feature and gradient caches and their on-disk formats.
//!
//! A [`FeatureCache`] holds the penultimate-layer activations of a dataset
//! together with labels and, optionally, the logits of the original model
//! head. It is immutable once built and can be shared across threads.
//!
//! `.dxfc` layout (little-endian):
//!
//! ```text
//! "DXFC" | u32 version=1 | u64 N | u32 d | u32 K | u8 bias_flag | u8 has_logits | 2 reserved
//! N x u32 labels | N x d f32 features (row-major) | [N x K f32 logits]
//! ```
//!
//! `.dxgc` layout:
//!
//! ```text
//! "DXGC" | u32 version=1 | u64 N | u32 D | u32 checkpoint_id | f32 step_size | u64 projection_seed
//! N x D f32 grads (row-major)
//! ```

pub(crate) mod binio;

use std::collections::HashSet;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};
use binio::{checked_u32, write_file, Reader, Writer};

pub const CACHE_MAGIC: &[u8; 4] = b"DXFC";
pub const GRADIENT_MAGIC: &[u8; 4] = b"DXGC";
pub const FORMAT_VERSION: u32 = 1;

/// Size in bytes of the fixed `.dxfc` header.
pub const CACHE_HEADER_LEN: usize = 28;
/// Size in bytes of the fixed `.dxgc` header.
pub const GRADIENT_HEADER_LEN: usize = 36;

/// Penultimate-layer features of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    features: Array2<f32>,
    labels: Vec<usize>,
    n_classes: usize,
    bias_augmented: bool,
    logits: Option<Array2<f32>>,
}

impl FeatureCache {
    /// Builds a validated cache.
    pub fn new(
        features: Array2<f32>,
        labels: Vec<usize>,
        n_classes: usize,
        logits: Option<Array2<f32>>,
    ) -> Result<Self> {
        Self::with_bias_flag(features, labels, n_classes, false, logits)
    }

    pub(crate) fn with_bias_flag(
        features: Array2<f32>,
        labels: Vec<usize>,
        n_classes: usize,
        bias_augmented: bool,
        logits: Option<Array2<f32>>,
    ) -> Result<Self> {
        let cache = FeatureCache {
            features: features.as_standard_layout().into_owned(),
            labels,
            n_classes,
            bias_augmented,
            logits: logits.map(|l| l.as_standard_layout().into_owned()),
        };
        cache.validate()?;
        Ok(cache)
    }

    fn validate(&self) -> Result<()> {
        let n = self.features.nrows();
        if self.labels.len() != n {
            return Err(Error::Validation(format!(
                "{} labels for {} feature rows",
                self.labels.len(),
                n
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= self.n_classes) {
            return Err(Error::Validation(format!(
                "label {bad} out of range for {} classes",
                self.n_classes
            )));
        }
        if let Some(pos) = self.features.iter().position(|v| !v.is_finite()) {
            let d = self.features.ncols().max(1);
            return Err(Error::Validation(format!(
                "non-finite feature at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        if self.bias_augmented {
            let d = self.features.ncols();
            if d == 0 || self.features.column(d - 1).iter().any(|&v| v != 1.0) {
                return Err(Error::Validation(
                    "bias flag set but last feature column is not identically 1".into(),
                ));
            }
        }
        if let Some(logits) = &self.logits {
            if logits.dim() != (n, self.n_classes) {
                return Err(Error::Validation(format!(
                    "logits shape {:?}, expected ({n}, {})",
                    logits.dim(),
                    self.n_classes
                )));
            }
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(Error::Validation("non-finite logits".into()));
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn bias_augmented(&self) -> bool {
        self.bias_augmented
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &Array2<f32> {
        &self.features
    }

    pub fn logits(&self) -> Option<&Array2<f32>> {
        self.logits.as_ref()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.features.row(i)
    }

    /// Row `i` widened to f64.
    pub fn row_f64(&self, i: usize) -> Array1<f64> {
        self.features.row(i).mapv(f64::from)
    }

    /// Full feature matrix widened to f64.
    pub fn features_f64(&self) -> Array2<f64> {
        self.features.mapv(f64::from)
    }

    /// Appends a constant-1 column so that every class weight gains a bias.
    pub fn augment_bias(&self) -> Result<FeatureCache> {
        if self.bias_augmented {
            return Err(Error::State("cache is already bias-augmented".into()));
        }
        let (n, d) = self.features.dim();
        let mut features = Array2::<f32>::ones((n, d + 1));
        features.slice_mut(ndarray::s![.., ..d]).assign(&self.features);
        FeatureCache::with_bias_flag(features, self.labels.clone(), self.n_classes, true, self.logits.clone())
    }

    /// Selects rows in the given order. Indices must be unique and in range.
    pub fn subset(&self, indices: &[usize]) -> Result<FeatureCache> {
        let n = self.n_samples();
        let mut seen = HashSet::with_capacity(indices.len());
        for &i in indices {
            if i >= n {
                return Err(Error::OutOfRange { index: i, len: n });
            }
            if !seen.insert(i) {
                return Err(Error::Validation(format!("duplicate index {i} in subset")));
            }
        }
        let features = self.features.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let logits = self.logits.as_ref().map(|l| l.select(Axis(0), indices));
        Ok(FeatureCache {
            features,
            labels,
            n_classes: self.n_classes,
            bias_augmented: self.bias_augmented,
            logits,
        })
    }

    /// Returns a copy with `labels` replaced.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<FeatureCache> {
        FeatureCache::with_bias_flag(
            self.features.clone(),
            labels,
            self.n_classes,
            self.bias_augmented,
            self.logits.clone(),
        )
    }

    /// Returns a copy with `features` replaced; labels and logits are kept.
    pub fn with_features(&self, features: Array2<f32>) -> Result<FeatureCache> {
        FeatureCache::with_bias_flag(
            features,
            self.labels.clone(),
            self.n_classes,
            self.bias_augmented,
            self.logits.clone(),
        )
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (n, d) = self.features.dim();
        let k = self.n_classes;
        let logits_len = if self.logits.is_some() { n * k } else { 0 };
        let mut w = Writer::with_capacity(CACHE_HEADER_LEN + 4 * (n + n * d + logits_len));
        w.bytes(CACHE_MAGIC);
        w.u32(FORMAT_VERSION);
        w.u64(n as u64);
        w.u32(checked_u32(d, "feature_dim")?);
        w.u32(checked_u32(k, "n_classes")?);
        w.u8(self.bias_augmented as u8);
        w.u8(self.logits.is_some() as u8);
        w.bytes(&[0, 0]);
        for &y in &self.labels {
            w.u32(checked_u32(y, "label")?);
        }
        w.f32_slice(self.features.iter());
        if let Some(logits) = &self.logits {
            w.f32_slice(logits.iter());
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<FeatureCache> {
        let mut r = Reader::new(bytes, "feature cache");
        r.magic(CACHE_MAGIC)?;
        r.version(FORMAT_VERSION)?;
        let n = usize::try_from(r.u64()?).map_err(|_| Error::Corrupt("N exceeds address space".into()))?;
        let d = r.u32()? as usize;
        let k = r.u32()? as usize;
        let bias_flag = r.u8()?;
        let has_logits = r.u8()?;
        r.skip(2)?;
        if bias_flag > 1 || has_logits > 1 {
            return Err(Error::Format(format!(
                "feature cache: flag bytes must be 0 or 1 (bias={bias_flag}, logits={has_logits})"
            )));
        }
        let labels = r.u32_vec(n)?.into_iter().map(|y| y as usize).collect();
        let nd = n.checked_mul(d).ok_or_else(|| Error::Corrupt("N*d overflows".into()))?;
        let features = Array2::from_shape_vec((n, d), r.f32_vec(nd)?)
            .map_err(|e| Error::Corrupt(e.to_string()))?;
        let logits = if has_logits == 1 {
            let nk = n.checked_mul(k).ok_or_else(|| Error::Corrupt("N*K overflows".into()))?;
            Some(
                Array2::from_shape_vec((n, k), r.f32_vec(nk)?)
                    .map_err(|e| Error::Corrupt(e.to_string()))?,
            )
        } else {
            None
        };
        r.finish()?;
        FeatureCache::with_bias_flag(features, labels, k, bias_flag == 1, logits)
    }
}

/// Reads a `.dxfc` file.
pub fn load_cache(path: impl AsRef<Path>) -> Result<FeatureCache> {
    let bytes = std::fs::read(path.as_ref())?;
    FeatureCache::from_bytes(&bytes)
}

/// Writes a `.dxfc` file, replacing any existing file at `path`.
pub fn save_cache(cache: &FeatureCache, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &cache.to_bytes()?)
}

/// Per-sample projected gradients recorded at one training checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientCache {
    pub checkpoint_id: u32,
    /// Learning rate in effect at this checkpoint.
    pub step_size: f32,
    pub projection_seed: u64,
    grads: Array2<f32>,
}

impl GradientCache {
    pub fn new(grads: Array2<f32>, checkpoint_id: u32, step_size: f32, projection_seed: u64) -> Result<Self> {
        if grads.ncols() == 0 {
            return Err(Error::Validation("gradient cache needs proj_dim > 0".into()));
        }
        if grads.iter().any(|v| !v.is_finite()) || !step_size.is_finite() {
            return Err(Error::Validation("non-finite gradient cache entry".into()));
        }
        Ok(GradientCache {
            checkpoint_id,
            step_size,
            projection_seed,
            grads: grads.as_standard_layout().into_owned(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.grads.nrows()
    }

    pub fn proj_dim(&self) -> usize {
        self.grads.ncols()
    }

    pub fn grads(&self) -> &Array2<f32> {
        &self.grads
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (n, dim) = self.grads.dim();
        let mut w = Writer::with_capacity(GRADIENT_HEADER_LEN + 4 * n * dim);
        w.bytes(GRADIENT_MAGIC);
        w.u32(FORMAT_VERSION);
        w.u64(n as u64);
        w.u32(checked_u32(dim, "proj_dim")?);
        w.u32(self.checkpoint_id);
        w.f32(self.step_size);
        w.u64(self.projection_seed);
        w.f32_slice(self.grads.iter());
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<GradientCache> {
        let mut r = Reader::new(bytes, "gradient cache");
        r.magic(GRADIENT_MAGIC)?;
        r.version(FORMAT_VERSION)?;
        let n = usize::try_from(r.u64()?).map_err(|_| Error::Corrupt("N exceeds address space".into()))?;
        let dim = r.u32()? as usize;
        let checkpoint_id = r.u32()?;
        let step_size = r.f32()?;
        let projection_seed = r.u64()?;
        let len = n.checked_mul(dim).ok_or_else(|| Error::Corrupt("N*D overflows".into()))?;
        let grads = Array2::from_shape_vec((n, dim), r.f32_vec(len)?)
            .map_err(|e| Error::Corrupt(e.to_string()))?;
        r.finish()?;
        GradientCache::new(grads, checkpoint_id, step_size, projection_seed)
    }
}

pub fn load_gradients(path: impl AsRef<Path>) -> Result<GradientCache> {
    let bytes = std::fs::read(path.as_ref())?;
    GradientCache::from_bytes(&bytes)
}

pub fn save_gradients(cache: &GradientCache, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &cache.to_bytes()?)
}
