use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};

use super::DualSolution;
use crate::error::{Error, Result};
use crate::store::binio::{checked_u32, write_file, Reader, Writer};
use crate::store::FeatureCache;

pub const MODEL_MAGIC: &[u8; 4] = b"DXDA";
const MODEL_VERSION: u32 = 1;

/// The fitted surrogate in its sparse, support-vector-only form.
///
/// This is everything needed to attribute new test points: the lambda rows
/// and feature vectors of the support vectors. The weight matrix is derived
/// from them, so `logit_c = sum_sv tau_sv` holds by construction.
///
/// `.dxda` layout (little-endian):
///
/// ```text
/// "DXDA" | u32 version=1 | f64 C | u32 K | u32 d | u64 n_sv
/// per SV: u64 original index | K x f32 lambda | d x f32 features
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateModel {
    c: f64,
    support: Vec<usize>,
    /// n_sv x K.
    lambda: Array2<f64>,
    /// n_sv x d.
    features: Array2<f64>,
    /// K x d.
    weights: Array2<f64>,
}

impl SurrogateModel {
    pub fn new(c: f64, support: Vec<usize>, lambda: Array2<f64>, features: Array2<f64>) -> Result<Self> {
        if support.len() != lambda.nrows() || support.len() != features.nrows() {
            return Err(Error::Dimension(format!(
                "{} support indices, {} lambda rows, {} feature rows",
                support.len(),
                lambda.nrows(),
                features.nrows()
            )));
        }
        if lambda.ncols() < 2 {
            return Err(Error::Unsupported("surrogate needs at least 2 classes".into()));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("support indices must be strictly increasing".into()));
        }
        if lambda.iter().chain(features.iter()).any(|v| !v.is_finite()) || !c.is_finite() {
            return Err(Error::Validation("non-finite surrogate parameters".into()));
        }
        let weights = lambda.t().dot(&features);
        Ok(SurrogateModel { c, support, lambda, features, weights })
    }

    /// Extracts the support vectors of `solution` from the training cache.
    pub fn from_solution(solution: &DualSolution, train: &FeatureCache) -> Result<Self> {
        if train.n_samples() != solution.n_samples() {
            return Err(Error::Dimension(format!(
                "solution has {} rows, training cache {}",
                solution.n_samples(),
                train.n_samples()
            )));
        }
        let idx = &solution.support_indices;
        let lambda = solution.lambda.select(Axis(0), idx);
        let features = train.features().select(Axis(0), idx).mapv(f64::from);
        SurrogateModel::new(solution.c, idx.clone(), lambda, features)
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn n_classes(&self) -> usize {
        self.lambda.ncols()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn n_support(&self) -> usize {
        self.support.len()
    }

    /// Original training indices of the support vectors, ascending.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn lambda(&self) -> &Array2<f64> {
        &self.lambda
    }

    pub fn support_features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// `W f`.
    pub fn logits(&self, f: ArrayView1<'_, f64>) -> Array1<f64> {
        self.weights.dot(&f)
    }

    /// Predicted class, ties broken towards the lower index.
    pub fn predict(&self, f: ArrayView1<'_, f64>) -> usize {
        argmax(self.logits(f).iter().copied())
    }

    /// Position of training index `i` among the support vectors.
    pub fn position(&self, i: usize) -> Option<usize> {
        self.support.binary_search(&i).ok()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (n_sv, k) = self.lambda.dim();
        let d = self.feature_dim();
        let mut w = Writer::with_capacity(32 + n_sv * (8 + 4 * (k + d)));
        w.bytes(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        w.f64(self.c);
        w.u32(checked_u32(k, "n_classes")?);
        w.u32(checked_u32(d, "feature_dim")?);
        w.u64(n_sv as u64);
        for (s, (l, f)) in self.support.iter().zip(self.lambda.outer_iter().zip(self.features.outer_iter())) {
            w.u64(*s as u64);
            for &v in l {
                w.f32(v as f32);
            }
            for &v in f {
                w.f32(v as f32);
            }
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "surrogate model");
        r.magic(MODEL_MAGIC)?;
        r.version(MODEL_VERSION)?;
        let c = r.f64()?;
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        let n_sv = usize::try_from(r.u64()?).map_err(|_| Error::Corrupt("n_sv exceeds address space".into()))?;
        let mut support = Vec::with_capacity(n_sv.min(1 << 20));
        let mut lambda = Vec::with_capacity((n_sv * k).min(1 << 24));
        let mut features = Vec::with_capacity((n_sv * d).min(1 << 24));
        for _ in 0..n_sv {
            support.push(r.u64()? as usize);
            lambda.extend(r.f32_vec(k)?.into_iter().map(f64::from));
            features.extend(r.f32_vec(d)?.into_iter().map(f64::from));
        }
        r.finish()?;
        let lambda = Array2::from_shape_vec((n_sv, k), lambda).map_err(|e| Error::Corrupt(e.to_string()))?;
        let features = Array2::from_shape_vec((n_sv, d), features).map_err(|e| Error::Corrupt(e.to_string()))?;
        SurrogateModel::new(c, support, lambda, features)
    }

    /// Same model with parameters rounded to the f32 precision of the file format.
    pub fn rounded(&self) -> Result<Self> {
        SurrogateModel::from_bytes(&self.to_bytes()?)
    }
}

pub fn save_model(model: &SurrogateModel, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &model.to_bytes()?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<SurrogateModel> {
    let bytes = std::fs::read(path.as_ref())?;
    SurrogateModel::from_bytes(&bytes)
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::svm::{solve, SolverOptions};
    use ndarray::array;

    #[test]
    fn model_file_stores_only_support_vectors() {
        let cache = crate::synth::gaussian_blobs(&crate::synth::BlobSpec { n: 60, dim: 3, classes: 3, separation: 8.0, ..Default::default() }, 2);
        let sol = solve(&cache, &SolverOptions::with_c(1.0)).unwrap();
        let model = SurrogateModel::from_solution(&sol, &cache).unwrap();
        assert!(model.n_support() < cache.n_samples());
        let bytes = model.to_bytes().unwrap();
        assert_eq!(bytes.len(), 32 + model.n_support() * (8 + 4 * (3 + 3)));
        let back = SurrogateModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.support(), model.support());
        assert_eq!(back.to_bytes().unwrap(), bytes);
        for (a, b) in back.weights().iter().zip(sol.weights.iter()) {
            assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let m = SurrogateModel::new(1.0, vec![0], array![[0.5, -0.5]], array![[1.0]]).unwrap();
        let mut b = m.to_bytes().unwrap();
        assert!(matches!(SurrogateModel::from_bytes(&b[..b.len() - 1]), Err(Error::Corrupt(_))));
        b[0] = b'X';
        assert!(matches!(SurrogateModel::from_bytes(&b), Err(Error::Format(_))));
    }
}
