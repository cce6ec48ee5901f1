//! Reference attribution methods computed on the classifier head: Representer
//! Points, GradDot, GradCos, TracIn, exact last-layer Influence Functions and
//! single-model TRAK, plus post-hoc sparsification of surrogate coefficients.
//!
//! Last-layer gradients of cross-entropy factor as `(p - e_y) ⊗ f`, which is
//! what every gradient method here exploits.

mod grads;
mod head;
mod influence;
mod projection;
mod sparsify;
mod tracin;
mod trak;

pub use grads::{
    grad_cos, grad_cos_matrix, grad_dot, grad_dot_matrix, representer_attribution, representer_matrix, GradCos,
    LastLayerGrads,
};
pub(crate) use head::mean_cross_entropy;
pub use head::{retrain_head, HeadModel, LossKind, RetrainOptions};
pub use influence::{influence_last_layer, last_layer_hessian, HessianMode};
pub use projection::{gaussian_projection, gradient_cache, last_layer_gradients, DEFAULT_TRACIN_PROJ_DIM};
pub use sparsify::{representer_coefficients, sparsify_coefficients};
pub use tracin::tracin;
pub use trak::{trak_single_model, trak_with_projection, Projection, TrakOutput, DEFAULT_TRAK_PROJ_DIM, TRAK_DAMPING};

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;

use crate::attribution::{AttributionMatrix, TargetClasses};
use crate::error::{Error, Result};
use crate::store::FeatureCache;

/// Numerically stable softmax.
pub fn softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let m = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let e = logits.mapv(|z| (z - m).exp());
    let s = e.sum();
    e / s
}

/// Row-wise softmax of `features · weightsᵀ`.
pub fn softmax_rows(weights: &Array2<f64>, features: &Array2<f64>) -> Array2<f64> {
    let mut p = features.dot(&weights.t());
    for mut row in p.outer_iter_mut() {
        let s = softmax(row.view());
        row.assign(&s);
    }
    p
}

/// Resolves target classes against a head; `Predicted` uses the head's argmax.
pub fn resolve_targets(targets: &TargetClasses, weights: &Array2<f64>, test: &FeatureCache) -> Result<Vec<usize>> {
    let k = weights.nrows();
    let classes = match targets {
        TargetClasses::Predicted => {
            let logits = test.features_f64().dot(&weights.t());
            logits.outer_iter().map(|r| crate::svm::argmax(r.iter().copied())).collect()
        }
        TargetClasses::Fixed(c) => vec![*c; test.n_samples()],
        TargetClasses::PerSample(v) => {
            if v.len() != test.n_samples() {
                return Err(Error::Dimension(format!("{} target classes for {} test points", v.len(), test.n_samples())));
            }
            v.clone()
        }
    };
    if let Some(&c) = classes.iter().find(|&&c| c >= k) {
        return Err(Error::OutOfRange { index: c, len: k });
    }
    Ok(classes)
}

pub(crate) fn check_head(weights: &Array2<f64>, cache: &FeatureCache) -> Result<()> {
    if weights.ncols() != cache.feature_dim() {
        return Err(Error::Dimension(format!(
            "head expects dimension {}, cache has {}",
            weights.ncols(),
            cache.feature_dim()
        )));
    }
    if weights.nrows() != cache.n_classes() {
        return Err(Error::Dimension(format!("head has {} classes, cache {}", weights.nrows(), cache.n_classes())));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Validation("head weights must be finite".into()));
    }
    Ok(())
}

/// Runs a per-test-row attribution in parallel and assembles the matrix.
pub(crate) fn batch<F>(test: &FeatureCache, n_train: usize, classes: Vec<usize>, tag: &str, row: F) -> Result<AttributionMatrix>
where
    F: Fn(ArrayView1<'_, f64>, usize) -> Result<Array1<f64>> + Sync,
{
    let feats = test.features_f64();
    let rows: Vec<Array1<f64>> = (0..test.n_samples())
        .into_par_iter()
        .map(|t| row(feats.row(t), classes[t]))
        .collect::<Result<_>>()?;
    let mut scores = Array2::zeros((rows.len(), n_train));
    for (t, r) in rows.into_iter().enumerate() {
        scores.row_mut(t).assign(&r);
    }
    AttributionMatrix::new((0..test.n_samples() as u64).collect(), classes, scores, tag)
}
