use ndarray::{Array1, Array2, ArrayView1};
use serde::Serialize;

use super::softmax_rows;
use crate::error::{Error, Result};
use crate::store::FeatureCache;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    CrossEntropy,
}

/// A linear softmax classifier head `logits = W f`.
#[derive(Debug, Clone, Serialize)]
pub struct HeadModel {
    /// K x d.
    pub weights: Array2<f64>,
    pub loss_kind: LossKind,
    pub weight_decay: f64,
    pub converged: bool,
    pub final_grad_norm: f64,
    pub iterations: usize,
}

impl HeadModel {
    /// Wraps externally trained weights; they are trusted to be converged.
    pub fn from_weights(weights: Array2<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Validation("head weights must be finite".into()));
        }
        Ok(HeadModel {
            weights,
            loss_kind: LossKind::CrossEntropy,
            weight_decay: 0.0,
            converged: true,
            final_grad_norm: 0.0,
            iterations: 0,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn logits(&self, f: ArrayView1<'_, f64>) -> Array1<f64> {
        self.weights.dot(&f)
    }

    pub fn probabilities(&self, f: ArrayView1<'_, f64>) -> Array1<f64> {
        super::softmax(self.logits(f).view())
    }

    pub fn predict(&self, f: ArrayView1<'_, f64>) -> usize {
        crate::svm::argmax(self.logits(f).iter().copied())
    }

    pub fn accuracy(&self, cache: &FeatureCache) -> f64 {
        let f = cache.features_f64();
        let hits = f.outer_iter().zip(cache.labels()).filter(|(row, &y)| self.predict(*row) == y).count();
        hits as f64 / cache.n_samples().max(1) as f64
    }

    /// Mean cross-entropy on `cache` (no regularisation).
    pub fn mean_loss(&self, cache: &FeatureCache) -> f64 {
        let p = softmax_rows(&self.weights, &cache.features_f64());
        mean_cross_entropy(&p, cache.labels())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RetrainOptions {
    pub weight_decay: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RetrainOptions {
    fn default() -> Self {
        RetrainOptions { weight_decay: 1e-3, tol: 1e-6, max_iters: 5000, seed: 0 }
    }
}

/// Fits `W` minimising mean cross-entropy plus `weight_decay * ||W||²` by
/// full-batch gradient descent from `W = 0`, using Barzilai-Borwein step
/// proposals with Armijo backtracking. Stops when `||∇|| <= tol`; otherwise the
/// returned head is marked unconverged. The seed only tags the run; the
/// procedure itself is deterministic.
pub fn retrain_head(cache: &FeatureCache, opts: &RetrainOptions) -> Result<HeadModel> {
    let lambda = opts.weight_decay;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Validation(format!("weight decay must be positive, got {lambda}")));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Validation("tolerance must be positive".into()));
    }
    let n = cache.n_samples();
    if n == 0 {
        return Err(Error::Validation("cannot retrain a head on an empty cache".into()));
    }
    let f = cache.features_f64();
    let labels = cache.labels();
    let k = cache.n_classes();

    let objective = |w: &Array2<f64>| -> (f64, Array2<f64>) {
        let mut p = softmax_rows(w, &f);
        let loss = mean_cross_entropy(&p, labels) + lambda * w.iter().map(|x| x * x).sum::<f64>();
        for (mut row, &y) in p.outer_iter_mut().zip(labels) {
            row[y] -= 1.0;
        }
        let grad = p.t().dot(&f) / n as f64 + &(w * (2.0 * lambda));
        (loss, grad)
    };

    let max_sq = f.outer_iter().map(|r| r.dot(&r)).fold(0.0, f64::max);
    let mut step = 1.0 / (0.5 * max_sq + 2.0 * lambda);
    let mut w = Array2::<f64>::zeros((k, cache.feature_dim()));
    let (mut loss, mut grad) = objective(&w);
    let mut gnorm = frob(&grad);
    let mut iters = 0;
    while gnorm > opts.tol && iters < opts.max_iters {
        iters += 1;
        let mut t = step;
        let accepted = loop {
            let cand = &w - &(&grad * t);
            let (l, g) = objective(&cand);
            if l <= loss - 1e-4 * t * gnorm * gnorm {
                break Some((cand, l, g));
            }
            if t < 1e-16 {
                break None;
            }
            t *= 0.5;
        };
        // Line search exhausted: no further progress in floating point.
        let Some((w_new, loss_new, grad_new)) = accepted else { break };
        let s = &w_new - &w;
        let yv = &grad_new - &grad;
        let sy: f64 = s.iter().zip(yv.iter()).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy > 0.0 { (ss / sy).clamp(1e-10, 1e10) } else { t };
        w = w_new;
        loss = loss_new;
        grad = grad_new;
        gnorm = frob(&grad);
    }
    Ok(HeadModel {
        weights: w,
        loss_kind: LossKind::CrossEntropy,
        weight_decay: lambda,
        converged: gnorm <= opts.tol,
        final_grad_norm: gnorm,
        iterations: iters,
    })
}

pub(crate) fn mean_cross_entropy(p: &Array2<f64>, labels: &[usize]) -> f64 {
    let n = labels.len().max(1) as f64;
    p.outer_iter().zip(labels).map(|(row, &y)| -row[y].max(1e-300).ln()).sum::<f64>() / n
}

fn frob(a: &Array2<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}
