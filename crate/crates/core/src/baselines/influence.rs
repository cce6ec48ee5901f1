use nalgebra::{Cholesky, DMatrix};
use ndarray::Array2;
use serde::Serialize;

use super::{check_head, last_layer_gradients, softmax_rows};
use crate::error::{Error, Result};
use crate::store::FeatureCache;

/// Which curvature matrix to invert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum HessianMode {
    /// Exact Hessian of the summed training cross-entropy in the head weights.
    Exact,
    /// `H = I`; reduces influence to negative GradDot (up to damping).
    Identity,
}

/// `H = Σ_i (diag(p_i) - p_i p_iᵀ) ⊗ f_i f_iᵀ`, indexed like the flattened gradients.
pub fn last_layer_hessian(weights: &Array2<f64>, train: &FeatureCache) -> Result<Array2<f64>> {
    check_head(weights, train)?;
    let (k, d) = weights.dim();
    let f = train.features_f64();
    let p = softmax_rows(weights, &f);
    let mut h = Array2::<f64>::zeros((k * d, k * d));
    for (pi, fi) in p.outer_iter().zip(f.outer_iter()) {
        let ff = {
            let col = fi.view().insert_axis(ndarray::Axis(1));
            col.dot(&col.t())
        };
        for a in 0..k {
            for b in 0..k {
                let s = if a == b { pi[a] - pi[a] * pi[b] } else { -pi[a] * pi[b] };
                if s == 0.0 {
                    continue;
                }
                let mut block = h.slice_mut(ndarray::s![a * d..(a + 1) * d, b * d..(b + 1) * d]);
                block.scaled_add(s, &ff);
            }
        }
    }
    Ok(h)
}

/// `τ[t, i] = -g_testᵀ (H + damping I)⁻¹ g_i` over the head weights, with
/// `g_test` taken at `targets[t]` and `g_i` at the training label.
pub fn influence_last_layer(
    train: &FeatureCache,
    test: &FeatureCache,
    targets: &[usize],
    weights: &Array2<f64>,
    damping: f64,
    mode: HessianMode,
) -> Result<Array2<f64>> {
    if !(damping >= 0.0 && damping.is_finite()) {
        return Err(Error::Validation(format!("damping must be nonnegative, got {damping}")));
    }
    let g_train = last_layer_gradients(weights, train, train.labels())?;
    let g_test = last_layer_gradients(weights, test, targets)?;
    let dim = g_train.ncols();
    let mut h = match mode {
        HessianMode::Exact => last_layer_hessian(weights, train)?,
        HessianMode::Identity => Array2::eye(dim),
    };
    for j in 0..dim {
        h[[j, j]] += damping;
    }
    let hm = DMatrix::from_fn(dim, dim, |r, c| h[[r, c]]);
    let singular = || {
        Error::Numerical("Hessian is singular; rerun with damping > 0".into())
    };
    let chol = Cholesky::new(hm).ok_or_else(singular)?;
    let l = chol.l_dirty();
    let diag: Vec<f64> = (0..dim).map(|j| l[(j, j)]).collect();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo > 0.0) || (lo / hi).powi(2) < 1e-13 {
        return Err(singular());
    }
    let rhs = DMatrix::from_fn(dim, g_train.nrows(), |r, c| g_train[[c, r]]);
    let x = chol.solve(&rhs);
    let mut out = Array2::zeros((g_test.nrows(), g_train.nrows()));
    for t in 0..g_test.nrows() {
        for i in 0..g_train.nrows() {
            let mut s = 0.0;
            for j in 0..dim {
                s += g_test[[t, j]] * x[(j, i)];
            }
            out[[t, i]] = -s;
        }
    }
    Ok(out)
}
