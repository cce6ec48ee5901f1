use nalgebra::{Cholesky, DMatrix};
use ndarray::Array2;
use serde::Serialize;

use super::{check_head, gaussian_projection, softmax_rows};
use crate::error::{Error, Result};
use crate::store::FeatureCache;

pub const DEFAULT_TRAK_PROJ_DIM: usize = 2048;
/// Ridge added to `GᵀG` before inversion.
pub const TRAK_DAMPING: f64 = 1e-8;
const P_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Projection {
    Gaussian { dim: usize, seed: u64 },
    /// No projection (an orthonormal projection onto the full gradient space).
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrakOutput {
    /// T x N.
    pub scores: Array2<f64>,
    /// Training examples whose true-label probability was clamped away from 0 or 1.
    pub clamped: usize,
}

/// Single-model TRAK with a seeded Gaussian projection of dimension `proj_dim`.
pub fn trak_single_model(
    train: &FeatureCache,
    test: &FeatureCache,
    targets: &[usize],
    weights: &Array2<f64>,
    proj_dim: usize,
    seed: u64,
) -> Result<TrakOutput> {
    trak_with_projection(train, test, targets, weights, Projection::Gaussian { dim: proj_dim, seed })
}

/// `τ[t, i] = φ_tᵀ (GᵀG + δI)⁻¹ g_i Q_ii` in projected space, where
/// `g_i = ∇_W log(p_i / (1 - p_i)) = (e_{y_i} - p_i) ⊗ f_i / (1 - p_i)` at the
/// true-label probability `p_i`, `Q_ii = 1 - p_i` and `φ_t = e_c ⊗ f_t` is the
/// gradient of the target logit.
pub fn trak_with_projection(
    train: &FeatureCache,
    test: &FeatureCache,
    targets: &[usize],
    weights: &Array2<f64>,
    projection: Projection,
) -> Result<TrakOutput> {
    check_head(weights, train)?;
    check_head(weights, test)?;
    if targets.len() != test.n_samples() {
        return Err(Error::Dimension(format!("{} targets for {} test points", targets.len(), test.n_samples())));
    }
    let (k, d) = weights.dim();
    let n = train.n_samples();
    let f = train.features_f64();
    let p = softmax_rows(weights, &f);
    let mut clamped = 0;
    let mut g = Array2::<f64>::zeros((n, k * d));
    let mut q = vec![0.0; n];
    for (i, &y) in train.labels().iter().enumerate() {
        let raw = p[[i, y]];
        let py = raw.clamp(P_CLAMP, 1.0 - P_CLAMP);
        if py != raw {
            clamped += 1;
        }
        q[i] = 1.0 - py;
        for a in 0..k {
            let r = (if a == y { 1.0 } else { 0.0 } - p[[i, a]]) / (1.0 - py);
            for j in 0..d {
                g[[i, a * d + j]] = r * f[[i, j]];
            }
        }
    }
    let ft = test.features_f64();
    let mut phi = Array2::<f64>::zeros((test.n_samples(), k * d));
    for (t, &c) in targets.iter().enumerate() {
        if c >= k {
            return Err(Error::OutOfRange { index: c, len: k });
        }
        for j in 0..d {
            phi[[t, c * d + j]] = ft[[t, j]];
        }
    }
    let (g, phi) = match projection {
        Projection::Identity => (g, phi),
        Projection::Gaussian { dim, seed } => {
            let pm = gaussian_projection(dim, k * d, seed)?;
            (g.dot(&pm.t()), phi.dot(&pm.t()))
        }
    };
    let dim = g.ncols();
    let to_na = |a: &Array2<f64>| DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[[r, c]]);
    let gm = to_na(&g);
    let phim = to_na(&phi);
    let failed = || Error::Numerical("TRAK kernel matrix is not positive definite".into());
    // (GᵀG + δI)⁻¹ Gᵀ = Gᵀ (G Gᵀ + δI)⁻¹; factor whichever side is smaller.
    let raw = if dim <= n {
        let m = gm.transpose() * &gm + DMatrix::identity(dim, dim) * TRAK_DAMPING;
        let x = Cholesky::new(m).ok_or_else(failed)?.solve(&gm.transpose());
        phim * x
    } else {
        let m = &gm * gm.transpose() + DMatrix::identity(n, n) * TRAK_DAMPING;
        let kinv_rhs = Cholesky::new(m).ok_or_else(failed)?.solve(&(&gm * phim.transpose()));
        kinv_rhs.transpose()
    };
    let scores = Array2::from_shape_fn((test.n_samples(), n), |(t, i)| raw[(t, i)] * q[i]);
    Ok(TrakOutput { scores, clamped })
}
