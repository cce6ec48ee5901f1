//! Seeded Gaussian random projections of last-layer gradients.
//!
//! The projection matrix is never stored; it is regenerated from its seed:
//! a SplitMix64 stream seeded with the raw seed yields 64-bit words, each pair
//! `(a, b)` becomes `u1 = ((a >> 11) + 1) 2^-53`, `u2 = (b >> 11) 2^-53` and the
//! Box-Muller pair `sqrt(-2 ln u1) (cos 2πu2, sin 2πu2)`. Entries are filled
//! row-major (D rows, one per output coordinate) and scaled by `1/sqrt(D)`, so
//! each has variance `1/D`.

use ndarray::{Array1, Array2};
use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

use super::{check_head, softmax_rows};
use crate::error::{Error, Result};
use crate::store::{FeatureCache, GradientCache};

pub const DEFAULT_TRACIN_PROJ_DIM: usize = 128;

const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

/// D x `in_dim` matrix with i.i.d. N(0, 1/D) entries.
pub fn gaussian_projection(out_dim: usize, in_dim: usize, seed: u64) -> Result<Array2<f64>> {
    if out_dim == 0 {
        return Err(Error::Validation("projection dimension must be positive".into()));
    }
    let mut rng = SplitMix64::from_seed(seed.to_le_bytes());
    let total = out_dim * in_dim;
    let scale = 1.0 / (out_dim as f64).sqrt();
    let mut data = Vec::with_capacity(total + 1);
    while data.len() < total {
        let u1 = ((rng.next_u64() >> 11) + 1) as f64 * TWO_POW_M53;
        let u2 = (rng.next_u64() >> 11) as f64 * TWO_POW_M53;
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        data.push(r * theta.cos() * scale);
        data.push(r * theta.sin() * scale);
    }
    data.truncate(total);
    Ok(Array2::from_shape_vec((out_dim, in_dim), data).expect("shape matches length"))
}

/// N x (K d) matrix of flattened gradients `(p_i - e_{c_i}) ⊗ f_i`, index `k d + j`.
pub fn last_layer_gradients(weights: &Array2<f64>, cache: &FeatureCache, classes: &[usize]) -> Result<Array2<f64>> {
    check_head(weights, cache)?;
    if classes.len() != cache.n_samples() {
        return Err(Error::Dimension(format!("{} classes for {} samples", classes.len(), cache.n_samples())));
    }
    let (k, d) = weights.dim();
    let f = cache.features_f64();
    let p = softmax_rows(weights, &f);
    let mut g = Array2::zeros((cache.n_samples(), k * d));
    for (i, &c) in classes.iter().enumerate() {
        if c >= k {
            return Err(Error::OutOfRange { index: c, len: k });
        }
        let mut r: Array1<f64> = p.row(i).to_owned();
        r[c] -= 1.0;
        for a in 0..k {
            for j in 0..d {
                g[[i, a * d + j]] = r[a] * f[[i, j]];
            }
        }
    }
    Ok(g)
}

/// Projected per-sample gradients of one checkpoint, ready to be stored.
pub fn gradient_cache(
    weights: &Array2<f64>,
    cache: &FeatureCache,
    classes: &[usize],
    proj_dim: usize,
    seed: u64,
    checkpoint_id: u32,
    step_size: f32,
) -> Result<GradientCache> {
    let g = last_layer_gradients(weights, cache, classes)?;
    let p = gaussian_projection(proj_dim, g.ncols(), seed)?;
    let projected = g.dot(&p.t()).mapv(|v| v as f32);
    GradientCache::new(projected, checkpoint_id, step_size, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn splitmix_reference_stream() {
        // First outputs of SplitMix64 from state 0 (reference implementation).
        let mut rng = SplitMix64::from_seed(0u64.to_le_bytes());
        assert_eq!(rng.next_u64(), 0xe220a8397b1dcdaf);
        assert_eq!(rng.next_u64(), 0x6e789e6aa1b965f4);
    }

    #[test]
    fn projection_statistics_and_determinism() {
        let p = gaussian_projection(256, 64, 9).unwrap();
        assert_eq!(p, gaussian_projection(256, 64, 9).unwrap());
        assert_ne!(p, gaussian_projection(256, 64, 10).unwrap());
        let n = p.len() as f64;
        let mean = p.sum() / n;
        let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 5.0 * (1.0 / 256.0 / n).sqrt());
        assert!((var * 256.0 - 1.0).abs() < 0.05, "{}", var * 256.0);
    }

    #[test]
    fn projected_dot_products_are_preserved_roughly() {
        let a = crate::synth::uniform_matrix(20, 300, 1);
        let p = gaussian_projection(2048, 300, 4).unwrap();
        let pa = a.dot(&p.t());
        for i in 0..19 {
            let (x, y) = (a.row(i), a.row(i + 1));
            let exact = x.dot(&y);
            let approx = pa.row(i).dot(&pa.row(i + 1));
            let bound = 3.0 / (2048f64).sqrt() * (x.dot(&x) * y.dot(&y)).sqrt();
            assert!((approx - exact).abs() <= bound, "{approx} vs {exact}");
        }
    }

    #[test]
    fn gradient_layout() {
        let cache = FeatureCache::new(array![[2.0, -1.0]], vec![1], 2, None).unwrap();
        let g = last_layer_gradients(&Array2::zeros((2, 2)), &cache, &[1]).unwrap();
        assert_eq!(g, array![[1.0, -0.5, -1.0, 0.5]]);
    }
}
