use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::retrain::RetrainConfig;
use super::spearman;
use crate::attribution::AttributionMatrix;
use crate::error::{Error, Result};
use crate::store::FeatureCache;

#[derive(Debug, Clone, Serialize)]
pub struct LdsOptions {
    pub subsets: usize,
    pub fraction: f64,
    pub seed: u64,
    pub retrain: RetrainConfig,
}

impl Default for LdsOptions {
    fn default() -> Self {
        LdsOptions { subsets: 32, fraction: 0.5, seed: 0, retrain: RetrainConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdsResult {
    pub score: f64,
    /// Test rows left out because one side of the correlation was constant.
    pub skipped: usize,
}

/// Mean over test rows of the Spearman correlation between the predicted
/// subset outputs `Σ_{i ∈ S_j} τ_i` and the actual outputs `outputs[j, t]`.
pub fn lds(attr: &AttributionMatrix, subsets: &[Vec<usize>], outputs: &Array2<f64>) -> Result<LdsResult> {
    let m = subsets.len();
    if m < 3 {
        return Err(Error::Validation(format!("LDS needs at least 3 subsets, got {m}")));
    }
    if outputs.dim() != (m, attr.n_test()) {
        return Err(Error::Dimension(format!("outputs are {:?}, expected ({m}, {})", outputs.dim(), attr.n_test())));
    }
    if let Some(&i) = subsets.iter().flatten().find(|&&i| i >= attr.n_train()) {
        return Err(Error::OutOfRange { index: i, len: attr.n_train() });
    }
    let mut total = 0.0;
    let mut used = 0;
    for t in 0..attr.n_test() {
        let row = attr.row(t);
        let predicted: Vec<f64> = subsets.iter().map(|s| s.iter().map(|&i| row[i]).sum()).collect();
        let actual = outputs.column(t).to_vec();
        if let Some(r) = spearman(&predicted, &actual) {
            total += r;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Numerical("every test row had a constant predicted or actual output".into()));
    }
    Ok(LdsResult { score: total / used as f64, skipped: attr.n_test() - used })
}

/// `m` random subsets of `round(fraction N)` indices, subset `j` drawn with seed `seed + j`.
pub fn sample_subsets(n: usize, m: usize, fraction: f64, seed: u64) -> Result<Vec<Vec<usize>>> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Validation(format!("subset fraction must lie in (0, 1), got {fraction}")));
    }
    let size = ((fraction * n as f64).round() as usize).max(1);
    Ok((0..m as u64)
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(j));
            let mut s = sample(&mut rng, n, size).into_vec();
            s.sort_unstable();
            s
        })
        .collect())
}

/// Draws subsets, retrains a head on each and scores the attributions
/// against the retrained logit of each row's target class.
pub fn lds_with_retraining(
    attr: &AttributionMatrix,
    train: &FeatureCache,
    test: &FeatureCache,
    opts: &LdsOptions,
) -> Result<LdsResult> {
    if attr.n_train() != train.n_samples() || attr.n_test() != test.n_samples() {
        return Err(Error::Dimension("attribution matrix does not match the caches".into()));
    }
    let subsets = sample_subsets(train.n_samples(), opts.subsets, opts.fraction, opts.seed)?;
    let ft = test.features_f64();
    let rows: Vec<Vec<f64>> = subsets
        .par_iter()
        .map(|s| {
            let w = opts.retrain.fit(&train.subset(s)?)?;
            Ok(ft.outer_iter().zip(&attr.target_classes).map(|(f, &c)| w.row(c).dot(&f)).collect())
        })
        .collect::<Result<_>>()?;
    let mut outputs = Array2::zeros((subsets.len(), test.n_samples()));
    for (j, r) in rows.into_iter().enumerate() {
        for (t, v) in r.into_iter().enumerate() {
            outputs[[j, t]] = v;
        }
    }
    lds(attr, &subsets, &outputs)
}
