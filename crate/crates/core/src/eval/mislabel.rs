use ndarray::{Array1, ArrayView1};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::rank_descending;
use crate::error::{Error, Result};
use crate::store::FeatureCache;
use crate::svm::SurrogateModel;

/// Normalised area under the poisoned-discovery curve when training points are
/// inspected in descending order of self-influence: 1 when every poisoned point
/// comes first, 0 when they all come last, 0.5 in expectation for random scores.
pub fn mislabel_auc(self_influence: ArrayView1<'_, f64>, poisoned: &[bool]) -> Result<f64> {
    let n = poisoned.len();
    if self_influence.len() != n {
        return Err(Error::Dimension(format!("{} scores for {n} flags", self_influence.len())));
    }
    let p = poisoned.iter().filter(|&&b| b).count();
    if p == 0 || p == n {
        return Err(Error::Validation("need at least one poisoned and one clean sample".into()));
    }
    let mut found = 0usize;
    let mut area = 0.0;
    let (mut best, mut worst) = (0.0, 0.0);
    for (k, i) in rank_descending(self_influence).into_iter().enumerate() {
        if poisoned[i] {
            found += 1;
        }
        let seen = k + 1;
        area += found as f64;
        best += seen.min(p) as f64;
        worst += seen.saturating_sub(n - p) as f64;
    }
    Ok((area - worst) / (best - worst))
}

/// DualDA self-influence `λ_{i,y_i} ||f_i||²`; zero for non-support vectors.
pub fn self_influence(model: &SurrogateModel, train: &FeatureCache) -> Result<Array1<f64>> {
    if model.feature_dim() != train.feature_dim() {
        return Err(Error::Dimension(format!("surrogate dim {}, cache dim {}", model.feature_dim(), train.feature_dim())));
    }
    let mut out = Array1::zeros(train.n_samples());
    for (s, &i) in model.support().iter().enumerate() {
        if i >= train.n_samples() {
            return Err(Error::OutOfRange { index: i, len: train.n_samples() });
        }
        let f = model.support_features().row(s);
        out[i] = model.lambda()[[s, train.labels()[i]]] * f.dot(&f);
    }
    Ok(out)
}

/// Self-influence of an arbitrary method: entry `i` of the attribution of
/// `f_i` towards its own label.
pub fn self_influence_with<F>(train: &FeatureCache, attribute: F) -> Result<Array1<f64>>
where
    F: Fn(ArrayView1<'_, f64>, usize) -> Result<Array1<f64>>,
{
    let f = train.features_f64();
    let mut out = Array1::zeros(train.n_samples());
    for i in 0..train.n_samples() {
        out[i] = attribute(f.row(i), train.labels()[i])?[i];
    }
    Ok(out)
}

/// Moves exactly `round(fraction N)` randomly chosen labels to a different,
/// uniformly drawn class.
pub fn inject_mislabels(cache: &FeatureCache, fraction: f64, seed: u64) -> Result<(FeatureCache, Vec<bool>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Validation(format!("mislabel fraction must lie in (0, 1), got {fraction}")));
    }
    let k = cache.n_classes();
    if k < 2 {
        return Err(Error::Unsupported("relabelling needs at least two classes".into()));
    }
    let n = cache.n_samples();
    let count = (fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = cache.labels().to_vec();
    let mut mask = vec![false; n];
    for i in sample(&mut rng, n, count) {
        let shift = rng.gen_range(1..k);
        labels[i] = (labels[i] + shift) % k;
        mask[i] = true;
    }
    Ok((cache.with_labels(labels)?, mask))
}
