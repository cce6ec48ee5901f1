use ndarray::{Array1, ArrayView1};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::rank_descending;
use crate::attribution::AttributionMatrix;
use crate::error::{Error, Result};
use crate::store::FeatureCache;

const TOP_K: usize = 5;

/// Mean over test rows of the fraction of the top-5 attributed training
/// points whose label equals the row's predicted class.
pub fn identical_class(attr: &AttributionMatrix, train_labels: &[usize], predicted: &[usize]) -> Result<f64> {
    top_k_agreement(attr, train_labels, predicted)
}

/// As [`identical_class`], comparing subclass (group) labels of test and training points.
pub fn identical_subclass(attr: &AttributionMatrix, train_groups: &[usize], test_groups: &[usize]) -> Result<f64> {
    top_k_agreement(attr, train_groups, test_groups)
}

fn top_k_agreement(attr: &AttributionMatrix, train: &[usize], test: &[usize]) -> Result<f64> {
    if attr.n_train() < TOP_K {
        return Err(Error::Validation(format!("need at least {TOP_K} training points, got {}", attr.n_train())));
    }
    if train.len() != attr.n_train() || test.len() != attr.n_test() {
        return Err(Error::Dimension(format!(
            "{} train / {} test labels for a {} x {} attribution matrix",
            train.len(),
            test.len(),
            attr.n_test(),
            attr.n_train()
        )));
    }
    if attr.n_test() == 0 {
        return Err(Error::Validation("no test rows".into()));
    }
    let total: f64 = (0..attr.n_test())
        .map(|t| attr.top_k(t, TOP_K).iter().filter(|&&i| train[i] == test[t]).count() as f64 / TOP_K as f64)
        .sum();
    Ok(total / attr.n_test() as f64)
}

/// Average precision of retrieving the `perturbed` training points when they
/// are ranked by attribution summed over all test rows.
pub fn shortcut_auprc(attr: &AttributionMatrix, perturbed: &[bool]) -> Result<f64> {
    if perturbed.len() != attr.n_train() {
        return Err(Error::Dimension(format!("mask of length {} for {} training points", perturbed.len(), attr.n_train())));
    }
    if attr.n_test() == 0 {
        return Err(Error::Validation("no shortcut test rows".into()));
    }
    let summed = attr.scores.sum_axis(ndarray::Axis(0));
    average_precision(summed.view(), perturbed)
}

/// Step-wise area under the precision-recall curve: mean precision at the
/// rank of each relevant item.
pub fn average_precision(scores: ArrayView1<'_, f64>, relevant: &[bool]) -> Result<f64> {
    let positives = relevant.iter().filter(|&&r| r).count();
    if positives == 0 {
        return Err(Error::Validation("no relevant items".into()));
    }
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (k, i) in rank_descending(scores).into_iter().enumerate() {
        if relevant[i] {
            hits += 1;
            acc += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(acc / positives as f64)
}

/// Adds `offset` to the features of a random `fraction` of the examples of
/// `class`. Returns the modified cache and the mask of perturbed examples.
pub fn inject_shortcut(
    cache: &FeatureCache,
    class: usize,
    fraction: f64,
    offset: ArrayView1<'_, f64>,
    seed: u64,
) -> Result<(FeatureCache, Vec<bool>)> {
    if class >= cache.n_classes() {
        return Err(Error::OutOfRange { index: class, len: cache.n_classes() });
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Validation(format!("shortcut fraction must lie in (0, 1], got {fraction}")));
    }
    check_offset(cache, offset)?;
    let members: Vec<usize> = (0..cache.n_samples()).filter(|&i| cache.labels()[i] == class).collect();
    let count = (fraction * members.len() as f64).round() as usize;
    if count == 0 {
        return Err(Error::Validation("shortcut would perturb no examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = vec![false; cache.n_samples()];
    let mut f = cache.features().clone();
    for pos in sample(&mut rng, members.len(), count) {
        let i = members[pos];
        mask[i] = true;
        let mut row = f.row_mut(i);
        row.zip_mut_with(&offset, |a, &b| *a += b as f32);
    }
    Ok((cache.with_features(f)?, mask))
}

/// Adds `offset` to every example.
pub fn add_offset(cache: &FeatureCache, offset: ArrayView1<'_, f64>) -> Result<FeatureCache> {
    check_offset(cache, offset)?;
    let off: Array1<f32> = offset.mapv(|v| v as f32);
    let f = cache.features() + &off;
    cache.with_features(f)
}

fn check_offset(cache: &FeatureCache, offset: ArrayView1<'_, f64>) -> Result<()> {
    if offset.len() != cache.feature_dim() {
        return Err(Error::Dimension(format!("offset of length {} for dimension {}", offset.len(), cache.feature_dim())));
    }
    Ok(())
}
