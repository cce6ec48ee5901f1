use ndarray::{Array1, Axis};
use rayon::prelude::*;
use serde::Serialize;

use super::retrain::{test_loss, RetrainConfig};
use super::rank_descending;
use crate::attribution::AttributionMatrix;
use crate::error::{Error, Result};
use crate::store::FeatureCache;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossCurve {
    pub fractions: Vec<f64>,
    pub losses: Vec<f64>,
    /// `Σ_p L_p / p  /  Σ_p 1 / p`.
    pub weighted_average: f64,
}

/// Global importance of each training point: mean |τ| over the test rows.
pub fn global_importance(attr: &AttributionMatrix) -> Array1<f64> {
    attr.scores.mapv(f64::abs).mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(attr.n_train()))
}

/// Retrains on the top-`p` fraction of training points by global importance.
pub fn coreset_curve(
    attr: &AttributionMatrix,
    train: &FeatureCache,
    test: &FeatureCache,
    fractions: &[f64],
    config: &RetrainConfig,
) -> Result<LossCurve> {
    if fractions.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(Error::Validation("coreset fractions must lie in (0, 1]".into()));
    }
    curve(attr, train, test, fractions, config, true)
}

/// Retrains after removing the top-`p` fraction of training points.
pub fn pruning_curve(
    attr: &AttributionMatrix,
    train: &FeatureCache,
    test: &FeatureCache,
    fractions: &[f64],
    config: &RetrainConfig,
) -> Result<LossCurve> {
    if fractions.iter().any(|&p| !(p > 0.0 && p < 1.0)) {
        return Err(Error::Validation("pruning fractions must lie in (0, 1)".into()));
    }
    curve(attr, train, test, fractions, config, false)
}

fn curve(
    attr: &AttributionMatrix,
    train: &FeatureCache,
    test: &FeatureCache,
    fractions: &[f64],
    config: &RetrainConfig,
    keep_top: bool,
) -> Result<LossCurve> {
    let n = train.n_samples();
    if attr.n_train() != n {
        return Err(Error::Dimension(format!("attribution has {} columns, train cache {n} rows", attr.n_train())));
    }
    if fractions.is_empty() {
        return Err(Error::Validation("no fractions given".into()));
    }
    let order = rank_descending(global_importance(attr).view());
    let losses: Vec<f64> = fractions
        .par_iter()
        .map(|&p| {
            let k = ((p * n as f64).round() as usize).clamp(1, n);
            let mut idx: Vec<usize> = if keep_top { order[..k].to_vec() } else { order[k.min(n - 1)..].to_vec() };
            idx.sort_unstable();
            let w = config.fit(&train.subset(&idx)?)?;
            test_loss(&w, test)
        })
        .collect::<Result<_>>()?;
    Ok(LossCurve { fractions: fractions.to_vec(), losses: losses.clone(), weighted_average: weighted_average(fractions, &losses) })
}

/// Average of `losses` with weights `1/p`.
pub fn weighted_average(fractions: &[f64], losses: &[f64]) -> f64 {
    let num: f64 = fractions.iter().zip(losses).map(|(p, l)| l / p).sum();
    let den: f64 = fractions.iter().map(|p| 1.0 / p).sum();
    num / den
}
