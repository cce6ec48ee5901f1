use ndarray::Array2;
use serde::Serialize;

use crate::baselines::{retrain_head, softmax_rows, RetrainOptions};
use crate::error::{Error, Result};
use crate::store::FeatureCache;
use crate::svm::{solve, SolverOptions};

/// How counterfactual heads are refitted on training subsets.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RetrainConfig {
    /// Softmax head with cross-entropy and weight decay.
    Head(RetrainOptions),
    /// The SVM surrogate itself.
    Surrogate(SolverOptions),
}

impl Default for RetrainConfig {
    fn default() -> Self {
        RetrainConfig::Head(RetrainOptions::default())
    }
}

impl RetrainConfig {
    /// Fitted K x d weights.
    pub fn fit(&self, cache: &FeatureCache) -> Result<Array2<f64>> {
        match self {
            RetrainConfig::Head(opts) => Ok(retrain_head(cache, opts)?.weights),
            RetrainConfig::Surrogate(opts) => Ok(solve(cache, opts)?.weights),
        }
    }
}

/// Mean cross-entropy of `softmax(W f)` against the cache labels.
pub fn test_loss(weights: &Array2<f64>, test: &FeatureCache) -> Result<f64> {
    if weights.ncols() != test.feature_dim() || weights.nrows() != test.n_classes() {
        return Err(Error::Dimension("weights do not match the test cache".into()));
    }
    let p = softmax_rows(weights, &test.features_f64());
    Ok(crate::baselines::mean_cross_entropy(&p, test.labels()))
}
