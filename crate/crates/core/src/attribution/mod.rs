//! Local and global attributions read off the surrogate's dual coefficients.
//!
//! For a test feature vector `f` and class `c`, training example `i` receives
//! `tau_i = lambda_ic (f_i . f)`. Because `w_c = sum_i lambda_ic f_i` these
//! scores sum exactly to the surrogate logit `w_c . f`. Non-support vectors
//! have `lambda_i = 0` and are never touched: only support vectors are stored
//! and their scores are scattered into a dense vector on demand.

mod concept;
mod io;
mod oracle;
mod sparsity;

pub use concept::{concept_attribution, ConceptBasis};
pub use io::{load_attributions, save_attributions, ATTRIBUTION_MAGIC};
pub use oracle::{downweight_oracle, DownweightEstimate, DownweightOracle, OracleOptions};
pub use sparsity::{sparsity_curve, SparsityCurve};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::store::FeatureCache;
use crate::svm::SurrogateModel;

/// Method tag of DualDA attributions.
pub const DUALDA_TAG: &str = "dualda";

/// Test x train attribution scores for one target class per test row.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionMatrix {
    pub test_ids: Vec<u64>,
    pub target_classes: Vec<usize>,
    /// T x N; column j belongs to training index j.
    pub scores: Array2<f64>,
    pub method: String,
}

impl AttributionMatrix {
    pub fn new(test_ids: Vec<u64>, target_classes: Vec<usize>, scores: Array2<f64>, method: impl Into<String>) -> Result<Self> {
        if test_ids.len() != scores.nrows() || target_classes.len() != scores.nrows() {
            return Err(Error::Dimension(format!(
                "{} test ids, {} targets, {} score rows",
                test_ids.len(),
                target_classes.len(),
                scores.nrows()
            )));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("attribution scores must be finite".into()));
        }
        Ok(AttributionMatrix { test_ids, target_classes, scores, method: method.into() })
    }

    pub fn n_test(&self) -> usize {
        self.scores.nrows()
    }

    pub fn n_train(&self) -> usize {
        self.scores.ncols()
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f64> {
        self.scores.row(t)
    }

    /// Indices of the `k` largest scores of row `t` (ties towards lower index).
    pub fn top_k(&self, t: usize, k: usize) -> Vec<usize> {
        crate::eval::rank_descending(self.scores.row(t))
            .into_iter()
            .take(k)
            .collect()
    }
}

/// Attribution of one test point restricted to the support vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAttribution {
    pub n_train: usize,
    /// Training indices, ascending.
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseAttribution {
    pub fn to_dense(&self) -> Array1<f64> {
        let mut out = Array1::zeros(self.n_train);
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// How target classes are chosen for a batch of test points.
#[derive(Debug, Clone)]
pub enum TargetClasses {
    /// argmax of the surrogate logits, lowest index on ties.
    Predicted,
    /// One class for every test point.
    Fixed(usize),
    PerSample(Vec<usize>),
}

/// `lambda_ic = C - alpha_{i,y_i}` for `c = y_i`, `-alpha_ic` otherwise.
pub fn lambda_from_alpha(alpha: &Array2<f64>, labels: &[usize], c: f64) -> Result<Array2<f64>> {
    if alpha.nrows() != labels.len() {
        return Err(Error::Dimension(format!("{} alpha rows for {} labels", alpha.nrows(), labels.len())));
    }
    let tol = 1e-6 * c;
    let mut lambda = alpha.mapv(|a| -a);
    for (i, (row, &y)) in alpha.axis_iter(Axis(0)).zip(labels).enumerate() {
        if y >= alpha.ncols() {
            return Err(Error::OutOfRange { index: y, len: alpha.ncols() });
        }
        if row.iter().any(|&a| a < -tol) || (row.sum() - c).abs() > tol {
            return Err(Error::Validation(format!(
                "alpha row {i} is infeasible (sum {}, C {c})",
                row.sum()
            )));
        }
        lambda[[i, y]] += c;
    }
    Ok(lambda)
}

fn check_query(model: &SurrogateModel, f_test: ArrayView1<'_, f64>, class: usize) -> Result<()> {
    if f_test.len() != model.feature_dim() {
        return Err(Error::Dimension(format!(
            "test features have dimension {}, surrogate expects {}",
            f_test.len(),
            model.feature_dim()
        )));
    }
    if class >= model.n_classes() {
        return Err(Error::OutOfRange { index: class, len: model.n_classes() });
    }
    Ok(())
}

/// Scores of the support vectors only.
pub fn local_attribution_sparse(
    model: &SurrogateModel,
    n_train: usize,
    f_test: ArrayView1<'_, f64>,
    class: usize,
) -> Result<SparseAttribution> {
    check_query(model, f_test, class)?;
    if let Some(&last) = model.support().last() {
        if last >= n_train {
            return Err(Error::OutOfRange { index: last, len: n_train });
        }
    }
    let kernel = model.support_features().dot(&f_test);
    let values = model
        .lambda()
        .column(class)
        .iter()
        .zip(kernel.iter())
        .map(|(l, k)| l * k)
        .collect();
    Ok(SparseAttribution { n_train, indices: model.support().to_vec(), values })
}

/// Dense vector of `tau_i` over all `n_train` training examples.
pub fn local_attribution(
    model: &SurrogateModel,
    n_train: usize,
    f_test: ArrayView1<'_, f64>,
    class: usize,
) -> Result<Array1<f64>> {
    Ok(local_attribution_sparse(model, n_train, f_test, class)?.to_dense())
}

/// `logit_c = w_c . f` for every class.
pub fn surrogate_logits(model: &SurrogateModel, f_test: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if f_test.len() != model.feature_dim() {
        return Err(Error::Dimension(format!(
            "test features have dimension {}, surrogate expects {}",
            f_test.len(),
            model.feature_dim()
        )));
    }
    Ok(model.logits(f_test))
}

/// Attributes every row of `test` against the `n_train` training examples.
///
/// Rows are processed in parallel; each row is computed independently so the
/// result does not depend on the number of worker threads.
pub fn attribute_batch(
    model: &SurrogateModel,
    n_train: usize,
    test: &FeatureCache,
    targets: &TargetClasses,
) -> Result<AttributionMatrix> {
    let t = test.n_samples();
    let feats = test.features_f64();
    let classes: Vec<usize> = match targets {
        TargetClasses::Predicted => feats.outer_iter().map(|f| model.predict(f)).collect(),
        TargetClasses::Fixed(c) => vec![*c; t],
        TargetClasses::PerSample(v) => {
            if v.len() != t {
                return Err(Error::Dimension(format!("{} target classes for {t} test points", v.len())));
            }
            v.clone()
        }
    };
    let rows: Vec<Array1<f64>> = (0..t)
        .into_par_iter()
        .map(|r| local_attribution(model, n_train, feats.row(r), classes[r]))
        .collect::<Result<_>>()?;
    let mut scores = Array2::zeros((t, n_train));
    for (r, row) in rows.into_iter().enumerate() {
        scores.row_mut(r).assign(&row);
    }
    AttributionMatrix::new((0..t as u64).collect(), classes, scores, DUALDA_TAG)
}
