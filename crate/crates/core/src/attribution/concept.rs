use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::svm::SurrogateModel;

const UNIT_TOL: f64 = 1e-6;

/// Unit-norm concept directions in feature space (one per row).
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptBasis {
    vectors: Array2<f64>,
    orthonormal: bool,
}

impl ConceptBasis {
    /// Rows must already have unit norm.
    pub fn new(vectors: Array2<f64>) -> Result<Self> {
        for (k, v) in vectors.outer_iter().enumerate() {
            let norm = v.dot(&v).sqrt();
            if (norm - 1.0).abs() > UNIT_TOL {
                return Err(Error::Validation(format!("concept vector {k} has norm {norm}, expected 1")));
            }
        }
        let gram = vectors.dot(&vectors.t());
        let m = gram.nrows();
        let orthonormal = (0..m).all(|a| (0..m).all(|b| a == b || gram[[a, b]].abs() <= UNIT_TOL));
        Ok(ConceptBasis { vectors, orthonormal })
    }

    /// Normalises raw concept activation vectors before building the basis.
    pub fn from_raw(raw: Array2<f64>) -> Result<Self> {
        let mut v = raw;
        for mut row in v.outer_iter_mut() {
            let norm = row.dot(&row).sqrt();
            if norm == 0.0 {
                return Err(Error::Validation("zero concept vector cannot be normalised".into()));
            }
            row.mapv_inplace(|x| x / norm);
        }
        Self::new(v)
    }

    /// The neurons of the feature layer as concepts.
    pub fn cartesian(dim: usize) -> Self {
        ConceptBasis { vectors: Array2::eye(dim), orthonormal: true }
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn is_orthonormal(&self) -> bool {
        self.orthonormal
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }
}

/// N x M matrix with entry `(i, k) = lambda_ic (f_i . v_k)(f_test . v_k)`.
///
/// For a complete orthonormal basis the rows sum to the plain attribution `tau_i`.
pub fn concept_attribution(
    model: &SurrogateModel,
    n_train: usize,
    f_test: ArrayView1<'_, f64>,
    class: usize,
    basis: &ConceptBasis,
) -> Result<Array2<f64>> {
    if basis.vectors.ncols() != model.feature_dim() || f_test.len() != model.feature_dim() {
        return Err(Error::Dimension(format!(
            "basis dim {}, test dim {}, surrogate dim {}",
            basis.vectors.ncols(),
            f_test.len(),
            model.feature_dim()
        )));
    }
    if class >= model.n_classes() {
        return Err(Error::OutOfRange { index: class, len: model.n_classes() });
    }
    let test_proj = basis.vectors.dot(&f_test);
    // n_sv x M projections of the support vectors.
    let sv_proj = model.support_features().dot(&basis.vectors.t());
    let mut out = Array2::zeros((n_train, basis.len()));
    for (s, &i) in model.support().iter().enumerate() {
        if i >= n_train {
            return Err(Error::OutOfRange { index: i, len: n_train });
        }
        let l = model.lambda()[[s, class]];
        for k in 0..basis.len() {
            out[[i, k]] = l * sv_proj[[s, k]] * test_proj[k];
        }
    }
    Ok(out)
}
