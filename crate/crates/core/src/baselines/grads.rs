use ndarray::{Array1, Array2, ArrayView1};

use super::{batch, check_head, resolve_targets, softmax, softmax_rows, HeadModel};
use crate::attribution::{AttributionMatrix, TargetClasses};
use crate::error::{Error, Result};
use crate::store::FeatureCache;

/// Training-side last-layer gradients of cross-entropy, kept in factored form:
/// the gradient of example `i` is `residual_i ⊗ f_i` with `residual_i = p_i - e_{y_i}`.
#[derive(Debug, Clone)]
pub struct LastLayerGrads {
    weights: Array2<f64>,
    features: Array2<f64>,
    residual: Array2<f64>,
    /// `||residual_i|| * ||f_i||`, the gradient norm.
    norms: Array1<f64>,
}

/// GradCos scores with the zero-gradient guard.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCos {
    pub scores: Array1<f64>,
    pub zero_test_gradient: bool,
    /// Training indices whose gradient vanished (their score is 0).
    pub zero_train_gradients: Vec<usize>,
}

impl LastLayerGrads {
    pub fn new(weights: &Array2<f64>, train: &FeatureCache) -> Result<Self> {
        check_head(weights, train)?;
        let features = train.features_f64();
        let mut residual = softmax_rows(weights, &features);
        for (mut row, &y) in residual.outer_iter_mut().zip(train.labels()) {
            row[y] -= 1.0;
        }
        let norms = Array1::from_iter(
            residual
                .outer_iter()
                .zip(features.outer_iter())
                .map(|(r, f)| (r.dot(&r) * f.dot(&f)).sqrt()),
        );
        Ok(LastLayerGrads { weights: weights.clone(), features, residual, norms })
    }

    pub fn n_train(&self) -> usize {
        self.features.nrows()
    }

    /// `p_i - e_{y_i}` per training example (N x K).
    pub fn residuals(&self) -> &Array2<f64> {
        &self.residual
    }

    /// `p(f_test) - e_c`.
    pub fn test_residual(&self, f_test: ArrayView1<'_, f64>, class: usize) -> Result<Array1<f64>> {
        if f_test.len() != self.features.ncols() {
            return Err(Error::Dimension(format!(
                "test features have dimension {}, head expects {}",
                f_test.len(),
                self.features.ncols()
            )));
        }
        if class >= self.weights.nrows() {
            return Err(Error::OutOfRange { index: class, len: self.weights.nrows() });
        }
        let mut r = softmax(self.weights.dot(&f_test).view());
        r[class] -= 1.0;
        Ok(r)
    }

    /// `τ_i = (p_test - e_c)·(p_i - e_{y_i}) (f_test·f_i)`.
    pub fn grad_dot(&self, f_test: ArrayView1<'_, f64>, class: usize) -> Result<Array1<f64>> {
        let rt = self.test_residual(f_test, class)?;
        let coeff = self.residual.dot(&rt);
        let kernel = self.features.dot(&f_test);
        Ok(coeff * kernel)
    }

    pub fn grad_cos(&self, f_test: ArrayView1<'_, f64>, class: usize) -> Result<GradCos> {
        let rt = self.test_residual(f_test, class)?;
        let test_norm = (rt.dot(&rt) * f_test.dot(&f_test)).sqrt();
        let dots = self.residual.dot(&rt) * self.features.dot(&f_test);
        let zero_train_gradients: Vec<usize> = (0..self.n_train()).filter(|&i| self.norms[i] == 0.0).collect();
        if test_norm == 0.0 {
            return Ok(GradCos { scores: Array1::zeros(self.n_train()), zero_test_gradient: true, zero_train_gradients });
        }
        let scores = Array1::from_iter((0..self.n_train()).map(|i| {
            if self.norms[i] == 0.0 {
                0.0
            } else {
                (dots[i] / (test_norm * self.norms[i])).clamp(-1.0, 1.0)
            }
        }));
        Ok(GradCos { scores, zero_test_gradient: false, zero_train_gradients })
    }

    /// `τ_i = (δ_{c,y_i} - p_ic)(f_i·f_test)`: the negative loss gradient with
    /// respect to logit `c`, times the feature kernel.
    pub fn representer(&self, f_test: ArrayView1<'_, f64>, class: usize) -> Result<Array1<f64>> {
        self.test_residual(f_test, class)?;
        let coeff = self.residual.column(class).mapv(|r| -r);
        Ok(coeff * self.features.dot(&f_test))
    }
}

/// Single-test GradDot.
pub fn grad_dot(weights: &Array2<f64>, train: &FeatureCache, f_test: ArrayView1<'_, f64>, class: usize) -> Result<Array1<f64>> {
    LastLayerGrads::new(weights, train)?.grad_dot(f_test, class)
}

/// Single-test GradCos.
pub fn grad_cos(weights: &Array2<f64>, train: &FeatureCache, f_test: ArrayView1<'_, f64>, class: usize) -> Result<GradCos> {
    LastLayerGrads::new(weights, train)?.grad_cos(f_test, class)
}

/// Single-test Representer Points.
pub fn representer_attribution(
    head: &HeadModel,
    train: &FeatureCache,
    f_test: ArrayView1<'_, f64>,
    class: usize,
) -> Result<Array1<f64>> {
    LastLayerGrads::new(&head.weights, train)?.representer(f_test, class)
}

pub fn grad_dot_matrix(weights: &Array2<f64>, train: &FeatureCache, test: &FeatureCache, targets: &TargetClasses) -> Result<AttributionMatrix> {
    let g = LastLayerGrads::new(weights, train)?;
    let classes = resolve_targets(targets, weights, test)?;
    batch(test, train.n_samples(), classes, "graddot", |f, c| g.grad_dot(f, c))
}

pub fn grad_cos_matrix(weights: &Array2<f64>, train: &FeatureCache, test: &FeatureCache, targets: &TargetClasses) -> Result<AttributionMatrix> {
    let g = LastLayerGrads::new(weights, train)?;
    let classes = resolve_targets(targets, weights, test)?;
    batch(test, train.n_samples(), classes, "gradcos", |f, c| Ok(g.grad_cos(f, c)?.scores))
}

pub fn representer_matrix(head: &HeadModel, train: &FeatureCache, test: &FeatureCache, targets: &TargetClasses) -> Result<AttributionMatrix> {
    let g = LastLayerGrads::new(&head.weights, train)?;
    let classes = resolve_targets(targets, &head.weights, test)?;
    batch(test, train.n_samples(), classes, "representer", |f, c| g.representer(f, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cache(features: Array2<f32>, labels: Vec<usize>, k: usize) -> FeatureCache {
        FeatureCache::new(features, labels, k, None).unwrap()
    }

    #[test]
    fn kronecker_identity_against_explicit_gradients() {
        let w = array![[0.3, -0.2, 0.5], [0.1, 0.4, -0.6], [-0.7, 0.2, 0.05]];
        let train = cache(array![[1.0, 2.0, -1.0], [0.5, -0.5, 0.25]], vec![2, 0], 3);
        let f_test = array![0.2, -1.0, 0.7];
        let g = LastLayerGrads::new(&w, &train).unwrap();
        let tau = g.grad_dot(f_test.view(), 1).unwrap();
        let explicit = |f: ArrayView1<f64>, y: usize| {
            let mut p = softmax(w.dot(&f).view());
            p[y] -= 1.0;
            let mut out = Vec::new();
            for c in 0..3 {
                for j in 0..3 {
                    out.push(p[c] * f[j]);
                }
            }
            Array1::from(out)
        };
        let gt = explicit(f_test.view(), 1);
        for i in 0..2 {
            let gi = explicit(train.row_f64(i).view(), train.labels()[i]);
            assert!((tau[i] - gt.dot(&gi)).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_example_uniform_probabilities() {
        // W = 0 gives p = (0.5, 0.5); f_test·f_i = 2.
        let w = Array2::zeros((2, 2));
        let train = cache(array![[1.0, 1.0]], vec![0], 2);
        let tau = grad_dot(&w, &train, array![1.0, 1.0].view(), 0).unwrap();
        assert!((tau[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn representer_hand_example() {
        let head = HeadModel::from_weights(Array2::zeros((2, 2))).unwrap();
        let train = cache(array![[1.0, 2.0]], vec![0], 2);
        let tau = representer_attribution(&head, &train, array![3.0, 1.0].view(), 0).unwrap();
        assert!((tau[0] - 0.5 * 5.0).abs() < 1e-15);
        let tau = representer_attribution(&head, &train, array![2.0, -1.0].view(), 0).unwrap();
        assert_eq!(tau[0], 0.0);
    }

    #[test]
    fn representer_saturated_sample_vanishes() {
        let head = HeadModel::from_weights(array![[100.0], [-100.0]]).unwrap();
        let train = cache(array![[1.0]], vec![0], 2);
        let tau = representer_attribution(&head, &train, array![1.0].view(), 0).unwrap();
        assert!(tau[0].abs() < 1e-80);
    }

    #[test]
    fn grad_cos_self_is_one_and_guards_zero() {
        let w = array![[0.3, -0.2], [0.1, 0.4], [-0.5, 0.9]];
        let train = cache(array![[1.0, 2.0], [-0.5, 0.3], [2.0, 0.1]], vec![0, 2, 1], 3);
        let g = LastLayerGrads::new(&w, &train).unwrap();
        for i in 0..3 {
            let cos = g.grad_cos(train.row_f64(i).view(), train.labels()[i]).unwrap();
            assert!((cos.scores[i] - 1.0).abs() < 1e-12);
            assert!(cos.scores.iter().all(|s| (-1.0..=1.0).contains(s)));
        }
        let zero = g.grad_cos(array![0.0, 0.0].view(), 0).unwrap();
        assert!(zero.zero_test_gradient);
        assert!(zero.scores.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn grad_cos_antiparallel() {
        let w = Array2::zeros((2, 1));
        let train = cache(array![[1.0]], vec![0], 2);
        let cos = grad_cos(&w, &train, array![-1.0].view(), 0).unwrap();
        assert!((cos.scores[0] + 1.0).abs() < 1e-12);
    }
}
