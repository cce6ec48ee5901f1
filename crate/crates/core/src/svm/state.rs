use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};

use super::simplex::project_simplex;
use crate::error::{Error, Result};
use crate::store::FeatureCache;

/// Result of one block update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockOutcome {
    Updated,
    /// The feature row has zero norm; the block was left untouched.
    Degenerate,
}

/// Mutable optimisation state of the Crammer-Singer dual.
///
/// Keeps the dual variables together with the weight matrix they induce,
/// `W = sum_i lambda_i f_i^T`, updated incrementally after every block.
#[derive(Debug, Clone)]
pub struct SolverState {
    pub(crate) features: Array2<f64>,
    pub(crate) sq_norms: Array1<f64>,
    pub(crate) labels: Vec<usize>,
    /// Per-example penalty (C for the plain problem).
    pub(crate) penalties: Vec<f64>,
    pub(crate) alpha: Array2<f64>,
    pub(crate) weights: Array2<f64>,
}

impl SolverState {
    /// Starts from `alpha_i = C e_{y_i}`, i.e. `lambda = 0`, `W = 0`.
    pub fn new(cache: &FeatureCache, penalties: &[f64]) -> Result<Self> {
        let n = cache.n_samples();
        let k = cache.n_classes();
        let mut alpha = Array2::zeros((n, k));
        for (i, &y) in cache.labels().iter().enumerate() {
            alpha[[i, y]] = penalties[i];
        }
        Self::from_alpha(cache, penalties, alpha)
    }

    /// Builds a state from an explicit (feasible) dual matrix.
    pub fn from_alpha(cache: &FeatureCache, penalties: &[f64], alpha: Array2<f64>) -> Result<Self> {
        let n = cache.n_samples();
        let k = cache.n_classes();
        if penalties.len() != n {
            return Err(Error::Dimension(format!("{} penalties for {n} samples", penalties.len())));
        }
        if alpha.dim() != (n, k) {
            return Err(Error::Dimension(format!("alpha shape {:?}, expected ({n}, {k})", alpha.dim())));
        }
        if penalties.iter().any(|&c| !(c.is_finite() && c > 0.0)) {
            return Err(Error::Validation("penalties must be positive and finite".into()));
        }
        let features = cache.features_f64();
        let sq_norms = features.map_axis(Axis(1), |r| r.dot(&r));
        let mut state = SolverState {
            features,
            sq_norms,
            labels: cache.labels().to_vec(),
            penalties: penalties.to_vec(),
            alpha,
            weights: Array2::zeros((k, cache.feature_dim())),
        };
        state.check_feasible(1e-9)?;
        state.recompute_weights();
        Ok(state)
    }

    pub fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn alpha(&self) -> &Array2<f64> {
        &self.alpha
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub(crate) fn check_feasible(&self, rel_tol: f64) -> Result<()> {
        for (i, row) in self.alpha.axis_iter(Axis(0)).enumerate() {
            let c = self.penalties[i];
            if row.iter().any(|&a| a < -rel_tol * c || !a.is_finite()) {
                return Err(Error::Validation(format!("alpha row {i} has negative entries")));
            }
            if (row.sum() - c).abs() > rel_tol * c.max(1e-300) * row.len() as f64 {
                return Err(Error::Validation(format!(
                    "alpha row {i} sums to {}, expected {c}",
                    row.sum()
                )));
            }
        }
        Ok(())
    }

    /// `lambda_ic = C_i [c = y_i] - alpha_ic`.
    pub fn lambda_row(&self, i: usize) -> Array1<f64> {
        let mut l = self.alpha.row(i).mapv(|a| -a);
        l[self.labels[i]] += self.penalties[i];
        l
    }

    pub fn lambda(&self) -> Array2<f64> {
        let mut l = self.alpha.mapv(|a| -a);
        for (i, &y) in self.labels.iter().enumerate() {
            l[[i, y]] += self.penalties[i];
        }
        l
    }

    /// Recomputes `W` from scratch, removing drift from incremental updates.
    pub fn recompute_weights(&mut self) {
        let lambda = self.lambda();
        self.weights = lambda.t().dot(&self.features);
    }

    /// `psi_c(i) = w_c . f_i + 1 - [c = y_i]`.
    pub fn psi(&self, i: usize) -> Array1<f64> {
        let mut psi = self.weights.dot(&self.features.row(i));
        psi.mapv_inplace(|v| v + 1.0);
        psi[self.labels[i]] -= 1.0;
        psi
    }

    /// Exactly minimises the dual over block `i` with all other blocks fixed.
    ///
    /// The block objective is a quadratic with Hessian `||f_i||^2 I` and gradient
    /// `-psi(i)`, so the minimiser is the projection of `alpha_i + psi / ||f_i||^2`
    /// onto the simplex of radius `C_i`.
    pub fn solve_block(&mut self, i: usize) -> BlockOutcome {
        let sq = self.sq_norms[i];
        if sq <= 0.0 {
            return BlockOutcome::Degenerate;
        }
        let psi = self.psi(i);
        let old = self.alpha.row(i).to_owned();
        let mut target: Vec<f64> = old.iter().zip(psi.iter()).map(|(a, p)| a + p / sq).collect();
        project_simplex(&mut target, self.penalties[i]);
        let f = self.features.row(i);
        let mut changed = false;
        for (c, (&new, &prev)) in target.iter().zip(old.iter()).enumerate() {
            let delta = new - prev;
            if delta != 0.0 {
                changed = true;
                // lambda = C e_y - alpha, so d lambda = -d alpha.
                self.weights.row_mut(c).scaled_add(-delta, &f);
            }
        }
        if changed {
            self.alpha.row_mut(i).assign(&Array1::from(target));
        }
        BlockOutcome::Updated
    }

    /// Largest per-example gap between the best class and the worst class
    /// carrying dual mass; zero exactly at optimality. Zero-norm rows are skipped.
    pub fn kkt_violation(&self) -> f64 {
        (0..self.n_samples())
            .filter(|&i| self.sq_norms[i] > 0.0)
            .map(|i| self.row_violation(i))
            .fold(0.0, f64::max)
    }

    pub(crate) fn row_violation(&self, i: usize) -> f64 {
        let psi = self.psi(i);
        let c = self.penalties[i];
        let max = psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min_active = psi
            .iter()
            .zip(self.alpha.row(i))
            .filter(|(_, &a)| a > 1e-15 * c)
            .map(|(&p, _)| p)
            .fold(f64::INFINITY, f64::min);
        if min_active.is_finite() {
            (max - min_active).max(0.0)
        } else {
            0.0
        }
    }

    /// Returns `(primal, dual)`, both in the convention where `primal >= dual`.
    ///
    /// primal = 1/2 ||W||^2 + sum_i C_i max_c psi_c(i) - w_{y_i} f_i, floored at 0,
    /// dual   = sum_i lambda_{i,y_i} - 1/2 ||W||^2.
    pub fn objectives(&self) -> (f64, f64) {
        let half_sq = 0.5 * self.weights.iter().map(|w| w * w).sum::<f64>();
        let mut hinge_total = 0.0;
        let mut lambda_own = 0.0;
        for i in 0..self.n_samples() {
            let y = self.labels[i];
            let scores = self.weights.dot(&self.features.row(i));
            let own = scores[y];
            let hinge = scores
                .iter()
                .enumerate()
                .map(|(c, &s)| if c == y { 0.0 } else { 1.0 + s - own })
                .fold(0.0, f64::max);
            hinge_total += self.penalties[i] * hinge;
            lambda_own += self.penalties[i] - self.alpha[[i, y]];
        }
        (half_sq + hinge_total, lambda_own - half_sq)
    }

    /// Dual value in the minimisation convention (the quantity block updates decrease).
    pub fn dual_min_value(&self) -> f64 {
        let half_sq = 0.5 * self.weights.iter().map(|w| w * w).sum::<f64>();
        let own: f64 = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, &y)| self.penalties[i] - self.alpha[[i, y]])
            .sum();
        half_sq - own
    }

    /// Resets rows whose lambda is below the noise floor to exact zeros.
    pub(crate) fn snap_non_support(&mut self, threshold: f64) {
        let mut touched = false;
        for i in 0..self.n_samples() {
            let y = self.labels[i];
            let c = self.penalties[i];
            if c - self.alpha[[i, y]] <= threshold * c && self.alpha.row(i).iter().any(|&a| a != 0.0 && a != c) {
                self.alpha.row_mut(i).fill(0.0);
                self.alpha[[i, y]] = c;
                touched = true;
            }
        }
        if touched {
            self.recompute_weights();
        }
    }

    pub(crate) fn feature_row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Weight matrix recomputed from lambda with a fixed reduction order.
    pub fn reconstructed_weights(&self) -> Array2<f64> {
        let lambda = self.lambda();
        let mut w = Array2::zeros(self.weights.raw_dim());
        for (l, f) in lambda.axis_iter(Axis(0)).zip(self.features.axis_iter(Axis(0))) {
            for (c, &lc) in l.iter().enumerate() {
                if lc != 0.0 {
                    Zip::from(w.row_mut(c)).and(&f).for_each(|w, &x| *w += lc * x);
                }
            }
        }
        w
    }
}
