//! Finite-difference check of attributions by re-solving the surrogate with
//! one training example's loss weight scaled down by `(1 - eps)`.
//!
//! For an example whose worst-violating class is unique, the first-order
//! change of `w_c . f_test` per unit of down-weighting equals `tau_c(f_test, i)`.

use ndarray::ArrayView1;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::store::FeatureCache;
use crate::svm::{solve_weighted, DualSolution, SolveStatus, SolverOptions};

#[derive(Debug, Clone, Serialize)]
pub struct OracleOptions {
    pub eps: f64,
    /// KKT tolerance of both solves; must be far below the effect being measured.
    pub tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { eps: 1e-3, tol: 1e-11, max_epochs: 200_000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DownweightEstimate {
    pub at_eps: f64,
    pub at_half_eps: f64,
    /// `2 D(eps/2) - D(eps)`, cancels the first-order truncation term.
    pub richardson: f64,
}

/// Re-solves the surrogate with per-example penalties, sharing one base solve.
pub struct DownweightOracle<'a> {
    cache: &'a FeatureCache,
    c: f64,
    opts: OracleOptions,
    base: DualSolution,
}

impl<'a> DownweightOracle<'a> {
    pub fn new(cache: &'a FeatureCache, c: f64, opts: OracleOptions) -> Result<Self> {
        let base = solve_weighted(cache, &vec![c; cache.n_samples()], &solver_opts(c, &opts), None)?;
        require_converged(&base)?;
        Ok(DownweightOracle { cache, c, opts, base })
    }

    pub fn base(&self) -> &DualSolution {
        &self.base
    }

    /// True when the worst-violating class of example `i` is not unique
    /// (within `tie_tol`), i.e. the example sits on the margin.
    pub fn is_margin_point(&self, i: usize, tie_tol: f64) -> bool {
        let f = self.cache.row_f64(i);
        let y = self.cache.labels()[i];
        let scores = self.base.weights.dot(&f);
        let mut psi: Vec<f64> = scores.iter().enumerate().map(|(c, s)| s + if c == y { 0.0 } else { 1.0 }).collect();
        psi.sort_unstable_by(|a, b| b.total_cmp(a));
        psi[0] - psi[1] <= tie_tol
    }

    /// `[w_c . f_test - w_c^(i) . f_test] / eps`.
    pub fn estimate(&self, i: usize, eps: f64, f_test: ArrayView1<'_, f64>, class: usize) -> Result<f64> {
        let n = self.cache.n_samples();
        if i >= n {
            return Err(Error::OutOfRange { index: i, len: n });
        }
        if !(eps > 0.0 && eps <= 0.1) {
            return Err(Error::Validation(format!("eps must lie in (0, 0.1], got {eps}")));
        }
        if class >= self.base.n_classes() {
            return Err(Error::OutOfRange { index: class, len: self.base.n_classes() });
        }
        if f_test.len() != self.cache.feature_dim() {
            return Err(Error::Dimension(format!(
                "test features have dimension {}, cache {}",
                f_test.len(),
                self.cache.feature_dim()
            )));
        }
        let mut penalties = vec![self.c; n];
        penalties[i] = self.c * (1.0 - eps);
        let mut warm = self.base.alpha.clone();
        warm.row_mut(i).mapv_inplace(|a| a * (1.0 - eps));
        let perturbed = solve_weighted(self.cache, &penalties, &solver_opts(self.c, &self.opts), Some(&warm))?;
        require_converged(&perturbed)?;
        let base = self.base.weights.row(class).dot(&f_test);
        let pert = perturbed.weights.row(class).dot(&f_test);
        Ok((base - pert) / eps)
    }

    /// Estimates at `eps` and `eps / 2` plus their Richardson combination.
    pub fn estimate_checked(&self, i: usize, f_test: ArrayView1<'_, f64>, class: usize) -> Result<DownweightEstimate> {
        let at_eps = self.estimate(i, self.opts.eps, f_test, class)?;
        let at_half_eps = self.estimate(i, 0.5 * self.opts.eps, f_test, class)?;
        Ok(DownweightEstimate { at_eps, at_half_eps, richardson: 2.0 * at_half_eps - at_eps })
    }
}

/// One-shot oracle for a single training example.
pub fn downweight_oracle(
    cache: &FeatureCache,
    c: f64,
    i: usize,
    eps: f64,
    f_test: ArrayView1<'_, f64>,
    class: usize,
) -> Result<f64> {
    DownweightOracle::new(cache, c, OracleOptions { eps, ..Default::default() })?.estimate(i, eps, f_test, class)
}

fn solver_opts(c: f64, opts: &OracleOptions) -> SolverOptions {
    SolverOptions {
        c,
        tol: opts.tol,
        max_epochs: opts.max_epochs,
        seed: opts.seed,
        canonicalize: false,
        check_feasibility: false,
    }
}

fn require_converged(sol: &DualSolution) -> Result<()> {
    if sol.status != SolveStatus::Converged {
        return Err(Error::Numerical(format!(
            "surrogate re-solve did not converge (KKT violation {:.3e} after {} epochs)",
            sol.kkt_violation, sol.epochs
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::local_attribution;
    use crate::svm::SurrogateModel;
    use ndarray::array;

    #[test]
    fn margin_points_of_two_point_instance_do_not_move() {
        // Both points are tied between their two classes; down-weighting one of
        // them keeps w0 - w1 = 1, so the exact derivative is 0.
        let cache = FeatureCache::new(array![[1.0], [-1.0]], vec![0, 1], 2, None).unwrap();
        let oracle = DownweightOracle::new(&cache, 1.0, OracleOptions::default()).unwrap();
        assert!(oracle.is_margin_point(1, 1e-9));
        let d = oracle.estimate(1, 1e-3, array![1.0].view(), 0).unwrap();
        assert!(d.abs() < 1e-6, "{d}");
        let one_shot = downweight_oracle(&cache, 1.0, 1, 1e-3, array![1.0].view(), 0).unwrap();
        assert!(one_shot.abs() < 1e-6);
    }

    #[test]
    fn non_support_vector_has_no_effect() {
        let spec = crate::synth::BlobSpec { n: 40, dim: 3, classes: 2, separation: 6.0, noise: 0.5, ..Default::default() };
        let cache = crate::synth::gaussian_blobs(&spec, 11);
        let c = 1.0;
        let oracle = DownweightOracle::new(&cache, c, OracleOptions::default()).unwrap();
        let non_sv = (0..40).find(|i| !oracle.base().support_indices.contains(i)).expect("a non-support vector");
        let f = array![0.5, -0.2, 1.0];
        let d = oracle.estimate(non_sv, 1e-3, f.view(), 0).unwrap();
        let model = SurrogateModel::from_solution(oracle.base(), &cache).unwrap();
        let tau = local_attribution(&model, 40, f.view(), 0).unwrap();
        assert_eq!(tau[non_sv], 0.0);
        assert!(d.abs() <= 1e-3 * c, "{d}");
    }

    #[test]
    fn bad_eps_rejected() {
        let cache = FeatureCache::new(array![[1.0], [-1.0]], vec![0, 1], 2, None).unwrap();
        let oracle = DownweightOracle::new(&cache, 1.0, OracleOptions::default()).unwrap();
        assert!(oracle.estimate(0, 0.5, array![1.0].view(), 0).is_err());
        assert!(oracle.estimate(0, 0.0, array![1.0].view(), 0).is_err());
    }
}
