//! Crammer-Singer multiclass SVM, solved in the dual by exact block
//! coordinate descent.
//!
//! Primal:
//!
//! ```text
//! min_W 1/2 ||W||^2 + C sum_i xi_i
//! s.t.  w_{y_i} f_i - w_c f_i + [c = y_i] >= 1 - xi_i   for all i, c
//! ```
//!
//! Each training example owns one block `alpha_i` of K dual variables living
//! on the simplex `{alpha_i >= 0, sum_c alpha_ic = C}`. The weights are
//! recovered as `w_c = sum_i lambda_ic f_i` with `lambda_ic = C [c = y_i] - alpha_ic`.

mod canonical;
mod model;
pub mod simplex;
mod state;

pub use canonical::{canonicalize, CanonicalOutcome};
pub(crate) use model::argmax;
pub use model::{load_model, save_model, SurrogateModel, MODEL_MAGIC};
pub use state::{BlockOutcome, SolverState};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::store::FeatureCache;

/// Default sparsity hyperparameter.
pub const DEFAULT_C: f64 = 1e-3;
pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_EPOCHS: usize = 1000;
/// `|lambda| > SUPPORT_THRESHOLD * C` counts as nonzero.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct SolverOptions {
    pub c: f64,
    pub tol: f64,
    pub max_epochs: usize,
    pub seed: u64,
    /// Select the minimum-norm lambda among all optimal duals after convergence.
    pub canonicalize: bool,
    /// Check dual feasibility after every epoch (slow).
    pub check_feasibility: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            c: DEFAULT_C,
            tol: DEFAULT_TOL,
            max_epochs: DEFAULT_MAX_EPOCHS,
            seed: 0,
            canonicalize: true,
            check_feasibility: cfg!(debug_assertions),
        }
    }
}

impl SolverOptions {
    pub fn with_c(c: f64) -> Self {
        SolverOptions { c, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    /// Stopped at `max_epochs` before reaching `tol`; the result is still feasible.
    MaxEpochs,
}

/// Optimal (or best-effort) dual solution with its optimality certificates.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Array2<f64>,
    pub lambda: Array2<f64>,
    /// K x d.
    pub weights: Array2<f64>,
    pub c: f64,
    pub labels: Vec<usize>,
    pub support_indices: Vec<usize>,
    pub kkt_violation: f64,
    pub dual_objective: f64,
    pub primal_objective: f64,
    pub status: SolveStatus,
    pub epochs: usize,
    /// Number of zero-norm rows that were skipped.
    pub degenerate_rows: usize,
    /// Dual value (minimisation convention) before the first and after every epoch.
    pub history: Vec<f64>,
    pub canonical: CanonicalOutcome,
}

impl DualSolution {
    pub fn n_samples(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn duality_gap(&self) -> f64 {
        self.primal_objective - self.dual_objective
    }

    pub fn n_support(&self) -> usize {
        self.support_indices.len()
    }

    /// Support vectors per class label.
    pub fn support_per_class(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &i in &self.support_indices {
            counts[self.labels[i]] += 1;
        }
        counts
    }
}

/// Solves the Crammer-Singer dual on `cache`.
pub fn solve(cache: &FeatureCache, opts: &SolverOptions) -> Result<DualSolution> {
    let penalties = vec![opts.c; cache.n_samples()];
    solve_weighted(cache, &penalties, opts, None)
}

/// Solves with a per-example penalty `C_i` (the loss weight of example `i`),
/// optionally warm-started from a feasible `alpha`.
///
/// `opts.c` is only used as the nominal C recorded in the solution.
pub fn solve_weighted(
    cache: &FeatureCache,
    penalties: &[f64],
    opts: &SolverOptions,
    warm_start: Option<&Array2<f64>>,
) -> Result<DualSolution> {
    validate_problem(cache, opts)?;
    let mut state = match warm_start {
        Some(alpha) => SolverState::from_alpha(cache, penalties, alpha.clone())?,
        None => SolverState::new(cache, penalties)?,
    };
    let n = state.n_samples();
    let degenerate_rows = state.sq_norms.iter().filter(|&&s| s <= 0.0).count();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = vec![state.dual_min_value()];
    let mut violation = state.kkt_violation();
    let mut status = SolveStatus::MaxEpochs;
    let mut epochs = 0;
    if violation <= opts.tol {
        status = SolveStatus::Converged;
    } else {
        for epoch in 0..opts.max_epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                state.solve_block(i);
            }
            epochs = epoch + 1;
            if epochs % 64 == 0 {
                state.recompute_weights();
            }
            if opts.check_feasibility {
                state.check_feasible(1e-9)?;
            }
            history.push(state.dual_min_value());
            violation = state.kkt_violation();
            if violation <= opts.tol {
                status = SolveStatus::Converged;
                break;
            }
        }
    }

    state.snap_non_support(SUPPORT_THRESHOLD);
    let canonical = if opts.canonicalize {
        canonicalize(&mut state, opts.tol)
    } else {
        CanonicalOutcome::Skipped
    };
    Ok(finish(state, opts.c, status, epochs, degenerate_rows, history, canonical))
}

fn validate_problem(cache: &FeatureCache, opts: &SolverOptions) -> Result<()> {
    if cache.n_classes() < 2 {
        return Err(Error::Unsupported(format!(
            "Crammer-Singer SVM needs at least 2 classes, cache has {}",
            cache.n_classes()
        )));
    }
    if cache.n_samples() == 0 {
        return Err(Error::Validation("cannot solve on an empty cache".into()));
    }
    if !(opts.c.is_finite() && opts.c > 0.0) {
        return Err(Error::Validation(format!("C must be positive, got {}", opts.c)));
    }
    if !(opts.tol.is_finite() && opts.tol > 0.0) {
        return Err(Error::Validation(format!("tol must be positive, got {}", opts.tol)));
    }
    Ok(())
}

pub(crate) fn finish(
    mut state: SolverState,
    c: f64,
    status: SolveStatus,
    epochs: usize,
    degenerate_rows: usize,
    history: Vec<f64>,
    canonical: CanonicalOutcome,
) -> DualSolution {
    state.weights = state.reconstructed_weights();
    let lambda = state.lambda();
    let support_indices = (0..state.n_samples())
        .filter(|&i| {
            let thr = SUPPORT_THRESHOLD * state.penalties[i];
            lambda.row(i).iter().any(|l| l.abs() > thr)
        })
        .collect();
    let kkt_violation = state.kkt_violation();
    let (primal_objective, dual_objective) = state.objectives();
    DualSolution {
        alpha: state.alpha,
        lambda,
        weights: state.weights,
        c,
        labels: state.labels,
        support_indices,
        kkt_violation,
        dual_objective,
        primal_objective,
        status,
        epochs,
        degenerate_rows,
        history,
        canonical,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    pub(crate) fn two_point() -> FeatureCache {
        FeatureCache::new(array![[1.0], [-1.0]], vec![0, 1], 2, None).unwrap()
    }

    fn opts(c: f64) -> SolverOptions {
        SolverOptions { c, tol: 1e-12, max_epochs: 10_000, ..Default::default() }
    }

    #[test]
    fn analytic_two_point_instance() {
        let sol = solve(&two_point(), &opts(1.0)).unwrap();
        assert_eq!(sol.status, SolveStatus::Converged);
        assert!((sol.weights[[0, 0]] - 0.5).abs() < 1e-9);
        assert!((sol.weights[[1, 0]] + 0.5).abs() < 1e-9);
        assert!((sol.alpha[[0, 0]] - 0.75).abs() < 1e-9, "{:?}", sol.alpha);
        assert!((sol.alpha[[0, 1]] - 0.25).abs() < 1e-9);
        assert!((sol.alpha[[1, 1]] - 0.75).abs() < 1e-9);
        assert!((sol.lambda[[0, 0]] - 0.25).abs() < 1e-9);
        assert!((sol.lambda[[0, 1]] + 0.25).abs() < 1e-9);
        assert!(sol.kkt_violation <= 1e-9);
        assert!((sol.primal_objective - 0.25).abs() < 1e-9);
        assert!((sol.dual_objective - 0.25).abs() < 1e-9);
    }

    #[test]
    fn without_canonicalisation_w_is_still_optimal() {
        let o = SolverOptions { canonicalize: false, ..opts(1.0) };
        for seed in 0..4 {
            let sol = solve(&two_point(), &SolverOptions { seed, ..o.clone() }).unwrap();
            assert!((sol.weights[[0, 0]] - 0.5).abs() < 1e-9);
            assert!(sol.duality_gap().abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_single_class_and_empty() {
        let one = FeatureCache::new(array![[1.0]], vec![0], 1, None).unwrap();
        assert!(matches!(solve(&one, &SolverOptions::default()), Err(Error::Unsupported(_))));
        let empty = FeatureCache::new(Array2::zeros((0, 2)), vec![], 2, None).unwrap();
        assert!(solve(&empty, &SolverOptions::default()).is_err());
        assert!(solve(&two_point(), &SolverOptions::with_c(0.0)).is_err());
    }

    #[test]
    fn tiny_c_drives_weights_to_zero() {
        let cache = crate::synth::gaussian_blobs(&crate::synth::BlobSpec { n: 60, dim: 3, classes: 3, ..Default::default() }, 1);
        let sol = solve(&cache, &SolverOptions::with_c(1e-9)).unwrap();
        assert!(sol.weights.iter().all(|w| w.abs() < 1e-6));
        assert!(sol.lambda.iter().all(|l| l.abs() <= 1e-9));
    }

    #[test]
    fn zero_row_is_degenerate_and_untouched() {
        let cache = FeatureCache::new(array![[1.0, 0.0], [0.0, 0.0], [-1.0, 0.5]], vec![0, 1, 1], 2, None).unwrap();
        let mut state = SolverState::new(&cache, &[1.0; 3]).unwrap();
        let before = state.alpha().row(1).to_owned();
        assert_eq!(state.solve_block(1), BlockOutcome::Degenerate);
        assert_eq!(state.alpha().row(1), before);
        let sol = solve(&cache, &opts(1.0)).unwrap();
        assert_eq!(sol.degenerate_rows, 1);
        assert_eq!(sol.alpha.row(1), before);
    }

    #[test]
    fn optimal_block_is_fixed_point() {
        let sol = solve(&two_point(), &opts(1.0)).unwrap();
        let mut state = SolverState::from_alpha(&two_point(), &[1.0, 1.0], sol.alpha.clone()).unwrap();
        let (a, w) = (state.alpha().clone(), state.weights().clone());
        state.solve_block(0);
        assert!((state.alpha() - &a).iter().all(|d| d.abs() < 1e-12));
        assert!((state.weights() - &w).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn single_point_three_classes_matches_grid() {
        // One point, K=3, y=0, f=(1), C=1: the block solution is the full solution.
        let cache = FeatureCache::new(array![[1.0]], vec![0], 3, None).unwrap();
        let mut state = SolverState::new(&cache, &[1.0]).unwrap();
        for _ in 0..50 {
            state.solve_block(0);
        }
        // Brute force over a grid of the scaled 2-simplex.
        let dual = |a: [f64; 3]| {
            let l = [1.0 - a[0], -a[1], -a[2]];
            0.5 * l.iter().map(|v| v * v).sum::<f64>() - l[0]
        };
        let steps = 300;
        let mut best = (f64::INFINITY, [0.0; 3]);
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let a = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
                let v = dual(a);
                if v < best.0 {
                    best = (v, a);
                }
            }
        }
        let got = state.alpha().row(0).to_vec();
        assert!(dual([got[0], got[1], got[2]]) <= best.0 + 1e-12);
        for c in 0..3 {
            assert!((got[c] - best.1[c]).abs() < 2.0 / steps as f64, "{got:?} vs {:?}", best.1);
        }
        // Analytic: alpha = (1/3, 1/3, 1/3), W = (2/3, -1/3, -1/3).
        assert!((got[0] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn kkt_at_uniform_alpha_and_zero_weights_is_one() {
        let cache = crate::synth::gaussian_blobs(&crate::synth::BlobSpec { n: 20, dim: 2, classes: 3, ..Default::default() }, 3);
        let c = 0.5;
        let alpha = Array2::from_elem((20, 3), c / 3.0);
        let mut state = SolverState::from_alpha(&cache, &[c; 20], alpha).unwrap();
        // Force W = 0 independently of alpha for the certificate check.
        state.weights.fill(0.0);
        assert!((state.kkt_violation() - 1.0).abs() < 1e-15);
        let (primal, _) = state.objectives();
        assert!((primal - c * 20.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_concentrated_on_argmax_has_zero_violation() {
        let cache = FeatureCache::new(array![[1.0]], vec![0], 2, None).unwrap();
        // W = 0 => psi = (0, 1): all mass on class 1 is optimal for this row.
        let mut state = SolverState::from_alpha(&cache, &[1.0], array![[0.0, 1.0]]).unwrap();
        state.weights.fill(0.0);
        assert_eq!(state.kkt_violation(), 0.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let cache = crate::synth::gaussian_blobs(&crate::synth::BlobSpec { n: 80, dim: 4, classes: 3, ..Default::default() }, 5);
        let o = SolverOptions { c: 0.05, seed: 9, ..Default::default() };
        let a = solve(&cache, &o).unwrap();
        let b = solve(&cache, &o).unwrap();
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.weights, b.weights);
    }
}
