//! Selection of a unique dual among all optimal ones.
//!
//! The optimal `W` of the primal is unique, but the dual variables are not
//! whenever several examples sit on the margin with collinear features: any
//! redistribution of lambda between them that leaves `W` unchanged is also
//! optimal. Attributions depend on lambda, so we pick the optimal dual with
//! the smallest `||lambda||`.
//!
//! Rows whose best class is unique are pinned by complementary slackness. For
//! the remaining ("tied") rows we solve
//!
//! ```text
//! min 1/2 sum_i ||lambda_i||^2   s.t.  sum_i lambda_i f_i^T = T,  alpha_i in simplex(C_i) on M_i
//! ```
//!
//! where `M_i` is the set of tied classes of row `i` and `T` their current
//! contribution to `W`. Its dual in the multiplier `Y` (K x d) is smooth and
//! concave, with `lambda_i(Y) = proj_{P_i}(Y f_i)`, so accelerated gradient
//! ascent recovers the minimum-norm solution.

use ndarray::{Array1, Array2, Axis};
use serde::Serialize;

use super::simplex::project_simplex_masked;
use super::state::SolverState;

const MAX_ITERS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "outcome")]
pub enum CanonicalOutcome {
    Skipped,
    /// No tied rows: the dual was already unique.
    Unique,
    Applied { tied_rows: usize, iterations: usize },
    /// The refined dual failed the optimality checks and was discarded.
    Rejected { tied_rows: usize },
}

struct TiedRow {
    index: usize,
    allowed: Vec<bool>,
}

/// Replaces the dual of `state` by the minimum-norm optimal dual.
///
/// The refinement is accepted only if the resulting state is at least as
/// optimal as the input (KKT violation within `max(tol, current)`).
pub fn canonicalize(state: &mut SolverState, tol: f64) -> CanonicalOutcome {
    let before_violation = state.kkt_violation();
    let tie_tol = before_violation.max(1e-12);
    let k = state.n_classes();

    let mut tied = Vec::new();
    for i in 0..state.n_samples() {
        if state.sq_norms[i] <= 0.0 {
            continue;
        }
        let psi = state.psi(i);
        let max = psi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = 1.0 + max.abs();
        let allowed: Vec<bool> = (0..k)
            .map(|c| psi[c] >= max - tie_tol * scale || state.alpha[[i, c]] > 0.0)
            .collect();
        if allowed.iter().filter(|&&a| a).count() >= 2 {
            tied.push(TiedRow { index: i, allowed });
        }
    }
    if tied.is_empty() {
        return CanonicalOutcome::Unique;
    }

    let d = state.features.ncols();
    let mut target = Array2::<f64>::zeros((k, d));
    for row in &tied {
        let l = state.lambda_row(row.index);
        add_outer(&mut target, &l, state.feature_row(row.index));
    }
    let lipschitz = gram_spectral_norm(state, &tied) * 1.01 + 1e-300;
    let target_norm = frob(&target);

    // Accelerated ascent on the multiplier Y.
    let mut y = Array2::<f64>::zeros((k, d));
    let mut y_prev = y.clone();
    let mut t = 1.0f64;
    let mut iterations = 0;
    let mut lambdas: Vec<Array1<f64>> = Vec::new();
    for it in 0..MAX_ITERS {
        iterations = it + 1;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        let z = &y + &((&y - &y_prev) * momentum);
        lambdas = tied.iter().map(|r| lambda_at(state, r, &z)).collect();
        let mut grad = target.clone();
        for (r, l) in tied.iter().zip(&lambdas) {
            add_outer(&mut grad, &(-l), state.feature_row(r.index));
        }
        let gnorm = frob(&grad);
        y_prev = y;
        y = z + &(grad / lipschitz);
        t = t_next;
        if gnorm <= 1e-14 * (1.0 + target_norm) {
            break;
        }
    }

    let mut candidate = state.clone();
    for (r, l) in tied.iter().zip(&lambdas) {
        let c = candidate.penalties[r.index];
        let y_i = candidate.labels[r.index];
        let mut alpha_row = l.mapv(|v| -v);
        alpha_row[y_i] += c;
        candidate.alpha.row_mut(r.index).assign(&alpha_row);
    }
    candidate.recompute_weights();
    let after = candidate.kkt_violation();
    let allowed_violation = tol.max(before_violation) * (1.0 + 1e-6) + 1e-12;
    if after <= allowed_violation && candidate.check_feasible(1e-9).is_ok() {
        *state = candidate;
        CanonicalOutcome::Applied { tied_rows: tied.len(), iterations }
    } else {
        CanonicalOutcome::Rejected { tied_rows: tied.len() }
    }
}

/// `lambda_i(Y) = C e_y - proj_{simplex on M_i}(C e_y - Y f_i)`.
fn lambda_at(state: &SolverState, row: &TiedRow, y: &Array2<f64>) -> Array1<f64> {
    let i = row.index;
    let c = state.penalties[i];
    let label = state.labels[i];
    let v = y.dot(&state.feature_row(i));
    let mut a: Vec<f64> = v.iter().map(|x| -x).collect();
    a[label] += c;
    project_simplex_masked(&mut a, &row.allowed, c);
    let mut lambda = Array1::from(a).mapv(|x| -x);
    lambda[label] += c;
    lambda
}

fn add_outer(acc: &mut Array2<f64>, coeffs: &Array1<f64>, f: ndarray::ArrayView1<'_, f64>) {
    for (c, &l) in coeffs.iter().enumerate() {
        if l != 0.0 {
            acc.row_mut(c).scaled_add(l, &f);
        }
    }
}

fn frob(m: &Array2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest eigenvalue of `sum_i f_i f_i^T` over tied rows (power iteration).
fn gram_spectral_norm(state: &SolverState, tied: &[TiedRow]) -> f64 {
    let rows: Vec<usize> = tied.iter().map(|r| r.index).collect();
    let f = state.features.select(Axis(0), &rows);
    let gram = f.t().dot(&f);
    let trace: f64 = gram.diag().sum();
    let mut v = Array1::from_elem(gram.nrows(), 1.0 / (gram.nrows() as f64).sqrt());
    let mut est = 0.0;
    for _ in 0..200 {
        let w = gram.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return trace;
        }
        let new_est = v.dot(&w);
        v = w / norm;
        if (new_est - est).abs() <= 1e-10 * new_est.abs() {
            est = new_est;
            break;
        }
        est = new_est;
    }
    // Power iteration approaches from below; never exceed the trace bound.
    (est * 1.05).min(trace).max(est)
}
