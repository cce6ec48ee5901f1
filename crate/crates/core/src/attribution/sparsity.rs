use serde::Serialize;

use super::AttributionMatrix;
use crate::error::{Error, Result};

/// Mean cumulative share of total |tau| held by the top fraction of training points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityCurve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Rows whose attributions are all zero (counted as the constant-1 curve).
    pub zero_rows: usize,
}

/// For each test row, sort |tau| in descending order and record the fraction of
/// the row total covered by the first `ceil(p N)` entries, for every `p` in `grid`.
/// The per-row curves are averaged.
pub fn sparsity_curve(attr: &AttributionMatrix, grid: &[f64]) -> Result<SparsityCurve> {
    let (t, n) = attr.scores.dim();
    if t == 0 || n == 0 {
        return Err(Error::Validation("sparsity curve needs a nonempty attribution matrix".into()));
    }
    if grid.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::Validation("grid fractions must lie in [0, 1]".into()));
    }
    let counts: Vec<usize> = grid
        .iter()
        .map(|&p| ((p * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize)
        .collect();
    let mut acc = vec![0.0; grid.len()];
    let mut zero_rows = 0;
    let mut abs: Vec<f64> = Vec::with_capacity(n);
    for row in attr.scores.outer_iter() {
        abs.clear();
        abs.extend(row.iter().map(|v| v.abs()));
        abs.sort_unstable_by(|a, b| b.total_cmp(a));
        let total: f64 = abs.iter().sum();
        if total == 0.0 {
            zero_rows += 1;
            acc.iter_mut().for_each(|a| *a += 1.0);
            continue;
        }
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        let mut s = 0.0;
        for v in &abs {
            s += v;
            prefix.push(s);
        }
        for (a, &k) in acc.iter_mut().zip(&counts) {
            *a += if k == n { 1.0 } else { (prefix[k] / total).min(1.0) };
        }
    }
    let values = acc.into_iter().map(|a| a / t as f64).collect();
    Ok(SparsityCurve { grid: grid.to_vec(), values, zero_rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn single(row: ndarray::Array1<f64>) -> AttributionMatrix {
        let n = row.len();
        AttributionMatrix::new(vec![0], vec![0], row.into_shape_with_order((1, n)).unwrap(), "t").unwrap()
    }

    #[test]
    fn hand_computed_row() {
        let c = sparsity_curve(&single(array![4.0, -3.0, 2.0, 1.0]), &[0.25, 0.5, 1.0]).unwrap();
        let expect = [0.4, 0.7, 1.0];
        for (v, e) in c.values.iter().zip(expect) {
            assert!((v - e).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_magnitudes_give_identity() {
        let c = sparsity_curve(&single(array![1.0, -1.0, 1.0, 1.0, -1.0]), &[0.2, 0.4, 0.6, 0.8, 1.0]).unwrap();
        for (v, p) in c.values.iter().zip(&c.grid) {
            assert!((v - p).abs() < 1e-12);
        }
    }

    #[test]
    fn one_nonzero_entry_saturates_at_first_point() {
        let mut scores = Array2::zeros((3, 100));
        for t in 0..3 {
            scores[[t, t * 7]] = (t + 1) as f64;
        }
        let attr = AttributionMatrix::new(vec![0, 1, 2], vec![0; 3], scores, "t").unwrap();
        let c = sparsity_curve(&attr, &[0.01, 0.5]).unwrap();
        assert_eq!(c.values, vec![1.0, 1.0]);
    }

    #[test]
    fn zero_row_is_flagged() {
        let c = sparsity_curve(&single(array![0.0, 0.0]), &[0.5]).unwrap();
        assert_eq!(c.zero_rows, 1);
        assert_eq!(c.values, vec![1.0]);
    }
}
