use ndarray::Array2;

use super::{check_head, softmax_rows, HeadModel};
use crate::error::{Error, Result};
use crate::store::FeatureCache;

/// Keeps, per class column, the `k_per_class[c]` entries of largest magnitude
/// (ties towards the lower index) and zeroes the rest.
pub fn sparsify_coefficients(coeffs: &Array2<f64>, k_per_class: &[usize]) -> Result<Array2<f64>> {
    let (n, k) = coeffs.dim();
    if k_per_class.len() != k {
        return Err(Error::Dimension(format!("{} counts for {k} classes", k_per_class.len())));
    }
    if let Some(&bad) = k_per_class.iter().find(|&&kc| kc > n) {
        return Err(Error::Validation(format!("cannot keep {bad} of {n} coefficients")));
    }
    let mut out = Array2::zeros((n, k));
    for (c, &kc) in k_per_class.iter().enumerate() {
        let col = coeffs.column(c);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| col[b].abs().total_cmp(&col[a].abs()).then(a.cmp(&b)));
        for &i in &idx[..kc] {
            out[[i, c]] = col[i];
        }
    }
    Ok(out)
}

/// Representer coefficients `δ_{c,y_i} - p_ic` (N x K), so that the surrogate
/// weights read `coeffsᵀ F`.
pub fn representer_coefficients(head: &HeadModel, train: &FeatureCache) -> Result<Array2<f64>> {
    check_head(&head.weights, train)?;
    let mut p = softmax_rows(&head.weights, &train.features_f64());
    for (mut row, &y) in p.outer_iter_mut().zip(train.labels()) {
        row[y] -= 1.0;
    }
    Ok(-p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn keeps_largest_magnitude() {
        let out = sparsify_coefficients(&array![[3.0], [-5.0], [1.0]], &[1]).unwrap();
        assert_eq!(out, array![[0.0], [-5.0], [0.0]]);
    }

    #[test]
    fn full_and_empty_budgets() {
        let c = array![[3.0, 1.0], [-5.0, 2.0], [1.0, -2.0]];
        assert_eq!(sparsify_coefficients(&c, &[3, 3]).unwrap(), c);
        let out = sparsify_coefficients(&c, &[0, 1]).unwrap();
        assert!(out.column(0).iter().all(|&v| v == 0.0));
        // Tie between rows 1 and 2 goes to row 1.
        assert_eq!(out.column(1).to_vec(), vec![0.0, 2.0, 0.0]);
        assert!(sparsify_coefficients(&c, &[4, 0]).is_err());
    }

    #[test]
    fn representer_coefficients_rows_sum_to_zero() {
        let head = HeadModel::from_weights(array![[0.5, -1.0], [0.2, 0.3], [-0.1, 0.0]]).unwrap();
        let train = FeatureCache::new(array![[1.0, 2.0], [0.0, -1.0]], vec![2, 0], 3, None).unwrap();
        let c = representer_coefficients(&head, &train).unwrap();
        for row in c.outer_iter() {
            assert!(row.sum().abs() < 1e-15);
        }
        assert!(c[[0, 2]] > 0.0 && c[[0, 0]] < 0.0);
    }
}
