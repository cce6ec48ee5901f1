use ndarray::{Array2, ArrayView1};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Faithfulness {
    pub weight_cosine: f64,
    pub mean_logit_cosine: f64,
    pub mcc: f64,
}

/// Agreement between an original head and a surrogate: cosine of the
/// flattened weights, mean per-sample cosine of the logit vectors and the
/// multiclass MCC of their argmax predictions.
pub fn faithfulness(
    original: &Array2<f64>,
    surrogate: &Array2<f64>,
    original_logits: &Array2<f64>,
    surrogate_logits: &Array2<f64>,
) -> Result<Faithfulness> {
    if original.dim() != surrogate.dim() {
        return Err(Error::Dimension(format!("weights {:?} vs {:?}", original.dim(), surrogate.dim())));
    }
    if original_logits.dim() != surrogate_logits.dim() || original_logits.nrows() == 0 {
        return Err(Error::Dimension(format!(
            "logits {:?} vs {:?}",
            original_logits.dim(),
            surrogate_logits.dim()
        )));
    }
    let flat = |a: &Array2<f64>| a.iter().copied().collect::<ndarray::Array1<f64>>();
    let weight_cosine = cosine(flat(original).view(), flat(surrogate).view());
    let t = original_logits.nrows();
    let mean_logit_cosine = original_logits
        .outer_iter()
        .zip(surrogate_logits.outer_iter())
        .map(|(a, b)| cosine(a, b))
        .sum::<f64>()
        / t as f64;
    let k = original_logits.ncols();
    let pa: Vec<usize> = original_logits.outer_iter().map(|r| crate::svm::argmax(r.iter().copied())).collect();
    let pb: Vec<usize> = surrogate_logits.outer_iter().map(|r| crate::svm::argmax(r.iter().copied())).collect();
    Ok(Faithfulness { weight_cosine, mean_logit_cosine, mcc: multiclass_mcc(&pa, &pb, k)? })
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let den = (a.dot(&a) * b.dot(&b)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (a.dot(&b) / den).clamp(-1.0, 1.0)
    }
}

/// Multiclass Matthews correlation from the K x K confusion matrix; 0 when undefined.
pub fn multiclass_mcc(a: &[usize], b: &[usize], k: usize) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Dimension("prediction vectors must be nonempty and equally long".into()));
    }
    let mut conf = vec![vec![0.0f64; k]; k];
    for (&x, &y) in a.iter().zip(b) {
        if x >= k || y >= k {
            return Err(Error::OutOfRange { index: x.max(y), len: k });
        }
        conf[x][y] += 1.0;
    }
    let s = a.len() as f64;
    let c: f64 = (0..k).map(|i| conf[i][i]).sum();
    let t: Vec<f64> = (0..k).map(|i| conf[i].iter().sum()).collect();
    let p: Vec<f64> = (0..k).map(|j| (0..k).map(|i| conf[i][j]).sum()).collect();
    let pt: f64 = p.iter().zip(&t).map(|(x, y)| x * y).sum();
    let den = ((s * s - p.iter().map(|x| x * x).sum::<f64>()) * (s * s - t.iter().map(|x| x * x).sum::<f64>())).sqrt();
    Ok(if den == 0.0 { 0.0 } else { (c * s - pt) / den })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn mcc_hand_cases() {
        assert_eq!(multiclass_mcc(&[0, 0, 1, 1], &[0, 0, 1, 1], 2).unwrap(), 1.0);
        // Confusion [[1,1],[1,1]].
        assert_eq!(multiclass_mcc(&[0, 0, 1, 1], &[0, 1, 0, 1], 2).unwrap(), 0.0);
        assert!((multiclass_mcc(&[0, 1], &[1, 0], 2).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_and_negated_heads() {
        let w = array![[1.0, -2.0], [0.5, 0.3], [-1.0, 1.0]];
        let f = array![[1.0, 0.0], [0.0, 1.0], [-1.0, -0.5], [2.0, 1.0]];
        let l = f.dot(&w.t());
        let same = faithfulness(&w, &w, &l, &l).unwrap();
        assert!((same.weight_cosine - 1.0).abs() < 1e-12);
        assert!((same.mean_logit_cosine - 1.0).abs() < 1e-12);
        assert!((same.mcc - 1.0).abs() < 1e-12);
        let neg = -&w;
        let r = faithfulness(&w, &neg, &l, &f.dot(&neg.t())).unwrap();
        assert!((r.weight_cosine + 1.0).abs() < 1e-12);
    }
}
