use ndarray::Array2;

use crate::error::{Error, Result};
use crate::store::GradientCache;

/// `τ[t, i] = Σ_e η_e ⟨g_test^e(t), g_train^e(i)⟩` in projected gradient space.
///
/// `train[e]` and `test[e]` must come from the same checkpoint: equal
/// checkpoint id, step size, projection dimension and projection seed. The
/// step size is read from the caches.
pub fn tracin(train: &[GradientCache], test: &[GradientCache]) -> Result<Array2<f64>> {
    if train.is_empty() || train.len() != test.len() {
        return Err(Error::Validation(format!(
            "need one test gradient cache per training checkpoint ({} train, {} test)",
            train.len(),
            test.len()
        )));
    }
    let n = train[0].n_samples();
    let t = test[0].n_samples();
    let mut out = Array2::<f64>::zeros((t, n));
    for (e, (tr, te)) in train.iter().zip(test).enumerate() {
        if tr.n_samples() != n || te.n_samples() != t {
            return Err(Error::Validation(format!("checkpoint {e}: sample counts differ across checkpoints")));
        }
        if tr.checkpoint_id != te.checkpoint_id
            || tr.step_size != te.step_size
            || tr.proj_dim() != te.proj_dim()
            || tr.projection_seed != te.projection_seed
        {
            return Err(Error::Validation(format!(
                "checkpoint {e}: train and test gradient caches disagree on id, step size or projection"
            )));
        }
        let eta = tr.step_size as f64;
        if eta == 0.0 {
            continue;
        }
        let g_train = tr.grads().mapv(f64::from);
        let g_test = te.grads().mapv(f64::from);
        out.scaled_add(eta, &g_test.dot(&g_train.t()));
    }
    Ok(out)
}
