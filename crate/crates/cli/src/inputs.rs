//! Loading inputs and writing matrix outputs.

use std::path::Path;

use ndarray::{Array2, ArrayD, IxDyn};

use dualxda::attribution::{save_attributions, AttributionMatrix, TargetClasses};
use dualxda::baselines::{retrain_head, RetrainOptions};
use dualxda::netlrp::read_tensor;
use dualxda::FeatureCache;

use crate::args::{HeadArgs, MatrixOutput};
use crate::{CliError, CliResult};

/// Prefixes I/O and format errors with the offending path.
pub fn with_path<T>(path: impl AsRef<Path>, r: dualxda::Result<T>) -> CliResult<T> {
    r.map_err(|e| {
        let mut err = CliError::from(e);
        if matches!(err.kind, "io" | "format" | "corrupt") {
            err.message = format!("{}: {}", path.as_ref().display(), err.message);
        }
        err
    })
}

/// `predicted`, `label` or a class index.
pub fn parse_target(spec: &str, test: &FeatureCache) -> CliResult<TargetClasses> {
    match spec {
        "predicted" => Ok(TargetClasses::Predicted),
        "label" => Ok(TargetClasses::PerSample(test.labels().to_vec())),
        other => other
            .parse::<usize>()
            .map(TargetClasses::Fixed)
            .map_err(|_| CliError::validation(format!("--target must be predicted, label or a class index, got {other:?}"))),
    }
}

/// Raw little-endian f32 values, checked against `len`.
pub fn read_raw(path: &Path, len: usize) -> CliResult<Vec<f64>> {
    let dir = path.parent().unwrap_or_else(|| Path::new(""));
    let name = path
        .file_name()
        .ok_or_else(|| CliError::validation(format!("{} is not a file path", path.display())))?;
    Ok(read_tensor(dir, &name.to_string_lossy(), len)?)
}

pub fn read_input(path: &Path, shape: &[usize]) -> CliResult<ArrayD<f64>> {
    let values = read_raw(path, shape.iter().product())?;
    Ok(ArrayD::from_shape_vec(IxDyn(shape), values).expect("length checked"))
}

/// Given head weights, or a head retrained on `train`.
pub fn head_weights(args: &HeadArgs, train: &FeatureCache) -> CliResult<Array2<f64>> {
    let (k, d) = (train.n_classes(), train.feature_dim());
    match &args.head {
        Some(path) => Ok(Array2::from_shape_vec((k, d), read_raw(path, k * d)?).expect("length checked")),
        None => {
            let head = retrain_head(train, &RetrainOptions { weight_decay: args.weight_decay, ..RetrainOptions::default() })?;
            if !head.converged {
                eprintln!("warning: retrained head stopped with gradient norm {:.3e}", head.final_grad_norm);
            }
            Ok(head.weights)
        }
    }
}

/// Whitespace- or comma-separated nonnegative integers.
pub fn read_indices(path: &Path) -> CliResult<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError { kind: "io", message: format!("{}: {e}", path.display()) })?;
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| CliError::validation(format!("{}: {t:?} is not an index", path.display()))))
        .collect()
}

pub fn mask_from_indices(indices: &[usize], n: usize) -> CliResult<Vec<bool>> {
    let mut mask = vec![false; n];
    for &i in indices {
        if i >= n {
            return Err(CliError::validation(format!("index {i} out of range for {n} training points")));
        }
        mask[i] = true;
    }
    Ok(mask)
}

/// Writes the .dxat file and/or CSV requested by `out`.
pub fn write_matrix(attr: &AttributionMatrix, out: &MatrixOutput) -> CliResult<()> {
    if out.out.is_none() && out.csv.is_none() {
        return Err(CliError::validation("nothing to write: pass --out and/or --csv"));
    }
    if let Some(path) = &out.out {
        save_attributions(attr, path)?;
    }
    if let Some(path) = &out.csv {
        let mut text = String::new();
        match out.top_k {
            Some(k) => {
                text.push_str("test_id,target_class,rank,train_index,score\n");
                for t in 0..attr.n_test() {
                    for (rank, i) in attr.top_k(t, k).into_iter().enumerate() {
                        text.push_str(&format!(
                            "{},{},{},{},{}\n",
                            attr.test_ids[t], attr.target_classes[t], rank + 1, i, attr.scores[[t, i]]
                        ));
                    }
                }
            }
            None => {
                for row in attr.scores.outer_iter() {
                    let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    text.push_str(&cells.join(","));
                    text.push('\n');
                }
            }
        }
        std::fs::write(path, text).map_err(|e| CliError { kind: "io", message: format!("{}: {e}", path.display()) })?;
    }
    Ok(())
}
