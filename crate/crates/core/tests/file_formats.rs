//! Files written byte by byte, the way an external exporter would produce them.

use std::path::Path;

use dualxda::attribution::{attribute_batch, load_attributions, save_attributions, TargetClasses};
use dualxda::netlrp::{load_network, lrp_backward, Composite, Rule};
use dualxda::store::load_gradients;
use dualxda::svm::{load_model, save_model};
use dualxda::{load_cache, solve, Error, SolverOptions, SurrogateModel};
use ndarray::{array, Array1, ArrayD, IxDyn};

fn le_f32(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn feature_file(labels: &[u32], features: &[f32], d: u32, k: u32, logits: Option<&[f32]>) -> Vec<u8> {
    let mut b = b"DXFC".to_vec();
    b.extend(1u32.to_le_bytes());
    b.extend((labels.len() as u64).to_le_bytes());
    b.extend(d.to_le_bytes());
    b.extend(k.to_le_bytes());
    b.push(0);
    b.push(logits.is_some() as u8);
    b.extend([0, 0]);
    for y in labels {
        b.extend(y.to_le_bytes());
    }
    b.extend(le_f32(features));
    if let Some(l) = logits {
        b.extend(le_f32(l));
    }
    b
}

#[test]
fn exporter_feature_cache_is_read_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.dxfc");
    let feats = [1.0, 0.5, -2.0, 0.25, 3.0, -1.5];
    let logits = [0.1, 0.9, 0.7, 0.3, -1.0, 2.0];
    std::fs::write(&path, feature_file(&[1, 0, 1], &feats, 2, 2, Some(&logits))).unwrap();
    let cache = load_cache(&path).unwrap();
    assert_eq!(cache.n_samples(), 3);
    assert_eq!(cache.feature_dim(), 2);
    assert_eq!(cache.n_classes(), 2);
    assert_eq!(cache.labels(), &[1, 0, 1]);
    assert_eq!(cache.features().as_slice().unwrap(), &feats);
    assert_eq!(cache.logits().unwrap().as_slice().unwrap(), &logits);
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 28 + 12 + 24 + 24);
}

#[test]
fn truncated_and_foreign_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let good = feature_file(&[0, 1], &[1.0, 2.0, 3.0, 4.0], 2, 2, None);

    let short = dir.path().join("short.dxfc");
    std::fs::write(&short, &good[..good.len() - 2]).unwrap();
    assert!(matches!(load_cache(&short), Err(Error::Corrupt(_))));

    let label = dir.path().join("label.dxfc");
    std::fs::write(&label, feature_file(&[0, 5], &[1.0, 2.0, 3.0, 4.0], 2, 2, None)).unwrap();
    assert!(load_cache(&label).is_err());

    let foreign = dir.path().join("foreign.dxfc");
    let mut bytes = good.clone();
    bytes[..4].copy_from_slice(b"PK\x03\x04");
    std::fs::write(&foreign, bytes).unwrap();
    assert!(matches!(load_cache(&foreign), Err(Error::Format(_))));

    let newer = dir.path().join("newer.dxfc");
    let mut bytes = good;
    bytes[4] = 2;
    std::fs::write(&newer, bytes).unwrap();
    assert!(load_cache(&newer).is_err());
}

#[test]
fn exporter_gradient_cache_is_read_verbatim() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt3.dxgc");
    let mut b = b"DXGC".to_vec();
    b.extend(1u32.to_le_bytes());
    b.extend(2u64.to_le_bytes());
    b.extend(3u32.to_le_bytes());
    b.extend(3u32.to_le_bytes());
    b.extend(0.125f32.to_le_bytes());
    b.extend(42u64.to_le_bytes());
    assert_eq!(b.len(), 36);
    b.extend(le_f32(&[1.0, 2.0, 3.0, -1.0, -2.0, -3.0]));
    std::fs::write(&path, b).unwrap();
    let g = load_gradients(&path).unwrap();
    assert_eq!((g.n_samples(), g.proj_dim()), (2, 3));
    assert_eq!(g.checkpoint_id, 3);
    assert_eq!(g.step_size, 0.125);
    assert_eq!(g.projection_seed, 42);
    assert_eq!(g.grads()[[1, 2]], -3.0);
}

fn write_manifest(dir: &Path) {
    std::fs::write(
        dir.join("network.toml"),
        r#"
input_shape = [2]
feature_cut = 1

[[layers]]
kind = "dense"
in_features = 2
out_features = 2
weight = "w0.f32"
bias = "b0.f32"

[[layers]]
kind = "relu"

[[layers]]
kind = "dense"
in_features = 2
out_features = 2
weight = "w1.f32"
bias = "b1.f32"
"#,
    )
    .unwrap();
    std::fs::write(dir.join("w0.f32"), le_f32(&[1.0, -1.0, 0.5, 2.0])).unwrap();
    std::fs::write(dir.join("b0.f32"), le_f32(&[0.0, -0.5])).unwrap();
    std::fs::write(dir.join("w1.f32"), le_f32(&[2.0, 1.0, -1.0, 1.0])).unwrap();
    std::fs::write(dir.join("b1.f32"), le_f32(&[0.0, 0.0])).unwrap();
}

#[test]
fn manifest_network_matches_hand_computation() {
    let dir = tempfile::tempdir().unwrap();
    write_manifest(dir.path());
    let net = load_network(dir.path().join("network.toml")).unwrap();
    assert_eq!(net.feature_dim(), 2);
    assert_eq!(net.output_dim(), 2);

    // h = relu([3 - 1, 1.5 + 2 - 0.5]) = [2, 3]; out = [2*2 + 3, -2 + 3]
    let x = ArrayD::from_shape_vec(IxDyn(&[2]), vec![3.0, 1.0]).unwrap();
    let trace = net.forward(&x).unwrap();
    assert_eq!(trace.features(), array![2.0, 3.0]);
    assert_eq!(trace.output().iter().copied().collect::<Vec<_>>(), vec![7.0, 1.0]);

    // Epsilon-0 LRP: the top layer splits 7 as [4, 3]. Denominators are the
    // bias-free pre-activations [2, 3.5], so relevance is conserved exactly.
    let start = array![7.0, 0.0];
    let h = lrp_backward(&net, &trace, &start, Composite::Uniform { rule: Rule::Epsilon { epsilon: 0.0 } }).unwrap();
    let r: Vec<f64> = h.relevance.iter().copied().collect();
    let expected = [4.0 * 3.0 / 2.0 + 3.0 * 1.5 / 3.5, 4.0 * -1.0 / 2.0 + 3.0 * 2.0 / 3.5];
    assert!((r[0] - expected[0]).abs() < 1e-12 && (r[1] - expected[1]).abs() < 1e-12, "{r:?}");
    assert!((r[0] + r[1] - 7.0).abs() < 1e-12);
}

#[test]
fn manifest_with_wrong_tensor_size_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_manifest(dir.path());
    std::fs::write(dir.path().join("w1.f32"), le_f32(&[2.0, 1.0, -1.0])).unwrap();
    let err = load_network(dir.path().join("network.toml")).unwrap_err();
    assert!(err.to_string().contains("w1.f32"), "{err}");
}

#[test]
fn model_and_attribution_files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let train = dualxda::synth::gaussian_blobs(&dualxda::synth::BlobSpec { n: 60, dim: 5, ..Default::default() }, 2);
    let test = dualxda::synth::gaussian_blobs(&dualxda::synth::BlobSpec { n: 7, dim: 5, ..Default::default() }, 9);
    let sol = solve(&train, &SolverOptions { c: 0.05, ..SolverOptions::default() }).unwrap();
    let model = SurrogateModel::from_solution(&sol, &train).unwrap();
    save_model(&model, dir.path().join("m.dxda")).unwrap();
    let back = load_model(dir.path().join("m.dxda")).unwrap();
    let attr = attribute_batch(&back, train.n_samples(), &test, &TargetClasses::Predicted).unwrap();

    // Row sums recover the surrogate logit of the target class.
    let feats = test.features_f64();
    for (r, &c) in attr.target_classes.iter().enumerate() {
        let logit = back.logits(feats.row(r))[c];
        let sum: f64 = attr.scores.row(r).sum();
        assert!((sum - logit).abs() <= 1e-9 * (1.0 + logit.abs()));
    }

    save_attributions(&attr, dir.path().join("a.dxat")).unwrap();
    let again = load_attributions(dir.path().join("a.dxat")).unwrap();
    assert_eq!(again.target_classes, attr.target_classes);
    let diff: Array1<f64> = (&again.scores - &attr.scores).iter().map(|v| v.abs()).collect();
    assert!(diff.iter().all(|&v| v <= 1e-6));
}
