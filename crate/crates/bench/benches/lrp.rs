use criterion::{criterion_group, criterion_main, Criterion};
use dualxda::netlrp::{lrp_backward, xda_pair, Composite};
use dualxda::synth::{class_images, conv_net};
use dualxda::SurrogateModel;
use ndarray::{Array1, Array2};

fn lrp(c: &mut Criterion) {
    let net = conv_net(3, 32, 64, 10, 3);
    let (images, _) = class_images(2, 3, 32, 10, 4);
    let trace = net.forward(&images[0]).unwrap();
    let out = trace.output().iter().copied().collect::<Array1<f64>>();
    let mut start = Array1::zeros(out.len());
    start[0] = out[0];

    c.bench_function("lrp/epsilon_plus_flat/3x32x32", |b| {
        b.iter(|| lrp_backward(&net, &trace, &start, Composite::default()).unwrap())
    });

    let d = net.feature_dim();
    let lambda = Array2::from_shape_fn((1, 10), |(_, k)| if k == 0 { 1e-3 } else if k == 1 { -1e-3 } else { 0.0 });
    let feats = Array2::from_shape_fn((1, d), |(_, j)| (j % 7) as f64 * 0.1);
    let model = SurrogateModel::new(1e-3, vec![0], lambda, feats).unwrap();
    c.bench_function("xda_pair/3x32x32", |b| {
        b.iter(|| xda_pair(&net, &model, &images[0], &images[1], 0, 0, Composite::default()).unwrap())
    });
}

criterion_group!(benches, lrp);
criterion_main!(benches);
