//! Seeded synthetic feature caches (Gaussian blobs) for tests, benchmarks and demos.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::store::FeatureCache;

#[derive(Debug, Clone)]
pub struct BlobSpec {
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
    /// Norm of each blob centre.
    pub separation: f64,
    /// Per-coordinate standard deviation around the centre.
    pub noise: f64,
    /// Each class is a union of this many blobs.
    pub subclasses: usize,
}

impl Default for BlobSpec {
    fn default() -> Self {
        BlobSpec { n: 100, dim: 4, classes: 3, separation: 4.0, noise: 1.0, subclasses: 1 }
    }
}

/// Blob centres drawn once; samples can be drawn repeatedly (train/test splits).
#[derive(Debug, Clone)]
pub struct BlobGenerator {
    spec: BlobSpec,
    /// (classes * subclasses) x dim.
    centres: Array2<f64>,
}

impl BlobGenerator {
    pub fn new(spec: BlobSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b10b);
        let groups = spec.classes * spec.subclasses.max(1);
        let mut centres = Array2::zeros((groups, spec.dim));
        for mut row in centres.outer_iter_mut() {
            row.mapv_inplace(|_| -> f64 { StandardNormal.sample(&mut rng) });
            let norm = row.dot(&row).sqrt().max(1e-12);
            row.mapv_inplace(|v: f64| v * spec.separation / norm);
        }
        BlobGenerator { spec, centres }
    }

    pub fn centres(&self) -> &Array2<f64> {
        &self.centres
    }

    /// Draws `n` samples; returns the cache and the subclass (blob) of every sample.
    /// Labels cycle through the classes so that every class is represented.
    pub fn sample(&self, n: usize, seed: u64) -> (FeatureCache, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let subs = self.spec.subclasses.max(1);
        let mut features = Array2::<f32>::zeros((n, self.spec.dim));
        let mut labels = Vec::with_capacity(n);
        let mut groups = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % self.spec.classes;
            let group = class * subs + rng.gen_range(0..subs);
            for j in 0..self.spec.dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                features[[i, j]] = (self.centres[[group, j]] + self.spec.noise * z) as f32;
            }
            labels.push(class);
            groups.push(group);
        }
        let cache = FeatureCache::new(features, labels, self.spec.classes, None)
            .expect("synthetic blobs are always valid");
        (cache, groups)
    }
}

/// `spec.n` samples from freshly seeded blobs.
pub fn gaussian_blobs(spec: &BlobSpec, seed: u64) -> FeatureCache {
    BlobGenerator::new(spec.clone(), seed).sample(spec.n, seed.wrapping_add(1)).0
}

/// Uniform random matrix in `[-1, 1)`, handy for test vectors.
pub fn uniform_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

/// Randomly initialised conv net on `[channels, side, side]` inputs (`side`
/// divisible by 4): conv-relu-maxpool, conv-relu-maxpool, flatten, dense-relu,
/// dense. The features are the output of the hidden dense layer's ReLU.
pub fn conv_net(channels: usize, side: usize, hidden: usize, classes: usize, seed: u64) -> crate::netlrp::Network {
    use crate::netlrp::{Layer, Network};
    use ndarray::{Array1, Array4};

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |fan_in: usize| -> f64 {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * (2.0 / fan_in as f64).sqrt()
    };
    let (c1, c2) = (4, 8);
    let flat = c2 * (side / 4) * (side / 4);
    let conv1 = Array4::from_shape_simple_fn((c1, channels, 3, 3), || normal(9 * channels));
    let conv2 = Array4::from_shape_simple_fn((c2, c1, 3, 3), || normal(9 * c1));
    let dense1 = Array2::from_shape_simple_fn((hidden, flat), || normal(flat));
    let dense2 = Array2::from_shape_simple_fn((classes, hidden), || normal(hidden));
    let layers = vec![
        Layer::Conv2d { weight: conv1, bias: Array1::from_elem(c1, 0.01), stride: 1, padding: 1 },
        Layer::Relu,
        Layer::MaxPool2d { kernel: 2, stride: 2 },
        Layer::Conv2d { weight: conv2, bias: Array1::from_elem(c2, 0.01), stride: 1, padding: 1 },
        Layer::Relu,
        Layer::MaxPool2d { kernel: 2, stride: 2 },
        Layer::Flatten,
        Layer::Dense { weight: dense1, bias: Array1::from_elem(hidden, 0.01) },
        Layer::Relu,
        Layer::Dense { weight: dense2, bias: Array1::zeros(classes) },
    ];
    Network::new(vec![channels, side, side], layers, 8).expect("conv_net shapes are consistent")
}

/// `n` images of shape `[channels, side, side]` in `[0, 1]`: a per-class
/// template plus uniform noise. Labels cycle through the classes.
pub fn class_images(n: usize, channels: usize, side: usize, classes: usize, seed: u64) -> (Vec<ndarray::ArrayD<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates: Vec<ndarray::Array3<f64>> = (0..classes)
        .map(|_| ndarray::Array3::from_shape_simple_fn((channels, side, side), || rng.gen_range(0.0..1.0)))
        .collect();
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % classes;
        let img = templates[class].mapv(|t| 0.7 * t + 0.3 * rng.gen_range(0.0..1.0));
        images.push(img.into_dyn());
        labels.push(class);
    }
    (images, labels)
}
