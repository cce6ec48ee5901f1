use ndarray::{Array1, Array2, Array4, ArrayD, IxDyn};

use crate::error::{Error, Result};

/// One layer of a sequential network. Tensors are single samples: dense
/// layers act on vectors, conv and pooling layers on `[channels, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// `weight` is out x in.
    Dense { weight: Array2<f64>, bias: Array1<f64> },
    /// `weight` is out x in x kh x kw; zero padding on both sides.
    Conv2d { weight: Array4<f64>, bias: Array1<f64>, stride: usize, padding: usize },
    Relu,
    Flatten,
    MaxPool2d { kernel: usize, stride: usize },
    AvgPool2d { kernel: usize, stride: usize },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Dense { .. } => "dense",
            Layer::Conv2d { .. } => "conv2d",
            Layer::Relu => "relu",
            Layer::Flatten => "flatten",
            Layer::MaxPool2d { .. } => "maxpool2d",
            Layer::AvgPool2d { .. } => "avgpool2d",
        }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self, Layer::Dense { .. } | Layer::Conv2d { .. })
    }

    fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match self {
            Layer::Dense { weight, bias } => {
                if input.len() != 1 || input[0] != weight.ncols() {
                    return Err(format!("expects a vector of length {}, got shape {input:?}", weight.ncols()));
                }
                if bias.len() != weight.nrows() {
                    return Err(format!("bias length {} for {} outputs", bias.len(), weight.nrows()));
                }
                Ok(vec![weight.nrows()])
            }
            Layer::Conv2d { weight, bias, stride, padding } => {
                let (o, c, kh, kw) = weight.dim();
                if input.len() != 3 || input[0] != c {
                    return Err(format!("expects [{c}, H, W], got shape {input:?}"));
                }
                if bias.len() != o {
                    return Err(format!("bias length {} for {o} output channels", bias.len()));
                }
                if *stride == 0 {
                    return Err("stride must be positive".into());
                }
                let (h, w) = (input[1] + 2 * padding, input[2] + 2 * padding);
                if h < kh || w < kw {
                    return Err(format!("kernel {kh}x{kw} larger than padded input {h}x{w}"));
                }
                Ok(vec![o, (h - kh) / stride + 1, (w - kw) / stride + 1])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::MaxPool2d { kernel, stride } | Layer::AvgPool2d { kernel, stride } => {
                if input.len() != 3 {
                    return Err(format!("expects [C, H, W], got shape {input:?}"));
                }
                if *kernel == 0 || *stride == 0 || input[1] < *kernel || input[2] < *kernel {
                    return Err(format!("pool kernel {kernel} / stride {stride} invalid for shape {input:?}"));
                }
                Ok(vec![input[0], (input[1] - kernel) / stride + 1, (input[2] - kernel) / stride + 1])
            }
        }
    }
}

/// Connections of a linear layer: for each output unit, `(input index, weight)`
/// pairs over its receptive field (padding positions excluded), plus the bias.
#[derive(Debug, Clone)]
pub(crate) struct LinearPlan {
    pub(crate) conns: Vec<Vec<(usize, f64)>>,
    pub(crate) bias: Vec<f64>,
}

/// A sequential network split at `feature_cut`: layers `0..=feature_cut` form
/// the feature extractor, the rest the head.
#[derive(Debug, Clone)]
pub struct Network {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    feature_cut: usize,
    shapes: Vec<Vec<usize>>,
    plans: Vec<Option<LinearPlan>>,
}

/// Per-layer tensors of one forward pass: `activations[0]` is the input,
/// `activations[l + 1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    pub activations: Vec<ArrayD<f64>>,
    feature_cut: usize,
}

impl ActivationTrace {
    pub fn output(&self) -> &ArrayD<f64> {
        self.activations.last().expect("trace holds the input")
    }

    /// Flattened output of the feature extractor.
    pub fn features(&self) -> Array1<f64> {
        self.activations[self.feature_cut + 1].iter().copied().collect()
    }
}

impl Network {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, feature_cut: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("network has no layers".into()));
        }
        if feature_cut >= layers.len() {
            return Err(Error::Validation(format!(
                "feature_cut {feature_cut} is past the last layer (network has {} layers)",
                layers.len()
            )));
        }
        let mut shapes = vec![input_shape.clone()];
        for (l, layer) in layers.iter().enumerate() {
            if let Layer::Dense { weight, bias } = layer {
                check_finite(weight.iter().chain(bias.iter()), l)?;
            }
            if let Layer::Conv2d { weight, bias, .. } = layer {
                check_finite(weight.iter().chain(bias.iter()), l)?;
            }
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|m| Error::Validation(format!("layer {l} ({}): {m}", layer.kind())))?;
            shapes.push(next);
        }
        let plans = layers.iter().zip(&shapes).map(|(layer, shape)| plan(layer, shape)).collect();
        Ok(Network { input_shape, layers, feature_cut, shapes, plans })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn feature_cut(&self) -> usize {
        self.feature_cut
    }

    /// Shape of the tensor entering layer `l` (`l = len` gives the output shape).
    pub fn shape_at(&self, l: usize) -> &[usize] {
        &self.shapes[l]
    }

    pub fn feature_dim(&self) -> usize {
        self.shapes[self.feature_cut + 1].iter().product()
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().unwrap().iter().product()
    }

    pub(crate) fn plan(&self, l: usize) -> Option<&LinearPlan> {
        self.plans[l].as_ref()
    }

    pub fn forward(&self, input: &ArrayD<f64>) -> Result<ActivationTrace> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::Dimension(format!(
                "input shape {:?}, network expects {:?}",
                input.shape(),
                self.input_shape
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("input contains non-finite values".into()));
        }
        let mut acts = vec![input.as_standard_layout().to_owned()];
        for (l, layer) in self.layers.iter().enumerate() {
            let a = acts.last().unwrap();
            let out_shape = IxDyn(&self.shapes[l + 1]);
            let out = match layer {
                Layer::Dense { .. } | Layer::Conv2d { .. } => {
                    let p = self.plans[l].as_ref().unwrap();
                    let flat = a.as_slice().unwrap();
                    let v: Vec<f64> = p
                        .conns
                        .iter()
                        .zip(&p.bias)
                        .map(|(c, b)| c.iter().map(|&(j, w)| flat[j] * w).sum::<f64>() + b)
                        .collect();
                    ArrayD::from_shape_vec(out_shape, v).unwrap()
                }
                Layer::Relu => a.mapv(|v| v.max(0.0)),
                Layer::Flatten => ArrayD::from_shape_vec(out_shape, a.iter().copied().collect()).unwrap(),
                Layer::MaxPool2d { kernel, stride } => {
                    let shape = &self.shapes[l];
                    let s = a.as_slice().unwrap();
                    let v = pool_windows(shape, *kernel, *stride).map(|w| s[argmax_first(&w, s)]).collect();
                    ArrayD::from_shape_vec(out_shape, v).unwrap()
                }
                Layer::AvgPool2d { kernel, stride } => {
                    let shape = &self.shapes[l];
                    let s = a.as_slice().unwrap();
                    let v = pool_windows(shape, *kernel, *stride)
                        .map(|w| w.iter().map(|&j| s[j]).sum::<f64>() / w.len() as f64)
                        .collect();
                    ArrayD::from_shape_vec(out_shape, v).unwrap()
                }
            };
            acts.push(out);
        }
        Ok(ActivationTrace { activations: acts, feature_cut: self.feature_cut })
    }
}

fn check_finite<'a>(mut values: impl Iterator<Item = &'a f64>, l: usize) -> Result<()> {
    if values.any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("layer {l} has non-finite parameters")));
    }
    Ok(())
}

fn plan(layer: &Layer, in_shape: &[usize]) -> Option<LinearPlan> {
    match layer {
        Layer::Dense { weight, bias } => Some(LinearPlan {
            conns: weight.outer_iter().map(|row| row.iter().copied().enumerate().collect()).collect(),
            bias: bias.to_vec(),
        }),
        Layer::Conv2d { weight, bias, stride, padding } => {
            let (o, c, kh, kw) = weight.dim();
            let (h, w) = (in_shape[1], in_shape[2]);
            let oh = (h + 2 * padding - kh) / stride + 1;
            let ow = (w + 2 * padding - kw) / stride + 1;
            let mut conns = Vec::with_capacity(o * oh * ow);
            let mut biases = Vec::with_capacity(o * oh * ow);
            for oc in 0..o {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut v = Vec::with_capacity(c * kh * kw);
                        for ic in 0..c {
                            for ky in 0..kh {
                                let iy = (y * stride + ky) as isize - *padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (x * stride + kx) as isize - *padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    v.push(((ic * h + iy as usize) * w + ix as usize, weight[[oc, ic, ky, kx]]));
                                }
                            }
                        }
                        conns.push(v);
                        biases.push(bias[oc]);
                    }
                }
            }
            Some(LinearPlan { conns, bias: biases })
        }
        _ => None,
    }
}

/// Flat input indices of every pooling window, in output order.
pub(crate) fn pool_windows(shape: &[usize], kernel: usize, stride: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    (0..c).flat_map(move |ch| {
        (0..oh).flat_map(move |y| {
            (0..ow).map(move |x| {
                let mut idx = Vec::with_capacity(kernel * kernel);
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        idx.push((ch * h + y * stride + ky) * w + x * stride + kx);
                    }
                }
                idx
            })
        })
    })
}

/// Window position of the maximum, first occurrence on ties.
pub(crate) fn argmax_first(window: &[usize], values: &[f64]) -> usize {
    let mut best = window[0];
    for &j in &window[1..] {
        if values[j] > values[best] {
            best = j;
        }
    }
    best
}
