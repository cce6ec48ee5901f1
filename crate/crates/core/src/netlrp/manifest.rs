//! Network manifests: a TOML file listing the layers in order plus raw
//! little-endian f32 tensor files (row-major; conv weights out x in x kh x kw)
//! referenced by paths relative to the manifest.
//!
//! ```toml
//! input_shape = [1, 8, 8]
//! feature_cut = 4
//!
//! [[layers]]
//! kind = "conv2d"
//! in_channels = 1
//! out_channels = 4
//! kernel = [3, 3]
//! stride = 1
//! padding = 1
//! weight = "layer0.weight.f32"
//! bias = "layer0.bias.f32"
//!
//! [[layers]]
//! kind = "relu"
//! ```

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array4};
use serde::{Deserialize, Serialize};

use super::network::{Layer, Network};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    input_shape: Vec<usize>,
    feature_cut: usize,
    layers: Vec<LayerSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayerSpec {
    Dense {
        in_features: usize,
        out_features: usize,
        weight: String,
        bias: String,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
        weight: String,
        bias: String,
    },
    Relu,
    Flatten,
    Maxpool2d {
        kernel: usize,
        stride: usize,
    },
    Avgpool2d {
        kernel: usize,
        stride: usize,
    },
}

pub fn load_network(manifest: impl AsRef<Path>) -> Result<Network> {
    let path = manifest.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let m: Manifest = toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut layers = Vec::with_capacity(m.layers.len());
    for spec in m.layers {
        layers.push(match spec {
            LayerSpec::Dense { in_features, out_features, weight, bias } => Layer::Dense {
                weight: Array2::from_shape_vec((out_features, in_features), read_tensor(dir, &weight, out_features * in_features)?)
                    .expect("length checked"),
                bias: Array1::from(read_tensor(dir, &bias, out_features)?),
            },
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding, weight, bias } => {
                let shape = (out_channels, in_channels, kernel[0], kernel[1]);
                let len = out_channels * in_channels * kernel[0] * kernel[1];
                Layer::Conv2d {
                    weight: Array4::from_shape_vec(shape, read_tensor(dir, &weight, len)?).expect("length checked"),
                    bias: Array1::from(read_tensor(dir, &bias, out_channels)?),
                    stride,
                    padding,
                }
            }
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Maxpool2d { kernel, stride } => Layer::MaxPool2d { kernel, stride },
            LayerSpec::Avgpool2d { kernel, stride } => Layer::AvgPool2d { kernel, stride },
        });
    }
    Network::new(m.input_shape, layers, m.feature_cut)
}

/// Writes `network.toml` and one tensor file per parameter into `dir`;
/// returns the manifest path.
pub fn save_network(net: &Network, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut specs = Vec::new();
    for (l, layer) in net.layers().iter().enumerate() {
        let w_name = format!("layer{l}.weight.f32");
        let b_name = format!("layer{l}.bias.f32");
        specs.push(match layer {
            Layer::Dense { weight, bias } => {
                write_tensor(&dir.join(&w_name), weight.iter())?;
                write_tensor(&dir.join(&b_name), bias.iter())?;
                LayerSpec::Dense { in_features: weight.ncols(), out_features: weight.nrows(), weight: w_name, bias: b_name }
            }
            Layer::Conv2d { weight, bias, stride, padding } => {
                let (o, c, kh, kw) = weight.dim();
                write_tensor(&dir.join(&w_name), weight.iter())?;
                write_tensor(&dir.join(&b_name), bias.iter())?;
                LayerSpec::Conv2d {
                    in_channels: c,
                    out_channels: o,
                    kernel: [kh, kw],
                    stride: *stride,
                    padding: *padding,
                    weight: w_name,
                    bias: b_name,
                }
            }
            Layer::Relu => LayerSpec::Relu,
            Layer::Flatten => LayerSpec::Flatten,
            Layer::MaxPool2d { kernel, stride } => LayerSpec::Maxpool2d { kernel: *kernel, stride: *stride },
            Layer::AvgPool2d { kernel, stride } => LayerSpec::Avgpool2d { kernel: *kernel, stride: *stride },
        });
    }
    let m = Manifest { input_shape: net.input_shape().to_vec(), feature_cut: net.feature_cut(), layers: specs };
    let text = toml::to_string(&m).map_err(|e| Error::Format(e.to_string()))?;
    let path = dir.join("network.toml");
    std::fs::write(&path, text)?;
    Ok(path)
}

/// Reads `len` little-endian f32 values.
pub fn read_tensor(dir: &Path, name: &str, len: usize) -> Result<Vec<f64>> {
    let path = dir.join(name);
    let bytes = std::fs::read(&path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("tensor file {}: {e}", path.display()))))?;
    if bytes.len() != 4 * len {
        return Err(Error::Validation(format!(
            "tensor file {} holds {} bytes, expected {} for {len} values",
            path.display(),
            bytes.len(),
            4 * len
        )));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect())
}

pub fn write_tensor<'a>(path: &Path, values: impl Iterator<Item = &'a f64>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(|&v| (v as f32).to_le_bytes()).collect();
    std::fs::write(path, bytes)?;
    Ok(())
}
