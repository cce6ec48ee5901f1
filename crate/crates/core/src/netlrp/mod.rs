//! Small sequential networks (dense, conv, ReLU, pooling, flatten), layer-wise
//! relevance propagation and XDA paired heatmaps.

mod lrp;
mod manifest;
mod network;
mod render;
mod xda;

pub use lrp::{lrp_backward, lrp_from_layer, Composite, Heatmap, Rule, DEFAULT_EPSILON};
pub use manifest::{load_network, read_tensor, save_network, write_tensor};
pub use network::{ActivationTrace, Layer, Network};
pub use render::{export_heatmap, heatmap_image, render_pgm, render_ppm};
pub use xda::{surrogate_heatmap, xda_pair, xda_pair_traced, XdaPair};
