//! Paired input-space heatmaps for one DualDA attribution.
//!
//! The attribution `R_L = λ_ic (f_test · f_i)` is split over feature neurons as
//! `λ_ic f_test ⊙ f_i`, which sums to `R_L`. That vector is propagated back
//! through the feature extractor once on the test input and once on the
//! training input. Summed over support vectors, the test-side starting vectors
//! equal `w_c ⊙ f_test`, the starting vector of the surrogate-logit heatmap.

use ndarray::{Array1, ArrayD};

use super::lrp::{lrp_from_layer, Composite, Heatmap};
use super::network::{ActivationTrace, Network};
use crate::error::{Error, Result};
use crate::svm::SurrogateModel;

#[derive(Debug, Clone, PartialEq)]
pub struct XdaPair {
    pub test: Heatmap,
    pub train: Heatmap,
    /// `λ_ic (f_test · f_i)`.
    pub r_l: f64,
}

pub fn xda_pair(
    net: &Network,
    model: &SurrogateModel,
    x_test: &ArrayD<f64>,
    x_train: &ArrayD<f64>,
    train_index: usize,
    class: usize,
    composite: Composite,
) -> Result<XdaPair> {
    let test = net.forward(x_test)?;
    let train = net.forward(x_train)?;
    xda_pair_traced(net, model, &test, &train, train_index, class, composite)
}

/// As [`xda_pair`] with precomputed forward passes.
pub fn xda_pair_traced(
    net: &Network,
    model: &SurrogateModel,
    test: &ActivationTrace,
    train: &ActivationTrace,
    train_index: usize,
    class: usize,
    composite: Composite,
) -> Result<XdaPair> {
    check(net, model, class)?;
    let Some(s) = model.position(train_index) else {
        return Ok(XdaPair {
            test: Heatmap::zeros(net.input_shape()),
            train: Heatmap::zeros(net.input_shape()),
            r_l: 0.0,
        });
    };
    let lambda = model.lambda()[[s, class]];
    let init: Array1<f64> = (&test.features() * &train.features()) * lambda;
    let r_l = init.sum();
    let layer_end = net.feature_cut() + 1;
    Ok(XdaPair {
        test: lrp_from_layer(net, test, layer_end, &init, composite)?,
        train: lrp_from_layer(net, train, layer_end, &init, composite)?,
        r_l,
    })
}

/// Heatmap of the surrogate logit `w_c · f(x)`, started from `w_c ⊙ f(x)`.
pub fn surrogate_heatmap(net: &Network, model: &SurrogateModel, x: &ArrayD<f64>, class: usize, composite: Composite) -> Result<Heatmap> {
    check(net, model, class)?;
    let trace = net.forward(x)?;
    let init = &model.weights().row(class) * &trace.features();
    lrp_from_layer(net, &trace, net.feature_cut() + 1, &init, composite)
}

fn check(net: &Network, model: &SurrogateModel, class: usize) -> Result<()> {
    if net.feature_dim() != model.feature_dim() {
        return Err(Error::Dimension(format!(
            "network features have dimension {}, surrogate {}",
            net.feature_dim(),
            model.feature_dim()
        )));
    }
    if class >= model.n_classes() {
        return Err(Error::OutOfRange { index: class, len: model.n_classes() });
    }
    Ok(())
}
