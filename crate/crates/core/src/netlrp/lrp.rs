use ndarray::{Array1, ArrayD, IxDyn};
use serde::Serialize;

use super::network::{argmax_first, pool_windows, ActivationTrace, Layer, LinearPlan, Network};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Redistribution rule of a linear layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Rule {
    /// `R_j = Σ_k z_jk / (z_k + ε sign(z_k)) R_k`, `z_jk = a_j w_jk`, bias excluded from `z_k`.
    Epsilon { epsilon: f64 },
    /// Positive contributions only.
    ZPlus,
    /// Uniform over the receptive field.
    Flat,
}

/// Assignment of rules to the linear layers of a network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "composite", rename_all = "kebab-case")]
pub enum Composite {
    Uniform { rule: Rule },
    /// Flat on the first linear layer, z-plus on later conv layers, epsilon on later dense layers.
    EpsilonPlusFlat { epsilon: f64 },
}

impl Default for Composite {
    fn default() -> Self {
        Composite::EpsilonPlusFlat { epsilon: DEFAULT_EPSILON }
    }
}

impl Composite {
    pub fn rule_for(&self, net: &Network, l: usize) -> Rule {
        match *self {
            Composite::Uniform { rule } => rule,
            Composite::EpsilonPlusFlat { epsilon } => {
                let first = net.layers().iter().position(Layer::is_parameterized);
                match &net.layers()[l] {
                    _ if Some(l) == first => Rule::Flat,
                    Layer::Conv2d { .. } => Rule::ZPlus,
                    _ => Rule::Epsilon { epsilon },
                }
            }
        }
    }
}

/// Input-space relevance of one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// Same shape as the network input.
    pub relevance: ArrayD<f64>,
    pub total_relevance: f64,
    /// Relevance total at each layer boundary, from the input (index 0) up to
    /// the layer where propagation started.
    pub layer_totals: Vec<f64>,
    /// Output units whose z-plus denominator vanished and were spread flat instead.
    pub flat_fallbacks: usize,
    /// Output units whose epsilon denominator was exactly zero (relevance dropped).
    pub dropped_units: usize,
}

impl Heatmap {
    pub fn zeros(shape: &[usize]) -> Self {
        Heatmap {
            relevance: ArrayD::zeros(IxDyn(shape)),
            total_relevance: 0.0,
            layer_totals: Vec::new(),
            flat_fallbacks: 0,
            dropped_units: 0,
        }
    }
}

/// Propagates `output_relevance` from the network output back to the input.
pub fn lrp_backward(net: &Network, trace: &ActivationTrace, output_relevance: &Array1<f64>, composite: Composite) -> Result<Heatmap> {
    lrp_from_layer(net, trace, net.layers().len(), output_relevance, composite)
}

/// Propagates `relevance`, given on the (flattened) output of layer
/// `layer_end - 1`, back through layers `layer_end - 1, ..., 0`.
pub fn lrp_from_layer(
    net: &Network,
    trace: &ActivationTrace,
    layer_end: usize,
    relevance: &Array1<f64>,
    composite: Composite,
) -> Result<Heatmap> {
    if layer_end > net.layers().len() {
        return Err(Error::OutOfRange { index: layer_end, len: net.layers().len() + 1 });
    }
    if trace.activations.len() != net.layers().len() + 1
        || trace.activations.iter().enumerate().any(|(l, a)| a.shape() != net.shape_at(l))
    {
        return Err(Error::Dimension("activation trace does not belong to this network".into()));
    }
    let width: usize = net.shape_at(layer_end).iter().product();
    if relevance.len() != width {
        return Err(Error::Dimension(format!("relevance of length {}, layer output has {width} units", relevance.len())));
    }
    if relevance.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("relevance contains non-finite values".into()));
    }
    let mut r = relevance.to_vec();
    let mut totals = vec![r.iter().sum::<f64>()];
    let mut fallbacks = 0;
    let mut dropped = 0;
    for l in (0..layer_end).rev() {
        let a = trace.activations[l].as_slice().expect("trace is contiguous");
        let in_shape = net.shape_at(l);
        let n_in = a.len();
        r = match &net.layers()[l] {
            Layer::Relu | Layer::Flatten => r,
            Layer::MaxPool2d { kernel, stride } => {
                let mut out = vec![0.0; n_in];
                for (w, rk) in pool_windows(in_shape, *kernel, *stride).zip(&r) {
                    out[argmax_first(&w, a)] += rk;
                }
                out
            }
            Layer::AvgPool2d { kernel, stride } => {
                let mut out = vec![0.0; n_in];
                for (w, rk) in pool_windows(in_shape, *kernel, *stride).zip(&r) {
                    let share = rk / w.len() as f64;
                    for j in w {
                        out[j] += share;
                    }
                }
                out
            }
            Layer::Dense { .. } | Layer::Conv2d { .. } => {
                let plan = net.plan(l).expect("linear layers have a plan");
                linear_rule(plan, a, &r, composite.rule_for(net, l), &mut fallbacks, &mut dropped)
            }
        };
        totals.push(r.iter().sum());
    }
    totals.reverse();
    let relevance = ArrayD::from_shape_vec(IxDyn(net.input_shape()), r).expect("input-sized relevance");
    Ok(Heatmap { total_relevance: relevance.sum(), relevance, layer_totals: totals, flat_fallbacks: fallbacks, dropped_units: dropped })
}

fn linear_rule(plan: &LinearPlan, a: &[f64], r: &[f64], rule: Rule, fallbacks: &mut usize, dropped: &mut usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    let flat = |out: &mut [f64], conns: &[(usize, f64)], rk: f64| {
        if conns.is_empty() {
            return;
        }
        let share = rk / conns.len() as f64;
        for &(j, _) in conns {
            out[j] += share;
        }
    };
    for (conns, &rk) in plan.conns.iter().zip(r) {
        if rk == 0.0 {
            continue;
        }
        match rule {
            Rule::Flat => flat(&mut out, conns, rk),
            Rule::Epsilon { epsilon } => {
                let z: f64 = conns.iter().map(|&(j, w)| a[j] * w).sum();
                let sign = if z >= 0.0 { 1.0 } else { -1.0 };
                let den = z + epsilon * sign;
                if den == 0.0 {
                    *dropped += 1;
                    continue;
                }
                let s = rk / den;
                for &(j, w) in conns {
                    out[j] += a[j] * w * s;
                }
            }
            Rule::ZPlus => {
                let z: f64 = conns.iter().map(|&(j, w)| (a[j] * w).max(0.0)).sum();
                if z <= 0.0 {
                    *fallbacks += 1;
                    flat(&mut out, conns, rk);
                    continue;
                }
                let s = rk / z;
                for &(j, w) in conns {
                    out[j] += (a[j] * w).max(0.0) * s;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2, Array3, Array4};

    fn dense(w: Array2<f64>) -> Network {
        let out = w.nrows();
        Network::new(vec![w.ncols()], vec![Layer::Dense { weight: w, bias: Array1::zeros(out) }], 0).unwrap()
    }

    fn run(net: &Network, x: ArrayD<f64>, r: Array1<f64>, rule: Rule) -> Heatmap {
        let t = net.forward(&x).unwrap();
        lrp_backward(net, &t, &r, Composite::Uniform { rule }).unwrap()
    }

    #[test]
    fn epsilon_hand_example() {
        let h = run(&dense(array![[1.0, 2.0]]), array![1.0, 1.0].into_dyn(), array![3.0], Rule::Epsilon { epsilon: 0.0 });
        assert_eq!(h.relevance, array![1.0, 2.0].into_dyn());
        assert_eq!(h.total_relevance, 3.0);
    }

    #[test]
    fn flat_hand_example() {
        let h = run(&dense(Array2::from_elem((1, 4), 0.3)), array![1.0, -2.0, 0.0, 5.0].into_dyn(), array![8.0], Rule::Flat);
        assert_eq!(h.relevance, array![2.0, 2.0, 2.0, 2.0].into_dyn());
    }

    #[test]
    fn zplus_hand_example_and_fallback() {
        let h = run(&dense(array![[1.0, -2.0]]), array![1.0, 1.0].into_dyn(), array![5.0], Rule::ZPlus);
        assert_eq!(h.relevance, array![5.0, 0.0].into_dyn());
        assert_eq!(h.flat_fallbacks, 0);
        let h = run(&dense(array![[-1.0, -2.0]]), array![1.0, 1.0].into_dyn(), array![4.0], Rule::ZPlus);
        assert_eq!(h.relevance, array![2.0, 2.0].into_dyn());
        assert_eq!(h.flat_fallbacks, 1);
    }

    #[test]
    fn zero_denominator_is_dropped() {
        let h = run(&dense(array![[1.0, -1.0]]), array![1.0, 1.0].into_dyn(), array![5.0], Rule::Epsilon { epsilon: 0.0 });
        assert_eq!(h.dropped_units, 1);
        assert_eq!(h.total_relevance, 0.0);
    }

    #[test]
    fn bias_does_not_leak_with_zero_epsilon() {
        let net = Network::new(
            vec![3],
            vec![Layer::Dense { weight: array![[0.5, -1.0, 2.0], [1.0, 1.0, 1.0]], bias: array![10.0, -3.0] }],
            0,
        )
        .unwrap();
        let h = run(&net, array![1.0, 2.0, 0.5].into_dyn(), array![1.5, -2.0], Rule::Epsilon { epsilon: 0.0 });
        assert!((h.total_relevance + 0.5).abs() < 1e-12);
    }

    #[test]
    fn maxpool_routes_to_first_winner() {
        let net = Network::new(vec![1, 2, 2], vec![Layer::MaxPool2d { kernel: 2, stride: 2 }], 0).unwrap();
        let x = Array3::from_shape_vec((1, 2, 2), vec![1.0, 3.0, 3.0, 0.0]).unwrap().into_dyn();
        let h = run(&net, x, array![7.0], Rule::Flat);
        assert_eq!(h.relevance.iter().copied().collect::<Vec<_>>(), vec![0.0, 7.0, 0.0, 0.0]);
    }

    #[test]
    fn flat_conv_skips_padding() {
        // 3x3 kernel, padding 1 on a 2x2 image: every output sees 4 real pixels.
        let net = Network::new(
            vec![1, 2, 2],
            vec![Layer::Conv2d { weight: Array4::from_elem((1, 1, 3, 3), 1.0), bias: array![0.0], stride: 1, padding: 1 }],
            0,
        )
        .unwrap();
        let x = Array3::from_elem((1, 2, 2), 1.0).into_dyn();
        let h = run(&net, x, array![4.0, 0.0, 0.0, 0.0], Rule::Flat);
        assert_eq!(h.relevance.iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn composite_assignment() {
        let net = Network::new(
            vec![1, 4, 4],
            vec![
                Layer::Conv2d { weight: Array4::from_elem((2, 1, 3, 3), 0.1), bias: array![0.0, 0.0], stride: 1, padding: 1 },
                Layer::Relu,
                Layer::Conv2d { weight: Array4::from_elem((2, 2, 3, 3), 0.1), bias: array![0.0, 0.0], stride: 1, padding: 1 },
                Layer::Flatten,
                Layer::Dense { weight: Array2::from_elem((3, 32), 0.1), bias: Array1::zeros(3) },
            ],
            3,
        )
        .unwrap();
        let c = Composite::default();
        assert_eq!(c.rule_for(&net, 0), Rule::Flat);
        assert_eq!(c.rule_for(&net, 2), Rule::ZPlus);
        assert_eq!(c.rule_for(&net, 4), Rule::Epsilon { epsilon: DEFAULT_EPSILON });
    }
}
