use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::spec::NetworkSpec;
use super::tensor::Tensor;
use crate::rng::Rng;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Learnable tensors, indexed by node id (`None` for parameter-free nodes).
#[derive(Debug, Clone)]
pub struct Params {
    layers: Vec<Option<LayerParams>>,
    /// Changes on every mutation; forward caches record it so a cache made
    /// before an update cannot be fed to backward.
    version: u64,
}

impl PartialEq for Params {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Params {
    /// Glorot-uniform weights, zero biases. Layers draw in graph order from
    /// one stream, so two specs with the same learnable layers in the same
    /// order receive identical parameters.
    pub fn init(net: &NetworkSpec, rng: &mut Rng) -> Self {
        let layers = net
            .nodes()
            .iter()
            .map(|node| {
                let (wshape, bshape) = node.layer.kind.param_shapes()?;
                let (fan_in, fan_out) = node.layer.kind.fans();
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let n: usize = wshape.iter().product();
                let data = (0..n).map(|_| rng.uniform(-limit, limit)).collect();
                Some(LayerParams {
                    weight: Tensor::new(wshape, data),
                    bias: Tensor::zeros(&bshape),
                })
            })
            .collect();
        Self {
            layers,
            version: fresh_version(),
        }
    }

    pub fn from_layers(layers: Vec<Option<LayerParams>>) -> Self {
        Self {
            layers,
            version: fresh_version(),
        }
    }

    /// Whether the parameter slots line up with `net`'s learnable layers.
    pub fn matches(&self, net: &NetworkSpec) -> bool {
        self.layers.len() == net.nodes().len()
            && net.nodes().iter().zip(&self.layers).all(|(node, p)| {
                match (node.layer.kind.param_shapes(), p) {
                    (None, None) => true,
                    (Some((w, b)), Some(p)) => p.weight.shape() == w && p.bias.shape() == b,
                    _ => false,
                }
            })
    }

    pub fn layers(&self) -> &[Option<LayerParams>] {
        &self.layers
    }

    pub fn layer(&self, id: usize) -> Option<&LayerParams> {
        self.layers.get(id).and_then(|p| p.as_ref())
    }

    pub fn layer_mut(&mut self, id: usize) -> Option<&mut LayerParams> {
        self.version = fresh_version();
        self.layers.get_mut(id).and_then(|p| p.as_mut())
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn count(&self) -> usize {
        self.layers
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    /// Plain SGD step: `p -= lr * g` for every layer present in `grads`.
    pub fn apply_sgd(&mut self, grads: &Gradients, lr: f64) {
        for (&id, g) in &grads.layers {
            if let Some(p) = self.layer_mut(id) {
                p.weight.add_scaled(&g.weight, -lr);
                p.bias.add_scaled(&g.bias, -lr);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Parameter gradients keyed by node id; frozen layers have no entry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub layers: BTreeMap<usize, LayerGrad>,
    /// Gradient w.r.t. the network input, when requested.
    pub input: Option<Tensor>,
}

impl Gradients {
    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// `self += scale * other`, adding entries missing from `self`.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for (&id, g) in &other.layers {
            match self.layers.get_mut(&id) {
                Some(acc) => {
                    acc.weight.add_scaled(&g.weight, scale);
                    acc.bias.add_scaled(&g.bias, scale);
                }
                None => {
                    let mut w = g.weight.clone();
                    let mut b = g.bias.clone();
                    w.scale(scale);
                    b.scale(scale);
                    self.layers.insert(id, LayerGrad { weight: w, bias: b });
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.layers.values_mut() {
            g.weight.scale(factor);
            g.bias.scale(factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .values()
            .all(|g| g.weight.all_finite() && g.bias.all_finite())
    }

    /// Flattened gradient in node order (weight then bias).
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .values()
            .flat_map(|g| g.weight.data().iter().chain(g.bias.data()).copied())
            .collect()
    }
}
