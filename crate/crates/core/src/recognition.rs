//! Polyp-vs-normal frame recognition: a small CNN trained by pretext
//! pretraining plus tail fine-tuning, screening metrics, and input-gradient
//! heat maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    backward_from, forward, train, Example, LayerKind, LossKind, NetworkBuilder, NetworkSpec, Params, Target, Tensor,
    TrainConfig, TrainHistory,
};
use crate::phantom::PhantomSample;
use crate::rng::Rng;

pub const NO_POLYP: usize = 0;
pub const POLYP: usize = 1;

/// Which class wins when both probabilities are equal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    NoPolyp,
    Polyp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecognizerSpec {
    pub image_size: usize,
    /// Learnable layers, counted from the output, updated while fine-tuning.
    pub fine_tune_last_k: usize,
    pub tie_break: TieBreak,
}

impl Default for RecognizerSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            fine_tune_last_k: 2,
            tie_break: TieBreak::NoPolyp,
        }
    }
}

impl RecognizerSpec {
    /// Three conv/ReLU/pool stages (8, 16, 32 channels), a 32-unit hidden
    /// layer and a two-way softmax.
    pub fn network(&self) -> Result<NetworkSpec> {
        classifier_network(self.image_size, LossKind::CrossEntropy)
    }
}

/// The shared three-stage CNN classifier, also used for characterization.
pub(crate) fn classifier_network(image_size: usize, loss: LossKind) -> Result<NetworkSpec> {
    if !image_size.is_multiple_of(8) || image_size == 0 {
        return Err(Error::Config(format!("image_size {image_size} must be a positive multiple of 8")));
    }
    let mut b = NetworkBuilder::new(&[3, image_size, image_size]);
    let mut x = NetworkBuilder::INPUT;
    let mut cin = 3;
    for (i, cout) in [8, 16, 32].into_iter().enumerate() {
        x = b.conv3x3(format!("conv{}", i + 1), x, cin, cout);
        x = b.relu(format!("relu{}", i + 1), x);
        x = b.maxpool(format!("pool{}", i + 1), x);
        cin = cout;
    }
    let flat = 32 * (image_size / 8) * (image_size / 8);
    x = b.dense("fc1", x, flat, 32);
    x = b.relu("relu_fc1", x);
    x = b.dense("fc2", x, 32, 2);
    let out = b.softmax("prob", x);
    b.build(out, loss)
}

/// Per-image, per-channel standardization applied before every network.
/// A constant channel maps to zeros.
pub fn standardize_frame(image: &Tensor) -> Tensor {
    let (c, h, w) = image.chw().expect("(C, H, W) frame");
    let plane = h * w;
    let mut out = image.clone();
    for ch in 0..c {
        let px = &mut out.data_mut()[ch * plane..(ch + 1) * plane];
        let mean = px.iter().sum::<f64>() / plane as f64;
        let var = px.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane as f64;
        let inv = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
        px.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
    out
}

pub fn recognition_example(sample: &PhantomSample) -> Example {
    Example {
        input: standardize_frame(&sample.image),
        target: Target::Class(sample.label()),
    }
}

/// Pretext example: neoplastic (1) vs non-neoplastic (0) surface texture.
pub fn texture_example(sample: &PhantomSample) -> Example {
    Example {
        input: standardize_frame(&sample.image),
        target: Target::Class(usize::from(sample.neoplastic)),
    }
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub pretrained: Params,
    pub params: Params,
    pub pretrain_history: TrainHistory,
    pub finetune_history: TrainHistory,
}

/// Trains every layer on `pretrain`, then only the last `k` learnable
/// layers on `finetune`, starting from the pretrained values.
pub fn pretrain_then_finetune(
    net: &NetworkSpec,
    fine_tune_last_k: usize,
    pretrain: &[Example],
    finetune: &[Example],
    pretrain_cfg: &TrainConfig,
    finetune_cfg: &TrainConfig,
) -> Result<TransferOutcome> {
    if pretrain.is_empty() || finetune.is_empty() {
        return Err(Error::invalid("pretraining and fine-tuning sets must both be non-empty"));
    }
    let full = net.trainable_tail(usize::MAX);
    let mut params = Params::init(&full, &mut Rng::new(pretrain_cfg.seed).substream(0x1417));
    let pretrain_history = train(&full, &mut params, pretrain, None, pretrain_cfg)?;
    let pretrained = params.clone();
    let tail = net.trainable_tail(fine_tune_last_k);
    let finetune_history = if fine_tune_last_k == 0 {
        TrainHistory::default()
    } else {
        train(&tail, &mut params, finetune, None, finetune_cfg)?
    };
    Ok(TransferOutcome {
        pretrained,
        params,
        pretrain_history,
        finetune_history,
    })
}

#[derive(Debug, Clone)]
pub struct Recognizer {
    pub spec: RecognizerSpec,
    pub net: NetworkSpec,
    pub params: Params,
}

/// Label and its probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: usize,
    pub confidence: f64,
}

/// Argmax over a probability vector with an explicit tie rule.
pub fn decide(probs: &[f64], tie: TieBreak) -> Classification {
    let best = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] == best).collect();
    let label = match tie {
        TieBreak::NoPolyp => tied[0],
        TieBreak::Polyp => *tied.last().expect("non-empty"),
    };
    Classification {
        label,
        confidence: best,
    }
}

impl Recognizer {
    pub fn new(spec: RecognizerSpec, params: Params) -> Result<Self> {
        let net = spec.network()?;
        if !params.matches(&net) {
            return Err(Error::invalid("parameters do not match the recognizer architecture"));
        }
        Ok(Self { spec, net, params })
    }

    pub fn classify(&self, image: &Tensor) -> Result<Classification> {
        if image.chw().is_none() {
            return Err(Error::invalid(format!("expected a (C, H, W) frame, got {:?}", image.shape())));
        }
        let (probs, _) = forward(&self.net, &self.params, &standardize_frame(image))?;
        Ok(decide(probs.data(), self.spec.tie_break))
    }

    pub fn evaluate<'a>(&self, test: impl IntoIterator<Item = &'a PhantomSample>) -> Result<EvalReport> {
        let mut outcomes = Vec::new();
        for s in test {
            outcomes.push((self.classify(&s.image)?.label == POLYP, s.has_polyp));
        }
        EvalReport::from_outcomes(&outcomes)
    }

    pub fn saliency(&self, image: &Tensor, class_index: usize) -> Result<Tensor> {
        saliency_map(&self.net, &self.params, image, class_index)
    }
}

/// Screening counts and ratios; a ratio with a zero denominator is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub npv: Option<f64>,
    pub accuracy: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl EvalReport {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self {
            tp,
            fp,
            tn,
            fn_,
            sensitivity: ratio(tp, tp + fn_),
            specificity: ratio(tn, tn + fp),
            npv: ratio(tn, tn + fn_),
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
        }
    }

    /// `(predicted positive, actually positive)` per item.
    pub fn from_outcomes(outcomes: &[(bool, bool)]) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::invalid("cannot evaluate on an empty test set"));
        }
        let count = |p: bool, a: bool| outcomes.iter().filter(|&&o| o == (p, a)).count() as u64;
        Ok(Self::from_counts(
            count(true, true),
            count(true, false),
            count(false, false),
            count(false, true),
        ))
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// |d score / d pixel|, maximized over channels and min-max normalized to
/// [0, 1]. The score is the pre-softmax logit when the network ends in a
/// softmax, otherwise the output component itself. A constant map becomes
/// all zeros.
pub fn saliency_map(net: &NetworkSpec, params: &Params, image: &Tensor, class_index: usize) -> Result<Tensor> {
    let out_id = net.output();
    let score_id = match net.node(out_id).layer.kind {
        LayerKind::Softmax => net.node(out_id).inputs[0],
        _ => out_id,
    };
    let score_shape = net.shape_of(score_id).to_vec();
    let n: usize = score_shape.iter().product();
    if class_index >= n {
        return Err(Error::invalid(format!("class {class_index} out of range for {n} outputs")));
    }
    let frozen = net.trainable_tail(0);
    let (_, cache) = forward(&frozen, params, image)?;
    let mut seed = Tensor::zeros(&score_shape);
    seed.data_mut()[class_index] = 1.0;
    let grads = backward_from(&frozen, params, &cache, score_id, &seed, true)?;
    let dx = grads.input.expect("input gradient requested");
    let (c, h, w) = match dx.chw() {
        Some(d) => d,
        None => (1, 1, dx.len()),
    };
    let plane = h * w;
    let mut heat: Vec<f64> = (0..plane)
        .map(|i| (0..c).map(|ch| dx.data()[ch * plane + i].abs()).fold(0.0, f64::max))
        .collect();
    let lo = heat.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = heat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        heat.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
    } else {
        heat.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(Tensor::new(vec![h, w], heat))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerParams;

    #[test]
    fn network_shape() {
        let net = RecognizerSpec::default().network().unwrap();
        assert_eq!(net.output_shape(), &[2]);
        assert_eq!(net.learnable().len(), 5);
        let fc1 = net.find("fc1").unwrap();
        assert_eq!(net.shape_of(net.node(fc1).inputs[0]), &[32, 8, 8]);
    }

    #[test]
    fn tie_rule() {
        assert_eq!(decide(&[0.5, 0.5], TieBreak::NoPolyp).label, NO_POLYP);
        assert_eq!(decide(&[0.5, 0.5], TieBreak::Polyp).label, POLYP);
        let c = decide(&[0.1, 0.9], TieBreak::NoPolyp);
        assert_eq!((c.label, c.confidence), (POLYP, 0.9));
    }

    #[test]
    fn metric_arithmetic() {
        let r = EvalReport::from_counts(8, 1, 9, 2);
        assert_eq!(r.sensitivity, Some(0.8));
        assert_eq!(r.specificity, Some(0.9));
        assert!((r.npv.unwrap() - 9.0 / 11.0).abs() < 1e-15);
        let perfect = EvalReport::from_counts(5, 0, 5, 0);
        assert_eq!(
            [perfect.sensitivity, perfect.specificity, perfect.npv, perfect.accuracy],
            [Some(1.0); 4]
        );
        let no_pos = EvalReport::from_counts(0, 0, 3, 0);
        assert_eq!(no_pos.sensitivity, None);
        assert!(EvalReport::from_outcomes(&[]).is_err());
    }

    fn linear_net(weights: &[f64]) -> (NetworkSpec, Params) {
        let n = weights.len();
        let mut b = NetworkBuilder::new(&[1, 1, n]);
        let d = b.dense("fc", NetworkBuilder::INPUT, n, 1);
        let net = b.build(d, LossKind::SquaredError).unwrap();
        let mut layers = vec![None; 2];
        layers[d] = Some(LayerParams {
            weight: Tensor::new(vec![1, n], weights.to_vec()),
            bias: Tensor::zeros(&[1]),
        });
        (net, Params::from_layers(layers))
    }

    #[test]
    fn linear_saliency_is_weight_magnitude() {
        let w = [0.0, -2.0, 1.0, 4.0];
        let (net, p) = linear_net(&w);
        let heat = saliency_map(&net, &p, &Tensor::full(&[1, 1, 4], 0.3), 0).unwrap();
        assert_eq!(heat.data(), &[0.0, 0.5, 0.25, 1.0]);
    }

    #[test]
    fn constant_network_gives_zero_map() {
        let (net, p) = linear_net(&[0.0; 4]);
        let heat = saliency_map(&net, &p, &Tensor::full(&[1, 1, 4], 0.3), 0).unwrap();
        assert!(heat.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let spec = RecognizerSpec::default();
        let net = spec.network().unwrap();
        let r = Recognizer::new(spec, Params::init(&net, &mut Rng::new(1))).unwrap();
        assert!(r.classify(&Tensor::zeros(&[3, 32, 32])).is_err());
    }

    #[test]
    fn zero_tail_keeps_pretrained() {
        let net = {
            let mut b = NetworkBuilder::new(&[1, 1, 2]);
            let d = b.dense("fc", NetworkBuilder::INPUT, 2, 2);
            let s = b.softmax("p", d);
            b.build(s, LossKind::CrossEntropy).unwrap()
        };
        let data: Vec<Example> = (0..8)
            .map(|i| Example {
                input: Tensor::new(vec![1, 1, 2], vec![i as f64 / 8.0, 1.0 - i as f64 / 8.0]),
                target: Target::Class(usize::from(i >= 4)),
            })
            .collect();
        let cfg = TrainConfig {
            initial_lr: 0.5,
            ..Default::default()
        };
        let out = pretrain_then_finetune(&net, 0, &data, &data, &cfg, &cfg).unwrap();
        assert_eq!(out.params, out.pretrained);
        let out = pretrain_then_finetune(&net, 1, &data, &data, &cfg, &cfg).unwrap();
        assert_ne!(out.params, out.pretrained);
    }
}
