//! Neoplastic vs non-neoplastic classification, with Gram-matrix
//! eigen-spectra of intermediate feature maps as a texture diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigen, Matrix};
use crate::mask::BinaryMask;
use crate::nn::{
    forward, inverse_frequency_weights, train, Example, LossKind, NetworkSpec, Params, Target, Tensor, TrainConfig,
    TrainHistory,
};
use crate::phantom::PhantomSample;
use crate::recognition::{classifier_network, decide, standardize_frame, TieBreak};
use crate::rng::Rng;

pub const NON_NEOPLASTIC: usize = 0;
pub const NEOPLASTIC: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CharacterizerSpec {
    pub image_size: usize,
    /// Per-class loss weights; inverse class frequency of the training
    /// set when absent.
    pub class_weights: Option<Vec<f64>>,
    /// Activation nodes whose feature maps feed the Gram analysis.
    pub gram_layers: Vec<String>,
}

impl Default for CharacterizerSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            class_weights: None,
            gram_layers: vec!["relu2".into(), "relu3".into()],
        }
    }
}

impl CharacterizerSpec {
    pub fn network(&self, class_weights: Vec<f64>) -> Result<NetworkSpec> {
        if class_weights.len() != 2 || class_weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("class weights must be two positive numbers, got {class_weights:?}")));
        }
        let net = classifier_network(self.image_size, LossKind::WeightedCrossEntropy { class_weights })?;
        for name in &self.gram_layers {
            let id = net
                .find(name)
                .ok_or_else(|| Error::Config(format!("unknown Gram layer {name:?}")))?;
            if net.shape_of(id).len() != 3 {
                return Err(Error::Config(format!("Gram layer {name:?} is not a feature-map layer")));
            }
        }
        Ok(net)
    }
}

pub fn characterization_example(sample: &PhantomSample) -> Example {
    Example {
        input: standardize_frame(&sample.image),
        target: Target::Class(usize::from(sample.neoplastic)),
    }
}

#[derive(Debug, Clone)]
pub struct Characterizer {
    pub spec: CharacterizerSpec,
    pub class_weights: Vec<f64>,
    pub net: NetworkSpec,
    pub params: Params,
}

pub fn train_characterizer(
    spec: &CharacterizerSpec,
    samples: &[&PhantomSample],
    cfg: &TrainConfig,
) -> Result<(Characterizer, TrainHistory)> {
    let neo = samples.iter().filter(|s| s.neoplastic).count();
    let counts = [samples.len() - neo, neo];
    if counts.contains(&0) {
        return Err(Error::invalid(format!(
            "characterization needs both classes; got {} non-neoplastic, {} neoplastic",
            counts[0], counts[1]
        )));
    }
    let weights = spec.class_weights.clone().unwrap_or_else(|| inverse_frequency_weights(&counts));
    let net = spec.network(weights.clone())?;
    let data: Vec<Example> = samples.iter().map(|s| characterization_example(s)).collect();
    let mut params = Params::init(&net, &mut Rng::new(cfg.seed).substream(0xc4a));
    let history = train(&net, &mut params, &data, None, cfg)?;
    Ok((
        Characterizer {
            spec: spec.clone(),
            class_weights: weights,
            net,
            params,
        },
        history,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpectrum {
    pub layer: String,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    pub largest: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramSpectrum {
    pub layers: Vec<LayerSpectrum>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Characterization {
    pub neoplastic: bool,
    pub confidence: f64,
    pub spectrum: Option<GramSpectrum>,
}

impl Characterizer {
    pub fn new(spec: CharacterizerSpec, class_weights: Vec<f64>, params: Params) -> Result<Self> {
        let net = spec.network(class_weights.clone())?;
        if !params.matches(&net) {
            return Err(Error::invalid("parameters do not match the characterizer architecture"));
        }
        Ok(Self {
            spec,
            class_weights,
            net,
            params,
        })
    }

    /// Label from the softmax. The spectrum, when requested, is computed
    /// from the same pass and never influences the label. With `mask`, the
    /// Gram analysis only sees feature-map cells covering the mask.
    pub fn characterize(&self, image: &Tensor, with_spectrum: bool, mask: Option<&BinaryMask>) -> Result<Characterization> {
        if image.chw().is_none() {
            return Err(Error::invalid(format!("expected a (C, H, W) frame, got {:?}", image.shape())));
        }
        let (probs, cache) = forward(&self.net, &self.params, &standardize_frame(image))?;
        let c = decide(probs.data(), TieBreak::NoPolyp);
        let spectrum = if with_spectrum {
            let mut layers = Vec::new();
            for name in &self.spec.gram_layers {
                let id = self.net.find(name).expect("validated at construction");
                let mut maps = cache.activation(id).clone();
                if let Some(m) = mask {
                    restrict_to_mask(&mut maps, m);
                }
                let eigenvalues = spectrum(&gram_matrix(&maps))?;
                layers.push(LayerSpectrum {
                    layer: name.clone(),
                    largest: eigenvalues[0],
                    eigenvalues,
                });
            }
            Some(GramSpectrum { layers })
        } else {
            None
        };
        Ok(Characterization {
            neoplastic: c.label == NEOPLASTIC,
            confidence: c.confidence,
            spectrum,
        })
    }
}

/// Zeroes feature cells whose receptive block contains no mask pixel.
fn restrict_to_mask(maps: &mut Tensor, mask: &BinaryMask) {
    let (c, h, w) = maps.chw().expect("feature maps");
    let (sx, sy) = (mask.width() / w, mask.height() / h);
    let keep: Vec<bool> = (0..h * w)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            (0..sy).any(|dy| (0..sx).any(|dx| mask.get(x * sx + dx, y * sy + dy)))
        })
        .collect();
    let d = maps.data_mut();
    for ch in 0..c {
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                d[ch * h * w + i] = 0.0;
            }
        }
    }
}

/// G[i][j] = ⟨vec(map_i), vec(map_j)⟩ over the channels of a (C, H, W) tensor.
pub fn gram_matrix(maps: &Tensor) -> Matrix {
    let (c, h, w) = maps.chw().expect("(C, H, W) feature maps");
    let plane = h * w;
    let d = maps.data();
    let mut g = Matrix::zeros(c, c);
    for i in 0..c {
        let a = &d[i * plane..(i + 1) * plane];
        for j in i..c {
            let b = &d[j * plane..(j + 1) * plane];
            let v: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Eigenvalues, descending.
pub fn spectrum(g: &Matrix) -> Result<Vec<f64>> {
    Ok(jacobi_eigen(g)?.values)
}

/// [min, max] of a sample.
pub fn support(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Intersection-over-union of the two sample ranges. Two identical
/// single-point ranges overlap fully.
pub fn support_overlap(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("support overlap needs at least 2 values per class"));
    }
    let ((a0, a1), (b0, b1)) = (support(a), support(b));
    let inter = (a1.min(b1) - a0.max(b0)).max(0.0);
    let union = a1.max(b1) - a0.min(b0);
    Ok(if union > 0.0 {
        inter / union
    } else {
        1.0
    })
}
