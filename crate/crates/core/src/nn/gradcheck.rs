//! Central finite-difference verification of the reverse pass.

use super::graph::{backward_from, forward};
use super::loss::Target;
use super::params::{Gradients, Params};
use super::spec::NetworkSpec;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Check at most this many randomly chosen components per tensor.
    pub max_components: Option<usize>,
    /// Also check dL/d(input).
    pub check_input: bool,
    /// Skip components whose ±eps probes land on different sides of a ReLU
    /// or max-pool switch; large networks almost always straddle one.
    pub skip_kinks: bool,
    pub seed: u64,
}

impl GradCheckOptions {
    pub fn new(eps: f64, tol: f64) -> Self {
        Self {
            eps,
            tol,
            max_components: None,
            check_input: true,
            skip_kinks: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub node: String,
    /// "weight", "bias" or "input".
    pub tensor: &'static str,
    pub checked: usize,
    /// Components skipped because a probe crossed a kink.
    pub skipped: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.max_rel_error <= self.tol)
    }

    pub fn worst(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.max_rel_error))
    }
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps components that are
/// zero on both sides from dividing roundoff by roundoff.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    const FLOOR: f64 = 1e-6;
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub type AnalyticGrad<'a> = dyn Fn(&NetworkSpec, &Params, &Tensor, &Target) -> Result<Gradients> + 'a;

/// Analytic gradients from the engine's reverse pass, input gradient included.
pub fn engine_gradients(net: &NetworkSpec, params: &Params, input: &Tensor, target: &Target) -> Result<Gradients> {
    let (out, cache) = forward(net, params, input)?;
    let (_, dl) = net.loss.evaluate(&out, target);
    backward_from(net, params, &cache, net.output(), &dl, true)
}

pub fn gradient_check(
    net: &NetworkSpec,
    params: &Params,
    input: &Tensor,
    target: &Target,
    eps: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    gradient_check_with(net, params, input, target, &GradCheckOptions::new(eps, tol), &engine_gradients)
}

/// Compares `analytic` against central differences of the network loss.
pub fn gradient_check_with(
    net: &NetworkSpec,
    params: &Params,
    input: &Tensor,
    target: &Target,
    opts: &GradCheckOptions,
    analytic: &AnalyticGrad<'_>,
) -> Result<GradCheckReport> {
    if !(opts.eps > 0.0) {
        return Err(Error::invalid("eps must be positive"));
    }
    let grads = analytic(net, params, input, target)?;
    let loss_at = |p: &Params, x: &Tensor| -> Result<(f64, Option<Vec<usize>>)> {
        let (out, cache) = forward(net, p, x)?;
        let pattern = opts.skip_kinks.then(|| cache.branch_pattern(net));
        Ok((net.loss.evaluate(&out, target).0, pattern))
    };
    // Central difference, or None when the probes straddle a kink.
    let difference = |up: (f64, Option<Vec<usize>>), down: (f64, Option<Vec<usize>>)| {
        (up.1 == down.1).then(|| (up.0 - down.0) / (2.0 * opts.eps))
    };
    let mut rng = Rng::new(opts.seed);
    let mut pick = |len: usize| -> Vec<usize> {
        match opts.max_components {
            Some(m) if m < len => rng.permutation(len).into_iter().take(m).collect(),
            _ => (0..len).collect(),
        }
    };

    let mut entries = Vec::new();
    let mut probe = params.clone();
    for (&id, g) in &grads.layers {
        for (which, grad) in [("weight", &g.weight), ("bias", &g.bias)] {
            let (mut worst, mut skipped) = (0.0f64, 0);
            let idx = pick(grad.len());
            for &i in &idx {
                let original = slot(&mut probe, id, which)[i];
                slot(&mut probe, id, which)[i] = original + opts.eps;
                let up = loss_at(&probe, input)?;
                slot(&mut probe, id, which)[i] = original - opts.eps;
                let down = loss_at(&probe, input)?;
                slot(&mut probe, id, which)[i] = original;
                match difference(up, down) {
                    Some(numeric) => worst = worst.max(relative_error(grad.data()[i], numeric)),
                    None => skipped += 1,
                }
            }
            entries.push(GradCheckEntry {
                node: net.node(id).name.clone(),
                tensor: which,
                checked: idx.len() - skipped,
                skipped,
                max_rel_error: worst,
            });
        }
    }

    if opts.check_input {
        if let Some(gx) = &grads.input {
            let mut x = input.clone();
            let (mut worst, mut skipped) = (0.0f64, 0);
            let idx = pick(x.len());
            for &i in &idx {
                let original = x.data()[i];
                x.data_mut()[i] = original + opts.eps;
                let up = loss_at(params, &x)?;
                x.data_mut()[i] = original - opts.eps;
                let down = loss_at(params, &x)?;
                x.data_mut()[i] = original;
                match difference(up, down) {
                    Some(numeric) => worst = worst.max(relative_error(gx.data()[i], numeric)),
                    None => skipped += 1,
                }
            }
            entries.push(GradCheckEntry {
                node: net.node(0).name.clone(),
                tensor: "input",
                checked: idx.len() - skipped,
                skipped,
                max_rel_error: worst,
            });
        }
    }
    Ok(GradCheckReport { entries, tol: opts.tol })
}

fn slot<'p>(params: &'p mut Params, id: usize, which: &str) -> &'p mut [f64] {
    let layer = params.layer_mut(id).expect("learnable layer");
    if which == "weight" {
        layer.weight.data_mut()
    } else {
        layer.bias.data_mut()
    }
}
