//! Forward and reverse-mode passes over a [`NetworkSpec`].

use super::ops::{self, ConvGeom};
use super::params::{Gradients, LayerGrad, Params};
use super::spec::{LayerKind, NetworkSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Every node activation from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    activations: Vec<Tensor>,
    pool_argmax: Vec<Option<Vec<usize>>>,
    params_version: u64,
}

impl ForwardCache {
    pub fn activation(&self, id: usize) -> &Tensor {
        &self.activations[id]
    }

    pub fn activations(&self) -> &[Tensor] {
        &self.activations
    }

    /// Which side of each non-differentiable point the pass landed on:
    /// ReLU input signs and max-pool winners, in node order.
    pub fn branch_pattern(&self, net: &NetworkSpec) -> Vec<usize> {
        let mut pattern = Vec::new();
        for (id, node) in net.nodes().iter().enumerate() {
            match node.layer.kind {
                LayerKind::Relu => pattern.extend(
                    self.activations[node.inputs[0]]
                        .data()
                        .iter()
                        .map(|&v| usize::from(v > 0.0)),
                ),
                LayerKind::MaxPool2x2 => {
                    pattern.extend(self.pool_argmax[id].as_ref().expect("pool indices").iter().copied())
                }
                _ => {}
            }
        }
        pattern
    }
}

fn conv_geom(kind: &LayerKind, in_shape: &[usize], out_shape: &[usize]) -> ConvGeom {
    match *kind {
        LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => ConvGeom {
            cin: in_channels,
            cout: out_channels,
            h: in_shape[1],
            w: in_shape[2],
            k: kernel,
            stride,
            pad: padding,
            oh: out_shape[1],
            ow: out_shape[2],
        },
        _ => unreachable!("not a convolution"),
    }
}

pub fn forward(net: &NetworkSpec, params: &Params, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
    if input.shape() != net.input_shape() {
        return Err(Error::shape(
            &net.node(0).name,
            format!("expected {:?}, got {:?}", net.input_shape(), input.shape()),
        ));
    }
    if !params.matches(net) {
        return Err(Error::invalid("parameters do not match the network layout"));
    }
    let n = net.nodes().len();
    let mut acts: Vec<Tensor> = Vec::with_capacity(n);
    let mut pool_argmax = vec![None; n];
    for (id, node) in net.nodes().iter().enumerate() {
        let out_shape = net.shape_of(id).to_vec();
        let out = match &node.layer.kind {
            LayerKind::Input { .. } => input.clone(),
            kind @ LayerKind::Conv2d { .. } => {
                let x = &acts[node.inputs[0]];
                let p = params.layer(id).expect("conv params");
                let g = conv_geom(kind, x.shape(), &out_shape);
                Tensor::new(out_shape, ops::conv2d_forward(&g, x.data(), p.weight.data(), p.bias.data()))
            }
            LayerKind::Relu => acts[node.inputs[0]].map(|v| v.max(0.0)),
            LayerKind::Sigmoid => acts[node.inputs[0]].map(ops::sigmoid),
            LayerKind::Softmax => Tensor::new(out_shape, ops::softmax(acts[node.inputs[0]].data())),
            LayerKind::MaxPool2x2 => {
                let x = &acts[node.inputs[0]];
                let (c, h, w) = x.chw().expect("rank 3");
                let (vals, arg) = ops::maxpool_forward(c, h, w, x.data());
                pool_argmax[id] = Some(arg);
                Tensor::new(out_shape, vals)
            }
            &LayerKind::TransposedConv2x2 {
                in_channels,
                out_channels,
            } => {
                let x = &acts[node.inputs[0]];
                let (_, h, w) = x.chw().expect("rank 3");
                let p = params.layer(id).expect("upconv params");
                Tensor::new(
                    out_shape,
                    ops::upconv_forward(in_channels, out_channels, h, w, x.data(), p.weight.data(), p.bias.data()),
                )
            }
            LayerKind::Concat => {
                let mut data = Vec::with_capacity(out_shape.iter().product());
                for &i in &node.inputs {
                    data.extend_from_slice(acts[i].data());
                }
                Tensor::new(out_shape, data)
            }
            &LayerKind::Dense {
                in_features,
                out_features,
            } => {
                let x = &acts[node.inputs[0]];
                let p = params.layer(id).expect("dense params");
                Tensor::new(
                    out_shape,
                    ops::dense_forward(in_features, out_features, x.data(), p.weight.data(), p.bias.data()),
                )
            }
        };
        acts.push(out);
    }
    let output = acts[net.output()].clone();
    Ok((
        output,
        ForwardCache {
            activations: acts,
            pool_argmax,
            params_version: params.version(),
        },
    ))
}

/// Parameter gradients for `loss_grad` = dL/d(output).
pub fn backward(net: &NetworkSpec, params: &Params, cache: &ForwardCache, loss_grad: &Tensor) -> Result<Gradients> {
    backward_from(net, params, cache, net.output(), loss_grad, false)
}

/// Reverse pass seeded at an arbitrary node `start` with dL/d(start).
/// With `want_input`, the gradient w.r.t. the network input is also returned.
pub fn backward_from(
    net: &NetworkSpec,
    params: &Params,
    cache: &ForwardCache,
    start: usize,
    seed: &Tensor,
    want_input: bool,
) -> Result<Gradients> {
    let n = net.nodes().len();
    if cache.activations.len() != n || cache.params_version != params.version() {
        return Err(Error::StaleCache);
    }
    if seed.shape() != net.shape_of(start) {
        return Err(Error::shape(
            &net.node(start).name,
            format!("gradient shape {:?} != activation shape {:?}", seed.shape(), net.shape_of(start)),
        ));
    }

    let trainable = |id: usize| {
        let l = &net.node(id).layer;
        l.kind.is_learnable() && !l.frozen
    };
    // requires[i]: dL/d(activation i) is needed by someone.
    let mut requires = vec![false; n];
    requires[0] = want_input;
    for id in 1..n {
        requires[id] = trainable(id) || net.node(id).inputs.iter().any(|&i| requires[i]);
    }

    let mut grads: Vec<Option<Tensor>> = vec![None; n];
    grads[start] = Some(seed.clone());
    let mut out = Gradients::default();

    for id in (1..=start).rev() {
        let Some(dy) = grads[id].take() else { continue };
        let node = net.node(id);
        let acts = &cache.activations;
        let push = |grads: &mut Vec<Option<Tensor>>, target: usize, g: Tensor| match &mut grads[target] {
            Some(acc) => acc.add_scaled(&g, 1.0),
            slot @ None => *slot = Some(g),
        };
        let first = node.inputs[0];
        let need_dx = requires[first];
        match &node.layer.kind {
            LayerKind::Input { .. } => unreachable!(),
            kind @ LayerKind::Conv2d { .. } => {
                let x = &acts[first];
                let p = params.layer(id).expect("conv params");
                let g = conv_geom(kind, x.shape(), dy.shape());
                let train = trainable(id);
                let (dx, dw, db) = ops::conv2d_backward(&g, x.data(), p.weight.data(), dy.data(), need_dx, train);
                if train {
                    out.layers.insert(
                        id,
                        LayerGrad {
                            weight: Tensor::new(p.weight.shape().to_vec(), dw),
                            bias: Tensor::new(p.bias.shape().to_vec(), db),
                        },
                    );
                }
                if need_dx {
                    push(&mut grads, first, Tensor::new(x.shape().to_vec(), dx));
                }
            }
            &LayerKind::TransposedConv2x2 {
                in_channels,
                out_channels,
            } => {
                let x = &acts[first];
                let (_, h, w) = x.chw().expect("rank 3");
                let p = params.layer(id).expect("upconv params");
                let train = trainable(id);
                let (dx, dw, db) = ops::upconv_backward(
                    in_channels,
                    out_channels,
                    h,
                    w,
                    x.data(),
                    p.weight.data(),
                    dy.data(),
                    need_dx,
                    train,
                );
                if train {
                    out.layers.insert(
                        id,
                        LayerGrad {
                            weight: Tensor::new(p.weight.shape().to_vec(), dw),
                            bias: Tensor::new(p.bias.shape().to_vec(), db),
                        },
                    );
                }
                if need_dx {
                    push(&mut grads, first, Tensor::new(x.shape().to_vec(), dx));
                }
            }
            &LayerKind::Dense {
                in_features,
                out_features,
            } => {
                let x = &acts[first];
                let p = params.layer(id).expect("dense params");
                let (w, g) = (p.weight.data(), dy.data());
                if trainable(id) {
                    let mut dw = vec![0.0; in_features * out_features];
                    for o in 0..out_features {
                        let row = &mut dw[o * in_features..(o + 1) * in_features];
                        for (d, &xi) in row.iter_mut().zip(x.data()) {
                            *d = g[o] * xi;
                        }
                    }
                    out.layers.insert(
                        id,
                        LayerGrad {
                            weight: Tensor::new(p.weight.shape().to_vec(), dw),
                            bias: dy.clone(),
                        },
                    );
                }
                if need_dx {
                    let mut dx = vec![0.0; in_features];
                    for o in 0..out_features {
                        let row = &w[o * in_features..(o + 1) * in_features];
                        for (d, &wv) in dx.iter_mut().zip(row) {
                            *d += g[o] * wv;
                        }
                    }
                    push(&mut grads, first, Tensor::new(x.shape().to_vec(), dx));
                }
            }
            LayerKind::Relu => {
                if need_dx {
                    let x = &acts[first];
                    let dx = x
                        .data()
                        .iter()
                        .zip(dy.data())
                        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
                        .collect();
                    push(&mut grads, first, Tensor::new(x.shape().to_vec(), dx));
                }
            }
            LayerKind::Sigmoid => {
                if need_dx {
                    let y = &acts[id];
                    let dx = y.data().iter().zip(dy.data()).map(|(&yv, &g)| g * yv * (1.0 - yv)).collect();
                    push(&mut grads, first, Tensor::new(acts[first].shape().to_vec(), dx));
                }
            }
            LayerKind::Softmax => {
                if need_dx {
                    let y = acts[id].data();
                    let dot: f64 = y.iter().zip(dy.data()).map(|(a, b)| a * b).sum();
                    let dx = y.iter().zip(dy.data()).map(|(&yv, &g)| yv * (g - dot)).collect();
                    push(&mut grads, first, Tensor::new(acts[first].shape().to_vec(), dx));
                }
            }
            LayerKind::MaxPool2x2 => {
                if need_dx {
                    let x = &acts[first];
                    let arg = cache.pool_argmax[id].as_ref().expect("pool indices");
                    let mut dx = vec![0.0; x.len()];
                    for (&src, &g) in arg.iter().zip(dy.data()) {
                        dx[src] += g;
                    }
                    push(&mut grads, first, Tensor::new(x.shape().to_vec(), dx));
                }
            }
            LayerKind::Concat => {
                let mut offset = 0;
                for &i in &node.inputs {
                    let len = acts[i].len();
                    if requires[i] {
                        let part = dy.data()[offset..offset + len].to_vec();
                        push(&mut grads, i, Tensor::new(acts[i].shape().to_vec(), part));
                    }
                    offset += len;
                }
            }
        }
    }
    if want_input {
        out.input = Some(grads[0].take().unwrap_or_else(|| Tensor::zeros(net.input_shape())));
    }
    Ok(out)
}
