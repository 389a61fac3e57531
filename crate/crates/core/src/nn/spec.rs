use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerKind {
    Input {
        shape: Vec<usize>,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool2x2,
    /// 2x2 kernel, stride 2: doubles both spatial extents.
    TransposedConv2x2 {
        in_channels: usize,
        out_channels: usize,
    },
    /// Channel-axis concatenation of rank-3 inputs.
    Concat,
    /// Fully connected; any input rank is flattened.
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Softmax,
    Sigmoid,
}

impl LayerKind {
    pub fn is_learnable(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv2d { .. } | LayerKind::TransposedConv2x2 { .. } | LayerKind::Dense { .. }
        )
    }

    /// (weight shape, bias shape) for learnable layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((vec![out_channels, in_channels, kernel, kernel], vec![out_channels])),
            LayerKind::TransposedConv2x2 {
                in_channels,
                out_channels,
            } => Some((vec![in_channels, out_channels, 2, 2], vec![out_channels])),
            LayerKind::Dense {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    /// (fan_in, fan_out) for Glorot-uniform init.
    pub(crate) fn fans(&self) -> (usize, usize) {
        match *self {
            LayerKind::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (in_channels * kernel * kernel, out_channels * kernel * kernel),
            LayerKind::TransposedConv2x2 {
                in_channels,
                out_channels,
            } => (in_channels * 4, out_channels * 4),
            LayerKind::Dense {
                in_features,
                out_features,
            } => (in_features, out_features),
            _ => (0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub layer: LayerSpec,
    pub inputs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LossKind {
    CrossEntropy,
    PixelwiseBinaryCrossEntropy,
    WeightedCrossEntropy { class_weights: Vec<f64> },
    /// Half mean squared error; used by regression toys and tests.
    SquaredError,
}

/// Layer graph in topological order. Node 0 is the input; every other
/// node only consumes earlier nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    nodes: Vec<Node>,
    output: usize,
    pub loss: LossKind,
    shapes: Vec<Vec<usize>>,
}

impl NetworkSpec {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn output(&self) -> usize {
        self.output
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.shapes[self.output]
    }

    pub fn shape_of(&self, id: usize) -> &[usize] {
        &self.shapes[id]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Node ids of learnable layers, in graph order.
    pub fn learnable(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.layer.kind.is_learnable())
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy with every learnable layer frozen except the last `k`.
    pub fn trainable_tail(&self, k: usize) -> NetworkSpec {
        let learnable = self.learnable();
        let keep_from = learnable.len().saturating_sub(k);
        let mut net = self.clone();
        for (rank, &id) in learnable.iter().enumerate() {
            net.nodes[id].layer.frozen = rank < keep_from;
        }
        net
    }

    pub fn with_loss(&self, loss: LossKind) -> NetworkSpec {
        NetworkSpec {
            loss,
            ..self.clone()
        }
    }

    pub fn set_frozen(&mut self, id: usize, frozen: bool) {
        self.nodes[id].layer.frozen = frozen;
    }
}

/// Incremental constructor for [`NetworkSpec`]; shapes are checked in
/// [`NetworkBuilder::build`].
#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    nodes: Vec<Node>,
}

impl NetworkBuilder {
    pub fn new(input_shape: &[usize]) -> Self {
        Self {
            nodes: vec![Node {
                name: "input".into(),
                layer: LayerSpec {
                    kind: LayerKind::Input {
                        shape: input_shape.to_vec(),
                    },
                    frozen: false,
                },
                inputs: vec![],
            }],
        }
    }

    pub const INPUT: usize = 0;

    pub fn add(&mut self, name: impl Into<String>, kind: LayerKind, inputs: &[usize]) -> usize {
        self.nodes.push(Node {
            name: name.into(),
            layer: LayerSpec {
                kind,
                frozen: false,
            },
            inputs: inputs.to_vec(),
        });
        self.nodes.len() - 1
    }

    /// 3x3 "same" convolution.
    pub fn conv3x3(&mut self, name: impl Into<String>, from: usize, cin: usize, cout: usize) -> usize {
        self.conv(name, from, cin, cout, 3)
    }

    /// Odd-sized, stride-1 convolution with "same" padding.
    pub fn conv(
        &mut self,
        name: impl Into<String>,
        from: usize,
        cin: usize,
        cout: usize,
        kernel: usize,
    ) -> usize {
        self.add(
            name,
            LayerKind::Conv2d {
                in_channels: cin,
                out_channels: cout,
                kernel,
                stride: 1,
                padding: kernel / 2,
            },
            &[from],
        )
    }

    pub fn relu(&mut self, name: impl Into<String>, from: usize) -> usize {
        self.add(name, LayerKind::Relu, &[from])
    }

    pub fn maxpool(&mut self, name: impl Into<String>, from: usize) -> usize {
        self.add(name, LayerKind::MaxPool2x2, &[from])
    }

    pub fn upconv(&mut self, name: impl Into<String>, from: usize, cin: usize, cout: usize) -> usize {
        self.add(
            name,
            LayerKind::TransposedConv2x2 {
                in_channels: cin,
                out_channels: cout,
            },
            &[from],
        )
    }

    pub fn concat(&mut self, name: impl Into<String>, a: usize, b: usize) -> usize {
        self.add(name, LayerKind::Concat, &[a, b])
    }

    pub fn dense(&mut self, name: impl Into<String>, from: usize, fin: usize, fout: usize) -> usize {
        self.add(
            name,
            LayerKind::Dense {
                in_features: fin,
                out_features: fout,
            },
            &[from],
        )
    }

    pub fn softmax(&mut self, name: impl Into<String>, from: usize) -> usize {
        self.add(name, LayerKind::Softmax, &[from])
    }

    pub fn sigmoid(&mut self, name: impl Into<String>, from: usize) -> usize {
        self.add(name, LayerKind::Sigmoid, &[from])
    }

    pub fn build(self, output: usize, loss: LossKind) -> Result<NetworkSpec> {
        let nodes = self.nodes;
        if output >= nodes.len() {
            return Err(Error::invalid(format!("output node {output} does not exist")));
        }
        let mut consumers = vec![0usize; nodes.len()];
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(nodes.len());
        for (id, node) in nodes.iter().enumerate() {
            if id > 0 && node.inputs.is_empty() {
                return Err(Error::shape(&node.name, "node has no inputs"));
            }
            for &i in &node.inputs {
                if i >= id {
                    return Err(Error::shape(
                        &node.name,
                        format!("input {i} is not an earlier node"),
                    ));
                }
                consumers[i] += 1;
            }
            let inputs: Vec<&[usize]> = node.inputs.iter().map(|&i| shapes[i].as_slice()).collect();
            shapes.push(infer_shape(node, &inputs)?);
        }
        let sinks: Vec<usize> = (0..nodes.len()).filter(|&i| consumers[i] == 0).collect();
        if sinks != [output] {
            return Err(Error::invalid(format!(
                "network must have exactly one output node; dangling nodes: {:?}",
                sinks.iter().map(|&i| nodes[i].name.as_str()).collect::<Vec<_>>()
            )));
        }
        Ok(NetworkSpec {
            nodes,
            output,
            loss,
            shapes,
        })
    }
}

fn infer_shape(node: &Node, inputs: &[&[usize]]) -> Result<Vec<usize>> {
    let name = &node.name;
    let single = || -> Result<&[usize]> {
        match inputs {
            [s] => Ok(*s),
            _ => Err(Error::shape(name, format!("expected 1 input, got {}", inputs.len()))),
        }
    };
    let chw = |s: &[usize]| -> Result<(usize, usize, usize)> {
        match *s {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape(name, format!("expected (C,H,W) input, got {s:?}"))),
        }
    };
    match &node.layer.kind {
        LayerKind::Input { shape } => {
            if shape.is_empty() || shape.contains(&0) {
                return Err(Error::shape(name, format!("bad input shape {shape:?}")));
            }
            Ok(shape.clone())
        }
        &LayerKind::Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        } => {
            let (c, h, w) = chw(single()?)?;
            if kernel % 2 == 0 {
                return Err(Error::shape(name, format!("kernel size {kernel} must be odd")));
            }
            if stride == 0 || out_channels == 0 {
                return Err(Error::shape(name, "stride and out_channels must be positive"));
            }
            if c != in_channels {
                return Err(Error::shape(
                    name,
                    format!("expects {in_channels} channels, input has {c}"),
                ));
            }
            if h + 2 * padding < kernel || w + 2 * padding < kernel {
                return Err(Error::shape(name, "kernel larger than padded input"));
            }
            Ok(vec![
                out_channels,
                (h + 2 * padding - kernel) / stride + 1,
                (w + 2 * padding - kernel) / stride + 1,
            ])
        }
        LayerKind::Relu | LayerKind::Sigmoid => Ok(single()?.to_vec()),
        LayerKind::Softmax => Ok(vec![single()?.iter().product()]),
        LayerKind::MaxPool2x2 => {
            let (c, h, w) = chw(single()?)?;
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::shape(name, format!("pooling needs even extents, got {h}x{w}")));
            }
            Ok(vec![c, h / 2, w / 2])
        }
        &LayerKind::TransposedConv2x2 {
            in_channels,
            out_channels,
        } => {
            let (c, h, w) = chw(single()?)?;
            if c != in_channels {
                return Err(Error::shape(
                    name,
                    format!("expects {in_channels} channels, input has {c}"),
                ));
            }
            Ok(vec![out_channels, 2 * h, 2 * w])
        }
        LayerKind::Concat => {
            if inputs.len() < 2 {
                return Err(Error::shape(name, "concat needs at least two inputs"));
            }
            let (_, h, w) = chw(inputs[0])?;
            let mut channels = 0;
            for s in inputs {
                let (c, hh, ww) = chw(s)?;
                if (hh, ww) != (h, w) {
                    return Err(Error::shape(
                        name,
                        format!("spatial extents disagree: {h}x{w} vs {hh}x{ww}"),
                    ));
                }
                channels += c;
            }
            Ok(vec![channels, h, w])
        }
        &LayerKind::Dense {
            in_features,
            out_features,
        } => {
            let n: usize = single()?.iter().product();
            if n != in_features {
                return Err(Error::shape(
                    name,
                    format!("expects {in_features} features, input has {n}"),
                ));
            }
            Ok(vec![out_features])
        }
    }
}
