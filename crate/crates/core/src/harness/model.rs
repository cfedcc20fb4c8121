//! Networks as a list of nodes in topological order.
//!
//! Value slot 0 is the network input; node `i` writes slot `i + 1`.
//! Each node names the slots it reads, which is enough to express the
//! skip connections of the encoder-decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, ConvConfig};
use crate::sfconv::{self, gaussian, FactorizedFilter};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    Full,
    Sfconv,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv {
        weight: Tensor,
        bias: Option<Tensor>,
        cfg: ConvConfig,
    },
    SfConv(FactorizedFilter),
    Relu,
    MaxPool,
    Upsample,
    Concat,
    Dense {
        weight: Tensor,
        bias: Tensor,
    },
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::SfConv(_) => "sfconv",
            Layer::Relu => "relu",
            Layer::MaxPool => "maxpool",
            Layer::Upsample => "upsample",
            Layer::Concat => "concat",
            Layer::Dense { .. } => "dense",
        }
    }

    fn params(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            Layer::Conv { weight, bias, .. } => {
                let mut v = vec![("weight", weight)];
                v.extend(bias.iter().map(|b| ("bias", b)));
                v
            }
            Layer::SfConv(f) => {
                let mut v = vec![("q", &f.q_filters), ("p", &f.p_filters)];
                v.extend(f.bias.iter().map(|b| ("bias", b)));
                v
            }
            Layer::Dense { weight, bias } => vec![("weight", weight), ("bias", bias)],
            _ => vec![],
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            Layer::Conv { weight, bias, .. } => {
                let mut v = vec![weight];
                v.extend(bias.iter_mut());
                v
            }
            Layer::SfConv(f) => {
                let mut v = vec![&mut f.q_filters, &mut f.p_filters];
                v.extend(f.bias.iter_mut());
                v
            }
            Layer::Dense { weight, bias } => vec![weight, bias],
            _ => vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub layer: Layer,
    pub inputs: Vec<usize>,
}

/// A named learnable tensor. Biases are exempt from weight decay.
#[derive(Clone, Copy, Debug)]
pub struct ParamRef<'a> {
    pub name: &'a str,
    pub tensor: &'a Tensor,
    pub decay: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    nodes: Vec<Node>,
    names: Vec<String>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardTrace {
    slots: Vec<Tensor>,
    caches: Vec<NodeCache>,
}

enum NodeCache {
    None,
    SfMid(Tensor),
    PoolArgmax(Vec<usize>),
}

impl ForwardTrace {
    pub fn output(&self) -> &Tensor {
        self.slots.last().expect("at least the input slot")
    }
}

impl Network {
    pub fn new(nodes: Vec<Node>) -> Result<Self> {
        for (i, node) in nodes.iter().enumerate() {
            let arity = if matches!(node.layer, Layer::Concat) {
                2
            } else {
                1
            };
            if node.inputs.len() != arity || node.inputs.iter().any(|&s| s > i) {
                return Err(Error::Config(format!(
                    "node {i} ({}) has invalid inputs {:?}",
                    node.layer.name(),
                    node.inputs
                )));
            }
        }
        let names = nodes
            .iter()
            .enumerate()
            .flat_map(|(i, n)| {
                n.layer
                    .params()
                    .into_iter()
                    .map(move |(p, _)| format!("layer{i}.{p}"))
            })
            .collect();
        Ok(Self { nodes, names })
    }

    /// A plain chain where every node reads the previous slot.
    pub fn sequential(layers: Vec<Layer>) -> Result<Self> {
        Self::new(
            layers
                .into_iter()
                .enumerate()
                .map(|(i, layer)| Node {
                    layer,
                    inputs: vec![i],
                })
                .collect(),
        )
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn params(&self) -> Vec<ParamRef<'_>> {
        let mut out = Vec::new();
        let mut names = self.names.iter();
        for node in &self.nodes {
            for (kind, tensor) in node.layer.params() {
                out.push(ParamRef {
                    name: names.next().expect("name per param"),
                    tensor,
                    decay: kind != "bias",
                });
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.nodes
            .iter_mut()
            .flat_map(|n| n.layer.params_mut())
            .collect()
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    /// Factorized layers in node order.
    pub fn factorized_layers(&self) -> Vec<&FactorizedFilter> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.layer {
                Layer::SfConv(f) => Some(f),
                _ => None,
            })
            .collect()
    }

    /// For each factorized layer, the flat parameter indices of its
    /// `(q, p)` banks.
    pub fn factorized_param_indices(&self) -> Vec<(usize, usize)> {
        let mut idx = 0;
        let mut out = Vec::new();
        for node in &self.nodes {
            let n = node.layer.params().len();
            if matches!(node.layer, Layer::SfConv(_)) {
                out.push((idx, idx + 1));
            }
            idx += n;
        }
        out
    }

    pub fn forward(&self, input: &Tensor) -> Result<ForwardTrace> {
        let mut slots = vec![input.clone()];
        let mut caches = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let x = &slots[node.inputs[0]];
            let (out, cache) = match &node.layer {
                Layer::Conv { weight, bias, cfg } => (
                    nn::conv2d_forward(x, weight, bias.as_ref(), cfg)?,
                    NodeCache::None,
                ),
                Layer::SfConv(f) => {
                    let (out, mid) = sfconv::sfconv_forward_cached(x, f)?;
                    (out, NodeCache::SfMid(mid))
                }
                Layer::Relu => (nn::relu_forward(x), NodeCache::None),
                Layer::MaxPool => {
                    let p = nn::maxpool2d_forward(x)?;
                    (p.output, NodeCache::PoolArgmax(p.argmax))
                }
                Layer::Upsample => (nn::upsample2x_forward(x)?, NodeCache::None),
                Layer::Concat => (
                    nn::concat_channels(x, &slots[node.inputs[1]])?,
                    NodeCache::None,
                ),
                Layer::Dense { weight, bias } => {
                    (nn::dense_forward(x, weight, bias)?, NodeCache::None)
                }
            };
            slots.push(out);
            caches.push(cache);
        }
        Ok(ForwardTrace { slots, caches })
    }

    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut trace = self.forward(input)?;
        Ok(trace.slots.pop().expect("output slot"))
    }

    /// Parameter gradients (aligned with [`Network::params`]) and the
    /// gradient with respect to the network input.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        upstream: &Tensor,
    ) -> Result<(Vec<Tensor>, Tensor)> {
        let mut slot_grads: Vec<Option<Tensor>> = vec![None; trace.slots.len()];
        *slot_grads.last_mut().expect("output") = Some(upstream.clone());
        let mut per_node: Vec<Vec<Tensor>> = vec![Vec::new(); self.nodes.len()];

        for (i, node) in self.nodes.iter().enumerate().rev() {
            let Some(dy) = slot_grads[i + 1].take() else {
                // Output unused downstream: parameters get zero gradient.
                per_node[i] = node
                    .layer
                    .params()
                    .iter()
                    .map(|(_, t)| zeros_like(t))
                    .collect();
                continue;
            };
            let x = &trace.slots[node.inputs[0]];
            let mut input_grads = Vec::with_capacity(2);
            match (&node.layer, &trace.caches[i]) {
                (Layer::Conv { weight, bias, cfg }, _) => {
                    let g = nn::conv2d_backward(&dy, x, weight, bias.is_some(), cfg)?;
                    per_node[i].push(g.weight);
                    per_node[i].extend(g.bias);
                    input_grads.push(g.input);
                }
                (Layer::SfConv(f), NodeCache::SfMid(mid)) => {
                    let g = sfconv::sfconv_backward(&dy, x, mid, f)?;
                    per_node[i].push(g.q_filters);
                    per_node[i].push(g.p_filters);
                    per_node[i].extend(g.bias);
                    input_grads.push(g.input);
                }
                (Layer::Relu, _) => input_grads.push(nn::relu_backward(&dy, x)?),
                (Layer::MaxPool, NodeCache::PoolArgmax(argmax)) => {
                    input_grads.push(nn::maxpool2d_backward(&dy, argmax, x.shape())?)
                }
                (Layer::Upsample, _) => input_grads.push(nn::upsample2x_backward(&dy)?),
                (Layer::Concat, _) => {
                    let (a, b) = nn::split_channels(&dy, x.shape()[1])?;
                    input_grads.push(a);
                    input_grads.push(b);
                }
                (Layer::Dense { weight, .. }, _) => {
                    let g = nn::dense_backward(&dy, x, weight)?;
                    per_node[i].push(g.weight);
                    per_node[i].push(g.bias);
                    input_grads.push(g.input);
                }
                _ => unreachable!("cache kind always matches layer kind"),
            }
            for (&slot, g) in node.inputs.iter().zip(input_grads) {
                match &mut slot_grads[slot] {
                    Some(acc) => acc.axpy(1.0, &g)?,
                    empty => *empty = Some(g),
                }
            }
        }
        let input_grad = slot_grads[0]
            .take()
            .unwrap_or_else(|| zeros_like(&trace.slots[0]));
        Ok((per_node.into_iter().flatten().collect(), input_grad))
    }

    /// Output shape of every slot for an input of shape `input`.
    pub fn infer_shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![input.to_vec()];
        for node in &self.nodes {
            let s = &shapes[node.inputs[0]];
            let nchw = |s: &[usize]| -> Result<(usize, usize, usize, usize)> {
                match s {
                    [b, c, h, w] => Ok((*b, *c, *h, *w)),
                    _ => Err(Error::ShapeMismatch {
                        op: "infer_shapes",
                        left: s.to_vec(),
                        right: vec![],
                    }),
                }
            };
            let out = match &node.layer {
                Layer::Conv { cfg, .. } => conv_shape(nchw(s)?, cfg)?,
                Layer::SfConv(f) => conv_shape(nchw(s)?, f.config())?,
                Layer::Relu => s.clone(),
                Layer::MaxPool => {
                    let (b, c, h, w) = nchw(s)?;
                    if h < 2 || w < 2 {
                        return Err(Error::Config(format!("max-pool input {h}x{w} too small")));
                    }
                    vec![b, c, h / 2, w / 2]
                }
                Layer::Upsample => {
                    let (b, c, h, w) = nchw(s)?;
                    vec![b, c, 2 * h, 2 * w]
                }
                Layer::Concat => {
                    let (b, c, h, w) = nchw(s)?;
                    let (b2, c2, h2, w2) = nchw(&shapes[node.inputs[1]])?;
                    if (b, h, w) != (b2, h2, w2) {
                        return Err(Error::ShapeMismatch {
                            op: "infer_shapes (concat)",
                            left: s.clone(),
                            right: shapes[node.inputs[1]].clone(),
                        });
                    }
                    vec![b, c + c2, h, w]
                }
                Layer::Dense { weight, .. } => {
                    let features: usize = s[1..].iter().product();
                    if features != weight.cols() {
                        return Err(Error::ShapeMismatch {
                            op: "infer_shapes (dense)",
                            left: s.clone(),
                            right: weight.shape().to_vec(),
                        });
                    }
                    vec![s[0], weight.rows()]
                }
            };
            shapes.push(out);
        }
        Ok(shapes)
    }
}

fn conv_shape((b, c, h, w): (usize, usize, usize, usize), cfg: &ConvConfig) -> Result<Vec<usize>> {
    if c != cfg.in_channels {
        return Err(Error::ShapeMismatch {
            op: "infer_shapes (conv)",
            left: vec![b, c, h, w],
            right: cfg.weight_shape().to_vec(),
        });
    }
    let (oh, ow) = cfg.output_hw(h, w)?;
    Ok(vec![b, cfg.out_channels, oh, ow])
}

fn zeros_like(t: &Tensor) -> Tensor {
    Tensor::zeros(t.shape().to_vec()).expect("valid shape")
}

/// Per-layer description used by the backbone builders.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvSpec {
    pub kind: ConvKind,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub padding: usize,
    pub rank: usize,
}

impl ConvSpec {
    pub fn config(&self) -> ConvConfig {
        ConvConfig::square(
            self.kernel,
            self.stride,
            self.padding,
            self.in_channels,
            self.out_channels,
        )
    }

    /// He-initialized layer drawn from `rng`.
    pub fn build(&self, rng: &mut ChaCha8Rng) -> Result<Layer> {
        let cfg = self.config();
        match self.kind {
            ConvKind::Full => {
                let fan_in = self.in_channels * self.kernel * self.kernel;
                Ok(Layer::Conv {
                    weight: gaussian(rng, &cfg.weight_shape(), 2.0 / fan_in as f64)?,
                    bias: Some(Tensor::zeros([self.out_channels])?),
                    cfg,
                })
            }
            ConvKind::Sfconv => Ok(Layer::SfConv(sfconv::init_factorized_with(
                rng, cfg, self.rank,
            )?)),
        }
    }
}

/// Dense layer with `N(0, 1/features)` weights and zero bias.
pub fn dense_layer(rng: &mut ChaCha8Rng, features: usize, outputs: usize) -> Result<Layer> {
    Ok(Layer::Dense {
        weight: gaussian(rng, &[outputs, features], 1.0 / features as f64)?,
        bias: Tensor::zeros([outputs])?,
    })
}

/// Four conv–ReLU–pool blocks followed by a dense classifier head.
pub fn classifier(
    specs: &[ConvSpec; 4],
    input_hw: (usize, usize),
    classes: usize,
    seed: u64,
) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    for spec in specs {
        layers.push(spec.build(&mut rng)?);
        layers.push(Layer::Relu);
        layers.push(Layer::MaxPool);
    }
    let probe = Network::sequential(layers.clone())?;
    let shapes = probe.infer_shapes(&[1, specs[0].in_channels, input_hw.0, input_hw.1])?;
    let features: usize = shapes.last().expect("shape")[1..].iter().product();
    layers.push(dense_layer(&mut rng, features, classes)?);
    Network::sequential(layers)
}

/// Three-level encoder–decoder with channel-concatenation skips and a
/// 1×1 full-conv head producing one logit per pixel.
///
/// `specs` are, in order: enc1a, enc1b, enc2a, enc2b, bottleneck, dec2, dec1.
pub fn segmenter(specs: &[ConvSpec; 7], seed: u64) -> Result<Network> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = Vec::new();
    let mut push = |layer: Layer, inputs: Vec<usize>| -> usize {
        nodes.push(Node { layer, inputs });
        nodes.len()
    };
    let mut conv_relu = |spec: &ConvSpec,
                         input: usize,
                         push: &mut dyn FnMut(Layer, Vec<usize>) -> usize|
     -> Result<usize> {
        let c = push(spec.build(&mut rng)?, vec![input]);
        Ok(push(Layer::Relu, vec![c]))
    };
    let e1 = conv_relu(&specs[0], 0, &mut push)?;
    let e1 = conv_relu(&specs[1], e1, &mut push)?;
    let p1 = push(Layer::MaxPool, vec![e1]);
    let e2 = conv_relu(&specs[2], p1, &mut push)?;
    let e2 = conv_relu(&specs[3], e2, &mut push)?;
    let p2 = push(Layer::MaxPool, vec![e2]);
    let b = conv_relu(&specs[4], p2, &mut push)?;
    let u2 = push(Layer::Upsample, vec![b]);
    let c2 = push(Layer::Concat, vec![u2, e2]);
    let d2 = conv_relu(&specs[5], c2, &mut push)?;
    let u1 = push(Layer::Upsample, vec![d2]);
    let c1 = push(Layer::Concat, vec![u1, e1]);
    let d1 = conv_relu(&specs[6], c1, &mut push)?;
    let head = ConvSpec {
        kind: ConvKind::Full,
        kernel: 1,
        in_channels: specs[6].out_channels,
        out_channels: 1,
        stride: 1,
        padding: 0,
        rank: 1,
    };
    let head_layer = head.build(&mut rng)?;
    push(head_layer, vec![d1]);
    Network::new(nodes)
}
