use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::RngCore;

use super::adam::AdamState;
use super::batchnorm::{BatchNorm, BatchNormParams};
use super::dense::{Dense, DenseParams};
use super::dropout::Dropout;
use super::gru::{Gru, GruParams};
use super::loss::softmax;
use super::tcn::{CausalConv, TcnBlock, TcnBlockParams};
use super::tensor::Tensor;
use super::Mode;
use crate::error::{Error, Result};
use crate::io::Checkpoint;

const DESCRIPTOR_HEADER: &str = "model v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Dense,
    Gru,
    Tcn,
    Dropout,
    BatchNorm,
    Softmax,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Dense => "dense",
            LayerKind::Gru => "gru",
            LayerKind::Tcn => "tcn",
            LayerKind::Dropout => "dropout",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Softmax => "softmax",
        }
    }
}

/// Row-wise softmax layer; caches its output for the backward pass.
#[derive(Clone, Debug, Default)]
pub struct SoftmaxLayer {
    output: Option<Tensor>,
}

#[derive(Clone, Debug)]
pub enum Layer {
    Dense(Dense),
    Gru(Gru),
    Tcn(TcnBlock),
    Dropout(Dropout),
    BatchNorm(BatchNorm),
    Softmax(SoftmaxLayer),
}

impl Layer {
    pub fn softmax() -> Self {
        Layer::Softmax(SoftmaxLayer::default())
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Gru(_) => LayerKind::Gru,
            Layer::Tcn(_) => LayerKind::Tcn,
            Layer::Dropout(_) => LayerKind::Dropout,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Softmax(_) => LayerKind::Softmax,
        }
    }

    /// Input width, `None` for width-preserving layers without parameters.
    pub fn d_in(&self) -> Option<usize> {
        match self {
            Layer::Dense(l) => Some(l.params.d_in()),
            Layer::Gru(l) => Some(l.params.d_in()),
            Layer::Tcn(l) => Some(l.params.c_in()),
            Layer::BatchNorm(l) => Some(l.params.channels()),
            Layer::Dropout(_) | Layer::Softmax(_) => None,
        }
    }

    pub fn d_out(&self) -> Option<usize> {
        match self {
            Layer::Dense(l) => Some(l.params.d_out()),
            Layer::Gru(l) => Some(l.params.hidden()),
            Layer::Tcn(l) => Some(l.params.c_out()),
            Layer::BatchNorm(l) => Some(l.params.channels()),
            Layer::Dropout(_) | Layer::Softmax(_) => None,
        }
    }

    fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor> {
        match self {
            Layer::Dense(l) => l.forward(x),
            Layer::Gru(l) => l.forward(x, mode, rng),
            Layer::Tcn(l) => l.forward(x, mode, rng),
            Layer::Dropout(l) => Ok(l.forward(x, mode, rng)),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::Softmax(l) => {
                let y = softmax(x);
                l.output = Some(y.clone());
                Ok(y)
            }
        }
    }

    fn backward(&mut self, dy: &Tensor, accumulate: bool) -> Result<Tensor> {
        match self {
            Layer::Dense(l) => l.backward(dy, accumulate),
            Layer::Gru(l) => l.backward(dy, accumulate),
            Layer::Tcn(l) => l.backward(dy, accumulate),
            Layer::Dropout(l) => l.backward(dy),
            Layer::BatchNorm(l) => l.backward(dy, accumulate),
            Layer::Softmax(l) => {
                let y = l
                    .output
                    .take()
                    .ok_or_else(|| Error::State("softmax backward without forward".into()))?;
                if y.shape() != dy.shape() {
                    return Err(Error::shape("softmax upstream gradient shape differs from output"));
                }
                let c = y.cols();
                let mut dx = dy.clone();
                if c > 0 {
                    for (dr, yr) in dx.data_mut().chunks_exact_mut(c).zip(y.data().chunks_exact(c)) {
                        let s: f64 = dr.iter().zip(yr).map(|(d, p)| d * p).sum();
                        dr.iter_mut().zip(yr).for_each(|(d, p)| *d = p * (*d - s));
                    }
                }
                Ok(dx)
            }
        }
    }

    /// Trainable tensors with their gradient accumulators, by local name.
    fn params_grads_mut(&mut self) -> Vec<(String, &mut Tensor, &mut Tensor)> {
        let mut out = Vec::new();
        match self {
            Layer::Dense(l) => {
                for ((n, p), (_, g)) in l.params.named_mut().into_iter().zip(l.grads.named_mut()) {
                    out.push((n.to_string(), p, g));
                }
            }
            Layer::Gru(l) => {
                for ((n, p), (_, g)) in l.params.named_mut().into_iter().zip(l.grads.named_mut()) {
                    out.push((n.to_string(), p, g));
                }
            }
            Layer::Tcn(l) => {
                let (p, g) = (&mut l.params, &mut l.grads);
                for (i, (pc, gc)) in p.convs.iter_mut().zip(g.convs.iter_mut()).enumerate() {
                    out.push((format!("conv{i}.w_past"), &mut pc.w_past, &mut gc.w_past));
                    out.push((format!("conv{i}.w_now"), &mut pc.w_now, &mut gc.w_now));
                    out.push((format!("conv{i}.b"), &mut pc.b, &mut gc.b));
                }
                if let (Some(pp), Some(gp)) = (p.projection.as_mut(), g.projection.as_mut()) {
                    for ((n, a), (_, b)) in pp.named_mut().into_iter().zip(gp.named_mut()) {
                        out.push((format!("proj.{n}"), a, b));
                    }
                }
                if let (Some(pn), Some(gn)) = (p.norms.as_mut(), g.norms.as_mut()) {
                    for (i, (a, b)) in pn.iter_mut().zip(gn.iter_mut()).enumerate() {
                        out.push((format!("bn{i}.gamma"), &mut a.gamma, &mut b.gamma));
                        out.push((format!("bn{i}.beta"), &mut a.beta, &mut b.beta));
                    }
                }
            }
            Layer::BatchNorm(l) => {
                out.push(("gamma".into(), &mut l.params.gamma, &mut l.grad_gamma));
                out.push(("beta".into(), &mut l.params.beta, &mut l.grad_beta));
            }
            Layer::Dropout(_) | Layer::Softmax(_) => {}
        }
        out
    }

    /// Trainable tensors by local name.
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        match self {
            Layer::Dense(l) => out.extend(l.params.named().into_iter().map(|(n, t)| (n.to_string(), t))),
            Layer::Gru(l) => out.extend(l.params.named().into_iter().map(|(n, t)| (n.to_string(), t))),
            Layer::Tcn(l) => {
                for (i, c) in l.params.convs.iter().enumerate() {
                    out.push((format!("conv{i}.w_past"), &c.w_past));
                    out.push((format!("conv{i}.w_now"), &c.w_now));
                    out.push((format!("conv{i}.b"), &c.b));
                }
                if let Some(p) = &l.params.projection {
                    out.extend(p.named().into_iter().map(|(n, t)| (format!("proj.{n}"), t)));
                }
                if let Some(norms) = &l.params.norms {
                    for (i, b) in norms.iter().enumerate() {
                        out.push((format!("bn{i}.gamma"), &b.gamma));
                        out.push((format!("bn{i}.beta"), &b.beta));
                    }
                }
            }
            Layer::BatchNorm(l) => {
                out.push(("gamma".into(), &l.params.gamma));
                out.push(("beta".into(), &l.params.beta));
            }
            Layer::Dropout(_) | Layer::Softmax(_) => {}
        }
        out
    }

    /// Normalization statistics, stored with checkpoints but never trained.
    fn buffers(&self) -> Vec<(String, &BatchNormParams)> {
        match self {
            Layer::Tcn(l) => l
                .params
                .norms
                .iter()
                .flatten()
                .enumerate()
                .map(|(i, b)| (format!("bn{i}."), b))
                .collect(),
            Layer::BatchNorm(l) => vec![(String::new(), &l.params)],
            _ => Vec::new(),
        }
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut BatchNormParams)> {
        match self {
            Layer::Tcn(l) => l
                .params
                .norms
                .iter_mut()
                .flatten()
                .enumerate()
                .map(|(i, b)| (format!("bn{i}."), b))
                .collect(),
            Layer::BatchNorm(l) => vec![(String::new(), &mut l.params)],
            _ => Vec::new(),
        }
    }

    fn descriptor(&self) -> String {
        let stats = |b: &BatchNormParams| u8::from(b.has_stats);
        match self {
            Layer::Dense(l) => format!("in={} out={}", l.params.d_in(), l.params.d_out()),
            Layer::Gru(l) => format!(
                "in={} hidden={} dropout={}",
                l.params.d_in(),
                l.params.hidden(),
                l.input_dropout
            ),
            Layer::Tcn(l) => {
                let dil: Vec<String> = l.params.dilations().iter().map(|d| d.to_string()).collect();
                let stats = l.params.norms.as_ref().map_or(0, |n| n.iter().map(stats).min().unwrap_or(0));
                format!(
                    "in={} filters={} dilations={} dropout={} batchnorm={} stats={}",
                    l.params.c_in(),
                    l.params.c_out(),
                    dil.join(","),
                    l.dropout,
                    u8::from(l.params.norms.is_some()),
                    stats
                )
            }
            Layer::Dropout(l) => format!("rate={}", l.rate()),
            Layer::BatchNorm(l) => format!("channels={} stats={}", l.params.channels(), stats(&l.params)),
            Layer::Softmax(_) => String::new(),
        }
    }

    /// Zero-initialized layer from a descriptor line's `key=value` fields.
    fn from_descriptor(kind: &str, fields: &BTreeMap<&str, &str>) -> Result<Self> {
        let get = |k: &str| -> Result<&str> {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| Error::param(format!("{kind} layer descriptor lacks '{k}'")))
        };
        let int = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|e| Error::param(format!("{kind} layer field {k}: {e}")))
        };
        let real = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|e| Error::param(format!("{kind} layer field {k}: {e}")))
        };
        Ok(match kind {
            "dense" => Layer::Dense(Dense::new(DenseParams::zeros(int("in")?, int("out")?))),
            "gru" => Layer::Gru(Gru::new(GruParams::zeros(int("in")?, int("hidden")?), real("dropout")?)),
            "tcn" => {
                let (c_in, f) = (int("in")?, int("filters")?);
                let dilations = get("dilations")?
                    .split(',')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::param(format!("tcn dilations: {e}")))?;
                let convs = dilations
                    .iter()
                    .enumerate()
                    .map(|(i, &d)| CausalConv::zeros(if i == 0 { c_in } else { f }, f, d))
                    .collect();
                let has_stats = int("stats")? == 1;
                let norms = (int("batchnorm")? == 1).then(|| {
                    dilations
                        .iter()
                        .map(|_| {
                            let mut b = BatchNormParams::new(f);
                            b.has_stats = has_stats;
                            b
                        })
                        .collect()
                });
                let params = TcnBlockParams {
                    convs,
                    projection: (c_in != f).then(|| DenseParams::zeros(c_in, f)),
                    norms,
                };
                Layer::Tcn(TcnBlock::new(params, real("dropout")?)?)
            }
            "dropout" => Layer::Dropout(Dropout::new(real("rate")?)?),
            "batchnorm" => {
                let mut p = BatchNormParams::new(int("channels")?);
                p.has_stats = int("stats")? == 1;
                Layer::BatchNorm(BatchNorm::new(p))
            }
            "softmax" => Layer::softmax(),
            other => {
                return Err(Error::Lookup {
                    kind: "layer kind",
                    name: other.to_string(),
                })
            }
        })
    }
}

#[derive(Clone, Debug)]
struct Slot {
    name: String,
    layer: Layer,
    trainable: bool,
}

/// Parameter gradients of the trainable layers plus the input gradient.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub params: BTreeMap<String, Tensor>,
    pub input: Tensor,
}

/// An ordered stack of named layers.
#[derive(Clone, Debug, Default)]
pub struct Model {
    slots: Vec<Slot>,
    /// Number of layers evaluated by the most recent forward pass.
    depth: Option<usize>,
}

impl Model {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a trainable layer; names must be unique and widths must chain.
    pub fn push(&mut self, name: impl Into<String>, layer: Layer) -> Result<()> {
        let name = name.into();
        if name.is_empty() || name.contains(|c: char| c.is_whitespace() || c == '.') {
            return Err(Error::param(format!("invalid layer name '{name}'")));
        }
        if self.slots.iter().any(|s| s.name == name) {
            return Err(Error::param(format!("duplicate layer name '{name}'")));
        }
        if let (Some(prev), Some(d_in)) = (self.output_dim(), layer.d_in()) {
            if prev != d_in {
                return Err(Error::shape(format!(
                    "layer {name} expects width {d_in}, previous layers produce {prev}"
                )));
            }
        }
        self.slots.push(Slot {
            name,
            layer,
            trainable: true,
        });
        Ok(())
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.slots.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        self.slots.iter().map(|s| s.layer.kind()).collect()
    }

    fn slot(&self, name: &str) -> Result<&Slot> {
        self.slots.iter().find(|s| s.name == name).ok_or_else(|| Error::Lookup {
            kind: "layer",
            name: name.to_string(),
        })
    }

    fn slot_mut(&mut self, name: &str) -> Result<&mut Slot> {
        self.slots.iter_mut().find(|s| s.name == name).ok_or_else(|| Error::Lookup {
            kind: "layer",
            name: name.to_string(),
        })
    }

    pub fn layer(&self, name: &str) -> Result<&Layer> {
        Ok(&self.slot(name)?.layer)
    }

    pub fn layer_mut(&mut self, name: &str) -> Result<&mut Layer> {
        Ok(&mut self.slot_mut(name)?.layer)
    }

    pub fn is_trainable(&self, name: &str) -> Result<bool> {
        Ok(self.slot(name)?.trainable)
    }

    /// Frozen layers keep their parameters and receive no gradients but
    /// still pass gradients to earlier layers.
    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        self.slot_mut(name)?.trainable = trainable;
        Ok(())
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.slots.iter().find_map(|s| s.layer.d_in())
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.slots.iter().rev().find_map(|s| s.layer.d_out())
    }

    /// Names of the GRU layers in stack order.
    pub fn gru_layers(&self) -> Vec<&str> {
        self.slots
            .iter()
            .filter(|s| s.layer.kind() == LayerKind::Gru)
            .map(|s| s.name.as_str())
            .collect()
    }

    pub fn gru_params(&self, name: &str) -> Result<&GruParams> {
        match self.layer(name)? {
            Layer::Gru(g) => Ok(&g.params),
            _ => Err(Error::param(format!("layer {name} is not a GRU"))),
        }
    }

    pub fn gru_params_mut(&mut self, name: &str) -> Result<&mut GruParams> {
        match self.layer_mut(name)? {
            Layer::Gru(g) => Ok(&mut g.params),
            _ => Err(Error::param(format!("layer {name} is not a GRU"))),
        }
    }

    /// All trainable tensors (frozen layers included) as `layer.param`.
    pub fn parameters(&self) -> Vec<(String, &Tensor)> {
        self.slots
            .iter()
            .flat_map(|s| s.layer.params().into_iter().map(move |(n, t)| (format!("{}.{n}", s.name), t)))
            .collect()
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.parameters().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Mutable access to one parameter tensor by full name.
    pub fn parameter_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let (layer, local) = name.split_once('.').ok_or_else(|| Error::Lookup {
            kind: "parameter",
            name: name.to_string(),
        })?;
        self.slot_mut(layer)?
            .layer
            .params_grads_mut()
            .into_iter()
            .find(|(n, _, _)| n == local)
            .map(|(_, p, _)| p)
            .ok_or_else(|| Error::Lookup {
                kind: "parameter",
                name: name.to_string(),
            })
    }

    pub fn n_params(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor> {
        self.run(x, mode, rng, self.slots.len())
    }

    /// Forward pass stopping before a trailing softmax layer.
    pub fn forward_logits(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor> {
        let end = match self.slots.last() {
            Some(s) if s.layer.kind() == LayerKind::Softmax => self.slots.len() - 1,
            _ => self.slots.len(),
        };
        self.run(x, mode, rng, end)
    }

    fn run(&mut self, x: &Tensor, mode: Mode, rng: &mut dyn RngCore, end: usize) -> Result<Tensor> {
        self.depth = None;
        let mut h = x.clone();
        for slot in &mut self.slots[..end] {
            h = slot.layer.forward(&h, mode, rng)?;
        }
        self.depth = Some(end);
        Ok(h)
    }

    /// Reverse pass from the output of the last forward call; accumulates
    /// gradients in trainable layers and returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor) -> Result<Tensor> {
        let depth = self
            .depth
            .take()
            .ok_or_else(|| Error::State("backward without a preceding forward pass".into()))?;
        let mut g = dy.clone();
        for slot in self.slots[..depth].iter_mut().rev() {
            g = slot.layer.backward(&g, slot.trainable)?;
        }
        Ok(g)
    }

    pub fn zero_grads(&mut self) {
        for slot in &mut self.slots {
            for (_, _, g) in slot.layer.params_grads_mut() {
                g.fill(0.0);
            }
        }
    }

    /// Accumulated gradients of trainable layers.
    pub fn gradients(&mut self) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for slot in self.slots.iter_mut().filter(|s| s.trainable) {
            for (n, _, g) in slot.layer.params_grads_mut() {
                out.insert(format!("{}.{n}", slot.name), g.clone());
            }
        }
        out
    }

    pub fn scale_grads(&mut self, a: f64) {
        for slot in self.slots.iter_mut().filter(|s| s.trainable) {
            for (_, _, g) in slot.layer.params_grads_mut() {
                g.scale(a);
            }
        }
    }

    /// Rescales trainable gradients to a global L2 norm of at most `max_norm`;
    /// returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let mut ss = 0.0;
        for slot in self.slots.iter_mut().filter(|s| s.trainable) {
            for (_, _, g) in slot.layer.params_grads_mut() {
                ss += g.sum_sq();
            }
        }
        let norm = ss.sqrt();
        if norm.is_finite() && norm > max_norm && max_norm > 0.0 {
            self.scale_grads(max_norm / norm);
        }
        norm
    }

    /// One Adam step over every trainable parameter.
    pub fn apply_adam(&mut self, adam: &mut AdamState) -> Result<()> {
        adam.begin_step();
        for slot in self.slots.iter_mut().filter(|s| s.trainable) {
            let prefix = slot.name.clone();
            for (n, p, g) in slot.layer.params_grads_mut() {
                adam.update(&format!("{prefix}.{n}"), p, g)?;
            }
        }
        Ok(())
    }

    /// Text topology: a header line, then one `layer <name> <kind> key=value...` line per layer.
    pub fn topology(&self) -> String {
        let mut s = String::from(DESCRIPTOR_HEADER);
        s.push('\n');
        for slot in &self.slots {
            let d = slot.layer.descriptor();
            let _ = write!(s, "layer {} {} trainable={}", slot.name, slot.layer.kind().as_str(), u8::from(slot.trainable));
            if !d.is_empty() {
                s.push(' ');
                s.push_str(&d);
            }
            s.push('\n');
        }
        s
    }

    /// Parameters, normalization statistics and topology in one container.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.topology());
        for (n, t) in self.parameters() {
            c.push(n, t.clone());
        }
        for slot in &self.slots {
            for (prefix, b) in slot.layer.buffers() {
                c.push(format!("{}.{prefix}running_mean", slot.name), b.running_mean.clone());
                c.push(format!("{}.{prefix}running_var", slot.name), b.running_var.clone());
            }
        }
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let mut lines = c.descriptor.lines();
        if lines.next() != Some(DESCRIPTOR_HEADER) {
            return Err(Error::param("checkpoint does not describe a model"));
        }
        let mut model = Model::new();
        for line in lines.filter(|l| l.starts_with("layer ")) {
            let mut tokens = line.split_whitespace().skip(1);
            let (Some(name), Some(kind)) = (tokens.next(), tokens.next()) else {
                return Err(Error::param(format!("malformed layer line '{line}'")));
            };
            let fields: BTreeMap<&str, &str> = tokens.filter_map(|t| t.split_once('=')).collect();
            let layer = Layer::from_descriptor(kind, &fields)?;
            model.push(name, layer)?;
            let trainable = fields.get("trainable").is_none_or(|v| *v == "1");
            model.set_trainable(name, trainable)?;
        }
        for slot in &mut model.slots {
            let name = slot.name.clone();
            for (n, p, _) in slot.layer.params_grads_mut() {
                load_into(c, &format!("{name}.{n}"), p)?;
            }
            for (prefix, b) in slot.layer.buffers_mut() {
                load_into(c, &format!("{name}.{prefix}running_mean"), &mut b.running_mean)?;
                load_into(c, &format!("{name}.{prefix}running_var"), &mut b.running_var)?;
            }
        }
        Ok(model)
    }
}

fn load_into(c: &Checkpoint, name: &str, dst: &mut Tensor) -> Result<()> {
    let src = c.require(name)?;
    if src.shape() != dst.shape() {
        return Err(Error::shape(format!(
            "checkpoint tensor {name} has shape {:?}, model expects {:?}",
            src.shape(),
            dst.shape()
        )));
    }
    dst.data_mut().copy_from_slice(src.data());
    Ok(())
}

/// Reverse-mode gradients after a forward pass: zeroes the accumulators,
/// propagates `upstream` and collects the trainable parameter gradients.
pub fn backprop(model: &mut Model, upstream: &Tensor) -> Result<Gradients> {
    model.zero_grads();
    let input = model.backward(upstream)?;
    Ok(Gradients {
        params: model.gradients(),
        input,
    })
}
