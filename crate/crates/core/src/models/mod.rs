//! Layer specifications, the graph interpreter, and the two architecture builders.
//!
//! A [`ModelGraph`] is a list of segments. A sequential segment feeds each
//! layer the previous layer's output. A dense block feeds each of its layers
//! the channel concatenation of the block input and every earlier layer's
//! output, and emits the concatenation of all of them.

mod baseline;
mod densenet;
mod params;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub use baseline::{build_baseline_cnn, build_baseline_cnn_seeded, BaselineCnnConfig};
pub use densenet::{build_densenet, build_densenet121, DenseNetConfig};
pub use params::{ParamStore, Parameter};

use crate::autodiff::{Gradients, NodeId, Tape};
use crate::error::{Error, Result};
use crate::ops::{Activation, BatchNormConfig, Mode};
use crate::tensor::Tensor;

/// Name of the pseudo-layer that taps the network input.
pub const INPUT_LAYER: &str = "input";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Baseline,
    DenseNet,
    Custom,
}

impl ModelKind {
    pub fn tag(self) -> u8 {
        match self {
            ModelKind::Baseline => 0,
            ModelKind::DenseNet => 1,
            ModelKind::Custom => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ModelKind::Baseline),
            1 => Some(ModelKind::DenseNet),
            2 => Some(ModelKind::Custom),
            _ => None,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Baseline => "baseline",
            ModelKind::DenseNet => "densenet121",
            ModelKind::Custom => "custom",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ModelKind::Baseline),
            "densenet121" | "densenet" => Ok(ModelKind::DenseNet),
            _ => Err(Error::invalid(format!(
                "unknown model `{s}` (expected baseline or densenet121)"
            ))),
        }
    }
}

/// Expected per-sample input shape C×H×W.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    BatchNorm {
        channels: usize,
    },
    Activation(Activation),
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool,
    /// Fully connected; flattens N×C×H×W input to N×(C·H·W) first.
    Linear {
        in_features: usize,
        out_features: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
        }
    }

    pub fn conv(
        name: impl Into<String>,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Self {
        Self::new(
            name,
            LayerKind::Conv {
                in_channels: cin,
                out_channels: cout,
                kernel,
                stride,
                padding,
                bias,
            },
        )
    }

    pub fn bn(name: impl Into<String>, channels: usize) -> Self {
        Self::new(name, LayerKind::BatchNorm { channels })
    }

    pub fn act(name: impl Into<String>, kind: Activation) -> Self {
        Self::new(name, LayerKind::Activation(kind))
    }

    pub fn relu(name: impl Into<String>) -> Self {
        Self::act(name, Activation::Relu)
    }

    pub fn linear(name: impl Into<String>, in_features: usize, out_features: usize) -> Self {
        Self::new(
            name,
            LayerKind::Linear {
                in_features,
                out_features,
            },
        )
    }

    /// Convolution and fully connected layers carry weights and count towards depth.
    pub fn is_weighted(&self) -> bool {
        matches!(self.kind, LayerKind::Conv { .. } | LayerKind::Linear { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlock {
    pub name: String,
    pub in_channels: usize,
    pub growth_rate: usize,
    /// One sequential chain per block layer; each emits `growth_rate` channels.
    pub layers: Vec<Vec<LayerSpec>>,
}

impl DenseBlock {
    pub fn out_channels(&self) -> usize {
        self.in_channels + self.layers.len() * self.growth_rate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Segment {
    Sequential(Vec<LayerSpec>),
    Dense(DenseBlock),
}

/// How a dense block wires its layers. `ChainOnly` zeroes every part of the
/// concatenated input except the most recent one, which degrades the block
/// to plain sequential flow while keeping every parameter shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Wiring {
    #[default]
    Dense,
    ChainOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    Baseline(BaselineCnnConfig),
    DenseNet(DenseNetConfig),
    Custom,
}

/// Structural summary of one dense block.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseBlockInfo {
    pub name: String,
    pub in_channels: usize,
    pub growth_rate: usize,
    /// Input channels seen by each layer of the block.
    pub layer_in_channels: Vec<usize>,
    pub out_channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    arch: Architecture,
    input: InputSpec,
    segments: Vec<Segment>,
    params: ParamStore,
    bn_config: BatchNormConfig,
}

/// Node handles produced by one forward pass on a tape.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: NodeId,
    taps: Vec<(String, NodeId)>,
    param_nodes: Vec<(usize, NodeId)>,
    running_updates: Vec<(usize, Tensor)>,
}

impl ForwardPass {
    pub fn tap(&self, name: &str) -> Option<NodeId> {
        self.taps.iter().find(|(n, _)| n == name).map(|&(_, id)| id)
    }

    /// New running statistics computed by train-mode batch norm layers.
    pub fn running_updates(&self) -> &[(usize, Tensor)] {
        &self.running_updates
    }

    pub fn param_nodes(&self) -> &[(usize, NodeId)] {
        &self.param_nodes
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions {
    pub wiring: Wiring,
    /// Create trainable parameters as gradient-tracking leaves.
    pub track_params: bool,
}

struct Interp<'a> {
    model: &'a ModelGraph,
    tape: &'a mut Tape,
    mode: Mode,
    opts: ForwardOptions,
    pass: ForwardPass,
}

impl Interp<'_> {
    fn param(&mut self, name: &str) -> Result<NodeId> {
        let id = self
            .model
            .params
            .id(name)
            .ok_or_else(|| Error::invalid(format!("model has no parameter `{name}`")))?;
        let p = self.model.params.by_id(id);
        let node = self.tape.leaf(p.value.clone(), self.opts.track_params && p.trainable);
        self.pass.param_nodes.push((id, node));
        Ok(node)
    }

    fn layer(&mut self, spec: &LayerSpec, x: NodeId) -> Result<NodeId> {
        let name = &spec.name;
        let out = match &spec.kind {
            LayerKind::Conv {
                stride, padding, bias, ..
            } => {
                let w = self.param(&format!("{name}.weight"))?;
                let b = if *bias {
                    Some(self.param(&format!("{name}.bias"))?)
                } else {
                    None
                };
                self.tape.conv2d(x, w, b, *stride, *padding)?
            }
            LayerKind::BatchNorm { .. } => {
                let gamma = self.param(&format!("{name}.gamma"))?;
                let beta = self.param(&format!("{name}.beta"))?;
                let rm_id = self.model.params.id(&format!("{name}.running_mean")).unwrap();
                let rv_id = self.model.params.id(&format!("{name}.running_var")).unwrap();
                let rm = &self.model.params.by_id(rm_id).value;
                let rv = &self.model.params.by_id(rv_id).value;
                let (out, stats) = self
                    .tape
                    .batchnorm2d(x, gamma, beta, rm, rv, self.mode, self.model.bn_config)?;
                if let Some((m, v)) = stats {
                    self.pass.running_updates.push((rm_id, m));
                    self.pass.running_updates.push((rv_id, v));
                }
                out
            }
            LayerKind::Activation(kind) => self.tape.activation(*kind, x)?,
            LayerKind::MaxPool {
                kernel,
                stride,
                padding,
            } => self.tape.maxpool2d(x, *kernel, *stride, *padding)?,
            LayerKind::AvgPool { kernel, stride } => self.tape.avgpool2d(x, *kernel, *stride)?,
            LayerKind::GlobalAvgPool => self.tape.global_avg_pool(x)?,
            LayerKind::Linear { .. } => {
                let flat = self.tape.flatten(x)?;
                let w = self.param(&format!("{name}.weight"))?;
                let b = self.param(&format!("{name}.bias"))?;
                self.tape.linear(flat, w, Some(b))?
            }
        };
        self.pass.taps.push((name.clone(), out));
        Ok(out)
    }

    fn chain(&mut self, layers: &[LayerSpec], mut x: NodeId) -> Result<NodeId> {
        for spec in layers {
            x = self.layer(spec, x)?;
        }
        Ok(x)
    }

    fn dense(&mut self, block: &DenseBlock, x: NodeId) -> Result<NodeId> {
        let mut features = vec![x];
        for chain in &block.layers {
            let input = match (features.len(), self.opts.wiring) {
                (1, _) => x,
                (_, Wiring::Dense) => self.tape.concat(&features)?,
                (_, Wiring::ChainOnly) => {
                    let mut parts: Vec<NodeId> = features[..features.len() - 1]
                        .iter()
                        .map(|&f| {
                            let z = self.tape.value(f).zeros_like();
                            self.tape.constant(z)
                        })
                        .collect();
                    parts.push(*features.last().unwrap());
                    self.tape.concat(&parts)?
                }
            };
            let out = self.chain(chain, input)?;
            features.push(out);
        }
        let out = self.tape.concat(&features)?;
        self.pass.taps.push((block.name.clone(), out));
        Ok(out)
    }
}

impl ModelGraph {
    /// Assembles a graph and initializes its parameters from `seed`:
    /// He-normal weights (std = sqrt(2 / fan_in)), zero biases, unit BN scale.
    pub fn new(arch: Architecture, input: InputSpec, segments: Vec<Segment>, seed: u64) -> Result<Self> {
        let mut model = ModelGraph {
            arch,
            input,
            segments,
            params: ParamStore::new(),
            bn_config: BatchNormConfig::default(),
        };
        model.check_names()?;
        model.init_params(seed)?;
        Ok(model)
    }

    /// A model with a hand-assembled layer graph.
    pub fn custom(input: InputSpec, segments: Vec<Segment>, seed: u64) -> Result<Self> {
        Self::new(Architecture::Custom, input, segments, seed)
    }

    fn all_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.segments
            .iter()
            .flat_map(|s| -> Box<dyn Iterator<Item = &LayerSpec>> {
                match s {
                    Segment::Sequential(layers) => Box::new(layers.iter()),
                    Segment::Dense(b) => Box::new(b.layers.iter().flatten()),
                }
            })
    }

    fn check_names(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        seen.insert(INPUT_LAYER.to_string());
        for name in self.layer_names().into_iter().skip(1) {
            if !seen.insert(name.clone()) {
                return Err(Error::invalid(format!("duplicate layer name `{name}`")));
            }
        }
        Ok(())
    }

    fn init_params(&mut self, seed: u64) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs: Vec<LayerSpec> = self.all_layers().cloned().collect();
        for spec in specs {
            let name = &spec.name;
            match spec.kind {
                LayerKind::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    bias,
                    ..
                } => {
                    let fan_in = in_channels * kernel * kernel;
                    let w = he_normal(&[out_channels, in_channels, kernel, kernel], fan_in, &mut rng)?;
                    self.params.insert(format!("{name}.weight"), w, true)?;
                    if bias {
                        self.params
                            .insert(format!("{name}.bias"), Tensor::zeros([out_channels])?, true)?;
                    }
                }
                LayerKind::BatchNorm { channels } => {
                    self.params
                        .insert(format!("{name}.gamma"), Tensor::full([channels], 1.0)?, true)?;
                    self.params
                        .insert(format!("{name}.beta"), Tensor::zeros([channels])?, true)?;
                    self.params
                        .insert(format!("{name}.running_mean"), Tensor::zeros([channels])?, false)?;
                    self.params
                        .insert(format!("{name}.running_var"), Tensor::full([channels], 1.0)?, false)?;
                }
                LayerKind::Linear {
                    in_features,
                    out_features,
                } => {
                    let w = he_normal(&[out_features, in_features], in_features, &mut rng)?;
                    self.params.insert(format!("{name}.weight"), w, true)?;
                    self.params
                        .insert(format!("{name}.bias"), Tensor::zeros([out_features])?, true)?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> ModelKind {
        match self.arch {
            Architecture::Baseline(_) => ModelKind::Baseline,
            Architecture::DenseNet(_) => ModelKind::DenseNet,
            Architecture::Custom => ModelKind::Custom,
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_spec(&self) -> InputSpec {
        self.input
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.trainable_count()
    }

    /// All tap-able names in execution order, starting with [`INPUT_LAYER`].
    pub fn layer_names(&self) -> Vec<String> {
        let mut names = vec![INPUT_LAYER.to_string()];
        for seg in &self.segments {
            match seg {
                Segment::Sequential(layers) => names.extend(layers.iter().map(|l| l.name.clone())),
                Segment::Dense(b) => {
                    names.extend(b.layers.iter().flatten().map(|l| l.name.clone()));
                    names.push(b.name.clone());
                }
            }
        }
        names
    }

    /// Depth by the usual convention: every convolution plus every fully
    /// connected layer.
    pub fn count_layers(&self) -> usize {
        self.all_layers().filter(|l| l.is_weighted()).count()
    }

    pub fn dense_blocks(&self) -> Vec<DenseBlockInfo> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Dense(b) => Some(DenseBlockInfo {
                    name: b.name.clone(),
                    in_channels: b.in_channels,
                    growth_rate: b.growth_rate,
                    layer_in_channels: b
                        .layers
                        .iter()
                        .map(|chain| {
                            chain
                                .iter()
                                .find_map(|l| match l.kind {
                                    LayerKind::BatchNorm { channels } => Some(channels),
                                    LayerKind::Conv { in_channels, .. } => Some(in_channels),
                                    _ => None,
                                })
                                .unwrap_or(0)
                        })
                        .collect(),
                    out_channels: b.out_channels(),
                }),
                _ => None,
            })
            .collect()
    }

    /// Default Grad-CAM tap: the last convolutional feature map.
    pub fn default_cam_layer(&self) -> String {
        match &self.arch {
            Architecture::Baseline(cfg) => format!("block{}.relu", cfg.filters.len()),
            Architecture::DenseNet(cfg) => format!("block{}", cfg.block_sizes.len()),
            Architecture::Custom => self
                .all_layers()
                .filter(|l| matches!(l.kind, LayerKind::Conv { .. }))
                .last()
                .map(|l| l.name.clone())
                .unwrap_or_else(|| INPUT_LAYER.to_string()),
        }
    }

    pub fn check_input(&self, batch: &Tensor) -> Result<()> {
        let spec = self.input;
        let ok = matches!(*batch.shape(), [_, c, h, w] if (c, h, w) == (spec.channels, spec.height, spec.width));
        if !ok {
            return Err(Error::shape(
                "forward",
                format!(
                    "expected N×{}×{}×{}, got {:?}",
                    spec.channels,
                    spec.height,
                    spec.width,
                    batch.shape()
                ),
            ));
        }
        Ok(())
    }

    /// Records a forward pass on `tape`, starting from node `input`.
    pub fn forward_on(&self, tape: &mut Tape, input: NodeId, mode: Mode, opts: ForwardOptions) -> Result<ForwardPass> {
        self.check_input(tape.value(input))?;
        let mut it = Interp {
            model: self,
            tape,
            mode,
            opts,
            pass: ForwardPass {
                logits: input,
                taps: vec![(INPUT_LAYER.to_string(), input)],
                param_nodes: Vec::new(),
                running_updates: Vec::new(),
            },
        };
        let mut x = input;
        for seg in &self.segments {
            x = match seg {
                Segment::Sequential(layers) => it.chain(layers, x)?,
                Segment::Dense(block) => it.dense(block, x)?,
            };
        }
        it.pass.logits = x;
        Ok(it.pass)
    }

    /// Logits for a batch. Train mode uses batch statistics but does not
    /// touch the stored running statistics.
    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        self.forward_with(batch, mode, Wiring::Dense)
    }

    pub fn forward_with(&self, batch: &Tensor, mode: Mode, wiring: Wiring) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(batch.clone());
        let pass = self.forward_on(
            &mut tape,
            x,
            mode,
            ForwardOptions {
                wiring,
                track_params: false,
            },
        )?;
        Ok(tape.value(pass.logits).clone())
    }

    fn unknown_layer(&self, name: &str) -> Error {
        Error::UnknownLayer {
            name: name.to_string(),
            available: self.layer_names(),
        }
    }

    /// Eval-mode forward pass that keeps the activation of `layer_name`
    /// linked on the tape, so its gradient can be requested afterwards.
    pub fn feature_maps(&self, input: &Tensor, layer_name: &str) -> Result<FeatureTap> {
        if !self.layer_names().iter().any(|n| n == layer_name) {
            return Err(self.unknown_layer(layer_name));
        }
        let mut tape = Tape::new();
        // the input is tracked so taps at the input layer still receive gradients
        let x = tape.leaf(input.clone(), true);
        let pass = self.forward_on(&mut tape, x, Mode::Eval, ForwardOptions::default())?;
        let tap = pass.tap(layer_name).ok_or_else(|| self.unknown_layer(layer_name))?;
        Ok(FeatureTap { tape, pass, tap })
    }

    /// Applies running statistics produced by a train-mode pass.
    pub fn commit_running_stats(&mut self, updates: &[(usize, Tensor)]) {
        for (id, value) in updates {
            self.params.by_id_mut(*id).value = value.clone();
        }
    }

    /// Adds the gradients of every parameter leaf of `pass` into the store.
    pub fn accumulate_grads(&mut self, pass: &ForwardPass, grads: &Gradients<f32>) {
        for &(id, node) in pass.param_nodes() {
            if let Some(g) = grads.get(node) {
                self.params.by_id_mut(id).grad.add_assign(g);
            }
        }
    }

    /// Architecture description stored in checkpoints.
    pub fn arch_metadata(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let i = self.input;
        m.insert("arch.input".into(), format!("{}x{}x{}", i.channels, i.height, i.width));
        match &self.arch {
            Architecture::Baseline(cfg) => {
                m.insert("arch.in_channels".into(), cfg.in_channels.to_string());
                m.insert("arch.input_hw".into(), cfg.input_hw.to_string());
                m.insert("arch.filters".into(), join(&cfg.filters));
                m.insert("arch.classes".into(), cfg.classes.to_string());
            }
            Architecture::DenseNet(cfg) => {
                m.insert("arch.in_channels".into(), cfg.in_channels.to_string());
                m.insert("arch.input_hw".into(), cfg.input_hw.to_string());
                m.insert("arch.growth_rate".into(), cfg.growth_rate.to_string());
                m.insert("arch.stem_channels".into(), cfg.stem_channels.to_string());
                m.insert("arch.block_sizes".into(), join(&cfg.block_sizes));
                m.insert("arch.compression".into(), cfg.compression.to_string());
                m.insert("arch.bottleneck_width".into(), cfg.bottleneck_width.to_string());
                m.insert("arch.classes".into(), cfg.classes.to_string());
            }
            Architecture::Custom => {}
        }
        m
    }

    /// Rebuilds an architecture from [`ModelGraph::arch_metadata`] output.
    pub fn from_arch_metadata(kind: ModelKind, meta: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::invalid(format!("checkpoint metadata lacks `{k}`")))
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::invalid(format!("metadata `{k}` is not an integer")))
        };
        let list = |k: &str| -> Result<Vec<usize>> {
            get(k)?
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad list in `{k}`")))
                })
                .collect()
        };
        match kind {
            ModelKind::Baseline => build_baseline_cnn(&BaselineCnnConfig {
                in_channels: num("arch.in_channels")?,
                input_hw: num("arch.input_hw")?,
                filters: list("arch.filters")?,
                classes: num("arch.classes")?,
            }),
            ModelKind::DenseNet => build_densenet(&DenseNetConfig {
                in_channels: num("arch.in_channels")?,
                input_hw: num("arch.input_hw")?,
                growth_rate: num("arch.growth_rate")?,
                stem_channels: num("arch.stem_channels")?,
                block_sizes: list("arch.block_sizes")?,
                compression: get("arch.compression")?
                    .parse()
                    .map_err(|_| Error::invalid("metadata `arch.compression` is not a number"))?,
                bottleneck_width: num("arch.bottleneck_width")?,
                classes: num("arch.classes")?,
                seed: 0,
            }),
            ModelKind::Custom => Err(Error::invalid(
                "custom models cannot be rebuilt from a checkpoint; load the tensors into a graph instead",
            )),
        }
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn he_normal(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).map_err(|e| Error::invalid(e.to_string()))?;
    Tensor::from_fn(shape.to_vec(), |_| dist.sample(rng) as f32)
}

/// A recorded eval-mode pass with one tapped activation.
#[derive(Debug, Clone)]
pub struct FeatureTap {
    tape: Tape,
    pass: ForwardPass,
    tap: NodeId,
}

impl FeatureTap {
    pub fn activation(&self) -> &Tensor {
        self.tape.value(self.tap)
    }

    pub fn logits(&self) -> &Tensor {
        self.tape.value(self.pass.logits)
    }

    /// Gradient of logit `[sample, class]` with respect to the tapped activation.
    pub fn gradient_of_logit(&self, sample: usize, class: usize) -> Result<Tensor> {
        let (n, k) = self.logits().dims2("gradient_of_logit")?;
        if sample >= n || class >= k {
            return Err(Error::invalid(format!(
                "logit [{sample}, {class}] out of range for {n}×{k} output"
            )));
        }
        let mut tape = self.tape.clone();
        let score = tape.select(self.pass.logits, sample * k + class)?;
        let grads = tape.backward_retaining(score, &[self.tap])?;
        Ok(grads
            .get(self.tap)
            .cloned()
            .unwrap_or_else(|| self.activation().zeros_like()))
    }
}
