//! Model architecture: layer specs, the composite backbone/head builder, and
//! the forward pass.
//!
//! A model is a VGG-style convolutional backbone followed by a custom head.
//! By default the head gates the backbone features with spatial attention,
//! refines them with additional convolutions, pools positions by attention
//! weights, and classifies with a dense + softmax stage. Backbone parameters
//! can be frozen so that loaded weights are used but never trained.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Graph, Mode, Scalar, Tensor, TensorError, TensorResult, Var};

pub mod attention;

pub use attention::{attention_pool, attention_scores, position_matrix, spatial_attention_gate};

#[derive(Debug)]
pub enum NnError {
    InvalidConfig(String),
    Tensor(TensorError),
}

impl fmt::Display for NnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NnError::InvalidConfig(msg) => write!(f, "invalid model config: {msg}"),
            NnError::Tensor(e) => write!(f, "tensor error: {e}"),
        }
    }
}

impl std::error::Error for NnError {}

impl From<TensorError> for NnError {
    fn from(e: TensorError) -> Self {
        NnError::Tensor(e)
    }
}

/// One layer of a backbone or head stack.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    MaxPool {
        window: usize,
        stride: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    Dense {
        units: usize,
    },
    Flatten,
    SpatialAttention,
    AttentionPool,
    Softmax,
}

impl LayerSpec {
    fn fingerprint_token(&self) -> String {
        match self {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => format!("conv({filters},{kernel},{stride},{padding})"),
            LayerSpec::MaxPool { window, stride } => format!("maxpool({window},{stride})"),
            LayerSpec::Relu => "relu".to_string(),
            LayerSpec::Dropout { rate } => format!("dropout({rate})"),
            LayerSpec::Dense { units } => format!("dense({units})"),
            LayerSpec::Flatten => "flatten".to_string(),
            LayerSpec::SpatialAttention => "attn".to_string(),
            LayerSpec::AttentionPool => "attnpool".to_string(),
            LayerSpec::Softmax => "softmax".to_string(),
        }
    }

    fn parse_token(token: &str) -> Result<LayerSpec, NnError> {
        let bad = || NnError::InvalidConfig(format!("unrecognized layer token '{token}'"));
        if let Some(rest) = token.strip_prefix("conv(").and_then(|r| r.strip_suffix(')')) {
            let nums: Vec<usize> = rest
                .split(',')
                .map(|v| v.parse().map_err(|_| bad()))
                .collect::<Result<_, _>>()?;
            if nums.len() != 4 {
                return Err(bad());
            }
            return Ok(LayerSpec::Conv {
                filters: nums[0],
                kernel: nums[1],
                stride: nums[2],
                padding: nums[3],
            });
        }
        if let Some(rest) = token.strip_prefix("maxpool(").and_then(|r| r.strip_suffix(')')) {
            let nums: Vec<usize> = rest
                .split(',')
                .map(|v| v.parse().map_err(|_| bad()))
                .collect::<Result<_, _>>()?;
            if nums.len() != 2 {
                return Err(bad());
            }
            return Ok(LayerSpec::MaxPool {
                window: nums[0],
                stride: nums[1],
            });
        }
        if let Some(rest) = token.strip_prefix("dropout(").and_then(|r| r.strip_suffix(')')) {
            let rate: f64 = rest.parse().map_err(|_| bad())?;
            return Ok(LayerSpec::Dropout { rate });
        }
        if let Some(rest) = token.strip_prefix("dense(").and_then(|r| r.strip_suffix(')')) {
            let units: usize = rest.parse().map_err(|_| bad())?;
            return Ok(LayerSpec::Dense { units });
        }
        match token {
            "relu" => Ok(LayerSpec::Relu),
            "flatten" => Ok(LayerSpec::Flatten),
            "attn" => Ok(LayerSpec::SpatialAttention),
            "attnpool" => Ok(LayerSpec::AttentionPool),
            "softmax" => Ok(LayerSpec::Softmax),
            _ => Err(bad()),
        }
    }
}

/// Feature shape while walking a layer stack.
#[derive(Clone, Debug, PartialEq)]
enum FeatureShape {
    Map { channels: usize, height: usize, width: usize },
    Vector { len: usize },
}

/// Architecture description for one model branch.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: Vec<LayerSpec>,
    pub head: Vec<LayerSpec>,
    pub num_classes: usize,
    pub input_size: usize,
    pub backbone_frozen: bool,
}

impl ModelConfig {
    /// Two-block desk-scale preset for fast end-to-end runs at 64x64 input.
    pub fn desk() -> Self {
        ModelConfig {
            backbone: vec![
                LayerSpec::Conv { filters: 8, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { window: 2, stride: 2 },
                LayerSpec::Conv { filters: 16, kernel: 3, stride: 1, padding: 1 },
                LayerSpec::Relu,
                LayerSpec::MaxPool { window: 2, stride: 2 },
            ],
            head: Self::default_head(16, 0.25),
            num_classes: 2,
            input_size: 64,
            backbone_frozen: false,
        }
    }

    /// VGG16-style backbone (13 conv layers in five pooled blocks), 224x224.
    pub fn vgg16() -> Self {
        ModelConfig {
            backbone: Self::vgg_backbone(&[2, 2, 3, 3, 3]),
            head: Self::default_head(256, 0.5),
            num_classes: 2,
            input_size: 224,
            backbone_frozen: false,
        }
    }

    /// VGG19-style backbone (16 conv layers in five pooled blocks), 224x224.
    pub fn vgg19() -> Self {
        ModelConfig {
            backbone: Self::vgg_backbone(&[2, 2, 4, 4, 4]),
            head: Self::default_head(256, 0.5),
            num_classes: 2,
            input_size: 224,
            backbone_frozen: false,
        }
    }

    fn vgg_backbone(convs_per_block: &[usize]) -> Vec<LayerSpec> {
        let widths = [64, 128, 256, 512, 512];
        let mut layers = Vec::new();
        for (block, &convs) in convs_per_block.iter().enumerate() {
            for _ in 0..convs {
                layers.push(LayerSpec::Conv {
                    filters: widths[block],
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                });
                layers.push(LayerSpec::Relu);
            }
            layers.push(LayerSpec::MaxPool { window: 2, stride: 2 });
        }
        layers
    }

    /// Spatial attention gate, one refining conv, attention pooling, then the
    /// dense classifier.
    fn default_head(conv_filters: usize, drop_rate: f64) -> Vec<LayerSpec> {
        vec![
            LayerSpec::SpatialAttention,
            LayerSpec::Conv { filters: conv_filters, kernel: 3, stride: 1, padding: 1 },
            LayerSpec::Relu,
            LayerSpec::AttentionPool,
            LayerSpec::Dropout { rate: drop_rate },
            LayerSpec::Dense { units: 2 },
            LayerSpec::Softmax,
        ]
    }

    /// Preset lookup by name.
    pub fn preset(name: &str) -> Result<Self, NnError> {
        match name {
            "desk" => Ok(Self::desk()),
            "vgg16" => Ok(Self::vgg16()),
            "vgg19" => Ok(Self::vgg19()),
            _ => Err(NnError::InvalidConfig(format!(
                "unknown model preset '{name}' (expected desk, vgg16 or vgg19)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.num_classes < 2 {
            return Err(NnError::InvalidConfig(
                "num_classes must be at least 2".into(),
            ));
        }
        if self.input_size == 0 {
            return Err(NnError::InvalidConfig("input_size must be positive".into()));
        }
        match self.head.last() {
            Some(LayerSpec::Softmax) => {}
            _ => {
                return Err(NnError::InvalidConfig(
                    "final head layer must be softmax".into(),
                ))
            }
        }
        let pool_count = self
            .head
            .iter()
            .filter(|l| matches!(l, LayerSpec::AttentionPool | LayerSpec::Flatten))
            .count();
        if pool_count != 1 {
            return Err(NnError::InvalidConfig(format!(
                "head must contain exactly one attention_pool or flatten, found {pool_count}"
            )));
        }
        let pool_pos = self
            .head
            .iter()
            .position(|l| matches!(l, LayerSpec::AttentionPool | LayerSpec::Flatten))
            .unwrap();
        match self.head.iter().position(|l| matches!(l, LayerSpec::Dense { .. })) {
            Some(dense_pos) if dense_pos > pool_pos => {}
            Some(_) => {
                return Err(NnError::InvalidConfig(
                    "dense head must come after the pooling layer".into(),
                ))
            }
            None => {
                return Err(NnError::InvalidConfig(
                    "head must contain a dense classifier".into(),
                ))
            }
        }
        if let Some(LayerSpec::Dense { units }) = self
            .head
            .iter()
            .rev()
            .find(|l| matches!(l, LayerSpec::Dense { .. }))
        {
            if *units != self.num_classes {
                return Err(NnError::InvalidConfig(format!(
                    "final dense layer has {units} units, expected num_classes = {}",
                    self.num_classes
                )));
            }
        }
        for layer in self.backbone.iter().chain(self.head.iter()) {
            match layer {
                LayerSpec::Conv { filters, kernel, stride, .. } => {
                    if *filters == 0 || *kernel == 0 || *stride == 0 {
                        return Err(NnError::InvalidConfig(
                            "conv filters, kernel and stride must be positive".into(),
                        ));
                    }
                }
                LayerSpec::MaxPool { window, stride } => {
                    if *window == 0 || *stride == 0 {
                        return Err(NnError::InvalidConfig(
                            "maxpool window and stride must be positive".into(),
                        ));
                    }
                }
                LayerSpec::Dropout { rate } => {
                    if !(0.0..1.0).contains(rate) {
                        return Err(NnError::InvalidConfig(format!(
                            "dropout rate {rate} must lie in [0, 1)"
                        )));
                    }
                }
                LayerSpec::Dense { units }
                    if *units == 0 => {
                        return Err(NnError::InvalidConfig(
                            "dense units must be positive".into(),
                        ));
                    }
                _ => {}
            }
        }
        self.walk_shapes().map(|_| ())
    }

    /// Canonical architecture string; stored in checkpoints and compared at
    /// load time. Parseable back via [`ModelConfig::from_fingerprint`].
    pub fn fingerprint(&self) -> String {
        let join = |layers: &[LayerSpec]| {
            layers
                .iter()
                .map(|l| l.fingerprint_token())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "v1;input={};classes={};frozen={};backbone={};head={}",
            self.input_size,
            self.num_classes,
            self.backbone_frozen as u8,
            join(&self.backbone),
            join(&self.head),
        )
    }

    /// Rebuild a config from its fingerprint string.
    pub fn from_fingerprint(fp: &str) -> Result<Self, NnError> {
        let bad = |what: &str| NnError::InvalidConfig(format!("bad fingerprint: {what}"));
        let mut input_size = None;
        let mut num_classes = None;
        let mut frozen = None;
        let mut backbone = None;
        let mut head = None;
        for (i, part) in fp.split(';').enumerate() {
            if i == 0 {
                if part != "v1" {
                    return Err(bad("unknown version"));
                }
                continue;
            }
            let (key, value) = part.split_once('=').ok_or_else(|| bad("missing '='"))?;
            match key {
                "input" => input_size = Some(value.parse().map_err(|_| bad("input"))?),
                "classes" => num_classes = Some(value.parse().map_err(|_| bad("classes"))?),
                "frozen" => frozen = Some(value == "1"),
                "backbone" => backbone = Some(Self::parse_layers(value)?),
                "head" => head = Some(Self::parse_layers(value)?),
                _ => return Err(bad("unknown field")),
            }
        }
        let cfg = ModelConfig {
            backbone: backbone.ok_or_else(|| bad("missing backbone"))?,
            head: head.ok_or_else(|| bad("missing head"))?,
            num_classes: num_classes.ok_or_else(|| bad("missing classes"))?,
            input_size: input_size.ok_or_else(|| bad("missing input"))?,
            backbone_frozen: frozen.ok_or_else(|| bad("missing frozen"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse_layers(s: &str) -> Result<Vec<LayerSpec>, NnError> {
        // Split on commas that are not inside parentheses.
        let mut tokens = Vec::new();
        let mut depth = 0usize;
        let mut current = String::new();
        for ch in s.chars() {
            match ch {
                '(' => {
                    depth += 1;
                    current.push(ch);
                }
                ')' => {
                    depth = depth.saturating_sub(1);
                    current.push(ch);
                }
                ',' if depth == 0 => {
                    tokens.push(std::mem::take(&mut current));
                }
                _ => current.push(ch),
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
        tokens.iter().map(|t| LayerSpec::parse_token(t)).collect()
    }

    /// Declared output shape of the full model.
    pub fn output_shape(&self) -> Result<Vec<usize>, NnError> {
        match self.walk_shapes()?.1 {
            FeatureShape::Vector { len } => Ok(vec![len]),
            FeatureShape::Map { channels, height, width } => Ok(vec![channels, height, width]),
        }
    }

    /// Shape after the backbone, and after the full head.
    fn walk_shapes(&self) -> Result<(FeatureShape, FeatureShape), NnError> {
        let mut shape = FeatureShape::Map {
            channels: 1,
            height: self.input_size,
            width: self.input_size,
        };
        shape = Self::walk_stack(&self.backbone, shape, "backbone")?;
        let after_backbone = shape.clone();
        shape = Self::walk_stack(&self.head, shape, "head")?;
        Ok((after_backbone, shape))
    }

    fn walk_stack(
        layers: &[LayerSpec],
        mut shape: FeatureShape,
        section: &str,
    ) -> Result<FeatureShape, NnError> {
        let want_map = |shape: &FeatureShape, layer: &str| match shape {
            FeatureShape::Map { channels, height, width } => Ok((*channels, *height, *width)),
            FeatureShape::Vector { .. } => Err(NnError::InvalidConfig(format!(
                "{section}: {layer} requires a feature map input"
            ))),
        };
        for layer in layers {
            shape = match layer {
                LayerSpec::Conv { filters, kernel, stride, padding } => {
                    let (_, h, w) = want_map(&shape, "conv")?;
                    let out_h = conv_extent(h, *kernel, *stride, *padding, section)?;
                    let out_w = conv_extent(w, *kernel, *stride, *padding, section)?;
                    FeatureShape::Map { channels: *filters, height: out_h, width: out_w }
                }
                LayerSpec::MaxPool { window, stride } => {
                    let (c, h, w) = want_map(&shape, "maxpool")?;
                    if *window > h || *window > w {
                        return Err(NnError::InvalidConfig(format!(
                            "{section}: pool window {window} exceeds feature map {h}x{w}"
                        )));
                    }
                    FeatureShape::Map {
                        channels: c,
                        height: (h - window) / stride + 1,
                        width: (w - window) / stride + 1,
                    }
                }
                LayerSpec::Relu | LayerSpec::Dropout { .. } | LayerSpec::Softmax => shape,
                LayerSpec::SpatialAttention => {
                    want_map(&shape, "spatial attention")?;
                    shape
                }
                LayerSpec::AttentionPool => {
                    let (c, _, _) = want_map(&shape, "attention pool")?;
                    FeatureShape::Vector { len: c }
                }
                LayerSpec::Flatten => {
                    let (c, h, w) = want_map(&shape, "flatten")?;
                    FeatureShape::Vector { len: c * h * w }
                }
                LayerSpec::Dense { units } => match shape {
                    FeatureShape::Vector { .. } => FeatureShape::Vector { len: *units },
                    FeatureShape::Map { .. } => {
                        return Err(NnError::InvalidConfig(format!(
                            "{section}: dense requires a flattened or pooled input"
                        )))
                    }
                },
            };
        }
        Ok(shape)
    }
}

fn conv_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    section: &str,
) -> Result<usize, NnError> {
    let padded = input + 2 * padding;
    if padded < kernel || !(padded - kernel).is_multiple_of(stride) {
        return Err(NnError::InvalidConfig(format!(
            "{section}: conv kernel {kernel}/stride {stride}/padding {padding} does not tile extent {input}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// One named parameter tensor.
#[derive(Clone, Debug)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// A built model: config plus materialized parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    config: ModelConfig,
    params: Vec<Param<T>>,
}

/// Dense layer `weights (m,n) . x (n) + bias (m)`.
pub fn dense<T: Scalar>(x: &Var<T>, weights: &Var<T>, bias: &Var<T>) -> TensorResult<Var<T>> {
    let x_shape = x.shape();
    let w_shape = weights.shape();
    let b_shape = bias.shape();
    if x_shape.len() != 1
        || w_shape.len() != 2
        || w_shape[1] != x_shape[0]
        || b_shape != vec![w_shape[0]]
    {
        return Err(TensorError::ShapeMismatch {
            op: "dense",
            left: w_shape,
            right: x_shape,
        });
    }
    let units = w_shape[0];
    weights
        .matmul(&x.reshape(&[x_shape[0], 1])?)?
        .reshape(&[units])?
        .add(bias)
}

/// Build a model from a config: He-uniform conv/dense weights with zero
/// biases, zero-initialized attention queries (uniform attention at start).
pub fn build_model<T: Scalar>(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Model<T>, NnError> {
    cfg.validate()?;
    let mut params = Vec::new();
    let mut shape = FeatureShape::Map {
        channels: 1,
        height: cfg.input_size,
        width: cfg.input_size,
    };
    shape = init_stack(&cfg.backbone, "backbone", shape, !cfg.backbone_frozen, rng, &mut params)?;
    init_stack(&cfg.head, "head", shape, true, rng, &mut params)?;
    Ok(Model {
        config: cfg.clone(),
        params,
    })
}

fn he_uniform<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<T> = (0..numel)
        .map(|_| T::from(rng.gen_range(-bound..=bound)).expect("cast"))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

fn init_stack<T: Scalar>(
    layers: &[LayerSpec],
    section: &str,
    mut shape: FeatureShape,
    trainable: bool,
    rng: &mut ChaCha8Rng,
    params: &mut Vec<Param<T>>,
) -> Result<FeatureShape, NnError> {
    for (i, layer) in layers.iter().enumerate() {
        match (layer, &shape) {
            (LayerSpec::Conv { filters, kernel, stride, padding }, FeatureShape::Map { channels, height, width }) => {
                let fan_in = channels * kernel * kernel;
                params.push(Param {
                    name: format!("{section}.{i}.conv.weight"),
                    value: he_uniform(&[*filters, *channels, *kernel, *kernel], fan_in, rng),
                    trainable,
                });
                params.push(Param {
                    name: format!("{section}.{i}.conv.bias"),
                    value: Tensor::zeros(&[*filters]),
                    trainable,
                });
                let out_h = conv_extent(*height, *kernel, *stride, *padding, section)?;
                let out_w = conv_extent(*width, *kernel, *stride, *padding, section)?;
                shape = FeatureShape::Map { channels: *filters, height: out_h, width: out_w };
            }
            (LayerSpec::MaxPool { window, stride }, FeatureShape::Map { channels, height, width }) => {
                shape = FeatureShape::Map {
                    channels: *channels,
                    height: (height - window) / stride + 1,
                    width: (width - window) / stride + 1,
                };
            }
            (LayerSpec::Dense { units }, FeatureShape::Vector { len }) => {
                params.push(Param {
                    name: format!("{section}.{i}.dense.weight"),
                    value: he_uniform(&[*units, *len], *len, rng),
                    trainable,
                });
                params.push(Param {
                    name: format!("{section}.{i}.dense.bias"),
                    value: Tensor::zeros(&[*units]),
                    trainable,
                });
                shape = FeatureShape::Vector { len: *units };
            }
            (LayerSpec::SpatialAttention, FeatureShape::Map { channels, .. }) => {
                params.push(Param {
                    name: format!("{section}.{i}.attn.query"),
                    value: Tensor::zeros(&[*channels]),
                    trainable,
                });
            }
            (LayerSpec::AttentionPool, FeatureShape::Map { channels, .. }) => {
                params.push(Param {
                    name: format!("{section}.{i}.attnpool.query"),
                    value: Tensor::zeros(&[*channels]),
                    trainable,
                });
                shape = FeatureShape::Vector { len: *channels };
            }
            (LayerSpec::Flatten, FeatureShape::Map { channels, height, width }) => {
                shape = FeatureShape::Vector { len: channels * height * width };
            }
            (LayerSpec::Relu | LayerSpec::Dropout { .. } | LayerSpec::Softmax, _) => {}
            (layer, _) => {
                return Err(NnError::InvalidConfig(format!(
                    "{section}: layer {layer:?} is incompatible with the incoming shape"
                )))
            }
        }
    }
    Ok(shape)
}

impl<T: Scalar> Model<T> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> String {
        self.config.fingerprint()
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    /// Replace all parameter values by name. Every model parameter must be
    /// present with a matching shape.
    pub fn load_params(&mut self, source: &[(String, Tensor<T>)]) -> Result<(), NnError> {
        for param in &mut self.params {
            let found = source
                .iter()
                .find(|(name, _)| *name == param.name)
                .ok_or_else(|| {
                    NnError::InvalidConfig(format!("missing parameter '{}'", param.name))
                })?;
            if found.1.shape() != param.value.shape() {
                return Err(NnError::InvalidConfig(format!(
                    "parameter '{}' has shape {:?}, expected {:?}",
                    param.name,
                    found.1.shape(),
                    param.value.shape()
                )));
            }
            param.value = found.1.clone();
        }
        Ok(())
    }

    /// Register every parameter as a graph leaf; frozen parameters become
    /// constants so backward skips them.
    pub fn bind<'m>(&'m self, graph: &Graph<T>) -> BoundModel<'m, T> {
        let vars = self
            .params
            .iter()
            .map(|p| graph.leaf(p.value.clone(), p.trainable))
            .collect();
        BoundModel { model: self, vars }
    }

    /// Run one image through the model in inference mode on a private graph.
    pub fn predict(&self, input: &Tensor<T>) -> Result<(usize, Vec<f64>), NnError> {
        use rand::SeedableRng;
        let graph = Graph::new();
        let bound = self.bind(&graph);
        let x = graph.constant(input.clone());
        // Inference has no stochastic layers; the rng is never consulted.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let probs = bound.forward(&x, Mode::Infer, &mut rng)?;
        let values: Vec<f64> = probs
            .value()
            .data()
            .iter()
            .map(|v| v.to_f64().expect("finite"))
            .collect();
        let label = argmax(&values);
        Ok((label, values))
    }
}

/// Index of the largest value (first one on ties).
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A model whose parameters are registered on a graph.
pub struct BoundModel<'m, T: Scalar> {
    model: &'m Model<T>,
    vars: Vec<Var<T>>,
}

impl<'m, T: Scalar> BoundModel<'m, T> {
    pub fn param_vars(&self) -> &[Var<T>] {
        &self.vars
    }

    /// Full forward pass: head applied to backbone features.
    pub fn forward(
        &self,
        x: &Var<T>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var<T>, NnError> {
        let features = self.forward_backbone(x, mode, rng)?;
        self.forward_head(&features, mode, rng)
    }

    /// Backbone features only.
    pub fn forward_backbone(
        &self,
        x: &Var<T>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var<T>, NnError> {
        self.run_stack(&self.model.config.backbone, "backbone", x, mode, rng)
    }

    /// Head only, applied to backbone features.
    pub fn forward_head(
        &self,
        features: &Var<T>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var<T>, NnError> {
        self.run_stack(&self.model.config.head, "head", features, mode, rng)
    }

    fn param(&self, name: &str) -> &Var<T> {
        let idx = self
            .model
            .params
            .iter()
            .position(|p| p.name == name)
            .unwrap_or_else(|| panic!("parameter '{name}' exists by construction"));
        &self.vars[idx]
    }

    fn run_stack(
        &self,
        layers: &[LayerSpec],
        section: &str,
        input: &Var<T>,
        mode: Mode,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var<T>, NnError> {
        let mut x = input.clone();
        for (i, layer) in layers.iter().enumerate() {
            x = match layer {
                LayerSpec::Conv { stride, padding, .. } => {
                    let w = self.param(&format!("{section}.{i}.conv.weight"));
                    let b = self.param(&format!("{section}.{i}.conv.bias"));
                    x.conv2d(w, b, *stride, *padding)?
                }
                LayerSpec::MaxPool { window, stride } => x.maxpool2d(*window, *stride)?,
                LayerSpec::Relu => x.relu()?,
                LayerSpec::Dropout { rate } => x.dropout(*rate, mode, rng)?,
                LayerSpec::Dense { .. } => {
                    let w = self.param(&format!("{section}.{i}.dense.weight"));
                    let b = self.param(&format!("{section}.{i}.dense.bias"));
                    dense(&x, w, b)?
                }
                LayerSpec::Flatten => x.reshape(&[x.numel()])?,
                LayerSpec::SpatialAttention => {
                    let q = self.param(&format!("{section}.{i}.attn.query"));
                    spatial_attention_gate(&x, q)?
                }
                LayerSpec::AttentionPool => {
                    let q = self.param(&format!("{section}.{i}.attnpool.query"));
                    let keys = position_matrix(&x)?;
                    let (_, alpha) = attention_scores(q, &keys)?;
                    attention_pool(&alpha, &keys)?
                }
                LayerSpec::Softmax => x.softmax(0)?,
            };
        }
        Ok(x)
    }
}
