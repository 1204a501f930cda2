//! Declarative architecture specs, parameter layouts, and forward passes for
//! ResNet, FNO, U-Net_base, U-Net_mod, U-Net_att and U-FNet.

mod checkpoint;
mod fno;
mod registry;
mod resnet;
mod unet;
mod unet_base;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::conditioning::{projection_layout, Conditioning, ConditioningContext, Injector};
use crate::error::{config_err, dim_err, Result};
use crate::tensor::{Graph, Padding, Real, Tensor, Var};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use registry::{Init, Layout, ParamDef, Params};
pub(crate) use registry::{index_of, Index};

/// Architecture family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Resnet,
    Fno,
    UnetBase,
    UnetMod,
    UnetAtt,
    Ufnet,
}

impl Family {
    pub const ALL: [Family; 6] =
        [Family::Resnet, Family::Fno, Family::UnetBase, Family::UnetMod, Family::UnetAtt, Family::Ufnet];

    pub fn name(self) -> &'static str {
        match self {
            Family::Resnet => "resnet",
            Family::Fno => "fno",
            Family::UnetBase => "unet_base",
            Family::UnetMod => "unet_mod",
            Family::UnetAtt => "unet_att",
            Family::Ufnet => "ufnet",
        }
    }

    pub fn is_unet(self) -> bool {
        matches!(self, Family::UnetBase | Family::UnetMod | Family::UnetAtt | Family::Ufnet)
    }

    /// Peak learning rate that trains this family reliably: attention
    /// variants need the lower end of the range.
    pub fn default_lr(self) -> f64 {
        match self {
            Family::UnetAtt => 1e-4,
            _ => 2e-4,
        }
    }

    fn default_multipliers(self) -> Vec<usize> {
        match self {
            Family::UnetBase => vec![2, 2, 2, 2],
            _ => vec![1, 2, 2, 4],
        }
    }
}

fn default_hidden() -> usize {
    64
}
fn default_fields() -> usize {
    3
}
fn default_history() -> usize {
    4
}
fn default_modes() -> [usize; 2] {
    [8, 8]
}
fn default_ufnet_blocks() -> usize {
    1
}
fn default_blocks_per_level() -> usize {
    2
}
fn default_layers() -> usize {
    8
}
fn default_kernel() -> usize {
    3
}
fn default_embed_dim() -> usize {
    64
}

/// Everything needed to build a model deterministically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: Family,
    #[serde(default = "default_hidden")]
    pub hidden_channels: usize,
    #[serde(default = "default_fields")]
    pub in_fields: usize,
    #[serde(default = "default_fields")]
    pub out_fields: usize,
    /// Number of past frames stacked on the channel axis.
    #[serde(default = "default_history")]
    pub history: usize,
    /// Spectral cut-offs of every FNO layer.
    #[serde(default = "default_modes")]
    pub fno_modes: [usize; 2],
    /// How many full-resolution U-Net levels use Fourier blocks (1 or 2).
    #[serde(default = "default_ufnet_blocks")]
    pub ufnet_blocks: usize,
    /// Cut-offs per Fourier level; by default the FNO cut-offs, halved per
    /// level with a floor of 4.
    #[serde(default)]
    pub ufnet_modes: Option<Vec<[usize; 2]>>,
    /// Per-level channel multipliers, applied cumulatively.
    #[serde(default)]
    pub channel_multipliers: Option<Vec<usize>>,
    /// Residual blocks per U-Net_mod level.
    #[serde(default = "default_blocks_per_level")]
    pub blocks_per_level: usize,
    /// ResNet blocks or FNO layers.
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// Kernel of the U-Net_mod family's embedding and output convolutions (3 or 1).
    #[serde(default = "default_kernel")]
    pub kernel_size: usize,
    #[serde(default)]
    pub padding: Padding,
    #[serde(default)]
    pub conditioning: Conditioning,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    /// A spec with every optional field at its default.
    pub fn new(family: Family, hidden_channels: usize) -> Self {
        ModelSpec {
            family,
            hidden_channels,
            in_fields: default_fields(),
            out_fields: default_fields(),
            history: default_history(),
            fno_modes: default_modes(),
            ufnet_blocks: default_ufnet_blocks(),
            ufnet_modes: None,
            channel_multipliers: None,
            blocks_per_level: default_blocks_per_level(),
            layers: default_layers(),
            kernel_size: default_kernel(),
            padding: Padding::default(),
            conditioning: Conditioning::None,
            embed_dim: default_embed_dim(),
            seed: 0,
        }
    }

    pub fn input_channels(&self) -> usize {
        self.history * self.in_fields
    }

    pub fn multipliers(&self) -> Vec<usize> {
        self.channel_multipliers.clone().unwrap_or_else(|| self.family.default_multipliers())
    }

    pub fn fourier_modes(&self) -> Vec<[usize; 2]> {
        self.ufnet_modes.clone().unwrap_or_else(|| {
            (0..self.ufnet_blocks).map(|i| self.fno_modes.map(|m| (m >> i).max(4).min(m))).collect()
        })
    }

    /// Width of the projected conditioning vector.
    pub fn cond_width(&self) -> usize {
        4 * self.hidden_channels
    }

    /// The spec with every defaulted optional field written out.
    pub fn resolved(&self) -> ModelSpec {
        let mut s = self.clone();
        if s.family.is_unet() {
            s.channel_multipliers = Some(self.multipliers());
        }
        if s.family == Family::Ufnet {
            s.ufnet_modes = Some(self.fourier_modes());
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_channels", self.hidden_channels),
            ("in_fields", self.in_fields),
            ("out_fields", self.out_fields),
            ("history", self.history),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(config_err!("model.{name} must be positive"));
            }
        }
        if self.embed_dim < 2 || self.embed_dim % 2 != 0 {
            return Err(config_err!("model.embed_dim must be even and at least 2, got {}", self.embed_dim));
        }
        match self.family {
            Family::Resnet | Family::Fno => {
                if self.layers == 0 {
                    return Err(config_err!("model.layers must be positive"));
                }
            }
            _ => {
                let m = self.multipliers();
                if m.is_empty() || m.contains(&0) {
                    return Err(config_err!("model.channel_multipliers must be non-empty and positive, got {m:?}"));
                }
            }
        }
        if self.family == Family::Fno && self.fno_modes.contains(&0) {
            return Err(config_err!("model.fno_modes must be positive, got {:?}", self.fno_modes));
        }
        if self.family == Family::Fno && self.conditioning == Conditioning::Adagn {
            return Err(config_err!("AdaGN conditioning needs normalization layers, which FNO does not have"));
        }
        if matches!(self.family, Family::UnetMod | Family::UnetAtt | Family::Ufnet) {
            if self.blocks_per_level == 0 {
                return Err(config_err!("model.blocks_per_level must be positive"));
            }
            if self.kernel_size != 1 && self.kernel_size != 3 {
                return Err(config_err!("model.kernel_size must be 1 or 3, got {}", self.kernel_size));
            }
        }
        if self.family == Family::Ufnet {
            let levels = self.multipliers().len();
            if self.ufnet_blocks == 0 || self.ufnet_blocks > 2 || self.ufnet_blocks > levels {
                return Err(config_err!("model.ufnet_blocks must be 1 or 2, got {}", self.ufnet_blocks));
            }
            let modes = self.fourier_modes();
            if modes.len() != self.ufnet_blocks {
                return Err(config_err!(
                    "model.ufnet_modes lists {} levels but ufnet_blocks is {}",
                    modes.len(),
                    self.ufnet_blocks
                ));
            }
            if modes.iter().flatten().any(|&m| m == 0) {
                return Err(config_err!("model.ufnet_modes must be positive, got {modes:?}"));
            }
        }
        Ok(())
    }

    /// Parameter layout in registry order.
    pub fn layout(&self) -> Result<Layout> {
        self.validate()?;
        let mut layout = Layout::default();
        if self.conditioning != Conditioning::None {
            projection_layout(&mut layout, self.embed_dim, self.cond_width());
        }
        match self.family {
            Family::Resnet => resnet::layout(self, &mut layout),
            Family::Fno => fno::layout(self, &mut layout),
            Family::UnetBase => unet_base::layout(self, &mut layout),
            Family::UnetMod | Family::UnetAtt | Family::Ufnet => unet::layout(self, &mut layout),
        }
        Ok(layout)
    }

    pub fn parameter_count(&self) -> Result<usize> {
        Ok(self.layout()?.count())
    }

    /// Spatial extents must be multiples of this.
    pub fn spatial_multiple(&self) -> usize {
        if self.family.is_unet() {
            1 << self.multipliers().len()
        } else {
            1
        }
    }
}

/// Instantiated parameters plus the spec they were built from.
#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    spec: ModelSpec,
    layout: Layout,
    index: Index,
    params: Vec<Tensor<T>>,
}

/// Builds an `f32` model.
pub fn build(spec: &ModelSpec) -> Result<Model<f32>> {
    Model::build(spec)
}

/// Total number of scalar parameters.
pub fn parameter_count<T: Real>(model: &Model<T>) -> usize {
    model.params.iter().map(Tensor::numel).sum()
}

impl<T: Real> Model<T> {
    /// Allocates the layout and draws every tensor from a stream seeded by `spec.seed`.
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        let layout = spec.layout()?;
        let params = layout.materialize(spec.seed);
        Ok(Model { spec: spec.clone(), index: index_of(&layout), layout, params })
    }

    /// Reassembles a model from stored tensors, checking them against the layout.
    pub fn from_parts(spec: &ModelSpec, params: Vec<Tensor<T>>) -> Result<Self> {
        let layout = spec.layout()?;
        if layout.defs().len() != params.len() {
            return Err(dim_err!("layout has {} tensors, got {}", layout.defs().len(), params.len()));
        }
        for (d, t) in layout.defs().iter().zip(&params) {
            if d.shape != t.shape() {
                return Err(dim_err!("parameter {} should be {:?}, got {:?}", d.name, d.shape, t.shape()));
            }
        }
        Ok(Model { spec: spec.clone(), index: index_of(&layout), layout, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        parameter_count(self)
    }

    /// Index of a named tensor in registry order.
    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.position(name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.position(name).map(|i| &mut self.params[i])
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            layout: self.layout.clone(),
            index: Arc::clone(&self.index),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    /// Places every parameter on `graph` as a leaf.
    pub fn attach<'g>(&self, graph: &'g Graph<T>, trainable: bool) -> Params<'g, T> {
        Params::new(graph, &self.params, Arc::clone(&self.index), trainable)
    }

    /// Forward pass `[b, history·in_fields, h, w] → [b, out_fields, h, w]`.
    pub fn forward<'g>(
        &self,
        graph: &'g Graph<T>,
        params: &Params<'g, T>,
        x: Var<'g, T>,
        ctx: Option<&ConditioningContext>,
    ) -> Result<Var<'g, T>> {
        let shape = x.shape();
        let &[b, c, h, w] = &shape[..] else {
            return Err(dim_err!("model input must be [batch, channels, h, w], got {shape:?}"));
        };
        if c != self.spec.input_channels() {
            return Err(dim_err!(
                "model expects {} input channels ({} frames × {} fields), got {c}",
                self.spec.input_channels(),
                self.spec.history,
                self.spec.in_fields
            ));
        }
        let multiple = self.spec.spatial_multiple();
        if h % multiple != 0 || w % multiple != 0 {
            return Err(dim_err!("{} needs extents divisible by {multiple}, got {h}×{w}", self.spec.family.name()));
        }
        let inj = Injector::new(graph, params, self.spec.conditioning, self.spec.embed_dim, ctx, b)?;
        let net = Net { p: params, inj, padding: self.spec.padding };
        match self.spec.family {
            Family::Resnet => resnet::forward(&self.spec, &net, x),
            Family::Fno => fno::forward(&self.spec, &net, x),
            Family::UnetBase => unet_base::forward(&self.spec, &net, x),
            Family::UnetMod | Family::UnetAtt | Family::Ufnet => unet::forward(&self.spec, &net, x),
        }
    }

    /// Inference on a plain tensor.
    pub fn predict(&self, x: &Tensor<T>, ctx: Option<&ConditioningContext>) -> Result<Tensor<T>> {
        let graph = Graph::new();
        let params = self.attach(&graph, false);
        let y = self.forward(&graph, &params, graph.constant(x.clone()), ctx)?;
        Ok((*y.value()).clone())
    }
}

/// Shared helpers for the forward passes.
pub(crate) struct Net<'a, 'g, T: Real> {
    pub p: &'a Params<'g, T>,
    pub inj: Injector<'a, 'g, T>,
    pub padding: Padding,
}

pub(crate) const NORM_EPS: f64 = 1e-5;

impl<'g, T: Real> Net<'_, 'g, T> {
    pub fn conv(&self, name: &str, x: Var<'g, T>, stride: usize) -> Result<Var<'g, T>> {
        x.conv2d(self.p.get(&format!("{name}.w")), Some(self.p.get(&format!("{name}.b"))), stride, self.padding)
    }

    pub fn norm(&self, name: &str, groups: usize) -> crate::conditioning::GroupNorm<'g, T> {
        crate::conditioning::GroupNorm {
            groups,
            gamma: self.p.get(&format!("{name}.gamma")),
            beta: self.p.get(&format!("{name}.beta")),
            eps: NORM_EPS,
        }
    }

    pub fn spectral(&self, name: &str, x: Var<'g, T>) -> Result<Var<'g, T>> {
        let w = crate::spectral::SpectralWeights {
            pos: self.p.get(&format!("{name}.pos")),
            neg: self.p.get(&format!("{name}.neg")),
        };
        x.spectral_conv(&w)
    }
}
