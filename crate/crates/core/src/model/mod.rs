//! A miniature windowed-attention image-restoration Transformer.
//!
//! Layout: 3×3 conv shallow embedding → blocks (attention and FFN sub-layers,
//! each wrapped by the configured normalization scheme) → 3×3 conv plus a
//! global residual to the shallow features → pixel-shuffle upsampler, or a
//! 3×3 conv head when `scale == 1`. Token features are channel-last
//! `[B, L, C]` with `L = h·w` in raster order.

mod attention;
pub mod checkpoint;
mod index;
pub mod rpe;

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diagnostics::{channel_magnitudes, entropy_of_magnitudes, sqmean, ENTROPY_EPS};
use crate::error::{shape_err, Error, Result};
use crate::norms::{
    expand_channels, Mode, NormKind, NormOutputVars, NormSpec, NormVars, DEFAULT_EPSILON,
};
use crate::numeric::{Graph, Precision, Tensor, Var};

pub use attention::window_attention;
use index::IndexCache;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Blocks per group.
    pub depths: Vec<usize>,
    /// Attention heads per group.
    pub heads: Vec<usize>,
    pub window: usize,
    pub mlp_ratio: usize,
    /// Upscaling factor; 1 for denoising.
    pub scale: usize,
    pub norm: NormKind,
    pub norm_eps: f64,
    pub rpe: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 16,
            depths: vec![2, 2],
            heads: vec![2, 2],
            window: 4,
            mlp_ratio: 2,
            scale: 2,
            norm: NormKind::Ln,
            norm_eps: DEFAULT_EPSILON,
            rpe: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| {
            Err(Error::Config {
                key: key.into(),
                reason: why,
            })
        };
        if self.embed_dim == 0 {
            return bad("model.embed_dim", "must be positive".into());
        }
        if self.depths.is_empty() || self.depths.len() != self.heads.len() {
            return bad(
                "model.heads",
                format!(
                    "need one head count per group ({} groups)",
                    self.depths.len()
                ),
            );
        }
        if let Some(h) = self
            .heads
            .iter()
            .find(|&&h| h == 0 || !self.embed_dim.is_multiple_of(h))
        {
            return bad(
                "model.heads",
                format!("{h} heads do not divide embed_dim {}", self.embed_dim),
            );
        }
        if self.window == 0 {
            return bad("model.window", "must be positive".into());
        }
        if self.mlp_ratio == 0 {
            return bad("model.mlp_ratio", "must be positive".into());
        }
        if ![1, 2, 4].contains(&self.scale) {
            return bad(
                "model.scale",
                format!("{} is not one of 1, 2, 4", self.scale),
            );
        }
        if !(self.norm_eps > 0.0) {
            return bad("norm.eps", "must be positive".into());
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.depths.iter().sum()
    }

    /// Head count of every block in order.
    pub fn block_heads(&self) -> Vec<usize> {
        self.depths
            .iter()
            .zip(&self.heads)
            .flat_map(|(&d, &h)| std::iter::repeat_n(h, d))
            .collect()
    }
}

/// Dense layer `y = x W + b` with `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    fn trunc_normal(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let weight = Tensor::from_fn(&[fan_in, fan_out], |_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 0.04 {
                break v;
            }
        });
        Linear {
            weight,
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    /// 3×3 convolution as an im2col linear map (`[9·cin, cout]`), uniform in ±1/√fan_in.
    fn conv(cin: usize, cout: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = 9 * cin;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Tensor::from_fn(&[fan_in, cout], |_| rng.random_range(-bound..bound));
        Linear {
            weight,
            bias: Tensor::zeros(&[cout]),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LinearVars {
    pub w: Var,
    pub b: Var,
}

/// Statistics saved by a block's most recent forward pass.
#[derive(Clone, Debug, Default)]
pub struct SavedStats {
    pub mu: Option<Tensor>,
    pub sigma2: Option<Tensor>,
    pub rescale: Option<Tensor>,
}

/// Weights and state of one Transformer block.
#[derive(Clone, Debug)]
pub struct BlockState {
    pub heads: usize,
    pub window: usize,
    pub norm1: NormSpec,
    pub norm2: NormSpec,
    pub qkv: Linear,
    pub proj: Linear,
    /// `[(2W−1)², heads]` logit bias indexed by relative offset.
    pub rpe_table: Option<Tensor>,
    pub fc1: Linear,
    pub fc2: Linear,
    pub saved: [SavedStats; 2],
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct BlockVars {
    pub norm1: NormVars,
    pub norm2: NormVars,
    pub qkv: LinearVars,
    pub proj: LinearVars,
    pub rpe: Option<Var>,
    pub fc1: LinearVars,
    pub fc2: LinearVars,
}

impl BlockState {
    fn new(cfg: &ModelConfig, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        let c = cfg.embed_dim;
        let hidden = c * cfg.mlp_ratio;
        let side = 2 * cfg.window - 1;
        BlockState {
            heads,
            window: cfg.window,
            norm1: NormSpec::with_epsilon(cfg.norm, c, cfg.norm_eps),
            norm2: NormSpec::with_epsilon(cfg.norm, c, cfg.norm_eps),
            qkv: Linear::trunc_normal(c, 3 * c, rng),
            proj: Linear::trunc_normal(c, c, rng),
            rpe_table: cfg.rpe.then(|| Tensor::zeros(&[side * side, heads])),
            fc1: Linear::trunc_normal(c, hidden, rng),
            fc2: Linear::trunc_normal(hidden, c, rng),
            saved: Default::default(),
        }
    }

    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (name, t) in self.norm1.params() {
            out.push((format!("{prefix}.norm1.{name}"), t));
        }
        for (name, lin) in [("attn.qkv", &self.qkv), ("attn.proj", &self.proj)] {
            out.push((format!("{prefix}.{name}.weight"), &lin.weight));
            out.push((format!("{prefix}.{name}.bias"), &lin.bias));
        }
        if let Some(t) = &self.rpe_table {
            out.push((format!("{prefix}.attn.rpe_table"), t));
        }
        for (name, t) in self.norm2.params() {
            out.push((format!("{prefix}.norm2.{name}"), t));
        }
        for (name, lin) in [("ffn.fc1", &self.fc1), ("ffn.fc2", &self.fc2)] {
            out.push((format!("{prefix}.{name}.weight"), &lin.weight));
            out.push((format!("{prefix}.{name}.bias"), &lin.bias));
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (name, t) in self.norm1.params_mut() {
            out.push((format!("{prefix}.norm1.{name}"), t));
        }
        for (name, lin) in [("attn.qkv", &mut self.qkv), ("attn.proj", &mut self.proj)] {
            out.push((format!("{prefix}.{name}.weight"), &mut lin.weight));
            out.push((format!("{prefix}.{name}.bias"), &mut lin.bias));
        }
        if let Some(t) = &mut self.rpe_table {
            out.push((format!("{prefix}.attn.rpe_table"), t));
        }
        for (name, t) in self.norm2.params_mut() {
            out.push((format!("{prefix}.norm2.{name}"), t));
        }
        for (name, lin) in [("ffn.fc1", &mut self.fc1), ("ffn.fc2", &mut self.fc2)] {
            out.push((format!("{prefix}.{name}.weight"), &mut lin.weight));
            out.push((format!("{prefix}.{name}.bias"), &mut lin.bias));
        }
    }
}

/// Per-block forward diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockTrace {
    pub layer_index: usize,
    pub sqmean: f64,
    pub entropy: f64,
}

/// Graph handles produced by [`Model::forward_graph`].
#[derive(Clone, Debug)]
pub struct GraphForward {
    pub output: Var,
    pub shallow: Var,
    pub body: Var,
    pub block_outputs: Vec<Var>,
    /// Inputs of every norm layer, in block order (norm1, norm2, …).
    pub norm_inputs: Vec<Var>,
}

/// Value-level forward result.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub output: Tensor,
    pub traces: Vec<BlockTrace>,
    pub nonfinite: usize,
}

/// Input statistics of one norm layer.
#[derive(Clone, Debug)]
pub struct NormInspection {
    pub name: String,
    /// Mean |x| per channel of the layer input over the whole batch.
    pub channel_mag: Vec<f64>,
    /// Affine bias, when the scheme has one.
    pub beta: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Inspection {
    pub output: Tensor,
    pub traces: Vec<BlockTrace>,
    pub norms: Vec<NormInspection>,
    pub nonfinite: usize,
}

/// Graph handles of every learnable tensor, in [`Model::named_params`] order.
pub struct ModelVars {
    pub(crate) conv_first: LinearVars,
    pub(crate) blocks: Vec<BlockVars>,
    pub(crate) conv_body: LinearVars,
    pub(crate) head: LinearVars,
    pub named: Vec<(String, Var)>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub conv_first: Linear,
    pub blocks: Vec<BlockState>,
    pub conv_body: Linear,
    /// Upsampling conv (`3·scale²` outputs) or the restoration head when `scale == 1`.
    pub head: Linear,
    cache: IndexCache,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.embed_dim;
        let conv_first = Linear::conv(3, c, &mut rng);
        let blocks = cfg
            .block_heads()
            .into_iter()
            .map(|h| BlockState::new(&cfg, h, &mut rng))
            .collect();
        let conv_body = Linear::conv(c, c, &mut rng);
        let head = Linear::conv(c, 3 * cfg.scale * cfg.scale, &mut rng);
        Ok(Model {
            cfg,
            conv_first,
            blocks,
            conv_body,
            head,
            cache: IndexCache::default(),
        })
    }

    /// Zeroes the output projection of every attention and FFN sub-layer.
    pub fn zero_output_projections(&mut self) {
        for b in &mut self.blocks {
            b.proj = Linear::zeros(b.proj.weight.shape()[0], b.proj.weight.shape()[1]);
            b.fc2 = Linear::zeros(b.fc2.weight.shape()[0], b.fc2.weight.shape()[1]);
        }
    }

    fn head_name(&self) -> &'static str {
        if self.cfg.scale > 1 {
            "upsample"
        } else {
            "conv_head"
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        out.push(("conv_first.weight".to_string(), &self.conv_first.weight));
        out.push(("conv_first.bias".to_string(), &self.conv_first.bias));
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("blocks.{i}"), &mut out);
        }
        out.push(("conv_body.weight".to_string(), &self.conv_body.weight));
        out.push(("conv_body.bias".to_string(), &self.conv_body.bias));
        let head = self.head_name();
        out.push((format!("{head}.weight"), &self.head.weight));
        out.push((format!("{head}.bias"), &self.head.bias));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let head = self.head_name();
        let mut out = Vec::new();
        out.push(("conv_first.weight".to_string(), &mut self.conv_first.weight));
        out.push(("conv_first.bias".to_string(), &mut self.conv_first.bias));
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("blocks.{i}"), &mut out);
        }
        out.push(("conv_body.weight".to_string(), &mut self.conv_body.weight));
        out.push(("conv_body.bias".to_string(), &mut self.conv_body.bias));
        out.push((format!("{head}.weight"), &mut self.head.weight));
        out.push((format!("{head}.bias"), &mut self.head.bias));
        out
    }

    /// Non-learnable state (BatchNorm running statistics once initialized).
    pub fn named_buffers(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for (n, norm) in [("norm1", &b.norm1), ("norm2", &b.norm2)] {
                if let (Some(m), Some(v)) = (&norm.running_mean, &norm.running_var) {
                    out.push((format!("blocks.{i}.{n}.running_mean"), m));
                    out.push((format!("blocks.{i}.{n}.running_var"), v));
                }
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Parameters followed by buffers, cloned.
    pub fn state(&self) -> Vec<(String, Tensor)> {
        self.named_params()
            .into_iter()
            .chain(self.named_buffers())
            .map(|(n, t)| (n, t.clone()))
            .collect()
    }

    /// Loads a [`state`](Self::state) snapshot. Every parameter must be present
    /// with a matching shape; unknown names are rejected.
    pub fn load_state(&mut self, state: &[(String, Tensor)]) -> Result<()> {
        let lookup = |name: &str| state.iter().find(|(n, _)| n == name).map(|(_, t)| t);
        for (name, slot) in self.named_params_mut() {
            let t = lookup(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, model expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        let c = self.cfg.embed_dim;
        let mut known: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        for (i, b) in self.blocks.iter_mut().enumerate() {
            for (n, norm) in [("norm1", &mut b.norm1), ("norm2", &mut b.norm2)] {
                let (mk, vk) = (
                    format!("blocks.{i}.{n}.running_mean"),
                    format!("blocks.{i}.{n}.running_var"),
                );
                if let (Some(m), Some(v)) = (lookup(&mk), lookup(&vk)) {
                    if norm.kind != NormKind::BatchNorm || m.shape() != [c] || v.shape() != [c] {
                        return Err(Error::Checkpoint(format!(
                            "unexpected running stats `{mk}`"
                        )));
                    }
                    norm.running_mean = Some(m.clone());
                    norm.running_var = Some(v.clone());
                }
                known.push(mk);
                known.push(vk);
            }
        }
        if let Some((name, _)) = state.iter().find(|(n, _)| !known.contains(n)) {
            return Err(Error::Checkpoint(format!("unexpected tensor `{name}`")));
        }
        Ok(())
    }

    /// Registers all learnable tensors on `g`.
    pub fn bind(&self, g: &mut Graph) -> ModelVars {
        let named: Vec<(String, Var)> = self
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, g.param(t)))
            .collect();
        let map: HashMap<&str, Var> = named.iter().map(|(n, v)| (n.as_str(), *v)).collect();
        let get = |n: &str| map.get(n).copied();
        let lin = |p: &str| LinearVars {
            w: get(&format!("{p}.weight")).expect("bound weight"),
            b: get(&format!("{p}.bias")).expect("bound bias"),
        };
        let norm = |p: &str| NormVars {
            gamma: get(&format!("{p}.gamma")),
            beta: get(&format!("{p}.beta")),
            layerscale_diag: get(&format!("{p}.layerscale_diag")),
            rezero_scalar: get(&format!("{p}.rezero_scalar")),
        };
        let blocks = (0..self.blocks.len())
            .map(|i| BlockVars {
                norm1: norm(&format!("blocks.{i}.norm1")),
                norm2: norm(&format!("blocks.{i}.norm2")),
                qkv: lin(&format!("blocks.{i}.attn.qkv")),
                proj: lin(&format!("blocks.{i}.attn.proj")),
                rpe: get(&format!("blocks.{i}.attn.rpe_table")),
                fc1: lin(&format!("blocks.{i}.ffn.fc1")),
                fc2: lin(&format!("blocks.{i}.ffn.fc2")),
            })
            .collect();
        let vars = ModelVars {
            conv_first: lin("conv_first"),
            blocks,
            conv_body: lin("conv_body"),
            head: lin(self.head_name()),
            named: Vec::new(),
        };
        ModelVars { named, ..vars }
    }

    fn conv3x3(&self, g: &mut Graph, x: Var, h: usize, w: usize, lv: LinearVars) -> Result<Var> {
        let (b, l, c) = match *g.shape(x) {
            [b, l, c] => (b, l, c),
            ref s => return Err(shape_err(format!("conv expects [B,L,C], got {s:?}"))),
        };
        debug_assert_eq!(l, h * w);
        let idx = self.cache.im2col(b, h, w, c);
        let cols = g.gather(x, idx, &[b, l, 9 * c])?;
        linear_raw(g, cols, lv)
    }

    /// Builds the forward pass of a `[B, 3, h, w]` batch on `g`.
    pub fn forward_graph(
        &mut self,
        g: &mut Graph,
        vars: &ModelVars,
        input: Var,
        mode: Mode,
    ) -> Result<GraphForward> {
        let (b, h, w) = match *g.shape(input) {
            [b, 3, h, w] => (b, h, w),
            ref s => {
                return Err(shape_err(format!(
                    "expected a [B,3,h,w] image batch, got {s:?}"
                )))
            }
        };
        let win = self.cfg.window;
        if h % win != 0 || w % win != 0 || h == 0 || w == 0 {
            return Err(shape_err(format!(
                "image {h}x{w} is not divisible by window {win}"
            )));
        }
        let l = h * w;
        let tokens = g.gather(input, self.cache.to_tokens(b, 3, h, w), &[b, l, 3])?;
        let shallow = self.conv3x3(g, tokens, h, w, vars.conv_first)?;

        let mut x = shallow;
        let mut block_outputs = Vec::with_capacity(self.blocks.len());
        let mut norm_inputs = Vec::with_capacity(2 * self.blocks.len());
        for bi in 0..self.blocks.len() {
            let bv = vars.blocks[bi];
            let cache = self.cache.clone();
            let block = &mut self.blocks[bi];
            let (heads, window) = (block.heads, block.window);

            norm_inputs.push(x);
            let attn = block.norm1.block_combine(g, &bv.norm1, x, mode, |g, y| {
                attention::attention_graph(g, &cache, &bv, y, h, w, heads, window)
            })?;
            block.saved[0] = saved_stats(g, &attn.norm);
            x = attn.out;

            norm_inputs.push(x);
            let ffn = block.norm2.block_combine(g, &bv.norm2, x, mode, |g, y| {
                let hdn = linear_raw(g, y, bv.fc1)?;
                let act = g.gelu(hdn);
                linear_raw(g, act, bv.fc2)
            })?;
            block.saved[1] = saved_stats(g, &ffn.norm);
            x = ffn.out;
            block_outputs.push(x);
        }
        let body_conv = self.conv3x3(g, x, h, w, vars.conv_body)?;
        let body = g.add(body_conv, shallow)?;
        let head = self.conv3x3(g, body, h, w, vars.head)?;
        let s = self.cfg.scale;
        let output = g.gather(head, self.cache.to_image(b, h, w, s), &[b, 3, h * s, w * s])?;
        Ok(GraphForward {
            output,
            shallow,
            body,
            block_outputs,
            norm_inputs,
        })
    }

    /// Inference on `[3, h, w]` or `[B, 3, h, w]` input with every primitive
    /// rounded to `precision`.
    pub fn forward(
        &mut self,
        input: &Tensor,
        mode: Mode,
        precision: Precision,
        trace: bool,
    ) -> Result<ForwardOutput> {
        let batched = batch_input(input)?;
        let mut g = Graph::inference(precision);
        let vars = self.bind(&mut g);
        let x = g.constant(&batched);
        let fwd = self.forward_graph(&mut g, &vars, x, mode)?;
        let traces = if trace {
            self.block_traces(&g, &fwd)
        } else {
            Vec::new()
        };
        let mut output = g.value(fwd.output).clone();
        if input.rank() == 3 {
            let s = output.shape()[1..].to_vec();
            output = output.reshape(&s)?;
        }
        Ok(ForwardOutput {
            output,
            traces,
            nonfinite: g.nonfinite_count(),
        })
    }

    /// Traced inference that also reports, for every norm layer, the
    /// per-channel mean magnitude of its input and its affine bias.
    pub fn inspect(&mut self, input: &Tensor, mode: Mode) -> Result<Inspection> {
        let batched = batch_input(input)?;
        let mut g = Graph::inference(Precision::F64);
        let vars = self.bind(&mut g);
        let x = g.constant(&batched);
        let fwd = self.forward_graph(&mut g, &vars, x, mode)?;
        let traces = self.block_traces(&g, &fwd);
        let c = self.cfg.embed_dim;
        let norms = fwd
            .norm_inputs
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let block = &self.blocks[i / 2];
                let (slot, spec) = if i % 2 == 0 {
                    ("norm1", &block.norm1)
                } else {
                    ("norm2", &block.norm2)
                };
                let beta = spec
                    .params()
                    .into_iter()
                    .find(|(n, _)| *n == "beta")
                    .map(|(_, t)| t.data().to_vec());
                NormInspection {
                    name: format!("blocks.{}.{slot}", i / 2),
                    channel_mag: channel_magnitudes(g.value(v).data(), c),
                    beta,
                }
            })
            .collect();
        Ok(Inspection {
            output: g.value(fwd.output).clone(),
            traces,
            norms,
            nonfinite: g.nonfinite_count(),
        })
    }

    /// Squared mean and channel entropy of every block output. Entropy is
    /// averaged over the images of the batch.
    pub fn block_traces(&self, g: &Graph, fwd: &GraphForward) -> Vec<BlockTrace> {
        let c = self.cfg.embed_dim;
        fwd.block_outputs
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let t = g.value(v);
                let per_image = t.shape()[1] * c;
                let images = t.data().chunks(per_image);
                let n = images.len() as f64;
                let entropy = images
                    .map(|img| entropy_of_magnitudes(&channel_magnitudes(img, c), ENTROPY_EPS))
                    .sum::<f64>()
                    / n;
                BlockTrace {
                    layer_index: i,
                    sqmean: sqmean(t.data()),
                    entropy,
                }
            })
            .collect()
    }
}

fn linear_raw(g: &mut Graph, x: Var, lv: LinearVars) -> Result<Var> {
    let y = g.matmul(x, lv.w)?;
    let b = expand_channels(g, lv.b, y)?;
    g.add(y, b)
}

fn saved_stats(g: &Graph, n: &NormOutputVars) -> SavedStats {
    SavedStats {
        mu: n.mu.map(|v| g.value(v).clone()),
        sigma2: n.sigma2.map(|v| g.value(v).clone()),
        rescale: n.rescale.map(|v| g.value(v).clone()),
    }
}

pub(crate) fn batch_input(input: &Tensor) -> Result<Tensor> {
    match *input.shape() {
        [3, h, w] => input.reshape(&[1, 3, h, w]),
        [_, 3, _, _] => Ok(input.clone()),
        ref s => Err(shape_err(format!(
            "expected [3,h,w] or [B,3,h,w], got {s:?}"
        ))),
    }
}

/// Restores one `[3, h, w]` image.
pub fn model_forward(model: &mut Model, lr_image: &Tensor) -> Result<Tensor> {
    Ok(model
        .forward(lr_image, Mode::Eval, Precision::F64, false)?
        .output)
}

pub(crate) type Index = Arc<[usize]>;
