//! The full flow network: four STSSM stages, flow and mask heads, convex
//! upsampling to full resolution.

mod container;

pub use container::{WeightContainer, STWT_MAGIC, STWT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::init::{InitRule, ParamSpec};
use crate::ssm::ScanMode;
use crate::stssm::{stssm_forward, Backend, Embedding, PatchGrid, STSSMConfig, STSSMWeights, STVolume};
use crate::tensor::{activation, conv2d, Activation, Padding, Real, Tensor};
use crate::voxel::VoxelGrid;

/// Spatial upsampling factor of the convex upsampler.
pub const UPSAMPLE: usize = 8;
/// 3×3 neighbors times an 8×8 fine tile.
pub const MASK_CHANNELS: usize = 9 * UPSAMPLE * UPSAMPLE;

/// Geometry of one encoder stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub k: usize,
    pub m: usize,
    pub l: usize,
    pub channels: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    pub bins: usize,
    /// Resolution the positional tables are sized for.
    pub height: usize,
    pub width: usize,
    pub stages: Vec<Stage>,
    pub backend: Backend,
    pub embedding: Embedding,
    pub n_blocks: usize,
    pub state_dim: usize,
    pub expand: usize,
    pub conv_width: usize,
    pub flow_hidden: usize,
    pub mask_hidden: usize,
    pub scan_mode: ScanMode,
}

pub const DEFAULT_K: [usize; 4] = [32, 8, 4, 1];
pub const DEFAULT_M: [usize; 4] = [1, 4, 2, 4];
pub const DEFAULT_L: [usize; 4] = [8, 4, 4, 1];
pub const DEFAULT_CHANNELS: [usize; 4] = [32, 64, 96, 128];
/// Calibrated so the default network costs about 32.4 GMAC and 9 M
/// parameters at 480×640.
pub const DEFAULT_DIMS: [usize; 4] = [144, 224, 320, 416];

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::with_widths(DEFAULT_CHANNELS, DEFAULT_DIMS)
    }
}

impl NetworkConfig {
    pub fn with_widths(channels: [usize; 4], dims: [usize; 4]) -> Self {
        let stages = (0..4)
            .map(|i| Stage { k: DEFAULT_K[i], m: DEFAULT_M[i], l: DEFAULT_L[i], channels: channels[i], dim: dims[i] })
            .collect();
        Self {
            bins: 32,
            height: 480,
            width: 640,
            stages,
            backend: Backend::Selective,
            embedding: Embedding::Temporal,
            n_blocks: 2,
            state_dim: 16,
            expand: 2,
            conv_width: 4,
            flow_hidden: 128,
            mask_hidden: 256,
            scan_mode: ScanMode::Sequential,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.stages.last().map_or(0, |s| s.channels)
    }

    /// Overall spatial reduction `∏ k / ∏ l`.
    pub fn reduction(&self) -> (usize, usize) {
        self.stages.iter().fold((1, 1), |(k, l), s| (k * s.k, l * s.l))
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::config("network needs at least one stage"));
        }
        let (k, l) = self.reduction();
        if k != UPSAMPLE * l {
            return Err(Error::config(format!("stages reduce resolution by {k}/{l}, expected {UPSAMPLE}")));
        }
        let m: usize = self.stages.iter().map(|s| s.m).product();
        if m != self.bins {
            return Err(Error::config(format!("temporal patch depths multiply to {m}, but bins = {}", self.bins)));
        }
        if self.flow_hidden == 0 || self.mask_hidden == 0 {
            return Err(Error::config("head widths must be positive"));
        }
        for c in self.stage_configs() {
            c.validate()?;
        }
        self.trace(self.height, self.width).map(|_| ())
    }

    pub fn stage_configs(&self) -> Vec<STSSMConfig> {
        let mut in_channels = 1;
        self.stages
            .iter()
            .map(|s| {
                let c = STSSMConfig {
                    in_channels,
                    k: s.k,
                    m: s.m,
                    dim: s.dim,
                    l: s.l,
                    out_channels: s.channels,
                    n_blocks: self.n_blocks,
                    backend: self.backend,
                    embedding: self.embedding,
                    state_dim: self.state_dim,
                    expand: self.expand,
                    conv_width: self.conv_width,
                };
                in_channels = s.channels;
                c
            })
            .collect()
    }

    /// Per-stage config and token grid for an `h × w` input.
    pub fn trace(&self, h: usize, w: usize) -> Result<Vec<(STSSMConfig, PatchGrid)>> {
        let (mut t, mut h, mut w) = (self.bins, h, w);
        let mut out = Vec::new();
        for c in self.stage_configs() {
            let g = c.grid(t, h, w)?;
            (t, h, w) = (g.n_t, g.h_p * c.l, g.w_p * c.l);
            out.push((c, g));
        }
        Ok(out)
    }

    pub fn param_specs(&self) -> Result<Vec<ParamSpec>> {
        let mut specs = Vec::new();
        for (i, (c, g)) in self.trace(self.height, self.width)?.into_iter().enumerate() {
            specs.extend(c.param_specs(&format!("blocks.{i}."), g));
        }
        let c = self.out_channels();
        specs.extend(head_specs("flow_head", c, self.flow_hidden, 2, 3));
        specs.extend(head_specs("mask_head", c, self.mask_hidden, MASK_CHANNELS, 1));
        Ok(specs)
    }
}

fn conv_spec(name: String, c_out: usize, c_in: usize, k: usize) -> ParamSpec {
    let rule = InitRule::Xavier { fan_in: c_in * k * k, fan_out: c_out * k * k };
    ParamSpec::new(name, [c_out, c_in, k, k], rule)
}

fn head_specs(prefix: &str, c_in: usize, hidden: usize, c_out: usize, k2: usize) -> Vec<ParamSpec> {
    vec![
        conv_spec(format!("{prefix}.conv1.weight"), hidden, c_in, 3),
        ParamSpec::zeros(format!("{prefix}.conv1.bias"), [hidden]),
        conv_spec(format!("{prefix}.conv2.weight"), c_out, hidden, k2),
        ParamSpec::zeros(format!("{prefix}.conv2.bias"), [c_out]),
    ]
}

/// Deterministic initialization, drawing every tensor in spec order from
/// one seeded stream.
pub fn init_weights(cfg: &NetworkConfig, seed: u64) -> Result<WeightContainer> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = WeightContainer::new();
    for s in cfg.param_specs()? {
        let t = s.rule.sample(&s.shape, &mut rng);
        c.insert(s.name, t)?;
    }
    Ok(c)
}

/// A path, or `random-seed-N` for freshly initialized weights.
pub fn load_weights(source: &str, cfg: &NetworkConfig) -> Result<WeightContainer> {
    if let Some(seed) = source.strip_prefix("random-seed-") {
        let seed = seed.parse().map_err(|_| Error::config(format!("bad seed in {source:?}")))?;
        return init_weights(cfg, seed);
    }
    let c = WeightContainer::load(source)?;
    c.check_against(&cfg.param_specs()?)?;
    Ok(c)
}

/// conv → ReLU → conv.
#[derive(Debug, Clone, PartialEq)]
pub struct Head<T = f32> {
    pub conv1_w: Tensor<T>,
    pub conv1_b: Tensor<T>,
    pub conv2_w: Tensor<T>,
    pub conv2_b: Tensor<T>,
}

impl<T: Real> Head<T> {
    fn load(c: &WeightContainer, prefix: &str) -> Result<Self> {
        let g = |n: &str| c.get(&format!("{prefix}.{n}")).map(Tensor::cast);
        Ok(Self { conv1_w: g("conv1.weight")?, conv1_b: g("conv1.bias")?, conv2_w: g("conv2.weight")?, conv2_b: g("conv2.bias")? })
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = conv2d(x, &self.conv1_w, Some(&self.conv1_b), 1, Padding::Same)?;
        let h = activation(&h, Activation::Relu);
        conv2d(&h, &self.conv2_w, Some(&self.conv2_b), 1, Padding::Same)
    }
}

/// Typed network weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowNet<T = f32> {
    pub cfg: NetworkConfig,
    pub stages: Vec<STSSMWeights<T>>,
    pub flow_head: Head<T>,
    pub mask_head: Head<T>,
}

impl<T: Real> FlowNet<T> {
    pub fn from_container(cfg: &NetworkConfig, c: &WeightContainer) -> Result<Self> {
        cfg.validate()?;
        c.check_against(&cfg.param_specs()?)?;
        let stages = cfg
            .stage_configs()
            .iter()
            .enumerate()
            .map(|(i, sc)| STSSMWeights::from_lookup(sc, &format!("blocks.{i}."), &mut |n| c.get(n).map(Tensor::cast)))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            stages,
            flow_head: Head::load(c, "flow_head")?,
            mask_head: Head::load(c, "mask_head")?,
        })
    }
}

/// `[T, H, W]` voxels → `[C, H/8, W/8]` features.
pub fn encoder_forward<T: Real>(voxel: &VoxelGrid, net: &FlowNet<T>) -> Result<Tensor<T>> {
    let cfg = &net.cfg;
    if voxel.bins != cfg.bins {
        return Err(Error::shape(format!("voxel grid has {} bins, network expects {}", voxel.bins, cfg.bins)));
    }
    let trace = cfg.trace(voxel.height, voxel.width)?;
    if cfg.embedding == Embedding::TemporalPositional && (voxel.height, voxel.width) != (cfg.height, cfg.width) {
        return Err(Error::shape(format!(
            "positional tables are sized for {}x{}, input is {}x{}",
            cfg.width, cfg.height, voxel.width, voxel.height
        )));
    }
    let data = voxel.data.iter().map(|&v| T::from_f32(v).unwrap()).collect();
    let mut v = STVolume::new(Tensor::new([1, voxel.bins, voxel.height, voxel.width], data)?)?;
    for ((sc, _), w) in trace.iter().zip(&net.stages) {
        v = stssm_forward(&v, sc, w, cfg.scan_mode)?;
    }
    let (c, t, h, w) = v.dims();
    debug_assert_eq!(t, 1);
    v.data.reshape([c, h, w])
}

/// `(coarse flow [2, h, w], masks [576, h, w])`.
pub fn predict_heads<T: Real>(features: &Tensor<T>, net: &FlowNet<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    if features.rank() != 3 || features.shape()[0] != net.cfg.out_channels() {
        return Err(Error::shape(format!(
            "features {:?} do not match {} encoder channels",
            features.shape(),
            net.cfg.out_channels()
        )));
    }
    Ok((net.flow_head.apply(features)?, net.mask_head.apply(features)?))
}

const NEIGHBORS: [(isize, isize); 9] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 0), (0, 1), (1, -1), (1, 0), (1, 1)];

/// Softmax weights of the 9 neighbors for fine offset `(di, dj)` in coarse
/// cell `(i, j)`. Mask channel layout is `n·64 + di·8 + dj`.
pub fn upsample_weights<T: Real>(masks: &Tensor<T>, i: usize, j: usize, di: usize, dj: usize) -> [f64; 9] {
    let (h, w) = (masks.shape()[1], masks.shape()[2]);
    let mut logits = [0.0; 9];
    for (n, l) in logits.iter_mut().enumerate() {
        let ch = n * UPSAMPLE * UPSAMPLE + di * UPSAMPLE + dj;
        *l = masks.data()[(ch * h + i) * w + j].to_f64().unwrap();
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in &mut logits {
        *l = (*l - max).exp();
        sum += *l;
    }
    logits.map(|e| e / sum)
}

/// Each fine pixel is a softmax-weighted average of `8×` the 3×3 coarse
/// neighborhood, borders replicated.
pub fn convex_upsample<T: Real>(coarse: &Tensor<T>, masks: &Tensor<T>) -> Result<FlowField> {
    if coarse.rank() != 3 || coarse.shape()[0] != 2 {
        return Err(Error::shape(format!("coarse flow must be [2, h, w], got {:?}", coarse.shape())));
    }
    let (h, w) = (coarse.shape()[1], coarse.shape()[2]);
    if masks.shape() != [MASK_CHANNELS, h, w] {
        return Err(Error::shape(format!("masks {:?} expected [{MASK_CHANNELS}, {h}, {w}]", masks.shape())));
    }
    let s = UPSAMPLE as f64;
    let (fh, fw) = (h * UPSAMPLE, w * UPSAMPLE);
    let mut out = FlowField::zeros(fw, fh);
    let at = |c: usize, y: usize, x: usize| coarse.data()[(c * h + y) * w + x].to_f64().unwrap();
    for i in 0..h {
        for j in 0..w {
            let nb: Vec<(usize, usize)> = NEIGHBORS
                .iter()
                .map(|&(dy, dx)| {
                    ((i as isize + dy).clamp(0, h as isize - 1) as usize, (j as isize + dx).clamp(0, w as isize - 1) as usize)
                })
                .collect();
            let mut vals = [[0.0; 9]; 2];
            for c in 0..2 {
                for (n, &(y, x)) in nb.iter().enumerate() {
                    vals[c][n] = s * at(c, y, x);
                }
            }
            let bounds = vals.map(|v| {
                (v.iter().copied().fold(f64::INFINITY, f64::min), v.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            });
            for di in 0..UPSAMPLE {
                for dj in 0..UPSAMPLE {
                    let wts = upsample_weights(masks, i, j, di, dj);
                    let idx = (i * UPSAMPLE + di) * fw + j * UPSAMPLE + dj;
                    for c in 0..2 {
                        // centered form: exact on constant neighborhoods
                        let center = vals[c][4];
                        let acc: f64 = wts.iter().zip(&vals[c]).map(|(wt, v)| wt * (v - center)).sum();
                        let (lo, hi) = bounds[c];
                        let v = (center + acc).clamp(lo, hi) as f32;
                        if c == 0 {
                            out.u[idx] = v;
                        } else {
                            out.v[idx] = v;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn forward<T: Real>(voxel: &VoxelGrid, net: &FlowNet<T>) -> Result<FlowField> {
    let features = encoder_forward(voxel, net)?;
    let (coarse, masks) = predict_heads(&features, net)?;
    convex_upsample(&coarse, &masks)
}

#[cfg(test)]
mod tests;
