//! Spatio-temporal state-space block.
//!
//! A `[C, T, H, W]` volume is cut into non-overlapping `m×k×k` patches,
//! each patch is linearly projected to a `D`-dimensional token, tokens get
//! a temporal (and optionally spatial) embedding, run through a stack of
//! sequence units, and are finally reprojected to `l×l` tiles with `C_out`
//! channels.
//!
//! Tokens are ordered temporal-major: all spatial patches of temporal
//! slice 0 in row-major order, then slice 1, and so on.

mod backend;

pub use backend::{
    attention_mix, lti_diagonal_unit, lti_mimo_unit, seq_transform, AttentionWeights, Backend, BackendUnit,
    LtiDiagonalWeights, LtiMimoWeights, SeqBlock, ATTENTION_HEADS, FFN_EXPANSION, RMS_EPS,
};

use crate::error::{Error, Result};
use crate::init::{InitRule, ParamSpec};
use crate::ssm::{MambaWeights, ScanMode, SelectiveWeights};
use crate::tensor::{linear_rows, Real, Tensor};

/// `[C, T, H, W]` feature volume.
#[derive(Debug, Clone, PartialEq)]
pub struct STVolume<T = f32> {
    pub data: Tensor<T>,
}

impl<T: Real> STVolume<T> {
    pub fn new(data: Tensor<T>) -> Result<Self> {
        if data.rank() != 4 {
            return Err(Error::shape(format!("volume must be [C, T, H, W], got {:?}", data.shape())));
        }
        Ok(Self { data })
    }

    pub fn zeros(c: usize, t: usize, h: usize, w: usize) -> Self {
        Self { data: Tensor::zeros([c, t, h, w]) }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.data.shape();
        (s[0], s[1], s[2], s[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Embedding {
    None,
    Temporal,
    TemporalPositional,
}

impl Embedding {
    pub const ALL: [Embedding; 3] = [Embedding::None, Embedding::Temporal, Embedding::TemporalPositional];

    pub fn name(self) -> &'static str {
        match self {
            Embedding::None => "none",
            Embedding::Temporal => "temporal",
            Embedding::TemporalPositional => "temporal+positional",
        }
    }
}

impl std::str::FromStr for Embedding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t+p" => Ok(Embedding::TemporalPositional),
            _ => Embedding::ALL
                .into_iter()
                .find(|e| e.name() == s)
                .ok_or_else(|| Error::config(format!("unknown embedding {s:?}"))),
        }
    }
}

/// Token grid of one patching: `n_t` temporal slices of `h_p × w_p` patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub n_t: usize,
    pub h_p: usize,
    pub w_p: usize,
}

impl PatchGrid {
    pub fn n_s(&self) -> usize {
        self.h_p * self.w_p
    }

    pub fn tokens(&self) -> usize {
        self.n_t * self.n_s()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct STSSMConfig {
    pub in_channels: usize,
    /// Spatial patch edge.
    pub k: usize,
    /// Temporal patch depth.
    pub m: usize,
    /// Token dimension.
    pub dim: usize,
    /// Spatial upscale of the reprojection.
    pub l: usize,
    pub out_channels: usize,
    pub n_blocks: usize,
    pub backend: Backend,
    pub embedding: Embedding,
    pub state_dim: usize,
    pub expand: usize,
    pub conv_width: usize,
}

impl STSSMConfig {
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.m * self.k * self.k
    }

    pub fn inner_dim(&self) -> usize {
        self.expand * self.dim
    }

    pub fn dt_rank(&self) -> usize {
        self.dim.div_ceil(16)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.in_channels, self.k, self.m, self.dim, self.l, self.out_channels, self.state_dim, self.expand, self.conv_width]
            .contains(&0)
        {
            return Err(Error::config("STSSM extents must be positive"));
        }
        if !(1..=2).contains(&self.n_blocks) {
            return Err(Error::config(format!("n_blocks must be 1 or 2, got {}", self.n_blocks)));
        }
        if self.backend == Backend::Attention && !self.dim.is_multiple_of(ATTENTION_HEADS) {
            return Err(Error::config(format!("attention needs dim divisible by {ATTENTION_HEADS}")));
        }
        Ok(())
    }

    /// Token grid for an input of `t × h × w`.
    pub fn grid(&self, t: usize, h: usize, w: usize) -> Result<PatchGrid> {
        if !t.is_multiple_of(self.m) || !h.is_multiple_of(self.k) || !w.is_multiple_of(self.k) {
            return Err(Error::shape(format!(
                "volume {t}x{h}x{w} not divisible into {}x{}x{} patches",
                self.m, self.k, self.k
            )));
        }
        Ok(PatchGrid { n_t: t / self.m, h_p: h / self.k, w_p: w / self.k })
    }

    /// `(C_out, T/m, H·l/k, W·l/k)`
    pub fn output_dims(&self, t: usize, h: usize, w: usize) -> Result<(usize, usize, usize, usize)> {
        let g = self.grid(t, h, w)?;
        Ok((self.out_channels, g.n_t, g.h_p * self.l, g.w_p * self.l))
    }

    /// Named parameters under `prefix`. `grid` sizes the positional table.
    pub fn param_specs(&self, prefix: &str, grid: PatchGrid) -> Vec<ParamSpec> {
        let (d, p) = (self.dim, self.patch_len());
        let mut specs = vec![ParamSpec::weight(format!("{prefix}proj.weight"), d, p), ParamSpec::zeros(format!("{prefix}proj.bias"), [d])];
        if self.embedding != Embedding::None {
            specs.push(ParamSpec::zeros(format!("{prefix}tau"), [grid.n_t, d]));
        }
        if self.embedding == Embedding::TemporalPositional {
            specs.push(ParamSpec::zeros(format!("{prefix}pos"), [grid.n_s(), d]));
        }
        for j in 0..self.n_blocks {
            let s = format!("{prefix}seq.{j}.");
            specs.push(ParamSpec::ones(format!("{s}norm"), [d]));
            specs.extend(self.unit_specs(&s));
        }
        let tile = self.out_channels * self.l * self.l;
        specs.push(ParamSpec::weight(format!("{prefix}reproj.weight"), tile, d));
        specs.push(ParamSpec::zeros(format!("{prefix}reproj.bias"), [tile]));
        specs
    }

    fn unit_specs(&self, s: &str) -> Vec<ParamSpec> {
        let (d, n) = (self.dim, self.state_dim);
        match self.backend {
            Backend::Selective => {
                let (di, r) = (self.inner_dim(), self.dt_rank());
                vec![
                    ParamSpec::weight(format!("{s}in_proj"), 2 * di, d),
                    ParamSpec::weight(format!("{s}conv.weight"), di, self.conv_width),
                    ParamSpec::zeros(format!("{s}conv.bias"), [di]),
                    ParamSpec::weight(format!("{s}x_proj"), r + 2 * n, di),
                    ParamSpec::weight(format!("{s}dt_proj.weight"), di, r),
                    ParamSpec::new(format!("{s}dt_proj.bias"), [di], InitRule::DeltaBias),
                    ParamSpec::new(format!("{s}a_log"), [di, n], InitRule::ALogRange),
                    ParamSpec::ones(format!("{s}d_skip"), [di]),
                    ParamSpec::weight(format!("{s}out_proj"), d, di),
                ]
            }
            Backend::LtiDiagonal => vec![
                ParamSpec::new(format!("{s}log_dt"), [d], InitRule::LogDelta),
                ParamSpec::new(format!("{s}a_log"), [d, n], InitRule::ALogRange),
                ParamSpec::ones(format!("{s}b"), [d, n]),
                ParamSpec::new(format!("{s}c"), [d, n], InitRule::Xavier { fan_in: n, fan_out: 1 }),
                ParamSpec::ones(format!("{s}d_skip"), [d]),
                ParamSpec::weight(format!("{s}out.weight"), d, d),
                ParamSpec::zeros(format!("{s}out.bias"), [d]),
            ],
            Backend::LtiMimo => vec![
                ParamSpec::new(format!("{s}log_dt"), [1], InitRule::LogDelta),
                ParamSpec::new(format!("{s}a"), [n, n], InitRule::NegDiagonal),
                ParamSpec::weight(format!("{s}b"), n, d),
                ParamSpec::weight(format!("{s}c"), d, n),
                ParamSpec::ones(format!("{s}d_skip"), [d]),
                ParamSpec::weight(format!("{s}out.weight"), d, d),
                ParamSpec::zeros(format!("{s}out.bias"), [d]),
            ],
            Backend::Attention => {
                let h = FFN_EXPANSION * d;
                vec![
                    ParamSpec::weight(format!("{s}qkv.weight"), 3 * d, d),
                    ParamSpec::zeros(format!("{s}qkv.bias"), [3 * d]),
                    ParamSpec::weight(format!("{s}out.weight"), d, d),
                    ParamSpec::zeros(format!("{s}out.bias"), [d]),
                    ParamSpec::ones(format!("{s}ffn_norm"), [d]),
                    ParamSpec::weight(format!("{s}ff1.weight"), h, d),
                    ParamSpec::zeros(format!("{s}ff1.bias"), [h]),
                    ParamSpec::weight(format!("{s}ff2.weight"), d, h),
                    ParamSpec::zeros(format!("{s}ff2.bias"), [d]),
                ]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct STSSMWeights<T = f32> {
    pub proj_w: Tensor<T>,
    pub proj_b: Tensor<T>,
    pub tau: Option<Tensor<T>>,
    pub pos: Option<Tensor<T>>,
    pub blocks: Vec<SeqBlock<T>>,
    pub reproj_w: Tensor<T>,
    pub reproj_b: Tensor<T>,
}

impl<T: Real> STSSMWeights<T> {
    /// Assembles typed weights from the named parameters `cfg` declares.
    pub fn from_lookup(
        cfg: &STSSMConfig,
        prefix: &str,
        lookup: &mut dyn FnMut(&str) -> Result<Tensor<T>>,
    ) -> Result<Self> {
        let mut get = |name: &str| lookup(&format!("{prefix}{name}"));
        let tau = if cfg.embedding != Embedding::None { Some(get("tau")?) } else { None };
        let pos = if cfg.embedding == Embedding::TemporalPositional { Some(get("pos")?) } else { None };
        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for j in 0..cfg.n_blocks {
            let mut g = |n: &str| get(&format!("seq.{j}.{n}"));
            let unit = match cfg.backend {
                Backend::Selective => BackendUnit::Selective(MambaWeights {
                    in_proj: g("in_proj")?,
                    conv_w: g("conv.weight")?,
                    conv_b: g("conv.bias")?,
                    selective: SelectiveWeights {
                        x_proj: g("x_proj")?,
                        dt_proj: g("dt_proj.weight")?,
                        dt_bias: g("dt_proj.bias")?,
                        a_log: g("a_log")?,
                        d_skip: g("d_skip")?,
                    },
                    out_proj: g("out_proj")?,
                }),
                Backend::LtiDiagonal => BackendUnit::LtiDiagonal(LtiDiagonalWeights {
                    log_dt: g("log_dt")?,
                    a_log: g("a_log")?,
                    b: g("b")?,
                    c: g("c")?,
                    d_skip: g("d_skip")?,
                    out_w: g("out.weight")?,
                    out_b: g("out.bias")?,
                }),
                Backend::LtiMimo => BackendUnit::LtiMimo(LtiMimoWeights {
                    log_dt: g("log_dt")?,
                    a: g("a")?,
                    b: g("b")?,
                    c: g("c")?,
                    d_skip: g("d_skip")?,
                    out_w: g("out.weight")?,
                    out_b: g("out.bias")?,
                }),
                Backend::Attention => BackendUnit::Attention(AttentionWeights {
                    qkv_w: g("qkv.weight")?,
                    qkv_b: g("qkv.bias")?,
                    out_w: g("out.weight")?,
                    out_b: g("out.bias")?,
                    ffn_norm: g("ffn_norm")?,
                    ff1_w: g("ff1.weight")?,
                    ff1_b: g("ff1.bias")?,
                    ff2_w: g("ff2.weight")?,
                    ff2_b: g("ff2.bias")?,
                }),
            };
            blocks.push(SeqBlock { norm: g("norm")?, unit });
        }
        Ok(Self {
            proj_w: get("proj.weight")?,
            proj_b: get("proj.bias")?,
            tau,
            pos,
            blocks,
            reproj_w: get("reproj.weight")?,
            reproj_b: get("reproj.bias")?,
        })
    }
}

/// Cuts `v` into `m×k×k` patches, one row per token, flattened as
/// `(channel, dt, dy, dx)`.
pub fn st_patch<T: Real>(v: &STVolume<T>, m: usize, k: usize) -> Result<(Tensor<T>, PatchGrid)> {
    let (c, t, h, w) = v.dims();
    if m == 0 || k == 0 || t % m != 0 || h % k != 0 || w % k != 0 {
        return Err(Error::shape(format!("volume {t}x{h}x{w} not divisible into {m}x{k}x{k} patches")));
    }
    let grid = PatchGrid { n_t: t / m, h_p: h / k, w_p: w / k };
    let plen = c * m * k * k;
    let src = v.data.data();
    let mut out = Vec::with_capacity(grid.tokens() * plen);
    for pt in 0..grid.n_t {
        for py in 0..grid.h_p {
            for px in 0..grid.w_p {
                for ch in 0..c {
                    for dt in 0..m {
                        let plane = ((ch * t) + pt * m + dt) * h * w;
                        for dy in 0..k {
                            let row = plane + (py * k + dy) * w + px * k;
                            out.extend_from_slice(&src[row..row + k]);
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::new([grid.tokens(), plen], out)?, grid))
}

/// Inverse of [`st_patch`].
pub fn st_unpatch<T: Real>(patches: &Tensor<T>, grid: PatchGrid, c: usize, m: usize, k: usize) -> Result<STVolume<T>> {
    if patches.shape() != [grid.tokens(), c * m * k * k] {
        return Err(Error::shape(format!("patches {:?} do not match grid", patches.shape())));
    }
    let (t, h, w) = (grid.n_t * m, grid.h_p * k, grid.w_p * k);
    let mut out = vec![T::zero(); c * t * h * w];
    let mut src = patches.data().chunks_exact(k);
    for pt in 0..grid.n_t {
        for py in 0..grid.h_p {
            for px in 0..grid.w_p {
                for ch in 0..c {
                    for dt in 0..m {
                        let plane = ((ch * t) + pt * m + dt) * h * w;
                        for dy in 0..k {
                            let row = plane + (py * k + dy) * w + px * k;
                            out[row..row + k].copy_from_slice(src.next().unwrap());
                        }
                    }
                }
            }
        }
    }
    STVolume::new(Tensor::new([c, t, h, w], out)?)
}

pub fn project_patches<T: Real>(patches: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    crate::tensor::linear(patches, weight, Some(bias))
}

/// Adds `tau[t]` to every token of temporal slice `t`, and in positional
/// mode also `pos[s]` to every token at spatial index `s`.
pub fn add_temporal_embedding<T: Real>(
    seq: &Tensor<T>,
    tau: Option<&Tensor<T>>,
    pos: Option<&Tensor<T>>,
    grid: PatchGrid,
    mode: Embedding,
) -> Result<Tensor<T>> {
    let d = seq.last_dim();
    if seq.shape() != [grid.tokens(), d] {
        return Err(Error::shape(format!("sequence {:?} does not match {} tokens", seq.shape(), grid.tokens())));
    }
    let mut out = seq.clone();
    if mode == Embedding::None {
        return Ok(out);
    }
    let tau = tau.ok_or_else(|| Error::shape("temporal embedding table missing"))?;
    if tau.shape() != [grid.n_t, d] {
        return Err(Error::shape(format!("tau {:?} expected [{}, {d}]", tau.shape(), grid.n_t)));
    }
    let pos = if mode == Embedding::TemporalPositional {
        let p = pos.ok_or_else(|| Error::shape("positional table missing"))?;
        if p.shape() != [grid.n_s(), d] {
            return Err(Error::shape(format!("pos {:?} expected [{}, {d}]", p.shape(), grid.n_s())));
        }
        Some(p.data())
    } else {
        None
    };
    let ns = grid.n_s();
    for (tok, row) in out.data_mut().chunks_exact_mut(d).enumerate() {
        let (t, s) = (tok / ns, tok % ns);
        for (v, e) in row.iter_mut().zip(&tau.data()[t * d..(t + 1) * d]) {
            *v += *e;
        }
        if let Some(p) = pos {
            for (v, e) in row.iter_mut().zip(&p[s * d..(s + 1) * d]) {
                *v += *e;
            }
        }
    }
    Ok(out)
}

/// Maps each token through `weight [C_out·l·l, D]` to an `l×l` tile with
/// `C_out` channels at its patch location; output `[C_out, n_t, h_p·l, w_p·l]`.
pub fn reproject<T: Real>(
    seq: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    l: usize,
    out_channels: usize,
    grid: PatchGrid,
) -> Result<STVolume<T>> {
    let tile = out_channels * l * l;
    let d = seq.last_dim();
    if seq.shape() != [grid.tokens(), d] || weight.shape() != [tile, d] || bias.shape() != [tile] {
        return Err(Error::shape(format!(
            "reprojection mismatch: seq {:?}, weight {:?}, bias {:?}, tile {tile}, tokens {}",
            seq.shape(),
            weight.shape(),
            bias.shape(),
            grid.tokens()
        )));
    }
    let tiles = linear_rows(seq.data(), grid.tokens(), weight.data(), tile, d, Some(bias.data()));
    let (h, w) = (grid.h_p * l, grid.w_p * l);
    let mut out = vec![T::zero(); out_channels * grid.n_t * h * w];
    for (tok, vals) in tiles.chunks_exact(tile).enumerate() {
        let t = tok / grid.n_s();
        let (py, px) = ((tok % grid.n_s()) / grid.w_p, tok % grid.w_p);
        for ch in 0..out_channels {
            for dy in 0..l {
                let dst = ((ch * grid.n_t + t) * h + py * l + dy) * w + px * l;
                let src = (ch * l + dy) * l;
                out[dst..dst + l].copy_from_slice(&vals[src..src + l]);
            }
        }
    }
    STVolume::new(Tensor::new([out_channels, grid.n_t, h, w], out)?)
}

/// patch → project → embed → sequence stack → reproject.
pub fn stssm_forward<T: Real>(v: &STVolume<T>, cfg: &STSSMConfig, w: &STSSMWeights<T>, mode: ScanMode) -> Result<STVolume<T>> {
    cfg.validate()?;
    let (c, ..) = v.dims();
    if c != cfg.in_channels {
        return Err(Error::shape(format!("volume has {c} channels, block expects {}", cfg.in_channels)));
    }
    let (patches, grid) = st_patch(v, cfg.m, cfg.k)?;
    let seq = project_patches(&patches, &w.proj_w, &w.proj_b)?;
    let seq = add_temporal_embedding(&seq, w.tau.as_ref(), w.pos.as_ref(), grid, cfg.embedding)?;
    let seq = seq_transform(&seq, &w.blocks, mode)?;
    reproject(&seq, &w.reproj_w, &w.reproj_b, cfg.l, cfg.out_channels, grid)
}
