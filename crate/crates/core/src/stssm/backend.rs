//! Sequence-to-sequence units used inside an STSSM block.

use crate::error::{Error, Result};
use crate::ssm::{lti_scan, mamba_unit, zoh_discretize, Flavor, MambaWeights, ScanMode, SsmParams, Transition};
use crate::tensor::{ensure_finite, linear, rms_normalize, softmax_strided, Activation, Real, Tensor};

pub const RMS_EPS: f64 = 1e-5;
pub const ATTENTION_HEADS: usize = 2;
pub const FFN_EXPANSION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Backend {
    /// Per-channel diagonal LTI systems followed by a position-wise mixing layer.
    LtiDiagonal,
    /// One dense state space shared by all channels.
    LtiMimo,
    /// Gated selective scan.
    Selective,
    /// Two-head self-attention plus feedforward.
    Attention,
}

impl Backend {
    pub const ALL: [Backend; 4] = [Backend::LtiDiagonal, Backend::LtiMimo, Backend::Selective, Backend::Attention];

    pub fn name(self) -> &'static str {
        match self {
            Backend::LtiDiagonal => "lti-diagonal",
            Backend::LtiMimo => "lti-mimo",
            Backend::Selective => "selective",
            Backend::Attention => "attention",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Backend::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::config(format!("unknown backend {s:?}")))
    }
}

/// Diagonal SISO system per channel: `A = -exp(a_log)`, `Δ = exp(log_dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiDiagonalWeights<T = f32> {
    pub log_dt: Tensor<T>,
    pub a_log: Tensor<T>,
    pub b: Tensor<T>,
    pub c: Tensor<T>,
    pub d_skip: Tensor<T>,
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
}

/// Shared `N`-dimensional state with dense `A`, `B: N×D`, `C: D×N`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiMimoWeights<T = f32> {
    pub log_dt: Tensor<T>,
    pub a: Tensor<T>,
    pub b: Tensor<T>,
    pub c: Tensor<T>,
    pub d_skip: Tensor<T>,
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T = f32> {
    pub qkv_w: Tensor<T>,
    pub qkv_b: Tensor<T>,
    pub out_w: Tensor<T>,
    pub out_b: Tensor<T>,
    pub ffn_norm: Tensor<T>,
    pub ff1_w: Tensor<T>,
    pub ff1_b: Tensor<T>,
    pub ff2_w: Tensor<T>,
    pub ff2_b: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendUnit<T = f32> {
    LtiDiagonal(LtiDiagonalWeights<T>),
    LtiMimo(LtiMimoWeights<T>),
    Selective(MambaWeights<T>),
    Attention(AttentionWeights<T>),
}

impl<T: Real> BackendUnit<T> {
    pub fn backend(&self) -> Backend {
        match self {
            BackendUnit::LtiDiagonal(_) => Backend::LtiDiagonal,
            BackendUnit::LtiMimo(_) => Backend::LtiMimo,
            BackendUnit::Selective(_) => Backend::Selective,
            BackendUnit::Attention(_) => Backend::Attention,
        }
    }
}

/// One pre-norm residual stage.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBlock<T = f32> {
    pub norm: Tensor<T>,
    pub unit: BackendUnit<T>,
}

fn to_f64<T: Real>(v: T) -> f64 {
    v.to_f64().unwrap()
}

fn column<T: Real>(x: &[T], rows: usize, cols: usize, j: usize) -> Vec<T> {
    (0..rows).map(|r| x[r * cols + j]).collect()
}

pub fn lti_diagonal_unit<T: Real>(x: &Tensor<T>, w: &LtiDiagonalWeights<T>, mode: ScanMode) -> Result<Tensor<T>> {
    let (len, dim) = (x.shape()[0], x.shape()[1]);
    let n = w.a_log.shape()[1];
    let mut y = vec![T::zero(); len * dim];
    for ch in 0..dim {
        let row = |t: &Tensor<T>| t.data()[ch * n..(ch + 1) * n].iter().map(|&v| to_f64(v)).collect::<Vec<_>>();
        let params = SsmParams::diagonal_siso(
            row(&w.a_log).into_iter().map(|v| -v.exp()).collect(),
            row(&w.b),
            row(&w.c),
            to_f64(w.d_skip.data()[ch]),
            to_f64(w.log_dt.data()[ch]).exp(),
        );
        let disc = zoh_discretize(&params)?.cast::<T>();
        let out = lti_scan(&disc, &column(x.data(), len, dim, ch), &vec![T::zero(); n], mode)?;
        for (k, v) in out.into_iter().enumerate() {
            y[k * dim + ch] = Activation::Gelu.apply(v);
        }
    }
    linear(&Tensor::new([len, dim], y)?, &w.out_w, Some(&w.out_b))
}

pub fn lti_mimo_unit<T: Real>(x: &Tensor<T>, w: &LtiMimoWeights<T>, mode: ScanMode) -> Result<Tensor<T>> {
    let (len, dim) = (x.shape()[0], x.shape()[1]);
    let n = w.a.shape()[0];
    let f = |t: &Tensor<T>| t.data().iter().map(|&v| to_f64(v)).collect::<Vec<_>>();
    let params = SsmParams {
        flavor: Flavor::Mimo,
        a: Transition::Dense(f(&w.a)),
        b: f(&w.b),
        c: f(&w.c),
        d: None,
        delta: to_f64(w.log_dt.data()[0]).exp(),
        in_dim: dim,
        out_dim: dim,
    };
    let disc = zoh_discretize(&params)?.cast::<T>();
    let mut y = lti_scan(&disc, x.data(), &vec![T::zero(); n], mode)?;
    let d = w.d_skip.data();
    for k in 0..len {
        for ch in 0..dim {
            let v = y[k * dim + ch] + d[ch] * x.data()[k * dim + ch];
            y[k * dim + ch] = Activation::Gelu.apply(v);
        }
    }
    linear(&Tensor::new([len, dim], y)?, &w.out_w, Some(&w.out_b))
}

/// Multi-head scaled dot-product self-attention over all tokens, including
/// the output projection. Scores are formed one query row at a time.
pub fn attention_mix<T: Real>(x: &Tensor<T>, w: &AttentionWeights<T>) -> Result<Tensor<T>> {
    let (len, dim) = (x.shape()[0], x.shape()[1]);
    if dim % ATTENTION_HEADS != 0 {
        return Err(Error::shape(format!("model dim {dim} not divisible by {ATTENTION_HEADS} heads")));
    }
    let hd = dim / ATTENTION_HEADS;
    let qkv = linear(x, &w.qkv_w, Some(&w.qkv_b))?;
    let qkv = qkv.data();
    let stride = 3 * dim;
    let scale = T::one() / T::from_usize(hd).unwrap().sqrt();
    let mut mixed = vec![T::zero(); len * dim];
    let mut scores = vec![T::zero(); len];
    for h in 0..ATTENTION_HEADS {
        let (qo, ko, vo) = (h * hd, dim + h * hd, 2 * dim + h * hd);
        for i in 0..len {
            let q = &qkv[i * stride + qo..i * stride + qo + hd];
            for (j, s) in scores.iter_mut().enumerate() {
                let k = &qkv[j * stride + ko..j * stride + ko + hd];
                *s = q.iter().zip(k).map(|(a, b)| *a * *b).sum::<T>() * scale;
            }
            softmax_strided(&mut scores, 0, len, 1);
            let out = &mut mixed[i * dim + h * hd..i * dim + (h + 1) * hd];
            for (j, p) in scores.iter().enumerate() {
                let v = &qkv[j * stride + vo..j * stride + vo + hd];
                for (o, v) in out.iter_mut().zip(v) {
                    *o += *p * *v;
                }
            }
        }
    }
    linear(&Tensor::new([len, dim], mixed)?, &w.out_w, Some(&w.out_b))
}

fn feedforward<T: Real>(x: &Tensor<T>, w: &AttentionWeights<T>) -> Result<Tensor<T>> {
    let hidden = linear(x, &w.ff1_w, Some(&w.ff1_b))?;
    let hidden = crate::tensor::activation(&hidden, Activation::Gelu);
    linear(&hidden, &w.ff2_w, Some(&w.ff2_b))
}

fn add_assign<T: Real>(x: &mut Tensor<T>, delta: &Tensor<T>) {
    for (a, b) in x.data_mut().iter_mut().zip(delta.data()) {
        *a += *b;
    }
}

/// Pre-norm residual stack: `x ← x + unit(rms(x))` per block; attention
/// blocks add a second `x ← x + ffn(rms(x))` stage.
pub fn seq_transform<T: Real>(seq: &Tensor<T>, blocks: &[SeqBlock<T>], mode: ScanMode) -> Result<Tensor<T>> {
    if seq.rank() != 2 {
        return Err(Error::shape(format!("sequence must be [N, D], got {:?}", seq.shape())));
    }
    let eps = T::lit(RMS_EPS);
    let mut x = seq.clone();
    for block in blocks {
        let normed = rms_normalize(&x, &block.norm, eps)?;
        let delta = match &block.unit {
            BackendUnit::Selective(w) => mamba_unit(&normed, w, mode)?,
            BackendUnit::LtiDiagonal(w) => lti_diagonal_unit(&normed, w, mode)?,
            BackendUnit::LtiMimo(w) => lti_mimo_unit(&normed, w, mode)?,
            BackendUnit::Attention(w) => attention_mix(&normed, w)?,
        };
        add_assign(&mut x, &delta);
        if let BackendUnit::Attention(w) = &block.unit {
            let normed = rms_normalize(&x, &w.ffn_norm, eps)?;
            add_assign(&mut x, &feedforward(&normed, w)?);
        }
    }
    ensure_finite(x.data(), "seq_transform")?;
    Ok(x)
}
