use super::scan::{scan_diagonal, ScanMode};
use super::discretize_selective;
use crate::error::{Error, Result};
use crate::tensor::{ensure_finite, linear, softplus, Activation, Real, Tensor};

/// Input-dependent parameters of the selective scan over `D_inner` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectiveWeights<T = f32> {
    /// `[dt_rank + 2N, D_inner]`: per-token low-rank Δ input, B(x), C(x).
    pub x_proj: Tensor<T>,
    /// `[D_inner, dt_rank]`
    pub dt_proj: Tensor<T>,
    /// `[D_inner]`
    pub dt_bias: Tensor<T>,
    /// `[D_inner, N]`, with `A = -exp(a_log)`.
    pub a_log: Tensor<T>,
    /// `[D_inner]`
    pub d_skip: Tensor<T>,
}

impl<T: Real> SelectiveWeights<T> {
    pub fn inner_dim(&self) -> usize {
        self.a_log.shape()[0]
    }

    pub fn state_dim(&self) -> usize {
        self.a_log.shape()[1]
    }

    pub fn dt_rank(&self) -> usize {
        self.dt_proj.shape()[1]
    }

    fn validate(&self) -> Result<()> {
        let (di, n, r) = (self.inner_dim(), self.state_dim(), self.dt_rank());
        let ok = self.x_proj.shape() == [r + 2 * n, di]
            && self.dt_proj.shape() == [di, r]
            && self.dt_bias.shape() == [di]
            && self.d_skip.shape() == [di];
        if ok {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "inconsistent selective weights: x_proj {:?}, dt_proj {:?}, dt_bias {:?}, a_log {:?}, d_skip {:?}",
                self.x_proj.shape(),
                self.dt_proj.shape(),
                self.dt_bias.shape(),
                self.a_log.shape(),
                self.d_skip.shape()
            )))
        }
    }
}

/// Per token: `Δ = softplus(dt_proj · x_proj_Δ(x) + dt_bias)`,
/// `h = exp(Δ·a) ⊙ h + Δ·B(x)·x`, `y = C(x)·h + d_skip·x`.
pub fn selective_scan<T: Real>(x: &Tensor<T>, w: &SelectiveWeights<T>, mode: ScanMode) -> Result<Tensor<T>> {
    w.validate()?;
    let (di, n, r) = (w.inner_dim(), w.state_dim(), w.dt_rank());
    if x.rank() != 2 || x.shape()[1] != di {
        return Err(Error::shape(format!("selective scan expects [L, {di}], got {:?}", x.shape())));
    }
    let len = x.shape()[0];
    let proj = linear(x, &w.x_proj, None)?;
    let proj = proj.data();
    let width = r + 2 * n;

    let mut dt_in = Vec::with_capacity(len * r);
    for k in 0..len {
        dt_in.extend_from_slice(&proj[k * width..k * width + r]);
    }
    let dt_in = Tensor::new([len, r], dt_in)?;
    let mut delta = linear(&dt_in, &w.dt_proj, Some(&w.dt_bias))?.into_data();
    for v in delta.iter_mut() {
        *v = softplus(*v);
    }
    if delta.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite step size in selective scan".into()));
    }
    let a: Vec<T> = w.a_log.data().iter().map(|v| -v.exp()).collect();
    let xs = x.data();
    let d_skip = w.d_skip.data();
    let b_at = |k: usize| &proj[k * width + r..k * width + r + n];
    let c_at = |k: usize| &proj[k * width + r + n..(k + 1) * width];

    let mut y = vec![T::zero(); len * di];
    match mode {
        ScanMode::Sequential => {
            let mut h = vec![T::zero(); di * n];
            for k in 0..len {
                let (bk, ck) = (b_at(k), c_at(k));
                for i in 0..di {
                    let dt = delta[k * di + i];
                    let xi = xs[k * di + i];
                    let hi = &mut h[i * n..(i + 1) * n];
                    let mut acc = T::zero();
                    for s in 0..n {
                        let (ab, bb) = discretize_selective(dt, a[i * n + s], bk[s]);
                        hi[s] = ab * hi[s] + bb * xi;
                        acc += ck[s] * hi[s];
                    }
                    y[k * di + i] = acc + d_skip[i] * xi;
                }
            }
        }
        ScanMode::Parallel => {
            let mut a_seq = vec![T::zero(); len * n];
            let mut b_seq = vec![T::zero(); len * n];
            let h0 = vec![T::zero(); n];
            for i in 0..di {
                for k in 0..len {
                    let dt = delta[k * di + i];
                    let xi = xs[k * di + i];
                    let bk = b_at(k);
                    for s in 0..n {
                        let (ab, bb) = discretize_selective(dt, a[i * n + s], bk[s]);
                        a_seq[k * n + s] = ab;
                        b_seq[k * n + s] = bb * xi;
                    }
                }
                let states = scan_diagonal(&a_seq, &b_seq, &h0, ScanMode::Parallel);
                for k in 0..len {
                    let acc: T = c_at(k).iter().zip(&states[k * n..(k + 1) * n]).map(|(c, h)| *c * *h).sum();
                    y[k * di + i] = acc + d_skip[i] * xs[k * di + i];
                }
            }
        }
    }
    ensure_finite(&y, "selective_scan")?;
    Tensor::new([len, di], y)
}

/// One gated selective-scan block.
#[derive(Debug, Clone, PartialEq)]
pub struct MambaWeights<T = f32> {
    /// `[2·D_inner, D]`, scan stream then gate stream.
    pub in_proj: Tensor<T>,
    /// `[D_inner, width]` depthwise causal kernel.
    pub conv_w: Tensor<T>,
    /// `[D_inner]`
    pub conv_b: Tensor<T>,
    pub selective: SelectiveWeights<T>,
    /// `[D, D_inner]`
    pub out_proj: Tensor<T>,
}

impl<T: Real> MambaWeights<T> {
    pub fn model_dim(&self) -> usize {
        self.in_proj.shape()[1]
    }
}

/// `out_proj(scan(silu(conv(x_s))) ⊙ silu(x_g))` where `[x_s, x_g] = in_proj(x)`.
pub fn mamba_unit<T: Real>(x: &Tensor<T>, w: &MambaWeights<T>, mode: ScanMode) -> Result<Tensor<T>> {
    let di = w.selective.inner_dim();
    let dim = w.model_dim();
    if x.rank() != 2 || x.shape()[1] != dim {
        return Err(Error::shape(format!("mamba unit expects [L, {dim}], got {:?}", x.shape())));
    }
    if w.in_proj.shape() != [2 * di, dim] || w.out_proj.shape() != [dim, di] || w.conv_w.shape()[0] != di || w.conv_b.shape() != [di] {
        return Err(Error::shape("inconsistent mamba unit weights"));
    }
    let len = x.shape()[0];
    let width = w.conv_w.shape()[1];
    let xz = linear(x, &w.in_proj, None)?;
    let xz = xz.data();
    let (cw, cb) = (w.conv_w.data(), w.conv_b.data());

    // causal depthwise conv: tap j sees x[k - (width-1) + j]
    let mut u = vec![T::zero(); len * di];
    for k in 0..len {
        for i in 0..di {
            let mut acc = cb[i];
            for j in 0..width {
                let src = k as isize - (width - 1) as isize + j as isize;
                if src >= 0 {
                    acc += cw[i * width + j] * xz[src as usize * 2 * di + i];
                }
            }
            u[k * di + i] = Activation::Silu.apply(acc);
        }
    }
    let scanned = selective_scan(&Tensor::new([len, di], u)?, &w.selective, mode)?;
    let mut gated = scanned.into_data();
    for k in 0..len {
        for i in 0..di {
            gated[k * di + i] *= Activation::Silu.apply(xz[k * 2 * di + di + i]);
        }
    }
    linear(&Tensor::new([len, di], gated)?, &w.out_proj, None)
}
