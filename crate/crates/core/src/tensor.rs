//! Dense row-major tensors and the handful of kernels the network needs.
//!
//! Everything is generic over [`Real`] so the same code runs in 32-bit for
//! inference and in 64-bit when a tighter reference is wanted. Matrix
//! products go through `matrixmultiply`, which is single-threaded and has a
//! fixed accumulation order, so repeated runs are bit-identical.

use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type accepted by every kernel.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + MulAssign
    + Send
    + Sync
    + 'static
{
    /// `c = alpha * a·b + beta * c` for row/column-strided operands.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
        c_strides: (usize, usize),
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable")
    }
}

fn check_gemm_extent(len: usize, rows: usize, cols: usize, strides: (usize, usize), what: &str) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) * strides.0 + (cols - 1) * strides.1;
    assert!(last < len, "gemm operand {what} too short: need {} got {len}", last + 1);
}

macro_rules! impl_real {
    ($t:ty, $gemm:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
                c_strides: (usize, usize),
            ) {
                check_gemm_extent(a.len(), m, k, a_strides, "a");
                check_gemm_extent(b.len(), k, n, b_strides, "b");
                check_gemm_extent(c.len(), m, n, c_strides, "c");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: extents checked above; matrixmultiply reads/writes only
                // within (rows-1)*rs + (cols-1)*cs of each base pointer.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0 as isize,
                        c_strides.1 as isize,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        if expected != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {expected} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self { shape, data: vec![value; n] }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Self { shape, data: (0..n).map(&mut f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Size of the trailing dimension.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensor has at least one dim")
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or(U::nan()))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }
}

pub(crate) fn ensure_finite<T: Real>(data: &[T], op: &str) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::Numeric(format!("{op}: non-finite value at element {i}"))),
    }
}

/// `y[.., j] = Σ_i weight[j, i] · x[.., i] + bias[j]`.
pub fn linear<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    if weight.rank() != 2 {
        return Err(Error::shape(format!("linear weight must be 2-D, got {:?}", weight.shape())));
    }
    let (d_out, d_in) = (weight.shape[0], weight.shape[1]);
    if x.last_dim() != d_in {
        return Err(Error::shape(format!(
            "linear: input trailing dim {} does not match weight in-dim {d_in}",
            x.last_dim()
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [d_out] {
            return Err(Error::shape(format!("linear bias {:?} expected [{d_out}]", b.shape())));
        }
    }
    let rows = x.len() / d_in;
    let y = linear_rows(x.data(), rows, weight.data(), d_out, d_in, bias.map(|b| b.data()));
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    ensure_finite(&y, "linear")?;
    Tensor::new(shape, y)
}

/// Raw-slice form of [`linear`] for callers that manage their own layout.
pub(crate) fn linear_rows<T: Real>(
    x: &[T],
    rows: usize,
    weight: &[T],
    d_out: usize,
    d_in: usize,
    bias: Option<&[T]>,
) -> Vec<T> {
    let mut y = match bias {
        Some(b) => {
            let mut y = Vec::with_capacity(rows * d_out);
            for _ in 0..rows {
                y.extend_from_slice(b);
            }
            y
        }
        None => vec![T::zero(); rows * d_out],
    };
    T::gemm(rows, d_in, d_out, T::one(), x, (d_in, 1), weight, (1, d_in), T::one(), &mut y, (d_out, 1));
    y
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// `(k - 1) / 2` on each side.
    Same,
    Explicit(usize),
}

/// Cross-correlation of `x [C_in, H, W]` with `kernels [C_out, C_in, kh, kw]`.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    if x.rank() != 3 || kernels.rank() != 4 {
        return Err(Error::shape(format!(
            "conv2d expects [C,H,W] and [Co,Ci,kh,kw], got {:?} and {:?}",
            x.shape(),
            kernels.shape()
        )));
    }
    let (c_in, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let (c_out, kc, kh, kw) = (kernels.shape[0], kernels.shape[1], kernels.shape[2], kernels.shape[3]);
    if kc != c_in {
        return Err(Error::shape(format!("conv2d: kernel in-channels {kc} != input channels {c_in}")));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::shape(format!("conv2d: kernel {kh}x{kw} must be odd")));
    }
    if stride == 0 {
        return Err(Error::shape("conv2d: stride must be positive"));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape(format!("conv2d bias {:?} expected [{c_out}]", b.shape())));
        }
    }
    let (ph, pw) = match padding {
        Padding::Same => ((kh - 1) / 2, (kw - 1) / 2),
        Padding::Explicit(p) => (p, p),
    };
    let span_h = h + 2 * ph;
    let span_w = w + 2 * pw;
    if span_h < kh || span_w < kw || (span_h - kh) % stride != 0 || (span_w - kw) % stride != 0 {
        return Err(Error::shape(format!(
            "conv2d: {h}x{w} with kernel {kh}x{kw}, padding ({ph},{pw}), stride {stride} does not tile"
        )));
    }
    let ho = (span_h - kh) / stride + 1;
    let wo = (span_w - kw) / stride + 1;
    let patch = c_in * kh * kw;
    let pixels = ho * wo;

    // im2col: [patch, pixels]
    let mut cols = vec![T::zero(); patch * pixels];
    for c in 0..c_in {
        let plane = &x.data[c * h * w..(c + 1) * h * w];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = (c * kh + dy) * kw + dx;
                let dst = &mut cols[row * pixels..(row + 1) * pixels];
                for oy in 0..ho {
                    let iy = (oy * stride + dy) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + dx) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }

    let mut out = vec![T::zero(); c_out * pixels];
    if let Some(b) = bias {
        for (o, bv) in out.chunks_mut(pixels).zip(b.data()) {
            o.fill(*bv);
        }
    }
    T::gemm(c_out, patch, pixels, T::one(), kernels.data(), (patch, 1), &cols, (pixels, 1), T::one(), &mut out, (pixels, 1));
    ensure_finite(&out, "conv2d")?;
    Tensor::new(vec![c_out, ho, wo], out)
}

/// Max-shifted softmax along `axis`.
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::shape(format!("softmax axis {axis} out of range for {:?}", x.shape())));
    }
    let n = x.shape[axis];
    let inner: usize = x.shape[axis + 1..].iter().product();
    let outer: usize = x.shape[..axis].iter().product();
    let mut out = x.data.clone();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            softmax_strided(&mut out, base, n, inner);
        }
    }
    Ok(Tensor { shape: x.shape.clone(), data: out })
}

pub(crate) fn softmax_strided<T: Real>(buf: &mut [T], base: usize, n: usize, stride: usize) {
    let mut max = T::neg_infinity();
    for j in 0..n {
        max = max.max(buf[base + j * stride]);
    }
    let mut sum = T::zero();
    for j in 0..n {
        let e = (buf[base + j * stride] - max).exp();
        buf[base + j * stride] = e;
        sum += e;
    }
    for j in 0..n {
        buf[base + j * stride] = buf[base + j * stride] / sum;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `x · σ(x)`
    Silu,
    /// tanh approximation of the Gaussian error linear unit
    Gelu,
    /// `ln(1 + eˣ)`
    Softplus,
    Relu,
}

impl Activation {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Silu => x * sigmoid(x),
            Activation::Gelu => {
                let c = T::lit(0.797_884_560_802_865_4); // sqrt(2/pi)
                T::lit(0.5) * x * (T::one() + (c * (x + T::lit(0.044715) * x * x * x)).tanh())
            }
            Activation::Softplus => softplus(x),
            Activation::Relu => x.max(T::zero()),
        }
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softplus<T: Real>(x: T) -> T {
    // max(x, 0) + ln(1 + e^{-|x|}) never overflows
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn activation<T: Real>(x: &Tensor<T>, kind: Activation) -> Tensor<T> {
    Tensor { shape: x.shape.clone(), data: x.data.iter().map(|&v| kind.apply(v)).collect() }
}

/// `x / sqrt(mean(x²) + eps) · gain` along the last dimension.
pub fn rms_normalize<T: Real>(x: &Tensor<T>, gain: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let d = x.last_dim();
    if gain.shape() != [d] {
        return Err(Error::shape(format!("rms gain {:?} expected [{d}]", gain.shape())));
    }
    let mut out = x.data.clone();
    rms_normalize_rows(&mut out, d, gain.data(), eps);
    ensure_finite(&out, "rms_normalize")?;
    Ok(Tensor { shape: x.shape.clone(), data: out })
}

pub(crate) fn rms_normalize_rows<T: Real>(buf: &mut [T], d: usize, gain: &[T], eps: T) {
    let dn = T::from_usize(d).unwrap();
    for row in buf.chunks_mut(d) {
        let ms = row.iter().map(|&v| v * v).sum::<T>() / dn;
        let denom = (ms + eps).sqrt();
        if denom == T::zero() {
            row.fill(T::zero());
            continue;
        }
        let inv = T::one() / denom;
        for (v, g) in row.iter_mut().zip(gain) {
            *v = *v * inv * *g;
        }
    }
}
