//! Windowed least-squares flow from a pair of intensity frames.

use crate::error::{Error, Result};
use crate::flow::FlowField;
use crate::image::Frame;

pub const DEFAULT_RIDGE: f64 = 1e-6;
/// Windows whose normal matrix has a smaller eigenvalue (per window pixel)
/// than this are treated as textureless.
pub const MIN_EIGEN_PER_PIXEL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeStack {
    pub width: usize,
    pub height: usize,
    pub ix: Vec<f64>,
    pub iy: Vec<f64>,
    pub it: Vec<f64>,
}

/// Central differences of the average frame (one-sided at the border) and
/// `It = frame1 - frame0`.
pub fn compute_derivatives(f0: &Frame, f1: &Frame) -> Result<DerivativeStack> {
    if !f0.same_shape(f1) {
        return Err(Error::shape(format!(
            "frames differ in size: {}x{} vs {}x{}",
            f0.width, f0.height, f1.width, f1.height
        )));
    }
    let (w, h) = (f0.width, f0.height);
    let avg: Vec<f64> = f0.data.iter().zip(&f1.data).map(|(a, b)| 0.5 * (a + b)).collect();
    let diff = |lo: usize, hi: usize, span: usize| if span == 0 { 0.0 } else { (avg[hi] - avg[lo]) / span as f64 };
    let mut ix = vec![0.0; w * h];
    let mut iy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (y0, y1) = (y.saturating_sub(1), (y + 1).min(h - 1));
            ix[y * w + x] = diff(y * w + x0, y * w + x1, x1 - x0);
            iy[y * w + x] = diff(y0 * w + x, y1 * w + x, y1 - y0);
        }
    }
    let it = f1.data.iter().zip(&f0.data).map(|(a, b)| a - b).collect();
    Ok(DerivativeStack { width: w, height: h, ix, iy, it })
}

/// Normal equations over a `(2r+1)²` window: `(ΦᵀΦ, ΦᵀΘ)`.
fn normal_equations(d: &DerivativeStack, cx: usize, cy: usize, r: usize) -> Result<([f64; 3], [f64; 2])> {
    if cx < r || cy < r || cx + r >= d.width || cy + r >= d.height {
        return Err(Error::Bounds(format!("window of radius {r} at ({cx}, {cy}) leaves the image")));
    }
    let (mut a, mut b, mut c, mut p, mut q) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            let i = y * d.width + x;
            let (gx, gy, gt) = (d.ix[i], d.iy[i], d.it[i]);
            a += gx * gx;
            b += gx * gy;
            c += gy * gy;
            p += gx * gt;
            q += gy * gt;
        }
    }
    Ok(([a, b, c], [p, q]))
}

fn min_eigen([a, b, c]: [f64; 3]) -> f64 {
    0.5 * (a + c - ((a - c).powi(2) + 4.0 * b * b).sqrt())
}

/// `v* = -(ΦᵀΦ + εI)⁻¹ ΦᵀΘ` over the window centred at `(cx, cy)`.
pub fn solve_local_flow(d: &DerivativeStack, (cx, cy): (usize, usize), radius: usize, ridge: f64) -> Result<[f64; 2]> {
    let ([a, b, c], [p, q]) = normal_equations(d, cx, cy, radius)?;
    let (a, c) = (a + ridge, c + ridge);
    let det = a * c - b * b;
    let scale = (a + c).max(f64::MIN_POSITIVE);
    if !(det > 1e-12 * scale * scale) {
        return Err(Error::Singular(format!("normal matrix at ({cx}, {cy}) has determinant {det:e}")));
    }
    Ok([-(c * p - b * q) / det, -(a * q - b * p) / det])
}

/// Dense flow from solves on a `stride` lattice, each pixel taking its
/// nearest lattice centre. Lattice windows stay off the outermost pixel
/// ring, where derivatives are one-sided. Pixels whose own window leaves
/// the image, or whose centre's window is singular or textureless, are
/// invalid.
pub fn lk_flow(f0: &Frame, f1: &Frame, radius: usize, stride: usize, ridge: f64) -> Result<FlowField> {
    if stride == 0 {
        return Err(Error::config("stride must be positive"));
    }
    let d = compute_derivatives(f0, f1)?;
    let (w, h) = (d.width, d.height);
    let mut out = FlowField::zeros(w, h);
    let mut valid = vec![false; w * h];
    let margin = radius + 1;
    if w <= 2 * margin || h <= 2 * margin {
        out.valid = Some(valid);
        return Ok(out);
    }
    let centers = |n: usize| (margin..n - margin).step_by(stride).collect::<Vec<_>>();
    let (cxs, cys) = (centers(w), centers(h));
    let npix = ((2 * radius + 1) * (2 * radius + 1)) as f64;
    let mut solved = vec![None; cxs.len() * cys.len()];
    for (j, &cy) in cys.iter().enumerate() {
        for (i, &cx) in cxs.iter().enumerate() {
            let (m, _) = normal_equations(&d, cx, cy, radius)?;
            if min_eigen(m) / npix < MIN_EIGEN_PER_PIXEL {
                continue;
            }
            solved[j * cxs.len() + i] = solve_local_flow(&d, (cx, cy), radius, ridge).ok();
        }
    }
    let nearest = |v: usize, n: usize| ((v.saturating_sub(margin) as f64 / stride as f64).round() as usize).min(n - 1);
    for y in radius..h - radius {
        for x in radius..w - radius {
            if let Some([u, v]) = solved[nearest(y, cys.len()) * cxs.len() + nearest(x, cxs.len())] {
                let k = y * w + x;
                (out.u[k], out.v[k], valid[k]) = (u as f32, v as f32, true);
            }
        }
    }
    out.valid = Some(valid);
    Ok(out)
}
