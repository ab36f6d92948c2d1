//! Dense flow fields, the Middlebury `.flo` container and color-wheel rendering.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io_util::{atomic_write, read_all};

/// Middlebury tag: the bytes "PIEH" read as a little-endian f32.
pub const FLO_TAG: f32 = 202021.25;
/// Components with magnitude above this are treated as unknown.
pub const UNKNOWN_FLOW_THRESH: f32 = 1e9;
pub const UNKNOWN_FLOW: f32 = 1e10;

/// Reference→target displacement in pixels, planar `u` and `v`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
    pub valid: Option<Vec<bool>>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        let n = width * height;
        Self { width, height, u: vec![u; n], v: vec![v; n], valid: None }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid.as_ref().is_none_or(|m| m[i])
    }

    pub fn valid_count(&self) -> usize {
        (0..self.len()).filter(|&i| self.is_valid(i)).count()
    }

    pub fn to_flo(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.len() * 8);
        out.extend_from_slice(&FLO_TAG.to_le_bytes());
        out.extend_from_slice(&(self.width as i32).to_le_bytes());
        out.extend_from_slice(&(self.height as i32).to_le_bytes());
        for i in 0..self.len() {
            let (u, v) = if self.is_valid(i) { (self.u[i], self.v[i]) } else { (UNKNOWN_FLOW, UNKNOWN_FLOW) };
            out.extend_from_slice(&u.to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Pixels stored with an unknown-flow sentinel come back invalid.
    pub fn from_flo(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 {
            return Err(Error::Format("flow file shorter than its 12-byte header".into()));
        }
        let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
        if f32::from_le_bytes(word(0)) != FLO_TAG {
            return Err(Error::Format("missing PIEH tag".into()));
        }
        let width = i32::from_le_bytes(word(4));
        let height = i32::from_le_bytes(word(8));
        if width <= 0 || height <= 0 {
            return Err(Error::Format(format!("bad flow extents {width}x{height}")));
        }
        let (width, height) = (width as usize, height as usize);
        let n = width * height;
        if bytes.len() != 12 + 8 * n {
            return Err(Error::Format(format!("flow body has {} bytes, expected {}", bytes.len() - 12, 8 * n)));
        }
        let mut u = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        for i in 0..n {
            let a = f32::from_le_bytes(word(12 + 8 * i));
            let b = f32::from_le_bytes(word(16 + 8 * i));
            let ok = a.is_finite() && b.is_finite() && a.abs() <= UNKNOWN_FLOW_THRESH && b.abs() <= UNKNOWN_FLOW_THRESH;
            u.push(if ok { a } else { 0.0 });
            v.push(if ok { b } else { 0.0 });
            valid.push(ok);
        }
        let valid = if valid.iter().all(|&b| b) { None } else { Some(valid) };
        Ok(Self { width, height, u, v, valid })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_flo();
        atomic_write(path.as_ref(), |w| w.write_all(&bytes))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_flo(&read_all(path.as_ref())?)
    }

    /// RGB color-wheel rendering (hue = direction, saturation = magnitude),
    /// normalized by the largest valid magnitude or `max_magnitude` if given.
    pub fn to_rgb(&self, max_magnitude: Option<f32>) -> Vec<u8> {
        let max_rad = max_magnitude.unwrap_or_else(|| {
            (0..self.len())
                .filter(|&i| self.is_valid(i))
                .map(|i| self.u[i].hypot(self.v[i]))
                .fold(0.0f32, f32::max)
        });
        let wheel = color_wheel();
        let mut rgb = Vec::with_capacity(self.len() * 3);
        for i in 0..self.len() {
            if !self.is_valid(i) {
                rgb.extend_from_slice(&[0, 0, 0]);
                continue;
            }
            let (mut fu, mut fv) = (self.u[i], self.v[i]);
            if max_rad > 0.0 {
                fu /= max_rad;
                fv /= max_rad;
            }
            rgb.extend_from_slice(&wheel_color(&wheel, fu, fv));
        }
        rgb
    }

    /// Binary PPM (P6) of [`FlowField::to_rgb`].
    pub fn to_ppm(&self, max_magnitude: Option<f32>) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.to_rgb(max_magnitude));
        out
    }
}

fn color_wheel() -> Vec<[f32; 3]> {
    const RY: usize = 15;
    const YG: usize = 6;
    const GC: usize = 4;
    const CB: usize = 11;
    const BM: usize = 13;
    const MR: usize = 6;
    let mut wheel = Vec::with_capacity(RY + YG + GC + CB + BM + MR);
    let ramp = |i: usize, n: usize| 255.0 * i as f32 / n as f32;
    for i in 0..RY {
        wheel.push([255.0, ramp(i, RY), 0.0]);
    }
    for i in 0..YG {
        wheel.push([255.0 - ramp(i, YG), 255.0, 0.0]);
    }
    for i in 0..GC {
        wheel.push([0.0, 255.0, ramp(i, GC)]);
    }
    for i in 0..CB {
        wheel.push([0.0, 255.0 - ramp(i, CB), 255.0]);
    }
    for i in 0..BM {
        wheel.push([ramp(i, BM), 0.0, 255.0]);
    }
    for i in 0..MR {
        wheel.push([255.0, 0.0, 255.0 - ramp(i, MR)]);
    }
    wheel
}

fn wheel_color(wheel: &[[f32; 3]], u: f32, v: f32) -> [u8; 3] {
    let ncols = wheel.len();
    let rad = u.hypot(v);
    let a = (-v).atan2(-u) / std::f32::consts::PI;
    let fk = (a + 1.0) / 2.0 * (ncols - 1) as f32;
    let k0 = (fk.floor() as usize).min(ncols - 1);
    let k1 = (k0 + 1) % ncols;
    let f = fk - k0 as f32;
    let mut out = [0u8; 3];
    for c in 0..3 {
        let col0 = wheel[k0][c] / 255.0;
        let col1 = wheel[k1][c] / 255.0;
        let mut col = (1.0 - f) * col0 + f * col1;
        if rad <= 1.0 {
            col = 1.0 - rad * (1.0 - col);
        } else {
            col *= 0.75;
        }
        out[c] = (255.0 * col).round().clamp(0.0, 255.0) as u8;
    }
    out
}
