//! Space-time voxel grids with bilinear-in-time polarity splatting.

use std::path::Path;

use crate::error::{Error, Result};
use crate::events::EventStream;
use crate::io_util::{atomic_write, read_all};

pub const VOX_MAGIC: &[u8; 4] = b"VOX1";
pub const DEFAULT_BINS: usize = 32;

/// `max(0, 1 - |a|)`
#[inline]
pub fn trilinear_kernel(a: f64) -> f64 {
    (1.0 - a.abs()).max(0.0)
}

/// `bins × height × width` volume, time slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub bins: usize,
    pub height: usize,
    pub width: usize,
    pub t_start: i64,
    pub t_end: i64,
    pub data: Vec<f32>,
}

impl VoxelGrid {
    #[inline]
    pub fn index(&self, bin: usize, y: usize, x: usize) -> usize {
        (bin * self.height + y) * self.width + x
    }

    pub fn at(&self, bin: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(bin, y, x)]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// `VOX1`, u32 T, H, W, then f32 values, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.data.len());
        out.extend_from_slice(VOX_MAGIC);
        for d in [self.bins, self.height, self.width] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Window bounds are not part of the dump and come back as zero.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[0..4] != VOX_MAGIC {
            return Err(Error::Format("missing VOX1 header".into()));
        }
        let dim = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (bins, height, width) = (dim(4), dim(8), dim(12));
        let n = bins * height * width;
        if bytes.len() != 16 + 4 * n {
            return Err(Error::Format(format!("VOX1 body has {} bytes, expected {}", bytes.len() - 16, 4 * n)));
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { bins, height, width, t_start: 0, t_end: 0, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes();
        atomic_write(path.as_ref(), |w| w.write_all(&bytes))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_all(path.as_ref())?)
    }
}

/// Accumulates `p · k_b(t̃ - t*)` with `t* = (T-1)(t - t_R)/(t_T - t_R)`.
/// Event coordinates are integral, so the spatial kernels reduce to the
/// event's own pixel.
pub fn build_voxel_grid(stream: &EventStream, bins: usize, t_start: i64, t_end: i64) -> Result<VoxelGrid> {
    if bins < 2 {
        return Err(Error::config(format!("voxel grid needs at least 2 bins, got {bins}")));
    }
    if t_end <= t_start {
        return Err(Error::Range(format!("empty window [{t_start}, {t_end}]")));
    }
    let (w, h) = (stream.width as usize, stream.height as usize);
    let mut grid = VoxelGrid { bins, height: h, width: w, t_start, t_end, data: vec![0.0; bins * h * w] };
    let span = (t_end - t_start) as i128;
    let scale = (bins - 1) as i128;
    for e in &stream.events {
        if e.t < t_start || e.t > t_end {
            return Err(Error::Range(format!("event at {} ns outside [{t_start}, {t_end}]", e.t)));
        }
        if e.x as usize >= w || e.y as usize >= h {
            return Err(Error::Bounds(format!("event at ({}, {}) outside {w}x{h}", e.x, e.y)));
        }
        // exact integer numerator/denominator keep t* invariant under time rescaling
        let t_star = (scale * (e.t - t_start) as i128) as f64 / span as f64;
        let lo = (t_star.floor() as usize).min(bins - 1);
        let p = e.polarity as f64;
        let (x, y) = (e.x as usize, e.y as usize);
        let w_lo = trilinear_kernel(lo as f64 - t_star);
        let i = grid.index(lo, y, x);
        grid.data[i] += (p * w_lo) as f32;
        if lo + 1 < bins {
            let w_hi = trilinear_kernel((lo + 1) as f64 - t_star);
            if w_hi > 0.0 {
                let i = grid.index(lo + 1, y, x);
                grid.data[i] += (p * w_hi) as f32;
            }
        }
    }
    Ok(grid)
}
