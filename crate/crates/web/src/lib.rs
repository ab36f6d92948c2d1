//! Browser demo: voxel-grid bins of synthetic events, convex flow
//! upsampling, and scan responses. Everything returns plain buffers
//! (RGBA bytes or samples) for a canvas to draw.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stflow::events::{synthesize_events, SynthConfig};
use stflow::flow::FlowField;
use stflow::flownet::{convex_upsample, MASK_CHANNELS, UPSAMPLE};
use stflow::ssm::{lti_scan, selective_scan, zoh_discretize, ScanMode, SelectiveWeights, SsmParams};
use stflow::tensor::Tensor;
use stflow::voxel::{build_voxel_grid, VoxelGrid};
use wasm_bindgen::prelude::*;

fn js_err(e: stflow::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Adds an opaque alpha channel to packed RGB.
pub fn rgb_to_rgba(rgb: &[u8]) -> Vec<u8> {
    rgb.chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

/// Blue for negative, white for zero, red for positive; `v` in `[-1, 1]`.
pub fn diverging(v: f32) -> [u8; 4] {
    let v = v.clamp(-1.0, 1.0);
    let fade = (255.0 * (1.0 - v.abs())).round() as u8;
    if v >= 0.0 {
        [255, fade, fade, 255]
    } else {
        [fade, fade, 255, 255]
    }
}

/// Synthetic event window accumulated into a voxel grid.
#[wasm_bindgen]
pub struct VoxelDemo {
    grid: VoxelGrid,
    events: usize,
    scale: f32,
}

impl VoxelDemo {
    pub fn build(size: u32, vx: f64, vy: f64, contrast: f64, seed: u64, bins: usize) -> stflow::Result<Self> {
        let cfg = SynthConfig {
            width: size,
            height: size,
            velocity: [vx, vy],
            contrast_threshold: contrast,
            substeps: 60,
            texture_seed: seed,
            ..Default::default()
        };
        let s = synthesize_events(&cfg)?;
        let grid = build_voxel_grid(&s.stream, bins, 0, cfg.duration_ns())?;
        let scale = grid.data.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        Ok(Self { grid, events: s.stream.len(), scale })
    }

    /// One temporal bin, normalized by the largest magnitude in the grid.
    pub fn bin_pixels(&self, bin: usize) -> Vec<u8> {
        let n = self.grid.width * self.grid.height;
        let bin = bin.min(self.grid.bins - 1);
        let scale = if self.scale > 0.0 { self.scale } else { 1.0 };
        self.grid.data[bin * n..(bin + 1) * n].iter().flat_map(|&v| diverging(v / scale)).collect()
    }
}

#[wasm_bindgen]
impl VoxelDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(size: u32, vx: f64, vy: f64, contrast: f64, seed: u64, bins: usize) -> Result<VoxelDemo, JsError> {
        Self::build(size, vx, vy, contrast, seed, bins).map_err(js_err)
    }

    pub fn size(&self) -> usize {
        self.grid.width
    }

    pub fn bins(&self) -> usize {
        self.grid.bins
    }

    pub fn event_count(&self) -> usize {
        self.events
    }

    pub fn polarity_sum(&self) -> f64 {
        self.grid.sum()
    }

    pub fn bin_rgba(&self, bin: usize) -> Vec<u8> {
        self.bin_pixels(bin)
    }
}

/// Random smooth coarse flow plus random mask logits, upsampled ×8.
#[wasm_bindgen]
pub struct UpsampleDemo {
    coarse: Tensor<f32>,
    fine: FlowField,
}

impl UpsampleDemo {
    pub fn build(cells: usize, seed: u64, sharpness: f32) -> stflow::Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phase: [f32; 4] = std::array::from_fn(|_| rng.gen_range(0.0..std::f32::consts::TAU));
        let k = std::f32::consts::TAU / cells as f32;
        let coarse = Tensor::from_fn([2, cells, cells], |i| {
            let (c, y, x) = (i / (cells * cells), (i / cells) % cells, i % cells);
            let p = &phase[2 * c..2 * c + 2];
            3.0 * ((k * x as f32 + p[0]).sin() + (k * y as f32 + p[1]).cos())
        });
        let masks = Tensor::from_fn([MASK_CHANNELS, cells, cells], |_| sharpness * rng.gen_range(-1.0f32..1.0));
        let fine = convex_upsample(&coarse, &masks)?;
        Ok(Self { coarse, fine })
    }

    /// Coarse flow in fine-pixel units, drawn with nearest-neighbour blocks.
    pub fn coarse_field(&self) -> FlowField {
        let cells = self.coarse.shape()[1];
        let n = cells * UPSAMPLE;
        let d = self.coarse.data();
        let at = |c: usize, i: usize| {
            let (y, x) = (i / n / UPSAMPLE, i % n / UPSAMPLE);
            UPSAMPLE as f32 * d[(c * cells + y) * cells + x]
        };
        FlowField { width: n, height: n, u: (0..n * n).map(|i| at(0, i)).collect(), v: (0..n * n).map(|i| at(1, i)).collect(), valid: None }
    }

    pub fn coarse(&self) -> &Tensor<f32> {
        &self.coarse
    }

    pub fn fine_field(&self) -> &FlowField {
        &self.fine
    }

    /// Shared color scale; convex combinations never exceed the coarse maximum.
    fn max_magnitude(&self) -> f32 {
        let (u, v) = self.coarse.data().split_at(self.coarse.len() / 2);
        UPSAMPLE as f32 * u.iter().zip(v).map(|(a, b)| a.hypot(*b)).fold(0.0, f32::max)
    }
}

#[wasm_bindgen]
impl UpsampleDemo {
    #[wasm_bindgen(constructor)]
    pub fn new(cells: usize, seed: u64, sharpness: f32) -> Result<UpsampleDemo, JsError> {
        Self::build(cells, seed, sharpness).map_err(js_err)
    }

    pub fn size(&self) -> usize {
        self.fine.width
    }

    pub fn coarse_rgba(&self) -> Vec<u8> {
        rgb_to_rgba(&self.coarse_field().to_rgb(Some(self.max_magnitude())))
    }

    pub fn fine_rgba(&self) -> Vec<u8> {
        rgb_to_rgba(&self.fine.to_rgb(Some(self.max_magnitude())))
    }
}

/// Output of a diagonal LTI system with poles `-decay·(1..=n)` to a unit
/// impulse at step 0.
pub fn lti_impulse(decay: f64, delta: f64, state_dim: usize, len: usize, parallel: bool) -> stflow::Result<Vec<f64>> {
    let a = (1..=state_dim).map(|i| -decay * i as f64).collect();
    let c = vec![1.0 / state_dim as f64; state_dim];
    let disc = zoh_discretize(&SsmParams::diagonal_siso(a, vec![1.0; state_dim], c, 0.0, delta))?;
    let mut z = vec![0.0; len];
    if let Some(z0) = z.first_mut() {
        *z0 = 1.0;
    }
    let mode = if parallel { ScanMode::Parallel } else { ScanMode::Sequential };
    lti_scan(&disc, &z, &vec![0.0; state_dim], mode)
}

/// Response of a seeded single-channel selective scan to a step of the given
/// amplitude, divided by that amplitude. A linear system would give the same
/// curve for every amplitude.
pub fn selective_step(amplitude: f64, len: usize, seed: u64) -> stflow::Result<Vec<f64>> {
    let n = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |shape: [usize; 2], s: f64| Tensor::from_fn(shape, |_| rng.gen_range(-s..s));
    let w = SelectiveWeights {
        x_proj: draw([1 + 2 * n, 1], 1.0),
        dt_proj: draw([1, 1], 1.0),
        dt_bias: Tensor::full([1], -1.0),
        a_log: Tensor::from_fn([1, n], |i| ((i + 1) as f64 * 0.25).ln()),
        d_skip: Tensor::full([1], 0.0),
    };
    let x = Tensor::full([len.max(1), 1], amplitude);
    let y = selective_scan(&x, &w, ScanMode::Sequential)?;
    let scale = if amplitude != 0.0 { amplitude } else { 1.0 };
    Ok(y.data().iter().take(len).map(|v| v / scale).collect())
}

#[wasm_bindgen]
pub fn lti_impulse_response(decay: f64, delta: f64, state_dim: usize, len: usize, parallel: bool) -> Result<Vec<f64>, JsError> {
    lti_impulse(decay, delta, state_dim, len, parallel).map_err(js_err)
}

#[wasm_bindgen]
pub fn selective_step_response(amplitude: f64, len: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    selective_step(amplitude, len, seed).map_err(js_err)
}
