//! Closed-form parameter and multiply-accumulate accounting.
//!
//! One multiply-accumulate counts as one MAC. Additions without a multiply,
//! exponentials, normalizations and softmax are left out of the totals.

use std::fmt::Write as _;

use crate::error::Result;
use crate::flownet::{NetworkConfig, MASK_CHANNELS, UPSAMPLE};
use crate::stssm::{Backend, Embedding, PatchGrid, STSSMConfig, FFN_EXPANSION};

/// MACs per state element per token of the selective recurrence:
/// `Δ·a`, `Δ·B`, `(ΔB)·x`, `Ā·h` accumulate and `C·h`.
pub const SELECTIVE_MACS_PER_STATE: u64 = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cost {
    pub name: String,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CostReport {
    pub components: Vec<Cost>,
}

impl CostReport {
    fn push(&mut self, name: impl Into<String>, params: u64, macs: u64) {
        self.components.push(Cost { name: name.into(), params, macs });
    }

    pub fn total_params(&self) -> u64 {
        self.components.iter().map(|c| c.params).sum()
    }

    pub fn total_macs(&self) -> u64 {
        self.components.iter().map(|c| c.macs).sum()
    }

    pub fn gmacs(&self) -> f64 {
        self.total_macs() as f64 / 1e9
    }

    pub fn find(&self, name: &str) -> Option<&Cost> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn to_table(&self) -> String {
        let width = self.components.iter().map(|c| c.name.len()).max().unwrap_or(0).max(9);
        let mut s = format!("{:<width$}  {:>12}  {:>16}\n", "component", "params", "macs");
        for c in &self.components {
            let _ = writeln!(s, "{:<width$}  {:>12}  {:>16}", c.name, c.params, c.macs);
        }
        let _ = writeln!(s, "{:<width$}  {:>12}  {:>16}", "total", self.total_params(), self.total_macs());
        let _ = writeln!(s, "gmac {:.3}", self.gmacs());
        s
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        for c in &self.components {
            let _ = writeln!(s, "{}.params={}\n{}.macs={}", c.name, c.params, c.name, c.macs);
        }
        let _ = write!(s, "total.params={}\ntotal.macs={}\ntotal.gmac={:.6}\n", self.total_params(), self.total_macs(), self.gmacs());
        s
    }
}

pub fn linear_params(d_in: u64, d_out: u64, bias: bool) -> u64 {
    d_out * (d_in + bias as u64)
}

pub fn linear_macs(tokens: u64, d_in: u64, d_out: u64) -> u64 {
    tokens * d_in * d_out
}

pub fn conv_params(c_in: u64, c_out: u64, k: u64) -> u64 {
    c_out * (c_in * k * k + 1)
}

/// Same-padded stride-1 convolution on an `h × w` map.
pub fn conv_macs(h: u64, w: u64, c_in: u64, c_out: u64, k: u64) -> u64 {
    h * w * c_out * c_in * k * k
}

/// `(params, macs)` of one sequence unit over `len` tokens, its norm included.
pub fn unit_cost(c: &STSSMConfig, len: u64) -> (u64, u64) {
    let (d, n) = (c.dim as u64, c.state_dim as u64);
    let norm = d;
    let (p, per_token, quadratic) = match c.backend {
        Backend::Selective => {
            let (di, r, k) = (c.inner_dim() as u64, c.dt_rank() as u64, c.conv_width as u64);
            let p = 2 * di * d + di * (k + 1) + (r + 2 * n) * di + di * (r + 1) + di * n + di + d * di;
            let m = 2 * di * d + di * k + (r + 2 * n) * di + di * r + SELECTIVE_MACS_PER_STATE * di * n + 2 * di + d * di;
            (p, m, 0)
        }
        Backend::LtiDiagonal => (d + 3 * d * n + d + d * (d + 1), d * (3 * n + 1) + d * d, 0),
        Backend::LtiMimo => (1 + n * n + 2 * n * d + d + d * (d + 1), n * d + n * n + d * n + d + d * d, 0),
        Backend::Attention => {
            let h = FFN_EXPANSION as u64 * d;
            let p = 3 * d * (d + 1) + d * (d + 1) + h * (d + 1) + d * (h + 1);
            // ffn_norm
            (p + d, 3 * d * d + d * d + 2 * h * d, 2 * len * len * d)
        }
    };
    (p + norm, per_token * len + quadratic)
}

/// Costs of one STSSM stage on its token grid.
pub fn stage_cost(c: &STSSMConfig, g: PatchGrid, pos_grid: PatchGrid) -> Vec<(String, u64, u64)> {
    let (d, p, tokens) = (c.dim as u64, c.patch_len() as u64, g.tokens() as u64);
    let tile = (c.out_channels * c.l * c.l) as u64;
    let mut out = vec![("proj".to_string(), linear_params(p, d, true), linear_macs(tokens, p, d))];
    let emb = match c.embedding {
        Embedding::None => 0,
        Embedding::Temporal => g.n_t as u64 * d,
        Embedding::TemporalPositional => (g.n_t + pos_grid.n_s()) as u64 * d,
    };
    if emb > 0 {
        out.push(("embed".to_string(), emb, 0));
    }
    for j in 0..c.n_blocks {
        let (p, m) = unit_cost(c, tokens);
        out.push((format!("seq.{j}"), p, m));
    }
    out.push(("reproj".to_string(), linear_params(d, tile, true), linear_macs(tokens, d, tile)));
    out
}

/// Parameters and MACs of the whole network on an `h × w` input.
pub fn count_macs(cfg: &NetworkConfig, h: usize, w: usize) -> Result<CostReport> {
    let trace = cfg.trace(h, w)?;
    let pos = cfg.trace(cfg.height, cfg.width)?;
    let mut r = CostReport::default();
    for (i, ((c, g), (_, pg))) in trace.iter().zip(&pos).enumerate() {
        for (name, p, m) in stage_cost(c, *g, *pg) {
            r.push(format!("block{i}.{name}"), p, m);
        }
    }
    let (ch, hc, wc) = (cfg.out_channels() as u64, (h / UPSAMPLE) as u64, (w / UPSAMPLE) as u64);
    let (fh, mh) = (cfg.flow_hidden as u64, cfg.mask_hidden as u64);
    let mc = MASK_CHANNELS as u64;
    r.push("flow_head.conv1", conv_params(ch, fh, 3), conv_macs(hc, wc, ch, fh, 3));
    r.push("flow_head.conv2", conv_params(fh, 2, 3), conv_macs(hc, wc, fh, 2, 3));
    r.push("mask_head.conv1", conv_params(ch, mh, 3), conv_macs(hc, wc, ch, mh, 3));
    r.push("mask_head.conv2", conv_params(mh, mc, 1), conv_macs(hc, wc, mh, mc, 1));
    r.push("upsample", 0, hc * wc * mc * 2);
    Ok(r)
}

/// Parameter report at the configured resolution.
pub fn count_params(cfg: &NetworkConfig) -> Result<CostReport> {
    count_macs(cfg, cfg.height, cfg.width)
}
