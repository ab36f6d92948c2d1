//! Flow accuracy: endpoint error, angular error, N-pixel outlier rates, L1.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::flow::FlowField;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowMetrics {
    pub epe: f64,
    /// Degrees.
    pub ae: f64,
    /// Percent of pixels with endpoint error above `N`.
    pub npe: BTreeMap<u32, f64>,
    pub l1: f64,
    pub valid_count: usize,
}

impl FlowMetrics {
    /// `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = format!("epe={}\nae={}\n", self.epe, self.ae);
        for (n, v) in &self.npe {
            let _ = writeln!(s, "{n}pe={v}");
        }
        let _ = write!(s, "l1={}\nvalid={}\n", self.l1, self.valid_count);
        s
    }
}

/// Angle between `(p, 1)` and `(g, 1)` in degrees, via `atan2(|a×b|, a·b)`.
pub fn angular_error(p: [f64; 2], g: [f64; 2]) -> f64 {
    let cross = [p[1] - g[1], g[0] - p[0], p[0] * g[1] - p[1] * g[0]];
    let norm = cross.iter().map(|c| c * c).sum::<f64>().sqrt();
    norm.atan2(p[0] * g[0] + p[1] * g[1] + 1.0).to_degrees()
}

/// Averages over pixels valid in both fields.
pub fn evaluate_flow(pred: &FlowField, gt: &FlowField, n_list: &[u32]) -> Result<FlowMetrics> {
    if (pred.width, pred.height) != (gt.width, gt.height) {
        return Err(Error::shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let (mut epe, mut ae, mut l1, mut count) = (0.0, 0.0, 0.0, 0usize);
    let mut outliers = vec![0usize; n_list.len()];
    for i in 0..gt.len() {
        if !(gt.is_valid(i) && pred.is_valid(i)) {
            continue;
        }
        let p = [pred.u[i] as f64, pred.v[i] as f64];
        let g = [gt.u[i] as f64, gt.v[i] as f64];
        let (du, dv) = (p[0] - g[0], p[1] - g[1]);
        let e = du.hypot(dv);
        epe += e;
        ae += angular_error(p, g);
        l1 += du.abs() + dv.abs();
        for (o, &n) in outliers.iter_mut().zip(n_list) {
            *o += (e > n as f64) as usize;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Evaluation("no valid pixels to evaluate".into()));
    }
    let n = count as f64;
    let npe = n_list.iter().zip(outliers).map(|(&k, o)| (k, 100.0 * o as f64 / n)).collect();
    Ok(FlowMetrics { epe: epe / n, ae: ae / n, npe, l1: l1 / n, valid_count: count })
}
