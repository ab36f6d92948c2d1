//! State-space sequence kernels.
//!
//! Continuous systems `dx/dt = A x + B z, y = C x + D z` are discretized
//! with zero-order hold and run as recurrences, either one step at a time
//! or as a blocked two-pass scan over the associative composition of the
//! per-step affine maps.

mod scan;
mod selective;

pub use scan::{lti_scan, scan_diagonal, ScanMode};
pub use selective::{mamba_unit, selective_scan, MambaWeights, SelectiveWeights};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flavor {
    /// One input, one output, diagonal `A`.
    DiagonalSiso,
    /// Shared dense state across all input/output channels.
    Mimo,
}

/// State transition, either a diagonal or a dense row-major `N×N` matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum Transition<T> {
    Diagonal(Vec<T>),
    Dense(Vec<T>),
}

impl<T: Real> Transition<T> {
    pub fn state_dim(&self) -> usize {
        match self {
            Transition::Diagonal(a) => a.len(),
            Transition::Dense(a) => (a.len() as f64).sqrt().round() as usize,
        }
    }

    /// `out = self · x`
    pub(crate) fn apply(&self, x: &[T], out: &mut [T]) {
        match self {
            Transition::Diagonal(a) => {
                for ((o, a), x) in out.iter_mut().zip(a).zip(x) {
                    *o = *a * *x;
                }
            }
            Transition::Dense(a) => {
                let n = x.len();
                for (i, o) in out.iter_mut().enumerate() {
                    *o = a[i * n..(i + 1) * n].iter().zip(x).map(|(a, x)| *a * *x).sum();
                }
            }
        }
    }

    fn cast<U: Real>(&self) -> Transition<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect();
        match self {
            Transition::Diagonal(a) => Transition::Diagonal(c(a)),
            Transition::Dense(a) => Transition::Dense(c(a)),
        }
    }
}

/// Continuous-time linear system with step size `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams {
    pub flavor: Flavor,
    pub a: Transition<f64>,
    /// `N×U` row-major.
    pub b: Vec<f64>,
    /// `M×N` row-major.
    pub c: Vec<f64>,
    /// `M×U` row-major feedthrough.
    pub d: Option<Vec<f64>>,
    pub delta: f64,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl SsmParams {
    /// Single-channel diagonal system.
    pub fn diagonal_siso(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>, d: f64, delta: f64) -> Self {
        Self { flavor: Flavor::DiagonalSiso, a: Transition::Diagonal(a), b, c, d: Some(vec![d]), delta, in_dim: 1, out_dim: 1 }
    }

    pub fn state_dim(&self) -> usize {
        self.a.state_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        let (u, m) = (self.in_dim, self.out_dim);
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::config(format!("step size must be positive, got {}", self.delta)));
        }
        if let (Flavor::DiagonalSiso, Transition::Dense(_)) | (Flavor::Mimo, Transition::Diagonal(_)) = (self.flavor, &self.a) {
            return Err(Error::config("transition structure does not match flavor"));
        }
        if self.flavor == Flavor::DiagonalSiso && (u != 1 || m != 1) {
            return Err(Error::config("diagonal SISO system needs one input and one output"));
        }
        if let Transition::Dense(a) = &self.a {
            if a.len() != n * n {
                return Err(Error::shape("dense A must be square"));
            }
        }
        if self.b.len() != n * u || self.c.len() != m * n {
            return Err(Error::shape(format!(
                "B has {} (want {}), C has {} (want {})",
                self.b.len(),
                n * u,
                self.c.len(),
                m * n
            )));
        }
        if let Some(d) = &self.d {
            if d.len() != m * u {
                return Err(Error::shape(format!("D has {} entries, want {}", d.len(), m * u)));
            }
        }
        Ok(())
    }
}

/// Discretized system: `x_{k+1} = Ā x_k + B̄ z_k`, `y_k = C x_k + D z_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSsm<T = f64> {
    pub a_bar: Transition<T>,
    pub b_bar: Vec<T>,
    pub c: Vec<T>,
    pub d: Option<Vec<T>>,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Set when `A` was singular and `B̄` came from the power series.
    pub series_fallback: bool,
}

impl<T: Real> DiscreteSsm<T> {
    pub fn state_dim(&self) -> usize {
        self.a_bar.state_dim()
    }

    pub fn cast<U: Real>(&self) -> DiscreteSsm<U> {
        let c = |v: &Vec<T>| v.iter().map(|x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect::<Vec<U>>();
        DiscreteSsm {
            a_bar: self.a_bar.cast(),
            b_bar: c(&self.b_bar),
            c: c(&self.c),
            d: self.d.as_ref().map(c),
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            series_fallback: self.series_fallback,
        }
    }
}

const SERIES_TERMS: usize = 30;

/// Zero-order hold: `Ā = exp(ΔA)`, `B̄ = A⁻¹(exp(ΔA) − I)B`.
///
/// Diagonal systems use the elementwise closed form (with `expm1` for
/// accuracy near zero). Dense systems use a scaling-and-squaring matrix
/// exponential and an LU solve; if `A` is singular, `B̄` falls back to
/// `Δ Σ_k (ΔA)^k/(k+1)! B`.
pub fn zoh_discretize(p: &SsmParams) -> Result<DiscreteSsm<f64>> {
    p.validate()?;
    let n = p.state_dim();
    let u = p.in_dim;
    let dt = p.delta;
    let (a_bar, b_bar, series_fallback) = match &p.a {
        Transition::Diagonal(a) => {
            let mut b_bar = vec![0.0; n * u];
            let mut fallback = false;
            for (j, &aj) in a.iter().enumerate() {
                let factor = if aj == 0.0 {
                    fallback = true;
                    dt
                } else {
                    (dt * aj).exp_m1() / aj
                };
                for col in 0..u {
                    b_bar[j * u + col] = factor * p.b[j * u + col];
                }
            }
            (Transition::Diagonal(a.iter().map(|&aj| (dt * aj).exp()).collect()), b_bar, fallback)
        }
        Transition::Dense(a) => {
            let a = DMatrix::from_row_slice(n, n, a);
            let b = DMatrix::from_row_slice(n, u, &p.b);
            let a_bar = (&a * dt).exp();
            let rhs = (&a_bar - DMatrix::identity(n, n)) * &b;
            let lu = a.clone().lu();
            let exact = if lu.is_invertible() { lu.solve(&rhs).filter(|x| x.iter().all(|v| v.is_finite())) } else { None };
            let (b_bar, fallback) = match exact {
                Some(x) => (x, false),
                None => (phi1_series(&a, dt) * &b, true),
            };
            (Transition::Dense(row_major(&a_bar)), row_major(&b_bar), fallback)
        }
    };
    for v in b_bar.iter() {
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite discretized input matrix".into()));
        }
    }
    Ok(DiscreteSsm { a_bar, b_bar, c: p.c.clone(), d: p.d.clone(), in_dim: p.in_dim, out_dim: p.out_dim, series_fallback })
}

/// `Δ Σ_{k≥0} (ΔA)^k / (k+1)!`
fn phi1_series(a: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let scaled = a * dt;
    let mut term = DMatrix::identity(n, n);
    let mut sum = term.clone();
    for k in 1..SERIES_TERMS {
        term = &term * &scaled / (k as f64 + 1.0);
        sum += &term;
    }
    sum * dt
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Per-token selective discretization: exact `exp(Δa)` for the diagonal
/// transition, Euler `Δ·B` for the input.
#[inline]
pub fn discretize_selective<T: Real>(delta: T, a: T, b: T) -> (T, T) {
    ((delta * a).exp(), delta * b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_closed_form() {
        let p = SsmParams::diagonal_siso(vec![-1.0], vec![1.0], vec![1.0], 0.0, std::f64::consts::LN_2);
        let d = zoh_discretize(&p).unwrap();
        let Transition::Diagonal(a) = &d.a_bar else { panic!() };
        assert!((a[0] - 0.5).abs() < 1e-12);
        assert!((d.b_bar[0] - 0.5).abs() < 1e-12);
        assert!(!d.series_fallback);
    }

    #[test]
    fn zero_dynamics_limit() {
        let p = SsmParams::diagonal_siso(vec![0.0], vec![1.0], vec![1.0], 0.0, 0.1);
        let d = zoh_discretize(&p).unwrap();
        assert_eq!(d.a_bar, Transition::Diagonal(vec![1.0]));
        assert!((d.b_bar[0] - 0.1).abs() < 1e-9);

        let dense = SsmParams {
            flavor: Flavor::Mimo,
            a: Transition::Dense(vec![0.0]),
            b: vec![1.0],
            c: vec![1.0],
            d: None,
            delta: 0.1,
            in_dim: 1,
            out_dim: 1,
        };
        let d = zoh_discretize(&dense).unwrap();
        assert!(d.series_fallback);
        let Transition::Dense(a) = &d.a_bar else { panic!() };
        assert!((a[0] - 1.0).abs() < 1e-12);
        assert!((d.b_bar[0] - 0.1).abs() < 1e-9);
    }

    #[test]
    fn dense_matches_diagonal_on_diagonal_input() {
        let diag = vec![-0.5, -1.5, -3.0];
        let b = vec![1.0, -2.0, 0.5];
        let c = vec![1.0, 1.0, 1.0];
        let p = SsmParams::diagonal_siso(diag.clone(), b.clone(), c.clone(), 0.0, 0.3);
        let mut dense = vec![0.0; 9];
        for i in 0..3 {
            dense[i * 3 + i] = diag[i];
        }
        let q = SsmParams { flavor: Flavor::Mimo, a: Transition::Dense(dense), d: None, ..p.clone() };
        let dp = zoh_discretize(&p).unwrap();
        let dq = zoh_discretize(&q).unwrap();
        let (Transition::Diagonal(ad), Transition::Dense(aq)) = (&dp.a_bar, &dq.a_bar) else { panic!() };
        for i in 0..3 {
            assert!((ad[i] - aq[i * 3 + i]).abs() < 1e-12);
            assert!((dp.b_bar[i] - dq.b_bar[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn semigroup_property() {
        let a = vec![-0.3, -1.0, -4.0];
        let b = vec![0.7, -1.1, 2.0];
        let delta = 0.17;
        let one = zoh_discretize(&SsmParams::diagonal_siso(a.clone(), b.clone(), vec![1.0; 3], 0.0, delta)).unwrap();
        let two = zoh_discretize(&SsmParams::diagonal_siso(a, b, vec![1.0; 3], 0.0, 2.0 * delta)).unwrap();
        let (Transition::Diagonal(a1), Transition::Diagonal(a2)) = (&one.a_bar, &two.a_bar) else { panic!() };
        for j in 0..3 {
            // two steps of size Δ with constant input: x = Ā(Āx + B̄) + B̄
            assert!((a1[j] * a1[j] - a2[j]).abs() < 1e-6);
            assert!((a1[j] * one.b_bar[j] + one.b_bar[j] - two.b_bar[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = SsmParams::diagonal_siso(vec![-1.0], vec![1.0], vec![1.0], 0.0, 0.0);
        assert!(zoh_discretize(&p).is_err());
        p.delta = 0.1;
        p.b = vec![1.0, 2.0];
        assert!(matches!(zoh_discretize(&p), Err(Error::Shape(_))));
    }
}
