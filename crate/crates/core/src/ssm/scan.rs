use std::ops::Range;

use rayon::prelude::*;

use super::{DiscreteSsm, Transition};
use crate::error::{Error, Result};
use crate::tensor::{ensure_finite, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScanMode {
    #[default]
    Sequential,
    /// Blocked two-pass scan: per-block aggregates of the affine step maps,
    /// a short carry pass over blocks, then per-block replay from the carry.
    Parallel,
}

/// Block boundaries depend only on the sequence length.
fn blocks(len: usize) -> Vec<Range<usize>> {
    let size = ((len as f64).sqrt().ceil() as usize).max(1);
    (0..len).step_by(size).map(|s| s..(s + size).min(len)).collect()
}

/// Runs `x_{k+1} = Ā x_k + B̄ z_k`, `y_k = C x_k + D z_k` over `z` (`L×U`
/// row-major) from `x0`, returning `y` (`L×M`). The output at step `k`
/// reads the state before that step's update.
pub fn lti_scan<T: Real>(d: &DiscreteSsm<T>, z: &[T], x0: &[T], mode: ScanMode) -> Result<Vec<T>> {
    let (n, u, m) = (d.state_dim(), d.in_dim, d.out_dim);
    if u == 0 || z.is_empty() || !z.len().is_multiple_of(u) {
        return Err(Error::shape(format!("input of {} values is not a non-empty multiple of {u}", z.len())));
    }
    if x0.len() != n {
        return Err(Error::shape(format!("initial state has {} entries, want {n}", x0.len())));
    }
    ensure_finite(z, "lti_scan input")?;
    let len = z.len() / u;

    // b_k = B̄ z_k
    let mut drive = vec![T::zero(); len * n];
    for k in 0..len {
        let zk = &z[k * u..(k + 1) * u];
        for i in 0..n {
            drive[k * n + i] = d.b_bar[i * u..(i + 1) * u].iter().zip(zk).map(|(b, z)| *b * *z).sum();
        }
    }

    // pre-update states x_0..x_{L-1}
    let states = match mode {
        ScanMode::Sequential => {
            let mut states = Vec::with_capacity(len * n);
            let mut x = x0.to_vec();
            let mut next = vec![T::zero(); n];
            for k in 0..len {
                states.extend_from_slice(&x);
                d.a_bar.apply(&x, &mut next);
                for i in 0..n {
                    x[i] = next[i] + drive[k * n + i];
                }
            }
            states
        }
        ScanMode::Parallel => {
            let inclusive = match &d.a_bar {
                Transition::Diagonal(a) => blocked_diagonal(n, len, |_| a.as_slice(), &drive, x0),
                Transition::Dense(a) => blocked_dense(n, len, a, &drive, x0),
            };
            let mut states = Vec::with_capacity(len * n);
            states.extend_from_slice(x0);
            states.extend_from_slice(&inclusive[..(len - 1) * n]);
            states
        }
    };

    let mut y = vec![T::zero(); len * m];
    for k in 0..len {
        let x = &states[k * n..(k + 1) * n];
        let zk = &z[k * u..(k + 1) * u];
        for o in 0..m {
            let mut acc: T = d.c[o * n..(o + 1) * n].iter().zip(x).map(|(c, x)| *c * *x).sum();
            if let Some(dd) = &d.d {
                acc += dd[o * u..(o + 1) * u].iter().zip(zk).map(|(d, z)| *d * *z).sum::<T>();
            }
            y[k * m + o] = acc;
        }
    }
    ensure_finite(&y, "lti_scan")?;
    Ok(y)
}

/// Time-varying diagonal recurrence `h_k = a_k ⊙ h_{k-1} + b_k` with
/// `a`, `b` both `L×N`; returns all post-update states `h_0..h_{L-1}`.
pub fn scan_diagonal<T: Real>(a: &[T], b: &[T], h0: &[T], mode: ScanMode) -> Vec<T> {
    let n = h0.len();
    assert_eq!(a.len(), b.len());
    if n == 0 {
        return Vec::new();
    }
    let len = a.len() / n;
    match mode {
        ScanMode::Sequential => {
            let mut out = Vec::with_capacity(len * n);
            let mut h = h0.to_vec();
            for k in 0..len {
                for i in 0..n {
                    h[i] = a[k * n + i] * h[i] + b[k * n + i];
                }
                out.extend_from_slice(&h);
            }
            out
        }
        ScanMode::Parallel => blocked_diagonal(n, len, |k| &a[k * n..(k + 1) * n], b, h0),
    }
}

fn blocked_diagonal<'a, T: Real>(
    n: usize,
    len: usize,
    a_at: impl Fn(usize) -> &'a [T] + Sync,
    b: &[T],
    h0: &[T],
) -> Vec<T> {
    let ranges = blocks(len);
    // upsweep: fold (P, q) ∘ (a_k, b_k) = (a_k ⊙ P, a_k ⊙ q + b_k)
    let aggregates: Vec<(Vec<T>, Vec<T>)> = ranges
        .par_iter()
        .map(|r| {
            let mut p = vec![T::one(); n];
            let mut q = vec![T::zero(); n];
            for k in r.clone() {
                let ak = a_at(k);
                for i in 0..n {
                    p[i] = ak[i] * p[i];
                    q[i] = ak[i] * q[i] + b[k * n + i];
                }
            }
            (p, q)
        })
        .collect();
    let mut carries = Vec::with_capacity(ranges.len());
    let mut carry = h0.to_vec();
    for (p, q) in &aggregates {
        carries.push(carry.clone());
        for i in 0..n {
            carry[i] = p[i] * carry[i] + q[i];
        }
    }
    let pieces: Vec<Vec<T>> = ranges
        .par_iter()
        .zip(carries.par_iter())
        .map(|(r, c)| {
            let mut h = c.clone();
            let mut out = Vec::with_capacity(r.len() * n);
            for k in r.clone() {
                let ak = a_at(k);
                for i in 0..n {
                    h[i] = ak[i] * h[i] + b[k * n + i];
                }
                out.extend_from_slice(&h);
            }
            out
        })
        .collect();
    pieces.concat()
}

fn matmul_square<T: Real>(n: usize, lhs: &[T], rhs: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); n * n];
    T::gemm(n, n, n, T::one(), lhs, (n, 1), rhs, (n, 1), T::zero(), &mut out, (n, 1));
    out
}

fn matvec<T: Real>(n: usize, a: &[T], x: &[T], out: &mut [T]) {
    for i in 0..n {
        out[i] = a[i * n..(i + 1) * n].iter().zip(x).map(|(a, x)| *a * *x).sum();
    }
}

fn blocked_dense<T: Real>(n: usize, len: usize, a: &[T], b: &[T], h0: &[T]) -> Vec<T> {
    let ranges = blocks(len);
    let aggregates: Vec<(Vec<T>, Vec<T>)> = ranges
        .par_iter()
        .map(|r| {
            let mut p: Vec<T> = (0..n * n).map(|i| if i % (n + 1) == 0 { T::one() } else { T::zero() }).collect();
            let mut q = vec![T::zero(); n];
            let mut tmp = vec![T::zero(); n];
            for k in r.clone() {
                p = matmul_square(n, a, &p);
                matvec(n, a, &q, &mut tmp);
                for i in 0..n {
                    q[i] = tmp[i] + b[k * n + i];
                }
            }
            (p, q)
        })
        .collect();
    let mut carries = Vec::with_capacity(ranges.len());
    let mut carry = h0.to_vec();
    let mut tmp = vec![T::zero(); n];
    for (p, q) in &aggregates {
        carries.push(carry.clone());
        matvec(n, p, &carry, &mut tmp);
        for i in 0..n {
            carry[i] = tmp[i] + q[i];
        }
    }
    let pieces: Vec<Vec<T>> = ranges
        .par_iter()
        .zip(carries.par_iter())
        .map(|(r, c)| {
            let mut h = c.clone();
            let mut tmp = vec![T::zero(); n];
            let mut out = Vec::with_capacity(r.len() * n);
            for k in r.clone() {
                matvec(n, a, &h, &mut tmp);
                for i in 0..n {
                    h[i] = tmp[i] + b[k * n + i];
                }
                out.extend_from_slice(&h);
            }
            out
        })
        .collect();
    pieces.concat()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::{zoh_discretize, Flavor, SsmParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar_system() -> DiscreteSsm<f64> {
        DiscreteSsm {
            a_bar: Transition::Diagonal(vec![0.5]),
            b_bar: vec![1.0],
            c: vec![1.0],
            d: Some(vec![0.0]),
            in_dim: 1,
            out_dim: 1,
            series_fallback: false,
        }
    }

    #[test]
    fn hand_executed_recurrence() {
        let d = scalar_system();
        for mode in [ScanMode::Sequential, ScanMode::Parallel] {
            assert_eq!(lti_scan(&d, &[1.0, 1.0, 1.0], &[0.0], mode).unwrap(), vec![0.0, 1.0, 1.5]);
            assert_eq!(lti_scan(&d, &[0.0; 5], &[0.0], mode).unwrap(), vec![0.0; 5]);
        }
    }

    #[test]
    fn rejects_nan_and_bad_shapes() {
        let d = scalar_system();
        assert!(matches!(lti_scan(&d, &[1.0, f64::NAN], &[0.0], ScanMode::Sequential), Err(Error::Numeric(_))));
        assert!(lti_scan(&d, &[], &[0.0], ScanMode::Sequential).is_err());
        assert!(lti_scan(&d, &[1.0], &[0.0, 0.0], ScanMode::Sequential).is_err());
    }

    #[test]
    fn dense_parallel_matches_sequential() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (n, u, m) = (5, 3, 2);
        let mut a: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-0.3..0.3)).collect();
        for i in 0..n {
            a[i * n + i] -= 1.5;
        }
        let p = SsmParams {
            flavor: Flavor::Mimo,
            a: Transition::Dense(a),
            b: (0..n * u).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            c: (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            d: Some((0..m * u).map(|_| rng.gen_range(-1.0..1.0)).collect()),
            delta: 0.2,
            in_dim: u,
            out_dim: m,
        };
        let d = zoh_discretize(&p).unwrap();
        let z: Vec<f64> = (0..97 * u).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = lti_scan(&d, &z, &x0, ScanMode::Sequential).unwrap();
        let q = lti_scan(&d, &z, &x0, ScanMode::Parallel).unwrap();
        for (a, b) in s.iter().zip(&q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn block_partition_covers_sequence() {
        for len in 1..200 {
            let b = blocks(len);
            assert_eq!(b.first().unwrap().start, 0);
            assert_eq!(b.last().unwrap().end, len);
            assert!(b.windows(2).all(|w| w[0].end == w[1].start));
        }
    }
}
