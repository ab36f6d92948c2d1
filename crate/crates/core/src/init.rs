//! Named parameter layouts and their deterministic initialization.

use rand::Rng;

use crate::tensor::Tensor;

pub const DT_MIN: f64 = 1e-3;
pub const DT_MAX: f64 = 1e-1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitRule {
    Zeros,
    Ones,
    /// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
    Xavier { fan_in: usize, fan_out: usize },
    /// Each row `ln(1..=N)`, i.e. `A = -(1..=N)`.
    ALogRange,
    /// `-diag(1..=N)` as a dense matrix.
    NegDiagonal,
    /// Bias whose softplus is log-uniform in `[DT_MIN, DT_MAX]`.
    DeltaBias,
    /// Log of a log-uniform step in `[DT_MIN, DT_MAX]`.
    LogDelta,
}

impl InitRule {
    pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }

    pub fn sample(self, shape: &[usize], rng: &mut impl Rng) -> Tensor<f32> {
        let n: usize = shape.iter().product();
        let log_uniform_dt = |rng: &mut dyn rand::RngCore| {
            let (lo, hi) = (DT_MIN.ln(), DT_MAX.ln());
            (lo + (hi - lo) * rng.gen::<f64>()).exp()
        };
        let data: Vec<f32> = match self {
            InitRule::Zeros => vec![0.0; n],
            InitRule::Ones => vec![1.0; n],
            InitRule::Xavier { fan_in, fan_out } => {
                let bound = Self::xavier_bound(fan_in, fan_out) as f32;
                (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
            }
            InitRule::ALogRange => {
                let cols = *shape.last().unwrap();
                (0..n).map(|i| (((i % cols) + 1) as f32).ln()).collect()
            }
            InitRule::NegDiagonal => {
                let cols = *shape.last().unwrap();
                (0..n).map(|i| if i / cols == i % cols { -((i % cols) as f32 + 1.0) } else { 0.0 }).collect()
            }
            InitRule::DeltaBias => (0..n)
                .map(|_| {
                    let dt = log_uniform_dt(rng);
                    // inverse softplus
                    (dt + (-(-dt).exp_m1()).ln()) as f32
                })
                .collect(),
            InitRule::LogDelta => (0..n).map(|_| log_uniform_dt(rng).ln() as f32).collect(),
        };
        Tensor::new(shape.to_vec(), data).expect("init shape")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub rule: InitRule,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: impl Into<Vec<usize>>, rule: InitRule) -> Self {
        Self { name: name.into(), shape: shape.into(), rule }
    }

    /// Dense `[out, in]` weight.
    pub fn weight(name: impl Into<String>, out: usize, inp: usize) -> Self {
        Self::new(name, vec![out, inp], InitRule::Xavier { fan_in: inp, fan_out: out })
    }

    pub fn zeros(name: impl Into<String>, shape: impl Into<Vec<usize>>) -> Self {
        Self::new(name, shape, InitRule::Zeros)
    }

    pub fn ones(name: impl Into<String>, shape: impl Into<Vec<usize>>) -> Self {
        Self::new(name, shape, InitRule::Ones)
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}
