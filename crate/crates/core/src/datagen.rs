//! Seeded generators for the synthetic benchmark systems.
//!
//! Every column draws its innovations from its own ChaCha20 stream: the
//! generator is seeded with `seed` and column `j` (0-based) uses stream `j`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use nalgebra::DMatrix;

use crate::error::{OfterError, Result};
use crate::frame::{TimeIndex, TimePanel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    M1,
    M2,
    M3,
    Toy,
}

impl std::str::FromStr for Model {
    type Err = OfterError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "m1" => Ok(Model::M1),
            "m2" => Ok(Model::M2),
            "m3" => Ok(Model::M3),
            "toy" => Ok(Model::Toy),
            other => Err(OfterError::invalid(format!(
                "unknown model '{other}' (expected m1, m2, m3 or toy)"
            ))),
        }
    }
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Model::M1 => "m1",
            Model::M2 => "m2",
            Model::M3 => "m3",
            Model::Toy => "toy",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub model: Model,
    pub t_len: usize,
    /// Innovation standard deviation. Required for `Toy`; defaults to 1 for the
    /// five-dimensional systems.
    pub sigma: Option<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(model: Model, t_len: usize, seed: u64) -> Self {
        SyntheticSpec {
            model,
            t_len,
            sigma: None,
            seed,
        }
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }

    fn validate(&self) -> Result<f64> {
        if self.t_len < 10 {
            return Err(OfterError::invalid(format!(
                "series length must be at least 10, got {}",
                self.t_len
            )));
        }
        let sigma = match (self.model, self.sigma) {
            (Model::Toy, None) => {
                return Err(OfterError::invalid("the toy model needs an explicit sigma"))
            }
            (_, s) => s.unwrap_or(1.0),
        };
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(OfterError::invalid(format!("sigma must be non-negative, got {sigma}")));
        }
        Ok(sigma)
    }
}

/// Innovation stream for one column.
fn column_stream(seed: u64, column: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(column);
    rng
}

/// `3.4 x (1 - e^{-x^2}) e^{-x^2}`, bounded by about 0.78 in absolute value.
pub fn bump(x: f64) -> f64 {
    let g = (-x * x).exp();
    3.4 * x * (1.0 - g) * g
}

pub fn generate(spec: &SyntheticSpec) -> Result<TimePanel> {
    let sigma = spec.validate()?;
    let n = spec.t_len;
    let dims = if spec.model == Model::Toy { 1 } else { 5 };
    let mut streams: Vec<ChaCha20Rng> = (0..dims as u64)
        .map(|j| column_stream(spec.seed, j))
        .collect();
    let mut eps = |j: usize| -> f64 {
        let z: f64 = StandardNormal.sample(&mut streams[j]);
        sigma * z
    };

    let mut y = DMatrix::<f64>::zeros(n, dims);
    match spec.model {
        Model::Toy => {
            for t in 0..n {
                let tt = (t + 1) as f64;
                y[(t, 0)] = 0.5 + (std::f64::consts::PI * tt / 64.0).cos() + eps(0);
            }
        }
        Model::M1 => {
            for t in 1..n {
                let (a, b) = (y[(t - 1, 0)], y[(t - 1, 1)]);
                y[(t, 0)] = 0.2 * a - 0.4 * b + eps(0);
                y[(t, 1)] = -0.5 * a + 0.15 * b + eps(1);
                y[(t, 2)] = -0.14 * b + eps(2);
                y[(t, 3)] = 0.5 * a - 0.25 * b + eps(3);
                y[(t, 4)] = 0.15 * a + eps(4);
            }
        }
        Model::M2 => {
            for t in 1..n {
                let (a, b, c) = (y[(t - 1, 0)], y[(t - 1, 1)], y[(t - 1, 2)]);
                y[(t, 0)] = bump(a) + eps(0);
                y[(t, 1)] = bump(b) + 0.5 * a * b + eps(1);
                y[(t, 2)] = bump(c) + 0.3 * b + 0.5 * a * a + eps(2);
                y[(t, 3)] = 0.5 * a - 0.25 * b + eps(3);
                y[(t, 4)] = 0.15 * a + eps(4);
            }
        }
        Model::M3 => {
            for t in 3..n {
                let a1 = y[(t - 1, 0)];
                let a2 = y[(t - 2, 0)];
                let (a3, b3) = (y[(t - 3, 0)], y[(t - 3, 1)]);
                y[(t, 0)] = 0.1 * a1 - 0.6 * b3 + eps(0);
                y[(t, 1)] = -0.15 * a3 + 0.8 * b3 + eps(1);
                y[(t, 2)] = -0.45 * b3 + eps(2);
                y[(t, 3)] = 0.45 * a3 - 0.85 * b3 + eps(3);
                y[(t, 4)] = 0.95 * a2 + eps(4);
            }
        }
    }
    let columns = if dims == 1 {
        vec!["y".to_string()]
    } else {
        (1..=dims).map(|j| format!("y{j}")).collect()
    };
    let index = TimeIndex::Ticks((1..=n as i64).collect());
    TimePanel::new(y, columns, index)
}
