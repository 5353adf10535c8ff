//! Synthetic objectives and the shared-sample stochastic oracle.

use std::f64::consts::{E, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{finite, Error, Result};
use crate::streams::{keyed, mix, NOISE_TAG};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Quadratic,
    Levy,
    Rosenbrock,
    Ackley,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Quadratic => "quadratic",
            Objective::Levy => "levy",
            Objective::Rosenbrock => "rosenbrock",
            Objective::Ackley => "ackley",
        }
    }

    pub fn all() -> [Objective; 4] {
        [
            Objective::Quadratic,
            Objective::Levy,
            Objective::Rosenbrock,
            Objective::Ackley,
        ]
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::all()
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub name: Objective,
    pub dim: usize,
}

// Levy: w = 1 + (x - 1) / 4.
#[inline]
fn levy_w(x: f64) -> f64 {
    1.0 + (x - 1.0) / 4.0
}

impl ObjectiveSpec {
    pub fn new(name: Objective, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config(
                "objective dimension must be at least 1".into(),
            ));
        }
        Ok(ObjectiveSpec { name, dim })
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// A point where the objective attains its minimum value 0.
    pub fn minimizer(&self) -> Vec<f64> {
        match self.name {
            Objective::Quadratic | Objective::Ackley => vec![0.0; self.dim],
            Objective::Levy | Objective::Rosenbrock => vec![1.0; self.dim],
        }
    }

    /// Known global minimum value (0 for every objective in the suite).
    pub fn min_value(&self) -> f64 {
        0.0
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let d = self.dim;
        let value = match self.name {
            Objective::Quadratic => 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            Objective::Levy => {
                let w1 = levy_w(x[0]);
                let wd = levy_w(x[d - 1]);
                let head = (PI * w1).sin().powi(2);
                let body: f64 = x[..d - 1]
                    .iter()
                    .map(|&xi| {
                        let w = levy_w(xi);
                        (w - 1.0).powi(2) * (1.0 + 10.0 * (PI * w + 1.0).sin().powi(2))
                    })
                    .sum();
                let tail = (wd - 1.0).powi(2) * (1.0 + (2.0 * PI * wd).sin().powi(2));
                head + body + tail
            }
            Objective::Rosenbrock => x
                .windows(2)
                .map(|p| 100.0 * (p[1] - p[0] * p[0]).powi(2) + (1.0 - p[0]).powi(2))
                .sum(),
            Objective::Ackley => {
                let n = d as f64;
                let sq: f64 = x.iter().map(|v| v * v).sum();
                let cs: f64 = x.iter().map(|v| (2.0 * PI * v).cos()).sum();
                -20.0 * (-0.2 * (sq / n).sqrt()).exp() - (cs / n).exp() + 20.0 + E
            }
        };
        Ok(value)
    }

    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let d = self.dim;
        let mut g = vec![0.0; d];
        match self.name {
            Objective::Quadratic => g.copy_from_slice(x),
            Objective::Levy => {
                // derivatives w.r.t. w, scaled by dw/dx = 1/4 at the end
                let w1 = levy_w(x[0]);
                g[0] += PI * (2.0 * PI * w1).sin();
                for (gi, &xi) in g[..d - 1].iter_mut().zip(&x[..d - 1]) {
                    let w = levy_w(xi);
                    let s = PI * w + 1.0;
                    *gi += 2.0 * (w - 1.0) * (1.0 + 10.0 * s.sin().powi(2))
                        + (w - 1.0).powi(2) * 10.0 * PI * (2.0 * s).sin();
                }
                let wd = levy_w(x[d - 1]);
                g[d - 1] += 2.0 * (wd - 1.0) * (1.0 + (2.0 * PI * wd).sin().powi(2))
                    + (wd - 1.0).powi(2) * 2.0 * PI * (4.0 * PI * wd).sin();
                g.iter_mut().for_each(|v| *v *= 0.25);
            }
            Objective::Rosenbrock => {
                for i in 0..d.saturating_sub(1) {
                    let t = x[i + 1] - x[i] * x[i];
                    g[i] += -400.0 * x[i] * t - 2.0 * (1.0 - x[i]);
                    g[i + 1] += 200.0 * t;
                }
            }
            Objective::Ackley => {
                let n = d as f64;
                let sq: f64 = x.iter().map(|v| v * v).sum();
                let cs: f64 = x.iter().map(|v| (2.0 * PI * v).cos()).sum();
                let r = (sq / n).sqrt();
                let radial = if r > 0.0 {
                    4.0 * (-0.2 * r).exp() / (n * r)
                } else {
                    0.0
                };
                let cosine = 2.0 * PI * (cs / n).exp() / n;
                for (gi, &xi) in g.iter_mut().zip(x) {
                    *gi = radial * xi + cosine * (2.0 * PI * xi).sin();
                }
            }
        }
        Ok(g)
    }
}

/// One draw of the oracle randomness, shared by every endpoint of a step.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub index: u64,
    noise: Option<Vec<f64>>,
}

impl Sample {
    /// The noiseless sample.
    pub fn none(index: u64) -> Self {
        Sample { index, noise: None }
    }

    /// Linear-noise coefficients `g(xi)`, if any.
    pub fn noise(&self) -> Option<&[f64]> {
        self.noise.as_deref()
    }
}

/// Something that returns a scalar loss for a weight vector and a sample.
pub trait LossOracle {
    fn dim(&self) -> usize;
    fn loss(&self, x: &[f64], xi: &Sample) -> Result<f64>;
}

impl LossOracle for ObjectiveSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, x: &[f64], _xi: &Sample) -> Result<f64> {
        finite("loss", self.eval(x)?)
    }
}

/// `f(x; xi) = F(x) + <g(xi), x>` with `g(xi)` i.i.d. `N(0, sigma^2 / d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticOracle {
    pub base: ObjectiveSpec,
    pub noise_std: f64,
    pub sample_seed: u64,
}

impl StochasticOracle {
    pub fn new(base: ObjectiveSpec, noise_std: f64, sample_seed: u64) -> Result<Self> {
        if !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(Error::Config(format!(
                "noise std must be non-negative, got {noise_std}"
            )));
        }
        Ok(StochasticOracle {
            base,
            noise_std,
            sample_seed,
        })
    }

    pub fn deterministic(base: ObjectiveSpec) -> Self {
        StochasticOracle {
            base,
            noise_std: 0.0,
            sample_seed: 0,
        }
    }

    /// The sample with the given index; a pure function of `(seed, index)`.
    pub fn sample(&self, index: u64) -> Sample {
        if self.noise_std == 0.0 {
            return Sample::none(index);
        }
        let d = self.base.dim;
        let scale = self.noise_std / (d as f64).sqrt();
        let mut rng = keyed(mix(self.sample_seed, NOISE_TAG), index);
        let g = (0..d)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Sample {
            index,
            noise: Some(g),
        }
    }

    pub fn eval_stochastic(&self, x: &[f64], xi: &Sample) -> Result<f64> {
        let base = self.base.eval(x)?;
        let value = match xi.noise() {
            Some(g) if self.noise_std > 0.0 => {
                base + g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            }
            _ => base,
        };
        finite("stochastic loss", value)
    }

    /// `grad f(x; xi) = grad F(x) + g(xi)`.
    pub fn sample_grad(&self, x: &[f64], xi: &Sample) -> Result<Vec<f64>> {
        let mut g = self.base.grad(x)?;
        if let Some(noise) = xi.noise() {
            g.iter_mut().zip(noise).for_each(|(a, b)| *a += b);
        }
        Ok(g)
    }
}

impl LossOracle for StochasticOracle {
    fn dim(&self) -> usize {
        self.base.dim
    }

    fn loss(&self, x: &[f64], xi: &Sample) -> Result<f64> {
        self.eval_stochastic(x, xi)
    }
}
