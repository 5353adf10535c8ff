//! Independent endpoint-by-endpoint recomputation of the quantizer and the
//! three query geometries, written directly from the formulas without going
//! through the library's quantizer code.

#![allow(dead_code)]

use std::f64::consts::SQRT_2;

use caqzo::{CompanderFamily, DirectionBatch};

pub const TAIL: f64 = 4.0;

#[derive(Debug, Clone, Copy)]
pub struct RefCompander {
    pub family: CompanderFamily,
    pub strength: f64,
    pub alpha: f64,
}

fn cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t / SQRT_2)
}

fn pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal quantile by bisection followed by Newton polishing.
fn quantile(p: f64) -> f64 {
    if p > 0.5 {
        return -quantile(1.0 - p);
    }
    let (mut lo, mut hi) = (-10.0f64, 10.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..2 {
        t -= (cdf(t) - p) / pdf(t);
    }
    t
}

impl RefCompander {
    pub fn bound(&self) -> f64 {
        match self.family {
            CompanderFamily::GaussianQuantile => TAIL * self.alpha / self.strength,
            _ => self.alpha,
        }
    }

    pub fn z_range(&self) -> (f64, f64) {
        match self.family {
            CompanderFamily::GaussianQuantile => (cdf(-TAIL), cdf(TAIL)),
            _ => (-1.0, 1.0),
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        let b = self.bound();
        let x = x.clamp(-b, b);
        let a = self.alpha;
        match self.family {
            CompanderFamily::Identity => x / a,
            CompanderFamily::MuLaw => {
                let c = self.strength;
                x.signum() * (1.0 + c * x.abs() / a).ln() / (1.0 + c).ln()
            }
            CompanderFamily::ALaw => {
                let big_a = self.strength;
                let r = x.abs() / a;
                let m = if r < 1.0 / big_a {
                    big_a * r / (1.0 + big_a.ln())
                } else {
                    (1.0 + (big_a * r).ln()) / (1.0 + big_a.ln())
                };
                x.signum() * m
            }
            CompanderFamily::GaussianQuantile => cdf(x * self.strength / a),
        }
    }

    pub fn phi_inv(&self, z: f64) -> f64 {
        let a = self.alpha;
        let x = match self.family {
            CompanderFamily::Identity => a * z,
            CompanderFamily::MuLaw => {
                let c = self.strength;
                z.signum() * a * ((1.0 + c).powf(z.abs()) - 1.0) / c
            }
            CompanderFamily::ALaw => {
                let big_a = self.strength;
                let t = z.abs() * (1.0 + big_a.ln());
                let r = if t < 1.0 {
                    t / big_a
                } else {
                    (t - 1.0).exp() / big_a
                };
                z.signum() * a * r
            }
            CompanderFamily::GaussianQuantile => a / self.strength * quantile(z),
        };
        let b = self.bound();
        x.clamp(-b, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RefGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: u32,
}

impl RefGrid {
    pub fn delta(&self) -> f64 {
        (self.hi - self.lo) / f64::from(self.n - 1)
    }

    pub fn value(&self, i: u32) -> f64 {
        if i == self.n - 1 {
            self.hi
        } else {
            self.lo + f64::from(i) * self.delta()
        }
    }

    pub fn round(&self, z: f64) -> u32 {
        let t = ((z - self.lo) / self.delta()).round_ties_even();
        t.clamp(0.0, f64::from(self.n - 1)) as u32
    }
}

/// Per-coordinate compander with block max-abs scales.
pub struct RefQuantizer {
    pub comps: Vec<RefCompander>,
    pub grid: RefGrid,
}

impl RefQuantizer {
    pub fn new(family: CompanderFamily, strength: f64, bits: u32, x: &[f64], block: usize) -> Self {
        let comps = x
            .chunks(block)
            .flat_map(|c| {
                let a = c.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-8);
                std::iter::repeat_n(
                    RefCompander {
                        family,
                        strength,
                        alpha: a,
                    },
                    c.len(),
                )
            })
            .collect::<Vec<_>>();
        let (lo, hi) = comps[0].z_range();
        RefQuantizer {
            comps,
            grid: RefGrid {
                lo,
                hi,
                n: 1 << bits,
            },
        }
    }

    pub fn index(&self, j: usize, x: f64) -> u32 {
        self.grid.round(self.comps[j].phi(x))
    }

    pub fn expand(&self, j: usize, i: u32) -> f64 {
        self.comps[j].phi_inv(self.grid.value(i))
    }
}

pub fn rosenbrock(x: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..x.len() - 1 {
        s += 100.0 * (x[i + 1] - x[i] * x[i]).powi(2) + (1.0 - x[i]).powi(2);
    }
    s
}

pub fn with_noise(f: impl Fn(&[f64]) -> f64, noise: Option<&[f64]>) -> impl Fn(&[f64]) -> f64 {
    let g = noise.map(|n| n.to_vec());
    move |x| {
        let base = f(x);
        match &g {
            Some(g) => base + g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>(),
            None => base,
        }
    }
}

fn average(losses: &[(f64, f64)], radius: f64, dirs: &DirectionBatch) -> Vec<f64> {
    let mut out = vec![0.0; dirs.d];
    for (k, (lp, lm)) in losses.iter().enumerate() {
        let q = (lp - lm) / (2.0 * radius);
        for (o, u) in out.iter_mut().zip(dirs.row(k)) {
            *o += q * u;
        }
    }
    out.iter_mut().for_each(|o| *o /= dirs.k as f64);
    out
}

pub fn ref_weight_space(
    f: &dyn Fn(&[f64]) -> f64,
    q: &RefQuantizer,
    x: &[f64],
    mu: f64,
    dirs: &DirectionBatch,
) -> Vec<f64> {
    let losses: Vec<(f64, f64)> = (0..dirs.k)
        .map(|k| {
            let end = |s: f64| -> Vec<f64> {
                (0..x.len())
                    .map(|j| q.expand(j, q.index(j, x[j] + s * mu * dirs.row(k)[j])))
                    .collect()
            };
            (f(&end(1.0)), f(&end(-1.0)))
        })
        .collect();
    average(&losses, mu, dirs)
}

pub fn ref_offgrid(
    f: &dyn Fn(&[f64]) -> f64,
    q: &RefQuantizer,
    x: &[f64],
    mu: f64,
    dirs: &DirectionBatch,
) -> Vec<f64> {
    let z: Vec<f64> = (0..x.len()).map(|j| q.comps[j].phi(x[j])).collect();
    let losses: Vec<(f64, f64)> = (0..dirs.k)
        .map(|k| {
            let end = |s: f64| -> Vec<f64> {
                (0..x.len())
                    .map(|j| q.expand(j, q.grid.round(z[j] + s * mu * dirs.row(k)[j])))
                    .collect()
            };
            (f(&end(1.0)), f(&end(-1.0)))
        })
        .collect();
    average(&losses, mu, dirs)
}

pub fn ref_caq(
    f: &dyn Fn(&[f64]) -> f64,
    q: &RefQuantizer,
    idx: &[u32],
    dirs: &DirectionBatch,
) -> Vec<f64> {
    let n = q.grid.n;
    let centers: Vec<u32> = idx.iter().map(|&i| i.clamp(1, n - 2)).collect();
    let losses: Vec<(f64, f64)> = (0..dirs.k)
        .map(|k| {
            let end = |s: f64| -> Vec<f64> {
                (0..idx.len())
                    .map(|j| {
                        let step = s * dirs.row(k)[j];
                        let i = if step > 0.0 {
                            centers[j] + 1
                        } else {
                            centers[j] - 1
                        };
                        q.expand(j, i)
                    })
                    .collect()
            };
            (f(&end(1.0)), f(&end(-1.0)))
        })
        .collect();
    average(&losses, q.grid.delta(), dirs)
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
