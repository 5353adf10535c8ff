//! Optimization loops: the grid-stored strict mode and the FP-master Adam
//! mode shared by every method.

use serde::{Deserialize, Serialize};

use crate::compander::{CompanderFamily, Quantizer, ZState};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_caq, estimate_offgrid_z, estimate_weight_space, norm, sample_directions,
    EstimateResult, Method,
};
use crate::objectives::{LossOracle, ObjectiveSpec, StochasticOracle};
use crate::streams::{direction_seed, start_point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Grid-stored iterate, plain step then projection with `U`.
    StrictAlg1,
    /// Continuous master state updated by clipped Adam.
    FpMasterAdam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub method: Method,
    pub mode: Mode,
    pub eta: f64,
    pub k: usize,
    /// Radius of the weight-space and off-grid stencils.
    pub mu: f64,
    pub steps: usize,
    pub clip_norm: f64,
    pub adam: AdamConfig,
    /// Recalibrate block scales every this many steps; 0 disables.
    pub recalib_period: usize,
    pub block_size: usize,
    pub log_stride: usize,
}

impl OptimizerConfig {
    pub fn new(method: Method, mode: Mode) -> Self {
        OptimizerConfig {
            method,
            mode,
            eta: 0.005,
            k: 4,
            mu: 1e-3,
            steps: 100,
            clip_norm: 1.0,
            adam: AdamConfig::default(),
            recalib_period: 100,
            block_size: 64,
            log_stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.mode == Mode::StrictAlg1 && self.method != Method::Caq {
            return bad(format!(
                "strict_alg1 mode needs method caq, got {}",
                self.method
            ));
        }
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return bad(format!("eta must be non-negative, got {}", self.eta));
        }
        if self.k == 0 {
            return bad("K must be at least 1".into());
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return bad(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            ));
        }
        let a = self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return bad(format!(
                "adam betas must lie in [0, 1), got {} and {}",
                a.beta1, a.beta2
            ));
        }
        if !(a.eps.is_finite() && a.eps > 0.0) {
            return bad(format!("adam eps must be positive, got {}", a.eps));
        }
        if self.block_size == 0 {
            return bad("block_size must be at least 1".into());
        }
        if self.log_stride == 0 {
            return bad("log_stride must be at least 1".into());
        }
        Ok(())
    }
}

/// Objective, noise and quantizer family for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub objective: ObjectiveSpec,
    pub noise_std: f64,
    pub family: CompanderFamily,
    pub strength: f64,
    pub bits: u32,
}

/// Adam moments with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u32,
}

impl Adam {
    pub fn new(config: AdamConfig, d: usize) -> Self {
        Adam {
            config,
            m: vec![0.0; d],
            v: vec![0.0; d],
            t: 0,
        }
    }

    /// Advances the moments with `g` and returns the update `eta * m_hat /
    /// (sqrt(v_hat) + eps)` to subtract.
    pub fn update(&mut self, g: &[f64], eta: f64) -> Vec<f64> {
        let AdamConfig { beta1, beta2, eps } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        g.iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(&gj, (m, v))| {
                *m = beta1 * *m + (1.0 - beta1) * gj;
                *v = beta2 * *v + (1.0 - beta2) * gj * gj;
                eta * (*m / c1) / ((*v / c2).sqrt() + eps)
            })
            .collect()
    }
}

/// Scales `g` down to Euclidean norm `max_norm` if it is longer.
pub fn clip_to_norm(g: &mut [f64], max_norm: f64) {
    let n = norm(g);
    if n > max_norm {
        let s = max_norm / n;
        g.iter_mut().for_each(|v| *v *= s);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrictStep {
    pub next: ZState,
    pub estimate: EstimateResult,
    /// `||z_next - (z - eta g)||^2`.
    pub projection_sq: f64,
    pub clip_events: u64,
}

/// One strict step: CAQ estimate at the stored grid state, plain step in z,
/// projection back onto the grid.
pub fn step_strict_alg1<O: LossOracle + ?Sized>(
    state: &ZState,
    quantizer: &Quantizer,
    oracle: &O,
    eta: f64,
    dirs_seed: u64,
    k: usize,
    xi: &crate::objectives::Sample,
) -> Result<StrictStep> {
    let grid = quantizer.grid;
    let dirs = sample_directions(Method::Caq.directions(), k, state.dim(), dirs_seed)?;
    let estimate = estimate_caq(oracle, quantizer, state, &dirs, xi)?;
    check_estimate(&estimate)?;
    let target: Vec<f64> = state
        .indices
        .iter()
        .zip(&estimate.estimate)
        .map(|(&i, g)| grid.value(i) - eta * g)
        .collect();
    let mut clips = 0u64;
    let next = ZState {
        indices: quantizer.round_z(&target, &mut clips)?,
    };
    let projection_sq = next
        .indices
        .iter()
        .zip(&target)
        .map(|(&i, t)| (grid.value(i) - t).powi(2))
        .sum();
    Ok(StrictStep {
        next,
        estimate,
        projection_sq,
        clip_events: clips,
    })
}

fn check_estimate(e: &EstimateResult) -> Result<()> {
    if let Some(v) = e.estimate.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "gradient estimate",
            value: *v,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub loss_quantized: f64,
    pub loss_master: f64,
    pub est_norm: f64,
    pub clip_events: u64,
    pub boundary_events: u64,
    pub recalibs: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub start_loss: f64,
    pub final_loss: f64,
    pub gap_ratio: f64,
    pub steps_completed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub method: Method,
    pub seed: u64,
    pub records: Vec<TraceRecord>,
    pub summary: RunSummary,
    /// Set when the run aborted; `records` holds what was logged before.
    pub failure: Option<String>,
}

/// `(final - 0) / (start - 0)`; every objective has minimum value 0.
pub fn gap_ratio(start: f64, last: f64) -> f64 {
    if start > 0.0 {
        last / start
    } else if last == 0.0 {
        1.0
    } else {
        f64::INFINITY
    }
}

enum State {
    Strict(ZState),
    /// Continuous z master for CAQ and off-grid runs.
    MasterZ(Vec<f64>, Adam),
    /// Continuous weight master for weight-space runs.
    MasterX(Vec<f64>, Adam),
}

/// A single run as an explicit state machine.
pub struct Runner {
    pub config: OptimizerConfig,
    pub problem: Problem,
    pub seed: u64,
    pub quantizer: Quantizer,
    oracle: StochasticOracle,
    state: State,
    step: usize,
    clip_events: u64,
    boundary_events: u64,
    recalibs: u64,
    last_est_norm: f64,
    last_projection_sq: f64,
}

impl Runner {
    pub fn new(config: &OptimizerConfig, problem: &Problem, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = problem.objective.dim;
        let x0 = start_point(seed, d);
        let recalib = match config.mode {
            Mode::StrictAlg1 => 0,
            Mode::FpMasterAdam => config.recalib_period,
        };
        let quantizer = Quantizer::calibrated(
            problem.family,
            problem.strength,
            problem.bits,
            &x0,
            config.block_size,
            recalib,
        )?;
        let oracle = StochasticOracle::new(problem.objective, problem.noise_std, seed)?;
        let mut clips = 0u64;
        let state = match (config.mode, config.method.in_z()) {
            (Mode::StrictAlg1, _) => {
                State::Strict(ZState::from_weights(&quantizer, &x0, &mut clips)?)
            }
            (Mode::FpMasterAdam, true) => State::MasterZ(
                quantizer.compress(&x0, &mut clips)?,
                Adam::new(config.adam, d),
            ),
            (Mode::FpMasterAdam, false) => State::MasterX(x0, Adam::new(config.adam, d)),
        };
        Ok(Runner {
            config: config.clone(),
            problem: *problem,
            seed,
            quantizer,
            oracle,
            state,
            step: 0,
            clip_events: clips,
            boundary_events: 0,
            recalibs: 0,
            last_est_norm: 0.0,
            last_projection_sq: 0.0,
        })
    }

    pub fn clip_events(&self) -> u64 {
        self.clip_events
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    /// Squared projection displacement of the last strict step.
    pub fn last_projection_sq(&self) -> f64 {
        self.last_projection_sq
    }

    /// The grid state the loss is logged at (and CAQ queries from).
    pub fn grid_state(&self) -> Result<ZState> {
        let mut clips = 0u64;
        match &self.state {
            State::Strict(s) => Ok(s.clone()),
            State::MasterZ(z, _) => Ok(ZState {
                indices: self.quantizer.round_z(z, &mut clips)?,
            }),
            State::MasterX(x, _) => ZState::from_weights(&self.quantizer, x, &mut clips),
        }
    }

    /// Weights of the continuous state (the grid state in strict mode).
    pub fn master_weights(&self) -> Result<Vec<f64>> {
        let mut clips = 0u64;
        match &self.state {
            State::Strict(s) => Ok(s.weights(&self.quantizer)),
            State::MasterZ(z, _) => self.quantizer.expand(z, &mut clips),
            State::MasterX(x, _) => Ok(x.clone()),
        }
    }

    pub fn quantized_weights(&self) -> Result<Vec<f64>> {
        Ok(self.grid_state()?.weights(&self.quantizer))
    }

    pub fn record(&self) -> Result<TraceRecord> {
        let f = &self.problem.objective;
        Ok(TraceRecord {
            step: self.step,
            loss_quantized: f.eval(&self.quantized_weights()?)?,
            loss_master: f.eval(&self.master_weights()?)?,
            est_norm: self.last_est_norm,
            clip_events: self.clip_events,
            boundary_events: self.boundary_events,
            recalibs: self.recalibs,
        })
    }

    /// Advances one step.
    pub fn advance(&mut self) -> Result<()> {
        let cfg = &self.config;
        let t = self.step as u64;
        let d = self.problem.objective.dim;
        let xi = self.oracle.sample(t);
        let dirs_seed = direction_seed(self.seed, t);
        let q = &self.quantizer;
        match &mut self.state {
            State::Strict(s) => {
                let out = step_strict_alg1(s, q, &self.oracle, cfg.eta, dirs_seed, cfg.k, &xi)?;
                self.last_est_norm = out.estimate.norm();
                self.boundary_events += out.estimate.boundary_events;
                self.clip_events += out.clip_events;
                self.last_projection_sq = out.projection_sq;
                *s = out.next;
            }
            State::MasterZ(z, adam) => {
                let dirs = sample_directions(cfg.method.directions(), cfg.k, d, dirs_seed)?;
                let est = match cfg.method {
                    Method::Caq => {
                        let mut clips = 0u64;
                        let state = ZState {
                            indices: q.round_z(z, &mut clips)?,
                        };
                        estimate_caq(&self.oracle, q, &state, &dirs, &xi)?
                    }
                    _ => estimate_offgrid_z(&self.oracle, q, z, cfg.mu, &dirs, &xi)?,
                };
                check_estimate(&est)?;
                self.last_est_norm = est.norm();
                self.clip_events += est.clip_events;
                self.boundary_events += est.boundary_events;
                let mut g = est.estimate;
                clip_to_norm(&mut g, cfg.clip_norm);
                let (lo, hi) = (q.grid.z_min, q.grid.z_max);
                for (zj, dj) in z.iter_mut().zip(adam.update(&g, cfg.eta)) {
                    *zj = (*zj - dj).clamp(lo, hi);
                }
            }
            State::MasterX(x, adam) => {
                let dirs = sample_directions(cfg.method.directions(), cfg.k, d, dirs_seed)?;
                let est = estimate_weight_space(&self.oracle, q, x, cfg.mu, &dirs, &xi)?;
                check_estimate(&est)?;
                self.last_est_norm = est.norm();
                self.clip_events += est.clip_events;
                let mut g = est.estimate;
                clip_to_norm(&mut g, cfg.clip_norm);
                for (xj, dj) in x.iter_mut().zip(adam.update(&g, cfg.eta)) {
                    *xj -= dj;
                }
            }
        }
        self.step += 1;
        if self.quantizer.calib().due(self.step) {
            self.recalibrate()?;
        }
        Ok(())
    }

    /// Refits block scales to the current weights and re-maps a z master
    /// through the new scales.
    fn recalibrate(&mut self) -> Result<()> {
        let mut clips = 0u64;
        match &mut self.state {
            State::Strict(_) => return Ok(()),
            State::MasterZ(z, _) => {
                let x = self.quantizer.expand(z, &mut clips)?;
                self.quantizer.recalibrate(&x)?;
                *z = self.quantizer.compress(&x, &mut clips)?;
            }
            State::MasterX(x, _) => {
                self.quantizer.recalibrate(x)?;
            }
        }
        self.clip_events += clips;
        self.recalibs += 1;
        Ok(())
    }

    /// Runs to `config.steps`, logging at the stride and at the last step.
    pub fn run(mut self) -> RunTrace {
        let mut records = Vec::new();
        let failure = self.run_into(&mut records).err();
        let start = records.first().map_or(f64::NAN, |r| r.loss_quantized);
        let last = records.last().map_or(f64::NAN, |r| r.loss_quantized);
        let failure = failure.map(|e| {
            Error::RunFailure {
                step: self.step,
                seed: self.seed,
                reason: e.to_string(),
            }
            .to_string()
        });
        RunTrace {
            method: self.config.method,
            seed: self.seed,
            summary: RunSummary {
                start_loss: start,
                final_loss: last,
                gap_ratio: if failure.is_some() {
                    f64::NAN
                } else {
                    gap_ratio(start, last)
                },
                steps_completed: self.step,
            },
            records,
            failure,
        }
    }

    fn run_into(&mut self, records: &mut Vec<TraceRecord>) -> Result<()> {
        records.push(self.record()?);
        let (steps, stride) = (self.config.steps, self.config.log_stride);
        while self.step < steps {
            self.advance()?;
            if self.step.is_multiple_of(stride) || self.step == steps {
                records.push(self.record()?);
            }
        }
        Ok(())
    }
}

/// Builds and runs one trace. Configuration errors are returned; failures
/// during the run are reported inside the trace.
pub fn run(config: &OptimizerConfig, problem: &Problem, seed: u64) -> Result<RunTrace> {
    Ok(Runner::new(config, problem, seed)?.run())
}
