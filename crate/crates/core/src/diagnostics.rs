//! Direct measurements of the grid span, rounded chords and endpoint-rounding
//! residuals.

use serde::{Deserialize, Serialize};

use crate::compander::{
    calibrate_scales, BlockCalibration, CompanderFamily, CompanderSpec, GridSpec, Quantizer, ZState,
};
use crate::error::{finite, Error, Result};
use crate::estimators::{
    estimate_caq, estimate_offgrid_z, estimate_unrounded_reference, estimate_weight_space, norm,
    sample_directions, Center, DirectionBatch, EstimateResult, Method,
};
use crate::objectives::{ObjectiveSpec, StochasticOracle};
use crate::streams::{mix, start_point, PROBE_TAG};

/// Reporting floor for `log10` residual ratios.
pub const LOG10_FLOOR: f64 = -12.0;

/// Probe points whose target gradient norm is below this are resampled.
pub const MIN_TARGET_NORM: f64 = 1e-14;

const MAX_RESAMPLES: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanRegime {
    Collapse,
    Matched,
    Overspan,
}

impl SpanRegime {
    pub fn classify(rho: f64) -> Self {
        if rho < 0.75 {
            SpanRegime::Collapse
        } else if rho <= 1.5 {
            SpanRegime::Matched
        } else {
            SpanRegime::Overspan
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SpanRegime::Collapse => "collapse",
            SpanRegime::Matched => "matched",
            SpanRegime::Overspan => "overspan",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanReport {
    pub rho: f64,
    pub regime: SpanRegime,
    /// `(min, max)` of `phi'` over the (clamped) stencil interval.
    pub phi_slope_bounds: (f64, f64),
    /// At least one endpoint was outside the clip interval.
    pub clipped: bool,
}

impl SpanReport {
    /// Whether `rho * delta / (mu |u|)` sits inside the slope bracket, with a
    /// relative slack for rounding. Only meaningful when nothing was clipped.
    pub fn within_bracket(&self, u: f64, mu: f64, delta: f64, rel_tol: f64) -> bool {
        if u == 0.0 {
            return self.rho == 0.0;
        }
        let slope = self.rho * delta / (mu * u.abs());
        let (lo, hi) = self.phi_slope_bounds;
        slope >= lo * (1.0 - rel_tol) && slope <= hi * (1.0 + rel_tol)
    }
}

/// `rho = |phi(x + mu u) - phi(x - mu u)| / (2 delta)` for one scalar stencil.
pub fn grid_span(
    x: f64,
    u: f64,
    mu: f64,
    spec: &CompanderSpec,
    grid: &GridSpec,
) -> Result<SpanReport> {
    finite("span center", x)?;
    finite("span direction", u)?;
    if !(mu.is_finite() && mu >= 0.0) {
        return Err(Error::Config(format!(
            "radius must be non-negative, got {mu}"
        )));
    }
    let (a, b) = (x - mu * u, x + mu * u);
    let mut clips = 0u64;
    let za = spec.phi_counted(a, &mut clips)?;
    let zb = spec.phi_counted(b, &mut clips)?;
    let rho = (zb - za).abs() / (2.0 * grid.delta);
    Ok(SpanReport {
        rho,
        regime: SpanRegime::classify(rho),
        phi_slope_bounds: spec.phi_prime_bounds(a, b),
        clipped: clips > 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChordReport {
    /// `(Q(x + mu u) - Q(x - mu u)) / (2 mu)`.
    pub chord: Vec<f64>,
    pub cosine_to_u: f64,
    /// The chord is exactly zero.
    pub collapsed: bool,
    pub clip_events: u64,
}

/// Rounded chord of the quantizer along `u`.
pub fn rounded_chord(x: &[f64], u: &[f64], mu: f64, quantizer: &Quantizer) -> Result<ChordReport> {
    let mut clips = 0u64;
    let report = chord_with(x, u, mu, |p| quantizer.quantize(p, &mut clips))?;
    Ok(ChordReport {
        clip_events: clips,
        ..report
    })
}

/// Chord of an arbitrary map `q` along `u`.
pub fn chord_with<F>(x: &[f64], u: &[f64], mu: f64, mut q: F) -> Result<ChordReport>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if x.len() != u.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: u.len(),
        });
    }
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Config(format!("radius must be positive, got {mu}")));
    }
    let plus: Vec<f64> = x.iter().zip(u).map(|(a, b)| a + mu * b).collect();
    let minus: Vec<f64> = x.iter().zip(u).map(|(a, b)| a - mu * b).collect();
    let qp = q(&plus)?;
    let qm = q(&minus)?;
    let chord: Vec<f64> = qp
        .iter()
        .zip(&qm)
        .map(|(p, m)| (p - m) / (2.0 * mu))
        .collect();
    let (cn, un) = (norm(&chord), norm(u));
    let collapsed = cn == 0.0;
    let cosine_to_u = if collapsed || un == 0.0 {
        0.0
    } else {
        let dot: f64 = chord.iter().zip(u).map(|(a, b)| a * b).sum();
        (dot / (cn * un)).clamp(-1.0, 1.0)
    };
    Ok(ChordReport {
        chord,
        cosine_to_u,
        collapsed,
        clip_events: 0,
    })
}

/// Everything a residual probe needs except the start seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSetup {
    pub method: Method,
    pub objective: ObjectiveSpec,
    pub noise_std: f64,
    pub family: CompanderFamily,
    pub strength: f64,
    pub bits: u32,
    pub block_size: usize,
    pub k: usize,
    /// Radius for the weight-space and off-grid methods; CAQ uses the grid
    /// spacing.
    pub mu: f64,
}

impl ProbeSetup {
    fn oracle(&self, seed: u64) -> Result<StochasticOracle> {
        StochasticOracle::new(self.objective, self.noise_std, seed)
    }
}

/// A calibrated probe point with its target gradient.
#[derive(Debug, Clone)]
pub struct ProbePoint {
    pub x: Vec<f64>,
    pub quantizer: Quantizer,
    pub state: ZState,
    pub g_star: Vec<f64>,
    /// Seed the point was actually drawn from after resampling.
    pub point_seed: u64,
}

/// Draws the probe point for `seed`: a start vector, a quantizer calibrated
/// on it, and `g_star`, which is `grad F(x)` for weight-space methods and
/// `grad (F ∘ phi_inv)(z)` for the compander-coordinate ones.
///
/// `margin` is the largest direction entry the stencils will use. Block
/// scales get enough headroom that every weight-space or off-grid endpoint
/// stays inside the clip range, so the probe sees rounding alone. CAQ keeps
/// plain max-abs scales.
pub fn probe_point(setup: &ProbeSetup, seed: u64, margin: f64) -> Result<ProbePoint> {
    let d = setup.objective.dim;
    let unit = CompanderSpec::new(setup.family, setup.strength, 1.0)?;
    let grid = GridSpec::for_compander(&unit, setup.bits)?;
    let reach = setup.mu * margin;
    for attempt in 0..MAX_RESAMPLES {
        let point_seed = if attempt == 0 {
            seed
        } else {
            mix(seed, attempt)
        };
        let x = start_point(point_seed, d);
        let mut scales = calibrate_scales(&x, setup.block_size)?;
        match setup.method {
            Method::WsRademacher | Method::WsGaussian => {
                scales
                    .iter_mut()
                    .for_each(|a| *a = (*a + reach) / unit.x_bound());
            }
            Method::OffgridZ => {
                let edge = grid.z_max - reach;
                let t = if edge > unit.z_range().0 {
                    unit.phi_inv(edge)?
                } else {
                    0.0
                };
                if t.is_nan() || t <= 0.0 {
                    return Err(Error::Config(format!(
                        "off-grid radius {} leaves no unclipped interior",
                        setup.mu
                    )));
                }
                scales.iter_mut().for_each(|a| *a /= t);
            }
            Method::Caq => {}
        }
        let calib = BlockCalibration {
            block_size: setup.block_size,
            scales,
            recalib_period: 0,
        };
        let quantizer = Quantizer::new(unit, grid, calib)?;
        let mut clips = 0u64;
        let state = ZState::from_weights(&quantizer, &x, &mut clips)?;
        let g_star = match setup.method {
            Method::WsRademacher | Method::WsGaussian => setup.objective.grad(&x)?,
            Method::Caq => z_gradient(setup, &quantizer, &state.weights(&quantizer))?,
            Method::OffgridZ => z_gradient(setup, &quantizer, &x)?,
        };
        if norm(&g_star) >= MIN_TARGET_NORM {
            return Ok(ProbePoint {
                x,
                quantizer,
                state,
                g_star,
                point_seed,
            });
        }
    }
    Err(Error::Config(format!(
        "no probe point with a usable target gradient after {MAX_RESAMPLES} draws from seed {seed}"
    )))
}

/// Directions of probe `p` for start `seed`.
pub fn probe_directions(setup: &ProbeSetup, seed: u64, p: u64) -> Result<DirectionBatch> {
    sample_directions(
        setup.method.directions(),
        setup.k,
        setup.objective.dim,
        mix(mix(seed, PROBE_TAG), p),
    )
}

fn z_gradient(setup: &ProbeSetup, quantizer: &Quantizer, x: &[f64]) -> Result<Vec<f64>> {
    let g = setup.objective.grad(x)?;
    Ok(g.iter()
        .enumerate()
        .map(|(j, gj)| gj * quantizer.expander_slope(j, x[j]))
        .collect())
}

/// Measured estimate and its unrounded twin for probe `p` at `point`.
pub fn probe_pair(
    setup: &ProbeSetup,
    point: &ProbePoint,
    seed: u64,
    p: u64,
    dirs: &DirectionBatch,
) -> Result<(EstimateResult, EstimateResult)> {
    let oracle = setup.oracle(seed)?;
    let xi = oracle.sample(p);
    let q = &point.quantizer;
    match setup.method {
        Method::WsRademacher | Method::WsGaussian => Ok((
            estimate_weight_space(&oracle, q, &point.x, setup.mu, dirs, &xi)?,
            estimate_unrounded_reference(
                &oracle,
                q,
                Center::Weight(&point.x),
                setup.mu,
                dirs,
                &xi,
            )?,
        )),
        Method::OffgridZ => {
            let mut clips = 0u64;
            let z = q.compress(&point.x, &mut clips)?;
            Ok((
                estimate_offgrid_z(&oracle, q, &z, setup.mu, dirs, &xi)?,
                estimate_unrounded_reference(&oracle, q, Center::Z(&z), setup.mu, dirs, &xi)?,
            ))
        }
        Method::Caq => Ok((
            estimate_caq(&oracle, q, &point.state, dirs, &xi)?,
            estimate_unrounded_reference(
                &oracle,
                q,
                Center::Grid(&point.state),
                q.grid.delta,
                dirs,
                &xi,
            )?,
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualProbe {
    pub method: Method,
    pub seed: u64,
    pub probes: usize,
    /// Mean of `||g_meas - g_unrounded||^2` over probes.
    pub residual_sq: f64,
    /// `||g_star||^2` at the probe point (mean when pooled).
    pub normalizer_sq: f64,
    /// Mean of the unfloored per-probe ratios.
    pub mean_ratio: f64,
    /// Mean of the floored per-probe `log10` ratios.
    pub log10_ratio: f64,
    /// Two standard errors of `log10_ratio`.
    pub log10_2se: f64,
    pub ratios: Vec<f64>,
}

pub fn floored_log10(ratio: f64) -> f64 {
    if ratio > 0.0 {
        ratio.log10().max(LOG10_FLOOR)
    } else {
        LOG10_FLOOR
    }
}

fn mean_2se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 2.0 * (var / n).sqrt())
}

impl ResidualProbe {
    fn from_parts(method: Method, seed: u64, residuals: &[f64], normalizers: &[f64]) -> Self {
        let ratios: Vec<f64> = residuals
            .iter()
            .zip(normalizers)
            .map(|(r, n)| r / n)
            .collect();
        let logs: Vec<f64> = ratios.iter().map(|&r| floored_log10(r)).collect();
        let (log10_ratio, log10_2se) = mean_2se(&logs);
        let n = residuals.len() as f64;
        ResidualProbe {
            method,
            seed,
            probes: residuals.len(),
            residual_sq: residuals.iter().sum::<f64>() / n,
            normalizer_sq: normalizers.iter().sum::<f64>() / n,
            mean_ratio: ratios.iter().sum::<f64>() / n,
            log10_ratio,
            log10_2se,
            ratios,
        }
    }

    /// Pools several probes (e.g. all starts of one figure row) in order.
    pub fn pool(probes: &[ResidualProbe]) -> Result<ResidualProbe> {
        let first = probes
            .first()
            .ok_or_else(|| Error::Config("nothing to pool".into()))?;
        let mut residuals = Vec::new();
        let mut normalizers = Vec::new();
        for p in probes {
            residuals.extend(p.ratios.iter().map(|r| r * p.normalizer_sq));
            normalizers.extend(std::iter::repeat_n(p.normalizer_sq, p.ratios.len()));
        }
        Ok(ResidualProbe::from_parts(
            first.method,
            first.seed,
            &residuals,
            &normalizers,
        ))
    }
}

/// `n_probes` one-step probes at the probe point for `seed`.
pub fn probe_residual(setup: &ProbeSetup, n_probes: usize, seed: u64) -> Result<ResidualProbe> {
    Ok(probe_with_point(setup, n_probes, seed)?.0)
}

fn probe_with_point(
    setup: &ProbeSetup,
    n_probes: usize,
    seed: u64,
) -> Result<(ResidualProbe, ProbePoint)> {
    if n_probes == 0 {
        return Err(Error::Config("need at least one probe".into()));
    }
    let dirs = (0..n_probes as u64)
        .map(|p| probe_directions(setup, seed, p))
        .collect::<Result<Vec<_>>>()?;
    let margin = dirs
        .iter()
        .flat_map(|b| b.values())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let point = probe_point(setup, seed, margin)?;
    let g2 = point.g_star.iter().map(|g| g * g).sum::<f64>();
    let mut residuals = Vec::with_capacity(n_probes);
    for (p, batch) in dirs.iter().enumerate() {
        let (meas, reference) = probe_pair(setup, &point, seed, p as u64, batch)?;
        let r2: f64 = meas
            .estimate
            .iter()
            .zip(&reference.estimate)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        residuals.push(finite("residual", r2)?);
    }
    let normalizers = vec![g2; n_probes];
    let probe = ResidualProbe::from_parts(setup.method, seed, &residuals, &normalizers);
    Ok((probe, point))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// `(log10(delta^2 / mu^2), log10(residual_sq))` per radius.
    pub points: Vec<(f64, f64)>,
}

/// Least-squares line through `(xs, ys)`.
pub fn fit_log_slope(xs: &[f64], ys: &[f64]) -> Result<SlopeFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateFit("need at least two points".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit("non-finite coordinate".into()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx <= f64::EPSILON * n * mx.abs().max(1.0) {
        return Err(Error::DegenerateFit("abscissa has zero variance".into()));
    }
    let slope = sxy / sxx;
    Ok(SlopeFit {
        slope,
        intercept: my - slope * mx,
        points: xs.iter().copied().zip(ys.iter().copied()).collect(),
    })
}

/// Largest scalar span `rho` over all coordinates of `point` at radius `mu`
/// with a unit direction entry.
fn max_rho(setup: &ProbeSetup, point: &ProbePoint, mu: f64) -> Result<f64> {
    let q = &point.quantizer;
    if setup.method == Method::OffgridZ {
        return Ok(mu / q.grid.delta);
    }
    let mut worst = 0.0f64;
    for (j, &xj) in point.x.iter().enumerate() {
        let span = grid_span(xj, 1.0, mu, &q.compander_at(j), &q.grid)?;
        worst = worst.max(span.rho);
    }
    Ok(worst)
}

/// Slope of `log10(residual_sq)` against `log10(delta^2 / mu^2)` over a
/// sweep of radii, pooling `n_probes` probes at each seed.
pub fn residual_slope_fit(
    setup: &ProbeSetup,
    mu_grid: &[f64],
    n_probes: usize,
    seeds: &[u64],
) -> Result<SlopeFit> {
    if mu_grid.len() < 5 {
        return Err(Error::Config(format!(
            "slope fit needs at least 5 radii, got {}",
            mu_grid.len()
        )));
    }
    if mu_grid.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(Error::Config("radii must be positive".into()));
    }
    let lo = mu_grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mu_grid.iter().copied().fold(0.0, f64::max);
    if (hi / lo).log10() < 1.5 {
        return Err(Error::Config(format!(
            "radii span {:.3} decades, need at least 1.5",
            (hi / lo).log10()
        )));
    }
    if seeds.is_empty() {
        return Err(Error::Config("slope fit needs at least one seed".into()));
    }
    let mut xs = Vec::with_capacity(mu_grid.len());
    let mut residuals = Vec::with_capacity(mu_grid.len());
    let mut worst: Option<(f64, f64, u64)> = None;
    for &mu in mu_grid {
        let s = ProbeSetup {
            mu,
            ..setup.clone()
        };
        let mut total = 0.0;
        let mut delta = 0.0;
        for &seed in seeds {
            let (probe, point) = probe_with_point(&s, n_probes, seed)?;
            total += probe.residual_sq;
            delta = point.quantizer.grid.delta;
            if setup.method != Method::Caq {
                let rho = max_rho(&s, &point, mu)?;
                if worst.is_none_or(|w| rho > w.0) {
                    worst = Some((rho, mu, point.point_seed));
                }
            }
        }
        xs.push((delta * delta / (mu * mu)).log10());
        residuals.push(total / seeds.len() as f64);
    }
    if residuals.iter().all(|&r| r == 0.0) {
        return Err(Error::FlatSignal);
    }
    if residuals.contains(&0.0) {
        return Err(Error::DegenerateFit(
            "some radii produced an exactly zero residual".into(),
        ));
    }
    if let Some((rho, mu, seed)) = worst {
        if rho >= 1.0 {
            return Err(Error::Config(format!(
                "radius {mu} is not under-resolved: rho = {rho:.3} at seed {seed}"
            )));
        }
    }
    let ys: Vec<f64> = residuals.iter().map(|r| r.log10()).collect();
    fit_log_slope(&xs, &ys)
}
