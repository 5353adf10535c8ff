//! Direction sampling and the two-point query geometries.
//!
//! All estimators share one shape: form `K` endpoint pairs, evaluate the
//! `2K` losses with a single oracle sample in the fixed order
//! `(k ascending, plus then minus)`, and average
//! `(L+ - L-) / (2 * radius) * direction_k`. They differ in where the
//! endpoints are formed and whether the low-precision engine has to round
//! them.

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::compander::{Quantizer, ZState};
use crate::error::{finite, Error, Result};
use crate::objectives::{LossOracle, Sample};
use crate::streams::keyed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionKind {
    Rademacher,
    Gaussian,
}

/// Query geometry used by an optimizer or a residual probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// On-grid Rademacher stencils in the compander coordinate.
    #[serde(rename = "caq")]
    Caq,
    /// Weight-space Rademacher stencils, rounded before evaluation.
    #[serde(rename = "ws-rademacher")]
    WsRademacher,
    /// Weight-space Gaussian stencils, rounded before evaluation.
    #[serde(rename = "ws-gaussian")]
    WsGaussian,
    /// Off-grid Rademacher stencils in the compander coordinate.
    #[serde(rename = "offgrid-z")]
    OffgridZ,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Caq => "caq",
            Method::WsRademacher => "ws-rademacher",
            Method::WsGaussian => "ws-gaussian",
            Method::OffgridZ => "offgrid-z",
        }
    }

    pub fn directions(self) -> DirectionKind {
        match self {
            Method::WsGaussian => DirectionKind::Gaussian,
            _ => DirectionKind::Rademacher,
        }
    }

    /// Whether the method queries (and updates) in the compander coordinate.
    pub fn in_z(self) -> bool {
        matches!(self, Method::Caq | Method::OffgridZ)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Method::Caq,
            Method::WsRademacher,
            Method::WsGaussian,
            Method::OffgridZ,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// `K x d` directions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionBatch {
    pub kind: DirectionKind,
    pub k: usize,
    pub d: usize,
    pub seed: u64,
    values: Vec<f64>,
}

impl DirectionBatch {
    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.d..(k + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.d)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Samples `k` i.i.d. directions in dimension `d`.
///
/// Row `k` is drawn from the ChaCha stream keyed by `(seed, k)`; a Rademacher
/// entry `j` is the low bit of word `j` of that stream.
pub fn sample_directions(
    kind: DirectionKind,
    k: usize,
    d: usize,
    seed: u64,
) -> Result<DirectionBatch> {
    if k == 0 || d == 0 {
        return Err(Error::Config(format!(
            "direction batch needs K >= 1 and d >= 1, got K={k}, d={d}"
        )));
    }
    let mut values = Vec::with_capacity(k * d);
    for row in 0..k {
        let mut rng = keyed(seed, row as u64);
        match kind {
            DirectionKind::Rademacher => {
                values.extend((0..d).map(|_| if rng.next_u32() & 1 == 1 { 1.0 } else { -1.0 }))
            }
            DirectionKind::Gaussian => {
                values.extend((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
            }
        }
    }
    Ok(DirectionBatch {
        kind,
        k,
        d,
        seed,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateResult {
    pub estimate: Vec<f64>,
    /// `[L+_0, L-_0, L+_1, L-_1, ...]`.
    pub endpoint_losses: Vec<f64>,
    pub radius: f64,
    pub rounded_endpoints_used: bool,
    pub clip_events: u64,
    /// CAQ stencil centers moved off a boundary index.
    pub boundary_events: u64,
}

impl EstimateResult {
    pub fn quotients(&self) -> Vec<f64> {
        self.endpoint_losses
            .chunks_exact(2)
            .map(|p| (p[0] - p[1]) / (2.0 * self.radius))
            .collect()
    }

    /// Rebuilds the estimate from the stored losses and radius.
    pub fn reconstruct(&self, dirs: &DirectionBatch) -> Vec<f64> {
        average_quotients(&self.endpoint_losses, self.radius, dirs)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.estimate)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn average_quotients(losses: &[f64], radius: f64, dirs: &DirectionBatch) -> Vec<f64> {
    let mut acc = vec![0.0; dirs.d];
    for (pair, row) in losses.chunks_exact(2).zip(dirs.rows()) {
        let q = (pair[0] - pair[1]) / (2.0 * radius);
        acc.iter_mut().zip(row).for_each(|(a, u)| *a += q * u);
    }
    let k = dirs.k as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    acc
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn check_radius(radius: f64) -> Result<()> {
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::Config(format!(
            "radius must be positive, got {radius}"
        )));
    }
    Ok(())
}

/// Runs `2K` evaluations in the fixed order. `endpoint(k, sign, buf)` fills
/// `buf` with the weights to evaluate.
fn evaluate_stencil<O, F>(
    oracle: &O,
    dirs: &DirectionBatch,
    xi: &Sample,
    mut endpoint: F,
) -> Result<Vec<f64>>
where
    O: LossOracle + ?Sized,
    F: FnMut(usize, f64, &mut Vec<f64>) -> Result<()>,
{
    let mut buf = Vec::with_capacity(dirs.d);
    let mut losses = Vec::with_capacity(2 * dirs.k);
    for k in 0..dirs.k {
        for sign in [1.0, -1.0] {
            buf.clear();
            endpoint(k, sign, &mut buf)?;
            losses.push(finite("endpoint loss", oracle.loss(&buf, xi)?)?);
        }
    }
    Ok(losses)
}

/// Weight-space quantized finite differences: `f(Q(x +- mu u_k); xi)`.
pub fn estimate_weight_space<O: LossOracle + ?Sized>(
    oracle: &O,
    quantizer: &Quantizer,
    x: &[f64],
    mu: f64,
    dirs: &DirectionBatch,
    xi: &Sample,
) -> Result<EstimateResult> {
    check_radius(mu)?;
    check_dims(oracle.dim(), x.len())?;
    check_dims(x.len(), dirs.d)?;
    let mut clips = 0u64;
    let losses = evaluate_stencil(oracle, dirs, xi, |k, sign, buf| {
        for (j, (&xj, &uj)) in x.iter().zip(dirs.row(k)).enumerate() {
            let i = quantizer.index_of(j, xj + sign * mu * uj, &mut clips)?;
            buf.push(quantizer.expand_index(j, i));
        }
        Ok(())
    })?;
    Ok(EstimateResult {
        estimate: average_quotients(&losses, mu, dirs),
        endpoint_losses: losses,
        radius: mu,
        rounded_endpoints_used: true,
        clip_events: clips,
        boundary_events: 0,
    })
}

/// Compander-coordinate queries at arbitrary `z +- mu u_k`, rounded by `U`
/// before evaluation: `f(phi_inv(U(z +- mu u_k)); xi)`.
pub fn estimate_offgrid_z<O: LossOracle + ?Sized>(
    oracle: &O,
    quantizer: &Quantizer,
    z: &[f64],
    mu: f64,
    dirs: &DirectionBatch,
    xi: &Sample,
) -> Result<EstimateResult> {
    check_radius(mu)?;
    check_dims(oracle.dim(), z.len())?;
    check_dims(z.len(), dirs.d)?;
    let grid = quantizer.grid;
    let mut clips = 0u64;
    let losses = evaluate_stencil(oracle, dirs, xi, |k, sign, buf| {
        for (j, (&zj, &uj)) in z.iter().zip(dirs.row(k)).enumerate() {
            let r = grid.quantize_uniform(zj + sign * mu * uj)?;
            clips += r.clipped as u64;
            buf.push(quantizer.expand_index(j, r.index));
        }
        Ok(())
    })?;
    Ok(EstimateResult {
        estimate: average_quotients(&losses, mu, dirs),
        endpoint_losses: losses,
        radius: mu,
        rounded_endpoints_used: true,
        clip_events: clips,
        boundary_events: 0,
    })
}

/// Stencil centers for a CAQ query: boundary indices move one step inward so
/// both `center +- 1` stay on the grid.
pub fn caq_centers(quantizer: &Quantizer, state: &ZState) -> Result<(Vec<u32>, u64)> {
    let grid = quantizer.grid;
    if grid.levels < 3 {
        return Err(Error::Config(format!(
            "CAQ stencils need an interior grid index; {} levels have none",
            grid.levels
        )));
    }
    let mut moved = 0u64;
    let centers = state
        .indices
        .iter()
        .map(|&i| {
            let c = i.clamp(1, grid.last() - 1);
            moved += (c != i) as u64;
            c
        })
        .collect();
    Ok((centers, moved))
}

/// On-grid endpoint index `center + sign * r`.
#[inline]
pub fn caq_endpoint_index(center: u32, sign: f64, r: f64) -> u32 {
    if sign * r > 0.0 {
        center + 1
    } else {
        center - 1
    }
}

fn check_rademacher(dirs: &DirectionBatch) -> Result<()> {
    if dirs.kind != DirectionKind::Rademacher {
        return Err(Error::Config(
            "on-grid stencils require Rademacher directions".into(),
        ));
    }
    Ok(())
}

/// CAQ-ZO on-grid queries `f(phi_inv(z +- Delta r_k); xi)`.
///
/// Endpoints are formed by index arithmetic, so every endpoint is a grid
/// point and the engine needs no rounding. The quotient is over `2 Delta`
/// and estimates the gradient of `F ∘ phi_inv` in z.
pub fn estimate_caq<O: LossOracle + ?Sized>(
    oracle: &O,
    quantizer: &Quantizer,
    state: &ZState,
    dirs: &DirectionBatch,
    xi: &Sample,
) -> Result<EstimateResult> {
    check_rademacher(dirs)?;
    check_dims(oracle.dim(), state.dim())?;
    check_dims(state.dim(), dirs.d)?;
    let (centers, moved) = caq_centers(quantizer, state)?;
    let losses = evaluate_stencil(oracle, dirs, xi, |k, sign, buf| {
        for (j, (&c, &r)) in centers.iter().zip(dirs.row(k)).enumerate() {
            buf.push(quantizer.expand_index(j, caq_endpoint_index(c, sign, r)));
        }
        Ok(())
    })?;
    let delta = quantizer.grid.delta;
    Ok(EstimateResult {
        estimate: average_quotients(&losses, delta, dirs),
        endpoint_losses: losses,
        radius: delta,
        rounded_endpoints_used: false,
        clip_events: 0,
        boundary_events: moved,
    })
}

/// Center of an unrounded reference stencil.
#[derive(Debug, Clone, Copy)]
pub enum Center<'a> {
    /// Weight-space point `x`; endpoints `x +- radius u`.
    Weight(&'a [f64]),
    /// Compander-coordinate point `z`; endpoints `phi_inv(z +- radius u)`.
    Z(&'a [f64]),
    /// Grid state; endpoints are the on-grid points `z_(i +- r)` with the
    /// same boundary handling as [`estimate_caq`].
    Grid(&'a ZState),
}

/// The paired estimator with `U` replaced by the identity: same directions,
/// same sample, same stencil, no endpoint rounding.
pub fn estimate_unrounded_reference<O: LossOracle + ?Sized>(
    oracle: &O,
    quantizer: &Quantizer,
    center: Center<'_>,
    radius: f64,
    dirs: &DirectionBatch,
    xi: &Sample,
) -> Result<EstimateResult> {
    check_radius(radius)?;
    check_dims(oracle.dim(), dirs.d)?;
    let mut clips = 0u64;
    let mut boundary = 0u64;
    let losses = match center {
        Center::Weight(x) => {
            check_dims(dirs.d, x.len())?;
            evaluate_stencil(oracle, dirs, xi, |k, sign, buf| {
                buf.extend(
                    x.iter()
                        .zip(dirs.row(k))
                        .map(|(&xj, &uj)| xj + sign * radius * uj),
                );
                Ok(())
            })?
        }
        Center::Z(z) => {
            check_dims(dirs.d, z.len())?;
            evaluate_stencil(oracle, dirs, xi, |k, sign, buf| {
                for (j, (&zj, &uj)) in z.iter().zip(dirs.row(k)).enumerate() {
                    buf.push(quantizer.expand_z(j, zj + sign * radius * uj, &mut clips)?);
                }
                Ok(())
            })?
        }
        Center::Grid(state) => {
            check_rademacher(dirs)?;
            check_dims(dirs.d, state.dim())?;
            if radius != quantizer.grid.delta {
                return Err(Error::Config(format!(
                    "on-grid reference radius must equal the grid spacing {}, got {radius}",
                    quantizer.grid.delta
                )));
            }
            let (centers, moved) = caq_centers(quantizer, state)?;
            boundary = moved;
            let grid = quantizer.grid;
            evaluate_stencil(oracle, dirs, xi, |k, sign, buf| {
                for (j, (&c, &r)) in centers.iter().zip(dirs.row(k)).enumerate() {
                    let z = grid.value(caq_endpoint_index(c, sign, r));
                    buf.push(quantizer.expand_z(j, z, &mut clips)?);
                }
                Ok(())
            })?
        }
    };
    Ok(EstimateResult {
        estimate: average_quotients(&losses, radius, dirs),
        endpoint_losses: losses,
        radius,
        rounded_endpoints_used: false,
        clip_events: clips,
        boundary_events: boundary,
    })
}
