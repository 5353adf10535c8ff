//! Scalar companders, the uniform z-grid, and the composite quantizer
//! `Q = phi_inv ∘ U ∘ phi` with per-block scale calibration.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc_inv;

use crate::error::{finite, Error, Result};

/// Truncation point, in standard deviations, of the Gaussian-quantile z-range.
pub const GAUSSIAN_TAIL: f64 = 4.0;

/// Smallest block scale produced by calibration.
pub const SCALE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompanderFamily {
    Identity,
    MuLaw,
    ALaw,
    GaussianQuantile,
}

impl CompanderFamily {
    pub fn name(self) -> &'static str {
        match self {
            CompanderFamily::Identity => "identity",
            CompanderFamily::MuLaw => "mu_law",
            CompanderFamily::ALaw => "a_law",
            CompanderFamily::GaussianQuantile => "gaussian_quantile",
        }
    }

    /// Strength used when a configuration leaves it unset.
    pub fn default_strength(self) -> f64 {
        match self {
            CompanderFamily::Identity => 1.0,
            CompanderFamily::MuLaw => 255.0,
            CompanderFamily::ALaw => 87.6,
            CompanderFamily::GaussianQuantile => GAUSSIAN_TAIL,
        }
    }

    pub fn all() -> [CompanderFamily; 4] {
        [
            CompanderFamily::Identity,
            CompanderFamily::MuLaw,
            CompanderFamily::ALaw,
            CompanderFamily::GaussianQuantile,
        ]
    }
}

impl std::str::FromStr for CompanderFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(CompanderFamily::Identity),
            "mu_law" | "mu-law" => Ok(CompanderFamily::MuLaw),
            "a_law" | "a-law" => Ok(CompanderFamily::ALaw),
            "gaussian_quantile" | "gaussian-quantile" | "nf4" => {
                Ok(CompanderFamily::GaussianQuantile)
            }
            other => Err(Error::Config(format!("unknown compander family `{other}`"))),
        }
    }
}

impl std::fmt::Display for CompanderFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t / std::f64::consts::SQRT_2)
}

fn normal_quantile(p: f64) -> f64 {
    // 1 - p is exact for p >= 0.5, and the lower tail is well conditioned
    if p > 0.5 {
        return -normal_quantile(1.0 - p);
    }
    let t = -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p);
    if !t.is_finite() {
        return t;
    }
    // one Newton step against the CDF
    let density = normal_pdf(t);
    if density > 0.0 {
        t - (normal_cdf(t) - p) / density
    } else {
        t
    }
}

fn normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// A monotone coordinate map `phi` together with its inverse.
///
/// `strength` is `c` for mu-law and `A` for A-law. For the Gaussian-quantile
/// family it is the number of standard deviations the block scale maps to,
/// so the distribution scale is `clip_scale / strength` and
/// `phi(x) = Phi(x * strength / clip_scale)`. The identity family ignores it
/// and maps `x -> x / clip_scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompanderSpec {
    pub family: CompanderFamily,
    pub strength: f64,
    pub clip_scale: f64,
}

impl CompanderSpec {
    pub fn new(family: CompanderFamily, strength: f64, clip_scale: f64) -> Result<Self> {
        let spec = CompanderSpec {
            family,
            strength,
            clip_scale,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn identity(clip_scale: f64) -> Result<Self> {
        Self::new(CompanderFamily::Identity, 1.0, clip_scale)
    }

    pub fn mu_law(c: f64, clip_scale: f64) -> Result<Self> {
        Self::new(CompanderFamily::MuLaw, c, clip_scale)
    }

    pub fn a_law(a: f64, clip_scale: f64) -> Result<Self> {
        Self::new(CompanderFamily::ALaw, a, clip_scale)
    }

    pub fn gaussian_quantile(strength: f64, clip_scale: f64) -> Result<Self> {
        Self::new(CompanderFamily::GaussianQuantile, strength, clip_scale)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.clip_scale.is_finite() && self.clip_scale > 0.0) {
            return Err(Error::Config(format!(
                "clip scale must be positive and finite, got {}",
                self.clip_scale
            )));
        }
        if !(self.strength.is_finite() && self.strength > 0.0) {
            return Err(Error::Config(format!(
                "{} strength must be positive and finite, got {}",
                self.family, self.strength
            )));
        }
        if self.family == CompanderFamily::ALaw && self.strength < 1.0 {
            return Err(Error::Config(format!(
                "a_law strength A must be >= 1, got {}",
                self.strength
            )));
        }
        Ok(())
    }

    /// Same family and strength with a different block scale.
    #[inline]
    pub fn with_scale(self, clip_scale: f64) -> Self {
        CompanderSpec { clip_scale, ..self }
    }

    fn gaussian_sigma(&self) -> f64 {
        self.clip_scale / self.strength
    }

    /// Endpoints of the z-range.
    pub fn z_range(&self) -> (f64, f64) {
        match self.family {
            CompanderFamily::GaussianQuantile => {
                (normal_cdf(-GAUSSIAN_TAIL), normal_cdf(GAUSSIAN_TAIL))
            }
            _ => (-1.0, 1.0),
        }
    }

    /// Weight-space clipping half-range.
    #[inline]
    pub fn x_bound(&self) -> f64 {
        match self.family {
            CompanderFamily::GaussianQuantile => GAUSSIAN_TAIL * self.gaussian_sigma(),
            _ => self.clip_scale,
        }
    }

    /// Clamps `x` to the clip interval; the flag reports whether it moved.
    #[inline]
    pub fn clamp(&self, x: f64) -> (f64, bool) {
        let b = self.x_bound();
        if x > b {
            (b, true)
        } else if x < -b {
            (-b, true)
        } else {
            (x, false)
        }
    }

    /// `phi(x)`, clamping `x` to the clip interval first.
    pub fn phi(&self, x: f64) -> Result<f64> {
        finite("phi input", x)?;
        let (x, _) = self.clamp(x);
        Ok(self.phi_unchecked(x))
    }

    /// `phi(x)` that adds one to `clips` when `x` had to be clamped.
    #[inline]
    pub fn phi_counted(&self, x: f64, clips: &mut u64) -> Result<f64> {
        finite("phi input", x)?;
        let (x, clipped) = self.clamp(x);
        *clips += clipped as u64;
        Ok(self.phi_unchecked(x))
    }

    fn phi_unchecked(&self, x: f64) -> f64 {
        let alpha = self.clip_scale;
        match self.family {
            CompanderFamily::Identity => x / alpha,
            CompanderFamily::MuLaw => {
                let c = self.strength;
                (c * x.abs() / alpha).ln_1p().copysign(x) / c.ln_1p()
            }
            CompanderFamily::ALaw => {
                let a = self.strength;
                let denom = 1.0 + a.ln();
                let r = x.abs() / alpha;
                let mag = if r < 1.0 / a {
                    a * r / denom
                } else {
                    (1.0 + (a * r).ln()) / denom
                };
                mag.copysign(x)
            }
            CompanderFamily::GaussianQuantile => normal_cdf(x / self.gaussian_sigma()),
        }
    }

    /// `phi_inv(z)`. Fails when `z` is outside the z-range.
    pub fn phi_inv(&self, z: f64) -> Result<f64> {
        finite("phi_inv input", z)?;
        let (lo, hi) = self.z_range();
        if z < lo || z > hi {
            return Err(Error::OutOfRange { z, lo, hi });
        }
        Ok(self.phi_inv_unchecked(z))
    }

    /// `phi_inv` for a `z` already known to be in range. The result is
    /// clamped to the clip interval so endpoint reconstructions never
    /// register as clip events.
    #[inline]
    pub(crate) fn phi_inv_unchecked(&self, z: f64) -> f64 {
        let alpha = self.clip_scale;
        let x = match self.family {
            CompanderFamily::Identity => alpha * z,
            CompanderFamily::MuLaw => {
                let c = self.strength;
                (alpha * (z.abs() * c.ln_1p()).exp_m1() / c).copysign(z)
            }
            CompanderFamily::ALaw => {
                let a = self.strength;
                let t = z.abs() * (1.0 + a.ln());
                let r = if t < 1.0 { t / a } else { (t - 1.0).exp() / a };
                (alpha * r).copysign(z)
            }
            CompanderFamily::GaussianQuantile => self.gaussian_sigma() * normal_quantile(z),
        };
        self.clamp(x).0
    }

    /// Closed-form `phi'(x)` on the clip interval.
    pub fn phi_prime(&self, x: f64) -> f64 {
        let (x, _) = self.clamp(x);
        let alpha = self.clip_scale;
        match self.family {
            CompanderFamily::Identity => 1.0 / alpha,
            CompanderFamily::MuLaw => {
                let c = self.strength;
                c / (alpha * c.ln_1p() * (1.0 + c * x.abs() / alpha))
            }
            CompanderFamily::ALaw => {
                let a = self.strength;
                let denom = 1.0 + a.ln();
                if x.abs() / alpha < 1.0 / a {
                    a / (alpha * denom)
                } else {
                    1.0 / (x.abs() * denom)
                }
            }
            CompanderFamily::GaussianQuantile => {
                let s = self.gaussian_sigma();
                normal_pdf(x / s) / s
            }
        }
    }

    /// `(min, max)` of `phi'` over `[lo, hi]` (clamped to the clip interval).
    ///
    /// Every family has `phi'` even and non-increasing in `|x|`, so the
    /// extremes sit at the largest and smallest magnitudes in the interval.
    pub fn phi_prime_bounds(&self, lo: f64, hi: f64) -> (f64, f64) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let (lo, _) = self.clamp(lo);
        let (hi, _) = self.clamp(hi);
        let far = lo.abs().max(hi.abs());
        let near = if lo <= 0.0 && hi >= 0.0 {
            0.0
        } else {
            lo.abs().min(hi.abs())
        };
        (self.phi_prime(far), self.phi_prime(near))
    }
}

/// Result of rounding one z value onto the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rounded {
    pub index: u32,
    pub clipped: bool,
}

/// Endpoint-inclusive uniform grid `z_i = z_min + i * delta`, `i < levels`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bits: u32,
    pub levels: u32,
    pub z_min: f64,
    pub z_max: f64,
    pub delta: f64,
}

impl GridSpec {
    pub const MAX_BITS: u32 = 30;

    pub fn new(bits: u32, z_min: f64, z_max: f64) -> Result<Self> {
        if bits == 0 || bits > Self::MAX_BITS {
            return Err(Error::Config(format!(
                "bit width must be in 1..={}, got {bits}",
                Self::MAX_BITS
            )));
        }
        Self::with_levels(1u32 << bits, z_min, z_max)
    }

    /// A grid with an arbitrary level count; `bits` records the storage
    /// width `ceil(log2(levels))`.
    pub fn with_levels(levels: u32, z_min: f64, z_max: f64) -> Result<Self> {
        if !(2..=1u32 << Self::MAX_BITS).contains(&levels) {
            return Err(Error::Config(format!("level count {levels} out of range")));
        }
        if !(z_min.is_finite() && z_max.is_finite() && z_max > z_min) {
            return Err(Error::Config(format!(
                "grid range [{z_min}, {z_max}] is empty or non-finite"
            )));
        }
        let delta = (z_max - z_min) / f64::from(levels - 1);
        Ok(GridSpec {
            bits: 32 - (levels - 1).leading_zeros(),
            levels,
            z_min,
            z_max,
            delta,
        })
    }

    /// The grid spanning a compander's z-range.
    pub fn for_compander(spec: &CompanderSpec, bits: u32) -> Result<Self> {
        let (lo, hi) = spec.z_range();
        Self::new(bits, lo, hi)
    }

    #[inline]
    pub fn last(&self) -> u32 {
        self.levels - 1
    }

    /// Grid value of index `i`; the last index returns `z_max` exactly.
    #[inline]
    pub fn value(&self, i: u32) -> f64 {
        debug_assert!(i < self.levels);
        if i == self.last() {
            self.z_max
        } else {
            self.z_min + f64::from(i) * self.delta
        }
    }

    #[inline]
    pub fn is_interior(&self, i: u32) -> bool {
        i > 0 && i < self.last()
    }

    /// Round-to-nearest onto the grid, ties to the even index. Values
    /// outside `[z_min, z_max]` clamp to the end indices and report a clip.
    pub fn quantize_uniform(&self, z: f64) -> Result<Rounded> {
        finite("uniform quantizer input", z)?;
        Ok(self.round_finite(z))
    }

    #[inline]
    pub(crate) fn round_finite(&self, z: f64) -> Rounded {
        let last = self.last();
        if z <= self.z_min {
            return Rounded {
                index: 0,
                clipped: z < self.z_min,
            };
        }
        if z >= self.z_max {
            return Rounded {
                index: last,
                clipped: z > self.z_max,
            };
        }
        let t = (z - self.z_min) / self.delta;
        let guess = t.round_ties_even().clamp(0.0, f64::from(last)) as u32;
        // Settle against the reconstructed values so grid points are exact
        // fixed points regardless of how `t` rounded.
        let mut best = guess;
        let mut best_dist = (z - self.value(guess)).abs();
        let lower = guess.checked_sub(1);
        let upper = (guess < last).then_some(guess + 1);
        for cand in [lower, upper].into_iter().flatten() {
            let dist = (z - self.value(cand)).abs();
            if dist < best_dist || (dist == best_dist && cand % 2 == 0) {
                best = cand;
                best_dist = dist;
            }
        }
        Rounded {
            index: best,
            clipped: false,
        }
    }
}

/// Per-block max-abs scales, floored at [`SCALE_FLOOR`].
pub fn calibrate_scales(x: &[f64], block_size: usize) -> Result<Vec<f64>> {
    if block_size == 0 {
        return Err(Error::Config("block size must be at least 1".into()));
    }
    x.chunks(block_size)
        .map(|block| {
            block.iter().try_fold(SCALE_FLOOR, |acc, &v| {
                finite("calibration input", v).map(|v| acc.max(v.abs()))
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCalibration {
    pub block_size: usize,
    pub scales: Vec<f64>,
    /// Steps between recalibrations; 0 disables recalibration.
    pub recalib_period: usize,
}

impl BlockCalibration {
    pub fn from_weights(x: &[f64], block_size: usize, recalib_period: usize) -> Result<Self> {
        Ok(BlockCalibration {
            block_size,
            scales: calibrate_scales(x, block_size)?,
            recalib_period,
        })
    }

    /// One block of the given scale covering `d` coordinates.
    pub fn uniform(d: usize, scale: f64) -> Self {
        BlockCalibration {
            block_size: d.max(1),
            scales: vec![scale],
            recalib_period: 0,
        }
    }

    #[inline]
    pub fn scale_of(&self, j: usize) -> f64 {
        self.scales[j / self.block_size]
    }

    pub fn recalibrate(&mut self, x: &[f64]) -> Result<()> {
        self.scales = calibrate_scales(x, self.block_size)?;
        Ok(())
    }

    /// Whether a recalibration is due after `step` completed steps.
    pub fn due(&self, step: usize) -> bool {
        self.recalib_period > 0 && step > 0 && step.is_multiple_of(self.recalib_period)
    }
}

/// The composite quantizer `Q = phi_inv ∘ U ∘ phi`, coordinatewise with
/// per-block compander scales.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantizer {
    /// Family and strength; `clip_scale` is replaced by the block scale.
    pub compander: CompanderSpec,
    pub grid: GridSpec,
    calib: BlockCalibration,
    /// `phi_inv(z_i)` per block, row-major, when the grid is small enough.
    table: Vec<f64>,
}

/// Largest grid whose expanded levels are tabulated per block.
const TABLE_MAX_LEVELS: u32 = 1 << 12;

impl Quantizer {
    pub fn new(compander: CompanderSpec, grid: GridSpec, calib: BlockCalibration) -> Result<Self> {
        compander.validate()?;
        let (lo, hi) = compander.z_range();
        if grid.z_min != lo || grid.z_max != hi {
            return Err(Error::Config(format!(
                "grid range [{}, {}] does not match {} z-range [{lo}, {hi}]",
                grid.z_min, grid.z_max, compander.family
            )));
        }
        if calib.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config("block scales must be positive".into()));
        }
        let mut q = Quantizer {
            compander,
            grid,
            calib,
            table: Vec::new(),
        };
        q.rebuild_table();
        Ok(q)
    }

    fn rebuild_table(&mut self) {
        self.table.clear();
        if self.grid.levels > TABLE_MAX_LEVELS {
            return;
        }
        for &scale in &self.calib.scales {
            let c = self.compander.with_scale(scale);
            self.table
                .extend((0..self.grid.levels).map(|i| c.phi_inv_unchecked(self.grid.value(i))));
        }
    }

    pub fn calib(&self) -> &BlockCalibration {
        &self.calib
    }

    /// Refits the block scales to `x`.
    pub fn recalibrate(&mut self, x: &[f64]) -> Result<()> {
        self.calib.recalibrate(x)?;
        self.rebuild_table();
        Ok(())
    }

    /// Builds the grid for `bits` and calibrates block scales from `x`.
    pub fn calibrated(
        family: CompanderFamily,
        strength: f64,
        bits: u32,
        x: &[f64],
        block_size: usize,
        recalib_period: usize,
    ) -> Result<Self> {
        let compander = CompanderSpec::new(family, strength, 1.0)?;
        let grid = GridSpec::for_compander(&compander, bits)?;
        let calib = BlockCalibration::from_weights(x, block_size, recalib_period)?;
        Self::new(compander, grid, calib)
    }

    #[inline]
    pub fn compander_at(&self, j: usize) -> CompanderSpec {
        self.compander.with_scale(self.calib.scale_of(j))
    }

    /// `U(phi(x_j))` for coordinate `j`.
    #[inline]
    pub fn index_of(&self, j: usize, x: f64, clips: &mut u64) -> Result<u32> {
        let z = self.compander_at(j).phi_counted(x, clips)?;
        let r = self.grid.round_finite(z);
        *clips += r.clipped as u64;
        Ok(r.index)
    }

    pub fn indices(&self, x: &[f64], clips: &mut u64) -> Result<Vec<u32>> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| self.index_of(j, v, clips))
            .collect()
    }

    /// `Q(x)`.
    pub fn quantize(&self, x: &[f64], clips: &mut u64) -> Result<Vec<f64>> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| {
                let i = self.index_of(j, v, clips)?;
                Ok(self.expand_index(j, i))
            })
            .collect()
    }

    /// `phi(x)` coordinatewise.
    pub fn compress(&self, x: &[f64], clips: &mut u64) -> Result<Vec<f64>> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| self.compander_at(j).phi_counted(v, clips))
            .collect()
    }

    #[inline]
    pub fn expand_index(&self, j: usize, i: u32) -> f64 {
        if self.table.is_empty() {
            return self.compander_at(j).phi_inv_unchecked(self.grid.value(i));
        }
        let block = j / self.calib.block_size;
        self.table[block * self.grid.levels as usize + i as usize]
    }

    pub fn expand_indices(&self, indices: &[u32]) -> Vec<f64> {
        indices
            .iter()
            .enumerate()
            .map(|(j, &i)| self.expand_index(j, i))
            .collect()
    }

    /// `phi_inv(z_j)` after clamping `z_j` into the z-range.
    #[inline]
    pub fn expand_z(&self, j: usize, z: f64, clips: &mut u64) -> Result<f64> {
        finite("expander input", z)?;
        let clamped = z.clamp(self.grid.z_min, self.grid.z_max);
        *clips += (clamped != z) as u64;
        Ok(self.compander_at(j).phi_inv_unchecked(clamped))
    }

    pub fn expand(&self, z: &[f64], clips: &mut u64) -> Result<Vec<f64>> {
        z.iter()
            .enumerate()
            .map(|(j, &v)| self.expand_z(j, v, clips))
            .collect()
    }

    /// `U(z)` coordinatewise.
    pub fn round_z(&self, z: &[f64], clips: &mut u64) -> Result<Vec<u32>> {
        z.iter()
            .map(|&v| {
                let r = self.grid.quantize_uniform(v)?;
                *clips += r.clipped as u64;
                Ok(r.index)
            })
            .collect()
    }

    /// `d(phi_inv)/dz` at the weight `x_j` of coordinate `j`.
    #[inline]
    pub fn expander_slope(&self, j: usize, x: f64) -> f64 {
        1.0 / self.compander_at(j).phi_prime(x)
    }
}

/// An exactly grid-indexed z iterate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZState {
    pub indices: Vec<u32>,
}

impl ZState {
    /// `U(phi(x))`.
    pub fn from_weights(quantizer: &Quantizer, x: &[f64], clips: &mut u64) -> Result<Self> {
        Ok(ZState {
            indices: quantizer.indices(x, clips)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.indices.len()
    }

    pub fn z_values(&self, grid: &GridSpec) -> Vec<f64> {
        self.indices.iter().map(|&i| grid.value(i)).collect()
    }

    pub fn weights(&self, quantizer: &Quantizer) -> Vec<f64> {
        quantizer.expand_indices(&self.indices)
    }

    pub fn all_interior(&self, grid: &GridSpec) -> bool {
        self.indices.iter().all(|&i| grid.is_interior(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mu(c: f64) -> CompanderSpec {
        CompanderSpec::mu_law(c, 1.0).unwrap()
    }

    #[test]
    fn mu_law_examples() {
        let s = mu(255.0);
        assert_eq!(s.phi(0.0).unwrap(), 0.0);
        assert_eq!(s.phi(1.0).unwrap(), 1.0);
        // high-precision value of ln(128.5)/ln(256)
        let expected = 0.875_703_068_649_234_8;
        assert!((s.phi(0.5).unwrap() - expected).abs() < 1e-15);
        assert!((s.phi_inv(1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identity_and_a_law_examples() {
        let id = CompanderSpec::identity(1.0).unwrap();
        assert_eq!(id.phi_inv(0.25).unwrap(), 0.25);
        let a = CompanderSpec::a_law(87.6, 1.0).unwrap();
        let back = a.phi_inv(a.phi(0.3).unwrap()).unwrap();
        assert!((back - 0.3).abs() < 1e-15);
        // both branches against high-precision evaluation
        assert!((a.phi(0.3).unwrap() - 0.780_007_128_957_178_2).abs() < 1e-15);
        assert!((a.phi(0.005).unwrap() - 0.080_032_436_920_951).abs() < 1e-15);
    }

    #[test]
    fn gaussian_quantile_range_and_value() {
        let g = CompanderSpec::gaussian_quantile(4.0, 1.0).unwrap();
        let (lo, hi) = g.z_range();
        assert!((lo - 3.167_124_183_311_992e-5).abs() < 1e-18);
        assert!((hi - 0.999_968_328_758_166_9).abs() < 1e-15);
        assert_eq!(g.x_bound(), 1.0);
        assert!((g.phi(0.3).unwrap() - 0.884_930_329_778_291_7).abs() < 1e-14);
        assert_eq!(g.phi(1.0).unwrap(), hi);
        assert_eq!(g.phi(-1.0).unwrap(), lo);
    }

    #[test]
    fn configuration_errors() {
        assert!(CompanderSpec::mu_law(0.0, 1.0).is_err());
        assert!(CompanderSpec::mu_law(255.0, -1.0).is_err());
        assert!(CompanderSpec::a_law(0.5, 1.0).is_err());
        assert!(mu(255.0).phi(f64::NAN).is_err());
        assert!(mu(255.0).phi_inv(1.5).is_err());
        assert!(GridSpec::new(0, -1.0, 1.0).is_err());
        assert!(GridSpec::new(2, 1.0, 1.0).is_err());
    }

    #[test]
    fn clamp_counts_clip_events() {
        let s = mu(255.0);
        let mut clips = 0;
        assert_eq!(s.phi_counted(3.0, &mut clips).unwrap(), 1.0);
        assert_eq!(
            s.phi_counted(-0.5, &mut clips).unwrap(),
            -s.phi(0.5).unwrap()
        );
        assert_eq!(clips, 1);
    }

    #[test]
    fn quantize_uniform_examples() {
        let g = GridSpec::new(2, -1.0, 1.0).unwrap();
        assert_eq!(g.levels, 4);
        let g5 = GridSpec::with_levels(5, -1.0, 1.0).unwrap();
        assert_eq!((g5.delta, g5.bits), (0.5, 3));
        assert_eq!(g5.quantize_uniform(0.26).unwrap().index, 3);
        assert_eq!(g5.quantize_uniform(0.5).unwrap().index, 3);
        assert_eq!(g5.value(3), 0.5);
        assert_eq!(g5.quantize_uniform(0.25).unwrap().index, 2);
        assert_eq!(g5.quantize_uniform(-0.75).unwrap().index, 0);
        let r = g.quantize_uniform(7.0).unwrap();
        assert_eq!((r.index, r.clipped), (3, true));
        assert!(g.quantize_uniform(f64::INFINITY).is_err());
        assert_eq!(g.value(0), -1.0);
        assert_eq!(g.value(3), 1.0);
    }

    #[test]
    fn quantize_q_examples() {
        let compander = CompanderSpec::identity(1.0).unwrap();
        let grid = GridSpec::with_levels(5, -1.0, 1.0).unwrap();
        let q = Quantizer::new(compander, grid, BlockCalibration::uniform(2, 1.0)).unwrap();
        let mut clips = 0;
        assert_eq!(
            q.quantize(&[0.26, -0.9], &mut clips).unwrap(),
            vec![0.5, -1.0]
        );
        assert_eq!(clips, 0);

        // 2-bit mu-law at x = 0.3: z = 0.7845..., nearest level z = 1
        let q = Quantizer::calibrated(
            CompanderFamily::MuLaw,
            255.0,
            2,
            &[1.0, 0.0, 0.0, 0.0],
            4,
            0,
        )
        .unwrap();
        let out = q.quantize(&[0.3, 0.01, -0.05, 0.15], &mut clips).unwrap();
        let inner = 0.020_978_840_030_873_717;
        assert!((out[0] - 1.0).abs() < 1e-15);
        assert!((out[1] - inner).abs() < 1e-15);
        assert!((out[2] + inner).abs() < 1e-15);
        assert!((out[3] - inner).abs() < 1e-15);
    }

    #[test]
    fn calibrate_scales_examples() {
        assert_eq!(calibrate_scales(&[0.1, -0.4, 0.2], 3).unwrap(), vec![0.4]);
        assert_eq!(calibrate_scales(&[0.0, 0.0], 2).unwrap(), vec![SCALE_FLOOR]);
        assert_eq!(
            calibrate_scales(&[1.0, -2.0, 0.5, 0.25], 2).unwrap(),
            vec![2.0, 0.5]
        );
        assert!(calibrate_scales(&[1.0], 0).is_err());
        let c = BlockCalibration::from_weights(&[1.0, -2.0, 0.5, 0.25, 3.0], 2, 10).unwrap();
        assert_eq!(c.scales, vec![2.0, 0.5, 3.0]);
        assert_eq!(c.scale_of(4), 3.0);
        assert!(c.due(20) && !c.due(0) && !c.due(5));
    }

    #[test]
    fn phi_prime_matches_central_difference() {
        for spec in [
            CompanderSpec::identity(1.5).unwrap(),
            CompanderSpec::mu_law(255.0, 1.5).unwrap(),
            CompanderSpec::a_law(87.6, 1.5).unwrap(),
            CompanderSpec::gaussian_quantile(4.0, 1.5).unwrap(),
        ] {
            for &x in &[-1.2, -0.4, 0.003, 0.2, 0.9, 1.4] {
                let h = 1e-7;
                let fd = (spec.phi(x + h).unwrap() - spec.phi(x - h).unwrap()) / (2.0 * h);
                let an = spec.phi_prime(x);
                assert!(
                    (fd - an).abs() <= 1e-5 * an.abs(),
                    "{:?} x={x}: {fd} vs {an}",
                    spec.family
                );
            }
        }
    }

    #[test]
    fn phi_prime_bounds_straddling_zero() {
        let s = mu(255.0);
        let (lo, hi) = s.phi_prime_bounds(-0.1, 0.3);
        assert_eq!(hi, s.phi_prime(0.0));
        assert_eq!(lo, s.phi_prime(0.3));
        let (lo, hi) = s.phi_prime_bounds(0.5, 0.2);
        assert_eq!((lo, hi), (s.phi_prime(0.5), s.phi_prime(0.2)));
    }

    #[test]
    fn one_bit_grid_has_no_interior() {
        let g = GridSpec::new(1, -1.0, 1.0).unwrap();
        assert!(!g.is_interior(0) && !g.is_interior(1));
    }
}
