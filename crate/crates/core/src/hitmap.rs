//! Probabilistic gas-hit map.
//!
//! Each free cell holds the log-odds of the binary event "this cell contains
//! detectable gas". A measurement at cell `k` updates every cell `i` through
//! an inverse sensor model that interpolates between the hit/miss conditional
//! and the prior, weighted by a wind-stretched Gaussian evaluated along the
//! shortest free path from `k` to `i`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{GraphPartition, OccupancyGrid};
use crate::wind::WindField;

/// Largest representable confidence below one.
pub const ALPHA_MAX: f64 = 1.0 - f64::EPSILON;

/// Shape of the measurement influence kernel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelParams {
    /// Standard deviation (m) with no wind.
    pub sigma0: f64,
    /// Along-wind stretch per m/s of wind speed.
    pub stretch_gain: f64,
    /// Path length (m) beyond which a measurement has no influence.
    pub max_influence_radius: f64,
}

impl KernelParams {
    /// Cutoff at four standard deviations of the most stretched kernel
    /// expected for winds up to `max_wind` m/s.
    pub fn new(sigma0: f64, stretch_gain: f64, max_wind: f64) -> Result<Self> {
        let params = Self {
            sigma0,
            stretch_gain,
            max_influence_radius: 4.0 * sigma0 * (1.0 + stretch_gain * max_wind.max(0.0)),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma0.is_finite() && self.sigma0 > 0.0) {
            return Err(Error::validation("kernel", "sigma0 must be positive"));
        }
        if !(self.stretch_gain.is_finite() && self.stretch_gain >= 0.0) {
            return Err(Error::validation("kernel", "stretch_gain must be non-negative"));
        }
        if !(self.max_influence_radius.is_finite() && self.max_influence_radius >= 3.0 * self.sigma0) {
            return Err(Error::validation(
                "kernel",
                "max_influence_radius must be at least 3·sigma0",
            ));
        }
        Ok(())
    }
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            sigma0: 0.3,
            stretch_gain: 1.0,
            max_influence_radius: 2.4,
        }
    }
}

/// Symmetric 2×2 covariance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Covariance2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Covariance2 {
    pub fn determinant(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// `dᵀ Σ⁻¹ d`.
    pub fn mahalanobis_sq(&self, d: [f64; 2]) -> f64 {
        let det = self.determinant();
        (self.yy * d[0] * d[0] - 2.0 * self.xy * d[0] * d[1] + self.xx * d[1] * d[1]) / det
    }
}

/// Gaussian covariance stretched along the wind: the along-wind standard
/// deviation is `σ₀(1 + stretch_gain·|w|)`, the cross-wind one stays `σ₀`.
pub fn kernel_covariance(wind: [f64; 2], params: &KernelParams) -> Covariance2 {
    let speed = wind[0].hypot(wind[1]);
    let cross = params.sigma0 * params.sigma0;
    if speed == 0.0 {
        return Covariance2 {
            xx: cross,
            xy: 0.0,
            yy: cross,
        };
    }
    let along_sd = params.sigma0 * (1.0 + params.stretch_gain * speed);
    let extra = along_sd * along_sd - cross;
    let (ux, uy) = (wind[0] / speed, wind[1] / speed);
    Covariance2 {
        xx: cross + extra * ux * ux,
        xy: extra * ux * uy,
        yy: cross + extra * uy * uy,
    }
}

/// Influence `λ_ik ∈ [0, 1]` of a measurement at the partition root `k` on
/// cell `i`, evaluated at the displacement `v̂_n·δ_ik` and scaled so that
/// `λ_kk = 1`.
pub fn influence(cell: usize, partition: &GraphPartition, wind: [f64; 2], params: &KernelParams) -> f64 {
    let Some(delta) = partition.path_length(cell) else {
        return 0.0;
    };
    if delta > params.max_influence_radius {
        return 0.0;
    }
    if delta == 0.0 {
        return 1.0;
    }
    let dir = partition.direction(cell);
    let d = [dir[0] * delta, dir[1] * delta];
    (-0.5 * kernel_covariance(wind, params).mahalanobis_sq(d)).exp()
}

/// `p(H_i | z_k) = λ·P* + (1 − λ)·p(H_i)` with `P*` the hit or miss conditional.
#[inline]
pub fn conditional_hit(prior: f64, lambda: f64, hit: bool, p_hit: f64, p_miss: f64) -> f64 {
    let target = if hit { p_hit } else { p_miss };
    lambda * target + (1.0 - lambda) * prior
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Probability recovered from log-odds, kept strictly inside (0, 1).
#[inline]
pub fn probability(log_odds: f64) -> f64 {
    let l = log_odds.clamp(-36.0, 36.0);
    if l >= 0.0 {
        1.0 - 1.0 / (1.0 + l.exp())
    } else {
        let e = l.exp();
        e / (1.0 + e)
    }
}

/// Prior and the two extreme conditionals of the inverse sensor model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorModel {
    pub prior: f64,
    pub p_hit: f64,
    pub p_miss: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            prior: 0.1,
            p_hit: 0.8,
            p_miss: 0.02,
        }
    }
}

impl SensorModel {
    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| p > 0.0 && p < 1.0;
        if !(unit(self.prior) && unit(self.p_hit) && unit(self.p_miss)) {
            return Err(Error::validation("sensor model", "probabilities must lie in (0, 1)"));
        }
        if !(self.p_miss < self.prior && self.prior < self.p_hit) {
            return Err(Error::validation(
                "sensor model",
                format!(
                    "need p_miss < prior < p_hit, got {} / {} / {}",
                    self.p_miss, self.prior, self.p_hit
                ),
            ));
        }
        Ok(())
    }
}

/// Parameters of the confidence measure `α`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConfidenceParams {
    /// Distance scale (m) of the proximity kernel.
    pub sigma: f64,
    /// Normalizer of the accumulated proximity mass.
    pub sigma_omega: f64,
}

impl ConfidenceParams {
    pub fn for_grid(grid: &OccupancyGrid) -> Self {
        Self {
            sigma: 2.0 * grid.cell_size(),
            sigma_omega: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite() && self.sigma_omega > 0.0 && self.sigma_omega.is_finite()) {
            return Err(Error::validation("confidence", "sigma and sigma_omega must be positive"));
        }
        Ok(())
    }
}

/// One observation: binary hit plus local wind at a cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Measurement {
    pub cell: usize,
    pub hit: bool,
    pub wind: [f64; 2],
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HitMap {
    log_odds: Vec<f64>,
    omega: Vec<f64>,
    alpha: Vec<f64>,
    prior_log_odds: f64,
    sensor: SensorModel,
    confidence: ConfidenceParams,
}

impl HitMap {
    pub fn new(grid: &OccupancyGrid, sensor: SensorModel, confidence: ConfidenceParams) -> Result<Self> {
        sensor.validate()?;
        confidence.validate()?;
        let prior_log_odds = logit(sensor.prior);
        Ok(Self {
            log_odds: vec![prior_log_odds; grid.len()],
            omega: vec![0.0; grid.len()],
            alpha: vec![0.0; grid.len()],
            prior_log_odds,
            sensor,
            confidence,
        })
    }

    pub fn len(&self) -> usize {
        self.log_odds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_odds.is_empty()
    }

    pub fn sensor(&self) -> &SensorModel {
        &self.sensor
    }

    pub fn confidence_params(&self) -> &ConfidenceParams {
        &self.confidence
    }

    pub fn log_odds(&self) -> &[f64] {
        &self.log_odds
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn probability(&self, cell: usize) -> f64 {
        probability(self.log_odds[cell])
    }

    /// Folds one measurement into the map. `partition` must be rooted at the
    /// measurement cell; the kernel is shaped by the wind field at that cell.
    pub fn update(
        &mut self,
        m: &Measurement,
        partition: &GraphPartition,
        wind: &WindField,
        params: &KernelParams,
    ) -> Result<()> {
        if partition.robot_cell() != m.cell {
            return Err(Error::Precondition(format!(
                "partition is rooted at cell {} but the measurement is at {}",
                partition.robot_cell(),
                m.cell
            )));
        }
        let w = wind.at(m.cell);
        let SensorModel { prior, p_hit, p_miss } = self.sensor;
        let two_var = 2.0 * self.confidence.sigma * self.confidence.sigma;
        let omega_norm = self.confidence.sigma_omega * self.confidence.sigma_omega;
        for i in 0..self.log_odds.len() {
            let lambda = influence(i, partition, w, params);
            if lambda <= 0.0 {
                continue;
            }
            let cond = conditional_hit(prior, lambda, m.hit, p_hit, p_miss);
            self.log_odds[i] += logit(cond) - self.prior_log_odds;

            let delta = partition.path_length(i).unwrap_or(f64::INFINITY);
            self.omega[i] += (-delta * delta / two_var).exp();
            let alpha = -(-self.omega[i] * self.omega[i] / omega_norm).exp_m1();
            self.alpha[i] = alpha.min(ALPHA_MAX);
        }
        Ok(())
    }

    /// `f^z_i = p(H_i | Z)` for every cell.
    pub fn hit_frequency_map(&self) -> Vec<f64> {
        self.log_odds.iter().map(|&l| probability(l)).collect()
    }

    /// CSV with columns `cell_x,cell_y,p_hit,alpha`, free cells only.
    pub fn to_csv(&self, grid: &OccupancyGrid) -> String {
        let mut out = String::from("cell_x,cell_y,p_hit,alpha\n");
        for c in grid.free_cells() {
            let (x, y) = grid.coords(c);
            let _ = writeln!(out, "{x},{y},{},{}", self.probability(c), self.alpha[c]);
        }
        out
    }
}
