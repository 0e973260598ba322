//! Simplified 2D filament dispersion.
//!
//! Filaments are released at the source cell center, advected by the wind of
//! the cell they are in plus a Gaussian velocity perturbation, and reflected
//! off occupied cells. Each filament is a disc whose radius grows linearly
//! with age. A cell is "in gas" at an instant when its center lies inside at
//! least one disc; the plume prediction is the fraction of recorded instants
//! each cell spends in gas.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::OccupancyGrid;
use crate::wind::WindField;

// Guards the step-count and emission arithmetic against products such as
// 10 · (3 · 0.1) landing just below an integer.
const TIME_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimParams {
    /// Time step (s).
    pub dt: f64,
    /// Simulated time (s).
    pub duration: f64,
    /// Filaments released per second.
    pub emission_rate: f64,
    /// Radius (m) at release.
    pub r0: f64,
    /// Radius growth (m/s).
    pub growth_rate: f64,
    /// Per-axis standard deviation (m/s) of the per-step velocity perturbation.
    pub turbulence_std: f64,
    pub seed: u64,
    /// Initial time (s) excluded from the hit frequencies.
    pub warmup: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            duration: 30.0,
            emission_rate: 10.0,
            r0: 0.1,
            growth_rate: 0.02,
            turbulence_std: 0.1,
            seed: 0,
            warmup: 5.0,
        }
    }
}

impl SimParams {
    /// Checks everything a running simulation needs; `duration` is only
    /// required by [`simulate_plume`], see [`SimParams::validate`].
    pub fn validate_motion(&self) -> Result<()> {
        let finite = [
            self.dt,
            self.emission_rate,
            self.r0,
            self.growth_rate,
            self.turbulence_std,
            self.warmup,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation("simulation", "parameters must be finite"));
        }
        if self.dt <= 0.0 || self.emission_rate <= 0.0 || self.r0 <= 0.0 {
            return Err(Error::validation("simulation", "dt, emission_rate and r0 must be positive"));
        }
        if self.growth_rate < 0.0 || self.turbulence_std < 0.0 || self.warmup < 0.0 {
            return Err(Error::validation(
                "simulation",
                "growth_rate, turbulence_std and warmup must be non-negative",
            ));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_motion()?;
        if !self.duration.is_finite() || self.recorded_steps() == 0 {
            return Err(Error::validation(
                "simulation",
                format!(
                    "duration {} must exceed warmup {} by at least one step",
                    self.duration, self.warmup
                ),
            ));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        (self.duration / self.dt + TIME_EPS).floor() as u64
    }

    pub fn is_recorded(&self, step: u64) -> bool {
        step as f64 * self.dt > self.warmup + TIME_EPS
    }

    pub fn recorded_steps(&self) -> u64 {
        (1..=self.total_steps()).filter(|&s| self.is_recorded(s)).count() as u64
    }

    /// Number of filaments released by time `t`: `floor(emission_rate·t)`.
    pub fn released_by(&self, t: f64) -> u64 {
        (self.emission_rate * t + TIME_EPS).floor() as u64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Filament {
    pub position: [f64; 2],
    pub age: f64,
}

impl Filament {
    #[inline]
    pub fn radius(&self, params: &SimParams) -> f64 {
        params.r0 + params.growth_rate * self.age
    }
}

/// A running filament simulation for one source.
#[derive(Clone, Debug)]
pub struct FilamentSim {
    params: SimParams,
    source_position: [f64; 2],
    filaments: Vec<Filament>,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    step: u64,
    released: u64,
}

impl FilamentSim {
    pub fn new(grid: &OccupancyGrid, source: usize, params: SimParams) -> Result<Self> {
        params.validate_motion()?;
        grid.require_free(source, "source")?;
        let noise = Normal::new(0.0, params.turbulence_std)
            .map_err(|e| Error::validation("simulation", e.to_string()))?;
        Ok(Self {
            params,
            source_position: grid.center(source),
            filaments: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            noise,
            step: 0,
            released: 0,
        })
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn filaments(&self) -> &[Filament] {
        &self.filaments
    }

    /// Filaments released so far, including any that left the grid.
    pub fn released(&self) -> u64 {
        self.released
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.params.dt
    }

    /// Advances one time step: move and age existing filaments, then release
    /// new ones at the source.
    pub fn step(&mut self, grid: &OccupancyGrid, wind: &WindField) {
        let dt = self.params.dt;
        let mut kept = Vec::with_capacity(self.filaments.len() + 4);
        for f in self.filaments.drain(..) {
            let v = grid.cell_at(f.position).map_or([0.0, 0.0], |c| wind.at(c));
            let disp = [
                (v[0] + self.noise.sample(&mut self.rng)) * dt,
                (v[1] + self.noise.sample(&mut self.rng)) * dt,
            ];
            if let Some(position) = displace(grid, f.position, disp) {
                kept.push(Filament {
                    position,
                    age: f.age + dt,
                });
            }
        }
        self.filaments = kept;
        self.step += 1;
        let target = self.params.released_by(self.time());
        while self.released < target {
            self.filaments.push(Filament {
                position: self.source_position,
                age: 0.0,
            });
            self.released += 1;
        }
    }

    /// Calls `visit` for every free cell whose center lies within some
    /// filament's radius; a cell may be visited more than once.
    pub fn for_each_covered_cell(&self, grid: &OccupancyGrid, mut visit: impl FnMut(usize)) {
        let h = grid.cell_size();
        let [ox, oy] = grid.origin();
        let (w, ht) = (grid.width() as isize, grid.height() as isize);
        for f in &self.filaments {
            let r = f.radius(&self.params);
            let r2 = r * r;
            let [px, py] = f.position;
            let x0 = (((px - r - ox) / h).ceil() as isize).max(0);
            let x1 = (((px + r - ox) / h).floor() as isize).min(w - 1);
            let y0 = (((py - r - oy) / h).ceil() as isize).max(0);
            let y1 = (((py + r - oy) / h).floor() as isize).min(ht - 1);
            for y in y0..=y1 {
                let dy = oy + y as f64 * h - py;
                for x in x0..=x1 {
                    let dx = ox + x as f64 * h - px;
                    if dx * dx + dy * dy <= r2 {
                        let c = y as usize * grid.width() + x as usize;
                        if grid.is_free(c) {
                            visit(c);
                        }
                    }
                }
            }
        }
    }

    /// Whether the center of `cell` lies within any filament.
    pub fn covers(&self, grid: &OccupancyGrid, cell: usize) -> bool {
        let [cx, cy] = grid.center(cell);
        self.filaments.iter().any(|f| {
            let r = f.radius(&self.params);
            let (dx, dy) = (f.position[0] - cx, f.position[1] - cy);
            dx * dx + dy * dy <= r * r
        })
    }
}

/// Moves a point by `disp`, reflecting off occupied cells. Returns `None`
/// once the point leaves the grid.
fn displace(grid: &OccupancyGrid, mut pos: [f64; 2], disp: [f64; 2]) -> Option<[f64; 2]> {
    let half = 0.5 * grid.cell_size();
    let substeps = (disp[0].abs().max(disp[1].abs()) / half).ceil().max(1.0);
    let sub = [disp[0] / substeps, disp[1] / substeps];
    for _ in 0..substeps as usize {
        pos = move_along(grid, pos, 0, sub[0])?;
        pos = move_along(grid, pos, 1, sub[1])?;
    }
    Some(pos)
}

// |d| is at most half a cell, so at most one face is crossed.
fn move_along(grid: &OccupancyGrid, pos: [f64; 2], axis: usize, d: f64) -> Option<[f64; 2]> {
    if d == 0.0 {
        return Some(pos);
    }
    let mut next = pos;
    next[axis] += d;
    let cell = grid.cell_at(next)?;
    if grid.is_free(cell) {
        return Some(next);
    }
    let h = grid.cell_size();
    let origin = grid.origin()[axis];
    let current = ((pos[axis] - origin) / h + 0.5).floor();
    let face = origin + (current + 0.5 * d.signum()) * h;
    let mut reflected = pos;
    reflected[axis] = 2.0 * face - next[axis];
    match grid.cell_at(reflected) {
        Some(c) if grid.is_free(c) => Some(reflected),
        _ => Some(pos),
    }
}

/// Per-cell fraction of recorded instants spent in gas, for one source.
#[derive(Clone, Debug, PartialEq)]
pub struct PlumePrediction {
    pub source: usize,
    /// Indexed by cell; occupied cells stay at zero.
    pub freq: Vec<f64>,
}

impl PlumePrediction {
    /// CSV with columns `cell_x,cell_y,freq`, free cells only.
    pub fn to_csv(&self, grid: &OccupancyGrid) -> String {
        let mut out = String::from("cell_x,cell_y,freq\n");
        for c in grid.free_cells() {
            let (x, y) = grid.coords(c);
            let _ = writeln!(out, "{x},{y},{}", self.freq[c]);
        }
        out
    }
}

/// Runs a full simulation with the source at `source` and returns the hit
/// frequency of every cell. Deterministic for a fixed `params.seed`.
pub fn simulate_plume(
    grid: &OccupancyGrid,
    wind: &WindField,
    source: usize,
    params: &SimParams,
) -> Result<PlumePrediction> {
    params.validate()?;
    let mut sim = FilamentSim::new(grid, source, *params)?;
    let mut counts = vec![0u32; grid.len()];
    let mut last_seen = vec![0u64; grid.len()];
    let mut recorded = 0u32;
    for step in 1..=params.total_steps() {
        sim.step(grid, wind);
        if !params.is_recorded(step) {
            continue;
        }
        recorded += 1;
        sim.for_each_covered_cell(grid, |c| {
            if last_seen[c] != step {
                last_seen[c] = step;
                counts[c] += 1;
            }
        });
    }
    let denom = recorded as f64;
    Ok(PlumePrediction {
        source,
        freq: counts.into_iter().map(|n| n as f64 / denom).collect(),
    })
}

/// Detector and anemometer imperfections of the simulated robot.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorNoise {
    /// Probability of reporting gas when there is none.
    pub false_positive: f64,
    /// Probability of missing gas that is present.
    pub false_negative: f64,
    /// Per-axis standard deviation (m/s) added to wind readings.
    pub wind_std: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            false_positive: 0.01,
            false_negative: 0.05,
            wind_std: 0.05,
        }
    }
}

impl SensorNoise {
    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.false_positive) || !unit(self.false_negative) {
            return Err(Error::validation("sensor noise", "flip probabilities must lie in [0, 1]"));
        }
        if !(self.wind_std.is_finite() && self.wind_std >= 0.0) {
            return Err(Error::validation("sensor noise", "wind_std must be non-negative"));
        }
        Ok(())
    }
}

/// The ground-truth environment: a filament simulation that keeps running
/// while the robot explores it.
#[derive(Clone, Debug)]
pub struct World {
    grid: OccupancyGrid,
    wind: WindField,
    sim: FilamentSim,
}

impl World {
    /// Creates the world and runs it through `params.warmup`. The world runs
    /// as long as it is advanced, so `params.duration` is not used.
    pub fn new(grid: OccupancyGrid, wind: WindField, source: usize, params: SimParams) -> Result<Self> {
        let sim = FilamentSim::new(&grid, source, params)?;
        let mut world = Self { grid, wind, sim };
        while world.sim.time() + TIME_EPS < params.warmup {
            world.sim.step(&world.grid, &world.wind);
        }
        Ok(world)
    }

    pub fn advance(&mut self, steps: usize) {
        for _ in 0..steps {
            self.sim.step(&self.grid, &self.wind);
        }
    }

    pub fn grid(&self) -> &OccupancyGrid {
        &self.grid
    }

    pub fn wind(&self) -> &WindField {
        &self.wind
    }

    pub fn simulation(&self) -> &FilamentSim {
        &self.sim
    }

    pub fn gas_at(&self, cell: usize) -> bool {
        self.sim.covers(&self.grid, cell)
    }
}

/// Reads the detector and the anemometer at `cell`.
///
/// The hit is the true gas indicator flipped with the matching error
/// probability; the wind is the true wind plus Gaussian noise.
pub fn sample_ground_truth<R: Rng + ?Sized>(
    world: &World,
    cell: usize,
    noise: &SensorNoise,
    rng: &mut R,
) -> Result<(bool, [f64; 2])> {
    world.grid.require_free(cell, "measurement")?;
    let present = world.gas_at(cell);
    let u: f64 = rng.random();
    let hit = if present {
        u >= noise.false_negative
    } else {
        u < noise.false_positive
    };
    let wn = Normal::new(0.0, noise.wind_std).map_err(|e| Error::validation("sensor noise", e.to_string()))?;
    let v = world.wind.at(cell);
    Ok((hit, [v[0] + wn.sample(rng), v[1] + wn.sample(rng)]))
}
