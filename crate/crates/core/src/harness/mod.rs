//! Seeded closed-loop experiments against a simulated ground truth.
//!
//! A run alternates world steps, noisy measurements, hit-map updates,
//! periodic estimation rounds and movement until the posterior variance
//! drops below the threshold or the iteration budget runs out. Everything
//! random is drawn from streams derived from the run seed, so a run is
//! reproducible bit for bit regardless of the thread count.

mod config;
mod report;
mod run;

use std::path::Path;

pub use config::{ScenarioConfig, WindSpec};
pub use report::{
    run_batch, write_batch, write_kld_study, write_run, BatchReport, BatchSummary, KldRow,
};
pub use run::{kld_study, run_one, RoundRecord, RunOptions, RunOutput, RunResult, Snapshot, TrajectoryStep};

use crate::error::{Error, Result};
use crate::grid::OccupancyGrid;
use crate::hitmap::ConfidenceParams;
use crate::regions::{build_regions, Region};
use crate::wind::{potential_flow, WindField};

/// A validated configuration with its map, world wind and coarse regions.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub grid: OccupancyGrid,
    pub world_wind: WindField,
    pub source: usize,
    pub start: usize,
    pub coarse_regions: Vec<Region>,
}

impl Scenario {
    /// Reads a configuration file; relative map and wind paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let config = ScenarioConfig::load(path)?;
        Self::from_config(config, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_config(config: ScenarioConfig, base_dir: &Path) -> Result<Self> {
        let problems = config.problems();
        if !problems.is_empty() {
            return Err(Error::Config(problems));
        }
        let grid = OccupancyGrid::load(base_dir.join(&config.map))?;
        let wind = match &config.wind {
            WindSpec::Uniform(_) => None,
            WindSpec::Csv(p) => {
                let path = base_dir.join(p);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                Some(WindField::from_csv(&grid, &text)?)
            }
        };
        Self::new(config, grid, wind)
    }

    /// Builds a scenario from an in-memory map. `world_wind` overrides the
    /// configured wind when given.
    pub fn new(config: ScenarioConfig, grid: OccupancyGrid, world_wind: Option<WindField>) -> Result<Self> {
        let mut problems = config.problems();
        let mut cell = |(x, y): (usize, usize), role: &str| {
            if x >= grid.width() || y >= grid.height() {
                problems.push(format!("{role} ({x}, {y}) lies outside the {}×{} map", grid.width(), grid.height()));
                None
            } else if !grid.is_free(grid.index(x, y)) {
                problems.push(format!("{role} ({x}, {y}) is an occupied cell"));
                None
            } else {
                Some(grid.index(x, y))
            }
        };
        let source = cell(config.source, "source");
        let start = cell(config.start, "start");
        let (source, start) = match (source, start) {
            (Some(s), Some(t)) if problems.is_empty() => (s, t),
            _ => return Err(Error::Config(problems)),
        };
        let world_wind = match (world_wind, &config.wind) {
            (Some(w), _) => w,
            (None, WindSpec::Uniform(v)) => potential_flow(&grid, *v)?,
            (None, WindSpec::Csv(p)) => {
                return Err(Error::Config(vec![format!(
                    "wind file {} was not loaded; use Scenario::from_config",
                    p.display()
                )]))
            }
        };
        if world_wind.len() != grid.len() {
            return Err(Error::Config(vec!["world wind does not match the map".into()]));
        }
        let coarse_regions = build_regions(&grid, config.max_region_size);
        Ok(Self {
            config,
            grid,
            world_wind,
            source,
            start,
            coarse_regions,
        })
    }

    pub fn confidence(&self) -> ConfidenceParams {
        let mut c = ConfidenceParams::for_grid(&self.grid);
        if let Some(s) = self.config.confidence_sigma {
            c.sigma = s;
        }
        c.sigma_omega = self.config.confidence_sigma_omega;
        c
    }
}
