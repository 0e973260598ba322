//! Scenario configuration files.
//!
//! Plain `key = value` lines grouped under `[section]` headers; `#` starts a
//! comment. Every key is optional except the map, source and start cells.
//!
//! ```text
//! [scenario]
//! map = walls20.map
//! source = 15 10
//! start = 2 3
//!
//! [wind]
//! uniform = 0.5 0
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::filament::{SensorNoise, SimParams};
use crate::hitmap::{KernelParams, SensorModel};
use crate::wind::WindParams;

/// How the ground-truth wind is produced.
#[derive(Clone, Debug, PartialEq)]
pub enum WindSpec {
    /// Potential flow entering the map with this velocity, bending around
    /// obstacles.
    Uniform([f64; 2]),
    /// Per-cell vectors from a `cell_x,cell_y,vx,vy` file.
    Csv(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub map: PathBuf,
    pub source: (usize, usize),
    pub start: (usize, usize),
    pub wind: WindSpec,
    pub convergence_variance_m2: f64,
    pub max_iterations: usize,
    pub seeds: Vec<u64>,
    /// World time steps between consecutive measurements.
    pub steps_per_iteration: usize,
    /// Measurements after which an estimation round runs even if the goal
    /// has not been reached.
    pub estimate_every: usize,
    pub rho: f64,
    pub max_region_size: usize,
    pub kernel: KernelParams,
    pub sensor: SensorModel,
    /// Confidence kernel width (m); twice the cell size when absent.
    pub confidence_sigma: Option<f64>,
    pub confidence_sigma_omega: f64,
    pub noise: SensorNoise,
    pub wind_estimation: WindParams,
    /// Candidate simulations. The seed is replaced every round.
    pub model: SimParams,
    /// Ground truth. The seed is derived from the run seed; `warmup` is the
    /// spin-up before the first measurement and `duration` is unused
    /// because the world runs for the whole experiment.
    pub world: SimParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let model = SimParams::default();
        let world = SimParams {
            emission_rate: 4.0 * model.emission_rate,
            duration: 2.0 * model.duration,
            // let the plume develop before the robot starts measuring
            warmup: model.duration,
            ..model
        };
        Self {
            map: PathBuf::new(),
            source: (0, 0),
            start: (0, 0),
            wind: WindSpec::Uniform([0.5, 0.0]),
            convergence_variance_m2: 1.0,
            max_iterations: 300,
            seeds: vec![1],
            steps_per_iteration: 5,
            estimate_every: 10,
            rho: 0.5,
            max_region_size: 8,
            kernel: KernelParams::default(),
            sensor: SensorModel::default(),
            confidence_sigma: None,
            confidence_sigma_omega: 1.0,
            noise: SensorNoise::default(),
            wind_estimation: WindParams::default(),
            model,
            world,
        }
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        line,
        message: format!("`{key}` expects a number, got `{v}`"),
    })
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(line, key, s))
        .collect()
}

fn parse_pair<T: std::str::FromStr + Copy>(line: usize, key: &str, v: &str) -> Result<(T, T)> {
    match parse_list::<T>(line, key, v)?.as_slice() {
        &[a, b] => Ok((a, b)),
        _ => Err(Error::Parse {
            line,
            message: format!("`{key}` expects two values, got `{v}`"),
        }),
    }
}

fn sim_key(p: &mut SimParams, key: &str, line: usize, v: &str) -> Result<bool> {
    let slot = match key {
        "dt" => &mut p.dt,
        "duration" => &mut p.duration,
        "emission_rate" => &mut p.emission_rate,
        "r0" => &mut p.r0,
        "growth_rate" => &mut p.growth_rate,
        "turbulence_std" => &mut p.turbulence_std,
        "warmup" => &mut p.warmup,
        _ => return Ok(false),
    };
    *slot = parse_num(line, key, v)?;
    Ok(true)
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ScenarioConfig::default();
        let mut section = String::new();
        let mut seen = std::collections::HashSet::new();
        let mut have = (false, false, false);
        let mut wind_set = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::Parse {
                    line,
                    message: format!("expected `key = value`, got `{content}`"),
                });
            };
            let (key, v) = (key.trim(), value.trim());
            if !seen.insert((section.clone(), key.to_string())) {
                return Err(Error::Parse {
                    line,
                    message: format!("`{key}` repeated in [{section}]"),
                });
            }
            let known = match (section.as_str(), key) {
                ("scenario", "map") => {
                    cfg.map = PathBuf::from(v);
                    have.0 = true;
                    true
                }
                ("scenario", "source") => {
                    cfg.source = parse_pair(line, key, v)?;
                    have.1 = true;
                    true
                }
                ("scenario", "start") => {
                    cfg.start = parse_pair(line, key, v)?;
                    have.2 = true;
                    true
                }
                ("scenario", "convergence_variance_m2") => {
                    cfg.convergence_variance_m2 = parse_num(line, key, v)?;
                    true
                }
                ("scenario", "max_iterations") => {
                    cfg.max_iterations = parse_num(line, key, v)?;
                    true
                }
                ("scenario", "seeds") => {
                    cfg.seeds = parse_list(line, key, v)?;
                    true
                }
                ("scenario", "steps_per_iteration") => {
                    cfg.steps_per_iteration = parse_num(line, key, v)?;
                    true
                }
                ("scenario", "estimate_every") => {
                    cfg.estimate_every = parse_num(line, key, v)?;
                    true
                }
                ("wind", "uniform" | "file") => {
                    if wind_set {
                        return Err(Error::Parse {
                            line,
                            message: "[wind] takes either `uniform` or `file`, not both".into(),
                        });
                    }
                    wind_set = true;
                    cfg.wind = if key == "uniform" {
                        let (x, y) = parse_pair(line, key, v)?;
                        WindSpec::Uniform([x, y])
                    } else {
                        WindSpec::Csv(PathBuf::from(v))
                    };
                    true
                }
                ("refinement", "rho") => {
                    cfg.rho = parse_num(line, key, v)?;
                    true
                }
                ("refinement", "max_region_size") => {
                    cfg.max_region_size = parse_num(line, key, v)?;
                    true
                }
                ("kernel", "sigma0") => {
                    cfg.kernel.sigma0 = parse_num(line, key, v)?;
                    true
                }
                ("kernel", "stretch_gain") => {
                    cfg.kernel.stretch_gain = parse_num(line, key, v)?;
                    true
                }
                ("kernel", "max_influence_radius") => {
                    cfg.kernel.max_influence_radius = parse_num(line, key, v)?;
                    true
                }
                ("sensor", "prior") => {
                    cfg.sensor.prior = parse_num(line, key, v)?;
                    true
                }
                ("sensor", "p_hit") => {
                    cfg.sensor.p_hit = parse_num(line, key, v)?;
                    true
                }
                ("sensor", "p_miss") => {
                    cfg.sensor.p_miss = parse_num(line, key, v)?;
                    true
                }
                ("confidence", "sigma") => {
                    cfg.confidence_sigma = Some(parse_num(line, key, v)?);
                    true
                }
                ("confidence", "sigma_omega") => {
                    cfg.confidence_sigma_omega = parse_num(line, key, v)?;
                    true
                }
                ("noise", "false_positive") => {
                    cfg.noise.false_positive = parse_num(line, key, v)?;
                    true
                }
                ("noise", "false_negative") => {
                    cfg.noise.false_negative = parse_num(line, key, v)?;
                    true
                }
                ("noise", "wind_std") => {
                    cfg.noise.wind_std = parse_num(line, key, v)?;
                    true
                }
                ("wind_estimation", "data_weight") => {
                    cfg.wind_estimation.data_weight = parse_num(line, key, v)?;
                    true
                }
                ("wind_estimation", "smoothness_weight") => {
                    cfg.wind_estimation.smoothness_weight = parse_num(line, key, v)?;
                    true
                }
                ("wind_estimation", "boundary_weight") => {
                    cfg.wind_estimation.boundary_weight = parse_num(line, key, v)?;
                    true
                }
                ("wind_estimation", "tolerance") => {
                    cfg.wind_estimation.tolerance = parse_num(line, key, v)?;
                    true
                }
                ("model", _) => sim_key(&mut cfg.model, key, line, v)?,
                ("world", _) => sim_key(&mut cfg.world, key, line, v)?,
                _ => false,
            };
            if !known {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown key `{key}` in [{section}]"),
                });
            }
        }
        let missing: Vec<String> = [(have.0, "map"), (have.1, "source"), (have.2, "start")]
            .iter()
            .filter(|(ok, _)| !ok)
            .map(|(_, k)| format!("[scenario] {k} is required"))
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(missing));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Text that [`ScenarioConfig::parse`] turns back into `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "[scenario]");
        let _ = writeln!(s, "map = {}", self.map.display());
        let _ = writeln!(s, "source = {} {}", self.source.0, self.source.1);
        let _ = writeln!(s, "start = {} {}", self.start.0, self.start.1);
        let _ = writeln!(s, "convergence_variance_m2 = {}", self.convergence_variance_m2);
        let _ = writeln!(s, "max_iterations = {}", self.max_iterations);
        let _ = writeln!(s, "seeds = {}", join(&self.seeds));
        let _ = writeln!(s, "steps_per_iteration = {}", self.steps_per_iteration);
        let _ = writeln!(s, "estimate_every = {}", self.estimate_every);
        let _ = writeln!(s, "\n[wind]");
        match &self.wind {
            WindSpec::Uniform([x, y]) => writeln!(s, "uniform = {x} {y}"),
            WindSpec::Csv(p) => writeln!(s, "file = {}", p.display()),
        }
        .ok();
        let _ = writeln!(s, "\n[refinement]");
        let _ = writeln!(s, "rho = {}", self.rho);
        let _ = writeln!(s, "max_region_size = {}", self.max_region_size);
        let _ = writeln!(s, "\n[kernel]");
        let _ = writeln!(s, "sigma0 = {}", self.kernel.sigma0);
        let _ = writeln!(s, "stretch_gain = {}", self.kernel.stretch_gain);
        let _ = writeln!(s, "max_influence_radius = {}", self.kernel.max_influence_radius);
        let _ = writeln!(s, "\n[sensor]");
        let _ = writeln!(s, "prior = {}", self.sensor.prior);
        let _ = writeln!(s, "p_hit = {}", self.sensor.p_hit);
        let _ = writeln!(s, "p_miss = {}", self.sensor.p_miss);
        let _ = writeln!(s, "\n[confidence]");
        if let Some(sigma) = self.confidence_sigma {
            let _ = writeln!(s, "sigma = {sigma}");
        }
        let _ = writeln!(s, "sigma_omega = {}", self.confidence_sigma_omega);
        let _ = writeln!(s, "\n[noise]");
        let _ = writeln!(s, "false_positive = {}", self.noise.false_positive);
        let _ = writeln!(s, "false_negative = {}", self.noise.false_negative);
        let _ = writeln!(s, "wind_std = {}", self.noise.wind_std);
        let _ = writeln!(s, "\n[wind_estimation]");
        let w = &self.wind_estimation;
        let _ = writeln!(s, "data_weight = {}", w.data_weight);
        let _ = writeln!(s, "smoothness_weight = {}", w.smoothness_weight);
        let _ = writeln!(s, "boundary_weight = {}", w.boundary_weight);
        let _ = writeln!(s, "tolerance = {}", w.tolerance);
        for (name, p) in [("model", &self.model), ("world", &self.world)] {
            let _ = writeln!(s, "\n[{name}]");
            let _ = writeln!(s, "dt = {}", p.dt);
            let _ = writeln!(s, "duration = {}", p.duration);
            let _ = writeln!(s, "emission_rate = {}", p.emission_rate);
            let _ = writeln!(s, "r0 = {}", p.r0);
            let _ = writeln!(s, "growth_rate = {}", p.growth_rate);
            let _ = writeln!(s, "turbulence_std = {}", p.turbulence_std);
            let _ = writeln!(s, "warmup = {}", p.warmup);
        }
        s
    }

    /// Every problem that does not need the map to detect.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                out.push(msg);
            }
        };
        check(
            self.convergence_variance_m2 > 0.0,
            format!("convergence_variance_m2 must be positive, got {}", self.convergence_variance_m2),
        );
        check(self.max_iterations > 0, "max_iterations must be positive".into());
        check(!self.seeds.is_empty(), "seeds must not be empty".into());
        check(self.steps_per_iteration > 0, "steps_per_iteration must be positive".into());
        check(self.estimate_every > 0, "estimate_every must be positive".into());
        check(
            self.rho > 0.0 && self.rho <= 1.0,
            format!("rho must lie in (0, 1], got {}", self.rho),
        );
        check(self.max_region_size > 0, "max_region_size must be positive".into());
        if let WindSpec::Uniform(v) = self.wind {
            check(v.iter().all(|x| x.is_finite()), "wind must be finite".into());
        }
        if let Some(sigma) = self.confidence_sigma {
            check(sigma > 0.0, format!("confidence sigma must be positive, got {sigma}"));
        }
        check(
            self.confidence_sigma_omega > 0.0,
            format!("confidence sigma_omega must be positive, got {}", self.confidence_sigma_omega),
        );
        let results = [
            ("kernel", self.kernel.validate()),
            ("sensor", self.sensor.validate()),
            ("noise", self.noise.validate()),
            ("wind_estimation", self.wind_estimation.validate()),
            ("model", self.model.validate()),
            ("world", self.world.validate_motion()),
        ];
        for (section, r) in results {
            if let Err(e) = r {
                out.push(format!("[{section}] {e}"));
            }
        }
        out
    }
}
