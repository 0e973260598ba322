use std::time::Instant;

use crate::error::Result;
use crate::estimator::{full_enumeration, kld, refine_round, Estimate, SourcePosterior};
use crate::filament::{sample_ground_truth, simulate_plume, SimParams, World};
use crate::grid::build_partition;
use crate::hitmap::{HitMap, Measurement};
use crate::movement::{advance, info_value, select_goal};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::wind::{estimate_wind, WindField, WindObservations};

use super::report::KldRow;
use super::Scenario;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep hit-map and posterior snapshots every this many iterations.
    pub snapshot_every: Option<usize>,
}

/// Outcome of one closed-loop run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
    /// Most probable source cell as `(x, y)`.
    pub argmax: (usize, usize),
    /// Posterior mean position (m).
    pub expectation: [f64; 2],
    /// Distance (m) from the argmax cell center to the true source.
    pub error_m: f64,
    /// Distance (m) from the posterior mean to the true source.
    pub expectation_error_m: f64,
    pub variance_m2: f64,
    pub rounds: usize,
    pub simulations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub t: usize,
    pub cell: usize,
    pub hit: bool,
    pub goal: usize,
}

/// One estimation round. `seconds` is wall-clock time and therefore the
/// only field that differs between repeated runs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub iteration: usize,
    pub leaves: usize,
    pub simulations: usize,
    pub variance_m2: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub iteration: usize,
    pub hitmap_csv: String,
    pub posterior_csv: String,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub result: RunResult,
    pub trajectory: Vec<TrajectoryStep>,
    pub rounds: Vec<RoundRecord>,
    pub snapshots: Vec<Snapshot>,
    /// Posterior of the last estimation round.
    pub posterior: SourcePosterior,
}

/// What an estimation round sees.
struct RoundInput<'a> {
    round: usize,
    iteration: usize,
    hit_map: &'a HitMap,
    wind: &'a WindField,
    model: SimParams,
}

/// Runs the measurement/estimation/movement loop; `estimate` produces the
/// posterior that drives movement and the convergence test.
fn closed_loop(
    scenario: &Scenario,
    seed: u64,
    options: RunOptions,
    stop_on_convergence: bool,
    mut estimate: impl FnMut(&RoundInput) -> Result<Estimate>,
) -> Result<RunOutput> {
    let cfg = &scenario.config;
    let grid = &scenario.grid;
    let world_params = SimParams {
        seed: derive_seed(seed, Stream::World, 0),
        ..cfg.world
    };
    let mut world = World::new(grid.clone(), scenario.world_wind.clone(), scenario.source, world_params)?;
    let mut sensor_rng = stream_rng(seed, Stream::Sensor, 0);
    let mut hit_map = HitMap::new(grid, cfg.sensor, scenario.confidence())?;
    let mut observations = WindObservations::new();

    let mut robot = scenario.start;
    let mut goal: Option<usize> = None;
    let mut since_round = 0;
    let mut latest: Option<Estimate> = None;
    let mut converged = false;
    let mut iterations = 0;
    let mut trajectory = Vec::new();
    let mut rounds = Vec::new();
    let mut snapshots = Vec::new();
    let mut simulations = 0;

    for t in 1..=cfg.max_iterations {
        iterations = t;
        if t > 1 {
            world.advance(cfg.steps_per_iteration);
            if let Some(g) = goal {
                robot = advance(grid, robot, g)?;
            }
        }
        let (hit, wind_reading) = sample_ground_truth(&world, robot, &cfg.noise, &mut sensor_rng)?;
        observations.record(robot, wind_reading);
        let wind = estimate_wind(grid, &observations.to_vec(), &cfg.wind_estimation)?.with_timestamp(t);
        let partition = build_partition(grid, robot)?;
        let m = Measurement {
            cell: robot,
            hit,
            wind: wind_reading,
            t,
        };
        hit_map.update(&m, &partition, &wind, &cfg.kernel)?;
        since_round += 1;

        if goal.is_none_or(|g| g == robot) || since_round >= cfg.estimate_every {
            since_round = 0;
            let round = rounds.len() + 1;
            let input = RoundInput {
                round,
                iteration: t,
                hit_map: &hit_map,
                wind: &wind,
                model: SimParams {
                    seed: derive_seed(seed, Stream::Model, round as u64),
                    ..cfg.model
                },
            };
            let started = Instant::now();
            let est = estimate(&input)?;
            let seconds = started.elapsed().as_secs_f64();
            simulations += est.simulations;
            rounds.push(RoundRecord {
                round,
                iteration: t,
                leaves: est.posterior.regions.len(),
                simulations: est.simulations,
                variance_m2: est.posterior.variance_m2,
                seconds,
            });
            converged = est.posterior.variance_m2 < cfg.convergence_variance_m2;
            if !(converged && stop_on_convergence) {
                let psi = info_value(grid, hit_map.alpha(), &est.candidates);
                goal = Some(select_goal(&psi, hit_map.alpha(), grid, robot)?);
            }
            latest = Some(est);
        }

        trajectory.push(TrajectoryStep {
            t,
            cell: robot,
            hit,
            goal: goal.unwrap_or(robot),
        });
        if let (Some(every), Some(est)) = (options.snapshot_every, &latest) {
            if t % every == 0 {
                snapshots.push(Snapshot {
                    iteration: t,
                    hitmap_csv: hit_map.to_csv(grid),
                    posterior_csv: est.posterior.to_csv(grid),
                });
            }
        }
        if converged && stop_on_convergence {
            break;
        }
    }

    let est = latest.expect("the first iteration always runs an estimation round");
    let best = est.posterior.argmax();
    let mean = est.posterior.expectation(grid);
    let truth = grid.center(scenario.source);
    let result = RunResult {
        seed,
        iterations,
        converged,
        argmax: grid.coords(best),
        expectation: mean,
        error_m: grid.distance(best, scenario.source),
        expectation_error_m: (mean[0] - truth[0]).hypot(mean[1] - truth[1]),
        variance_m2: est.posterior.variance_m2,
        rounds: rounds.len(),
        simulations,
    };
    Ok(RunOutput {
        result,
        trajectory,
        rounds,
        snapshots,
        posterior: est.posterior,
    })
}

/// One closed-loop run with the configured refinement fraction.
pub fn run_one(scenario: &Scenario, seed: u64, options: RunOptions) -> Result<RunOutput> {
    let rho = scenario.config.rho;
    closed_loop(scenario, seed, options, true, |input| {
        let grid = &scenario.grid;
        refine_round(grid, input.hit_map, &scenario.coarse_regions, rho, |c| {
            simulate_plume(grid, input.wind, c, &input.model)
        })
    })
}

/// Compares refinement fractions against full enumeration.
///
/// Each seed runs one trajectory for the full iteration budget, driven by
/// the full-enumeration posterior. At every estimation round each `rho`
/// is evaluated on the same hit map, wind estimate and model seed, and its
/// KLD to the full posterior and both wall-clock times are recorded.
pub fn kld_study(scenario: &Scenario, rhos: &[f64], seeds: &[u64]) -> Result<Vec<KldRow>> {
    for &rho in rhos {
        crate::estimator::check_rho(rho)?;
    }
    let grid = &scenario.grid;
    let mut rows = Vec::new();
    for &seed in seeds {
        closed_loop(scenario, seed, RunOptions::default(), false, |input| {
            let plume = |c| simulate_plume(grid, input.wind, c, &input.model);
            let started = Instant::now();
            let full = full_enumeration(grid, input.hit_map, plume)?;
            let full_seconds = started.elapsed().as_secs_f64();
            for &rho in rhos {
                let started = Instant::now();
                let refined = refine_round(grid, input.hit_map, &scenario.coarse_regions, rho, plume)?;
                let refined_seconds = started.elapsed().as_secs_f64();
                rows.push(KldRow {
                    seed,
                    round: input.round,
                    iteration: input.iteration,
                    rho,
                    leaves: refined.posterior.regions.len(),
                    simulations: refined.simulations,
                    full_simulations: full.simulations,
                    kld: kld(&refined.posterior.cell_probs, &full.posterior.cell_probs)?,
                    refined_seconds,
                    full_seconds,
                });
            }
            Ok(full)
        })?;
    }
    Ok(rows)
}
