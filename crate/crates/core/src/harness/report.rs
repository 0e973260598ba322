use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::OccupancyGrid;

use super::run::{run_one, RunOptions, RunOutput, RunResult};
use super::Scenario;

/// One row of the refinement study.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KldRow {
    pub seed: u64,
    pub round: usize,
    pub iteration: usize,
    pub rho: f64,
    pub leaves: usize,
    pub simulations: usize,
    pub full_simulations: usize,
    /// `KLD(refined ‖ full)` in nats.
    pub kld: f64,
    pub refined_seconds: f64,
    pub full_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchSummary {
    pub runs: usize,
    pub failed: usize,
    pub converged: usize,
    pub convergence_rate: f64,
    pub mean_error_m: f64,
    pub median_error_m: f64,
    pub mean_iterations: f64,
}

impl BatchSummary {
    /// Aggregates over the successful runs; NaN where there are none.
    pub fn from_results<'a>(results: impl IntoIterator<Item = &'a RunResult>, failed: usize) -> Self {
        let ok: Vec<&RunResult> = results.into_iter().collect();
        let n = ok.len() as f64;
        let mut errors: Vec<f64> = ok.iter().map(|r| r.error_m).collect();
        errors.sort_by(f64::total_cmp);
        let median = match errors.len() {
            0 => f64::NAN,
            k if k % 2 == 1 => errors[k / 2],
            k => 0.5 * (errors[k / 2 - 1] + errors[k / 2]),
        };
        let converged = ok.iter().filter(|r| r.converged).count();
        Self {
            runs: ok.len() + failed,
            failed,
            converged,
            convergence_rate: converged as f64 / (ok.len() + failed).max(1) as f64,
            mean_error_m: errors.iter().sum::<f64>() / n,
            median_error_m: median,
            mean_iterations: ok.iter().map(|r| r.iterations as f64).sum::<f64>() / n,
        }
    }
}

#[derive(Debug)]
pub struct BatchReport {
    /// Per seed, in the order given; failed runs keep their error message.
    pub runs: Vec<(u64, std::result::Result<RunOutput, String>)>,
    pub summary: BatchSummary,
}

/// Runs every seed independently and in parallel. A failing run is
/// recorded in the report rather than aborting the batch.
pub fn run_batch(scenario: &Scenario, seeds: &[u64], options: RunOptions) -> Result<BatchReport> {
    if seeds.is_empty() {
        return Err(Error::Config(vec!["at least one seed is required".into()]));
    }
    let runs: Vec<_> = seeds
        .par_iter()
        .map(|&seed| (seed, run_one(scenario, seed, options).map_err(|e| e.to_string())))
        .collect();
    let failed = runs.iter().filter(|(_, r)| r.is_err()).count();
    let summary = BatchSummary::from_results(runs.iter().filter_map(|(_, r)| r.as_ref().ok().map(|o| &o.result)), failed);
    Ok(BatchReport { runs, summary })
}

// CSV fields never contain commas or quotes except error messages.
fn csv_text(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\"").replace('\n', " "))
}

pub fn results_csv(report: &BatchReport) -> String {
    let mut s = String::from(
        "seed,status,iterations,converged,argmax_x,argmax_y,mean_x,mean_y,error_m,mean_error_m,variance_m2,rounds,simulations\n",
    );
    for (seed, run) in &report.runs {
        match run {
            Ok(out) => {
                let r = &out.result;
                let _ = writeln!(
                    s,
                    "{seed},ok,{},{},{},{},{},{},{},{},{},{},{}",
                    r.iterations,
                    r.converged,
                    r.argmax.0,
                    r.argmax.1,
                    r.expectation[0],
                    r.expectation[1],
                    r.error_m,
                    r.expectation_error_m,
                    r.variance_m2,
                    r.rounds,
                    r.simulations
                );
            }
            Err(e) => {
                let _ = writeln!(s, "{seed},{},,,,,,,,,,,", csv_text(e));
            }
        }
    }
    s
}

pub fn summary_csv(summary: &BatchSummary) -> String {
    format!(
        "runs,failed,converged,convergence_rate,mean_error_m,median_error_m,mean_iterations\n{},{},{},{},{},{},{}\n",
        summary.runs,
        summary.failed,
        summary.converged,
        summary.convergence_rate,
        summary.mean_error_m,
        summary.median_error_m,
        summary.mean_iterations
    )
}

pub fn trajectory_csv(grid: &OccupancyGrid, out: &RunOutput) -> String {
    let mut s = String::from("t,cell_x,cell_y,hit,goal_x,goal_y\n");
    for step in &out.trajectory {
        let (x, y) = grid.coords(step.cell);
        let (gx, gy) = grid.coords(step.goal);
        let _ = writeln!(s, "{},{x},{y},{},{gx},{gy}", step.t, u8::from(step.hit));
    }
    s
}

/// Per-round refinement trace without timings.
pub fn rounds_csv(out: &RunOutput) -> String {
    let mut s = String::from("round,iteration,leaves,simulations,variance_m2\n");
    for r in &out.rounds {
        let _ = writeln!(s, "{},{},{},{},{}", r.round, r.iteration, r.leaves, r.simulations, r.variance_m2);
    }
    s
}

fn timings_csv<'a>(runs: impl IntoIterator<Item = (u64, &'a RunOutput)>) -> String {
    let mut s = String::from("seed,round,iteration,seconds\n");
    for (seed, out) in runs {
        for r in &out.rounds {
            let _ = writeln!(s, "{seed},{},{},{}", r.round, r.iteration, r.seconds);
        }
    }
    s
}

pub fn kld_study_csv(rows: &[KldRow]) -> String {
    let mut s = String::from(
        "seed,round,iteration,rho,leaves,simulations,full_simulations,kld_to_full,refined_seconds,full_seconds\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.round,
            r.iteration,
            r.rho,
            r.leaves,
            r.simulations,
            r.full_simulations,
            r.kld,
            r.refined_seconds,
            r.full_seconds
        );
    }
    s
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

fn create(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_run_files(dir: &Path, grid: &OccupancyGrid, out: &RunOutput) -> Result<()> {
    let seed = out.result.seed;
    write(dir, &format!("trajectory_{seed}.csv"), &trajectory_csv(grid, out))?;
    write(dir, &format!("rounds_{seed}.csv"), &rounds_csv(out))?;
    for snap in &out.snapshots {
        write(dir, &format!("hitmap_{}.csv", snap.iteration), &snap.hitmap_csv)?;
        write(dir, &format!("posterior_{}.csv", snap.iteration), &snap.posterior_csv)?;
    }
    Ok(())
}

/// Writes `results.csv`, the trajectory, the round trace, snapshots and
/// `timings.csv` for a single run.
pub fn write_run(dir: &Path, scenario: &Scenario, out: &RunOutput) -> Result<()> {
    create(dir)?;
    let seed = out.result.seed;
    let report = BatchReport {
        runs: vec![(seed, Ok(out.clone()))],
        summary: BatchSummary::from_results([&out.result], 0),
    };
    write(dir, "results.csv", &results_csv(&report))?;
    write_run_files(dir, &scenario.grid, out)?;
    write(dir, "timings.csv", &timings_csv([(seed, out)]))
}

/// Writes `results.csv`, `summary.csv` and `timings.csv` under `dir`, and
/// each run's trajectory and snapshots under `dir/seed_<seed>/`.
pub fn write_batch(dir: &Path, scenario: &Scenario, report: &BatchReport) -> Result<()> {
    create(dir)?;
    write(dir, "results.csv", &results_csv(report))?;
    write(dir, "summary.csv", &summary_csv(&report.summary))?;
    let ok = || report.runs.iter().filter_map(|(s, r)| r.as_ref().ok().map(|o| (*s, o)));
    write(dir, "timings.csv", &timings_csv(ok()))?;
    for (seed, out) in ok() {
        let sub = dir.join(format!("seed_{seed}"));
        create(&sub)?;
        write_run_files(&sub, &scenario.grid, out)?;
    }
    Ok(())
}

pub fn write_kld_study(dir: &Path, rows: &[KldRow]) -> Result<()> {
    create(dir)?;
    write(dir, "kld_study.csv", &kld_study_csv(rows))
}
