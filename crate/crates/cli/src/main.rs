use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use plumeloc::estimator::check_rho;
use plumeloc::filament::simulate_plume;
use plumeloc::harness::{
    kld_study, run_batch, run_one, write_batch, write_kld_study, write_run, RunOptions, Scenario,
};
use plumeloc::rng::{derive_seed, Stream};
use plumeloc::Error;

#[derive(Parser)]
#[command(name = "plumeloc", version, about = "Gas source localization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop experiment.
    Run {
        #[command(flatten)]
        common: Common,
        /// Run seed; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the refinement fraction.
        #[arg(long)]
        rho: Option<f64>,
        /// Dump the hit map and posterior every N iterations.
        #[arg(long)]
        snapshot_every: Option<usize>,
    },
    /// Run one experiment per seed and aggregate.
    Batch {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds; defaults to the configured list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        snapshot_every: Option<usize>,
    },
    /// Compare refinement fractions against full enumeration.
    KldStudy {
        #[command(flatten)]
        common: Common,
        /// Comma-separated refinement fractions.
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.25,0.5,1")]
        rho: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Write the world wind, the coarse regions and the model plume of the
    /// true source.
    DumpMaps {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// An error plus whether it stems from the user's input.
struct Failure {
    error: Error,
    config: bool,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        let config = error.is_config_error();
        Self { error, config }
    }
}

/// Any failure here, unreadable files included, is a configuration problem.
fn load(common: &Common, rho: Option<f64>) -> Result<Scenario, Failure> {
    let scenario = || {
        let mut config = plumeloc::harness::ScenarioConfig::load(&common.config)?;
        if let Some(rho) = rho {
            config.rho = check_rho(rho)?;
        }
        let base = common.config.parent().unwrap_or(Path::new("."));
        Scenario::from_config(config, base)
    };
    scenario().map_err(|error| Failure { error, config: true })
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            common,
            seed,
            rho,
            snapshot_every,
        } => {
            let scenario = load(&common, rho)?;
            let seed = seed.unwrap_or(scenario.config.seeds[0]);
            let out = run_one(&scenario, seed, RunOptions { snapshot_every })?;
            write_run(&common.out, &scenario, &out)?;
            let r = &out.result;
            println!(
                "seed {seed}: {} after {} iterations, estimate ({}, {}), error {:.3} m, variance {:.3} m²",
                if r.converged { "converged" } else { "not converged" },
                r.iterations,
                r.argmax.0,
                r.argmax.1,
                r.error_m,
                r.variance_m2
            );
        }
        Command::Batch {
            common,
            seeds,
            rho,
            snapshot_every,
        } => {
            let scenario = load(&common, rho)?;
            let seeds = seeds.unwrap_or_else(|| scenario.config.seeds.clone());
            let report = run_batch(&scenario, &seeds, RunOptions { snapshot_every })?;
            write_batch(&common.out, &scenario, &report)?;
            for (seed, run) in &report.runs {
                if let Err(e) = run {
                    eprintln!("seed {seed} failed: {e}");
                }
            }
            let s = &report.summary;
            println!(
                "{} runs, {} converged, {} failed; mean error {:.3} m, median {:.3} m, mean iterations {:.1}",
                s.runs, s.converged, s.failed, s.mean_error_m, s.median_error_m, s.mean_iterations
            );
        }
        Command::KldStudy { common, rho, seeds } => {
            let scenario = load(&common, None)?;
            for &r in &rho {
                check_rho(r).map_err(|error| Failure { error, config: true })?;
            }
            let seeds = seeds.unwrap_or_else(|| scenario.config.seeds.clone());
            let rows = kld_study(&scenario, &rho, &seeds)?;
            write_kld_study(&common.out, &rows)?;
            for &r in &rho {
                // rows come in round order, so the last row per seed is its final round
                let mut last = std::collections::BTreeMap::new();
                for row in rows.iter().filter(|row| row.rho == r) {
                    last.insert(row.seed, row.kld);
                }
                let mean = last.values().sum::<f64>() / last.len().max(1) as f64;
                println!("rho {r}: mean final-round KLD {mean:.4} nats over {} seeds", last.len());
            }
        }
        Command::DumpMaps { common, seed } => {
            let scenario = load(&common, None)?;
            let grid = &scenario.grid;
            let seed = seed.unwrap_or(scenario.config.seeds[0]);
            std::fs::create_dir_all(&common.out).map_err(|e| io(&common.out, e))?;
            write(&common.out.join("world_wind.csv"), &scenario.world_wind.to_csv(grid))?;
            let mut regions = String::from("x0,y0,x1,y1,representative_x,representative_y,area\n");
            for r in &scenario.coarse_regions {
                let (rx, ry) = grid.coords(r.representative);
                let b = r.bounds;
                let _ = writeln!(regions, "{},{},{},{},{rx},{ry},{}", b.x0, b.y0, b.x1, b.y1, r.area);
            }
            write(&common.out.join("regions.csv"), &regions)?;
            let params = plumeloc::filament::SimParams {
                seed: derive_seed(seed, Stream::Model, 0),
                ..scenario.config.model
            };
            let plume = simulate_plume(grid, &scenario.world_wind, scenario.source, &params)?;
            write(&common.out.join("source_plume.csv"), &plume.to_csv(grid))?;
            println!("wrote maps to {}", common.out.display());
        }
    }
    Ok(())
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|e| io(path, e))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { error, config }) => {
            eprintln!("error: {error}");
            if config {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
