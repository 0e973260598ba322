//! Choosing where to measure next.
//!
//! The information value of a cell is `(1 − α_i)` times the variance of the
//! predicted hit frequency at that cell across candidate sources. The robot
//! heads for the cell with the largest value and measures at every cell it
//! passes through.

use crate::error::{Error, Result};
use crate::estimator::Candidate;
use crate::grid::{build_partition, shortest_path, OccupancyGrid, PathCost};

/// Per-cell information value; occupied cells are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct InfoValueMap {
    pub psi: Vec<f64>,
}

/// Evaluates `ψ_i = (1 − α_i)·Σ_k p_k·(f^k_i − μ_i)²` with
/// `μ_i = Σ_k p_k·f^k_i` for every free cell.
pub fn info_value(grid: &OccupancyGrid, alpha: &[f64], candidates: &[Candidate]) -> InfoValueMap {
    let mut psi = vec![0.0; grid.len()];
    for c in grid.free_cells() {
        let mu: f64 = candidates.iter().map(|k| k.prob * k.prediction.freq[c]).sum();
        let var: f64 = candidates
            .iter()
            .map(|k| k.prob * (k.prediction.freq[c] - mu).powi(2))
            .sum();
        psi[c] = (1.0 - alpha[c]) * var;
    }
    InfoValueMap { psi }
}

/// The reachable cell with the largest ψ, preferring shorter paths and then
/// lower indices. When no reachable cell has ψ > 0, the nearest reachable
/// cell of least confidence is returned instead.
pub fn select_goal(psi: &InfoValueMap, alpha: &[f64], grid: &OccupancyGrid, robot: usize) -> Result<usize> {
    let part = build_partition(grid, robot)?;
    let reachable: Vec<(usize, PathCost)> = (0..grid.len())
        .filter_map(|c| part.cost(c).map(|cost| (c, cost)))
        .collect();
    // (score, cost, index): larger score first, then cheaper, then lower index
    let best_by = |score: &dyn Fn(usize) -> f64| {
        reachable
            .iter()
            .copied()
            .min_by(|&(a, ca), &(b, cb)| score(b).total_cmp(&score(a)).then(ca.cmp(&cb)).then(a.cmp(&b)))
            .map(|(c, _)| c)
    };
    let goal = best_by(&|c| psi.psi[c]).filter(|&c| psi.psi[c] > 0.0);
    goal.or_else(|| best_by(&|c| -alpha[c]))
        .ok_or_else(|| Error::Precondition("no reachable cell".into()))
}

/// The next cell on the shortest path from `robot` to `goal`, or `robot`
/// itself when already there.
pub fn advance(grid: &OccupancyGrid, robot: usize, goal: usize) -> Result<usize> {
    if robot == goal {
        grid.require_free(robot, "robot")?;
        return Ok(robot);
    }
    match shortest_path(grid, robot, goal)? {
        Some(path) => Ok(path.cells[1]),
        None => Err(Error::Unreachable { from: robot, to: goal }),
    }
}
