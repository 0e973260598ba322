//! Source-location posterior from measured versus predicted hit maps.
//!
//! Every candidate source `k` gets the log-weight
//! `Σ_i ln(α_i·(1 − |f^z_i − f^k_i|) + 1 − α_i)` and the weights are
//! normalized once at the end. Candidates are either every free cell (full
//! enumeration) or the representatives of a coarse-to-fine region set.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filament::PlumePrediction;
use crate::grid::OccupancyGrid;
use crate::hitmap::HitMap;
use crate::regions::Region;

/// Unnormalized support that a cell lends to a candidate source.
#[inline]
pub fn cell_likelihood(f_z: f64, alpha: f64, f_s: f64) -> f64 {
    alpha * (1.0 - (f_z - f_s).abs()) + (1.0 - alpha)
}

/// The observed side of the comparison: cells with non-zero confidence and
/// their measured hit frequency. Cells with `α = 0` contribute `ln 1 = 0`
/// and are left out.
#[derive(Clone, Debug)]
pub struct Evidence {
    cells: Vec<usize>,
    freq: Vec<f64>,
    alpha: Vec<f64>,
}

impl Evidence {
    pub fn new(grid: &OccupancyGrid, hit_map: &HitMap) -> Self {
        let mut ev = Evidence {
            cells: Vec::new(),
            freq: Vec::new(),
            alpha: Vec::new(),
        };
        for c in grid.free_cells() {
            let a = hit_map.alpha()[c];
            if a > 0.0 {
                ev.cells.push(c);
                ev.freq.push(hit_map.probability(c));
                ev.alpha.push(a);
            }
        }
        ev
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn log_likelihood(&self, prediction: &PlumePrediction) -> f64 {
        self.cells
            .iter()
            .zip(&self.freq)
            .zip(&self.alpha)
            .map(|((&c, &fz), &a)| cell_likelihood(fz, a, prediction.freq[c]).ln())
            .sum()
    }
}

/// Shifts by the maximum, exponentiates and normalizes.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegeneratePosterior);
    }
    let w: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Posterior over the given candidates, in their order.
pub fn posterior_over_candidates(
    grid: &OccupancyGrid,
    hit_map: &HitMap,
    predictions: &[PlumePrediction],
) -> Result<Vec<f64>> {
    if predictions.is_empty() {
        return Err(Error::Precondition("no candidate sources".into()));
    }
    if let Some(p) = predictions.iter().find(|p| p.freq.len() != grid.len()) {
        return Err(Error::Precondition(format!(
            "prediction for cell {} has {} entries, grid has {}",
            p.source,
            p.freq.len(),
            grid.len()
        )));
    }
    let ev = Evidence::new(grid, hit_map);
    let log_w: Vec<f64> = predictions.iter().map(|p| ev.log_likelihood(p)).collect();
    normalize_log_weights(&log_w)
}

/// Trace of the spatial covariance (m²) of a per-cell distribution.
pub fn posterior_variance(probs: &[f64], grid: &OccupancyGrid) -> f64 {
    let mut mean = [0.0; 2];
    for (c, &p) in probs.iter().enumerate().filter(|(_, &p)| p > 0.0) {
        let [x, y] = grid.center(c);
        mean[0] += p * x;
        mean[1] += p * y;
    }
    probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(c, &p)| {
            let [x, y] = grid.center(c);
            p * ((x - mean[0]).powi(2) + (y - mean[1]).powi(2))
        })
        .sum()
}

/// `Σ p·ln(p/q)` in nats.
pub fn kld(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::SupportMismatch(format!("{} vs {} entries", p.len(), q.len())));
    }
    let mut sum = 0.0;
    for (i, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return Err(Error::SupportMismatch(format!("q is zero at {i} where p is {pi}")));
        }
        sum += pi * (pi / qi).ln();
    }
    // rounding can leave identical-looking distributions a hair below zero
    Ok(sum.max(0.0))
}

/// Cell-resolution source distribution plus the leaf regions behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct SourcePosterior {
    pub regions: Vec<Region>,
    /// Indexed by cell; occupied cells are zero.
    pub cell_probs: Vec<f64>,
    pub variance_m2: f64,
}

impl SourcePosterior {
    /// Gives every cell of a leaf the log-weight of the leaf's representative
    /// and normalizes over cells. Leaf masses are the sums of their cells.
    fn from_leaf_weights(grid: &OccupancyGrid, mut regions: Vec<Region>, leaf_log_w: &[f64]) -> Result<Self> {
        let mut cell_log_w = vec![f64::NEG_INFINITY; grid.len()];
        for (r, &l) in regions.iter().zip(leaf_log_w) {
            for c in r.bounds.cells(grid).filter(|&c| grid.is_free(c)) {
                cell_log_w[c] = l;
            }
        }
        let free: Vec<usize> = grid.free_cells().collect();
        let free_log_w: Vec<f64> = free.iter().map(|&c| cell_log_w[c]).collect();
        let probs = normalize_log_weights(&free_log_w)?;
        let mut cell_probs = vec![0.0; grid.len()];
        for (&c, p) in free.iter().zip(probs) {
            cell_probs[c] = p;
        }
        for r in &mut regions {
            r.prob = r.bounds.cells(grid).map(|c| cell_probs[c]).sum();
        }
        let variance_m2 = posterior_variance(&cell_probs, grid);
        Ok(Self {
            regions,
            cell_probs,
            variance_m2,
        })
    }

    /// Most probable cell; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (c, &p) in self.cell_probs.iter().enumerate() {
            if p > self.cell_probs[best] {
                best = c;
            }
        }
        best
    }

    /// Posterior mean position (m).
    pub fn expectation(&self, grid: &OccupancyGrid) -> [f64; 2] {
        let mut mean = [0.0; 2];
        for (c, &p) in self.cell_probs.iter().enumerate().filter(|(_, &p)| p > 0.0) {
            let [x, y] = grid.center(c);
            mean[0] += p * x;
            mean[1] += p * y;
        }
        mean
    }

    /// CSV with columns `cell_x,cell_y,p_source`, free cells only.
    pub fn to_csv(&self, grid: &OccupancyGrid) -> String {
        let mut out = String::from("cell_x,cell_y,p_source\n");
        for c in grid.free_cells() {
            let (x, y) = grid.coords(c);
            let _ = writeln!(out, "{x},{y},{}", self.cell_probs[c]);
        }
        out
    }
}

/// A simulated candidate: its source cell, posterior mass and plume.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub cell: usize,
    pub prob: f64,
    pub prediction: Arc<PlumePrediction>,
}

/// Result of one estimation round.
#[derive(Clone, Debug)]
pub struct Estimate {
    pub posterior: SourcePosterior,
    /// One per leaf, aligned with `posterior.regions`.
    pub candidates: Vec<Candidate>,
    /// Plume simulations run this round.
    pub simulations: usize,
    /// Split generations performed.
    pub generations: usize,
}

/// Validated refinement fraction.
pub fn check_rho(rho: f64) -> Result<f64> {
    if rho > 0.0 && rho <= 1.0 {
        Ok(rho)
    } else {
        Err(Error::validation("rho", format!("{rho} is outside (0, 1]")))
    }
}

/// Split generations allowed per round: `⌈log₂(max(width, height))⌉`.
pub fn generation_budget(grid: &OccupancyGrid) -> usize {
    let n = grid.width().max(grid.height());
    (usize::BITS - (n.max(1) - 1).leading_zeros()) as usize
}

struct PlumeCache<'a, F> {
    plume: &'a F,
    evidence: Evidence,
    entries: BTreeMap<usize, (Arc<PlumePrediction>, f64)>,
    simulations: usize,
}

impl<F> PlumeCache<'_, F>
where
    F: Fn(usize) -> Result<PlumePrediction> + Sync,
{
    /// Simulates every not-yet-seen cell concurrently.
    fn ensure(&mut self, cells: impl IntoIterator<Item = usize>) -> Result<()> {
        let mut missing: Vec<usize> = cells.into_iter().filter(|c| !self.entries.contains_key(c)).collect();
        missing.sort_unstable();
        missing.dedup();
        let plume = self.plume;
        let evidence = &self.evidence;
        let done = missing
            .par_iter()
            .map(|&c| {
                let p = plume(c)?;
                let l = evidence.log_likelihood(&p);
                Ok((c, (Arc::new(p), l)))
            })
            .collect::<Result<Vec<_>>>()?;
        self.simulations += done.len();
        self.entries.extend(done);
        Ok(())
    }

    fn log_likelihood(&self, cell: usize) -> f64 {
        self.entries[&cell].1
    }

    fn finish(self, grid: &OccupancyGrid, leaves: Vec<Region>, generations: usize) -> Result<Estimate> {
        let log_w: Vec<f64> = leaves.iter().map(|r| self.log_likelihood(r.representative)).collect();
        let posterior = SourcePosterior::from_leaf_weights(grid, leaves, &log_w)?;
        let candidates = posterior
            .regions
            .iter()
            .map(|r| Candidate {
                cell: r.representative,
                prob: r.prob,
                prediction: Arc::clone(&self.entries[&r.representative].0),
            })
            .collect();
        Ok(Estimate {
            posterior,
            candidates,
            simulations: self.simulations,
            generations,
        })
    }
}

/// One coarse-to-fine estimation round starting from `coarse`.
///
/// Each generation scores the current leaves, picks the top `⌈ρ·n⌉` of the
/// `n` leaves created by the previous generation (all leaves at first) by
/// mass, then larger area, then lower representative index, and splits the
/// multi-cell ones among them. The round stops when every picked leaf is a
/// single cell or the generation budget is spent. `plume` must be pure;
/// calls run concurrently.
pub fn refine_round<F>(grid: &OccupancyGrid, hit_map: &HitMap, coarse: &[Region], rho: f64, plume: F) -> Result<Estimate>
where
    F: Fn(usize) -> Result<PlumePrediction> + Sync,
{
    check_rho(rho)?;
    if coarse.is_empty() {
        return Err(Error::Precondition("no candidate regions".into()));
    }
    let mut cache = PlumeCache {
        plume: &plume,
        evidence: Evidence::new(grid, hit_map),
        entries: BTreeMap::new(),
        simulations: 0,
    };
    let mut leaves: Vec<Region> = coarse.to_vec();
    let mut frontier: Vec<usize> = (0..leaves.len()).collect();
    let budget = generation_budget(grid);
    let mut generations = 0;
    loop {
        cache.ensure(frontier.iter().map(|&i| leaves[i].representative))?;
        if generations == budget {
            break;
        }
        let mass = |i: usize| cache.log_likelihood(leaves[i].representative) + (leaves[i].area as f64).ln();
        let mut ranked = frontier.clone();
        ranked.sort_by(|&a, &b| {
            mass(b)
                .total_cmp(&mass(a))
                .then(leaves[b].area.cmp(&leaves[a].area))
                .then(leaves[a].representative.cmp(&leaves[b].representative))
        });
        let take = ((rho * ranked.len() as f64).ceil() as usize).clamp(1, ranked.len());
        let mut chosen: Vec<usize> = ranked[..take]
            .iter()
            .copied()
            .filter(|&i| !leaves[i].is_single_cell())
            .collect();
        if chosen.is_empty() {
            break;
        }
        chosen.sort_unstable();
        let mut next = Vec::with_capacity(leaves.len() + 3 * chosen.len());
        let mut new_frontier = Vec::new();
        for (i, leaf) in leaves.into_iter().enumerate() {
            if chosen.binary_search(&i).is_ok() {
                for child in leaf.split(grid) {
                    new_frontier.push(next.len());
                    next.push(child);
                }
            } else {
                next.push(leaf);
            }
        }
        leaves = next;
        frontier = new_frontier;
        generations += 1;
    }
    cache.finish(grid, leaves, generations)
}

/// Simulates every free cell as a candidate.
pub fn full_enumeration<F>(grid: &OccupancyGrid, hit_map: &HitMap, plume: F) -> Result<Estimate>
where
    F: Fn(usize) -> Result<PlumePrediction> + Sync,
{
    let mut cache = PlumeCache {
        plume: &plume,
        evidence: Evidence::new(grid, hit_map),
        entries: BTreeMap::new(),
        simulations: 0,
    };
    let free: Vec<usize> = grid.free_cells().collect();
    cache.ensure(free.iter().copied())?;
    let leaves = free
        .iter()
        .map(|&c| {
            let (x, y) = grid.coords(c);
            let bounds = crate::regions::CellRect {
                x0: x,
                y0: y,
                x1: x + 1,
                y1: y + 1,
            };
            Region {
                bounds,
                representative: c,
                area: 1,
                prob: 0.0,
            }
        })
        .collect();
    cache.finish(grid, leaves, 0)
}
