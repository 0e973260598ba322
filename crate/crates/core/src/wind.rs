//! Dense wind field from sparse local measurements.
//!
//! The field minimizes a quadratic energy over the free cells:
//!
//! ```text
//! E(v) = w_data   Σ_obs   |v_c - o_c|²
//!      + w_smooth Σ_pairs ω_ij |v_i - v_j|²
//!      + w_wall   Σ_faces (v_c · n_face)²
//! ```
//!
//! Pairs are the legal grid moves (ω = 1 for edge neighbors, ½ for diagonal
//! ones). Wall faces are cell edges shared with an occupied cell; the grid
//! border is open. Because every wall normal is axis aligned the x and y
//! components decouple into two sparse SPD systems, each solved with
//! Jacobi-preconditioned conjugate gradients.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::grid::{OccupancyGrid, Step};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindParams {
    pub data_weight: f64,
    pub smoothness_weight: f64,
    pub boundary_weight: f64,
    /// Relative residual at which the solver stops.
    pub tolerance: f64,
}

impl Default for WindParams {
    fn default() -> Self {
        Self {
            data_weight: 1.0,
            smoothness_weight: 0.1,
            boundary_weight: 10.0,
            tolerance: 1e-8,
        }
    }
}

impl WindParams {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.data_weight.is_finite() && self.data_weight > 0.0) {
            return Err(Error::validation("wind params", "data_weight must be positive"));
        }
        if !ok(self.smoothness_weight) || !ok(self.boundary_weight) {
            return Err(Error::validation(
                "wind params",
                "smoothness and boundary weights must be non-negative",
            ));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::validation("wind params", "tolerance must be in (0, 1)"));
        }
        Ok(())
    }
}

/// A 2D wind vector (m/s) for every free cell.
#[derive(Clone, Debug, PartialEq)]
pub struct WindField {
    vectors: Vec<Option<[f64; 2]>>,
    timestamp: usize,
}

impl WindField {
    /// The same vector on every free cell.
    pub fn uniform(grid: &OccupancyGrid, v: [f64; 2]) -> Self {
        let vectors = (0..grid.len())
            .map(|c| grid.is_free(c).then_some(v))
            .collect();
        Self {
            vectors,
            timestamp: 0,
        }
    }

    pub fn from_vectors(grid: &OccupancyGrid, vectors: Vec<Option<[f64; 2]>>) -> Result<Self> {
        if vectors.len() != grid.len() {
            return Err(Error::validation("wind field", "vector count does not match grid"));
        }
        for (c, v) in vectors.iter().enumerate() {
            match v {
                Some(_) if !grid.is_free(c) => {
                    return Err(Error::validation("wind field", format!("occupied cell {c} has a vector")));
                }
                Some(v) if !(v[0].is_finite() && v[1].is_finite()) => {
                    return Err(Error::validation("wind field", format!("cell {c} is not finite")));
                }
                None if grid.is_free(c) => {
                    return Err(Error::validation("wind field", format!("free cell {c} has no vector")));
                }
                _ => {}
            }
        }
        Ok(Self {
            vectors,
            timestamp: 0,
        })
    }

    /// Wind at `cell`; zero for occupied or out-of-range cells.
    #[inline]
    pub fn at(&self, cell: usize) -> [f64; 2] {
        self.vectors.get(cell).copied().flatten().unwrap_or([0.0, 0.0])
    }

    pub fn get(&self, cell: usize) -> Option<[f64; 2]> {
        self.vectors.get(cell).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn timestamp(&self) -> usize {
        self.timestamp
    }

    pub fn with_timestamp(mut self, t: usize) -> Self {
        self.timestamp = t;
        self
    }

    /// CSV with columns `cell_x,cell_y,vx,vy`, free cells only.
    pub fn to_csv(&self, grid: &OccupancyGrid) -> String {
        let mut out = String::from("cell_x,cell_y,vx,vy\n");
        for (c, v) in self.vectors.iter().enumerate() {
            if let Some(v) = v {
                let (x, y) = grid.coords(c);
                let _ = writeln!(out, "{x},{y},{},{}", v[0], v[1]);
            }
        }
        out
    }

    /// Reads the CSV written by [`WindField::to_csv`]. Every free cell must
    /// appear exactly once.
    pub fn from_csv(grid: &OccupancyGrid, text: &str) -> Result<Self> {
        let mut vectors = vec![None; grid.len()];
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with("cell_x")) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |message: String| Error::Parse {
                line: line_no,
                message,
            };
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 columns, got {}", fields.len())));
            }
            let x: usize = fields[0].parse().map_err(|e| bad(format!("cell_x: {e}")))?;
            let y: usize = fields[1].parse().map_err(|e| bad(format!("cell_y: {e}")))?;
            let vx: f64 = fields[2].parse().map_err(|e| bad(format!("vx: {e}")))?;
            let vy: f64 = fields[3].parse().map_err(|e| bad(format!("vy: {e}")))?;
            if x >= grid.width() || y >= grid.height() {
                return Err(bad(format!("cell ({x}, {y}) is outside the grid")));
            }
            let c = grid.index(x, y);
            if !grid.is_free(c) {
                return Err(bad(format!("cell ({x}, {y}) is occupied")));
            }
            if vectors[c].replace([vx, vy]).is_some() {
                return Err(bad(format!("cell ({x}, {y}) listed twice")));
            }
        }
        Self::from_vectors(grid, vectors)
    }
}

/// Latest wind observation per cell, accumulated over a run.
#[derive(Clone, Debug, Default)]
pub struct WindObservations {
    latest: BTreeMap<usize, [f64; 2]>,
}

impl WindObservations {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `v` at `cell`, replacing any older observation there.
    pub fn record(&mut self, cell: usize, v: [f64; 2]) {
        self.latest.insert(cell, v);
    }

    pub fn len(&self) -> usize {
        self.latest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latest.is_empty()
    }

    pub fn to_vec(&self) -> Vec<(usize, [f64; 2])> {
        self.latest.iter().map(|(&c, &v)| (c, v)).collect()
    }
}

/// Symmetric sparse matrix in compressed rows.
struct SparseMatrix {
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    fn from_rows(rows: Vec<BTreeMap<usize, f64>>) -> Self {
        let mut row_start = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_start.push(0);
        for row in rows {
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_start.push(cols.len());
        }
        Self {
            row_start,
            cols,
            vals,
        }
    }

    fn dim(&self) -> usize {
        self.row_start.len() - 1
    }

    fn mul(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let (a, b) = (self.row_start[r], self.row_start[r + 1]);
            *o = self.cols[a..b]
                .iter()
                .zip(&self.vals[a..b])
                .map(|(&c, &v)| v * x[c])
                .sum();
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|r| {
                let (a, b) = (self.row_start[r], self.row_start[r + 1]);
                (a..b)
                    .find(|&k| self.cols[k] == r)
                    .map_or(0.0, |k| self.vals[k])
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jacobi-preconditioned conjugate gradients for `A x = b`, stopping once
/// `|r| <= tol·|b|` or after `max_iter` iterations.
fn conjugate_gradient(a: &SparseMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = a.dim();
    let mut x = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(x);
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);

    for _ in 0..max_iter {
        a.mul(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap.is_nan() || pap <= 0.0 {
            return Err(Error::IllConditioned {
                iterations: 0,
                residual: dot(&r, &r).sqrt() / b_norm,
            });
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        if dot(&r, &r).sqrt() <= tol * b_norm {
            return Ok(x);
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::IllConditioned {
        iterations: max_iter,
        residual: dot(&r, &r).sqrt() / b_norm,
    })
}

/// Maps free cells to dense unknown indices.
struct FreeIndex {
    of_cell: Vec<usize>,
    cells: Vec<usize>,
}

impl FreeIndex {
    fn new(grid: &OccupancyGrid) -> Self {
        let mut of_cell = vec![usize::MAX; grid.len()];
        let cells: Vec<usize> = grid.free_cells().collect();
        for (k, &c) in cells.iter().enumerate() {
            of_cell[c] = k;
        }
        Self { of_cell, cells }
    }
}

/// Connected components of free cells under legal moves.
fn components(grid: &OccupancyGrid) -> Vec<usize> {
    let mut label = vec![usize::MAX; grid.len()];
    let mut next = 0;
    let mut stack = Vec::new();
    for start in grid.free_cells() {
        if label[start] != usize::MAX {
            continue;
        }
        label[start] = next;
        stack.push(start);
        while let Some(c) = stack.pop() {
            for (n, _) in grid.neighbors(c) {
                if label[n] == usize::MAX {
                    label[n] = next;
                    stack.push(n);
                }
            }
        }
        next += 1;
    }
    label
}

/// Least-squares wind field over the free cells of `grid`.
///
/// Observations are applied in sorted order, so the result does not depend
/// on how the list is ordered.
pub fn estimate_wind(
    grid: &OccupancyGrid,
    observations: &[(usize, [f64; 2])],
    params: &WindParams,
) -> Result<WindField> {
    params.validate()?;
    if observations.is_empty() {
        return Err(Error::NoObservations);
    }
    for &(c, v) in observations {
        grid.require_free(c, "observation")?;
        if !(v[0].is_finite() && v[1].is_finite()) {
            return Err(Error::validation("wind observation", "vector must be finite"));
        }
    }
    let mut obs = observations.to_vec();
    obs.sort_by(|a, b| {
        a.0.cmp(&b.0)
            .then(a.1[0].total_cmp(&b.1[0]))
            .then(a.1[1].total_cmp(&b.1[1]))
    });

    let label = components(grid);
    let n_components = grid.free_cells().map(|c| label[c] + 1).max().unwrap_or(0);
    let mut observed = vec![false; n_components];
    for &(c, _) in &obs {
        observed[label[c]] = true;
    }
    if let Some(missing) = observed.iter().position(|&o| !o) {
        let cells = grid.free_cells().filter(|&c| label[c] == missing).count();
        return Err(Error::Underdetermined { cells });
    }

    let idx = FreeIndex::new(grid);
    let n = idx.cells.len();
    let mut solution = [vec![0.0; n], vec![0.0; n]];
    for (axis, out) in solution.iter_mut().enumerate() {
        let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
        let mut rhs = vec![0.0; n];
        for &(c, v) in &obs {
            let k = idx.of_cell[c];
            *rows[k].entry(k).or_default() += params.data_weight;
            rhs[k] += params.data_weight * v[axis];
        }
        for (k, &c) in idx.cells.iter().enumerate() {
            for (nb, step) in grid.neighbors(c) {
                let w = params.smoothness_weight
                    * match step {
                        Step::Straight => 1.0,
                        Step::Diagonal => 0.5,
                    };
                // each unordered pair is visited once from each end
                let j = idx.of_cell[nb];
                *rows[k].entry(k).or_default() += w;
                *rows[k].entry(j).or_default() -= w;
            }
            let (x, y) = grid.coords(c);
            let (x, y) = (x as isize, y as isize);
            let faces: [(isize, isize); 2] = if axis == 0 { [(-1, 0), (1, 0)] } else { [(0, -1), (0, 1)] };
            for (dx, dy) in faces {
                let (nx, ny) = (x + dx, y + dy);
                let inside = nx >= 0 && ny >= 0 && (nx as usize) < grid.width() && (ny as usize) < grid.height();
                if inside && !grid.is_free_xy(nx, ny) {
                    *rows[k].entry(k).or_default() += params.boundary_weight;
                }
            }
        }
        let a = SparseMatrix::from_rows(rows);
        *out = conjugate_gradient(&a, &rhs, params.tolerance, 10 * n.max(1))?;
    }

    let mut vectors = vec![None; grid.len()];
    for (k, &c) in idx.cells.iter().enumerate() {
        vectors[c] = Some([solution[0][k], solution[1][k]]);
    }
    Ok(WindField {
        vectors,
        timestamp: 0,
    })
}

/// Steady potential flow with free-stream velocity `inflow` that goes around
/// obstacles: `∇²φ = 0` on free cells, no flux through walls and `φ = inflow·x`
/// just outside the open grid border. Components that never touch the border
/// get zero wind.
pub fn potential_flow(grid: &OccupancyGrid, inflow: [f64; 2]) -> Result<WindField> {
    let idx = FreeIndex::new(grid);
    let n = idx.cells.len();
    let h = grid.cell_size();
    let (w, ht) = (grid.width() as isize, grid.height() as isize);
    let outside = |x: isize, y: isize| x < 0 || y < 0 || x >= w || y >= ht;
    let free_potential = |x: isize, y: isize| inflow[0] * x as f64 * h + inflow[1] * y as f64 * h;
    const EDGES: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];

    // cells connected (through edge neighbors) to the border
    let mut open = vec![false; grid.len()];
    let mut stack: Vec<usize> = idx
        .cells
        .iter()
        .copied()
        .filter(|&c| {
            let (x, y) = grid.coords(c);
            EDGES.iter().any(|&(dx, dy)| outside(x as isize + dx, y as isize + dy))
        })
        .collect();
    for &c in &stack {
        open[c] = true;
    }
    while let Some(c) = stack.pop() {
        for nb in grid.edge_neighbors(c) {
            if !open[nb] {
                open[nb] = true;
                stack.push(nb);
            }
        }
    }

    let mut rows: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    let mut rhs = vec![0.0; n];
    for (k, &c) in idx.cells.iter().enumerate() {
        if !open[c] {
            rows[k].insert(k, 1.0);
            continue;
        }
        let (x, y) = grid.coords(c);
        let (x, y) = (x as isize, y as isize);
        for (dx, dy) in EDGES {
            let (nx, ny) = (x + dx, y + dy);
            if outside(nx, ny) {
                *rows[k].entry(k).or_default() += 1.0;
                rhs[k] += free_potential(nx, ny);
            } else if grid.is_free_xy(nx, ny) {
                *rows[k].entry(k).or_default() += 1.0;
                *rows[k].entry(idx.of_cell[grid.index(nx as usize, ny as usize)]).or_default() -= 1.0;
            }
        }
    }
    let a = SparseMatrix::from_rows(rows);
    let phi = conjugate_gradient(&a, &rhs, 1e-12, 10 * n.max(1))?;

    let potential = |x: isize, y: isize| -> Option<f64> {
        if outside(x, y) {
            Some(free_potential(x, y))
        } else if grid.is_free_xy(x, y) {
            Some(phi[idx.of_cell[grid.index(x as usize, y as usize)]])
        } else {
            None
        }
    };
    let mut vectors = vec![None; grid.len()];
    for (k, &c) in idx.cells.iter().enumerate() {
        if !open[c] {
            vectors[c] = Some([0.0, 0.0]);
            continue;
        }
        let (x, y) = grid.coords(c);
        let (x, y) = (x as isize, y as isize);
        let here = phi[k];
        // face fluxes; wall faces carry none
        let flux = |dx: isize, dy: isize, sign: f64| {
            potential(x + dx, y + dy).map_or(0.0, |p| sign * (p - here) / h)
        };
        let vx = 0.5 * (flux(1, 0, 1.0) + flux(-1, 0, -1.0));
        let vy = 0.5 * (flux(0, 1, 1.0) + flux(0, -1, -1.0));
        vectors[c] = Some([vx, vy]);
    }
    Ok(WindField {
        vectors,
        timestamp: 0,
    })
}
