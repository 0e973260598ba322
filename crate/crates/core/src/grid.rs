//! Occupancy grid, exact 8-connected path costs and the Dijkstra graph
//! partition rooted at the robot cell.
//!
//! Cells are addressed by their linear index `y * width + x`. Whenever a rule
//! says "lowest cell index" it refers to this linear index.
//!
//! Moves are 8-connected. A diagonal move is only legal when both cells that
//! share an edge with the two endpoints are free, so paths never cut across
//! the corner of an obstacle.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// A rectangular lattice of free and occupied cells.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    width: usize,
    height: usize,
    cell_size: f64,
    origin: [f64; 2],
    occupied: Vec<bool>,
}

impl OccupancyGrid {
    /// Builds a grid from a row-major occupancy mask (`true` = occupied).
    pub fn new(width: usize, height: usize, cell_size: f64, occupied: Vec<bool>) -> Result<Self> {
        Self::with_origin(width, height, cell_size, [0.0, 0.0], occupied)
    }

    pub fn with_origin(
        width: usize,
        height: usize,
        cell_size: f64,
        origin: [f64; 2],
        occupied: Vec<bool>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::validation(
                "grid",
                format!("dimensions must be positive, got {width}x{height}"),
            ));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::validation(
                "grid",
                format!("cell_size must be positive, got {cell_size}"),
            ));
        }
        if !(origin[0].is_finite() && origin[1].is_finite()) {
            return Err(Error::validation("grid", "origin must be finite"));
        }
        if occupied.len() != width * height {
            return Err(Error::validation(
                "grid",
                format!(
                    "occupancy mask has {} entries, expected {}",
                    occupied.len(),
                    width * height
                ),
            ));
        }
        if occupied.iter().all(|&o| o) {
            return Err(Error::validation("grid", "map has no free cells"));
        }
        Ok(Self {
            width,
            height,
            cell_size,
            origin,
            occupied,
        })
    }

    /// An obstacle-free grid.
    pub fn empty(width: usize, height: usize, cell_size: f64) -> Result<Self> {
        Self::new(width, height, cell_size, vec![false; width * height])
    }

    /// Parses the plain-text map format: a `cell_size <meters>` header, an
    /// optional `origin <x> <y>` line, then one row per line with `.` for free
    /// and `#` for occupied cells. The first row is `y = 0`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));

        let (header_line, header) = lines
            .by_ref()
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or(Error::Parse {
                line: 1,
                message: "empty map file".into(),
            })?;
        let cell_size = parse_header(header_line, header, "cell_size", 1)?[0];

        let mut origin = [0.0, 0.0];
        let mut width = None;
        let mut occupied = Vec::new();
        let mut height = 0;
        let mut blank_after_rows = false;
        for (line, row) in lines {
            if row.starts_with("origin") && height == 0 {
                let v = parse_header(line, row, "origin", 2)?;
                origin = [v[0], v[1]];
                continue;
            }
            if row.is_empty() {
                blank_after_rows |= height > 0;
                continue;
            }
            if blank_after_rows {
                return Err(Error::Parse {
                    line,
                    message: "blank line inside the map rows".into(),
                });
            }
            match width {
                None => width = Some(row.chars().count()),
                Some(w) if w != row.chars().count() => {
                    return Err(Error::Parse {
                        line,
                        message: format!(
                            "row has {} cells but earlier rows have {w}",
                            row.chars().count()
                        ),
                    })
                }
                Some(_) => {}
            }
            for c in row.chars() {
                occupied.push(match c {
                    '.' => false,
                    '#' => true,
                    other => {
                        return Err(Error::Parse {
                            line,
                            message: format!("unexpected character {other:?}"),
                        })
                    }
                });
            }
            height += 1;
        }
        let width = match width {
            Some(w) if height > 0 => w,
            _ => {
                return Err(Error::Parse {
                    line: header_line,
                    message: "map has no rows".into(),
                })
            }
        };
        Self::with_origin(width, height, cell_size, origin, occupied)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serializes back into the text format accepted by [`OccupancyGrid::parse`].
    pub fn to_text(&self) -> String {
        let mut out = format!("cell_size {}\n", self.cell_size);
        if self.origin != [0.0, 0.0] {
            out.push_str(&format!("origin {} {}\n", self.origin[0], self.origin[1]));
        }
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(if self.occupied[self.index(x, y)] { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    /// Total number of cells, free or not.
    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn coords(&self, cell: usize) -> (usize, usize) {
        (cell % self.width, cell / self.width)
    }

    #[inline]
    pub fn contains(&self, cell: usize) -> bool {
        cell < self.occupied.len()
    }

    #[inline]
    pub fn is_free(&self, cell: usize) -> bool {
        cell < self.occupied.len() && !self.occupied[cell]
    }

    #[inline]
    pub fn is_free_xy(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && !self.occupied[y as usize * self.width + x as usize]
    }

    pub fn free_cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.occupied
            .iter()
            .enumerate()
            .filter(|(_, &o)| !o)
            .map(|(i, _)| i)
    }

    pub fn free_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| !o).count()
    }

    /// Errors unless `cell` is inside the grid and free.
    pub fn require_free(&self, cell: usize, role: &str) -> Result<()> {
        if !self.contains(cell) {
            return Err(Error::OutOfBounds(cell));
        }
        if self.occupied[cell] {
            let (x, y) = self.coords(cell);
            return Err(Error::Precondition(format!(
                "{role} cell ({x}, {y}) is occupied"
            )));
        }
        Ok(())
    }

    /// World coordinates of a cell center, in meters.
    #[inline]
    pub fn center(&self, cell: usize) -> [f64; 2] {
        let (x, y) = self.coords(cell);
        [
            self.origin[0] + x as f64 * self.cell_size,
            self.origin[1] + y as f64 * self.cell_size,
        ]
    }

    /// The cell whose square contains `point`, if any.
    #[inline]
    pub fn cell_at(&self, point: [f64; 2]) -> Option<usize> {
        let fx = ((point[0] - self.origin[0]) / self.cell_size + 0.5).floor();
        let fy = ((point[1] - self.origin[1]) / self.cell_size + 0.5).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some(self.index(fx as usize, fy as usize))
    }

    /// Legal single-step moves out of `cell`, in ascending neighbor index.
    pub fn neighbors(&self, cell: usize) -> impl Iterator<Item = (usize, Step)> + '_ {
        let (x, y) = self.coords(cell);
        let (x, y) = (x as isize, y as isize);
        NEIGHBOR_OFFSETS.iter().filter_map(move |&(dx, dy)| {
            let (nx, ny) = (x + dx, y + dy);
            if !self.is_free_xy(nx, ny) {
                return None;
            }
            let step = if dx != 0 && dy != 0 {
                if !(self.is_free_xy(x + dx, y) && self.is_free_xy(x, y + dy)) {
                    return None;
                }
                Step::Diagonal
            } else {
                Step::Straight
            };
            Some((ny as usize * self.width + nx as usize, step))
        })
    }

    /// Free cells sharing an edge with `cell` (4-connected).
    pub fn edge_neighbors(&self, cell: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y) = self.coords(cell);
        let (x, y) = (x as isize, y as isize);
        [(0, -1), (-1, 0), (1, 0), (0, 1)]
            .into_iter()
            .filter(move |&(dx, dy)| self.is_free_xy(x + dx, y + dy))
            .map(move |(dx, dy)| (y + dy) as usize * self.width + (x + dx) as usize)
    }

    /// Euclidean distance between two cell centers.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        let (pa, pb) = (self.center(a), self.center(b));
        (pa[0] - pb[0]).hypot(pa[1] - pb[1])
    }
}

// Sorted so that neighbor indices come out ascending.
const NEIGHBOR_OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

fn parse_header(line: usize, text: &str, key: &str, arity: usize) -> Result<Vec<f64>> {
    let mut parts = text.split_whitespace();
    if parts.next() != Some(key) {
        return Err(Error::Parse {
            line,
            message: format!("expected `{key}` header"),
        });
    }
    let values: Vec<f64> = parts
        .map(|p| p.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse {
            line,
            message: format!("bad {key} value: {e}"),
        })?;
    if values.len() != arity {
        return Err(Error::Parse {
            line,
            message: format!("`{key}` takes {arity} value(s), got {}", values.len()),
        });
    }
    Ok(values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Straight,
    Diagonal,
}

/// An exact path length `straight + diagonal·√2` in cell units.
///
/// Since √2 is irrational two costs are equal only when both counts match,
/// which makes Dijkstra ties and equality checks exact.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct PathCost {
    pub straight: u32,
    pub diagonal: u32,
}

impl PathCost {
    pub const ZERO: PathCost = PathCost {
        straight: 0,
        diagonal: 0,
    };

    #[inline]
    pub fn then(self, step: Step) -> PathCost {
        match step {
            Step::Straight => PathCost {
                straight: self.straight + 1,
                ..self
            },
            Step::Diagonal => PathCost {
                diagonal: self.diagonal + 1,
                ..self
            },
        }
    }

    /// Length in meters for cells of edge `cell_size`.
    #[inline]
    pub fn meters(self, cell_size: f64) -> f64 {
        cell_size * (self.straight as f64 + self.diagonal as f64 * SQRT_2)
    }
}

impl Ord for PathCost {
    fn cmp(&self, other: &Self) -> Ordering {
        // sign of (a1 - a2) - (b2 - b1)·√2
        let d = self.straight as i128 - other.straight as i128;
        let e = other.diagonal as i128 - self.diagonal as i128;
        match (d.signum(), e.signum()) {
            (0, 0) => Ordering::Equal,
            (ds, es) if ds >= 0 && es <= 0 => Ordering::Greater,
            (ds, es) if ds <= 0 && es >= 0 => Ordering::Less,
            (1, 1) => (d * d).cmp(&(2 * e * e)),
            _ => (2 * e * e).cmp(&(d * d)),
        }
    }
}

impl PartialOrd for PathCost {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for PathCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}√2", self.straight, self.diagonal)
    }
}

/// Shortest traversable distances from the robot cell, with every reachable
/// cell assigned to the robot neighbor that starts its shortest path.
#[derive(Clone, Debug)]
pub struct GraphPartition {
    robot: usize,
    width: usize,
    cell_size: f64,
    cost: Vec<Option<PathCost>>,
    group: Vec<Option<usize>>,
}

impl GraphPartition {
    pub fn robot_cell(&self) -> usize {
        self.robot
    }

    #[inline]
    pub fn is_reachable(&self, cell: usize) -> bool {
        self.cost.get(cell).is_some_and(Option::is_some)
    }

    #[inline]
    pub fn cost(&self, cell: usize) -> Option<PathCost> {
        self.cost.get(cell).copied().flatten()
    }

    /// Shortest free-path length δ in meters, `None` when unreachable.
    #[inline]
    pub fn path_length(&self, cell: usize) -> Option<f64> {
        self.cost(cell).map(|c| c.meters(self.cell_size))
    }

    /// The neighbor `n` whose group contains `cell`. The robot cell is its
    /// own group.
    #[inline]
    pub fn group(&self, cell: usize) -> Option<usize> {
        self.group.get(cell).copied().flatten()
    }

    /// The robot's legal neighbors `N`, ascending.
    pub fn neighbor_set(&self) -> Vec<usize> {
        let mut n: Vec<usize> = self
            .group
            .iter()
            .flatten()
            .copied()
            .filter(|&g| g != self.robot)
            .collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    /// Unit vector from the robot cell toward the group representative of
    /// `cell`; zero for the robot cell and unreachable cells.
    #[inline]
    pub fn direction(&self, cell: usize) -> [f64; 2] {
        match self.group(cell) {
            Some(n) if n != self.robot => {
                let dx = (n % self.width) as f64 - (self.robot % self.width) as f64;
                let dy = (n / self.width) as f64 - (self.robot / self.width) as f64;
                let norm = dx.hypot(dy);
                [dx / norm, dy / norm]
            }
            _ => [0.0, 0.0],
        }
    }
}

/// Dijkstra from `robot_cell` over legal moves. Ties between equally short
/// paths through different robot neighbors go to the lowest neighbor index.
pub fn build_partition(grid: &OccupancyGrid, robot_cell: usize) -> Result<GraphPartition> {
    grid.require_free(robot_cell, "robot")?;
    let n = grid.len();
    let mut cost: Vec<Option<PathCost>> = vec![None; n];
    let mut group: Vec<Option<usize>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();

    cost[robot_cell] = Some(PathCost::ZERO);
    group[robot_cell] = Some(robot_cell);
    heap.push(Reverse((PathCost::ZERO, robot_cell)));

    while let Some(Reverse((c, u))) = heap.pop() {
        if settled[u] {
            continue;
        }
        settled[u] = true;
        let from_group = if u == robot_cell { None } else { group[u] };
        for (v, step) in grid.neighbors(u) {
            let candidate = c.then(step);
            let g = from_group.unwrap_or(v);
            match cost[v] {
                Some(existing) if candidate > existing => {}
                Some(existing) if candidate == existing => {
                    if group[v].is_none_or(|cur| g < cur) {
                        group[v] = Some(g);
                    }
                }
                _ => {
                    cost[v] = Some(candidate);
                    group[v] = Some(g);
                    heap.push(Reverse((candidate, v)));
                }
            }
        }
    }

    Ok(GraphPartition {
        robot: robot_cell,
        width: grid.width(),
        cell_size: grid.cell_size(),
        cost,
        group,
    })
}

/// A shortest path between two cells.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPath {
    pub cells: Vec<usize>,
    pub cost: PathCost,
    pub length: f64,
}

/// Shortest legal path from `from` to `to`, or `Ok(None)` when none exists.
///
/// Among equally short paths the one whose predecessors have the lowest cell
/// indices is returned.
pub fn shortest_path(grid: &OccupancyGrid, from: usize, to: usize) -> Result<Option<GridPath>> {
    grid.require_free(from, "start")?;
    grid.require_free(to, "goal")?;
    let n = grid.len();
    let mut cost: Vec<Option<PathCost>> = vec![None; n];
    let mut pred: Vec<usize> = vec![usize::MAX; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    cost[from] = Some(PathCost::ZERO);
    heap.push(Reverse((PathCost::ZERO, from)));

    while let Some(Reverse((c, u))) = heap.pop() {
        if settled[u] {
            continue;
        }
        settled[u] = true;
        if u == to {
            break;
        }
        for (v, step) in grid.neighbors(u) {
            if settled[v] {
                continue;
            }
            let candidate = c.then(step);
            match cost[v] {
                Some(existing) if candidate > existing => {}
                Some(existing) if candidate == existing => pred[v] = pred[v].min(u),
                _ => {
                    cost[v] = Some(candidate);
                    pred[v] = u;
                    heap.push(Reverse((candidate, v)));
                }
            }
        }
    }

    let Some(total) = cost[to].filter(|_| settled[to]) else {
        return Ok(None);
    };
    let mut cells = vec![to];
    let mut cur = to;
    while cur != from {
        cur = pred[cur];
        cells.push(cur);
    }
    cells.reverse();
    Ok(Some(GridPath {
        cells,
        cost: total,
        length: total.meters(grid.cell_size()),
    }))
}
