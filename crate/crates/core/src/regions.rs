//! Rectangular candidate regions for coarse-to-fine source search.
//!
//! The free space is first covered by a quadtree whose leaves are either
//! fully free squares no larger than the size limit or single cells. Leaves
//! are then greedily fused with edge neighbors as long as the union stays a
//! fully free rectangle within the size limit.

use crate::grid::OccupancyGrid;

/// Half-open cell rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CellRect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    pub fn cells<'a>(&self, grid: &'a OccupancyGrid) -> impl Iterator<Item = usize> + 'a {
        let r = *self;
        (r.y0..r.y1).flat_map(move |y| (r.x0..r.x1).map(move |x| grid.index(x, y)))
    }

    fn is_free(&self, grid: &OccupancyGrid) -> bool {
        self.cells(grid).all(|c| grid.is_free(c))
    }

    fn is_blocked(&self, grid: &OccupancyGrid) -> bool {
        self.cells(grid).all(|c| !grid.is_free(c))
    }

    /// Union with `other` when the two share a whole edge.
    fn fuse(&self, other: &CellRect) -> Option<CellRect> {
        let side_by_side = self.y0 == other.y0
            && self.y1 == other.y1
            && (self.x1 == other.x0 || other.x1 == self.x0);
        let stacked = self.x0 == other.x0
            && self.x1 == other.x1
            && (self.y1 == other.y0 || other.y1 == self.y0);
        (side_by_side || stacked).then(|| CellRect {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
        })
    }

    /// Quadrants, or halves when one side is a single cell. Empty for a
    /// single cell.
    pub fn split(&self) -> Vec<CellRect> {
        let xs = halves(self.x0, self.x1);
        let ys = halves(self.y0, self.y1);
        if xs.len() == 1 && ys.len() == 1 {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(4);
        for &(y0, y1) in &ys {
            for &(x0, x1) in &xs {
                out.push(CellRect { x0, y0, x1, y1 });
            }
        }
        out
    }
}

fn halves(a: usize, b: usize) -> Vec<(usize, usize)> {
    if b - a <= 1 {
        vec![(a, b)]
    } else {
        let mid = a + (b - a).div_ceil(2);
        vec![(a, mid), (mid, b)]
    }
}

/// A candidate source region and its current posterior mass.
#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub bounds: CellRect,
    /// Free cell nearest the region centroid; simulated on its behalf.
    pub representative: usize,
    /// Number of free cells in the region.
    pub area: usize,
    pub prob: f64,
}

impl Region {
    pub fn new(grid: &OccupancyGrid, bounds: CellRect) -> Option<Region> {
        let cx = (bounds.x0 + bounds.x1 - 1) as f64 / 2.0;
        let cy = (bounds.y0 + bounds.y1 - 1) as f64 / 2.0;
        let mut best: Option<(f64, usize)> = None;
        let mut area = 0;
        for c in bounds.cells(grid).filter(|&c| grid.is_free(c)) {
            area += 1;
            let (x, y) = grid.coords(c);
            let d = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            // cells come in ascending index order, so strict < keeps the lowest
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, c));
            }
        }
        best.map(|(_, representative)| Region {
            bounds,
            representative,
            area,
            prob: 0.0,
        })
    }

    pub fn is_single_cell(&self) -> bool {
        self.area == 1
    }

    pub fn split(&self, grid: &OccupancyGrid) -> Vec<Region> {
        self.bounds
            .split()
            .into_iter()
            .filter_map(|b| Region::new(grid, b))
            .collect()
    }
}

/// Covers the free cells with disjoint rectangles of at most
/// `max_region_size` cells per side.
pub fn build_regions(grid: &OccupancyGrid, max_region_size: usize) -> Vec<Region> {
    let max_size = max_region_size.max(1);
    let side = grid.width().max(grid.height()).next_power_of_two();
    let mut leaves = Vec::new();
    quadtree(grid, 0, 0, side, max_size, &mut leaves);
    fuse_leaves(&mut leaves, max_size);
    leaves.sort_by_key(|r| (r.y0, r.x0));
    leaves
        .into_iter()
        .filter_map(|b| Region::new(grid, b))
        .collect()
}

fn quadtree(grid: &OccupancyGrid, x: usize, y: usize, size: usize, max_size: usize, out: &mut Vec<CellRect>) {
    if x >= grid.width() || y >= grid.height() {
        return;
    }
    let rect = CellRect {
        x0: x,
        y0: y,
        x1: (x + size).min(grid.width()),
        y1: (y + size).min(grid.height()),
    };
    if rect.is_blocked(grid) {
        return;
    }
    if size == 1 || (size <= max_size && rect.is_free(grid)) {
        out.push(rect);
        return;
    }
    let h = size / 2;
    for (dx, dy) in [(0, 0), (h, 0), (0, h), (h, h)] {
        quadtree(grid, x + dx, y + dy, h, max_size, out);
    }
}

fn fuse_leaves(leaves: &mut Vec<CellRect>, max_size: usize) {
    leaves.sort_by_key(|r| (r.y0, r.x0));
    'scan: loop {
        for i in 0..leaves.len() {
            for j in i + 1..leaves.len() {
                if let Some(u) = leaves[i].fuse(&leaves[j]) {
                    if u.width() <= max_size && u.height() <= max_size {
                        leaves[i] = u;
                        leaves.remove(j);
                        continue 'scan;
                    }
                }
            }
        }
        break;
    }
}
