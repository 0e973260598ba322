//! Brute-force reference computations, written without the library's own
//! search and filter code.

/// A path length `straight + diagonal·√2` as an integer pair.
pub type Length = (u32, u32);

pub fn meters((s, d): Length) -> f64 {
    s as f64 + d as f64 * std::f64::consts::SQRT_2
}

/// Legal moves on a row-major occupancy vector: 8-connected, and a
/// diagonal step needs both orthogonally adjacent cells free.
pub fn moves(free: &[bool], w: usize, h: usize, cell: usize) -> Vec<(usize, bool)> {
    let (x, y) = ((cell % w) as i64, (cell / w) as i64);
    let ok = |x: i64, y: i64| x >= 0 && y >= 0 && x < w as i64 && y < h as i64 && free[y as usize * w + x as usize];
    let mut out = Vec::new();
    for dy in -1..=1 {
        for dx in -1..=1 {
            if (dx, dy) == (0, 0) || !ok(x + dx, y + dy) {
                continue;
            }
            let diagonal = dx != 0 && dy != 0;
            if diagonal && !(ok(x + dx, y) && ok(x, y + dy)) {
                continue;
            }
            out.push(((y + dy) as usize * w + (x + dx) as usize, diagonal));
        }
    }
    out
}

/// Shortest lengths from `from` to every cell by relaxing all edges until
/// nothing changes.
pub fn distances(free: &[bool], w: usize, h: usize, from: usize) -> Vec<Option<Length>> {
    let mut dist: Vec<Option<Length>> = vec![None; free.len()];
    dist[from] = Some((0, 0));
    let adjacency: Vec<Vec<(usize, bool)>> = (0..free.len())
        .map(|c| if free[c] { moves(free, w, h, c) } else { Vec::new() })
        .collect();
    loop {
        let mut changed = false;
        for u in 0..free.len() {
            let Some((s, d)) = dist[u] else { continue };
            for &(v, diagonal) in &adjacency[u] {
                let cand = if diagonal { (s, d + 1) } else { (s + 1, d) };
                if dist[v].is_none_or(|cur| meters(cand) < meters(cur)) {
                    dist[v] = Some(cand);
                    changed = true;
                }
            }
        }
        if !changed {
            return dist;
        }
    }
}

/// `p(H | z_1..z_t)` from the per-measurement conditionals `p(H | z_k)` by
/// Bayes' rule with conditionally independent measurements, in probability
/// space.
pub fn direct_bayes(prior: f64, conditionals: &[f64]) -> f64 {
    let mut yes = prior;
    let mut no = 1.0 - prior;
    for &p in conditionals {
        yes *= p / prior;
        no *= (1.0 - p) / (1.0 - prior);
    }
    yes / (yes + no)
}

/// Candidate posterior as a plain product of per-cell likelihoods followed
/// by normalization.
pub fn direct_posterior(fz: &[f64], alpha: &[f64], cells: &[usize], plumes: &[Vec<f64>]) -> Vec<f64> {
    let w: Vec<f64> = plumes
        .iter()
        .map(|fs| {
            cells
                .iter()
                .map(|&i| alpha[i] * (1.0 - (fz[i] - fs[i]).abs()) + (1.0 - alpha[i]))
                .product()
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}
