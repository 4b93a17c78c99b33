//! Optimal and k-best linear assignment.
//!
//! Infinite costs mark forbidden pairs.

use std::collections::BTreeSet;

/// Dense row-major cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, fill: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![fill; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    fn transposed(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Total cost of a row-to-column assignment.
    pub fn cost_of(&self, assignment: &[usize]) -> f64 {
        assignment.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }
}

/// Minimum-cost assignment of every row to a distinct column (`rows <= cols`).
///
/// Returns the column of each row, or `None` when no finite-cost assignment
/// exists. Shortest augmenting path with potentials, `O(rows^2 * cols)`.
pub fn solve(cost: &CostMatrix) -> Option<Vec<usize>> {
    let n = cost.rows;
    let m = cost.cols;
    assert!(n <= m, "solve requires rows <= cols");
    if n == 0 {
        return Some(Vec::new());
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let c = cost.get(i0 - 1, j - 1);
                let cur = if c.is_finite() { c - u[i0] - v[j] } else { inf };
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            if !delta.is_finite() {
                return None;
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    Some(out)
}

/// Optimal pairing for an arbitrary-shape matrix: each of the `min(rows, cols)`
/// smaller-side items is matched. Returns `(row, col)` pairs sorted by row.
pub fn solve_rectangular(cost: &CostMatrix) -> Option<Vec<(usize, usize)>> {
    if cost.rows <= cost.cols {
        solve(cost).map(|a| a.into_iter().enumerate().collect())
    } else {
        let t = cost.transposed();
        solve(&t).map(|a| {
            let mut pairs: Vec<(usize, usize)> = a.into_iter().enumerate().map(|(j, i)| (i, j)).collect();
            pairs.sort_unstable();
            pairs
        })
    }
}

/// One ranked assignment hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedAssignment {
    pub columns: Vec<usize>,
    pub cost: f64,
}

struct MurtyNode {
    forced: Vec<(usize, usize)>,
    forbidden: Vec<(usize, usize)>,
    solution: Vec<usize>,
    cost: f64,
}

fn constrained(cost: &CostMatrix, forced: &[(usize, usize)], forbidden: &[(usize, usize)]) -> CostMatrix {
    let mut c = cost.clone();
    for &(i, j) in forbidden {
        c.set(i, j, f64::INFINITY);
    }
    for &(i, j) in forced {
        let keep = cost.get(i, j);
        for jj in 0..c.cols {
            c.set(i, jj, f64::INFINITY);
        }
        for ii in 0..c.rows {
            c.set(ii, j, f64::INFINITY);
        }
        c.set(i, j, keep);
    }
    c
}

/// The `k` lowest-cost assignments in ascending cost order (Murty's
/// partitioning). Fewer are returned when fewer feasible ones exist.
pub fn murty_k_best(cost: &CostMatrix, k: usize) -> Vec<RankedAssignment> {
    let mut out = Vec::new();
    if k == 0 {
        return out;
    }
    let Some(first) = solve(cost) else {
        return out;
    };
    let mut queue = vec![MurtyNode {
        cost: cost.cost_of(&first),
        solution: first,
        forced: Vec::new(),
        forbidden: Vec::new(),
    }];
    while out.len() < k && !queue.is_empty() {
        // smallest cost, earliest inserted on ties
        let best = queue
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.cost.total_cmp(&b.1.cost).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)
            .expect("queue is non-empty");
        let node = queue.remove(best);
        out.push(RankedAssignment {
            columns: node.solution.clone(),
            cost: node.cost,
        });
        let forced_rows: BTreeSet<usize> = node.forced.iter().map(|&(i, _)| i).collect();
        let free_rows: Vec<usize> = (0..cost.rows).filter(|i| !forced_rows.contains(i)).collect();
        let mut forced = node.forced.clone();
        for &row in &free_rows {
            let mut forbidden = node.forbidden.clone();
            forbidden.push((row, node.solution[row]));
            let sub = constrained(cost, &forced, &forbidden);
            if let Some(sol) = solve(&sub) {
                let c = cost.cost_of(&sol);
                if c.is_finite() {
                    queue.push(MurtyNode {
                        forced: forced.clone(),
                        forbidden,
                        solution: sol,
                        cost: c,
                    });
                }
            }
            forced.push((row, node.solution[row]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_force(cost: &CostMatrix) -> Vec<(Vec<usize>, f64)> {
        fn rec(cost: &CostMatrix, row: usize, used: &mut Vec<bool>, cur: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, f64)>) {
            if row == cost.rows() {
                let c = cost.cost_of(cur);
                if c.is_finite() {
                    out.push((cur.clone(), c));
                }
                return;
            }
            for j in 0..cost.cols() {
                if !used[j] {
                    used[j] = true;
                    cur.push(j);
                    rec(cost, row + 1, used, cur, out);
                    cur.pop();
                    used[j] = false;
                }
            }
        }
        let mut out = Vec::new();
        rec(cost, 0, &mut vec![false; cost.cols()], &mut Vec::new(), &mut out);
        out.sort_by(|a, b| a.1.total_cmp(&b.1));
        out
    }

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> CostMatrix {
        let mut s = seed;
        CostMatrix::from_fn(rows, cols, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let v = ((s >> 11) as f64) / ((1u64 << 53) as f64);
            if v < 0.15 {
                f64::INFINITY
            } else {
                (v * 100.0).round()
            }
        })
    }

    #[test]
    fn solves_square() {
        let c = CostMatrix::from_fn(3, 3, |i, j| [[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]][i][j]);
        let a = solve(&c).unwrap();
        assert_eq!(c.cost_of(&a), 5.0);
    }

    #[test]
    fn matches_brute_force_with_forbidden_pairs() {
        for seed in 0..200 {
            let rows = 1 + (seed as usize % 4);
            let cols = rows + (seed as usize / 4) % 3;
            let c = lcg_matrix(rows, cols, seed);
            let bf = brute_force(&c);
            match solve(&c) {
                Some(a) => assert!((c.cost_of(&a) - bf[0].1).abs() < 1e-9, "seed {seed}"),
                None => assert!(bf.is_empty(), "seed {seed}"),
            }
        }
    }

    #[test]
    fn infeasible_returns_none() {
        let c = CostMatrix::from_fn(2, 2, |_, j| if j == 0 { 1.0 } else { f64::INFINITY });
        assert!(solve(&c).is_none());
        assert!(murty_k_best(&c, 3).is_empty());
    }

    #[test]
    fn rectangular_tall() {
        let c = CostMatrix::from_fn(3, 1, |i, _| [5.0, 1.0, 3.0][i]);
        assert_eq!(solve_rectangular(&c).unwrap(), vec![(1, 0)]);
    }

    #[test]
    fn murty_matches_sorted_enumeration() {
        for seed in 0..100 {
            let rows = 1 + (seed as usize % 4);
            let cols = rows + (seed as usize / 4) % 3;
            let c = lcg_matrix(rows, cols, seed + 1000);
            let bf = brute_force(&c);
            let k = 6;
            let ranked = murty_k_best(&c, k);
            assert_eq!(ranked.len(), bf.len().min(k), "seed {seed}");
            for (r, b) in ranked.iter().zip(&bf) {
                assert!((r.cost - b.1).abs() < 1e-9, "seed {seed}");
            }
            let distinct: BTreeSet<Vec<usize>> = ranked.iter().map(|r| r.columns.clone()).collect();
            assert_eq!(distinct.len(), ranked.len());
        }
    }
}
