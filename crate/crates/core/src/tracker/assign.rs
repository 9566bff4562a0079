//! Rectangular min-cost assignment (Hungarian, potentials form).
//!
//! Costs are compared lexicographically as `(unmatched pairs, total cost,
//! tie-break)`, which is an ordered group, so the usual potentials algorithm
//! stays exact. The result maximizes the number of feasible matches first,
//! then minimizes the summed cost; among equal-cost optima, lower row indices
//! (lower track ids) are preferred for matching and for cheaper columns.

use std::cmp::Ordering;
use std::ops::{Add, AddAssign, Sub, SubAssign};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Lex([f64; 4]);

impl Lex {
    const ZERO: Lex = Lex([0.0; 4]);
    const INF: Lex = Lex([f64::INFINITY, 0.0, 0.0, 0.0]);

    fn cmp(&self, o: &Lex) -> Ordering {
        for i in 0..4 {
            match self.0[i].partial_cmp(&o.0[i]) {
                Some(Ordering::Equal) | None => continue,
                Some(ord) => return ord,
            }
        }
        Ordering::Equal
    }

    fn lt(&self, o: &Lex) -> bool {
        self.cmp(o) == Ordering::Less
    }
}

impl Add for Lex {
    type Output = Lex;
    fn add(self, o: Lex) -> Lex {
        Lex(std::array::from_fn(|i| self.0[i] + o.0[i]))
    }
}

impl Sub for Lex {
    type Output = Lex;
    fn sub(self, o: Lex) -> Lex {
        Lex(std::array::from_fn(|i| self.0[i] - o.0[i]))
    }
}

impl AddAssign for Lex {
    fn add_assign(&mut self, o: Lex) {
        *self = *self + o;
    }
}

impl SubAssign for Lex {
    fn sub_assign(&mut self, o: Lex) {
        *self = *self - o;
    }
}

/// Optimal matching for `cost[row][col]`, `None` marking infeasible pairs.
/// Returns `(row, col)` pairs sorted by row.
pub fn assign(cost: &[Vec<Option<f64>>]) -> Vec<(usize, usize)> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, |r| r.len());
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    let n = rows.max(cols);
    let entry = |i: usize, j: usize| -> Lex {
        match cost.get(i).and_then(|r| r.get(j)).copied().flatten() {
            Some(c) => Lex([0.0, c, i as f64, (i * j) as f64]),
            None => Lex([1.0, 0.0, 0.0, 0.0]),
        }
    };

    // 1-based potentials algorithm on the padded n x n matrix.
    let mut u = vec![Lex::ZERO; n + 1];
    let mut v = vec![Lex::ZERO; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![Lex::INF; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = Lex::INF;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = entry(i0 - 1, j - 1) - u[i0] - v[j];
                if cur.lt(&minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j].lt(&delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
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

    let mut out: Vec<(usize, usize)> = (1..=n)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .filter(|&(i, j)| i < rows && j < cols && cost[i][j].is_some())
        .collect();
    out.sort_unstable();
    out
}

/// Exhaustive reference: best `(matched count, total cost)` over all feasible
/// partial matchings. Exponential; tests only.
pub fn brute_force(cost: &[Vec<Option<f64>>]) -> (usize, f64) {
    fn go(cost: &[Vec<Option<f64>>], i: usize, used: &mut Vec<bool>, acc: (usize, f64), best: &mut (usize, f64)) {
        if i == cost.len() {
            if acc.0 > best.0 || (acc.0 == best.0 && acc.1 < best.1) {
                *best = acc;
            }
            return;
        }
        go(cost, i + 1, used, acc, best);
        for j in 0..used.len() {
            if let Some(c) = cost[i][j] {
                if !used[j] {
                    used[j] = true;
                    go(cost, i + 1, used, (acc.0 + 1, acc.1 + c), best);
                    used[j] = false;
                }
            }
        }
    }
    let cols = cost.first().map_or(0, |r| r.len());
    let mut best = (0, 0.0);
    go(cost, 0, &mut vec![false; cols], (0, 0.0), &mut best);
    best
}
