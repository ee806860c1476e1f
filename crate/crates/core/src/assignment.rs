//! Exact linear assignment: shortest-augmenting-path Hungarian solver and a
//! brute-force reference for small instances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Real;

/// Largest size accepted by [`brute_force_lap`].
pub const BRUTE_FORCE_MAX: usize = 8;

/// A bijection on `0..n`; `mapping[i] = j` matches row `i` to column `j`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Permutation {
    mapping: Vec<usize>,
}

impl Permutation {
    pub fn new(mapping: Vec<usize>) -> Result<Self> {
        let n = mapping.len();
        let mut seen = vec![false; n];
        for &j in &mapping {
            if j >= n || seen[j] {
                return Err(Error::InvalidInput(format!("not a permutation of 0..{n}: {mapping:?}")));
            }
            seen[j] = true;
        }
        Ok(Self { mapping })
    }

    pub fn identity(n: usize) -> Self {
        Self { mapping: (0..n).collect() }
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.mapping
    }

    #[inline]
    pub fn get(&self, i: usize) -> usize {
        self.mapping[i]
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (i, &j) in self.mapping.iter().enumerate() {
            inv[j] = i;
        }
        Self { mapping: inv }
    }

    /// `i ↦ other[self[i]]`.
    pub fn then(&self, other: &Permutation) -> Self {
        Self { mapping: self.mapping.iter().map(|&j| other.mapping[j]).collect() }
    }

    /// 0/1 matrix with a one at `(i, mapping[i])`.
    pub fn to_matrix<T: Real>(&self) -> Matrix<T> {
        let n = self.len();
        let mut m = Matrix::zeros(n, n);
        for (i, &j) in self.mapping.iter().enumerate() {
            m[(i, j)] = T::one();
        }
        m
    }

    /// `P·y`: row `i` of the result is row `mapping[i]` of `y`.
    pub fn apply_rows<T: Real>(&self, y: &Matrix<T>) -> Matrix<T> {
        y.select_rows(&self.mapping)
    }

    /// `Σᵢ cost[i, mapping[i]]`, summed in row order.
    pub fn cost<T: Real>(&self, cost: &Matrix<T>) -> T {
        self.mapping.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum()
    }
}

fn check_square<T: Real>(cost: &Matrix<T>, what: &str) -> Result<()> {
    if !cost.is_square() {
        return Err(Error::InvalidInput(format!(
            "{what}: cost matrix must be square, got {}x{}",
            cost.rows(),
            cost.cols()
        )));
    }
    if cost.rows() == 0 {
        return Err(Error::InvalidInput(format!("{what}: empty cost matrix")));
    }
    if !cost.is_finite() {
        return Err(Error::InvalidInput(format!("{what}: non-finite cost")));
    }
    Ok(())
}

/// Minimum-cost perfect matching on a square cost matrix, `O(n³)`.
///
/// Rows are inserted one at a time and each is routed to a free column along a
/// shortest augmenting path in the reduced costs (Dijkstra over the columns
/// not yet reached). Duals are updated only for the rows and columns the
/// search visited. Returns the permutation and its total cost.
pub fn solve_lap<T: Real>(cost: &Matrix<T>) -> Result<(Permutation, T)> {
    check_square(cost, "solve_lap")?;
    let n = cost.rows();
    const FREE: usize = usize::MAX;
    let inf = T::infinity();
    let mut u = vec![T::zero(); n];
    let mut v = vec![T::zero(); n];
    let mut path = vec![FREE; n];
    let mut col_of_row = vec![FREE; n];
    let mut row_of_col = vec![FREE; n];
    let mut dist = vec![inf; n];
    let mut remaining = vec![0usize; n];
    let mut seen_rows = vec![false; n];
    let mut seen_cols = vec![false; n];

    for start in 0..n {
        // Shortest augmenting path from `start` to any free column.
        let mut min_val = T::zero();
        let mut n_remaining = n;
        for (k, r) in remaining.iter_mut().enumerate() {
            *r = n - 1 - k;
        }
        seen_rows.iter_mut().for_each(|b| *b = false);
        seen_cols.iter_mut().for_each(|b| *b = false);
        dist.iter_mut().for_each(|d| *d = inf);
        let mut i = start;
        let sink = loop {
            seen_rows[i] = true;
            let row = cost.row(i);
            let base = min_val - u[i];
            let mut lowest = inf;
            let mut best = 0usize;
            for (k, &j) in remaining[..n_remaining].iter().enumerate() {
                let r = base + row[j] - v[j];
                if r < dist[j] {
                    path[j] = i;
                    dist[j] = r;
                }
                if dist[j] < lowest || (dist[j] == lowest && row_of_col[j] == FREE) {
                    lowest = dist[j];
                    best = k;
                }
            }
            min_val = lowest;
            let j = remaining[best];
            seen_cols[j] = true;
            n_remaining -= 1;
            remaining[best] = remaining[n_remaining];
            if row_of_col[j] == FREE {
                break j;
            }
            i = row_of_col[j];
        };

        u[start] += min_val;
        for r in 0..n {
            if seen_rows[r] && r != start {
                u[r] += min_val - dist[col_of_row[r]];
            }
        }
        for c in 0..n {
            if seen_cols[c] {
                v[c] -= min_val - dist[c];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row_of_col[j] = r;
            std::mem::swap(&mut col_of_row[r], &mut j);
            if r == start {
                break;
            }
        }
    }

    let perm = Permutation { mapping: col_of_row };
    let total = perm.cost(cost);
    Ok((perm, total))
}

/// Exhaustive minimum over all `n!` permutations (`n ≤ 8`).
///
/// Permutations are visited in lexicographic order and only a strictly better
/// cost replaces the incumbent, so ties resolve to the lexicographically
/// smallest optimal mapping.
pub fn brute_force_lap<T: Real>(cost: &Matrix<T>) -> Result<(Permutation, T)> {
    if cost.rows() > BRUTE_FORCE_MAX {
        return Err(Error::Refused(format!(
            "brute-force assignment limited to n ≤ {BRUTE_FORCE_MAX}, got {}",
            cost.rows()
        )));
    }
    check_square(cost, "brute_force_lap")?;
    let n = cost.rows();
    let mut current: Vec<usize> = (0..n).collect();
    let mut best = current.clone();
    let mut best_cost = Permutation { mapping: current.clone() }.cost(cost);
    while next_permutation(&mut current) {
        let c: T = current.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
        if c < best_cost {
            best_cost = c;
            best.copy_from_slice(&current);
        }
    }
    Ok((Permutation { mapping: best }, best_cost))
}

fn next_permutation(a: &mut [usize]) -> bool {
    let n = a.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && a[i - 1] >= a[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while a[j] <= a[i - 1] {
        j -= 1;
    }
    a.swap(i - 1, j);
    a[i..].reverse();
    true
}

/// Permutation maximizing `Σᵢ score[i, σ(i)]`; solved as an assignment on `−score`.
pub fn max_trace_matching<T: Real>(score: &Matrix<T>) -> Result<Permutation> {
    check_square(score, "max_trace_matching")?;
    solve_lap(&score.map(|v| -v)).map(|(p, _)| p)
}
