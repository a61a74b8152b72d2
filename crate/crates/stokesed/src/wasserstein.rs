//! Wasserstein-1 distance between particle clouds.
//!
//! Equal-count, uniform-weight clouds reduce to a minimum-cost assignment,
//! solved exactly by the Jonker-Volgenant shortest-augmenting-path algorithm
//! on a dense Euclidean cost matrix. Everything else (unequal counts,
//! nonuniform weights, or counts beyond [`EXACT_ASSIGNMENT_CAP`]) gets a
//! bracketing pair: a greedy feasible plan as an upper bound and a
//! Kantorovich dual-feasible lower bound.

use crate::cloud::ParticleCloud;
use crate::error::{Error, Result};
use crate::math::Vec3;
use rayon::prelude::*;

/// Dense assignment above this count is rejected (quadratic memory, cubic
/// worst-case time).
pub const EXACT_ASSIGNMENT_CAP: usize = 4096;

/// Masses further apart than this are not comparable under W1.
pub const MASS_MATCH_TOLERANCE: f64 = 1e-9;

/// Distance estimate with its provenance. Exact solves have
/// `lower == value`; bracketing estimates keep the dual gap visible.
#[derive(Clone, Copy, Debug)]
pub struct W1Result {
    /// Exact distance, or a feasible-plan upper bound.
    pub value: f64,
    /// Dual-feasible lower bound (equals `value` when `exact`).
    pub lower: f64,
    pub exact: bool,
}

impl W1Result {
    pub fn gap(&self) -> f64 {
        self.value - self.lower
    }
}

fn check_masses(a: &ParticleCloud, b: &ParticleCloud) -> Result<()> {
    let (ma, mb) = (a.total_mass(), b.total_mass());
    if (ma - mb).abs() > MASS_MATCH_TOLERANCE {
        return Err(Error::IncomparableMeasures {
            mass_a: ma,
            mass_b: mb,
        });
    }
    Ok(())
}

/// W1 distance. Routes to the exact assignment solver whenever both clouds
/// have the same count and uniform weights within the cap, otherwise
/// returns the greedy/dual bracket.
pub fn wasserstein1(a: &ParticleCloud, b: &ParticleCloud) -> Result<W1Result> {
    check_masses(a, b)?;
    if a.len() == b.len()
        && a.len() <= EXACT_ASSIGNMENT_CAP
        && a.has_uniform_weights()
        && b.has_uniform_weights()
    {
        let v = exact_uniform(a, b);
        return Ok(W1Result {
            value: v,
            lower: v,
            exact: true,
        });
    }
    let value = greedy_upper_bound(a, b);
    let lower = dual_lower_bound(a, b);
    Ok(W1Result {
        value,
        lower,
        exact: false,
    })
}

/// Exact-only entry point; errors instead of degrading to bounds.
pub fn wasserstein1_exact(a: &ParticleCloud, b: &ParticleCloud) -> Result<f64> {
    check_masses(a, b)?;
    if a.len() != b.len() {
        return Err(Error::InvalidParameter(format!(
            "exact solver needs equal counts, got {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if !a.has_uniform_weights() || !b.has_uniform_weights() {
        return Err(Error::InvalidParameter(
            "exact solver needs uniform weights".into(),
        ));
    }
    if a.len() > EXACT_ASSIGNMENT_CAP {
        return Err(Error::AssignmentTooLarge {
            n: a.len(),
            cap: EXACT_ASSIGNMENT_CAP,
        });
    }
    Ok(exact_uniform(a, b))
}

fn exact_uniform(a: &ParticleCloud, b: &ParticleCloud) -> f64 {
    let n = a.len();
    if n == 1 {
        return a.total_mass() * (a.positions[0] - b.positions[0]).norm();
    }
    let cost = CostMatrix::euclidean(&a.positions, &b.positions);
    let (assignment, total) = solve_assignment(&cost);
    debug_assert_eq!(assignment.len(), n);
    a.total_mass() / n as f64 * total
}

/// Row-major dense cost matrix.
struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    /// Entries are independent, so parallel construction is bitwise
    /// deterministic.
    fn euclidean(a: &[Vec3], b: &[Vec3]) -> Self {
        let n = a.len();
        let mut data = vec![0.0; n * n];
        data.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = (a[i] - b[j]).norm();
            }
        });
        CostMatrix { n, data }
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

const FREE: usize = usize::MAX;

/// Jonker-Volgenant dense assignment: column reduction, reduction transfer,
/// two augmenting-row-reduction sweeps, then shortest augmenting paths for
/// the remaining free rows. Returns the row-to-column assignment and the
/// total cost. Ties resolve toward lower indices through the strict
/// comparisons in the scans; the optimal cost itself is tie-independent.
fn solve_assignment(cost: &CostMatrix) -> (Vec<usize>, f64) {
    let n = cost.n;
    let mut x = vec![FREE; n]; // row -> col
    let mut y = vec![FREE; n]; // col -> row
    let mut v = vec![0.0f64; n];

    // Column reduction, scanning columns right to left.
    let mut matches = vec![0usize; n];
    for j in (0..n).rev() {
        let mut imin = 0;
        let mut min = cost.at(0, j);
        for i in 1..n {
            if cost.at(i, j) < min {
                min = cost.at(i, j);
                imin = i;
            }
        }
        v[j] = min;
        matches[imin] += 1;
        if matches[imin] == 1 {
            x[imin] = j;
            y[j] = imin;
        } else {
            y[j] = FREE;
        }
    }

    // Reduction transfer from singly assigned rows.
    let mut free_rows = Vec::with_capacity(n);
    for i in 0..n {
        if matches[i] == 0 {
            free_rows.push(i);
        } else if matches[i] == 1 {
            let j1 = x[i];
            let mut min = f64::INFINITY;
            for j in 0..n {
                if j != j1 {
                    let h = cost.at(i, j) - v[j];
                    if h < min {
                        min = h;
                    }
                }
            }
            v[j1] -= min;
        }
    }

    // Two sweeps of augmenting row reduction.
    for _ in 0..2 {
        let mut k = 0;
        let prv = free_rows.len();
        let mut next_free: Vec<usize> = Vec::with_capacity(prv);
        while k < prv {
            let i = free_rows[k];
            k += 1;
            let row = cost.row(i);
            let mut j1 = 0;
            let mut umin = row[0] - v[0];
            let mut j2 = FREE;
            let mut usubmin = f64::INFINITY;
            for j in 1..n {
                let h = row[j] - v[j];
                if h < usubmin {
                    if h >= umin {
                        usubmin = h;
                        j2 = j;
                    } else {
                        usubmin = umin;
                        umin = h;
                        j2 = j1;
                        j1 = j;
                    }
                }
            }
            let mut i0 = y[j1];
            if umin < usubmin {
                v[j1] -= usubmin - umin;
            } else if i0 != FREE {
                j1 = j2;
                i0 = y[j1];
            }
            x[i] = j1;
            y[j1] = i;
            if i0 != FREE {
                if umin < usubmin {
                    // Retry the displaced row immediately.
                    k -= 1;
                    free_rows[k] = i0;
                } else {
                    next_free.push(i0);
                }
            }
        }
        free_rows = next_free;
    }

    // Shortest augmenting path for each still-free row.
    let mut d = vec![0.0f64; n];
    let mut pred = vec![0usize; n];
    let mut col: Vec<usize> = (0..n).collect();
    for &freerow in &free_rows {
        let row = cost.row(freerow);
        for j in 0..n {
            d[j] = row[j] - v[j];
            pred[j] = freerow;
            col[j] = j;
        }
        let mut low = 0;
        let mut up = 0;
        let mut last: isize = -1;
        let mut min = 0.0;
        let endofpath;
        'outer: loop {
            if up == low {
                last = low as isize - 1;
                min = d[col[up]];
                up += 1;
                for k in up..n {
                    let j = col[k];
                    let h = d[j];
                    if h <= min {
                        if h < min {
                            up = low;
                            min = h;
                        }
                        col[k] = col[up];
                        col[up] = j;
                        up += 1;
                    }
                }
                for k in low..up {
                    if y[col[k]] == FREE {
                        endofpath = col[k];
                        break 'outer;
                    }
                }
            }
            let j1 = col[low];
            low += 1;
            let i = y[j1];
            let irow = cost.row(i);
            let u1 = irow[j1] - v[j1] - min;
            for k in up..n {
                let j = col[k];
                let h = irow[j] - v[j] - u1;
                if h < d[j] {
                    d[j] = h;
                    pred[j] = i;
                    if h == min {
                        if y[j] == FREE {
                            endofpath = j;
                            break 'outer;
                        }
                        col[k] = col[up];
                        col[up] = j;
                        up += 1;
                    }
                }
            }
        }
        for k in 0..=last {
            let j1 = col[k as usize];
            v[j1] += d[j1] - min;
        }
        // Walk the alternating path back to the free row.
        let mut j = endofpath;
        loop {
            let i = pred[j];
            y[j] = i;
            std::mem::swap(&mut x[i], &mut j);
            if i == freerow {
                break;
            }
        }
    }

    let total = (0..n).map(|i| cost.at(i, x[i])).sum();
    (x, total)
}

/// Feasible transport plan by greedy mass routing: sources in index order
/// each send their remaining mass to the nearest target with remaining
/// capacity. Always an upper bound for the optimal cost.
fn greedy_upper_bound(a: &ParticleCloud, b: &ParticleCloud) -> f64 {
    let mut remaining: Vec<f64> = b.weights.clone();
    let scale = a.total_mass() / b.total_mass();
    for r in &mut remaining {
        *r *= scale;
    }
    let mut total = 0.0;
    for (i, p) in a.positions.iter().enumerate() {
        let mut need = a.weights[i];
        while need > 1e-15 {
            let mut best = FREE;
            let mut best_d = f64::INFINITY;
            for (j, q) in b.positions.iter().enumerate() {
                if remaining[j] > 0.0 {
                    let dist = (p - q).norm();
                    if dist < best_d {
                        best_d = dist;
                        best = j;
                    }
                }
            }
            if best == FREE {
                break;
            }
            let sent = need.min(remaining[best]);
            total += sent * best_d;
            need -= sent;
            remaining[best] -= sent;
        }
    }
    total
}

/// Kantorovich dual bound with the 1-Lipschitz witness
/// `f(x) = dist(x, supp(other))`, taken in both directions.
fn dual_lower_bound(a: &ParticleCloud, b: &ParticleCloud) -> f64 {
    let from_a: f64 = a
        .positions
        .par_iter()
        .zip(&a.weights)
        .map(|(p, &w)| {
            w * b
                .positions
                .iter()
                .map(|q| (p - q).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    let from_b: f64 = b
        .positions
        .par_iter()
        .zip(&b.weights)
        .map(|(q, &w)| {
            w * a
                .positions
                .iter()
                .map(|p| (p - q).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    from_a.max(from_b)
}

/// Exhaustive reference solver, usable only for tiny clouds.
pub mod oracle {
    use super::*;

    /// Minimum assignment cost over all permutations; requires equal counts
    /// and uniform weights. Exponential, capped at n = 8.
    pub fn brute_force(a: &ParticleCloud, b: &ParticleCloud) -> Result<f64> {
        let n = a.len();
        if n != b.len() || n > 8 {
            return Err(Error::InvalidParameter(
                "brute force needs equal counts <= 8".into(),
            ));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::INFINITY;
        permute(&mut perm, 0, &mut |p| {
            let cost: f64 = p
                .iter()
                .enumerate()
                .map(|(i, &j)| (a.positions[i] - b.positions[j]).norm())
                .sum();
            if cost < best {
                best = cost;
            }
        });
        Ok(a.total_mass() / n as f64 * best)
    }

    fn permute(perm: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
        if k == perm.len() {
            visit(perm);
            return;
        }
        for i in k..perm.len() {
            perm.swap(k, i);
            permute(perm, k + 1, visit);
            perm.swap(k, i);
        }
    }
}
