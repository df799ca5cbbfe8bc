//! Exhaustive reference solver for small transportation problems.
//!
//! Basic feasible solutions of the transportation polytope are spanning trees
//! of the bipartite row/column graph whose tree solution is nonnegative. A
//! tree is generated by the same leaf-removal sequence as its Prüfer code:
//! repeatedly take the smallest-index leaf line (never the last line, which
//! survives), push its whole residual mass through its single cell into the
//! neighbouring line, and retire it. Lines with a smaller index than the
//! retired leaf are recorded as "must still gain a neighbour", which makes
//! the sequence canonical, so every tree is built exactly once. Branches
//! that would need a negative flow are cut, and branches whose partial cost
//! plus a lower bound on the rest (the cheapest remaining cell of every
//! line) already reaches the best complete tree are dropped. Nothing here
//! shares code with the network simplex.

use super::TransportProblem;
use crate::error::{Error, Result};

/// Largest `rows * cols` accepted by [`brute_force_transport`].
pub const BRUTE_FORCE_CELL_LIMIT: usize = 36;

/// Slack allowed when a leaf's residual exceeds its partner's by rounding.
const TIE_TOLERANCE: f64 = 1e-12;

struct Enumerator<'a> {
    rows: usize,
    cols: usize,
    cost: &'a [f64],
    residual: Vec<f64>,
    best: f64,
}

impl Enumerator<'_> {
    fn is_row(&self, line: usize) -> bool {
        line < self.rows
    }

    fn cell_cost(&self, a: usize, b: usize) -> f64 {
        let (r, c) = if self.is_row(a) { (a, b - self.rows) } else { (b, a - self.rows) };
        self.cost[r * self.cols + c]
    }

    /// Lower bound on the cost still to be paid: the residual of every alive
    /// line leaves through cells whose other end is alive, so it costs at
    /// least its cheapest such cell. Rows and columns each give a bound.
    fn remaining_bound(&self, alive: u64) -> f64 {
        let lines = self.rows + self.cols;
        let side = |rows: bool| -> f64 {
            (0..lines)
                .filter(|&l| alive & (1 << l) != 0 && self.is_row(l) == rows && self.residual[l] > TIE_TOLERANCE)
                .map(|l| {
                    let cheapest = (0..lines)
                        .filter(|&p| alive & (1 << p) != 0 && self.is_row(p) != rows)
                        .map(|p| self.cell_cost(l, p))
                        .fold(f64::INFINITY, f64::min);
                    self.residual[l] * cheapest
                })
                .sum()
        };
        // A slack keeps rounding in the bound from cutting the optimum.
        (side(true).max(side(false)) * (1.0 - 1e-12)).max(0.0)
    }

    /// `alive`: lines still in the tree. `pending`: lines that must act as the
    /// partner of some later leaf before they are retired themselves.
    fn search(&mut self, alive: u64, pending: u64, partial: f64) {
        if alive.count_ones() == 1 {
            if pending == 0 && partial < self.best {
                self.best = partial;
            }
            return;
        }
        let lines = self.rows + self.cols;
        // The highest-index line is never the smallest leaf; it is the survivor.
        for leaf in (0..lines - 1).filter(|&l| alive & (1 << l) != 0) {
            if pending & (1 << leaf) != 0 {
                continue;
            }
            let below = alive & ((1u64 << leaf) - 1);
            let amount = self.residual[leaf];
            for partner in (0..lines).filter(|&p| alive & (1 << p) != 0) {
                if self.is_row(partner) == self.is_row(leaf) {
                    continue;
                }
                let available = self.residual[partner];
                if amount > available + TIE_TOLERANCE {
                    continue;
                }
                let cost = partial + amount * self.cell_cost(leaf, partner);
                if cost >= self.best {
                    continue;
                }
                let next_alive = alive & !(1 << leaf);
                self.residual[partner] = (available - amount).max(0.0);
                if cost + self.remaining_bound(next_alive) < self.best {
                    let next_pending = (pending | below) & !(1 << partner);
                    self.search(next_alive, next_pending, cost);
                }
                self.residual[partner] = available;
            }
        }
    }
}

/// Exact optimum of a small transportation problem by exhaustive enumeration
/// of its basic feasible solutions. Fails with [`Error::TooLarge`] above
/// [`BRUTE_FORCE_CELL_LIMIT`] cells.
pub fn brute_force_transport(problem: &TransportProblem) -> Result<f64> {
    let rows = problem.supply().len();
    let cols = problem.demand().len();
    if rows * cols > BRUTE_FORCE_CELL_LIMIT {
        return Err(Error::TooLarge {
            rows,
            cols,
            limit: BRUTE_FORCE_CELL_LIMIT,
        });
    }
    let mut e = Enumerator {
        rows,
        cols,
        cost: problem.cost().as_slice(),
        residual: problem.supply().iter().chain(problem.demand()).copied().collect(),
        best: f64::INFINITY,
    };
    let alive = (1u64 << (rows + cols)) - 1;
    e.search(alive, 0, 0.0);
    Ok(e.best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::CostMatrix;

    fn problem(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> TransportProblem {
        TransportProblem::new(supply.to_vec(), demand.to_vec(), CostMatrix::from_rows(cost).unwrap()).unwrap()
    }

    #[test]
    fn single_route() {
        assert_eq!(brute_force_transport(&problem(&[1.0], &[1.0], &[vec![7.0]])).unwrap(), 7.0);
    }

    #[test]
    fn identity_matching() {
        let p = problem(&[0.5, 0.5], &[0.5, 0.5], &[vec![0.0, 2.0], vec![2.0, 0.0]]);
        assert_eq!(brute_force_transport(&p).unwrap(), 0.0);
    }

    #[test]
    fn forced_move() {
        let p = problem(&[0.5, 0.5], &[0.0, 1.0], &[vec![0.0, 2.0], vec![2.0, 0.0]]);
        assert_eq!(brute_force_transport(&p).unwrap(), 1.0);
    }

    #[test]
    fn too_large() {
        let p = problem(&[1.0; 7], &[1.0; 7], &vec![vec![1.0; 7]; 7]);
        assert!(matches!(brute_force_transport(&p), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn assignment_by_enumeration() {
        // 3x3 assignment: the optimum is the cheapest permutation.
        let c = [[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        let mut best = f64::INFINITY;
        for p in [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            best = best.min((0..3).map(|i| c[i][p[i]]).sum::<f64>());
        }
        let rows: Vec<Vec<f64>> = c.iter().map(|r| r.to_vec()).collect();
        let p = problem(&[1.0; 3], &[1.0; 3], &rows);
        assert_eq!(brute_force_transport(&p).unwrap(), best);
    }

    #[test]
    fn counts_every_spanning_tree_once() {
        // The canonical walk without masses or costs visits each spanning
        // tree of K_{m,n} once: m^(n-1) * n^(m-1) of them.
        struct Counter(usize);
        fn walk(rows: usize, cols: usize, alive: u64, pending: u64, n: &mut Counter) {
            if alive.count_ones() == 1 {
                if pending == 0 {
                    n.0 += 1;
                }
                return;
            }
            for leaf in (0..rows + cols - 1).filter(|&l| alive & (1 << l) != 0) {
                if pending & (1 << leaf) != 0 {
                    continue;
                }
                let below = alive & ((1u64 << leaf) - 1);
                for p in (0..rows + cols).filter(|&p| alive & (1 << p) != 0) {
                    if (p < rows) == (leaf < rows) {
                        continue;
                    }
                    walk(rows, cols, alive & !(1 << leaf), (pending | below) & !(1 << p), n);
                }
            }
        }
        let mut n = Counter(0);
        walk(2, 3, 0b11111, 0, &mut n);
        assert_eq!(n.0, 12);
        let mut n = Counter(0);
        walk(3, 3, 0b111111, 0, &mut n);
        assert_eq!(n.0, 81);
    }
}
