//! Exact discrete optimal transport.
//!
//! A [`TransportProblem`] holds two nonnegative marginals of equal mass and a
//! dense ground-cost matrix; [`solve_transport`] returns an optimal basic
//! coupling computed by a primal network simplex on the bipartite
//! transportation graph. [`brute_force_transport`] is an independent
//! exhaustive solver for tiny instances, and [`ot_uniform`] is the closed form
//! for the 0/2 uniform ground cost.

mod oracle;
mod simplex;

use crate::error::{Error, Result};
use crate::textrep::SparseVector;

pub use oracle::{brute_force_transport, BRUTE_FORCE_CELL_LIMIT};

/// Tolerance on marginal balance and on the normalization of inputs.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Off-diagonal entry of the uniform ground cost: the distance between two
/// distinct one-hot embeddings scaled to diameter 2.
pub const UNIFORM_OFF_DIAGONAL: f64 = 2.0;

/// Dense row-major matrix of ground costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CostMatrix { rows, cols, data }
    }

    /// Builds a matrix from nested rows. All rows must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::DimMismatch {
                    expected: cols,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(CostMatrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> CostMatrix {
        CostMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scaled(&self, factor: f64) -> CostMatrix {
        CostMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|c| c * factor).collect(),
        }
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// A balanced transportation problem.
#[derive(Debug, Clone)]
pub struct TransportProblem {
    supply: Vec<f64>,
    demand: Vec<f64>,
    cost: CostMatrix,
}

impl TransportProblem {
    /// Validates and builds a problem.
    ///
    /// Marginals must be finite and nonnegative, costs finite and nonnegative,
    /// and the two marginal sums must agree within [`MASS_TOLERANCE`] (scaled by
    /// the total mass when it exceeds one).
    pub fn new(supply: Vec<f64>, demand: Vec<f64>, cost: CostMatrix) -> Result<Self> {
        if supply.is_empty() || demand.is_empty() {
            return Err(Error::InvalidInput("marginals must be non-empty".into()));
        }
        if cost.rows() != supply.len() || cost.cols() != demand.len() {
            return Err(Error::InvalidInput(format!(
                "cost matrix is {}x{} but marginals have lengths {} and {}",
                cost.rows(),
                cost.cols(),
                supply.len(),
                demand.len()
            )));
        }
        if let Some(v) = supply.iter().chain(&demand).find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::InvalidInput(format!("marginal entry {v} is negative or not finite")));
        }
        if let Some(c) = cost.as_slice().iter().find(|c| !c.is_finite() || **c < 0.0) {
            return Err(Error::InvalidInput(format!("cost entry {c} is negative or not finite")));
        }
        let s = compensated_sum(supply.iter().copied());
        let d = compensated_sum(demand.iter().copied());
        if (s - d).abs() > MASS_TOLERANCE * s.max(d).max(1.0) {
            return Err(Error::UnbalancedProblem {
                supply: s,
                demand: d,
            });
        }
        Ok(TransportProblem {
            supply,
            demand,
            cost,
        })
    }

    pub fn supply(&self) -> &[f64] {
        &self.supply
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }

    pub fn cost(&self) -> &CostMatrix {
        &self.cost
    }

    /// The same problem with source and target exchanged and the cost transposed.
    pub fn transposed(&self) -> TransportProblem {
        TransportProblem {
            supply: self.demand.clone(),
            demand: self.supply.clone(),
            cost: self.cost.transpose(),
        }
    }

    /// The same marginals with every cost multiplied by `factor` (must be > 0).
    pub fn with_scaled_cost(&self, factor: f64) -> Result<TransportProblem> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidInput(format!("cost scale {factor} must be positive")));
        }
        Ok(TransportProblem {
            supply: self.supply.clone(),
            demand: self.demand.clone(),
            cost: self.cost.scaled(factor),
        })
    }
}

/// One positive entry of a coupling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanEntry {
    pub row: usize,
    pub col: usize,
    pub mass: f64,
}

/// Sparse optimal coupling together with its objective value.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    /// Entries sorted by `(row, col)`, every mass strictly positive.
    pub entries: Vec<PlanEntry>,
    pub objective: f64,
}

impl TransportPlan {
    pub fn row_sums(&self, rows: usize) -> Vec<f64> {
        let mut sums = vec![0.0; rows];
        for e in &self.entries {
            sums[e.row] += e.mass;
        }
        sums
    }

    pub fn col_sums(&self, cols: usize) -> Vec<f64> {
        let mut sums = vec![0.0; cols];
        for e in &self.entries {
            sums[e.col] += e.mass;
        }
        sums
    }

    /// Mass moved from `row` to `col` (zero when the pair is not in the plan).
    pub fn mass(&self, row: usize, col: usize) -> f64 {
        self.entries
            .binary_search_by(|e| (e.row, e.col).cmp(&(row, col)))
            .map_or(0.0, |k| self.entries[k].mass)
    }

    pub fn total_mass(&self) -> f64 {
        compensated_sum(self.entries.iter().map(|e| e.mass))
    }
}

/// Solves the transportation problem exactly.
///
/// Zero-mass rows and columns are removed before solving; marginals are
/// rescaled to a common total so that the residual floating-point imbalance
/// permitted by [`TransportProblem::new`] disappears. The returned plan uses
/// the original row and column indices.
pub fn solve_transport(problem: &TransportProblem) -> Result<TransportPlan> {
    let rows: Vec<usize> = (0..problem.supply.len()).filter(|&i| problem.supply[i] > 0.0).collect();
    let cols: Vec<usize> = (0..problem.demand.len()).filter(|&j| problem.demand[j] > 0.0).collect();
    if rows.is_empty() || cols.is_empty() {
        return Ok(TransportPlan {
            entries: Vec::new(),
            objective: 0.0,
        });
    }

    let s_total = compensated_sum(rows.iter().map(|&i| problem.supply[i]));
    let d_total = compensated_sum(cols.iter().map(|&j| problem.demand[j]));
    let total = 0.5 * (s_total + d_total);
    let supply: Vec<f64> = rows.iter().map(|&i| problem.supply[i] / s_total).collect();
    let demand: Vec<f64> = cols.iter().map(|&j| problem.demand[j] / d_total).collect();

    let cmax = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| (i, j)))
        .map(|(i, j)| problem.cost.get(i, j))
        .fold(0.0, f64::max);
    let scale = if cmax > 0.0 { 1.0 / cmax } else { 1.0 };
    let cost: Vec<f64> = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&j| (i, j)))
        .map(|(i, j)| problem.cost.get(i, j) * scale)
        .collect();

    let flows = simplex::NetworkSimplex::new(&supply, &demand, &cost).run()?;

    let mut entries: Vec<PlanEntry> = flows
        .into_iter()
        .map(|(r, c, f)| PlanEntry {
            row: rows[r],
            col: cols[c],
            mass: f * total,
        })
        .filter(|e| e.mass > 0.0)
        .collect();
    entries.sort_by(|a, b| (a.row, a.col).cmp(&(b.row, b.col)));
    let objective = compensated_sum(entries.iter().map(|e| e.mass * problem.cost.get(e.row, e.col)));
    Ok(TransportPlan { entries, objective })
}

/// Uniform ground cost between two supports: zero for the same word id, two otherwise.
pub fn uniform_cost(src_ids: &[usize], dst_ids: &[usize]) -> CostMatrix {
    CostMatrix::from_fn(src_ids.len(), dst_ids.len(), |i, j| {
        if src_ids[i] == dst_ids[j] {
            0.0
        } else {
            UNIFORM_OFF_DIAGONAL
        }
    })
}

/// Transport problem between two sparse distributions on their supports with
/// the uniform ground cost.
pub fn uniform_problem(x: &SparseVector, y: &SparseVector) -> Result<TransportProblem> {
    let (xi, xv): (Vec<usize>, Vec<f64>) = x.iter().unzip();
    let (yi, yv): (Vec<usize>, Vec<f64>) = y.iter().unzip();
    TransportProblem::new(xv, yv, uniform_cost(&xi, &yi))
}

/// Transport cost between two L1-normalized vectors under the uniform ground
/// cost, via the closed form `||x - y||_1`.
pub fn ot_uniform(x: &SparseVector, y: &SparseVector) -> Result<f64> {
    for v in [x, y] {
        let sum = compensated_sum(v.values().iter().copied());
        if (sum - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::NotNormalized { sum });
        }
    }
    if x.dim() != y.dim() {
        return Err(Error::DimMismatch {
            expected: x.dim(),
            found: y.dim(),
        });
    }
    Ok(crate::textrep::l1_distance(x, y))
}

/// Neumaier compensated summation.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
