//! Primal network simplex for the uncapacitated bipartite transportation graph.
//!
//! Nodes are the sources `0..m`, the sinks `m..m+n` and an artificial root
//! `m+n`. Arc `i*n + j` carries mass from source `i` to sink `j`; arc
//! `m*n + u` is the artificial arc joining node `u` to the root (source to
//! root, or root to sink). The starting basis is the all-artificial star,
//! which is strongly feasible because every marginal is positive. The leaving
//! arc is chosen by Cunningham's rule (last blocking arc along the cycle
//! orientation starting at the apex), so the basis stays strongly feasible and
//! degenerate pivots cannot cycle. The entering arc is the real arc of most
//! negative reduced cost, lowest arc index on ties.
//!
//! The artificial cost only has to exceed the largest real cost: the only
//! paths through the root are source -> root -> sink, so any optimal flow
//! leaves the artificial arcs empty.

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Reduced costs above `-PRICING_EPS` are treated as nonnegative. Costs are
/// scaled to `[0, 1]` by the caller, so this bounds the optimality gap.
const PRICING_EPS: f64 = 1e-12;

pub(crate) struct NetworkSimplex<'a> {
    m: usize,
    n: usize,
    cost: &'a [f64],
    art_cost: f64,
    flow: Vec<f64>,
    in_tree: Vec<bool>,
    adj: Vec<Vec<usize>>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    // true when the predecessor arc points from the node to its parent
    up: Vec<bool>,
    depth: Vec<usize>,
    pi: Vec<f64>,
    stack: Vec<usize>,
}

impl<'a> NetworkSimplex<'a> {
    /// `supply` and `demand` must be strictly positive; `cost` is row-major `m x n`.
    pub(crate) fn new(supply: &[f64], demand: &[f64], cost: &'a [f64]) -> Self {
        let m = supply.len();
        let n = demand.len();
        debug_assert_eq!(cost.len(), m * n);
        let nodes = m + n + 1;
        let arcs = m * n + m + n;
        let root = m + n;
        let max_cost = cost.iter().copied().fold(0.0, f64::max);

        let mut flow = vec![0.0; arcs];
        let mut in_tree = vec![false; arcs];
        let mut adj = vec![Vec::new(); nodes];
        for u in 0..m + n {
            let a = m * n + u;
            flow[a] = if u < m { supply[u] } else { demand[u - m] };
            in_tree[a] = true;
            adj[u].push(a);
            adj[root].push(a);
        }

        let mut ns = NetworkSimplex {
            m,
            n,
            cost,
            art_cost: max_cost + 1.0,
            flow,
            in_tree,
            adj,
            parent: vec![NONE; nodes],
            pred: vec![NONE; nodes],
            up: vec![false; nodes],
            depth: vec![0; nodes],
            pi: vec![0.0; nodes],
            stack: Vec::with_capacity(nodes),
        };
        ns.rebuild_tree();
        ns
    }

    fn root(&self) -> usize {
        self.m + self.n
    }

    fn source(&self, arc: usize) -> usize {
        let real = self.m * self.n;
        if arc < real {
            arc / self.n
        } else {
            let u = arc - real;
            if u < self.m {
                u
            } else {
                self.root()
            }
        }
    }

    fn target(&self, arc: usize) -> usize {
        let real = self.m * self.n;
        if arc < real {
            self.m + arc % self.n
        } else {
            let u = arc - real;
            if u < self.m {
                self.root()
            } else {
                u
            }
        }
    }

    fn arc_cost(&self, arc: usize) -> f64 {
        let real = self.m * self.n;
        if arc < real {
            self.cost[arc]
        } else if arc - real < self.m {
            0.0
        } else {
            self.art_cost
        }
    }

    /// Recomputes parent pointers, depths and potentials from the tree arcs.
    /// Potentials satisfy `cost + pi[source] - pi[target] = 0` on tree arcs.
    fn rebuild_tree(&mut self) {
        let root = self.root();
        self.parent[root] = NONE;
        self.pred[root] = NONE;
        self.depth[root] = 0;
        self.pi[root] = 0.0;
        self.stack.clear();
        self.stack.push(root);
        while let Some(v) = self.stack.pop() {
            for k in 0..self.adj[v].len() {
                let e = self.adj[v][k];
                if e == self.pred[v] {
                    continue;
                }
                let s = self.source(e);
                let w = if s == v { self.target(e) } else { s };
                let up = s == w;
                self.parent[w] = v;
                self.pred[w] = e;
                self.up[w] = up;
                self.depth[w] = self.depth[v] + 1;
                let c = self.arc_cost(e);
                self.pi[w] = if up { self.pi[v] - c } else { self.pi[v] + c };
                self.stack.push(w);
            }
        }
    }

    fn find_entering(&self) -> Option<usize> {
        let mut best = NONE;
        let mut best_rc = -PRICING_EPS;
        let n = self.n;
        for i in 0..self.m {
            let pi_s = self.pi[i];
            let row = &self.cost[i * n..(i + 1) * n];
            for (j, &c) in row.iter().enumerate() {
                let rc = c + pi_s - self.pi[self.m + j];
                if rc < best_rc {
                    let arc = i * n + j;
                    if !self.in_tree[arc] {
                        best_rc = rc;
                        best = arc;
                    }
                }
            }
        }
        (best != NONE).then_some(best)
    }

    fn find_join(&self, mut u: usize, mut v: usize) -> usize {
        while u != v {
            if self.depth[u] >= self.depth[v] {
                u = self.parent[u];
            } else {
                v = self.parent[v];
            }
        }
        u
    }

    /// Pivots until no arc has a negative reduced cost. Returns the positive
    /// flows on real arcs as `(source, sink, flow)`.
    pub(crate) fn run(mut self) -> Result<Vec<(usize, usize, f64)>> {
        // Bounded well above the pivot counts observed in practice; a hit
        // indicates numerical trouble rather than a slow instance.
        let max_pivots = 50 * (self.m * self.n + self.m + self.n) + 1000;
        let mut pivots = 0usize;
        while let Some(entering) = self.find_entering() {
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::InvalidInput(format!(
                    "network simplex exceeded {max_pivots} pivots"
                )));
            }
            self.pivot(entering)?;
        }
        let n = self.n;
        Ok((0..self.m * n)
            .filter(|&a| self.in_tree[a] && self.flow[a] > 0.0)
            .map(|a| (a / n, a % n, self.flow[a]))
            .collect())
    }

    fn pivot(&mut self, entering: usize) -> Result<()> {
        let first = self.source(entering);
        let second = self.target(entering);
        let join = self.find_join(first, second);

        // Flow travels first -> second on the entering arc, up from `second`
        // to the apex and back down to `first`.
        let mut delta = f64::INFINITY;
        let mut leaving_node = NONE;
        let mut u = first;
        while u != join {
            if self.up[u] {
                let d = self.flow[self.pred[u]];
                if d < delta {
                    delta = d;
                    leaving_node = u;
                }
            }
            u = self.parent[u];
        }
        let mut u = second;
        while u != join {
            if !self.up[u] {
                let d = self.flow[self.pred[u]];
                if d <= delta {
                    delta = d;
                    leaving_node = u;
                }
            }
            u = self.parent[u];
        }
        if leaving_node == NONE {
            return Err(Error::InvalidInput("transport problem is unbounded".into()));
        }

        if delta > 0.0 {
            self.flow[entering] += delta;
            let mut u = first;
            while u != join {
                let e = self.pred[u];
                if self.up[u] {
                    self.flow[e] -= delta;
                } else {
                    self.flow[e] += delta;
                }
                u = self.parent[u];
            }
            let mut u = second;
            while u != join {
                let e = self.pred[u];
                if self.up[u] {
                    self.flow[e] += delta;
                } else {
                    self.flow[e] -= delta;
                }
                u = self.parent[u];
            }
        }

        let leaving = self.pred[leaving_node];
        self.flow[leaving] = 0.0;
        self.in_tree[leaving] = false;
        let (ls, lt) = (self.source(leaving), self.target(leaving));
        self.adj[ls].retain(|&e| e != leaving);
        self.adj[lt].retain(|&e| e != leaving);
        self.in_tree[entering] = true;
        self.adj[first].push(entering);
        self.adj[second].push(entering);
        self.rebuild_tree();
        Ok(())
    }
}
