//! Exact transportation simplex (northwest-corner start, MODI pricing).
//!
//! The inequality program
//!
//! ```text
//! min  sum f_xy c_xy
//! s.t. f_xy >= 0,  sum_y f_xy <= w_a[x],  sum_x f_xy <= w_b[y],
//!      sum f_xy = min(sum w_a, sum w_b)
//! ```
//!
//! is balanced by a zero-cost dummy row or column that absorbs the surplus of
//! the heavier side, then solved over spanning-tree bases. Entering cells use
//! the most negative reduced cost; after a run of degenerate pivots the rule
//! switches to Bland's (first negative cell), which cannot cycle. Ties in the
//! entering and leaving choice go to the lowest `(x, y)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimal flow between `rows` sources and `cols` sinks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `[rows x cols]`.
    pub flow: Vec<f64>,
    pub total_flow: f64,
    /// `sum f_xy c_xy`
    pub objective: f64,
}

impl TransportPlan {
    pub fn flow_at(&self, x: usize, y: usize) -> f64 {
        self.flow[x * self.cols + y]
    }

    /// Objective normalized by total flow.
    pub fn normalized_cost(&self) -> f64 {
        self.objective / self.total_flow
    }

    /// Cells carrying more than `tol` flow.
    pub fn support(&self, tol: f64) -> Vec<(usize, usize)> {
        (0..self.rows)
            .flat_map(|x| (0..self.cols).map(move |y| (x, y)))
            .filter(|&(x, y)| self.flow_at(x, y) > tol)
            .collect()
    }

    /// Checks nonnegativity, the two capacity families and the total-flow
    /// equality, each within `tol`.
    pub fn check_constraints(&self, w_a: &[f64], w_b: &[f64], tol: f64) -> Result<()> {
        let fail = |what: String| Err(Error::Numeric(format!("transport plan violates {what}")));
        if let Some(f) = self.flow.iter().find(|&&f| f < -tol) {
            return fail(format!("nonnegativity ({f})"));
        }
        for (x, &w) in w_a.iter().enumerate() {
            let s: f64 = (0..self.cols).map(|y| self.flow_at(x, y)).sum();
            if s > w + tol {
                return fail(format!("source capacity at row {x}: {s} > {w}"));
            }
        }
        for (y, &w) in w_b.iter().enumerate() {
            let s: f64 = (0..self.rows).map(|x| self.flow_at(x, y)).sum();
            if s > w + tol {
                return fail(format!("sink capacity at column {y}: {s} > {w}"));
            }
        }
        let target = w_a.iter().sum::<f64>().min(w_b.iter().sum::<f64>());
        let total: f64 = self.flow.iter().sum();
        if (total - target).abs() > tol || (self.total_flow - target).abs() > tol {
            return fail(format!("total flow: {total} != {target}"));
        }
        Ok(())
    }
}

/// Solves the transportation problem for a row-major `[m x n]` cost matrix.
pub fn solve_transport(cost: &[f64], w_a: &[f64], w_b: &[f64]) -> Result<TransportPlan> {
    let (m, n) = (w_a.len(), w_b.len());
    if m == 0 || n == 0 {
        return Err(Error::Config("transport problem needs at least one point per side".into()));
    }
    if cost.len() != m * n {
        return Err(Error::Dimension {
            op: "solve_transport",
            lhs: vec![cost.len()],
            rhs: vec![m, n],
        });
    }
    if let Some(i) = cost.iter().position(|c| !c.is_finite()) {
        return Err(Error::Numeric(format!("cost entry ({}, {})", i / n, i % n)));
    }
    if let Some(w) = w_a.iter().chain(w_b).find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::Config(format!("transport weights must be positive, got {w}")));
    }

    let total_a: f64 = w_a.iter().sum();
    let total_b: f64 = w_b.iter().sum();
    let mut supply = w_a.to_vec();
    let mut demand = w_b.to_vec();
    if total_a > total_b {
        demand.push(total_a - total_b);
    } else if total_b > total_a {
        supply.push(total_b - total_a);
    }
    let (rows, cols) = (supply.len(), demand.len());
    let mut c = vec![0.0; rows * cols];
    for x in 0..m {
        c[x * cols..x * cols + n].copy_from_slice(&cost[x * n..(x + 1) * n]);
    }

    let mut tableau = Tableau::northwest_corner(c, supply, demand);
    tableau.optimize()?;

    let mut flow = vec![0.0; m * n];
    for x in 0..m {
        for y in 0..n {
            flow[x * n + y] = tableau.flow[x * cols + y].max(0.0);
        }
    }
    let objective = flow.iter().zip(cost).map(|(f, c)| f * c).sum();
    let total_flow = flow.iter().sum();
    let plan = TransportPlan {
        rows: m,
        cols: n,
        flow,
        total_flow,
        objective,
    };
    debug_assert!(
        plan.check_constraints(w_a, w_b, 1e-9).is_ok(),
        "{:?}",
        plan.check_constraints(w_a, w_b, 1e-9)
    );
    Ok(plan)
}

struct Tableau {
    rows: usize,
    cols: usize,
    cost: Vec<f64>,
    flow: Vec<f64>,
    basic: Vec<bool>,
    /// Basic cells in insertion order; always `rows + cols - 1` of them.
    basis: Vec<(usize, usize)>,
}

/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_SWITCH: usize = 50;

impl Tableau {
    fn northwest_corner(cost: Vec<f64>, mut supply: Vec<f64>, mut demand: Vec<f64>) -> Self {
        let (rows, cols) = (supply.len(), demand.len());
        let mut flow = vec![0.0; rows * cols];
        let mut basic = vec![false; rows * cols];
        let mut basis = Vec::with_capacity(rows + cols - 1);
        let (mut x, mut y) = (0, 0);
        loop {
            let f = supply[x].min(demand[y]).max(0.0);
            flow[x * cols + y] = f;
            basic[x * cols + y] = true;
            basis.push((x, y));
            supply[x] -= f;
            demand[y] -= f;
            if x == rows - 1 && y == cols - 1 {
                break;
            }
            // advance exactly one index so the basis stays a spanning tree
            if x == rows - 1 {
                y += 1;
            } else if y == cols - 1 || supply[x] <= demand[y] {
                x += 1;
            } else {
                y += 1;
            }
        }
        Self {
            rows,
            cols,
            cost,
            flow,
            basic,
            basis,
        }
    }

    fn potentials(&self) -> (Vec<f64>, Vec<f64>) {
        let (rows, cols) = (self.rows, self.cols);
        let adjacency = self.adjacency();
        let mut u = vec![f64::NAN; rows];
        let mut v = vec![f64::NAN; cols];
        u[0] = 0.0;
        let mut stack = vec![0usize];
        while let Some(node) = stack.pop() {
            for &next in &adjacency[node] {
                if node < rows {
                    let y = next - rows;
                    if v[y].is_nan() {
                        v[y] = self.cost[node * cols + y] - u[node];
                        stack.push(next);
                    }
                } else {
                    let x = next;
                    let y = node - rows;
                    if u[x].is_nan() {
                        u[x] = self.cost[x * cols + y] - v[y];
                        stack.push(next);
                    }
                }
            }
        }
        (u, v)
    }

    /// Tree adjacency over nodes `0..rows` (sources) and `rows..rows+cols` (sinks).
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.rows + self.cols];
        let mut cells = self.basis.clone();
        cells.sort_unstable();
        for (x, y) in cells {
            adj[x].push(self.rows + y);
            adj[self.rows + y].push(x);
        }
        adj
    }

    fn entering(&self, u: &[f64], v: &[f64], bland: bool) -> Option<(usize, usize)> {
        let scale = self.cost.iter().fold(1.0f64, |a, c| a.max(c.abs()));
        let tol = 1e-12 * scale;
        let mut best: Option<((usize, usize), f64)> = None;
        for x in 0..self.rows {
            for y in 0..self.cols {
                if self.basic[x * self.cols + y] {
                    continue;
                }
                let r = self.cost[x * self.cols + y] - u[x] - v[y];
                if r < -tol {
                    if bland {
                        return Some((x, y));
                    }
                    if best.is_none_or(|(_, b)| r < b) {
                        best = Some(((x, y), r));
                    }
                }
            }
        }
        best.map(|(cell, _)| cell)
    }

    /// Cells of the cycle closed by `(x, y)`, starting with the entering
    /// cell; even positions gain flow, odd positions lose it.
    fn cycle(&self, x: usize, y: usize) -> Vec<(usize, usize)> {
        let adjacency = self.adjacency();
        let total = self.rows + self.cols;
        let (start, goal) = (self.rows + y, x);
        let mut parent = vec![usize::MAX; total];
        parent[start] = start;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == goal {
                break;
            }
            for &next in &adjacency[node] {
                if parent[next] == usize::MAX {
                    parent[next] = node;
                    queue.push_back(next);
                }
            }
        }
        let mut cells = vec![(x, y)];
        // walk from the sink of the entering cell back to its source
        let mut path = vec![goal];
        let mut node = goal;
        while node != start {
            node = parent[node];
            path.push(node);
        }
        path.reverse(); // start (sink y) ... goal (source x)
        for pair in path.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let cell = if a < self.rows {
                (a, b - self.rows)
            } else {
                (b, a - self.rows)
            };
            cells.push(cell);
        }
        cells
    }

    fn optimize(&mut self) -> Result<()> {
        let cells = self.rows * self.cols;
        let max_iter = 100 * cells + 1000;
        let mut degenerate_run = 0;
        for _ in 0..max_iter {
            let (u, v) = self.potentials();
            let bland = degenerate_run >= DEGENERATE_SWITCH;
            let Some((ex, ey)) = self.entering(&u, &v, bland) else {
                return Ok(());
            };
            let cycle = self.cycle(ex, ey);
            let leaving = cycle
                .iter()
                .skip(1)
                .step_by(2)
                .copied()
                .min_by(|a, b| {
                    let (fa, fb) = (self.flow[a.0 * self.cols + a.1], self.flow[b.0 * self.cols + b.1]);
                    fa.total_cmp(&fb).then(a.cmp(b))
                })
                .expect("a cycle has at least one donor cell");
            let theta = self.flow[leaving.0 * self.cols + leaving.1];
            for (k, &(x, y)) in cycle.iter().enumerate() {
                let f = &mut self.flow[x * self.cols + y];
                if k % 2 == 0 {
                    *f += theta;
                } else {
                    *f -= theta;
                }
            }
            self.flow[leaving.0 * self.cols + leaving.1] = 0.0;
            self.basic[leaving.0 * self.cols + leaving.1] = false;
            self.basic[ex * self.cols + ey] = true;
            let pos = self
                .basis
                .iter()
                .position(|&c| c == leaving)
                .expect("leaving cell is basic");
            self.basis[pos] = (ex, ey);
            degenerate_run = if theta == 0.0 { degenerate_run + 1 } else { 0 };
        }
        Err(Error::Numeric("transport simplex iteration limit".into()))
    }
}
