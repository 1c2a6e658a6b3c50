//! Exact solver for the discrete transportation problem via the
//! transportation simplex: north-west-corner start, MODI (u-v) pivoting,
//! Bland's rule for anti-cycling.
//!
//! Degenerate bases are avoided by a cascading epsilon perturbation of the
//! marginals; the perturbation is removed from the reported plan by
//! re-solving the flows of the final (optimal) basis tree against the
//! original marginals.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use super::CostMatrix;

/// Maximum number of atoms on either side of the transport problem.
pub const MAX_TRANSPORT_SIZE: usize = 64;

const MARGINAL_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-12;
const PERTURBATION: f64 = 1e-12;

/// An optimal transportation plan together with its cost.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    pub plan: DMatrix<f64>,
    pub cost: f64,
}

/// Solve `min <plan, costs>` over nonnegative plans with row sums `source`
/// and column sums `target`. Both marginals must lie on the simplex within
/// `1e-9`. Optimality is certified by nonnegative reduced costs.
pub fn solve_transport(
    source: &[f64],
    target: &[f64],
    costs: &CostMatrix,
) -> Result<TransportPlan> {
    let r = source.len();
    let c = target.len();
    if r == 0 || c == 0 {
        return Err(Error::Transport("empty marginals".into()));
    }
    if r > MAX_TRANSPORT_SIZE || c > MAX_TRANSPORT_SIZE {
        return Err(Error::Transport(format!(
            "problem size {r}x{c} exceeds {MAX_TRANSPORT_SIZE}"
        )));
    }
    let entries = costs.entries();
    if entries.nrows() != r || entries.ncols() != c {
        return Err(Error::Transport(format!(
            "cost matrix is {}x{}, marginals are {r}x{c}",
            entries.nrows(),
            entries.ncols()
        )));
    }
    for (name, marginal) in [("source", source), ("target", target)] {
        if marginal.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Transport(format!(
                "{name} marginal must be finite and nonnegative"
            )));
        }
        let sum: f64 = marginal.iter().sum();
        if (sum - 1.0).abs() > MARGINAL_TOL {
            return Err(Error::Transport(format!(
                "{name} marginal sums to {sum}, expected 1"
            )));
        }
    }

    // Cascading perturbation; the target side absorbs the exact imbalance on
    // its largest entry so the perturbed problem balances bit-exactly.
    let supply: Vec<f64> = source
        .iter()
        .enumerate()
        .map(|(i, &v)| v + PERTURBATION * (i + 1) as f64)
        .collect();
    let mut demand: Vec<f64> = target.to_vec();
    let imbalance: f64 = supply.iter().sum::<f64>() - demand.iter().sum::<f64>();
    let absorb = (0..c)
        .max_by(|&a, &b| demand[a].partial_cmp(&demand[b]).unwrap())
        .unwrap();
    demand[absorb] += imbalance;
    if demand[absorb] < 0.0 {
        return Err(Error::Transport("marginal imbalance too large".into()));
    }

    let mut state = Simplex::north_west(&supply, &demand, entries);
    state.optimize()?;
    state.certify()?;
    Ok(state.report(source, target, entries))
}

/// Basis state: flows plus the set of r + c - 1 basic cells forming a
/// spanning tree over row nodes (0..r) and column nodes (r..r+c).
struct Simplex<'a> {
    r: usize,
    c: usize,
    costs: &'a DMatrix<f64>,
    flow: DMatrix<f64>,
    basic: Vec<Vec<bool>>,
}

impl<'a> Simplex<'a> {
    fn north_west(supply: &[f64], demand: &[f64], costs: &'a DMatrix<f64>) -> Simplex<'a> {
        let r = supply.len();
        let c = demand.len();
        let mut remaining_s = supply.to_vec();
        let mut remaining_d = demand.to_vec();
        let mut flow = DMatrix::zeros(r, c);
        let mut basic = vec![vec![false; c]; r];
        let (mut i, mut j) = (0, 0);
        loop {
            let f = remaining_s[i].min(remaining_d[j]);
            flow[(i, j)] = f.max(0.0);
            basic[i][j] = true;
            remaining_s[i] -= f;
            remaining_d[j] -= f;
            if i == r - 1 && j == c - 1 {
                break;
            }
            if remaining_s[i] <= 0.0 && i < r - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Simplex {
            r,
            c,
            costs,
            flow,
            basic,
        }
    }

    fn node_count(&self) -> usize {
        self.r + self.c
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize, usize)>> {
        // node -> (neighbor node, cell i, cell j)
        let mut adj = vec![Vec::new(); self.node_count()];
        for i in 0..self.r {
            for j in 0..self.c {
                if self.basic[i][j] {
                    adj[i].push((self.r + j, i, j));
                    adj[self.r + j].push((i, i, j));
                }
            }
        }
        adj
    }

    /// Dual potentials u (rows) and v (columns) solving u_i + v_j = c_ij on
    /// the basic cells, anchored at u_0 = 0.
    fn potentials(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let adj = self.adjacency();
        let mut u = vec![f64::NAN; self.r];
        let mut v = vec![f64::NAN; self.c];
        u[0] = 0.0;
        let mut stack = vec![0usize];
        let mut visited = vec![false; self.node_count()];
        visited[0] = true;
        while let Some(node) = stack.pop() {
            for &(next, i, j) in &adj[node] {
                if visited[next] {
                    continue;
                }
                visited[next] = true;
                if next >= self.r {
                    v[next - self.r] = self.costs[(i, j)] - u[i];
                } else {
                    u[next] = self.costs[(i, j)] - v[j];
                }
                stack.push(next);
            }
        }
        if visited.iter().any(|&b| !b) {
            return Err(Error::Transport("basis does not span all nodes".into()));
        }
        Ok((u, v))
    }

    /// First (lexicographic) nonbasic cell with reduced cost below -tol.
    fn entering(&self, u: &[f64], v: &[f64]) -> Option<(usize, usize)> {
        for i in 0..self.r {
            for j in 0..self.c {
                if !self.basic[i][j] && self.costs[(i, j)] - u[i] - v[j] < -PIVOT_TOL {
                    return Some((i, j));
                }
            }
        }
        None
    }

    /// Unique cycle created by adding the entering cell: the tree path from
    /// its column node back to its row node, as a list of cells alternating
    /// signs after the (positive) entering cell.
    fn cycle(&self, enter: (usize, usize)) -> Vec<(usize, usize)> {
        let adj = self.adjacency();
        let start = enter.0;
        let goal = self.r + enter.1;
        let mut parent: Vec<Option<(usize, usize, usize)>> = vec![None; self.node_count()];
        let mut visited = vec![false; self.node_count()];
        visited[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(node) = queue.pop_front() {
            if node == goal {
                break;
            }
            for &(next, i, j) in &adj[node] {
                if !visited[next] {
                    visited[next] = true;
                    parent[next] = Some((node, i, j));
                    queue.push_back(next);
                }
            }
        }
        let mut path_cells = Vec::new();
        let mut node = goal;
        while node != start {
            let (prev, i, j) = parent[node].expect("goal reachable in spanning tree");
            path_cells.push((i, j));
            node = prev;
        }
        // Cycle: entering cell first, then the path from the column node of
        // the entering cell back to its row node.
        let mut cycle = Vec::with_capacity(path_cells.len() + 1);
        cycle.push(enter);
        cycle.extend(path_cells);
        cycle
    }

    fn optimize(&mut self) -> Result<()> {
        let max_pivots = 200_000;
        for _ in 0..max_pivots {
            let (u, v) = self.potentials()?;
            let Some(enter) = self.entering(&u, &v) else {
                return Ok(());
            };
            let cycle = self.cycle(enter);
            // Odd positions in the cycle lose flow.
            let mut theta = f64::INFINITY;
            let mut leaving = None;
            for (pos, &(i, j)) in cycle.iter().enumerate() {
                if pos % 2 == 1 {
                    let f = self.flow[(i, j)];
                    let replace = match leaving {
                        None => true,
                        Some(cell) => f < theta || (f == theta && (i, j) < cell),
                    };
                    if replace {
                        theta = f;
                        leaving = Some((i, j));
                    }
                }
            }
            let leaving = leaving.ok_or_else(|| Error::Transport("degenerate cycle".into()))?;
            for (pos, &(i, j)) in cycle.iter().enumerate() {
                if pos % 2 == 0 {
                    self.flow[(i, j)] += theta;
                } else {
                    self.flow[(i, j)] -= theta;
                }
            }
            self.basic[enter.0][enter.1] = true;
            self.basic[leaving.0][leaving.1] = false;
            self.flow[(leaving.0, leaving.1)] = 0.0;
        }
        Err(Error::Transport("pivot limit exceeded".into()))
    }

    fn certify(&self) -> Result<()> {
        let (u, v) = self.potentials()?;
        for i in 0..self.r {
            for j in 0..self.c {
                if !self.basic[i][j] && self.costs[(i, j)] - u[i] - v[j] < -1e-9 {
                    return Err(Error::Transport(
                        "optimality certificate failed: negative reduced cost".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Re-solve the basis-tree flows against the unperturbed marginals by
    /// peeling leaves, then price the plan with the original costs.
    fn report(&self, source: &[f64], target: &[f64], costs: &DMatrix<f64>) -> TransportPlan {
        let mut residual: Vec<f64> = source
            .iter()
            .chain(target.iter())
            .cloned()
            .collect();
        let mut degree = vec![0usize; self.node_count()];
        let mut cells: Vec<(usize, usize)> = Vec::with_capacity(self.r + self.c - 1);
        for i in 0..self.r {
            for j in 0..self.c {
                if self.basic[i][j] {
                    degree[i] += 1;
                    degree[self.r + j] += 1;
                    cells.push((i, j));
                }
            }
        }
        let mut plan = DMatrix::zeros(self.r, self.c);
        let mut alive: Vec<bool> = vec![true; cells.len()];
        let mut remaining = cells.len();
        while remaining > 0 {
            for (idx, &(i, j)) in cells.iter().enumerate() {
                if !alive[idx] {
                    continue;
                }
                let row_node = i;
                let col_node = self.r + j;
                let leaf = if degree[row_node] == 1 {
                    Some(row_node)
                } else if degree[col_node] == 1 {
                    Some(col_node)
                } else {
                    None
                };
                if let Some(node) = leaf {
                    let f = residual[node];
                    let other = if node == row_node { col_node } else { row_node };
                    plan[(i, j)] = if f > 0.0 { f } else { 0.0 };
                    residual[node] = 0.0;
                    residual[other] -= f;
                    degree[row_node] -= 1;
                    degree[col_node] -= 1;
                    alive[idx] = false;
                    remaining -= 1;
                }
            }
        }
        let cost = plan
            .iter()
            .zip(costs.iter())
            .map(|(f, c)| f * c)
            .sum();
        TransportPlan { plan, cost }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergence::CostKind;

    fn cm(rows: usize, cols: usize, entries: &[f64]) -> CostMatrix {
        CostMatrix::new(DMatrix::from_row_slice(rows, cols, entries), CostKind::D1).unwrap()
    }

    #[test]
    fn diagonal_optimum() {
        let plan = solve_transport(&[0.5, 0.5], &[0.5, 0.5], &cm(2, 2, &[0.0, 1.0, 1.0, 0.0]))
            .unwrap();
        assert!(plan.cost.abs() < 1e-12);
        assert!((plan.plan[(0, 0)] - 0.5).abs() < 1e-9);
        assert!((plan.plan[(1, 1)] - 0.5).abs() < 1e-9);
    }

    #[test]
    fn asymmetric_marginals() {
        // Enumerable by hand: keep as much mass as possible on the diagonal.
        let plan = solve_transport(&[0.7, 0.3], &[0.5, 0.5], &cm(2, 2, &[0.0, 1.0, 1.0, 0.0]))
            .unwrap();
        assert!((plan.cost - 0.2).abs() < 1e-9);
        assert!((plan.plan[(0, 0)] - 0.5).abs() < 1e-9);
        assert!((plan.plan[(0, 1)] - 0.2).abs() < 1e-9);
        assert!((plan.plan[(1, 0)] - 0.0).abs() < 1e-9);
        assert!((plan.plan[(1, 1)] - 0.3).abs() < 1e-9);
    }

    #[test]
    fn single_target_forces_plan() {
        let w = [0.2, 0.3, 0.5];
        let costs = cm(3, 1, &[2.0, 4.0, 1.0]);
        let plan = solve_transport(&w, &[1.0], &costs).unwrap();
        let expected: f64 = 0.2 * 2.0 + 0.3 * 4.0 + 0.5 * 1.0;
        assert!((plan.cost - expected).abs() < 1e-12);
        for i in 0..3 {
            assert!((plan.plan[(i, 0)] - w[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn marginal_constraints_hold() {
        let source = [0.1, 0.2, 0.3, 0.4];
        let target = [0.25, 0.25, 0.5];
        let costs = cm(
            4,
            3,
            &[3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0, 5.0, 8.0],
        );
        let plan = solve_transport(&source, &target, &costs).unwrap();
        for i in 0..4 {
            let s: f64 = plan.plan.row(i).iter().sum();
            assert!((s - source[i]).abs() < 1e-9);
        }
        for j in 0..3 {
            let s: f64 = plan.plan.column(j).iter().sum();
            assert!((s - target[j]).abs() < 1e-9);
        }
        let priced: f64 = plan
            .plan
            .iter()
            .zip(costs.entries().iter())
            .map(|(f, c)| f * c)
            .sum();
        assert!((plan.cost - priced).abs() < 1e-9);
    }

    #[test]
    fn rejects_marginal_off_simplex() {
        let costs = cm(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert!(solve_transport(&[0.7, 0.2], &[0.5, 0.5], &costs).is_err());
    }

    #[test]
    fn degenerate_marginals_with_zeros() {
        let costs = cm(3, 3, &[1.0, 2.0, 3.0, 2.0, 1.0, 3.0, 3.0, 2.0, 1.0]);
        let plan = solve_transport(&[0.5, 0.0, 0.5], &[0.5, 0.5, 0.0], &costs).unwrap();
        // mass 0.5 at row 0 -> col 0 (cost 1), row 2 splits to col 1 (cost 2).
        assert!((plan.cost - (0.5 * 1.0 + 0.5 * 2.0)).abs() < 1e-9);
    }
}
