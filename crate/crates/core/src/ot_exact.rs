//! Exact discrete optimal transport by the transportation simplex (network
//! simplex on the complete bipartite graph) and linear assignment.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::measures::{pairwise_sum, Coupling, DiscreteMeasure};

/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_RUN: usize = 30;

/// Optimal plan with dual potentials.
#[derive(Debug, Clone)]
pub struct OtSolution {
    pub plan: Coupling,
    pub phi0: Vec<f64>,
    pub phi1: Vec<f64>,
    pub value: f64,
}

/// Basic solution in sparse form: exactly `m + n - 1` cells.
#[derive(Debug, Clone)]
pub struct SparsePlan {
    pub cells: Vec<(usize, usize, f64)>,
    pub phi0: Vec<f64>,
    pub phi1: Vec<f64>,
    pub value: f64,
    pub pivots: usize,
}

impl SparsePlan {
    pub fn to_dense(&self, m: usize, n: usize) -> DMatrix<f64> {
        let mut p = DMatrix::zeros(m, n);
        for &(i, j, f) in &self.cells {
            p[(i, j)] += f;
        }
        p
    }
}

/// `C_ij = -4 |x_i|^2 |y_j|^2 - 32 x_iᵀ A y_j`.
pub fn cost_matrix_ca(m0: &DiscreteMeasure, m1: &DiscreteMeasure, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != m0.dim() || a.ncols() != m1.dim() {
        return Err(Error::DimensionMismatch(format!(
            "A is {}x{} but the measures live in R^{} and R^{}",
            a.nrows(),
            a.ncols(),
            m0.dim(),
            m1.dim()
        )));
    }
    let x = DMatrix::from_row_slice(m0.len(), m0.dim(), m0.points_flat());
    let y = DMatrix::from_row_slice(m1.len(), m1.dim(), m1.points_flat());
    let nx: Vec<f64> = m0.points().map(|p| p.iter().map(|v| v * v).sum()).collect();
    let ny: Vec<f64> = m1.points().map(|p| p.iter().map(|v| v * v).sum()).collect();
    let bilinear = &x * a * y.transpose();
    Ok(DMatrix::from_fn(m0.len(), m1.len(), |i, j| {
        -4.0 * nx[i] * ny[j] - 32.0 * bilinear[(i, j)]
    }))
}

/// Transportation simplex with a reusable basis.
///
/// Consecutive solves with the same marginals start from the previous
/// optimal basis, which is primal feasible for any cost.
#[derive(Debug, Clone)]
pub struct OtSolver {
    supply: Vec<f64>,
    demand: Vec<f64>,
    basis: Vec<(usize, usize)>,
    flow: Vec<f64>,
    // per node: indices into `basis`
    adj: Vec<Vec<usize>>,
    parent: Vec<usize>,
    parent_cell: Vec<usize>,
    depth: Vec<usize>,
    order: Vec<usize>,
    pot: Vec<f64>,
}

const NONE: usize = usize::MAX;

impl OtSolver {
    pub fn new(m0: &DiscreteMeasure, m1: &DiscreteMeasure) -> Self {
        Self::from_weights(m0.weights().to_vec(), m1.weights().to_vec())
    }

    /// Solver for raw marginal vectors. Both must be nonempty, nonnegative
    /// and have equal sums (not checked here).
    pub fn from_weights(supply: Vec<f64>, demand: Vec<f64>) -> Self {
        let (m, n) = (supply.len(), demand.len());
        OtSolver {
            supply,
            demand,
            basis: Vec::new(),
            flow: Vec::new(),
            adj: vec![Vec::new(); m + n],
            parent: vec![NONE; m + n],
            parent_cell: vec![NONE; m + n],
            depth: vec![0; m + n],
            order: Vec::with_capacity(m + n),
            pot: vec![0.0; m + n],
        }
    }

    fn m(&self) -> usize {
        self.supply.len()
    }

    fn n(&self) -> usize {
        self.demand.len()
    }

    fn northwest_corner(&mut self) {
        let (m, n) = (self.m(), self.n());
        self.basis.clear();
        self.flow.clear();
        let mut ra = self.supply[0];
        let mut rb = self.demand[0];
        let (mut i, mut j) = (0, 0);
        loop {
            let x = ra.min(rb).max(0.0);
            self.basis.push((i, j));
            self.flow.push(x);
            if i == m - 1 && j == n - 1 {
                break;
            }
            ra -= x;
            rb -= x;
            let advance_row = if j == n - 1 {
                true
            } else if i == m - 1 {
                false
            } else {
                ra <= rb
            };
            if advance_row {
                i += 1;
                ra = self.supply[i];
            } else {
                j += 1;
                rb = self.demand[j];
            }
        }
        self.rebuild_adjacency();
    }

    fn rebuild_adjacency(&mut self) {
        let m = self.m();
        for a in &mut self.adj {
            a.clear();
        }
        for (k, &(i, j)) in self.basis.iter().enumerate() {
            self.adj[i].push(k);
            self.adj[m + j].push(k);
        }
    }

    /// Recompute basic flows from the tree by leaf elimination. Returns false
    /// if the basis is not a spanning tree or is infeasible for the marginals.
    fn flows_from_tree(&mut self) -> bool {
        let (m, n) = (self.m(), self.n());
        if self.basis.len() != m + n - 1 {
            return false;
        }
        let mut rem: Vec<f64> = self.supply.iter().chain(&self.demand).copied().collect();
        let mut deg: Vec<usize> = self.adj.iter().map(Vec::len).collect();
        let mut done = vec![false; self.basis.len()];
        let mut stack: Vec<usize> = (0..m + n).rev().filter(|&v| deg[v] == 1).collect();
        let mut assigned = 0;
        while let Some(v) = stack.pop() {
            if deg[v] != 1 {
                continue;
            }
            let Some(&k) = self.adj[v].iter().find(|&&k| !done[k]) else {
                return false;
            };
            let (i, j) = self.basis[k];
            let other = if v < m { m + j } else { i };
            let f = rem[v];
            if f < -1e-12 {
                return false;
            }
            self.flow[k] = f.max(0.0);
            done[k] = true;
            assigned += 1;
            rem[other] -= f;
            rem[v] = 0.0;
            deg[v] = 0;
            deg[other] -= 1;
            if deg[other] == 1 {
                stack.push(other);
            }
        }
        assigned == self.basis.len()
    }

    /// Root the tree at row 0 and compute potentials `u_i + v_j = C_ij` on
    /// basic cells with `u_0 = 0`.
    fn potentials(&mut self, c: &DMatrix<f64>) -> bool {
        let m = self.m();
        let total = self.adj.len();
        self.parent.fill(NONE);
        self.order.clear();
        self.order.push(0);
        self.parent[0] = 0;
        self.parent_cell[0] = NONE;
        self.depth[0] = 0;
        self.pot[0] = 0.0;
        let mut head = 0;
        while head < self.order.len() {
            let v = self.order[head];
            head += 1;
            for &k in &self.adj[v] {
                let (i, j) = self.basis[k];
                let w = if v < m { m + j } else { i };
                if self.parent[w] != NONE {
                    continue;
                }
                self.parent[w] = v;
                self.parent_cell[w] = k;
                self.depth[w] = self.depth[v] + 1;
                self.pot[w] = c[(i, j)] - self.pot[v];
                self.order.push(w);
            }
        }
        self.order.len() == total
    }

    /// Solve for cost `c`, reusing the previous basis when available.
    pub fn solve(&mut self, c: &DMatrix<f64>) -> Result<SparsePlan> {
        let (m, n) = (self.m(), self.n());
        if c.nrows() != m || c.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "cost is {}x{}, marginals have {m} and {n} atoms",
                c.nrows(),
                c.ncols()
            )));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("cost matrix has non-finite entries".into()));
        }
        let warm = !self.basis.is_empty() && self.flows_from_tree();
        if !warm {
            self.northwest_corner();
        }
        if !self.potentials(c) {
            return Err(Error::OtFailure {
                message: "basis is not a spanning tree".into(),
                residual: f64::NAN,
            });
        }

        let scale = c.iter().fold(1.0f64, |s, v| s.max(v.abs()));
        let tol = 1e-12 * scale;
        let max_pivots = 50 * (m + n) * (m + n) + 1000;
        let mut degenerate_run = 0;
        let mut pivots = 0;
        let mut up: Vec<usize> = Vec::new();
        let mut down: Vec<usize> = Vec::new();
        loop {
            let bland = degenerate_run >= DEGENERATE_RUN;
            let Some((ei, ej)) = self.price(c, tol, bland) else {
                break;
            };
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::OtFailure {
                    message: format!("no convergence after {max_pivots} pivots"),
                    residual: self.reduced_cost_violation(c),
                });
            }

            // Tree path from column ej to row ei, edges listed starting at ej.
            up.clear();
            down.clear();
            let (mut a, mut b) = (ei, m + ej);
            while self.depth[a] > self.depth[b] {
                down.push(self.parent_cell[a]);
                a = self.parent[a];
            }
            while self.depth[b] > self.depth[a] {
                up.push(self.parent_cell[b]);
                b = self.parent[b];
            }
            while a != b {
                down.push(self.parent_cell[a]);
                a = self.parent[a];
                up.push(self.parent_cell[b]);
                b = self.parent[b];
            }
            up.extend(down.iter().rev());
            let path = &up;

            // Odd positions along the path from ej lose flow.
            let mut theta = f64::INFINITY;
            let mut leave = NONE;
            let mut leave_id = usize::MAX;
            for (t, &k) in path.iter().enumerate() {
                if t % 2 != 0 {
                    continue;
                }
                let f = self.flow[k];
                let (i, j) = self.basis[k];
                let id = i * n + j;
                if f < theta || (f == theta && id < leave_id) {
                    theta = f;
                    leave = k;
                    leave_id = id;
                }
            }
            let theta = theta.max(0.0);
            for (t, &k) in path.iter().enumerate() {
                if t % 2 == 0 {
                    self.flow[k] = (self.flow[k] - theta).max(0.0);
                } else {
                    self.flow[k] += theta;
                }
            }
            degenerate_run = if theta <= 1e-15 { degenerate_run + 1 } else { 0 };

            let (li, lj) = self.basis[leave];
            self.adj[li].retain(|&k| k != leave);
            self.adj[m + lj].retain(|&k| k != leave);
            self.basis[leave] = (ei, ej);
            self.flow[leave] = theta;
            self.adj[ei].push(leave);
            self.adj[m + ej].push(leave);
            if !self.potentials(c) {
                return Err(Error::OtFailure {
                    message: "pivot broke the spanning tree".into(),
                    residual: f64::NAN,
                });
            }
        }

        let mut phi0 = self.pot[..m].to_vec();
        let mut phi1 = self.pot[m..].to_vec();
        let shift = phi1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        phi1.iter_mut().for_each(|v| *v -= shift);
        phi0.iter_mut().for_each(|u| *u += shift);

        let cells: Vec<(usize, usize, f64)> = self
            .basis
            .iter()
            .zip(&self.flow)
            .map(|(&(i, j), &f)| (i, j, f))
            .collect();
        let terms: Vec<f64> = cells.iter().map(|&(i, j, f)| c[(i, j)] * f).collect();
        Ok(SparsePlan {
            value: pairwise_sum(&terms),
            cells,
            phi0,
            phi1,
            pivots,
        })
    }

    /// Entering cell: most negative reduced cost, or the first negative one
    /// in row-major order under Bland's rule.
    fn price(&self, c: &DMatrix<f64>, tol: f64, bland: bool) -> Option<(usize, usize)> {
        let m = self.m();
        let (u, v) = self.pot.split_at(m);
        let mut best = -tol;
        let mut arg = None;
        if bland {
            for i in 0..m {
                for (j, vj) in v.iter().enumerate() {
                    if c[(i, j)] - u[i] - vj < -tol {
                        return Some((i, j));
                    }
                }
            }
            return None;
        }
        for (j, vj) in v.iter().enumerate() {
            let col = c.column(j);
            for i in 0..m {
                let d = col[i] - u[i] - vj;
                if d < best {
                    best = d;
                    arg = Some((i, j));
                }
            }
        }
        arg
    }

    fn reduced_cost_violation(&self, c: &DMatrix<f64>) -> f64 {
        let m = self.m();
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in 0..self.n() {
                worst = worst.max(self.pot[i] + self.pot[m + j] - c[(i, j)]);
            }
        }
        worst
    }
}

/// One-shot exact OT.
pub fn solve_ot(c: &DMatrix<f64>, m0: &DiscreteMeasure, m1: &DiscreteMeasure) -> Result<OtSolution> {
    let sparse = OtSolver::new(m0, m1).solve(c)?;
    let dense = sparse.to_dense(m0.len(), m1.len());
    let plan = Coupling::new(dense, m0.clone(), m1.clone()).map_err(|e| Error::OtFailure {
        message: e.to_string(),
        residual: f64::NAN,
    })?;
    Ok(OtSolution {
        plan,
        phi0: sparse.phi0,
        phi1: sparse.phi1,
        value: sparse.value,
    })
}

impl OtSolution {
    /// Largest violation of the dual constraints, complementary slackness and
    /// strong duality.
    pub fn certificate_residual(&self, c: &DMatrix<f64>) -> f64 {
        let p = self.plan.plan();
        let mut worst: f64 = 0.0;
        for i in 0..p.nrows() {
            for j in 0..p.ncols() {
                let slack = c[(i, j)] - self.phi0[i] - self.phi1[j];
                worst = worst.max(-slack);
                if p[(i, j)] > 1e-12 {
                    worst = worst.max(slack.abs());
                }
            }
        }
        let w0 = self.plan.source().weights();
        let w1 = self.plan.target().weights();
        let dual: f64 = self.phi0.iter().zip(w0).map(|(a, b)| a * b).sum::<f64>()
            + self.phi1.iter().zip(w1).map(|(a, b)| a * b).sum::<f64>();
        worst.max((dual - self.value).abs())
    }
}

/// Permutation `sigma` maximizing `Σ_i S[i, sigma[i]]`. Among optimal
/// permutations the lexicographically smallest is returned.
pub fn linear_assignment(s: &DMatrix<f64>) -> Result<Vec<usize>> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::DimensionMismatch(format!("assignment matrix is {}x{}", n, s.ncols())));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("assignment matrix has non-finite entries".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    // Shortest augmenting path Hungarian method on cost -S (1-indexed).
    let cost = |i: usize, j: usize| -s[(i - 1, j - 1)];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
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

    let scale = s.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-10 * scale;
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| cost(i + 1, j + 1) - u[i + 1] - v[j + 1] <= tol)
                .collect()
        })
        .collect();
    let mut col_of_row = vec![0usize; n];
    let mut row_of_col = vec![0usize; n];
    for j in 1..=n {
        col_of_row[p[j] - 1] = j - 1;
        row_of_col[j - 1] = p[j] - 1;
    }
    lexicographic_tight_matching(&tight, &mut col_of_row, &mut row_of_col);
    Ok(col_of_row)
}

/// Rewrite a perfect matching in the tight graph into the lexicographically
/// smallest one.
fn lexicographic_tight_matching(tight: &[Vec<bool>], col_of_row: &mut [usize], row_of_col: &mut [usize]) {
    let n = tight.len();
    let mut fixed = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            if fixed[j] || !tight[i][j] {
                continue;
            }
            if col_of_row[i] == j {
                fixed[j] = true;
                break;
            }
            let saved = (col_of_row.to_vec(), row_of_col.to_vec());
            let r = row_of_col[j];
            let freed = col_of_row[i];
            col_of_row[i] = j;
            row_of_col[j] = i;
            row_of_col[freed] = NONE;
            fixed[j] = true;
            let mut seen = vec![false; n];
            if augment(r, tight, &fixed, &mut seen, col_of_row, row_of_col) {
                break;
            }
            fixed[j] = false;
            col_of_row.copy_from_slice(&saved.0);
            row_of_col.copy_from_slice(&saved.1);
        }
    }
}

fn augment(
    r: usize,
    tight: &[Vec<bool>],
    fixed: &[bool],
    seen: &mut [bool],
    col_of_row: &mut [usize],
    row_of_col: &mut [usize],
) -> bool {
    for jj in 0..tight.len() {
        if fixed[jj] || seen[jj] || !tight[r][jj] {
            continue;
        }
        seen[jj] = true;
        let holder = row_of_col[jj];
        if holder == NONE || augment(holder, tight, fixed, seen, col_of_row, row_of_col) {
            col_of_row[r] = jj;
            row_of_col[jj] = r;
            return true;
        }
    }
    false
}

/// `Σ_i S[i, sigma[i]]`.
pub fn assignment_value(s: &DMatrix<f64>, sigma: &[usize]) -> f64 {
    sigma.iter().enumerate().map(|(i, &j)| s[(i, j)]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use itertools::Itertools;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uni(n: usize) -> DiscreteMeasure {
        DiscreteMeasure::uniform((0..n).map(|i| vec![i as f64]).collect()).unwrap()
    }

    #[test]
    fn cost_examples() {
        let x = DiscreteMeasure::dirac(vec![1.0, 0.0]).unwrap();
        let y = DiscreteMeasure::dirac(vec![0.0, 1.0]).unwrap();
        assert_eq!(cost_matrix_ca(&x, &y, &DMatrix::identity(2, 2)).unwrap()[(0, 0)], -4.0);
        let s = DiscreteMeasure::dirac(vec![1.0]).unwrap();
        assert_eq!(cost_matrix_ca(&s, &s, &DMatrix::from_element(1, 1, 0.5)).unwrap()[(0, 0)], -20.0);
        let a = DiscreteMeasure::uniform(vec![vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let b = DiscreteMeasure::uniform(vec![vec![3.0], vec![0.0], vec![-2.0]]).unwrap();
        let c = cost_matrix_ca(&a, &b, &DMatrix::zeros(2, 1)).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let nx: f64 = a.point(i).iter().map(|v| v * v).sum();
                let ny: f64 = b.point(j).iter().map(|v| v * v).sum();
                assert_eq!(c[(i, j)], -4.0 * nx * ny);
            }
        }
        assert!(cost_matrix_ca(&a, &b, &DMatrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn ot_examples() {
        let d = uni(1);
        let sol = solve_ot(&DMatrix::from_element(1, 1, 3.5), &d, &d).unwrap();
        assert_eq!(sol.plan.plan()[(0, 0)], 1.0);
        assert_eq!(sol.value, 3.5);

        let u2 = uni(2);
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let sol = solve_ot(&c, &u2, &u2).unwrap();
        assert_eq!(sol.value, 0.0);
        assert_eq!(sol.plan.plan(), &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]));
        assert!(sol.certificate_residual(&c) <= 1e-12);
        assert_eq!(sol.phi1.iter().copied().fold(f64::NEG_INFINITY, f64::max), 0.0);
    }

    #[test]
    fn warm_start_matches_cold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w0 = vec![0.1, 0.2, 0.3, 0.15, 0.25];
        let w1 = vec![0.5, 0.25, 0.125, 0.125];
        let m0 = DiscreteMeasure::new((0..5).map(|i| vec![i as f64]).collect(), w0).unwrap();
        let m1 = DiscreteMeasure::new((0..4).map(|i| vec![i as f64]).collect(), w1).unwrap();
        let mut warm = OtSolver::new(&m0, &m1);
        for _ in 0..20 {
            let c = DMatrix::from_fn(5, 4, |_, _| rng.random_range(-5.0..5.0));
            let a = warm.solve(&c).unwrap().value;
            let b = solve_ot(&c, &m0, &m1).unwrap().value;
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_instances_terminate() {
        // integer costs and uniform marginals produce many ties
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = uni(12);
        for _ in 0..20 {
            let c = DMatrix::from_fn(12, 12, |_, _| rng.random_range(0..3) as f64);
            let sol = solve_ot(&c, &m, &m).unwrap();
            assert!(sol.certificate_residual(&c) <= 1e-9);
        }
    }

    fn brute_assignment(s: &DMatrix<f64>) -> (f64, Vec<usize>) {
        let n = s.nrows();
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for p in (0..n).permutations(n) {
            let v = assignment_value(s, &p);
            if v > best.0 + 1e-12 {
                best = (v, p);
            }
        }
        best
    }

    #[test]
    fn assignment_examples() {
        let s = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.9]);
        let sig = linear_assignment(&s).unwrap();
        assert_eq!(sig, vec![0, 1]);
        assert_abs_diff_eq!(assignment_value(&s, &sig), 1.8, epsilon = 1e-15);
        assert_eq!(linear_assignment(&DMatrix::identity(5, 5)).unwrap(), vec![0, 1, 2, 3, 4]);
        // all-equal scores: every permutation ties, identity is smallest
        assert_eq!(linear_assignment(&DMatrix::from_element(4, 4, 2.0)).unwrap(), vec![0, 1, 2, 3]);
        // tie between (1,0,..) and (0,1,..): reversed anti-identity plus ties
        let s = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
        assert_eq!(linear_assignment(&s).unwrap(), vec![1, 2, 0]);
    }

    #[test]
    fn assignment_matches_brute_force_on_6x6() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let s = DMatrix::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
            let (best, perm) = brute_assignment(&s);
            let sig = linear_assignment(&s).unwrap();
            assert_abs_diff_eq!(assignment_value(&s, &sig), best, epsilon = 1e-12);
            assert_eq!(sig, perm);
        }
    }

    #[test]
    fn ot_on_permutation_cost_is_assignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 6;
        let u = uni(n);
        for _ in 0..10 {
            let s = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let sol = solve_ot(&s, &u, &u).unwrap();
            let sig = linear_assignment(&(-&s)).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let expect = if sig[i] == j { 1.0 / n as f64 } else { 0.0 };
                    assert_abs_diff_eq!(sol.plan.plan()[(i, j)], expect, epsilon = 1e-14);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn potentials_certify_optimality(
            seed in 0u64..10_000,
            m in 1usize..7,
            n in 1usize..7,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw0: Vec<f64> = (0..m).map(|_| rng.random_range(0.1..1.0)).collect();
            let raw1: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let norm = |r: Vec<f64>| {
                let s: f64 = r.iter().sum();
                let mut w: Vec<f64> = r.iter().map(|x| x / s).collect();
                let t: f64 = w.iter().sum();
                w[0] += 1.0 - t;
                w
            };
            let m0 = DiscreteMeasure::new((0..m).map(|i| vec![i as f64]).collect(), norm(raw0)).unwrap();
            let m1 = DiscreteMeasure::new((0..n).map(|i| vec![i as f64]).collect(), norm(raw1)).unwrap();
            let c = DMatrix::from_fn(m, n, |_, _| rng.random_range(-10.0..10.0));
            let sol = solve_ot(&c, &m0, &m1).unwrap();
            prop_assert!(sol.certificate_residual(&c) <= 1e-9);

            // shifting potentials keeps the certificate
            let mut shifted = sol.clone();
            shifted.phi0.iter_mut().for_each(|u| *u += 1.7);
            shifted.phi1.iter_mut().for_each(|v| *v -= 1.7);
            prop_assert!(shifted.certificate_residual(&c) <= 1e-9);

            // adding a row vector r changes the value by <r, m0>
            let r: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
            let c2 = DMatrix::from_fn(m, n, |i, j| c[(i, j)] + r[i]);
            let shift: f64 = r.iter().zip(m0.weights()).map(|(a, b)| a * b).sum();
            let sol2 = solve_ot(&c2, &m0, &m1).unwrap();
            prop_assert!((sol2.value - shift - sol.value).abs() <= 1e-9);
        }
    }
}
