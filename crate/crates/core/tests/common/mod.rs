//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the library's solvers.
#![allow(dead_code)]

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

const PIVOT_TOL: f64 = 1e-12;

/// Dense two-phase simplex with Bland's rule for `min cᵀx, Ax = b, x ≥ 0`.
/// Returns the optimal value and point, or `None` when infeasible.
pub fn simplex_min(c: &[f64], a: &DMatrix<f64>, b: &[f64]) -> Option<(f64, Vec<f64>)> {
    let (m, n) = a.shape();
    // tableau columns: n originals, m artificials, rhs
    let w = n + m + 1;
    let mut t = DMatrix::zeros(m, w);
    for i in 0..m {
        let s = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[(i, j)] = s * a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, w - 1)] = s * b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();

    let phase1: Vec<f64> = (0..n + m).map(|j| if j >= n { 1.0 } else { 0.0 }).collect();
    run_simplex(&mut t, &mut basis, &phase1, n + m);
    let infeas: f64 = basis
        .iter()
        .enumerate()
        .filter(|&(_, &bj)| bj >= n)
        .map(|(i, _)| t[(i, w - 1)])
        .sum();
    if infeas > 1e-9 {
        return None;
    }
    // drive zero-level artificials out where possible
    for i in 0..m {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[(i, j)].abs() > 1e-9) {
                pivot(&mut t, &mut basis, i, j);
            }
        }
    }
    let mut cost = c.to_vec();
    cost.extend(std::iter::repeat_n(0.0, m));
    run_simplex(&mut t, &mut basis, &cost, n);
    let mut x = vec![0.0; n];
    for (i, &bj) in basis.iter().enumerate() {
        if bj < n {
            x[bj] = t[(i, w - 1)];
        }
    }
    let v = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    Some((v, x))
}

fn pivot(t: &mut DMatrix<f64>, basis: &mut [usize], r: usize, col: usize) {
    let p = t[(r, col)];
    let w = t.ncols();
    for j in 0..w {
        t[(r, j)] /= p;
    }
    for i in 0..t.nrows() {
        if i != r {
            let f = t[(i, col)];
            if f != 0.0 {
                for j in 0..w {
                    t[(i, j)] -= f * t[(r, j)];
                }
            }
        }
    }
    basis[r] = col;
}

/// Minimize `cost` using only columns `< allowed` as entering candidates.
fn run_simplex(t: &mut DMatrix<f64>, basis: &mut [usize], cost: &[f64], allowed: usize) {
    let m = t.nrows();
    let rhs = t.ncols() - 1;
    loop {
        // reduced costs
        let entering = (0..allowed).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let mut r = cost[j];
            for i in 0..m {
                r -= cost[basis[i]] * t[(i, j)];
            }
            r < -1e-11
        });
        let Some(col) = entering else { return };
        let mut best: Option<(f64, usize)> = None;
        for i in 0..m {
            if t[(i, col)] > PIVOT_TOL {
                let ratio = t[(i, rhs)] / t[(i, col)];
                match best {
                    Some((b, bi)) if ratio > b + 1e-14 || (ratio >= b - 1e-14 && basis[i] > basis[bi]) => {}
                    _ => best = Some((ratio, i)),
                }
            }
        }
        let Some((_, r)) = best else { return };
        pivot(t, basis, r, col);
    }
}

/// Exact OT by the dense simplex; returns value and plan.
pub fn ot_simplex(cost: &DMatrix<f64>, a: &[f64], b: &[f64]) -> (f64, DMatrix<f64>) {
    let (m, n) = cost.shape();
    // last column constraint is implied by the others
    let rows = m + n - 1;
    let mut mat = DMatrix::zeros(rows, m * n);
    let mut rhs = vec![0.0; rows];
    for i in 0..m {
        for j in 0..n {
            mat[(i, i * n + j)] = 1.0;
        }
        rhs[i] = a[i];
    }
    for j in 0..n - 1 {
        for i in 0..m {
            mat[(m + j, i * n + j)] = 1.0;
        }
        rhs[m + j] = b[j];
    }
    let c: Vec<f64> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| cost[(i, j)]).collect();
    let (v, x) = simplex_min(&c, &mat, &rhs).expect("transport LP is feasible");
    (v, DMatrix::from_row_slice(m, n, &x))
}

fn center_1d(x: &[f64], w: &[f64]) -> Vec<f64> {
    let mean: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
    x.iter().map(|v| v - mean).collect()
}

/// Squared GW distance of two 1-D measures: grid search over the scalar
/// auxiliary variable with an exact OT solve per grid point, refined by the
/// closed-form minimum over every plan the grid encountered.
pub fn gw_1d_oracle(x: &[f64], wx: &[f64], y: &[f64], wy: &[f64], step: f64) -> f64 {
    let x = center_1d(x, wx);
    let y = center_1d(y, wy);
    let t4 = |p: &[f64], w: &[f64]| {
        let mut s = 0.0;
        for i in 0..p.len() {
            for j in 0..p.len() {
                s += w[i] * w[j] * (p[i] - p[j]).powi(4);
            }
        }
        s
    };
    let m2 = |p: &[f64], w: &[f64]| p.iter().zip(w).map(|(a, b)| b * a * a).sum::<f64>();
    let s1 = t4(&x, wx) + t4(&y, wy) - 4.0 * m2(&x, wx) * m2(&y, wy);
    let r = 0.5 * (m2(&x, wx) * m2(&y, wy)).sqrt() + 2.0 * step;
    let steps = (2.0 * r / step).ceil() as usize;
    let mut best = f64::INFINITY;
    let mut plans: Vec<DMatrix<f64>> = Vec::new();
    for k in 0..=steps {
        let a = -r + k as f64 * step;
        let cost = DMatrix::from_fn(x.len(), y.len(), |i, j| -4.0 * x[i] * x[i] * y[j] * y[j] - 32.0 * a * x[i] * y[j]);
        let (v, plan) = ot_simplex(&cost, wx, wy);
        best = best.min(32.0 * a * a + v);
        if !plans.iter().any(|p| (p - &plan).amax() < 1e-12) {
            plans.push(plan);
        }
    }
    for p in &plans {
        let mut alpha = 0.0;
        let mut beta = 0.0;
        for i in 0..x.len() {
            for j in 0..y.len() {
                alpha += -4.0 * x[i] * x[i] * y[j] * y[j] * p[(i, j)];
                beta += x[i] * y[j] * p[(i, j)];
            }
        }
        best = best.min(alpha - 8.0 * beta * beta);
    }
    s1 + best
}

/// Squared GW value of a coupling by direct quadruple summation.
pub fn gw_four_loop(x: &[Vec<f64>], y: &[Vec<f64>], plan: &DMatrix<f64>) -> f64 {
    let d2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
    let mut s = 0.0;
    for i in 0..x.len() {
        for j in 0..y.len() {
            for k in 0..x.len() {
                for l in 0..y.len() {
                    let delta = d2(&x[i], &x[k]) - d2(&y[j], &y[l]);
                    s += delta * delta * plan[(i, j)] * plan[(k, l)];
                }
            }
        }
    }
    s
}

fn find(parent: &mut [usize], mut v: usize) -> usize {
    while parent[v] != v {
        parent[v] = parent[parent[v]];
        v = parent[v];
    }
    v
}

/// Minimum cost over all basic feasible solutions of a transportation
/// problem, found by enumerating every spanning tree of the bipartite
/// graph and solving it by leaf peeling.
pub fn transport_vertex_min(cost: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let (m, n) = cost.shape();
    let cells: Vec<(usize, usize)> = (0..m).cartesian_product(0..n).collect();
    let mut best = f64::INFINITY;
    for subset in cells.iter().combinations(m + n - 1) {
        let mut parent: Vec<usize> = (0..m + n).collect();
        let mut tree = true;
        for &&(i, j) in &subset {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, m + j));
            if ri == rj {
                tree = false;
                break;
            }
            parent[ri] = rj;
        }
        if !tree {
            continue;
        }
        let mut rest: Vec<f64> = a.iter().chain(b).copied().collect();
        let mut alive: Vec<bool> = vec![true; subset.len()];
        let mut flow = vec![0.0; subset.len()];
        for _ in 0..subset.len() {
            let mut deg = vec![0usize; m + n];
            for (k, &&(i, j)) in subset.iter().enumerate() {
                if alive[k] {
                    deg[i] += 1;
                    deg[m + j] += 1;
                }
            }
            let (k, leaf) = subset
                .iter()
                .enumerate()
                .filter(|&(k, _)| alive[k])
                .find_map(|(k, &&(i, j))| {
                    if deg[i] == 1 {
                        Some((k, i))
                    } else if deg[m + j] == 1 {
                        Some((k, m + j))
                    } else {
                        None
                    }
                })
                .expect("a tree has a leaf");
            let (i, j) = *subset[k];
            let other = if leaf == i { m + j } else { i };
            flow[k] = rest[leaf];
            rest[other] -= flow[k];
            rest[leaf] = 0.0;
            alive[k] = false;
        }
        if flow.iter().all(|&f| f >= 0.0) {
            let v: f64 = subset.iter().zip(&flow).map(|(&&(i, j), f)| f * cost[(i, j)]).sum();
            best = best.min(v);
        }
    }
    best
}

/// `max cᵀu` over `{u_i − u_j ≤ b_ij, |u_0| ≤ δ}` by enumerating all
/// vertices (every choice of `N` tight constraints).
pub fn polytope_vertex_max(b: &DMatrix<f64>, delta: f64, c: &[f64]) -> f64 {
    let n = b.nrows();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let mut r = vec![0.0; n];
                r[i] = 1.0;
                r[j] = -1.0;
                rows.push((r, b[(i, j)]));
            }
        }
    }
    let mut e0 = vec![0.0; n];
    e0[0] = 1.0;
    rows.push((e0.clone(), delta));
    rows.push((e0.iter().map(|v| -v).collect(), delta));
    let scale = 1.0 + b.amax() + delta;
    let mut best = f64::NEG_INFINITY;
    for active in (0..rows.len()).combinations(n) {
        let mat = DMatrix::from_fn(n, n, |r, k| rows[active[r]].0[k]);
        if mat.determinant().abs() < 0.5 {
            continue;
        }
        let rhs = DVector::from_iterator(n, active.iter().map(|&r| rows[r].1));
        let Some(u) = mat.lu().solve(&rhs) else { continue };
        let feasible = rows
            .iter()
            .all(|(r, bound)| r.iter().zip(u.iter()).map(|(a, b)| a * b).sum::<f64>() <= bound + 1e-10 * scale);
        if feasible {
            best = best.max(c.iter().zip(u.iter()).map(|(a, b)| a * b).sum());
        }
    }
    best
}

/// Euclidean projection onto `{R : R1 = 1, Rᵀ1 = 1}`.
fn project_affine(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let r = DVector::from_element(x.nrows(), 1.0) - x.column_sum();
    let s = DVector::from_element(x.ncols(), 1.0) - x.row_sum().transpose();
    let t = r.sum();
    let mut p = x.clone();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            p[(i, j)] += r[i] / n + s[j] / n - t / (n * n);
        }
    }
    p
}

/// Projection onto doubly stochastic matrices by Dykstra's algorithm.
pub fn project_birkhoff(z: &DMatrix<f64>, iters: usize) -> DMatrix<f64> {
    let mut x = z.clone();
    let mut p = DMatrix::zeros(z.nrows(), z.ncols());
    let mut q = p.clone();
    for _ in 0..iters {
        let y = project_affine(&(&x + &p));
        p = &x + &p - &y;
        let xn = (&y + &q).map(|v| v.max(0.0));
        q = &y + &q - &xn;
        let moved = (&xn - &x).amax();
        x = xn;
        if moved < 1e-15 {
            break;
        }
    }
    x
}

/// `min ‖R P0 − P1 R‖²` over the Birkhoff polytope by accelerated
/// projected gradient.
pub fn birkhoff_pg_oracle(p0: &DMatrix<f64>, p1: &DMatrix<f64>, iters: usize) -> f64 {
    let n = p0.nrows();
    let obj = |r: &DMatrix<f64>| (r * p0 - p1 * r).norm_squared();
    let grad = |r: &DMatrix<f64>| {
        let e = r * p0 - p1 * r;
        (&e * p0.transpose() - p1.transpose() * &e) * 2.0
    };
    let l = 2.0 * (p0.norm() + p1.norm()).powi(2);
    let mut x = DMatrix::from_element(n, n, 1.0 / n as f64);
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut best = obj(&x);
    for _ in 0..iters {
        let xn = project_birkhoff(&(&y - grad(&y) / l), 500);
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &xn + (&xn - &x) * ((t - 1.0) / tn);
        x = xn;
        t = tn;
        best = best.min(obj(&x));
    }
    best
}

/// Maximum of `Σ_i S[i, σ(i)]` over all permutations, with the first
/// maximizer in lexicographic order.
pub fn brute_force_assignment(s: &DMatrix<f64>) -> (f64, Vec<usize>) {
    let n = s.nrows();
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for sigma in (0..n).permutations(n) {
        let v: f64 = sigma.iter().enumerate().map(|(i, &j)| s[(i, j)]).sum();
        if v > best.0 {
            best = (v, sigma);
        }
    }
    best
}
