//! Entropic optimal transport by log-domain Sinkhorn iterations.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::measures::{pairwise_sum, Coupling, DiscreteMeasure};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// EOT potentials and plan `π_ij = w0_i w1_j exp((φ0_i + φ1_j − C_ij)/ε)`.
#[derive(Debug, Clone)]
pub struct EotSolution {
    pub plan: Coupling,
    pub phi0: Vec<f64>,
    pub phi1: Vec<f64>,
    /// `⟨C, π⟩ + ε KL(π ‖ w0⊗w1)`.
    pub value: f64,
    pub eps: f64,
    pub iterations: usize,
    /// Largest Schrödinger residual over rows (columns are exact).
    pub residual: f64,
}

/// Reusable Sinkhorn state. Potentials from the previous solve seed the next.
#[derive(Debug, Clone)]
pub struct SinkhornSolver {
    m0: DiscreteMeasure,
    m1: DiscreteMeasure,
    ln_w0: Vec<f64>,
    ln_w1: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    warm: bool,
    scratch: Vec<f64>,
}

fn ln_weights(w: &[f64]) -> Vec<f64> {
    w.iter().map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY }).collect()
}

/// `-ε log Σ_k exp(lw_k + (h_k − c_k)/ε)` with max subtraction.
fn soft_min(c: &[f64], h: &[f64], lw: &[f64], eps: f64, scratch: &mut Vec<f64>) -> f64 {
    scratch.clear();
    let mut mx = f64::NEG_INFINITY;
    for ((&ck, &hk), &lk) in c.iter().zip(h).zip(lw) {
        let t = lk + (hk - ck) / eps;
        mx = mx.max(t);
        scratch.push(t);
    }
    let s: f64 = scratch.iter().map(|t| (t - mx).exp()).sum();
    -eps * (mx + s.ln())
}

impl SinkhornSolver {
    pub fn new(m0: &DiscreteMeasure, m1: &DiscreteMeasure) -> Self {
        SinkhornSolver {
            ln_w0: ln_weights(m0.weights()),
            ln_w1: ln_weights(m1.weights()),
            f: vec![0.0; m0.len()],
            g: vec![0.0; m1.len()],
            m0: m0.clone(),
            m1: m1.clone(),
            warm: false,
            scratch: Vec::new(),
        }
    }

    /// Forget the stored potentials.
    pub fn reset(&mut self) {
        self.warm = false;
        self.f.fill(0.0);
        self.g.fill(0.0);
    }

    pub fn solve(&mut self, c: &DMatrix<f64>, eps: f64, tol: f64, max_iter: usize) -> Result<EotSolution> {
        let (m, n) = (self.m0.len(), self.m1.len());
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
        }
        if !(tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tol must be positive, got {tol}")));
        }
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
        if !self.warm {
            self.g.fill(0.0);
        }
        // row-major copy for the row updates
        let ct = c.transpose();
        let mut f_new = vec![0.0; m];
        for i in 0..m {
            self.f[i] = soft_min(ct.column(i).as_slice(), &self.g, &self.ln_w1, eps, &mut self.scratch);
        }
        let mut iterations = 0;
        let mut residual = f64::INFINITY;
        while iterations < max_iter {
            iterations += 1;
            for j in 0..n {
                self.g[j] = soft_min(c.column(j).as_slice(), &self.f, &self.ln_w0, eps, &mut self.scratch);
            }
            residual = 0.0;
            for i in 0..m {
                f_new[i] = soft_min(ct.column(i).as_slice(), &self.g, &self.ln_w1, eps, &mut self.scratch);
                if self.ln_w0[i].is_finite() {
                    residual = residual.max(((self.f[i] - f_new[i]) / eps).exp_m1().abs());
                }
            }
            if !residual.is_finite() {
                break;
            }
            if residual < tol {
                return self.finish(c, eps, iterations, residual);
            }
            std::mem::swap(&mut self.f, &mut f_new);
        }
        self.warm = false;
        Err(Error::SinkhornNotConverged { iterations, residual })
    }

    fn finish(&mut self, c: &DMatrix<f64>, eps: f64, iterations: usize, residual: f64) -> Result<EotSolution> {
        let (m, n) = (self.m0.len(), self.m1.len());
        let w1 = self.m1.weights();
        let shift = pairwise_sum(&self.g.iter().zip(w1).map(|(a, b)| a * b).collect::<Vec<_>>());
        self.g.iter_mut().for_each(|v| *v -= shift);
        self.f.iter_mut().for_each(|u| *u += shift);
        self.warm = true;

        let w0 = self.m0.weights();
        let mut plan = DMatrix::zeros(m, n);
        let mut terms = Vec::with_capacity(m * n);
        for j in 0..n {
            for i in 0..m {
                let r = (self.f[i] + self.g[j] - c[(i, j)]) / eps;
                let p = w0[i] * w1[j] * r.exp();
                plan[(i, j)] = p;
                if p > 0.0 {
                    terms.push(p * (c[(i, j)] + eps * r));
                }
            }
        }
        let value = pairwise_sum(&terms);
        let plan = Coupling::new(plan, self.m0.clone(), self.m1.clone())?;
        Ok(EotSolution {
            plan,
            phi0: self.f.clone(),
            phi1: self.g.clone(),
            value,
            eps,
            iterations,
            residual,
        })
    }
}

/// One-shot Sinkhorn.
pub fn sinkhorn(
    c: &DMatrix<f64>,
    m0: &DiscreteMeasure,
    m1: &DiscreteMeasure,
    eps: f64,
    tol: f64,
    max_iter: usize,
) -> Result<EotSolution> {
    SinkhornSolver::new(m0, m1).solve(c, eps, tol, max_iter)
}

impl EotSolution {
    /// Largest `|Σ_j exp((φ0_i+φ1_j−C_ij)/ε) w1_j − 1|` over rows and the
    /// symmetric column quantity.
    pub fn schrodinger_residual(&self, c: &DMatrix<f64>) -> f64 {
        let w0 = self.plan.source().weights();
        let w1 = self.plan.target().weights();
        let k = |i: usize, j: usize| ((self.phi0[i] + self.phi1[j] - c[(i, j)]) / self.eps).exp();
        let mut worst: f64 = 0.0;
        for i in 0..w0.len() {
            if w0[i] > 0.0 {
                let s: f64 = (0..w1.len()).map(|j| k(i, j) * w1[j]).sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
        for j in 0..w1.len() {
            if w1[j] > 0.0 {
                let s: f64 = (0..w0.len()).map(|i| k(i, j) * w0[i]).sum();
                worst = worst.max((s - 1.0).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot_exact::solve_ot;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn measure(w: Vec<f64>) -> DiscreteMeasure {
        DiscreteMeasure::new((0..w.len()).map(|i| vec![i as f64]).collect(), w).unwrap()
    }

    #[test]
    fn zero_cost_gives_product() {
        let a = measure(vec![0.2, 0.3, 0.5]);
        let b = measure(vec![0.6, 0.4]);
        for eps in [0.1, 1.0, 7.0] {
            let sol = sinkhorn(&DMatrix::zeros(3, 2), &a, &b, eps, 1e-12, 100).unwrap();
            for i in 0..3 {
                for j in 0..2 {
                    assert_abs_diff_eq!(sol.plan.plan()[(i, j)], a.weights()[i] * b.weights()[j], epsilon = 1e-16);
                }
            }
            assert_abs_diff_eq!(sol.value, 0.0, epsilon = 1e-15);
            assert!(sol.phi0.iter().chain(&sol.phi1).all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn one_by_one() {
        let d = measure(vec![1.0]);
        let sol = sinkhorn(&DMatrix::from_element(1, 1, -2.5), &d, &d, 0.3, 1e-12, 10).unwrap();
        assert_eq!(sol.plan.plan()[(0, 0)], 1.0);
        assert_abs_diff_eq!(sol.value, -2.5, epsilon = 1e-14);
    }

    #[test]
    fn two_by_two_matches_bisection() {
        // symmetric plan [[a, 1/2-a], [1/2-a, a]]; the cross ratio of the
        // Gibbs kernel fixes a through a^2 / (1/2 - a)^2 = exp(2/eps).
        let eps = 1.0;
        let target = (2.0_f64 / eps).exp();
        let (mut lo, mut hi) = (0.25, 0.5 - 1e-300);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid / ((0.5 - mid) * (0.5 - mid)) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let u = measure(vec![0.5, 0.5]);
        let c = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let sol = sinkhorn(&c, &u, &u, eps, 1e-13, 1000).unwrap();
        assert_abs_diff_eq!(sol.plan.plan()[(0, 0)], lo, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.plan.plan()[(1, 1)], lo, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.plan.plan()[(0, 1)], 0.5 - lo, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_eps() {
        let u = measure(vec![0.5, 0.5]);
        assert!(sinkhorn(&DMatrix::zeros(2, 2), &u, &u, 0.0, 1e-9, 10).is_err());
        assert!(sinkhorn(&DMatrix::zeros(2, 2), &u, &u, -1.0, 1e-9, 10).is_err());
    }

    #[test]
    fn non_convergence_reports_residual() {
        let u = measure(vec![0.25; 4]);
        let c = DMatrix::from_row_slice(4, 4, &[0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 2.0, 1.5, 0.3, 0.7, 0.0, 2.0, 1.0, 1.0, 1.0, 0.1]);
        match sinkhorn(&c, &u, &u, 0.5, 1e-14, 2) {
            Err(Error::SinkhornNotConverged { iterations, residual }) => {
                assert_eq!(iterations, 2);
                assert!(residual.is_finite());
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn value_decreases_with_eps_and_bounds_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = measure(vec![0.1, 0.4, 0.2, 0.3]);
        let b = measure(vec![0.25, 0.25, 0.5]);
        let c = DMatrix::from_fn(4, 3, |_, _| rng.random_range(-2.0..2.0));
        let exact = solve_ot(&c, &a, &b).unwrap().value;
        let mut prev = f64::INFINITY;
        for eps in [4.0, 2.0, 1.0, 0.5] {
            let v = sinkhorn(&c, &a, &b, eps, 1e-12, DEFAULT_MAX_ITER).unwrap().value;
            assert!(v <= prev + 1e-12);
            assert!(v >= exact - 1e-12);
            prev = v;
        }
    }

    #[test]
    fn large_costs_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = measure(vec![0.2; 5]);
        let c = DMatrix::from_fn(5, 5, |_, _| rng.random_range(-1e6..1e6));
        match sinkhorn(&c, &a, &a, 1e-3, 1e-9, 5000) {
            Ok(sol) => assert!(sol.plan.plan().iter().all(|p| p.is_finite())),
            Err(Error::SinkhornNotConverged { residual, .. }) => assert!(residual.is_finite()),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn random_instances_meet_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let m = rng.random_range(1..8);
            let n = rng.random_range(1..8);
            let norm = |k: usize, rng: &mut ChaCha8Rng| {
                let r: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
                let s: f64 = r.iter().sum();
                let mut w: Vec<f64> = r.iter().map(|x| x / s).collect();
                let t: f64 = w.iter().sum();
                w[0] += 1.0 - t;
                w
            };
            let a = measure(norm(m, &mut rng));
            let b = measure(norm(n, &mut rng));
            let c = DMatrix::from_fn(m, n, |_, _| rng.random_range(-5.0..5.0));
            let eps = rng.random_range(0.2..3.0);
            let sol = sinkhorn(&c, &a, &b, eps, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
            assert!(sol.schrodinger_residual(&c) < 1e-9);
            assert!(sol.plan.marginal_residual() < 1e-9);
            let s: f64 = sol.phi1.iter().zip(b.weights()).map(|(x, y)| x * y).sum();
            assert!(s.abs() < 1e-12);
        }
    }
}
