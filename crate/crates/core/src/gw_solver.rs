//! Quadratic and entropic GW through the variational form
//! `D² = S1(μ̄0, μ̄1) + inf_A Φ(A)`, `Φ(A) = 32‖A‖²_F + OT(c_A)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measures::{center, moments, s1, Coupling, DiscreteMeasure};
use crate::ot_entropic::{SinkhornSolver, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::ot_exact::OtSolver;
use crate::rng;

pub const DEFAULT_L: f64 = 128.0;
pub const DEFAULT_GW_TOL: f64 = 1e-7;
pub const DEFAULT_GW_MAX_ITER: usize = 50_000;
pub const DEFAULT_RANDOM_STARTS: usize = 4;

/// Sign in front of the cross-moment term of the subgradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubgradientSign {
    /// `64A − 32∫xyᵀdπ_A`, an element of the Clarke subdifferential.
    #[default]
    Clarke,
    /// `64A + 32∫xyᵀdπ_A`. Kept only for debugging comparisons.
    Plus,
}

/// A GW instance with solver settings. Measures are stored centered.
#[derive(Debug, Clone)]
pub struct GwProblem {
    mu0: DiscreteMeasure,
    mu1: DiscreteMeasure,
    s1: f64,
    pub radius: f64,
    pub eps: f64,
    pub l: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub sign: SubgradientSign,
    pub sinkhorn_tol: f64,
    pub sinkhorn_max_iter: usize,
}

impl GwProblem {
    /// Center both measures and set defaults (`eps = 0`, `L = 128`,
    /// `tol = 1e-7`, radius `½√(M2 M2)`).
    pub fn new(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Self {
        let mu0 = center(mu0);
        let mu1 = center(mu1);
        let radius = 0.5 * (moments(&mu0).m2 * moments(&mu1).m2).sqrt();
        GwProblem {
            s1: s1(&mu0, &mu1),
            mu0,
            mu1,
            radius,
            eps: 0.0,
            l: DEFAULT_L,
            tol: DEFAULT_GW_TOL,
            max_iter: DEFAULT_GW_MAX_ITER,
            sign: SubgradientSign::Clarke,
            sinkhorn_tol: DEFAULT_TOL,
            sinkhorn_max_iter: DEFAULT_MAX_ITER,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_l(mut self, l: f64) -> Self {
        self.l = l;
        self
    }

    pub fn with_sign(mut self, sign: SubgradientSign) -> Self {
        self.sign = sign;
        self
    }

    pub fn mu0(&self) -> &DiscreteMeasure {
        &self.mu0
    }

    pub fn mu1(&self) -> &DiscreteMeasure {
        &self.mu1
    }

    /// `S1(μ̄0, μ̄1)`.
    pub fn s1(&self) -> f64 {
        self.s1
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.mu0.dim(), self.mu1.dim())
    }

    fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidArgument(format!("eps must be nonnegative, got {}", self.eps)));
        }
        if !(self.l > 0.0 && self.tol > 0.0) {
            return Err(Error::InvalidArgument("L and tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    fn check_shape(&self, a: &DMatrix<f64>) -> Result<()> {
        let (d0, d1) = self.dims();
        if a.nrows() != d0 || a.ncols() != d1 {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{}, expected {d0}x{d1}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("A has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Output of one subgradient run.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub a_opt: DMatrix<f64>,
    /// `S1 + phi_value`.
    pub value: f64,
    pub phi_value: f64,
    pub plan: Coupling,
    pub subgrad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

enum Plan {
    Sparse(Vec<(usize, usize, f64)>),
    Dense(DMatrix<f64>),
}

struct Eval {
    phi: f64,
    cross: DMatrix<f64>,
    plan: Plan,
}

enum Backend {
    Exact(OtSolver),
    Entropic(SinkhornSolver),
}

/// Evaluates Φ and the cross moment of the attaining plan, keeping the inner
/// solver warm between calls.
struct Oracle<'a> {
    prob: &'a GwProblem,
    backend: Backend,
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    base: DMatrix<f64>,
}

impl<'a> Oracle<'a> {
    fn new(prob: &'a GwProblem) -> Self {
        let (m0, m1) = (&prob.mu0, &prob.mu1);
        let x = DMatrix::from_row_slice(m0.len(), m0.dim(), m0.points_flat());
        let y = DMatrix::from_row_slice(m1.len(), m1.dim(), m1.points_flat());
        let nx: Vec<f64> = m0.points().map(|p| p.iter().map(|v| v * v).sum()).collect();
        let ny: Vec<f64> = m1.points().map(|p| p.iter().map(|v| v * v).sum()).collect();
        let base = DMatrix::from_fn(m0.len(), m1.len(), |i, j| -4.0 * nx[i] * ny[j]);
        let backend = if prob.eps > 0.0 {
            Backend::Entropic(SinkhornSolver::new(m0, m1))
        } else {
            Backend::Exact(OtSolver::new(m0, m1))
        };
        Oracle {
            prob,
            backend,
            x,
            y,
            base,
        }
    }

    fn eval(&mut self, a: &DMatrix<f64>) -> Result<Eval> {
        let c = &self.base - (&self.x * a * self.y.transpose()) * 32.0;
        let quad = 32.0 * a.norm_squared();
        match &mut self.backend {
            Backend::Exact(solver) => {
                let sol = solver.solve(&c)?;
                let (d0, d1) = self.prob.dims();
                let mut cross = DMatrix::zeros(d0, d1);
                for &(i, j, f) in &sol.cells {
                    if f == 0.0 {
                        continue;
                    }
                    for q in 0..d1 {
                        let fy = f * self.y[(j, q)];
                        for p in 0..d0 {
                            cross[(p, q)] += self.x[(i, p)] * fy;
                        }
                    }
                }
                Ok(Eval {
                    phi: quad + sol.value,
                    cross,
                    plan: Plan::Sparse(sol.cells),
                })
            }
            Backend::Entropic(solver) => {
                let p = self.prob;
                let sol = solver.solve(&c, p.eps, p.sinkhorn_tol, p.sinkhorn_max_iter)?;
                let dense = sol.plan.plan().clone();
                let cross = self.x.transpose() * &dense * &self.y;
                Ok(Eval {
                    phi: quad + sol.value,
                    cross,
                    plan: Plan::Dense(dense),
                })
            }
        }
    }

    fn gradient(&self, a: &DMatrix<f64>, cross: &DMatrix<f64>) -> DMatrix<f64> {
        match self.prob.sign {
            SubgradientSign::Clarke => a * 64.0 - cross * 32.0,
            SubgradientSign::Plus => a * 64.0 + cross * 32.0,
        }
    }

    fn coupling(&self, plan: Plan) -> Result<Coupling> {
        let dense = match plan {
            Plan::Dense(d) => d,
            Plan::Sparse(cells) => {
                let mut d = DMatrix::zeros(self.prob.mu0.len(), self.prob.mu1.len());
                for (i, j, f) in cells {
                    d[(i, j)] += f;
                }
                d
            }
        };
        Coupling::new(dense, self.prob.mu0.clone(), self.prob.mu1.clone())
    }
}

/// `Φ(A)` with the attaining plan.
pub fn phi(prob: &GwProblem, a: &DMatrix<f64>) -> Result<(f64, Coupling)> {
    prob.validate()?;
    prob.check_shape(a)?;
    let mut oracle = Oracle::new(prob);
    let ev = oracle.eval(a)?;
    let plan = oracle.coupling(ev.plan)?;
    Ok((ev.phi, plan))
}

/// Subgradient `64A − 32∫xyᵀdπ_A` (gradient when `eps > 0`).
pub fn subgradient(prob: &GwProblem, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    prob.validate()?;
    prob.check_shape(a)?;
    let mut oracle = Oracle::new(prob);
    let ev = oracle.eval(a)?;
    Ok(oracle.gradient(a, &ev.cross))
}

fn project(m: &mut DMatrix<f64>, r: f64) {
    let nrm = m.norm();
    if nrm > r {
        *m *= r / nrm;
    }
}

/// Accelerated projected subgradient method with steps `β = 1/(2L)`,
/// `γ_k = k/(4L)`, `τ_k = 2/(k+2)`, iterating on the ball of radius
/// `prob.radius`.
///
/// Stops at the first iterate whose subgradient norm is below `tol`. If that
/// never happens within `max_iter` evaluations, the iterate with the smallest
/// `Φ` is reported with `converged = false`.
pub fn subgradient_method(prob: &GwProblem, a0: &DMatrix<f64>) -> Result<SolveReport> {
    prob.validate()?;
    prob.check_shape(a0)?;
    let r = prob.radius;
    let beta = 1.0 / (2.0 * prob.l);
    let mut oracle = Oracle::new(prob);

    let mut c_prev = a0.clone();
    project(&mut c_prev, r);
    let mut a = c_prev.clone();
    let mut ev = oracle.eval(&a)?;
    let mut g = oracle.gradient(&a, &ev.cross);
    let mut k = 1;
    let mut best: Option<(f64, DMatrix<f64>, f64, Eval)> = None;

    loop {
        let gnorm = g.norm();
        if gnorm < prob.tol {
            return Ok(SolveReport {
                value: prob.s1 + ev.phi,
                phi_value: ev.phi,
                plan: oracle.coupling(ev.plan)?,
                a_opt: a,
                subgrad_norm: gnorm,
                iterations: k,
                converged: true,
            });
        }
        if best.as_ref().is_none_or(|b| ev.phi < b.0) {
            best = Some((ev.phi, a.clone(), gnorm, ev));
        }
        if k >= prob.max_iter {
            break;
        }
        let gamma = k as f64 / (4.0 * prob.l);
        let tau = 2.0 / (k as f64 + 2.0);
        let mut b = &a - &g * beta;
        project(&mut b, r);
        let mut c = &c_prev - &g * gamma;
        project(&mut c, r);
        a = &c * tau + &b * (1.0 - tau);
        c_prev = c;
        ev = oracle.eval(&a)?;
        g = oracle.gradient(&a, &ev.cross);
        k += 1;
    }

    let (phi_value, a_opt, subgrad_norm, ev) = best.expect("at least one evaluation");
    Ok(SolveReport {
        value: prob.s1 + phi_value,
        phi_value,
        plan: oracle.coupling(ev.plan)?,
        a_opt,
        subgrad_norm,
        iterations: k,
        converged: false,
    })
}

/// Run the method from every start (in parallel) and return all reports in
/// start order.
pub fn run_starts(prob: &GwProblem, starts: &[DMatrix<f64>]) -> Result<Vec<SolveReport>> {
    if starts.is_empty() {
        return Err(Error::Empty("no starting matrices".into()));
    }
    starts.par_iter().map(|a0| subgradient_method(prob, a0)).collect()
}

/// Index of the smallest value; ties go to the earliest start.
pub fn best_index(reports: &[SolveReport]) -> usize {
    let mut best = 0;
    for (i, r) in reports.iter().enumerate() {
        if r.value < reports[best].value {
            best = i;
        }
    }
    best
}

/// Multi-start squared GW distance (`eps = 0`) or entropic GW (`eps > 0`).
pub fn gw_distance_squared(
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
    eps: f64,
    starts: &[DMatrix<f64>],
) -> Result<SolveReport> {
    let prob = GwProblem::new(mu0, mu1).with_eps(eps);
    solve_problem(&prob, starts)
}

/// Multi-start solve of a configured problem.
pub fn solve_problem(prob: &GwProblem, starts: &[DMatrix<f64>]) -> Result<SolveReport> {
    let mut reports = run_starts(prob, starts)?;
    let i = best_index(&reports);
    Ok(reports.swap_remove(i))
}

/// `eps − 16 √(M4(μ̄0) M4(μ̄1))`.
pub fn entropic_uniqueness_margin(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure, eps: f64) -> f64 {
    let m4a = moments(&center(mu0)).m4;
    let m4b = moments(&center(mu1)).m4;
    eps - 16.0 * (m4a * m4b).sqrt()
}

fn sorted_eigen(sym: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = sym.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let vecs = DMatrix::from_fn(sym.nrows(), idx.len(), |r, c| eig.eigenvectors[(r, idx[c])]);
    (vals, vecs)
}

/// `½ U0 diag(√(λ0 λ1)) U1ᵀ`: aligns the principal axes of the two
/// cross-correlation matrices, eigenvalues in decreasing order.
pub fn cross_start(prob: &GwProblem) -> DMatrix<f64> {
    let (l0, u0) = sorted_eigen(&moments(&prob.mu0).cross_corr);
    let (l1, u1) = sorted_eigen(&moments(&prob.mu1).cross_corr);
    let (d0, d1) = prob.dims();
    let mut a = DMatrix::zeros(d0, d1);
    for k in 0..d0.min(d1) {
        let s = 0.5 * (l0[k] * l1[k]).sqrt();
        a += u0.column(k) * u1.column(k).transpose() * s;
    }
    project(&mut a, prob.radius);
    a
}

/// Uniform random point of the Frobenius ball of radius `r`.
pub fn random_in_ball<R: Rng>(d0: usize, d1: usize, r: f64, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::from_fn(d0, d1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let nrm = m.norm();
    if nrm == 0.0 {
        return DMatrix::zeros(d0, d1);
    }
    let rad = r * rng.random::<f64>().powf(1.0 / (d0 * d1) as f64);
    m *= rad / nrm;
    m
}

/// `k` seeded random starts.
pub fn random_starts(prob: &GwProblem, k: usize, seed: u64) -> Vec<DMatrix<f64>> {
    let (d0, d1) = prob.dims();
    (0..k)
        .map(|i| {
            let mut g = rng::stream(seed, &[rng::tag::STARTS, i as u64]);
            random_in_ball(d0, d1, prob.radius, &mut g)
        })
        .collect()
}

/// Zero, the cross start, and `DEFAULT_RANDOM_STARTS` random points.
pub fn default_starts(prob: &GwProblem, seed: u64) -> Vec<DMatrix<f64>> {
    let (d0, d1) = prob.dims();
    let mut s = vec![DMatrix::zeros(d0, d1), cross_start(prob)];
    s.extend(random_starts(prob, DEFAULT_RANDOM_STARTS, seed));
    s
}
