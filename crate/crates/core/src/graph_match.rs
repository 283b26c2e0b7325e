//! Starting points for the GW solver on embedded graph models: exhaustive
//! search over coordinate permutations, and the Birkhoff relaxation of graph
//! matching with its equivalence certificate.
//!
//! Permutation convention: `σ` relates two models when `ρ1_ij = ρ0_{σ(i)σ(j)}`,
//! equivalently `P1 = E P0 Eᵀ` with `E[i, σ(i)] = 1`, and the embedded
//! measures satisfy `μ1 = μ0.permute_axes(σ)`.

use itertools::Itertools;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph_model::{check_permutation, edge_prob_matrix, GraphDistribution};
use crate::gw_solver::{subgradient_method, GwProblem, SolveReport};
use crate::measures::DiscreteMeasure;
use crate::ot_exact::linear_assignment;

pub const EXHAUSTIVE_CAP: usize = 8;
pub const FW_GAP_TOL: f64 = 1e-8;
pub const FW_MAX_ITER: usize = 5000;

/// `½ Σ w x (σ·x)ᵀ` with `(σ·x)_i = x_{σ(i)}`.
pub fn warm_start_matrix(mu0_centered: &DiscreteMeasure, sigma: &[usize]) -> Result<DMatrix<f64>> {
    let n = mu0_centered.dim();
    if sigma.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "permutation of length {} for dimension {n}",
            sigma.len()
        )));
    }
    check_permutation(sigma, n)?;
    let mut a = DMatrix::zeros(n, n);
    for (x, &w) in mu0_centered.points().zip(mu0_centered.weights()) {
        for p in 0..n {
            let wx = 0.5 * w * x[p];
            if wx == 0.0 {
                continue;
            }
            for q in 0..n {
                a[(p, q)] += wx * x[sigma[q]];
            }
        }
    }
    Ok(a)
}

/// Output of [`exhaustive_search`].
#[derive(Debug, Clone)]
pub struct ExhaustiveResult {
    pub value: f64,
    pub best_sigma: Vec<usize>,
    pub report: SolveReport,
    /// All permutations in lexicographic order.
    pub sigmas: Vec<Vec<usize>>,
    /// Final value of the run started at each entry of `sigmas`.
    pub values: Vec<f64>,
}

impl ExhaustiveResult {
    /// `min_{σ≠σ*} Λ_σ / Λ_σ*`, infinite when the best value is zero.
    pub fn gap_ratio(&self) -> f64 {
        let best = self.value;
        let second = self
            .sigmas
            .iter()
            .zip(&self.values)
            .filter(|(s, _)| **s != self.best_sigma)
            .map(|(_, &v)| v)
            .fold(f64::INFINITY, f64::min);
        if best <= 0.0 {
            f64::INFINITY
        } else {
            second / best
        }
    }
}

/// Run the subgradient method from `A_σ` for all `N!` permutations of the
/// axes (`N ≤ 8`) and keep the smallest value. Ties go to the
/// lexicographically first permutation.
pub fn exhaustive_search(mu0n: &DiscreteMeasure, mu1n: &DiscreteMeasure) -> Result<ExhaustiveResult> {
    exhaustive_search_problem(&GwProblem::new(mu0n, mu1n), EXHAUSTIVE_CAP)
}

pub fn exhaustive_search_problem(prob: &GwProblem, cap: usize) -> Result<ExhaustiveResult> {
    let (d0, d1) = prob.dims();
    if d0 != d1 {
        return Err(Error::DimensionMismatch(format!("embedded dimensions {d0} and {d1} differ")));
    }
    if d0 > cap {
        return Err(Error::ExhaustiveCapExceeded { n: d0, cap });
    }
    let sigmas: Vec<Vec<usize>> = (0..d0).permutations(d0).collect();
    let values = sigmas
        .par_iter()
        .map(|s| {
            let a0 = warm_start_matrix(prob.mu0(), s)?;
            Ok(subgradient_method(prob, &a0)?.value)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    // reports are large; rerun the winner instead of keeping all of them
    let report = subgradient_method(prob, &warm_start_matrix(prob.mu0(), &sigmas[best])?)?;
    Ok(ExhaustiveResult {
        value: report.value,
        best_sigma: sigmas[best].clone(),
        report,
        sigmas,
        values,
    })
}

fn residual_op(r: &DMatrix<f64>, p0: &DMatrix<f64>, p1: &DMatrix<f64>) -> DMatrix<f64> {
    r * p0 - p1 * r
}

/// `‖R P0 − P1 R‖_F`.
pub fn matching_residual(r: &DMatrix<f64>, p0: &DMatrix<f64>, p1: &DMatrix<f64>) -> f64 {
    residual_op(r, p0, p1).norm()
}

/// Permutation matrix with `E[i, σ(i)] = 1`.
pub fn permutation_matrix(sigma: &[usize]) -> DMatrix<f64> {
    let n = sigma.len();
    let mut e = DMatrix::zeros(n, n);
    for (i, &s) in sigma.iter().enumerate() {
        e[(i, s)] = 1.0;
    }
    e
}

fn check_square(p0: &DMatrix<f64>, p1: &DMatrix<f64>) -> Result<usize> {
    let n = p0.nrows();
    if p0.ncols() != n || p1.nrows() != n || p1.ncols() != n || n == 0 {
        return Err(Error::DimensionMismatch(format!(
            "matching needs two square matrices of equal size, got {}x{} and {}x{}",
            p0.nrows(),
            p0.ncols(),
            p1.nrows(),
            p1.ncols()
        )));
    }
    Ok(n)
}

/// Minimizer of `‖R P0 − P1 R‖²_F` over doubly stochastic `R`.
///
/// Away-step Frank-Wolfe with exact line search, started at the uniform
/// matrix written as the average of the `N` cyclic shifts. Stops when the
/// duality gap drops below `1e-8` or after 5000 iterations and returns the
/// best iterate seen.
pub fn birkhoff_relaxation(p0: &DMatrix<f64>, p1: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = check_square(p0, p1)?;
    let obj = |r: &DMatrix<f64>| residual_op(r, p0, p1).norm_squared();

    let mut active: Vec<(Vec<usize>, f64)> = (0..n)
        .map(|s| ((0..n).map(|i| (i + s) % n).collect(), 1.0 / n as f64))
        .collect();
    let mut r = DMatrix::from_element(n, n, 1.0 / n as f64);
    let mut best = (obj(&r), r.clone());

    for _ in 0..FW_MAX_ITER {
        let lr = residual_op(&r, p0, p1);
        let grad = (&lr * p0.transpose() - p1.transpose() * &lr) * 2.0;
        let inner = |s: &[usize]| s.iter().enumerate().map(|(i, &j)| grad[(i, j)]).sum::<f64>();
        let g_r = grad.dot(&r);

        let fw = linear_assignment(&(-&grad))?;
        let fw_gap = g_r - inner(&fw);
        if fw_gap < FW_GAP_TOL {
            break;
        }
        let (away_idx, away_val) = active
            .iter()
            .enumerate()
            .map(|(k, (s, _))| (k, inner(s)))
            .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
        let away_gap = away_val - g_r;

        let (dir, gamma_max, is_fw) = if fw_gap >= away_gap {
            (permutation_matrix(&fw) - &r, 1.0, true)
        } else {
            let a = active[away_idx].1;
            (&r - permutation_matrix(&active[away_idx].0), a / (1.0 - a), false)
        };
        let ld = residual_op(&dir, p0, p1);
        let curv = ld.norm_squared();
        let slope = lr.dot(&ld);
        let mut gamma = if curv > 0.0 { -slope / curv } else { gamma_max };
        gamma = gamma.clamp(0.0, gamma_max);
        if gamma == 0.0 {
            break;
        }

        if is_fw {
            for (_, w) in active.iter_mut() {
                *w *= 1.0 - gamma;
            }
            match active.iter_mut().find(|(s, _)| *s == fw) {
                Some((_, w)) => *w += gamma,
                None => active.push((fw, gamma)),
            }
            if gamma == 1.0 {
                active.retain(|(_, w)| *w == gamma);
            }
        } else {
            for (_, w) in active.iter_mut() {
                *w *= 1.0 + gamma;
            }
            active[away_idx].1 -= gamma;
            if gamma == gamma_max {
                active.remove(away_idx);
            }
        }
        active.retain(|(_, w)| *w > 0.0);
        r += &dir * gamma;

        let f = obj(&r);
        if f < best.0 {
            best = (f, r.clone());
        }
    }
    Ok(best.1)
}

/// Spectral sufficient condition for the relaxation to be tight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub delta: f64,
    pub epsilon: f64,
    pub threshold: f64,
    pub holds: bool,
}

/// `threshold = δ² ε⁴ / (12 N^1.5)`.
pub fn certificate_threshold(delta: f64, epsilon: f64, n: usize) -> f64 {
    delta * delta * epsilon.powi(4) / (12.0 * (n as f64).powf(1.5))
}

/// `δ` (smallest eigen-gap) and `ε` (smallest of `v·1` and `1/(v·1)` over
/// unit eigenvectors with `v·1 ≥ 0`) of a symmetric matrix.
pub fn spectral_constants(p0: &DMatrix<f64>) -> (f64, f64) {
    let n = p0.nrows();
    let eig = p0.clone().symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    let delta = vals.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let mut epsilon = f64::INFINITY;
    for k in 0..n {
        let s: f64 = eig.eigenvectors.column(k).sum().abs();
        epsilon = epsilon.min(s.min(1.0 / s));
    }
    let delta = if delta.is_finite() { delta } else { 0.0 };
    (delta, epsilon.min(1.0))
}

/// Result of relaxed matching.
#[derive(Debug, Clone)]
pub struct MatchResult {
    pub permutation: Vec<usize>,
    pub relaxed_matrix: DMatrix<f64>,
    pub relaxed_residual: f64,
    pub projected_residual: f64,
    pub certificate: Certificate,
}

/// Both matrices divided by the spectral radius of `p0` (left alone when
/// that radius is zero).
pub fn normalize_pair(p0: &DMatrix<f64>, p1: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let rho = p0
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if rho > 0.0 {
        (p0 / rho, p1 / rho)
    } else {
        (p0.clone(), p1.clone())
    }
}

/// Relaxed matching on two symmetric matrices: relax, project with the
/// assignment solver, evaluate the certificate on normalized inputs.
pub fn match_matrices(p0: &DMatrix<f64>, p1: &DMatrix<f64>) -> Result<MatchResult> {
    let n = check_square(p0, p1)?;
    let (q0, q1) = normalize_pair(p0, p1);
    let r = birkhoff_relaxation(&q0, &q1)?;
    let sigma = linear_assignment(&r)?;
    let relaxed_residual = matching_residual(&r, &q0, &q1);
    let projected_residual = matching_residual(&permutation_matrix(&sigma), &q0, &q1);
    let (delta, epsilon) = spectral_constants(&q0);
    let threshold = certificate_threshold(delta, epsilon, n);
    Ok(MatchResult {
        permutation: sigma,
        relaxed_matrix: r,
        relaxed_residual,
        projected_residual,
        certificate: Certificate {
            delta,
            epsilon,
            threshold,
            holds: projected_residual < threshold,
        },
    })
}

/// Relaxed matching of two binary models followed by one subgradient run
/// from the matched warm start.
pub fn relaxed_graph_matching(
    mu0n: &DiscreteMeasure,
    mu1n: &DiscreteMeasure,
    gd0n: &GraphDistribution,
    gd1n: &GraphDistribution,
) -> Result<(SolveReport, MatchResult)> {
    relaxed_matching_problem(&GwProblem::new(mu0n, mu1n), gd0n, gd1n)
}

pub fn relaxed_matching_problem(
    prob: &GwProblem,
    gd0n: &GraphDistribution,
    gd1n: &GraphDistribution,
) -> Result<(SolveReport, MatchResult)> {
    if gd0n.n_vertices() != gd1n.n_vertices() {
        return Err(Error::DimensionMismatch("models have different vertex counts".into()));
    }
    let m = match_matrices(&edge_prob_matrix(gd0n)?, &edge_prob_matrix(gd1n)?)?;
    let a0 = warm_start_matrix(prob.mu0(), &m.permutation)?;
    let report = subgradient_method(prob, &a0)?;
    Ok((report, m))
}
