//! Direct estimator of the null limit law: the polytope
//! `H = {u : u_i − u_j ≤ b_ij, |u_0| ≤ δ}`, Gaussian cost vectors with
//! multinomial covariance, and `√2 · max_{u∈H} cᵀu` per draw.
//!
//! The LP is solved through its dual, an uncapacitated min-cost flow with
//! node supplies `c`. After a shortest-path closure of `b` this is a
//! transport problem between the positive and negative parts of `c`; any
//! imbalance `Σc ≠ 0` leaves through vertex 0 at cost `δ` per unit.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph_model::{Embedding, GraphDistribution};
use crate::measures::{center, moments, DiscreteMeasure};
use crate::ot_exact::OtSolver;
use crate::rng;

pub const DEFAULT_DELTA: f64 = 1.0;
pub const DEFAULT_DRAWS: usize = 200;

/// Feasible set of the limit-law LP.
#[derive(Debug, Clone)]
pub struct NullPolytope {
    /// Centered support, row-major.
    pub support: Vec<f64>,
    pub dim: usize,
    /// Weights of the measure the polytope was built from.
    pub weights: Vec<f64>,
    /// `b[(i, j)]` bounds `u_i − u_j`; zero diagonal.
    pub b: DMatrix<f64>,
    pub delta: f64,
    dist: DMatrix<f64>,
}

fn shortest_paths(b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = b.nrows();
    let mut d = b.clone();
    for k in 0..n {
        for i in 0..n {
            let dik = d[(i, k)];
            for j in 0..n {
                let via = dik + d[(k, j)];
                if via < d[(i, j)] {
                    d[(i, j)] = via;
                }
            }
        }
    }
    d
}

impl NullPolytope {
    /// Polytope from explicit bounds (off-diagonal entries must be positive).
    pub fn from_bounds(b: DMatrix<f64>, delta: f64) -> Result<Self> {
        let n = b.nrows();
        if b.ncols() != n || n < 2 {
            return Err(Error::DegeneratePolytope(format!(
                "bounds must be square with at least 2 points, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && !(b[(i, j)] > 0.0 && b[(i, j)].is_finite()) {
                    return Err(Error::DegeneratePolytope(format!(
                        "b[{i},{j}] = {} is not positive",
                        b[(i, j)]
                    )));
                }
            }
        }
        let mut b = b;
        for i in 0..n {
            b[(i, i)] = 0.0;
        }
        Ok(NullPolytope {
            support: Vec::new(),
            dim: 0,
            weights: vec![1.0 / n as f64; n],
            dist: shortest_paths(&b),
            b,
            delta,
        })
    }

    /// Number of support points `N_n`.
    pub fn len(&self) -> usize {
        self.b.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same polytope with every bound multiplied by `lambda > 0`.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        let mut p = Self::from_bounds(&self.b * lambda, self.delta)?;
        p.support = self.support.clone();
        p.dim = self.dim;
        p.weights = self.weights.clone();
        Ok(p)
    }

    /// Same bounds, different box half-width.
    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
        }
        let mut p = self.clone();
        p.delta = delta;
        Ok(p)
    }

    /// `max cᵀu` over the polytope.
    pub fn lp_value(&self, c: &[f64]) -> Result<f64> {
        let n = self.len();
        if c.len() != n {
            return Err(Error::DimensionMismatch(format!("cost of length {} for {n} points", c.len())));
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(Error::LpFailure {
                message: "non-finite cost".into(),
                cost: c.to_vec(),
            });
        }
        let pos: Vec<usize> = (0..n).filter(|&k| c[k] > 0.0).collect();
        let neg: Vec<usize> = (0..n).filter(|&k| c[k] < 0.0).collect();
        let p: f64 = pos.iter().map(|&k| c[k]).sum();
        let q: f64 = neg.iter().map(|&k| -c[k]).sum();
        let total = p.max(q);
        if total == 0.0 {
            return Ok(0.0);
        }
        let mut supply: Vec<f64> = pos.iter().map(|&k| c[k] / total).collect();
        let mut demand: Vec<f64> = neg.iter().map(|&k| -c[k] / total).collect();
        let mut rows: Vec<Option<usize>> = pos.iter().map(|&k| Some(k)).collect();
        let mut cols: Vec<Option<usize>> = neg.iter().map(|&k| Some(k)).collect();
        // `None` is the ground node reached through vertex 0.
        if p > q {
            demand.push((p - q) / total);
            cols.push(None);
        } else if q > p {
            supply.push((q - p) / total);
            rows.push(None);
        }
        let d = &self.dist;
        let delta = self.delta;
        let cost = DMatrix::from_fn(rows.len(), cols.len(), |r, s| match (rows[r], cols[s]) {
            (Some(i), Some(j)) => d[(i, j)],
            (Some(i), None) => d[(i, 0)] + delta,
            (None, Some(j)) => delta + d[(0, j)],
            (None, None) => 0.0,
        });
        let sol = OtSolver::from_weights(supply, demand)
            .solve(&cost)
            .map_err(|e| Error::LpFailure {
                message: e.to_string(),
                cost: c.to_vec(),
            })?;
        let v = sol.value * total;
        if !v.is_finite() {
            return Err(Error::LpUnbounded(c.to_vec()));
        }
        Ok(v.max(0.0))
    }
}

/// Bounds `b_ij = 2(‖x̄_i‖² − ‖x̄_j‖²)² + 8(x̄_i − x̄_j)ᵀ Σ (x̄_i − x̄_j)` of the
/// centered measure.
pub fn build_polytope(mu: &DiscreteMeasure, delta: f64) -> Result<NullPolytope> {
    if mu.is_point_mass() {
        return Err(Error::DegeneratePolytope("measure is a point mass".into()));
    }
    let c = center(mu);
    let sigma = moments(&c).cross_corr;
    let n = c.len();
    let norms: Vec<f64> = c.points().map(|p| p.iter().map(|v| v * v).sum()).collect();
    let mut b = DMatrix::zeros(n, n);
    let d = c.dim();
    let mut diff = vec![0.0; d];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            for (k, dk) in diff.iter_mut().enumerate() {
                *dk = c.point(i)[k] - c.point(j)[k];
            }
            let mut quad = 0.0;
            for a in 0..d {
                for e in 0..d {
                    quad += diff[a] * sigma[(a, e)] * diff[e];
                }
            }
            let nd = norms[i] - norms[j];
            b[(i, j)] = 2.0 * nd * nd + 8.0 * quad;
        }
    }
    let mut poly = NullPolytope::from_bounds(b, delta)?;
    poly.support = c.points_flat().to_vec();
    poly.dim = d;
    poly.weights = c.weights().to_vec();
    Ok(poly)
}

/// One multinomial block: probability vector and, for each entry, the two
/// support indices it is added to.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBlock {
    pub probs: Vec<f64>,
    pub rows: Vec<(usize, usize)>,
}

/// Law of the Gaussian cost vector.
#[derive(Debug, Clone, PartialEq)]
pub enum CostGaussianSpec {
    /// `N(0, diag(m) − mmᵀ)`.
    Plain { m: Vec<f64> },
    /// Independent multinomial blocks, one per edge, mapped onto the
    /// embedded support and scaled by `scale`.
    GraphBlock { len: usize, scale: f64, blocks: Vec<CostBlock> },
}

impl CostGaussianSpec {
    pub fn plain(mu: &DiscreteMeasure) -> Self {
        CostGaussianSpec::Plain { m: mu.weights().to_vec() }
    }

    /// Block structure of an embedded graph model, scale `1/((N−1)N(N+1))`.
    pub fn graph_block(gd: &GraphDistribution, emb: &Embedding) -> Result<Self> {
        let n = gd.n_vertices() as f64;
        let len = emb.measure.len();
        if emb.atom_index.len() != gd.edges().len() {
            return Err(Error::InvalidArgument("embedding does not match the model".into()));
        }
        let blocks = gd
            .edges()
            .iter()
            .zip(&emb.atom_index)
            .map(|(law, rows)| {
                if rows.len() != law.len() || rows.iter().any(|&(a, b)| a >= len || b >= len) {
                    return Err(Error::InvalidArgument("evaluation map out of range".into()));
                }
                Ok(CostBlock {
                    probs: law.weights().to_vec(),
                    rows: rows.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CostGaussianSpec::GraphBlock {
            len,
            scale: 1.0 / ((n - 1.0) * n * (n + 1.0)),
            blocks,
        })
    }

    pub fn len(&self) -> usize {
        match self {
            CostGaussianSpec::Plain { m } => m.len(),
            CostGaussianSpec::GraphBlock { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Covariance matrix implied by the spec.
    pub fn covariance(&self) -> DMatrix<f64> {
        match self {
            CostGaussianSpec::Plain { m } => multinomial_cov(m),
            CostGaussianSpec::GraphBlock { len, scale, blocks } => {
                let mut e = DMatrix::zeros(*len, 0);
                let mut cov_blocks = Vec::new();
                for b in blocks {
                    let cols = e.ncols();
                    e = e.resize_horizontally(cols + b.probs.len(), 0.0);
                    for (k, &(r0, r1)) in b.rows.iter().enumerate() {
                        e[(r0, cols + k)] += scale;
                        e[(r1, cols + k)] += scale;
                    }
                    cov_blocks.push(multinomial_cov(&b.probs));
                }
                let total = e.ncols();
                let mut big = DMatrix::zeros(total, total);
                let mut off = 0;
                for c in cov_blocks {
                    let k = c.nrows();
                    big.view_mut((off, off), (k, k)).copy_from(&c);
                    off += k;
                }
                &e * big * e.transpose()
            }
        }
    }
}

fn multinomial_cov(m: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(m.len(), m.len(), |i, j| if i == j { m[i] * (1.0 - m[i]) } else { -m[i] * m[j] })
}

/// `diag(√m)(W − (sᵀW)s)` with `s = √m`, `W` standard normal.
fn multinomial_draw<R: Rng>(m: &[f64], rng: &mut R, out: &mut Vec<f64>) {
    out.clear();
    let mut proj = 0.0;
    for &mi in m {
        let w: f64 = rng.sample(StandardNormal);
        proj += mi.sqrt() * w;
        out.push(w);
    }
    for (z, &mi) in out.iter_mut().zip(m) {
        let s = mi.sqrt();
        *z = s * (*z - proj * s);
    }
}

/// One Gaussian cost vector.
pub fn sample_cost<R: Rng>(spec: &CostGaussianSpec, rng: &mut R) -> Vec<f64> {
    match spec {
        CostGaussianSpec::Plain { m } => {
            let mut z = Vec::with_capacity(m.len());
            multinomial_draw(m, rng, &mut z);
            z
        }
        CostGaussianSpec::GraphBlock { len, scale, blocks } => {
            let mut c = vec![0.0; *len];
            let mut z = Vec::new();
            for b in blocks {
                multinomial_draw(&b.probs, rng, &mut z);
                for (&zk, &(r0, r1)) in z.iter().zip(&b.rows) {
                    c[r0] += scale * zk;
                    c[r1] += scale * zk;
                }
            }
            c
        }
    }
}

/// `√2 · max_{u∈H} cᵀu` for one cost vector.
pub fn limit_draw(poly: &NullPolytope, c: &[f64]) -> Result<f64> {
    Ok(std::f64::consts::SQRT_2 * poly.lp_value(c)?)
}

/// `k` independent draws. Draw `d` uses the stream `(seed, d)`, so results
/// do not depend on scheduling.
pub fn sample_ln(poly: &NullPolytope, spec: &CostGaussianSpec, k: usize, seed: u64) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::InvalidArgument("at least one draw required".into()));
    }
    if spec.len() != poly.len() {
        return Err(Error::DimensionMismatch(format!(
            "cost law on {} points, polytope on {}",
            spec.len(),
            poly.len()
        )));
    }
    (0..k)
        .into_par_iter()
        .map(|d| {
            let mut g = rng::stream(seed, &[rng::tag::LIMIT_DRAW, d as u64]);
            limit_draw(poly, &sample_cost(spec, &mut g))
        })
        .collect()
}

/// Empirical quantile, higher convention: the sorted sample at index
/// `⌈level·(n−1)⌉`.
pub fn quantile(samples: &[f64], level: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::InvalidArgument(format!("quantile level {level} outside [0, 1]")));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let x = level * (s.len() - 1) as f64;
    let idx = if (x - x.round()).abs() < 1e-9 { x.round() } else { x.ceil() };
    Ok(s[idx as usize])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn u(atoms: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::uniform_1d(atoms).unwrap()
    }

    #[test]
    fn polytope_examples() {
        let p = build_polytope(&u(&[-1.0, 1.0]), 1.0).unwrap();
        assert_eq!(p.b[(0, 1)], 32.0);
        assert_eq!(p.b[(1, 0)], 32.0);

        // equal norms, Σ = c I with c = 1/2
        let m = DiscreteMeasure::uniform(vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]).unwrap();
        let p = build_polytope(&m, 1.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    let d2: f64 = (0..2).map(|k| (m.point(i)[k] - m.point(j)[k]).powi(2)).sum();
                    assert_abs_diff_eq!(p.b[(i, j)], 8.0 * 0.5 * d2, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn polytope_matches_direct_formula() {
        let m = DiscreteMeasure::new(vec![vec![0.0], vec![1.0], vec![3.0]], vec![0.5, 0.25, 0.25]).unwrap();
        let p = build_polytope(&m, 1.0).unwrap();
        // mean 1, centered atoms -1, 0, 2; Σ = 0.5 + 0 + 1 = 1.5
        let x = [-1.0f64, 0.0, 2.0];
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    let expect = 2.0 * (x[i] * x[i] - x[j] * x[j]).powi(2) + 8.0 * 1.5 * (x[i] - x[j]).powi(2);
                    assert_abs_diff_eq!(p.b[(i, j)], expect, epsilon = 1e-13);
                    assert_eq!(p.b[(i, j)], p.b[(j, i)]);
                }
            }
        }
    }

    #[test]
    fn point_mass_is_degenerate() {
        let d = DiscreteMeasure::dirac(vec![1.0, 2.0]).unwrap();
        assert!(matches!(build_polytope(&d, 1.0), Err(Error::DegeneratePolytope(_))));
    }

    #[test]
    fn plain_cost_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let spec = CostGaussianSpec::Plain { m: vec![1.0] };
        for _ in 0..10 {
            assert_eq!(sample_cost(&spec, &mut rng), vec![0.0]);
        }
        let spec = CostGaussianSpec::Plain { m: vec![0.1, 0.2, 0.3, 0.4] };
        for _ in 0..1000 {
            let z = sample_cost(&spec, &mut rng);
            assert!(z.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    #[test]
    fn two_point_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = CostGaussianSpec::Plain { m: vec![0.5, 0.5] };
        let n = 100_000;
        let mut acc = [0.0; 4];
        for _ in 0..n {
            let z = sample_cost(&spec, &mut rng);
            acc[0] += z[0] * z[0];
            acc[1] += z[0] * z[1];
            acc[2] += z[1] * z[0];
            acc[3] += z[1] * z[1];
        }
        let expect = [0.25, -0.25, -0.25, 0.25];
        for k in 0..4 {
            assert!((acc[k] / n as f64 - expect[k]).abs() < 0.01);
        }
    }

    #[test]
    fn two_point_lp_closed_form() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 3.0, 0.0]);
        for delta in [0.5, 1.0, 10.0] {
            let p = NullPolytope::from_bounds(b.clone(), delta).unwrap();
            for z in [-2.0, -0.5, 0.0, 0.7] {
                assert_abs_diff_eq!(limit_draw(&p, &[z, -z]).unwrap(), std::f64::consts::SQRT_2 * z.abs() * 3.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn unbalanced_cost_uses_box() {
        // c = (1, 0): the optimum pushes u_0 to δ with u_1 free to follow
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 3.0, 3.0, 0.0]);
        let p = NullPolytope::from_bounds(b, 0.5).unwrap();
        assert_abs_diff_eq!(p.lp_value(&[1.0, 0.0]).unwrap(), 0.5, epsilon = 1e-15);
        // c = (0, 1): u_1 ≤ u_0 + 3 ≤ 3.5
        assert_abs_diff_eq!(p.lp_value(&[0.0, 1.0]).unwrap(), 3.5, epsilon = 1e-15);
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5).unwrap(), 3.0);
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 1.0).unwrap(), 4.0);
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.0).unwrap(), 1.0);
        assert!(quantile(&[], 0.5).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let exp: Vec<f64> = (0..200).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        assert!((quantile(&exp, 0.9).unwrap() - 10f64.ln()).abs() < 0.25);
    }

    #[test]
    fn draws_are_reproducible_and_nonnegative() {
        let m = u(&[0.0, 1.0, 3.0, 4.5]);
        let p = build_polytope(&m, DEFAULT_DELTA).unwrap();
        let spec = CostGaussianSpec::plain(&m);
        let a = sample_ln(&p, &spec, 50, 9).unwrap();
        assert_eq!(a, sample_ln(&p, &spec, 50, 9).unwrap());
        assert!(a.iter().all(|&v| v >= 0.0));
        let scaled = sample_ln(&p.scaled(2.5).unwrap(), &spec, 50, 9).unwrap();
        for (x, y) in a.iter().zip(&scaled) {
            assert_abs_diff_eq!(2.5 * x, *y, epsilon = 1e-12 * (1.0 + y.abs()));
        }
    }
}
