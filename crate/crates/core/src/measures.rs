//! Finitely supported measures, couplings, and the closed-form pieces of the
//! variational decomposition of the quadratic GW distance (moments, centering,
//! the constant term `S1`, and the direct quadratic objective).

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance on `sum(weights) == 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Tolerance on coupling marginals (infinity norm).
pub const MARGINAL_TOL: f64 = 1e-9;
/// Plan entries at or above this negative value are clamped to zero.
pub const NEGATIVE_CLAMP: f64 = -1e-15;

/// Pairwise (tree) summation. Error grows like `O(log n)` instead of `O(n)`.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[derive(Debug, PartialEq)]
struct MeasureData {
    dim: usize,
    /// Row-major `len x dim`.
    points: Vec<f64>,
    weights: Vec<f64>,
}

/// A finitely supported probability measure on `R^d`.
///
/// Support points are pairwise distinct: duplicates passed to the
/// constructors are merged and their weights added. Cloning is cheap.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    inner: Arc<MeasureData>,
}

fn point_key(p: &[f64]) -> Vec<u64> {
    // -0.0 and 0.0 are the same point.
    p.iter().map(|&x| (x + 0.0).to_bits()).collect()
}

impl DiscreteMeasure {
    /// Build from a list of points and weights, merging duplicate points.
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        let dim = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidMeasure("measure needs at least one point".into()))?;
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidMeasure("points have inconsistent dimensions".into()));
        }
        let flat: Vec<f64> = points.into_iter().flatten().collect();
        Self::from_flat(dim, flat, weights)
    }

    /// Build from row-major coordinates.
    pub fn from_flat(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMeasure("dimension must be at least 1".into()));
        }
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("measure needs at least one point".into()));
        }
        if points.len() != dim * weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} coordinates do not match {} weights in dimension {}",
                points.len(),
                weights.len(),
                dim
            )));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMeasure("non-finite coordinate".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidMeasure("weights must be finite and nonnegative".into()));
        }
        let total = pairwise_sum(&weights);
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total:.17} instead of 1"
            )));
        }

        let mut index: HashMap<Vec<u64>, usize> = HashMap::with_capacity(weights.len());
        let mut merged_pts = Vec::with_capacity(points.len());
        let mut merged_w: Vec<f64> = Vec::with_capacity(weights.len());
        for (p, &w) in points.chunks_exact(dim).zip(&weights) {
            match index.get(&point_key(p)) {
                Some(&k) => merged_w[k] += w,
                None => {
                    index.insert(point_key(p), merged_w.len());
                    merged_pts.extend(p.iter().map(|&x| x + 0.0));
                    merged_w.push(w);
                }
            }
        }
        Ok(Self::from_parts(dim, merged_pts, merged_w))
    }

    fn from_parts(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> Self {
        DiscreteMeasure {
            inner: Arc::new(MeasureData {
                dim,
                points,
                weights,
            }),
        }
    }

    /// Uniform measure on the given points (duplicates merged).
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n as f64; n])
    }

    /// Point mass at `point`.
    pub fn dirac(point: Vec<f64>) -> Result<Self> {
        Self::new(vec![point], vec![1.0])
    }

    /// Uniform measure on scalar atoms.
    pub fn uniform_1d(atoms: &[f64]) -> Result<Self> {
        Self::uniform(atoms.iter().map(|&a| vec![a]).collect())
    }

    pub fn len(&self) -> usize {
        self.inner.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let d = self.inner.dim;
        &self.inner.points[i * d..(i + 1) * d]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.inner.points.chunks_exact(self.inner.dim)
    }

    /// Row-major coordinates.
    pub fn points_flat(&self) -> &[f64] {
        &self.inner.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.inner.weights
    }

    pub fn is_point_mass(&self) -> bool {
        self.len() == 1 || self.weights().iter().filter(|&&w| w > 0.0).count() == 1
    }

    /// Index of `p` in the support, if present.
    pub fn find(&self, p: &[f64]) -> Option<usize> {
        let key = point_key(p);
        self.points().position(|q| point_key(q) == key)
    }

    /// Drop atoms with weight below `threshold` and renormalize.
    pub fn prune(&self, threshold: f64) -> Result<Self> {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.weights()[i] >= threshold)
            .collect();
        if keep.is_empty() {
            return Err(Error::InvalidMeasure("pruning removed every atom".into()));
        }
        let kept: Vec<f64> = keep.iter().map(|&i| self.weights()[i]).collect();
        let total = pairwise_sum(&kept);
        let pts = keep
            .iter()
            .flat_map(|&i| self.point(i).iter().copied())
            .collect();
        let w = kept.iter().map(|x| x / total).collect();
        Self::from_flat(self.dim(), pts, w)
    }

    /// Pushforward under `f`, merging points that collide.
    pub fn map_points<F>(&self, out_dim: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(&[f64]) -> Vec<f64>,
    {
        let mut pts = Vec::with_capacity(self.len() * out_dim);
        for p in self.points() {
            let q = f(p);
            if q.len() != out_dim {
                return Err(Error::DimensionMismatch(format!(
                    "map produced a point of dimension {} (expected {out_dim})",
                    q.len()
                )));
            }
            pts.extend(q);
        }
        Self::from_flat(out_dim, pts, self.weights().to_vec())
    }

    /// Pushforward under the coordinate permutation `x -> (x[sigma[0]], ..., x[sigma[d-1]])`.
    pub fn permute_axes(&self, sigma: &[usize]) -> Result<Self> {
        if sigma.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "permutation of length {} on dimension {}",
                sigma.len(),
                self.dim()
            )));
        }
        self.map_points(self.dim(), |x| sigma.iter().map(|&s| x[s]).collect())
    }

    /// Same support, new weights (must be a probability vector).
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::from_flat(self.dim(), self.points_flat().to_vec(), weights)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("measure serialization cannot fail")
    }
}

#[derive(Serialize, Deserialize)]
struct MeasureFile {
    #[serde(default = "schema_one")]
    schema: u32,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

fn schema_one() -> u32 {
    1
}

impl Serialize for DiscreteMeasure {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MeasureFile {
            schema: 1,
            points: self.points().map(<[f64]>::to_vec).collect(),
            weights: self.weights().to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DiscreteMeasure {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = MeasureFile::deserialize(d)?;
        if raw.schema != 1 {
            return Err(serde::de::Error::custom(format!(
                "unsupported measure schema {}",
                raw.schema
            )));
        }
        DiscreteMeasure::new(raw.points, raw.weights).map_err(serde::de::Error::custom)
    }
}

/// Joint probability matrix with prescribed marginals.
#[derive(Debug, Clone)]
pub struct Coupling {
    plan: DMatrix<f64>,
    mu0: DiscreteMeasure,
    mu1: DiscreteMeasure,
}

impl Coupling {
    /// Validate marginals (within [`MARGINAL_TOL`]) and clamp tiny negatives.
    pub fn new(mut plan: DMatrix<f64>, mu0: DiscreteMeasure, mu1: DiscreteMeasure) -> Result<Self> {
        if plan.nrows() != mu0.len() || plan.ncols() != mu1.len() {
            return Err(Error::InvalidCoupling(format!(
                "plan is {}x{} but marginals have {} and {} atoms",
                plan.nrows(),
                plan.ncols(),
                mu0.len(),
                mu1.len()
            )));
        }
        for v in plan.iter_mut() {
            if !v.is_finite() {
                return Err(Error::InvalidCoupling("non-finite plan entry".into()));
            }
            if *v < 0.0 {
                if *v < NEGATIVE_CLAMP {
                    return Err(Error::InvalidCoupling(format!("negative plan entry {v:e}")));
                }
                *v = 0.0;
            }
        }
        let resid = marginal_residual(&plan, mu0.weights(), mu1.weights());
        if resid > MARGINAL_TOL {
            return Err(Error::InvalidCoupling(format!(
                "marginal residual {resid:e} exceeds {MARGINAL_TOL:e}"
            )));
        }
        Ok(Coupling { plan, mu0, mu1 })
    }

    /// Independent coupling `mu0 ⊗ mu1`.
    pub fn product(mu0: &DiscreteMeasure, mu1: &DiscreteMeasure) -> Self {
        let plan = DMatrix::from_fn(mu0.len(), mu1.len(), |i, j| {
            mu0.weights()[i] * mu1.weights()[j]
        });
        Coupling {
            plan,
            mu0: mu0.clone(),
            mu1: mu1.clone(),
        }
    }

    pub fn plan(&self) -> &DMatrix<f64> {
        &self.plan
    }

    pub fn source(&self) -> &DiscreteMeasure {
        &self.mu0
    }

    pub fn target(&self) -> &DiscreteMeasure {
        &self.mu1
    }

    /// Infinity-norm marginal violation.
    pub fn marginal_residual(&self) -> f64 {
        marginal_residual(&self.plan, self.mu0.weights(), self.mu1.weights())
    }

    /// `∫ x yᵀ dπ` as a `d0 x d1` matrix.
    pub fn cross_moment(&self) -> DMatrix<f64> {
        let (d0, d1) = (self.mu0.dim(), self.mu1.dim());
        let mut out = DMatrix::zeros(d0, d1);
        for j in 0..self.plan.ncols() {
            let y = self.mu1.point(j);
            for i in 0..self.plan.nrows() {
                let p = self.plan[(i, j)];
                if p == 0.0 {
                    continue;
                }
                let x = self.mu0.point(i);
                for b in 0..d1 {
                    let py = p * y[b];
                    for a in 0..d0 {
                        out[(a, b)] += x[a] * py;
                    }
                }
            }
        }
        out
    }
}

pub(crate) fn marginal_residual(plan: &DMatrix<f64>, w0: &[f64], w1: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, &w) in w0.iter().enumerate() {
        let row: Vec<f64> = plan.row(i).iter().copied().collect();
        worst = worst.max((pairwise_sum(&row) - w).abs());
    }
    for (j, &w) in w1.iter().enumerate() {
        worst = worst.max((pairwise_sum(plan.column(j).as_slice()) - w).abs());
    }
    worst
}

/// Mean, second and fourth moments and the cross-correlation matrix `∫ z zᵀ dρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub mean: Vec<f64>,
    pub m2: f64,
    pub m4: f64,
    pub cross_corr: DMatrix<f64>,
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn sq_dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn mean_of(m: &DiscreteMeasure) -> Vec<f64> {
    let w = m.weights();
    (0..m.dim())
        .map(|a| {
            let terms: Vec<f64> = m.points().zip(w).map(|(p, wi)| wi * p[a]).collect();
            pairwise_sum(&terms)
        })
        .collect()
}

/// Exact weighted moments.
pub fn moments(m: &DiscreteMeasure) -> MomentSummary {
    let w = m.weights();
    let mean = mean_of(m);
    let norms: Vec<f64> = m.points().map(sq_norm).collect();
    let m2_terms: Vec<f64> = norms.iter().zip(w).map(|(n, wi)| wi * n).collect();
    let m4_terms: Vec<f64> = norms.iter().zip(w).map(|(n, wi)| wi * n * n).collect();
    let d = m.dim();
    let mut cross_corr = DMatrix::zeros(d, d);
    let mut terms = vec![0.0; m.len()];
    for a in 0..d {
        for b in a..d {
            for (t, (p, wi)) in terms.iter_mut().zip(m.points().zip(w)) {
                *t = wi * p[a] * p[b];
            }
            let s = pairwise_sum(&terms);
            cross_corr[(a, b)] = s;
            cross_corr[(b, a)] = s;
        }
    }
    MomentSummary {
        mean,
        m2: pairwise_sum(&m2_terms),
        m4: pairwise_sum(&m4_terms),
        cross_corr,
    }
}

/// Translate `m` so its mean is the origin. Weights are unchanged.
pub fn center(m: &DiscreteMeasure) -> DiscreteMeasure {
    let mean = mean_of(m);
    let d = m.dim();
    let pts = m
        .points_flat()
        .iter()
        .enumerate()
        .map(|(k, &x)| x - mean[k % d])
        .collect();
    DiscreteMeasure::from_parts(d, pts, m.weights().to_vec())
}

fn fourth_power_energy(m: &DiscreteMeasure) -> f64 {
    let w = m.weights();
    let rows: Vec<f64> = (0..m.len())
        .map(|i| {
            let xi = m.point(i);
            let terms: Vec<f64> = (0..m.len())
                .map(|k| {
                    let d2 = sq_dist(xi, m.point(k));
                    w[k] * d2 * d2
                })
                .collect();
            w[i] * pairwise_sum(&terms)
        })
        .collect();
    pairwise_sum(&rows)
}

/// The constant term of the variational decomposition:
/// `∫‖x−x′‖⁴ dμ₀⊗μ₀ + ∫‖y−y′‖⁴ dμ₁⊗μ₁ − 4 M₂(μ₀) M₂(μ₁)`.
///
/// Measures are used as given; callers center them first.
pub fn s1(m0: &DiscreteMeasure, m1: &DiscreteMeasure) -> f64 {
    let e0 = fourth_power_energy(m0);
    let e1 = fourth_power_energy(m1);
    e0 + e1 - 4.0 * moments(m0).m2 * moments(m1).m2
}

/// Squared-distortion objective of a coupling,
/// `Σ P_ij P_kl (‖x_i − x_k‖² − ‖y_j − y_l‖²)²`, by direct summation.
///
/// This is the reference `O(N₀² N₁²)` evaluation; at a GW plan it equals the
/// squared GW distance.
pub fn gw_quadratic_value(p: &Coupling) -> f64 {
    let (x, y) = (p.source(), p.target());
    let (n0, n1) = (x.len(), y.len());
    let dx: Vec<f64> = (0..n0 * n0)
        .map(|t| sq_dist(x.point(t / n0), x.point(t % n0)))
        .collect();
    let dy: Vec<f64> = (0..n1 * n1)
        .map(|t| sq_dist(y.point(t / n1), y.point(t % n1)))
        .collect();
    let plan = p.plan();
    let mut outer = Vec::with_capacity(n0 * n1);
    let mut inner = Vec::with_capacity(n0 * n1);
    for i in 0..n0 {
        for j in 0..n1 {
            let pij = plan[(i, j)];
            if pij == 0.0 {
                outer.push(0.0);
                continue;
            }
            inner.clear();
            for k in 0..n0 {
                let a = dx[i * n0 + k];
                for l in 0..n1 {
                    let diff = a - dy[j * n1 + l];
                    inner.push(diff * diff * plan[(k, l)]);
                }
            }
            outer.push(pij * pairwise_sum(&inner));
        }
    }
    pairwise_sum(&outer)
}
