//! Independent-edge random graph models, sampling, empirical edge laws and
//! the embedding of a model into a measure on `R^N`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::measures::DiscreteMeasure;
use crate::rng;

/// Position of the unordered pair `{i, j}` (`i != j`) in row-major upper
/// triangular order.
pub fn pair_index(n: usize, i: usize, j: usize) -> usize {
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    a * n - a * (a + 1) / 2 + (b - a - 1)
}

/// All pairs `i < j` in [`pair_index`] order.
pub fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

pub fn check_permutation(sigma: &[usize], n: usize) -> Result<()> {
    let mut seen = vec![false; n];
    if sigma.len() != n {
        return Err(Error::InvalidArgument(format!(
            "permutation has length {}, expected {n}",
            sigma.len()
        )));
    }
    for &s in sigma {
        if s >= n || seen[s] {
            return Err(Error::InvalidArgument(format!("{sigma:?} is not a permutation")));
        }
        seen[s] = true;
    }
    Ok(())
}

/// Inverse permutation.
pub fn invert(sigma: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; sigma.len()];
    for (i, &s) in sigma.iter().enumerate() {
        inv[s] = i;
    }
    inv
}

/// Independent-edge model on `N` vertices: one finitely supported law on
/// `[0, ∞)` per unordered pair.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphDistribution {
    n: usize,
    edges: Vec<DiscreteMeasure>,
}

impl GraphDistribution {
    /// `edges` in [`pair_index`] order.
    pub fn new(n: usize, edges: Vec<DiscreteMeasure>) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGraph(format!("need at least 2 vertices, got {n}")));
        }
        if edges.len() != n * (n - 1) / 2 {
            return Err(Error::InvalidGraph(format!(
                "{} edge laws given, {} pairs expected",
                edges.len(),
                n * (n - 1) / 2
            )));
        }
        for (k, e) in edges.iter().enumerate() {
            if e.dim() != 1 {
                return Err(Error::InvalidGraph(format!("edge law {k} is not one-dimensional")));
            }
            if e.points_flat().iter().any(|&t| t < 0.0) {
                return Err(Error::InvalidGraph(format!("edge law {k} has negative support")));
            }
        }
        Ok(GraphDistribution { n, edges })
    }

    /// Binary model with `P(edge {i,j}) = p[i][j]` (upper triangle read).
    /// Zero-probability outcomes are left out of the support.
    pub fn bernoulli(p: &DMatrix<f64>) -> Result<Self> {
        let n = p.nrows();
        if p.ncols() != n {
            return Err(Error::InvalidGraph("probability matrix is not square".into()));
        }
        let edges = pairs(n)
            .map(|(i, j)| bernoulli_law(p[(i, j)]))
            .collect::<Result<Vec<_>>>()?;
        Self::new(n, edges)
    }

    /// Binary model with i.i.d. `U[0,1]` edge probabilities.
    pub fn random_bernoulli<R: Rng>(n: usize, rng: &mut R) -> Result<Self> {
        let mut p = DMatrix::zeros(n, n);
        for (i, j) in pairs(n) {
            let v = rng.random::<f64>();
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
        Self::bernoulli(&p)
    }

    pub fn n_vertices(&self) -> usize {
        self.n
    }

    pub fn edge(&self, i: usize, j: usize) -> &DiscreteMeasure {
        &self.edges[pair_index(self.n, i, j)]
    }

    /// Edge laws in [`pair_index`] order.
    pub fn edges(&self) -> &[DiscreteMeasure] {
        &self.edges
    }

    /// Replace one edge law.
    pub fn with_edge(&self, i: usize, j: usize, law: DiscreteMeasure) -> Result<Self> {
        if i == j || i >= self.n || j >= self.n {
            return Err(Error::InvalidGraph(format!("no edge {{{i}, {j}}}")));
        }
        let mut edges = self.edges.clone();
        edges[pair_index(self.n, i, j)] = law;
        Self::new(self.n, edges)
    }

    /// True when every edge law is a point mass.
    pub fn is_deterministic(&self) -> bool {
        self.edges.iter().all(DiscreteMeasure::is_point_mass)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serialization cannot fail")
    }
}

/// Law on `{0, 1}` with `P(1) = p`, omitting zero-probability atoms.
pub fn bernoulli_law(p: f64) -> Result<DiscreteMeasure> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidGraph(format!("edge probability {p} outside [0, 1]")));
    }
    if p == 0.0 {
        DiscreteMeasure::dirac(vec![0.0])
    } else if p == 1.0 {
        DiscreteMeasure::dirac(vec![1.0])
    } else {
        DiscreteMeasure::new(vec![vec![0.0], vec![1.0]], vec![1.0 - p, p])
    }
}

#[derive(Serialize, Deserialize)]
struct EdgeRecord {
    i: usize,
    j: usize,
    support: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(default = "schema_one")]
    schema: u32,
    n: usize,
    edges: Vec<EdgeRecord>,
}

fn schema_one() -> u32 {
    1
}

impl Serialize for GraphDistribution {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let edges = pairs(self.n)
            .map(|(i, j)| {
                let e = self.edge(i, j);
                EdgeRecord {
                    i,
                    j,
                    support: e.points_flat().to_vec(),
                    probs: e.weights().to_vec(),
                }
            })
            .collect();
        ModelFile {
            schema: 1,
            n: self.n,
            edges,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GraphDistribution {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = ModelFile::deserialize(d)?;
        if raw.schema != 1 {
            return Err(D::Error::custom(format!("unsupported model schema {}", raw.schema)));
        }
        let n = raw.n;
        if n < 2 {
            return Err(D::Error::custom("need at least 2 vertices"));
        }
        let mut slots: Vec<Option<DiscreteMeasure>> = vec![None; n * (n - 1) / 2];
        for e in raw.edges {
            if e.i == e.j || e.i >= n || e.j >= n {
                return Err(D::Error::custom(format!("invalid edge ({}, {})", e.i, e.j)));
            }
            let k = pair_index(n, e.i, e.j);
            if slots[k].is_some() {
                return Err(D::Error::custom(format!("edge ({}, {}) given twice", e.i, e.j)));
            }
            let law = DiscreteMeasure::new(e.support.into_iter().map(|t| vec![t]).collect(), e.probs)
                .map_err(D::Error::custom)?;
            slots[k] = Some(law);
        }
        let edges = slots
            .into_iter()
            .enumerate()
            .map(|(k, s)| s.ok_or_else(|| D::Error::custom(format!("edge law {k} missing"))))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        GraphDistribution::new(n, edges).map_err(D::Error::custom)
    }
}

/// Symmetric nonnegative weight matrix with zero diagonal, stored as the
/// upper triangle in [`pair_index`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    pub n: usize,
    pub weights: Vec<f64>,
}

impl WeightedGraph {
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        if i == j {
            0.0
        } else {
            self.weights[pair_index(self.n, i, j)]
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.weight(i, j))
    }
}

fn sample_atom<R: Rng>(law: &DiscreteMeasure, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &w) in law.weights().iter().enumerate() {
        acc += w;
        if u < acc {
            return law.points_flat()[k];
        }
    }
    // u landed in the rounding gap above the last partial sum
    let last = law.weights().iter().rposition(|&w| w > 0.0).unwrap_or(0);
    law.points_flat()[last]
}

/// `count` independent graphs drawn from `gd` using `rng`.
pub fn sample_graphs_with<R: Rng>(gd: &GraphDistribution, count: usize, rng: &mut R) -> Vec<WeightedGraph> {
    (0..count)
        .map(|_| WeightedGraph {
            n: gd.n,
            weights: gd.edges.iter().map(|e| sample_atom(e, rng)).collect(),
        })
        .collect()
}

/// `count` independent graphs, reproducible from `seed`.
pub fn sample_graphs(gd: &GraphDistribution, count: usize, seed: u64) -> Vec<WeightedGraph> {
    sample_graphs_with(gd, count, &mut rng::stream(seed, &[rng::tag::GRAPHS0]))
}

/// Per-edge empirical laws of a sample.
pub fn empirical_distribution(graphs: &[WeightedGraph]) -> Result<GraphDistribution> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::Empty("no graphs to estimate from".into()))?;
    let n = first.n;
    let m = n * (n - 1) / 2;
    for g in graphs {
        if g.n != n || g.weights.len() != m {
            return Err(Error::InvalidGraph("graphs have inconsistent sizes".into()));
        }
        if g.weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidGraph("edge weights must be finite and nonnegative".into()));
        }
    }
    let total = graphs.len() as f64;
    let edges = (0..m)
        .map(|k| {
            let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
            for g in graphs {
                *counts.entry((g.weights[k] + 0.0).to_bits()).or_default() += 1;
            }
            let (pts, w): (Vec<Vec<f64>>, Vec<f64>) = counts
                .into_iter()
                .map(|(bits, c)| (vec![f64::from_bits(bits)], c as f64 / total))
                .unzip();
            DiscreteMeasure::new(pts, w)
        })
        .collect::<Result<Vec<_>>>()?;
    GraphDistribution::new(n, edges)
}

/// Embedded measure with the location of each pair atom.
#[derive(Debug, Clone)]
pub struct Embedding {
    pub measure: DiscreteMeasure,
    /// For edge `k` (in [`pair_index`] order, `i < j`) and atom `a` of its
    /// law: support indices of `−e_i + t_a e_j` and `−e_j + t_a e_i`.
    pub atom_index: Vec<Vec<(usize, usize)>>,
}

fn pair_point(n: usize, i: usize, j: usize, t: f64) -> Vec<f64> {
    let mut p = vec![0.0; n];
    p[i] = -1.0;
    p[j] += t;
    p
}

/// Embedding of a model into a measure on `R^N`: mass
/// `ρ_ij({t}) / (N(N+1)(N−1))` at `−e_i + t e_j` for each ordered pair and
/// atom, and `1/(N+1)` at each `−e_i`. Coincident points are merged.
pub fn embed_with_index(gd: &GraphDistribution) -> Result<Embedding> {
    let n = gd.n;
    let nf = n as f64;
    let pair_mass = 1.0 / (nf * (nf + 1.0) * (nf - 1.0));
    let mut pts = Vec::new();
    let mut w = Vec::new();
    for i in 0..n {
        pts.push(pair_point(n, i, i, 0.0));
        w.push(1.0 / (nf + 1.0));
    }
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let law = gd.edge(i, j);
            for (&t, &q) in law.points_flat().iter().zip(law.weights()) {
                pts.push(pair_point(n, i, j, t));
                w.push(q * pair_mass);
            }
        }
    }
    let measure = DiscreteMeasure::new(pts, w)?;
    let atom_index = pairs(n)
        .map(|(i, j)| {
            gd.edge(i, j)
                .points_flat()
                .iter()
                .map(|&t| {
                    let a = measure.find(&pair_point(n, i, j, t)).expect("embedded atom present");
                    let b = measure.find(&pair_point(n, j, i, t)).expect("embedded atom present");
                    (a, b)
                })
                .collect()
        })
        .collect();
    Ok(Embedding { measure, atom_index })
}

pub fn embed(gd: &GraphDistribution) -> Result<DiscreteMeasure> {
    Ok(embed_with_index(gd)?.measure)
}

/// Relabeled model with `ρ'_ij = ρ_{σ(i)σ(j)}`.
pub fn permute(gd: &GraphDistribution, sigma: &[usize]) -> Result<GraphDistribution> {
    check_permutation(sigma, gd.n)?;
    let edges = pairs(gd.n).map(|(i, j)| gd.edge(sigma[i], sigma[j]).clone()).collect();
    GraphDistribution::new(gd.n, edges)
}

/// Symmetric matrix of edge probabilities of a binary model.
pub fn edge_prob_matrix(gd: &GraphDistribution) -> Result<DMatrix<f64>> {
    let mut p = DMatrix::zeros(gd.n, gd.n);
    for (i, j) in pairs(gd.n) {
        let law = gd.edge(i, j);
        let mut prob = 0.0;
        for (&t, &q) in law.points_flat().iter().zip(law.weights()) {
            if t == 1.0 {
                prob = q;
            } else if t != 0.0 {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i}, {j}) has weight {t}; binary support required"
                )));
            }
        }
        p[(i, j)] = prob;
        p[(j, i)] = prob;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn constant(n: usize, w: f64) -> GraphDistribution {
        GraphDistribution::new(n, vec![DiscreteMeasure::dirac(vec![w]).unwrap(); n * (n - 1) / 2]).unwrap()
    }

    #[test]
    fn pair_index_is_dense() {
        let idx: Vec<usize> = pairs(5).map(|(i, j)| pair_index(5, i, j)).collect();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
        assert_eq!(pair_index(5, 3, 1), pair_index(5, 1, 3));
    }

    #[test]
    fn sampling_examples() {
        let g = sample_graphs(&constant(3, 1.0), 2, 0);
        assert_eq!(g.len(), 2);
        for s in &g {
            assert_eq!(s.to_matrix(), DMatrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 }));
        }
        let sure = GraphDistribution::bernoulli(&DMatrix::from_element(4, 4, 1.0)).unwrap();
        assert!(sample_graphs(&sure, 50, 1).iter().all(|g| g.weights.iter().all(|&w| w == 1.0)));
    }

    #[test]
    fn empirical_frequencies_concentrate() {
        let gd = GraphDistribution::bernoulli(&DMatrix::from_element(4, 4, 0.5)).unwrap();
        let graphs = sample_graphs(&gd, 10_000, 3);
        let emp = empirical_distribution(&graphs).unwrap();
        let p = edge_prob_matrix(&emp).unwrap();
        for (i, j) in pairs(4) {
            assert!((p[(i, j)] - 0.5).abs() < 0.02);
        }
    }

    #[test]
    fn empirical_examples() {
        let g = WeightedGraph { n: 3, weights: vec![0.5, 2.0, 0.0] };
        let emp = empirical_distribution(std::slice::from_ref(&g)).unwrap();
        assert_eq!(emp.edge(0, 2), &DiscreteMeasure::dirac(vec![2.0]).unwrap());

        let a = WeightedGraph { n: 2, weights: vec![0.0] };
        let b = WeightedGraph { n: 2, weights: vec![1.0] };
        let emp = empirical_distribution(&[a, b]).unwrap();
        assert_eq!(emp.edge(0, 1), &DiscreteMeasure::uniform_1d(&[0.0, 1.0]).unwrap());

        let graphs = sample_graphs(&constant(3, 0.7), 100, 5);
        let emp = empirical_distribution(&graphs).unwrap();
        assert_eq!(emp, constant(3, 0.7));

        let bad = WeightedGraph { n: 3, weights: vec![0.0; 3] };
        let small = WeightedGraph { n: 2, weights: vec![0.0] };
        assert!(empirical_distribution(&[bad, small]).is_err());
        assert!(empirical_distribution(&[]).is_err());
    }

    #[test]
    fn embed_examples() {
        let m = embed(&constant(2, 1.0)).unwrap();
        assert_eq!(m.len(), 4);
        let mass = |p: &[f64]| m.weights()[m.find(p).unwrap()];
        assert_abs_diff_eq!(mass(&[-1.0, 1.0]), 1.0 / 6.0, epsilon = 1e-16);
        assert_abs_diff_eq!(mass(&[1.0, -1.0]), 1.0 / 6.0, epsilon = 1e-16);
        assert_abs_diff_eq!(mass(&[-1.0, 0.0]), 1.0 / 3.0, epsilon = 1e-16);
        assert_abs_diff_eq!(mass(&[0.0, -1.0]), 1.0 / 3.0, epsilon = 1e-16);

        let m = embed(&constant(2, 0.0)).unwrap();
        assert_eq!(m.len(), 2);
        assert!(m.weights().iter().all(|&w| (w - 0.5).abs() < 1e-15));
    }

    /// Direct enumeration of the N = 3 embedding with uniform{0,1} edges.
    #[test]
    fn embed_matches_enumeration() {
        let law = DiscreteMeasure::uniform_1d(&[0.0, 1.0]).unwrap();
        let gd = GraphDistribution::new(3, vec![law; 3]).unwrap();
        let m = embed(&gd).unwrap();
        assert_eq!(m.len(), 9);
        let pair = 1.0 / 24.0 * 0.5;
        for i in 0..3 {
            let mut anchor = vec![0.0; 3];
            anchor[i] = -1.0;
            // anchor plus the two t = 0 atoms of pairs (i, j)
            assert_abs_diff_eq!(m.weights()[m.find(&anchor).unwrap()], 0.25 + 2.0 * pair, epsilon = 1e-16);
            for j in 0..3 {
                if i != j {
                    let mut p = anchor.clone();
                    p[j] = 1.0;
                    assert_abs_diff_eq!(m.weights()[m.find(&p).unwrap()], pair, epsilon = 1e-16);
                }
            }
        }
    }

    #[test]
    fn atom_index_points_at_pair_atoms() {
        let law = DiscreteMeasure::new(vec![vec![0.0], vec![2.0]], vec![0.25, 0.75]).unwrap();
        let gd = GraphDistribution::new(3, vec![law; 3]).unwrap();
        let e = embed_with_index(&gd).unwrap();
        for (k, (i, j)) in pairs(3).enumerate() {
            let (a, b) = e.atom_index[k][1];
            assert_eq!(e.measure.point(a), pair_point(3, i, j, 2.0).as_slice());
            assert_eq!(e.measure.point(b), pair_point(3, j, i, 2.0).as_slice());
            // t = 0 atoms share the anchors
            let (a0, b0) = e.atom_index[k][0];
            assert_eq!(e.measure.point(a0), pair_point(3, i, i, 0.0).as_slice());
            assert_eq!(e.measure.point(b0), pair_point(3, j, j, 0.0).as_slice());
        }
    }

    #[test]
    fn permute_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let gd = GraphDistribution::random_bernoulli(10, &mut rng).unwrap();
        assert_eq!(permute(&gd, &(0..10).collect::<Vec<_>>()).unwrap(), gd);
        let two = GraphDistribution::bernoulli(&DMatrix::from_element(2, 2, 0.3)).unwrap();
        assert_eq!(permute(&two, &[1, 0]).unwrap(), two);
        let mut sigma: Vec<usize> = (0..10).collect();
        sigma.shuffle(&mut rng);
        let back = permute(&permute(&gd, &sigma).unwrap(), &invert(&sigma)).unwrap();
        assert_eq!(back, gd);
        assert!(permute(&gd, &[0, 0, 1, 2, 3, 4, 5, 6, 7, 8]).is_err());
    }

    #[test]
    fn edge_prob_examples() {
        let ones = GraphDistribution::bernoulli(&DMatrix::from_element(4, 4, 1.0)).unwrap();
        assert_eq!(edge_prob_matrix(&ones).unwrap(), DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 }));
        let zeros = GraphDistribution::bernoulli(&DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(edge_prob_matrix(&zeros).unwrap(), DMatrix::zeros(4, 4));
        let mut p = DMatrix::zeros(3, 3);
        for (k, (i, j)) in pairs(3).enumerate() {
            p[(i, j)] = 0.1 + 0.2 * k as f64;
            p[(j, i)] = p[(i, j)];
        }
        assert_eq!(edge_prob_matrix(&GraphDistribution::bernoulli(&p).unwrap()).unwrap(), p);
        assert!(edge_prob_matrix(&constant(3, 0.5)).is_err());
    }

    #[test]
    fn json_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gd = GraphDistribution::random_bernoulli(4, &mut rng).unwrap();
        let back: GraphDistribution = serde_json::from_str(&gd.to_json()).unwrap();
        assert_eq!(back, gd);
        let missing = r#"{"n": 3, "edges": [{"i":0,"j":1,"support":[1],"probs":[1]}]}"#;
        assert!(serde_json::from_str::<GraphDistribution>(missing).is_err());
    }

    proptest! {
        #[test]
        fn embedding_mass_and_equivariance(seed in 0u64..1000, n in 2usize..6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let edges = (0..n * (n - 1) / 2)
                .map(|_| {
                    let k = rng.random_range(1..4);
                    let pts: Vec<Vec<f64>> = (0..k).map(|_| vec![rng.random_range(0..4) as f64 * 0.5]).collect();
                    let w = vec![1.0 / k as f64; k];
                    DiscreteMeasure::new(pts, w).unwrap()
                })
                .collect();
            let gd = GraphDistribution::new(n, edges).unwrap();
            let m = embed(&gd).unwrap();
            let total: f64 = m.weights().iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);

            let mut sigma: Vec<usize> = (0..n).collect();
            sigma.shuffle(&mut rng);
            let lhs = embed(&permute(&gd, &sigma).unwrap()).unwrap();
            let rhs = m.permute_axes(&sigma).unwrap();
            prop_assert_eq!(lhs.len(), rhs.len());
            for (p, w) in rhs.points().zip(rhs.weights()) {
                let k = lhs.find(p);
                prop_assert!(k.is_some());
                prop_assert!((lhs.weights()[k.unwrap()] - w).abs() <= 1e-15);
            }
        }
    }
}
