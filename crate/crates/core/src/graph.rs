//! Network topologies, incidence and penalty matrices, and the spectral
//! constants consumed by the stepsize bounds.
//!
//! Edges are stored as `(i, j)` with `i < j`. The incidence row of an edge
//! carries `+1` at the lower index and `-1` at the higher one.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Maximum number of reseeded attempts for Erdős–Rényi graphs.
pub const ER_MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    Path,
    Ring,
    KRegular { k: usize, seed: u64 },
    ErdosRenyi { prob: f64, seed: u64 },
    Complete,
    Custom,
}

impl Topology {
    /// Same topology with its random seed replaced (no-op for deterministic shapes).
    pub fn with_seed(&self, seed: u64) -> Topology {
        match self {
            Topology::KRegular { k, .. } => Topology::KRegular { k: *k, seed },
            Topology::ErdosRenyi { prob, .. } => Topology::ErdosRenyi { prob: *prob, seed },
            other => other.clone(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Topology::Path => "path".into(),
            Topology::Ring => "ring".into(),
            Topology::KRegular { k, .. } => format!("{k}-regular"),
            Topology::ErdosRenyi { prob, .. } => format!("erdos-renyi(p={prob})"),
            Topology::Complete => "complete".into(),
            Topology::Custom => "custom".into(),
        }
    }
}

/// Parses `path`, `ring`, `complete`, `k-regular:K` or `er:P`, with seed 0.
impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |e: String| Error::Config(format!("topology '{s}': {e}"));
        Ok(match s.trim() {
            "path" => Topology::Path,
            "ring" => Topology::Ring,
            "complete" => Topology::Complete,
            other => match other.split_once(':') {
                Some(("k-regular", k)) => Topology::KRegular { k: k.parse().map_err(|e| bad(format!("{e}")))?, seed: 0 },
                Some(("er", p)) => Topology::ErdosRenyi { prob: p.parse().map_err(|e| bad(format!("{e}")))?, seed: 0 },
                _ => return Err(bad("unknown topology".into())),
            },
        })
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    topology: Topology,
}

impl Graph {
    /// Builds a graph from an edge list. Pairs are normalised to `(min, max)`
    /// and deduplicated; self-loops and disconnected graphs are rejected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>, topology: Topology) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 agents, got {n}")));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i == j {
                return Err(Error::InvalidParameter(format!("self-loop at vertex {i}")));
            }
            if i >= n || j >= n {
                return Err(Error::InvalidParameter(format!("edge ({i}, {j}) out of range for n={n}")));
            }
            set.insert((i.min(j), i.max(j)));
        }
        let g = Graph { n, edges: set.into_iter().collect(), topology };
        if !g.is_connected() {
            return Err(Error::InfeasibleTopology("graph is not connected".into()));
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn max_degree(&self) -> usize {
        self.degrees().into_iter().max().unwrap_or(0)
    }

    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        is_connected(self.n, &self.edges)
    }

    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
        }
        l
    }
}

fn is_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    if n == 0 {
        return true;
    }
    let mut adj = vec![Vec::new(); n];
    for &(i, j) in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if !seen[w] {
                seen[w] = true;
                count += 1;
                queue.push_back(w);
            }
        }
    }
    count == n
}

pub fn build_topology(tag: &Topology, n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need at least 2 agents, got {n}")));
    }
    match tag {
        Topology::Path => Graph::new(n, (0..n - 1).map(|i| (i, i + 1)), tag.clone()),
        Topology::Ring => Graph::new(n, ring_edges(n), tag.clone()),
        Topology::Complete => {
            let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
            Graph::new(n, edges, tag.clone())
        }
        Topology::KRegular { k, seed } => k_regular(n, *k, *seed).and_then(|e| Graph::new(n, e, tag.clone())),
        Topology::ErdosRenyi { prob, seed } => erdos_renyi(n, *prob, *seed).map(|(edges, used_seed)| Graph {
            n,
            edges,
            topology: Topology::ErdosRenyi { prob: *prob, seed: used_seed },
        }),
        Topology::Custom => Err(Error::InvalidParameter(
            "custom topologies are built with Graph::new from an edge list".into(),
        )),
    }
}

fn ring_edges(n: usize) -> Vec<(usize, usize)> {
    if n == 2 {
        return vec![(0, 1)];
    }
    (0..n).map(|i| (i, (i + 1) % n)).collect()
}

/// Ring plus a random (k-2)-regular overlay on the remaining vertex pairs.
/// For k = 4 every agent sits on a ring and gains two random extra neighbours.
fn k_regular(n: usize, k: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if k == 0 || k >= n || (n * k) % 2 != 0 {
        return Err(Error::InfeasibleTopology(format!(
            "no connected {k}-regular graph on {n} vertices (need 0 < k < n and n*k even)"
        )));
    }
    if k == 1 {
        return if n == 2 {
            Ok(vec![(0, 1)])
        } else {
            Err(Error::InfeasibleTopology("1-regular graphs on more than 2 vertices are disconnected".into()))
        };
    }
    if n == 2 || k == n - 1 {
        return Ok((0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: BTreeSet<(usize, usize)> = ring_edges(n).into_iter().map(|(i, j)| (i.min(j), i.max(j))).collect();
    // Randomised sequential construction with restarts when stuck.
    for _ in 0..10_000 {
        let mut edges = base.clone();
        let mut remaining = vec![k - 2; n];
        let stuck = loop {
            let mut candidates = Vec::new();
            let mut total = 0.0;
            for i in 0..n {
                if remaining[i] == 0 {
                    continue;
                }
                for j in i + 1..n {
                    if remaining[j] > 0 && !edges.contains(&(i, j)) {
                        let w = (remaining[i] * remaining[j]) as f64;
                        total += w;
                        candidates.push(((i, j), w));
                    }
                }
            }
            if candidates.is_empty() {
                break remaining.iter().any(|&r| r > 0);
            }
            let mut pick = rng.gen::<f64>() * total;
            let mut chosen = candidates[candidates.len() - 1].0;
            for &(e, w) in &candidates {
                if pick < w {
                    chosen = e;
                    break;
                }
                pick -= w;
            }
            edges.insert(chosen);
            remaining[chosen.0] -= 1;
            remaining[chosen.1] -= 1;
        };
        if !stuck {
            return Ok(edges.into_iter().collect());
        }
    }
    Err(Error::InfeasibleTopology(format!("failed to sample a {k}-regular graph on {n} vertices")))
}

fn erdos_renyi(n: usize, prob: f64, seed: u64) -> Result<(Vec<(usize, usize)>, u64)> {
    if !(prob > 0.0 && prob <= 1.0) {
        return Err(Error::InvalidParameter(format!("edge probability must be in (0, 1], got {prob}")));
    }
    for attempt in 0..ER_MAX_ATTEMPTS as u64 {
        let s = seed.wrapping_add(attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen::<f64>() < prob {
                    edges.push((i, j));
                }
            }
        }
        if is_connected(n, &edges) {
            return Ok((edges, s));
        }
    }
    Err(Error::Disconnected { attempts: ER_MAX_ATTEMPTS })
}

/// Edge-node incidence matrix (one row per edge, `+1` at the lower vertex).
pub fn incidence_matrix(g: &Graph) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(g.edge_count(), g.n());
    for (l, &(i, j)) in g.edges().iter().enumerate() {
        a[(l, i)] = 1.0;
        a[(l, j)] = -1.0;
    }
    a
}

#[derive(Debug, Clone, PartialEq)]
pub enum PenaltyVariant {
    /// `B = beta * A'A`.
    ScaledGram,
    /// `B = A' diag(w) A`, one positive weight per edge.
    WeightedLaplacian(Vec<f64>),
}

/// Builds a penalty matrix sharing the null space of `A`.
pub fn penalty_matrix(a: &DMatrix<f64>, beta: f64, variant: &PenaltyVariant) -> Result<DMatrix<f64>> {
    let b = match variant {
        PenaltyVariant::ScaledGram => {
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::InvalidParameter(format!("penalty scale must be positive, got {beta}")));
            }
            a.transpose() * a * beta
        }
        PenaltyVariant::WeightedLaplacian(w) => {
            if w.len() != a.nrows() {
                return Err(Error::Dimension(format!("{} weights for {} edges", w.len(), a.nrows())));
            }
            if let Some(bad) = w.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidParameter(format!("edge weights must be positive, got {bad}")));
            }
            let mut wa = a.clone();
            for (l, wl) in w.iter().enumerate() {
                wa.row_mut(l).scale_mut(*wl);
            }
            a.transpose() * wa
        }
    };
    check_penalty(&b, a)?;
    Ok(b)
}

/// Checks symmetry, `B·1 = 0`, PSD and `rank(B) = n - 1`.
pub fn check_penalty(b: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<()> {
    let n = a.ncols();
    if b.nrows() != n || b.ncols() != n {
        return Err(Error::Dimension(format!("penalty must be {n}x{n}")));
    }
    let asym = (b - b.transpose()).amax();
    let report = spectral_constants(b)?;
    let scale = report.rho.max(f64::MIN_POSITIVE);
    if asym > 1e-12 * scale {
        return Err(Error::InvalidParameter("penalty matrix is not symmetric".into()));
    }
    let ones = DMatrix::from_element(n, 1, 1.0);
    if (b * &ones).norm() > 1e-9 * scale {
        return Err(Error::InvalidParameter("penalty matrix does not annihilate the all-ones vector".into()));
    }
    let tol = NULL_TOL * scale;
    if report.eigenvalues[0] < -tol {
        return Err(Error::InvalidParameter("penalty matrix is not positive semi-definite".into()));
    }
    let zeros = report.eigenvalues.iter().filter(|v| v.abs() <= tol).count();
    if zeros != 1 {
        return Err(Error::InvalidParameter(format!(
            "penalty matrix null space has dimension {zeros}, expected 1"
        )));
    }
    Ok(())
}

/// Relative tolerance used to classify eigenvalues as zero.
pub const NULL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralReport {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    pub rho: f64,
    /// Smallest eigenvalue above `NULL_TOL * rho`.
    pub s: f64,
    /// Difference between the two largest eigenvalues.
    pub spectral_gap: f64,
}

pub fn spectral_constants(m: &DMatrix<f64>) -> Result<SpectralReport> {
    let eigenvalues = linalg::symmetric_eigenvalues(m)?;
    let k = eigenvalues.len();
    let rho = eigenvalues[k - 1];
    let tol = NULL_TOL * rho.abs();
    let s = eigenvalues.iter().copied().find(|&v| v > tol).unwrap_or(0.0);
    let spectral_gap = if k >= 2 { eigenvalues[k - 1] - eigenvalues[k - 2] } else { 0.0 };
    Ok(SpectralReport { eigenvalues, rho, s, spectral_gap })
}

/// `W = I - L / (1 + d_max)`.
pub fn consensus_matrix(g: &Graph) -> DMatrix<f64> {
    let dmax = g.max_degree() as f64;
    DMatrix::identity(g.n(), g.n()) - g.laplacian() / (1.0 + dmax)
}

pub fn spectral_gap(g: &Graph) -> Result<f64> {
    Ok(spectral_constants(&consensus_matrix(g))?.spectral_gap)
}

/// A graph together with its incidence matrix, penalty matrix and cached
/// spectral constants.
#[derive(Debug, Clone)]
pub struct Network {
    graph: Graph,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    rho_ata: f64,
    s_aat: f64,
    rho_b: f64,
    dmax: usize,
    b_diag: Vec<f64>,
    b_edge: Vec<f64>,
}

impl Network {
    /// Network with `B = penalty_scale * A'A`.
    pub fn new(graph: Graph, penalty_scale: f64) -> Result<Self> {
        let a = incidence_matrix(&graph);
        let b = penalty_matrix(&a, penalty_scale, &PenaltyVariant::ScaledGram)?;
        Self::assemble(graph, a, b)
    }

    pub fn with_penalty_matrix(graph: Graph, b: DMatrix<f64>) -> Result<Self> {
        let a = incidence_matrix(&graph);
        check_penalty(&b, &a)?;
        for i in 0..graph.n() {
            for j in 0..graph.n() {
                if i != j && b[(i, j)] != 0.0 && !graph.edges().contains(&(i.min(j), i.max(j))) {
                    return Err(Error::InvalidParameter(format!(
                        "penalty entry ({i}, {j}) is nonzero but the vertices are not adjacent"
                    )));
                }
            }
        }
        Self::assemble(graph, a, b)
    }

    fn assemble(graph: Graph, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let ata = a.transpose() * &a;
        let rep = spectral_constants(&ata)?;
        let rho_b = spectral_constants(&b)?.rho;
        let dmax = graph.max_degree();
        let (b_diag, b_edge) = sparse_parts(&graph, &b);
        Ok(Network { graph, a, b, rho_ata: rep.rho, s_aat: rep.s, rho_b, dmax, b_diag, b_edge })
    }

    /// Same graph with `B = penalty_scale * A'A`.
    pub fn rescaled(&self, penalty_scale: f64) -> Result<Self> {
        let b = penalty_matrix(&self.a, penalty_scale, &PenaltyVariant::ScaledGram)?;
        let rho_b = spectral_constants(&b)?.rho;
        let (b_diag, b_edge) = sparse_parts(&self.graph, &b);
        Ok(Network { b, rho_b, b_diag, b_edge, ..self.clone() })
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }
    pub fn n(&self) -> usize {
        self.graph.n()
    }
    pub fn edge_count(&self) -> usize {
        self.graph.edge_count()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn rho_ata(&self) -> f64 {
        self.rho_ata
    }
    /// Smallest nonzero eigenvalue of `AA'` (equal to that of `A'A`).
    pub fn s_aat(&self) -> f64 {
        self.s_aat
    }
    pub fn rho_b(&self) -> f64 {
        self.rho_b
    }
    pub fn dmax(&self) -> usize {
        self.dmax
    }

    /// `A x` computed edge by edge; `x` is n×p.
    pub fn apply_a(&self, x: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        for (l, &(i, j)) in self.graph.edges.iter().enumerate() {
            for c in 0..x.ncols() {
                out[(l, c)] = x[(i, c)] - x[(j, c)];
            }
        }
    }

    /// `B x` using the graph sparsity of `B`.
    pub fn apply_b(&self, x: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        for c in 0..x.ncols() {
            for (i, d) in self.b_diag.iter().enumerate() {
                out[(i, c)] = d * x[(i, c)];
            }
            for (&(i, j), w) in self.graph.edges.iter().zip(&self.b_edge) {
                out[(i, c)] += w * x[(j, c)];
                out[(j, c)] += w * x[(i, c)];
            }
        }
    }

    /// `A' lambda` computed edge by edge; `lambda` is ε×p.
    pub fn apply_at(&self, lambda: &DMatrix<f64>, out: &mut DMatrix<f64>) {
        out.fill(0.0);
        for (l, &(i, j)) in self.graph.edges.iter().enumerate() {
            for c in 0..lambda.ncols() {
                out[(i, c)] += lambda[(l, c)];
                out[(j, c)] -= lambda[(l, c)];
            }
        }
    }
}

fn sparse_parts(graph: &Graph, b: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let diag = (0..graph.n()).map(|i| b[(i, i)]).collect();
    let edge = graph.edges().iter().map(|&(i, j)| 0.5 * (b[(i, j)] + b[(j, i)])).collect();
    (diag, edge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn path3_laplacian() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0])
    }

    #[test]
    fn path_and_complete_edges() {
        let g = build_topology(&Topology::Path, 3).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        let g = build_topology(&Topology::Complete, 4).unwrap();
        assert_eq!(g.edge_count(), 6);
    }

    #[test]
    fn four_regular_seed_7() {
        let g = build_topology(&Topology::KRegular { k: 4, seed: 7 }, 10).unwrap();
        assert!(g.degrees().iter().all(|&d| d == 4));
        assert!(g.is_connected());
    }

    #[test]
    fn infeasible_k_regular() {
        assert!(matches!(
            build_topology(&Topology::KRegular { k: 3, seed: 1 }, 5),
            Err(Error::InfeasibleTopology(_))
        ));
        assert!(build_topology(&Topology::KRegular { k: 5, seed: 1 }, 5).is_err());
    }

    #[test]
    fn tiny_erdos_renyi_gives_up() {
        let r = build_topology(&Topology::ErdosRenyi { prob: 1e-6, seed: 3 }, 20);
        assert!(matches!(r, Err(Error::Disconnected { attempts: ER_MAX_ATTEMPTS })));
    }

    #[test]
    fn self_loop_and_disconnected_rejected() {
        assert!(Graph::new(3, [(0, 0), (1, 2)], Topology::Custom).is_err());
        assert!(Graph::new(4, [(0, 1), (2, 3)], Topology::Custom).is_err());
        let g = Graph::new(3, [(1, 0), (0, 1), (2, 1)], Topology::Custom).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn incidence_of_path3() {
        let g = build_topology(&Topology::Path, 3).unwrap();
        let a = incidence_matrix(&g);
        assert_eq!(a, DMatrix::from_row_slice(2, 3, &[1.0, -1.0, 0.0, 0.0, 1.0, -1.0]));
        assert_eq!(a.transpose() * &a, path3_laplacian());
    }

    #[test]
    fn scaled_gram_penalty() {
        let g = build_topology(&Topology::Path, 3).unwrap();
        let a = incidence_matrix(&g);
        let b1 = penalty_matrix(&a, 1.0, &PenaltyVariant::ScaledGram).unwrap();
        assert_eq!(b1, path3_laplacian());
        let b2 = penalty_matrix(&a, 0.5, &PenaltyVariant::ScaledGram).unwrap();
        assert_eq!(b2, path3_laplacian() * 0.5);
        assert!(penalty_matrix(&a, 0.0, &PenaltyVariant::ScaledGram).is_err());
        assert!(penalty_matrix(&a, 1.0, &PenaltyVariant::WeightedLaplacian(vec![1.0, -2.0])).is_err());
        let bw = penalty_matrix(&a, 1.0, &PenaltyVariant::WeightedLaplacian(vec![2.0, 3.0])).unwrap();
        assert_eq!(bw, DMatrix::from_row_slice(3, 3, &[2.0, -2.0, 0.0, -2.0, 5.0, -3.0, 0.0, -3.0, 3.0]));
    }

    #[test]
    fn spectra_of_small_matrices() {
        let r = spectral_constants(&path3_laplacian()).unwrap();
        assert_relative_eq!(r.eigenvalues[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(r.eigenvalues[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(r.rho, 3.0, epsilon = 1e-12);
        assert_relative_eq!(r.s, 1.0, epsilon = 1e-12);

        let k3 = build_topology(&Topology::Complete, 3).unwrap().laplacian();
        let r = spectral_constants(&k3).unwrap();
        assert_relative_eq!(r.rho, 3.0, epsilon = 1e-12);
        assert_relative_eq!(r.s, 3.0, epsilon = 1e-12);

        let r = spectral_constants(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!((r.rho, r.s), (1.0, 1.0));
    }

    #[test]
    fn consensus_matrix_complete3_and_path3() {
        let g = build_topology(&Topology::Complete, 3).unwrap();
        let w = consensus_matrix(&g);
        for v in w.iter() {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let g = build_topology(&Topology::Path, 3).unwrap();
        assert_relative_eq!(spectral_gap(&g).unwrap(), 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn sparse_apply_matches_dense() {
        let g = build_topology(&Topology::KRegular { k: 4, seed: 2 }, 9).unwrap();
        let net = Network::new(g, 1.0).unwrap();
        let x = DMatrix::from_fn(9, 2, |i, j| (i as f64 * 0.7 - j as f64).sin());
        let mut ax = DMatrix::zeros(net.edge_count(), 2);
        net.apply_a(&x, &mut ax);
        assert!((&ax - net.a() * &x).norm() < 1e-14);
        let mut atl = DMatrix::zeros(9, 2);
        net.apply_at(&ax, &mut atl);
        assert!((&atl - net.a().transpose() * &ax).norm() < 1e-13);
        let weighted = net.a().transpose() * DMatrix::from_diagonal(&nalgebra::DVector::from_fn(net.edge_count(), |l, _| 1.0 + l as f64)) * net.a();
        let net = Network::with_penalty_matrix(net.graph().clone(), weighted.clone()).unwrap();
        let mut bx = DMatrix::zeros(9, 2);
        net.apply_b(&x, &mut bx);
        assert!((&bx - weighted * &x).norm() < 1e-12);
    }

    #[test]
    fn custom_penalty_must_follow_edges() {
        let g = build_topology(&Topology::Path, 3).unwrap();
        let k3 = build_topology(&Topology::Complete, 3).unwrap().laplacian();
        assert!(Network::with_penalty_matrix(g.clone(), k3).is_err());
        assert!(Network::with_penalty_matrix(g, path3_laplacian() * 2.0).is_ok());
    }

    #[test]
    fn topology_strings_parse() {
        assert_eq!("ring".parse::<Topology>().unwrap(), Topology::Ring);
        assert_eq!(" k-regular:4".parse::<Topology>().unwrap(), Topology::KRegular { k: 4, seed: 0 });
        assert_eq!("er:0.3".parse::<Topology>().unwrap(), Topology::ErdosRenyi { prob: 0.3, seed: 0 });
        assert!("star".parse::<Topology>().is_err());
        assert!("k-regular:x".parse::<Topology>().is_err());
    }
}
