#![allow(dead_code)]

use flexpd::graph::{incidence_matrix, penalty_matrix, PenaltyVariant};
use flexpd::objective::{partition, synthetic_binary_dataset};
use flexpd::{build_topology, Network, ObjectiveSet, Topology};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Connected topology drawn from the standard families.
pub fn random_topology(n: usize, seed: u64) -> Topology {
    match seed % 4 {
        0 if n >= 3 => Topology::Ring,
        1 => Topology::Path,
        2 if n >= 5 && n % 2 == 0 => Topology::KRegular { k: 4, seed },
        2 => Topology::Complete,
        _ => Topology::ErdosRenyi { prob: 0.6, seed },
    }
}

pub fn quadratic(n: usize, c_hi: i64, seed: u64) -> (Network, ObjectiveSet) {
    let g = build_topology(&random_topology(n, seed), n).unwrap();
    (Network::new(g, 1.0).unwrap(), ObjectiveSet::random_quadratic(n, (1, c_hi), (1, 100), seed).unwrap())
}

pub fn logistic(n: usize, seed: u64) -> (Network, ObjectiveSet) {
    let ds = synthetic_binary_dataset(12 * n, 3, seed);
    let parts = partition(&ds, n, seed).unwrap();
    let g = build_topology(&random_topology(n, seed), n).unwrap();
    (Network::new(g, 1.0).unwrap(), ObjectiveSet::logistic(&ds, &parts, 0.1).unwrap())
}

/// Same graph with `rho(B) = frac * m`, small enough for FlexPD-G.
pub fn g_admissible(net: &Network, obj: &ObjectiveSet, frac: f64) -> Network {
    net.rescaled(frac * obj.constants().0 / net.rho_ata()).unwrap()
}

/// Penalty `A' diag(w) A` with random positive edge weights.
pub fn weighted(net: &Network, seed: u64) -> Network {
    let mut r = rng(seed);
    let a = incidence_matrix(net.graph());
    let w: Vec<f64> = (0..a.nrows()).map(|_| r.gen_range(0.2..3.0)).collect();
    let b = penalty_matrix(&a, 1.0, &PenaltyVariant::WeightedLaplacian(w)).unwrap();
    Network::with_penalty_matrix(net.graph().clone(), b).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, scale: f64, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.gen_range(-scale..scale))
}
