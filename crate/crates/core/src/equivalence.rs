//! Randomized checks that THC reduces to plain hypergraph convolution at
//! γ = 0, and that hypergraph convolution over a bipartite adjacency equals
//! two chained symmetric-normalized graph convolutions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::IncidenceMatrix;
use crate::model::{
    oracle_hypergraph_conv, oracle_lightgcn_symmetric, oracle_lightgcn_two_layer, thc_layer,
};
use crate::sparse::DenseMatrix;

/// A fully determined random instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceCase {
    pub num_nodes: usize,
    pub num_hyperedges: usize,
    /// Probability of each incidence.
    pub density: f64,
    pub topology_seed: u64,
    pub d: usize,
    pub embedding_seed: u64,
    pub tolerance: f64,
    /// Transition intensity used by the THC side. Non-zero values together
    /// with `with_intrinsic` make a negative control.
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub with_intrinsic: bool,
}

impl EquivalenceCase {
    pub fn new(num_nodes: usize, num_hyperedges: usize, density: f64, seed: u64, d: usize) -> Self {
        Self {
            num_nodes,
            num_hyperedges,
            density,
            topology_seed: seed,
            d,
            embedding_seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
            tolerance: 1e-10,
            gamma: 0.0,
            with_intrinsic: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidParam("tolerance must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::InvalidParam(format!("density {} not in [0, 1]", self.density)));
        }
        Ok(())
    }

    pub fn incidence(&self) -> IncidenceMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(self.topology_seed);
        let mut pairs = Vec::new();
        for n in 0..self.num_nodes {
            for e in 0..self.num_hyperedges {
                if rng.gen::<f64>() < self.density {
                    pairs.push((n, e));
                }
            }
        }
        IncidenceMatrix::from_incidences(self.num_nodes, self.num_hyperedges, pairs)
            .expect("generated in range")
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
        let values = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
        DenseMatrix::from_vec(rows, cols, values).expect("sized")
    }

    pub fn embeddings(&self) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(self.embedding_seed);
        Self::random_matrix(self.num_nodes, self.d, &mut rng)
    }

    pub fn intrinsic(&self) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(self.embedding_seed ^ 0xA5A5_A5A5);
        Self::random_matrix(self.num_hyperedges, self.d, &mut rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: String,
    pub passed: bool,
    pub max_deviation: f64,
    /// Symmetric two-layer route compared directly with the one-sided one,
    /// without the degree similarity. Informational; zero only for
    /// uniform group degrees.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub symmetric_direct_deviation: Option<f64>,
    pub case: EquivalenceCase,
}

/// THC layer (sparse path) against the dense `D⁻¹H·B⁻¹Hᵀ·X` product.
pub fn check_thc_vs_hyperconv(case: &EquivalenceCase) -> Result<CheckOutcome> {
    case.validate()?;
    let inc = case.incidence();
    let x = case.embeddings();
    let c = case.intrinsic();
    let (thc, _) = thc_layer(&x, &inc, case.gamma, case.with_intrinsic.then_some(&c))?;
    let reference = oracle_hypergraph_conv(&x, &inc)?;
    let dev = thc.max_abs_diff(&reference);
    Ok(CheckOutcome {
        check: "thc_vs_hyperconv".into(),
        passed: dev <= case.tolerance,
        max_deviation: dev,
        symmetric_direct_deviation: None,
        case: case.clone(),
    })
}

/// Group-user-group graph convolution over `A` (nodes = groups,
/// hyperedges = users) against hypergraph convolution with `H = A`,
/// `D = D_g`, `B = D_u`, and against the sparse THC layer at γ = 0.
///
/// The symmetric-normalized chain is checked through its exact relation
/// `D_g^{1/2}·P·D_g^{-1/2}` to the one-sided operator `P`.
pub fn check_thc_vs_lightgcn(case: &EquivalenceCase) -> Result<CheckOutcome> {
    case.validate()?;
    let adjacency = case.incidence();
    let e = case.embeddings();
    let two_layer = oracle_lightgcn_two_layer(&e, &adjacency)?;
    let hyper = oracle_hypergraph_conv(&e, &adjacency)?;
    let (thc, _) = thc_layer(&e, &adjacency, 0.0, None)?;

    let symmetric = oracle_lightgcn_symmetric(&e, &adjacency)?;
    let sqrt_deg: Vec<f64> = adjacency.node_degrees().iter().map(|&d| (d as f64).sqrt()).collect();
    let mut scaled = e.clone();
    for (r, &s) in sqrt_deg.iter().enumerate() {
        let w = if s == 0.0 { 0.0 } else { 1.0 / s };
        scaled.row_mut(r).iter_mut().for_each(|v| *v *= w);
    }
    let mut similar = oracle_lightgcn_two_layer(&scaled, &adjacency)?;
    for (r, &s) in sqrt_deg.iter().enumerate() {
        similar.row_mut(r).iter_mut().for_each(|v| *v *= s);
    }

    let dev = [
        two_layer.max_abs_diff(&hyper),
        two_layer.max_abs_diff(&thc),
        symmetric.max_abs_diff(&similar),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    Ok(CheckOutcome {
        check: "thc_vs_lightgcn".into(),
        passed: dev <= case.tolerance,
        max_deviation: dev,
        symmetric_direct_deviation: Some(symmetric.max_abs_diff(&two_layer)),
        case: case.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub outcomes: Vec<CheckOutcome>,
    pub all_passed: bool,
    pub max_deviation: f64,
}

/// `cases_per_check` seeds for each of `d` and `densities`, both checks.
pub fn run_battery(
    cases_per_check: usize,
    dims: &[usize],
    densities: &[f64],
    tolerance: f64,
) -> Result<EquivalenceReport> {
    let mut outcomes = Vec::new();
    for &d in dims {
        for &density in densities {
            for seed in 0..cases_per_check as u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (d as u64) << 32);
                let nodes = rng.gen_range(2..=40);
                let edges = rng.gen_range(1..=40);
                let mut case = EquivalenceCase::new(nodes, edges, density, seed * 1000 + d as u64, d);
                case.tolerance = tolerance;
                outcomes.push(check_thc_vs_hyperconv(&case)?);
                outcomes.push(check_thc_vs_lightgcn(&case)?);
            }
        }
    }
    let max_deviation = outcomes.iter().map(|o| o.max_deviation).fold(0.0, f64::max);
    Ok(EquivalenceReport {
        all_passed: outcomes.iter().all(|o| o.passed),
        max_deviation,
        outcomes,
    })
}
