//! Random instance generators shared by the integration tests.

#![allow(dead_code)]

use infomarket::equilibrium::{exact_equilibrium, kkt_interior_solve, SolverConfig};
use infomarket::{BeliefSet, MarketInstance, MarketParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Weights drawn from `U(lo, hi)` and normalized.
pub fn random_beliefs(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> BeliefSet {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    BeliefSet::from_weights(&w).unwrap()
}

fn random_params(rng: &mut ChaCha8Rng) -> MarketParams {
    let n = rng.random_range(2..=50);
    let outcomes = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
    MarketParams::new(
        rng.random_range(0.5..3.0),
        rng.random_range(0.5..3.0),
        rng.random_range(3.0..10.0),
        outcomes,
    )
}

/// Every agent, operator included, holds the same beliefs. Draws are
/// rejected until the dense KKT solution lies inside every bound, so the
/// centralized oracle is available.
pub fn random_common_instance(rng: &mut ChaCha8Rng) -> MarketInstance {
    loop {
        let params = random_params(rng);
        let beliefs = random_beliefs(rng, params.outcomes.len(), 0.5, 1.5);
        let m = MarketInstance::new(params)
            .unwrap()
            .with_operator_beliefs(beliefs.clone())
            .unwrap()
            .with_common_beliefs(&beliefs)
            .unwrap();
        if kkt_interior_solve(&m).unwrap().is_some() {
            return m;
        }
    }
}

/// Producer and consumer beliefs drawn independently.
pub fn random_asymmetric_instance(rng: &mut ChaCha8Rng) -> MarketInstance {
    let params = random_params(rng);
    let n = params.outcomes.len();
    MarketInstance::new(params)
        .unwrap()
        .with_producer_beliefs(random_beliefs(rng, n, 0.1, 1.0))
        .unwrap()
        .with_consumer_beliefs(random_beliefs(rng, n, 0.1, 1.0))
        .unwrap()
}

/// Asymmetric instance whose equilibrium clears every outcome at a positive
/// price. Outcomes left with surplus at zero price never satisfy the
/// per-outcome imbalance stop test, so they are redrawn.
pub fn random_clearing_instance(rng: &mut ChaCha8Rng) -> MarketInstance {
    loop {
        let m = random_asymmetric_instance(rng);
        if exact_equilibrium(&m)
            .unwrap()
            .prices
            .iter()
            .all(|&x| x > 0.0)
        {
            return m;
        }
    }
}

/// Contraction step with a tight stop test, for comparisons at 1e−4.
pub fn tight_solver(instance: &MarketInstance) -> SolverConfig {
    SolverConfig {
        epsilon: 1e-14,
        ..SolverConfig::default()
    }
    .with_stable_step(instance)
    .unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
