mod common;

use common::*;
use infomarket::analysis::demand_excess;
use infomarket::analysis::{dense_eigenvalues, eigenvalues, jacobian, welfare_per_outcome};
use infomarket::beliefs::{discretize, sample_reference, weighted_stats, WeightingParams};
use infomarket::equilibrium::{
    analytic_equilibrium, exact_equilibrium, kkt_interior_solve, potential, tatonnement,
};
use infomarket::{MarketInstance, MarketParams};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn converged_runs_are_epsilon_complementary(seed in any::<u64>()) {
        let m = random_asymmetric_instance(&mut rng(seed));
        let cfg = tight_solver(&m);
        let res = tatonnement(&m, &cfg).unwrap();
        if res.converged {
            let tol = cfg.epsilon.sqrt();
            for (w, xi) in m.outcomes().iter().enumerate() {
                let imbalance = res.dispatch.imbalance(w, *xi);
                prop_assert!(res.prices[w] <= cfg.rho * tol || imbalance.abs() <= tol);
            }
        }
    }

    #[test]
    fn equilibrium_maximizes_the_potential(seed in any::<u64>()) {
        let mut r = rng(seed);
        let m = random_clearing_instance(&mut r);
        if let Some(kkt) = kkt_interior_solve(&m).unwrap() {
            let res = tatonnement(&m, &tight_solver(&m)).unwrap();
            prop_assert!(res.converged);
            prop_assert!((res.dispatch.p - kkt.dispatch.p).abs() <= 1e-4);
            prop_assert!((res.dispatch.d - kkt.dispatch.d).abs() <= 1e-4);
            prop_assert!(max_abs_diff(&res.dispatch.r, &kkt.dispatch.r) <= 1e-4);
            prop_assert!(max_abs_diff(&res.dispatch.l, &kkt.dispatch.l) <= 1e-4);
            prop_assert!((potential(&res.dispatch, &m) - potential(&kkt.dispatch, &m)).abs() <= 1e-6);
        }
    }

    #[test]
    fn exact_solver_matches_tatonnement(seed in any::<u64>()) {
        let m = random_clearing_instance(&mut rng(seed));
        let exact = exact_equilibrium(&m).unwrap();
        let res = tatonnement(&m, &tight_solver(&m)).unwrap();
        prop_assert!(res.converged);
        prop_assert!(max_abs_diff(&exact.prices, &res.prices) <= 1e-6);
    }

    #[test]
    fn interior_closed_form_zeroes_the_demand_excess(seed in any::<u64>()) {
        let m = random_common_instance(&mut rng(seed));
        let eq = analytic_equilibrium(&m).unwrap();
        if eq.interior {
            let z = demand_excess(&eq.lambda, &m);
            prop_assert!(z.iter().all(|v| v.abs() <= 1e-8));
        }
    }

    #[test]
    fn secular_spectrum_matches_dense(seed in any::<u64>(), n in 1usize..=16) {
        let mut r = rng(seed);
        let outcomes = (0..n).map(|_| r.random_range(0.0..3.0)).collect();
        let params = MarketParams::new(r.random_range(0.1..10.0), r.random_range(0.1..10.0), 5.0, outcomes);
        let m = MarketInstance::new(params).unwrap()
            .with_producer_beliefs(random_beliefs(&mut r, n, 0.0, 1.0)).unwrap()
            .with_consumer_beliefs(random_beliefs(&mut r, n, 0.0, 1.0)).unwrap();
        let j = jacobian(&m);
        let fast = eigenvalues(&j).unwrap();
        let dense = dense_eigenvalues(&j);
        for (a, b) in fast.iter().zip(&dense) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs(), "{a} vs {b}");
        }
    }

    #[test]
    fn swapping_roles_preserves_the_spectrum(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(2..=20);
        let outcomes: Vec<f64> = (0..n).map(|_| r.random_range(0.0..3.0)).collect();
        let (alpha, beta) = (r.random_range(0.1..10.0), r.random_range(0.1..10.0));
        let pp = random_beliefs(&mut r, n, 0.1, 1.0);
        let pc = random_beliefs(&mut r, n, 0.1, 1.0);
        let a = MarketInstance::new(MarketParams::new(alpha, beta, 5.0, outcomes.clone())).unwrap()
            .with_producer_beliefs(pp.clone()).unwrap()
            .with_consumer_beliefs(pc.clone()).unwrap();
        // D_ω = 1/(π^c β) + 1/(π^p α) is unchanged when both pairs swap
        let b = MarketInstance::new(MarketParams::new(beta, alpha, 5.0, outcomes)).unwrap()
            .with_producer_beliefs(pc).unwrap()
            .with_consumer_beliefs(pp).unwrap();
        let ea = eigenvalues(&jacobian(&a)).unwrap();
        let eb = eigenvalues(&jacobian(&b)).unwrap();
        for (x, y) in ea.iter().zip(&eb) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs());
        }
    }

    #[test]
    fn welfare_rises_with_renewable_output(seed in any::<u64>()) {
        let m = random_asymmetric_instance(&mut rng(seed));
        let eq = exact_equilibrium(&m).unwrap();
        let w = welfare_per_outcome(eq.dispatch.p, eq.dispatch.d, &m).unwrap();
        let mut order: Vec<usize> = (0..m.n_outcomes()).collect();
        order.sort_by(|&i, &j| m.outcomes()[i].total_cmp(&m.outcomes()[j]));
        for pair in order.windows(2) {
            prop_assert!(w.per_outcome[pair[1]] >= w.per_outcome[pair[0]] - 1e-9);
        }
    }
}

#[test]
fn mean_falls_as_delta_grows() {
    for seed in [1u64, 2, 3] {
        let samples = sample_reference(100, 1.5, 0.25, seed).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=100 {
            let delta = 0.1 * 100f64.powf(k as f64 / 100.0);
            let b = discretize(&samples, WeightingParams::new(delta, 1.0).unwrap());
            let mean = weighted_stats(&samples, &b).unwrap().mean;
            assert!(mean <= prev + 1e-12, "seed {seed}, delta {delta}");
            prev = mean;
        }
    }
}

#[test]
fn distinct_starts_reach_one_equilibrium() {
    let mut r = rng(77);
    for _ in 0..10 {
        let m = random_clearing_instance(&mut r);
        let base = tight_solver(&m);
        let reference = exact_equilibrium(&m).unwrap();
        for _ in 0..10 {
            let l0 = (0..m.n_outcomes())
                .map(|_| r.random_range(0.0..5.0))
                .collect();
            let cfg = infomarket::equilibrium::SolverConfig {
                lambda0: Some(infomarket::PriceVector::new(l0).unwrap()),
                ..base.clone()
            };
            let res = tatonnement(&m, &cfg).unwrap();
            assert!(res.converged);
            assert!(max_abs_diff(&res.prices, &reference.prices) <= 1e-4);
        }
    }
}
