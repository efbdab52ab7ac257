//! Best responses of the producer and consumer, and the price-setter step.
//!
//! Both agent objectives are separable quadratics over a box, so the exact
//! maximizer is the unconstrained stationary point clamped coordinatewise.
//! Prices enter probability-weighted (`λ_ω` rather than `λ_ω / π_ω`); the
//! clamping tests compare against `π_ω·bound` instead of dividing first.

use serde::Serialize;

use crate::market::{DispatchSchedule, Interval, MarketInstance, PriceVector};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProducerResponse {
    pub p: f64,
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsumerResponse {
    pub d: f64,
    pub l: Vec<f64>,
}

/// Maximizer of `x ↦ a·x − ½·k·x²` over `box_`, written with `a` and `k`
/// scaled by the same positive weight.
fn clamp_quadratic(slope: f64, curvature: f64, box_: &Interval) -> f64 {
    if slope <= curvature * box_.lo {
        box_.lo
    } else if slope >= curvature * box_.hi {
        box_.hi
    } else {
        slope / curvature
    }
}

/// Producer's expected-profit maximizer for the given prices.
pub fn producer_best_response(prices: &[f64], instance: &MarketInstance) -> ProducerResponse {
    debug_assert_eq!(prices.len(), instance.n_outcomes());
    let alpha = instance.alpha();
    let set = instance.producer_set();
    let total: f64 = prices.iter().sum();
    let p = clamp_quadratic(total, alpha, &set.first_stage);
    let r = prices
        .iter()
        .zip(instance.producer_beliefs().iter())
        .zip(&set.recourse)
        .map(|((&lambda, &pi), b)| clamp_quadratic(lambda, pi * alpha, b))
        .collect();
    ProducerResponse { p, r }
}

/// Consumer's expected-utility maximizer for the given prices.
pub fn consumer_best_response(prices: &[f64], instance: &MarketInstance) -> ConsumerResponse {
    debug_assert_eq!(prices.len(), instance.n_outcomes());
    let (beta, gamma) = (instance.beta(), instance.gamma_u());
    let set = instance.consumer_set();
    let total: f64 = prices.iter().sum();
    let d = clamp_quadratic(gamma - total, beta, &set.first_stage);
    let l = prices
        .iter()
        .zip(instance.consumer_beliefs().iter())
        .zip(&set.recourse)
        .map(|((&lambda, &pi), b)| clamp_quadratic(pi * gamma - lambda, pi * beta, b))
        .collect();
    ConsumerResponse { d, l }
}

/// Both responses assembled into one schedule.
pub fn best_responses(prices: &[f64], instance: &MarketInstance) -> DispatchSchedule {
    let ProducerResponse { p, r } = producer_best_response(prices, instance);
    let ConsumerResponse { d, l } = consumer_best_response(prices, instance);
    DispatchSchedule { p, r, d, l }
}

/// Stationary points of both agents ignoring their boxes.
pub fn unconstrained_responses(prices: &[f64], instance: &MarketInstance) -> DispatchSchedule {
    let (alpha, beta, gamma) = (instance.alpha(), instance.beta(), instance.gamma_u());
    let total: f64 = prices.iter().sum();
    let pp = instance.producer_beliefs();
    let pc = instance.consumer_beliefs();
    DispatchSchedule {
        p: total / alpha,
        r: prices
            .iter()
            .zip(pp.iter())
            .map(|(l, pi)| l / (pi * alpha))
            .collect(),
        d: (gamma - total) / beta,
        l: prices
            .iter()
            .zip(pc.iter())
            .map(|(l, pi)| (pi * gamma - l) / (pi * beta))
            .collect(),
    }
}

/// Producer expected profit `Σ_ω [λ_ω (p + r_ω) − π_ω c(r_ω)] − c(p)`.
pub fn producer_objective(p: f64, r: &[f64], prices: &[f64], instance: &MarketInstance) -> f64 {
    let recourse: f64 = prices
        .iter()
        .zip(r)
        .zip(instance.producer_beliefs().iter())
        .map(|((l, r), pi)| l * (p + r) - pi * instance.cost(*r))
        .sum();
    recourse - instance.cost(p)
}

/// Consumer expected utility `Σ_ω [π_ω u(l_ω) − λ_ω (d + l_ω)] + u(d)`.
pub fn consumer_objective(d: f64, l: &[f64], prices: &[f64], instance: &MarketInstance) -> f64 {
    let recourse: f64 = prices
        .iter()
        .zip(l)
        .zip(instance.consumer_beliefs().iter())
        .map(|((lam, l), pi)| pi * instance.utility(*l) - lam * (d + l))
        .sum();
    recourse + instance.utility(d)
}

/// Gradient of [`producer_objective`] as `(∂p, ∂r)`.
pub fn producer_gradient(
    p: f64,
    r: &[f64],
    prices: &[f64],
    instance: &MarketInstance,
) -> (f64, Vec<f64>) {
    let alpha = instance.alpha();
    let dp = prices.iter().sum::<f64>() - alpha * p;
    let dr = prices
        .iter()
        .zip(r)
        .zip(instance.producer_beliefs().iter())
        .map(|((l, r), pi)| l - pi * alpha * r)
        .collect();
    (dp, dr)
}

/// Gradient of [`consumer_objective`] as `(∂d, ∂l)`.
pub fn consumer_gradient(
    d: f64,
    l: &[f64],
    prices: &[f64],
    instance: &MarketInstance,
) -> (f64, Vec<f64>) {
    let (beta, gamma) = (instance.beta(), instance.gamma_u());
    let dd = gamma - beta * d - prices.iter().sum::<f64>();
    let dl = prices
        .iter()
        .zip(l)
        .zip(instance.consumer_beliefs().iter())
        .map(|((lam, l), pi)| pi * (gamma - beta * l) - lam)
        .collect();
    (dd, dl)
}

/// Projected price step `λ_ω ← max{0, λ_ω − ρ·imbalance_ω}`.
pub fn price_update(
    prices: &[f64],
    dispatch: &DispatchSchedule,
    instance: &MarketInstance,
    rho: f64,
) -> PriceVector {
    debug_assert!(rho > 0.0);
    let next = prices
        .iter()
        .zip(instance.outcomes())
        .enumerate()
        .map(|(w, (&lambda, &xi))| (lambda - rho * dispatch.imbalance(w, xi)).max(0.0))
        .collect();
    PriceVector::new(next).unwrap_or_else(|e| panic!("projected prices are non-negative: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{BoxSet, MarketParams};
    use approx::assert_relative_eq;

    fn symmetric() -> MarketInstance {
        MarketInstance::two_outcome(0.5, 0.5).unwrap()
    }

    /// Coordinate-wise golden-section ascent; slow but independent of the
    /// closed form.
    fn golden_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) >= f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn zero_prices_give_idle_producer_and_satiated_consumer() {
        let m = symmetric();
        let pr = producer_best_response(&[0.0, 0.0], &m);
        assert_eq!((pr.p, pr.r.clone()), (0.0, vec![0.0, 0.0]));
        let cr = consumer_best_response(&[0.0, 0.0], &m);
        assert_relative_eq!(cr.d, 5.0 / 0.3, epsilon = 1e-12);
        for l in cr.l {
            assert_relative_eq!(l, 5.0 / 0.3, epsilon = 1e-12);
        }
    }

    #[test]
    fn producer_response_matches_numeric_ascent() {
        let m = symmetric();
        let prices = [0.5, 0.5];
        let pr = producer_best_response(&prices, &m);
        assert_relative_eq!(pr.p, 1.0 / 1.5, epsilon = 1e-12);
        assert_relative_eq!(pr.r[0], 0.5 / 0.75, epsilon = 1e-12);
        // the objective is separable, so maximize each coordinate alone
        let p_num = golden_max(|p| producer_objective(p, &pr.r, &prices, &m), 0.0, 50.0);
        let r0_num = golden_max(
            |r| producer_objective(pr.p, &[r, pr.r[1]], &prices, &m),
            0.0,
            50.0,
        );
        assert!((p_num - pr.p).abs() < 1e-6);
        assert!((r0_num - pr.r[0]).abs() < 1e-6);
    }

    #[test]
    fn responses_at_the_symmetric_equilibrium() {
        let m = symmetric();
        let prices = [25.0 / 12.0, 11.0 / 6.0];
        let pr = producer_best_response(&prices, &m);
        let cr = consumer_best_response(&prices, &m);
        assert_relative_eq!(pr.p, 2.6111111111, epsilon = 1e-9);
        assert_relative_eq!(cr.d, 3.6111111111, epsilon = 1e-9);
        assert_relative_eq!(cr.l[0], 2.7777777778, epsilon = 1e-9);
        let ds = best_responses(&prices, &m);
        for (w, xi) in m.outcomes().iter().enumerate() {
            assert!(ds.imbalance(w, *xi).abs() < 1e-12);
        }
    }

    #[test]
    fn expensive_energy_drives_day_ahead_demand_to_zero() {
        let m = symmetric();
        let cr = consumer_best_response(&[3.0, 2.5], &m);
        assert_eq!(cr.d, 0.0);
    }

    #[test]
    fn price_update_cases() {
        let m = symmetric();
        let at_eq = best_responses(&[25.0 / 12.0, 11.0 / 6.0], &m);
        let next = price_update(&[25.0 / 12.0, 11.0 / 6.0], &at_eq, &m, 0.1);
        assert_relative_eq!(next[0], 25.0 / 12.0, epsilon = 1e-12);

        // surplus at zero price stays at zero
        let surplus = DispatchSchedule {
            p: 10.0,
            r: vec![0.0, 0.0],
            d: 0.0,
            l: vec![0.0, 0.0],
        };
        assert_eq!(&*price_update(&[0.0, 0.0], &surplus, &m, 0.1), &[0.0, 0.0]);

        // shortage of 2 in outcome 0 raises its price by ρ·2
        let shortage = DispatchSchedule {
            p: 0.0,
            r: vec![0.0, 0.0],
            d: 3.0,
            l: vec![0.0, 4.0],
        };
        let next = price_update(&[1.0, 1.0], &shortage, &m, 0.1);
        assert_relative_eq!(next[0], 1.2, epsilon = 1e-12);
    }

    #[test]
    fn tight_boxes_are_respected() {
        let mut params = MarketParams::new(1.0, 1.0, 4.0, vec![0.0, 1.0]);
        params.producer_set = Some(BoxSet::uniform(2, 0.5, 1.0));
        params.consumer_set = Some(BoxSet::uniform(2, 1.0, 2.0));
        let m = MarketInstance::new(params).unwrap();
        let pr = producer_best_response(&[5.0, 0.0], &m);
        assert_eq!((pr.p, pr.r[0], pr.r[1]), (1.0, 1.0, 0.5));
        let cr = consumer_best_response(&[5.0, 0.0], &m);
        assert_eq!((cr.d, cr.l[0], cr.l[1]), (1.0, 1.0, 2.0));
    }
}
