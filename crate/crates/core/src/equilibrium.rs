//! Equilibrium computation.
//!
//! * [`tatonnement`]: the distributed price-adjustment loop. Agents answer the
//!   current prices with their best responses, then the price-setter moves
//!   each outcome price against that outcome's imbalance.
//! * [`analytic_equilibrium`]: the root of the demand-excess map, valid when
//!   no bound is active.
//! * [`centralized_clear`]: the operator's two-stage stochastic clearing,
//!   solved as the common-belief equilibrium and checked against a dense KKT
//!   solve when that solve lands inside every bound.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::agents::{best_responses, unconstrained_responses};
use crate::analysis::{demand_excess, jacobian, stability};
use crate::error::{Error, Result};
use crate::market::{BeliefSet, DispatchSchedule, MarketInstance, PriceVector};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Constant price step ρ.
    pub rho: f64,
    /// Stop once every squared imbalance is ≤ ε.
    pub epsilon: f64,
    pub nu_max: usize,
    /// Starting prices; zeros when absent.
    pub lambda0: Option<PriceVector>,
    pub trace_enabled: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rho: 1e-5,
            epsilon: 1e-5,
            nu_max: 1_000_000,
            lambda0: None,
            trace_enabled: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Parameter(format!(
                "rho must be positive, got {}",
                self.rho
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Parameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.nu_max == 0 {
            return Err(Error::Parameter("nu_max must be at least 1".into()));
        }
        if let Some(l0) = &self.lambda0 {
            if l0.len() != n {
                return Err(Error::LengthMismatch {
                    what: "lambda0",
                    expected: n,
                    got: l0.len(),
                });
            }
        }
        Ok(())
    }

    /// Sets ρ to the reciprocal of the largest Jacobian eigenvalue magnitude,
    /// the longest step for which the price iteration is a contraction.
    pub fn with_stable_step(mut self, instance: &MarketInstance) -> Result<Self> {
        let report = stability(instance)?;
        self.rho = 1.0 / report.min_eig.abs();
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub max_sq_imbalance: f64,
    pub day_ahead_price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumResult {
    pub prices: PriceVector,
    pub dispatch: DispatchSchedule,
    pub iterations: usize,
    pub converged: bool,
    /// Largest squared per-outcome imbalance of the returned dispatch.
    pub residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceRow>>,
}

impl EquilibriumResult {
    pub fn day_ahead_price(&self) -> f64 {
        self.prices.day_ahead()
    }
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Internal(format!("writing trace: {e}"));
    w.write_record(["iteration", "max_sq_imbalance", "day_ahead_price"])
        .map_err(io)?;
    for row in trace {
        w.write_record([
            row.iteration.to_string(),
            format!("{:e}", row.max_sq_imbalance),
            row.day_ahead_price.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::Internal(format!("writing trace: {e}")))?;
    Ok(())
}

fn max_sq_imbalance(dispatch: &DispatchSchedule, outcomes: &[f64]) -> f64 {
    outcomes
        .iter()
        .enumerate()
        .map(|(w, &xi)| dispatch.imbalance(w, xi).powi(2))
        .fold(0.0, f64::max)
}

/// Walrasian tatonnement with constant step.
///
/// Each iteration computes both best responses to the current prices, takes
/// a projected price step, and stops once every squared imbalance is at
/// most ε. Running out of iterations is reported through `converged`, not
/// as an error.
pub fn tatonnement(instance: &MarketInstance, config: &SolverConfig) -> Result<EquilibriumResult> {
    let n = instance.n_outcomes();
    config.validate(n)?;
    let xi = instance.outcomes();
    let mut prices: Vec<f64> = match &config.lambda0 {
        Some(l0) => l0.to_vec(),
        None => vec![0.0; n],
    };
    let mut trace = config.trace_enabled.then(Vec::new);
    let mut next = vec![0.0; n];
    let mut last = None;

    for nu in 1..=config.nu_max {
        let dispatch = best_responses(&prices, instance);
        let mut residual = 0.0f64;
        for w in 0..n {
            let imbalance = dispatch.imbalance(w, xi[w]);
            residual = residual.max(imbalance * imbalance);
            next[w] = (prices[w] - config.rho * imbalance).max(0.0);
        }
        if !residual.is_finite() || next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric {
                iteration: nu,
                what: "prices or imbalances overflowed".into(),
            });
        }
        std::mem::swap(&mut prices, &mut next);
        if let Some(t) = trace.as_mut() {
            t.push(TraceRow {
                iteration: nu,
                max_sq_imbalance: residual,
                day_ahead_price: prices.iter().sum(),
            });
        }
        let converged = residual <= config.epsilon;
        last = Some((dispatch, residual, nu));
        if converged {
            break;
        }
    }

    let (dispatch, residual, iterations) = last.expect("nu_max ≥ 1");
    Ok(EquilibriumResult {
        prices: PriceVector::new(prices)?,
        dispatch,
        iterations,
        converged: residual <= config.epsilon,
        residual,
        trace,
    })
}

/// Root of the unconstrained demand-excess map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalyticEquilibrium {
    /// Solution of `z(λ) = 0`; may contain negative entries when not interior.
    pub lambda: Vec<f64>,
    /// `λ ≥ 0` and the implied dispatch lies strictly inside every box. Only
    /// then is `lambda` the equilibrium.
    pub interior: bool,
}

impl AnalyticEquilibrium {
    pub fn day_ahead_price(&self) -> f64 {
        self.lambda.iter().sum()
    }
}

/// Solves `z(λ) = 0` in O(Ω) using the diagonal-plus-rank-one Jacobian.
pub fn analytic_equilibrium(instance: &MarketInstance) -> Result<AnalyticEquilibrium> {
    let n = instance.n_outcomes();
    // z is affine: z(λ) = z(0) + J λ
    let z0 = demand_excess(&vec![0.0; n], instance);
    let rhs: Vec<f64> = z0.iter().map(|v| -v).collect();
    let lambda = jacobian(instance).solve(&rhs);
    if lambda.iter().any(|x| !x.is_finite()) {
        return Err(Error::Internal("demand-excess system is singular".into()));
    }
    let interior = lambda.iter().all(|&x| x >= 0.0)
        && strictly_inside(&unconstrained_responses(&lambda, instance), instance);
    Ok(AnalyticEquilibrium { lambda, interior })
}

fn strictly_inside(ds: &DispatchSchedule, instance: &MarketInstance) -> bool {
    let ps = instance.producer_set();
    let cs = instance.consumer_set();
    ps.first_stage.strictly_contains(ds.p)
        && cs.first_stage.strictly_contains(ds.d)
        && ds
            .r
            .iter()
            .zip(&ps.recourse)
            .all(|(x, b)| b.strictly_contains(*x))
        && ds
            .l
            .iter()
            .zip(&cs.recourse)
            .all(|(x, b)| b.strictly_contains(*x))
}

/// Equilibrium from the closed form when it is interior, otherwise from
/// [`tatonnement`] with `fallback`. The closed-form path reports zero
/// iterations.
pub fn solve(instance: &MarketInstance, fallback: &SolverConfig) -> Result<EquilibriumResult> {
    let analytic = analytic_equilibrium(instance)?;
    if !analytic.interior {
        return tatonnement(instance, fallback);
    }
    let dispatch = best_responses(&analytic.lambda, instance);
    let residual = max_sq_imbalance(&dispatch, instance.outcomes());
    Ok(EquilibriumResult {
        prices: PriceVector::new(analytic.lambda)?,
        dispatch,
        iterations: 0,
        converged: true,
        residual,
        trace: None,
    })
}

/// Bisection steps used by [`exact_equilibrium`] at each nesting level.
const BISECTION_STEPS: usize = 200;

/// Equilibrium including active bounds, by nested bisection.
///
/// With the total price `T = Σλ` fixed, the day-ahead responses are fixed,
/// and each outcome price solves a monotone scalar equation
/// `l_ω(λ_ω) − r_ω(λ_ω) = ξ_ω + p(T) − d(T)`, or is zero when that outcome
/// already has surplus at zero price. The implied `Σλ_ω(T)` is
/// non-increasing in `T`, so the fixed point `T = Σλ_ω(T)` is bracketed and
/// bisected. `residual` reports the largest squared complementarity
/// violation, and `iterations` is zero.
pub fn exact_equilibrium(instance: &MarketInstance) -> Result<EquilibriumResult> {
    let n = instance.n_outcomes();
    let (alpha, beta, gamma) = (instance.alpha(), instance.beta(), instance.gamma_u());
    let ps = instance.producer_set();
    let cs = instance.consumer_set();
    let pp = instance.producer_beliefs();
    let pc = instance.consumer_beliefs();
    let xi = instance.outcomes();

    let recourse_gap = |w: usize, lambda: f64| {
        let r = ps.recourse[w].clamp(lambda / (pp[w] * alpha));
        let l = cs.recourse[w].clamp((pc[w] * gamma - lambda) / (pc[w] * beta));
        l - r
    };
    let outcome_price = |w: usize, target: f64| -> Result<f64> {
        if recourse_gap(w, 0.0) <= target {
            return Ok(0.0);
        }
        let mut hi = 1.0;
        while recourse_gap(w, hi) > target {
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(Error::Infeasible { outcome: w });
            }
        }
        let mut lo = 0.0;
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if recourse_gap(w, mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    };
    let prices_for = |total: f64| -> Result<Vec<f64>> {
        let p = ps.first_stage.clamp(total / alpha);
        let d = cs.first_stage.clamp((gamma - total) / beta);
        (0..n).map(|w| outcome_price(w, xi[w] + p - d)).collect()
    };
    let excess = |total: f64| -> Result<f64> { Ok(prices_for(total)?.iter().sum::<f64>() - total) };

    let mut hi = 1.0;
    while excess(hi)? > 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Internal("total price is unbounded".into()));
        }
    }
    let mut lo = 0.0;
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if excess(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let prices = prices_for(0.5 * (lo + hi))?;
    let dispatch = best_responses(&prices, instance);
    let residual = prices
        .iter()
        .enumerate()
        .map(|(w, &lambda)| {
            let imbalance = dispatch.imbalance(w, xi[w]);
            let violation = if lambda > 0.0 {
                imbalance
            } else {
                imbalance.min(0.0)
            };
            violation * violation
        })
        .fold(0.0, f64::max);
    Ok(EquilibriumResult {
        prices: PriceVector::new(prices)?,
        dispatch,
        iterations: 0,
        converged: true,
        residual,
        trace: None,
    })
}

/// `λ^DA = Σ_ω λ_ω`.
pub fn day_ahead_price(prices: &[f64]) -> f64 {
    prices.iter().sum()
}

/// Expected social welfare `u(d) − c(p) + Σ_ω π_ω [u(l_ω) − c(r_ω)]`.
pub fn expected_welfare(
    dispatch: &DispatchSchedule,
    instance: &MarketInstance,
    beliefs: &BeliefSet,
) -> f64 {
    let recourse: f64 = beliefs
        .iter()
        .zip(dispatch.r.iter().zip(&dispatch.l))
        .map(|(pi, (r, l))| pi * (instance.utility(*l) - instance.cost(*r)))
        .sum();
    instance.utility(dispatch.d) - instance.cost(dispatch.p) + recourse
}

/// Welfare each agent's own beliefs attribute to `dispatch`:
/// `u(d) − c(p) + Σ π^c_ω u(l_ω) − Σ π^p_ω c(r_ω)`. Its constrained maximizer
/// is the equilibrium dispatch.
pub fn potential(dispatch: &DispatchSchedule, instance: &MarketInstance) -> f64 {
    let consumer: f64 = instance
        .consumer_beliefs()
        .iter()
        .zip(&dispatch.l)
        .map(|(pi, l)| pi * instance.utility(*l))
        .sum();
    let producer: f64 = instance
        .producer_beliefs()
        .iter()
        .zip(&dispatch.r)
        .map(|(pi, r)| pi * instance.cost(*r))
        .sum();
    instance.utility(dispatch.d) - instance.cost(dispatch.p) + consumer - producer
}

/// Solution of the full KKT system of [`potential`] under equality balance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktSolution {
    pub dispatch: DispatchSchedule,
    pub duals: Vec<f64>,
}

/// Dense LU solve of the stationarity and balance equations in
/// `(p, r, d, l, λ)`, ignoring every bound. Returns `None` unless the
/// solution has non-negative duals and respects every box.
pub fn kkt_interior_solve(instance: &MarketInstance) -> Result<Option<KktSolution>> {
    let n = instance.n_outcomes();
    let (alpha, beta, gamma) = (instance.alpha(), instance.beta(), instance.gamma_u());
    let pp = instance.producer_beliefs();
    let pc = instance.consumer_beliefs();
    let size = 3 * n + 2;
    let (ip, ir, id, il, ilam) = (0, 1, n + 1, n + 2, 2 * n + 2);
    let mut a = DMatrix::<f64>::zeros(size, size);
    let mut b = DVector::<f64>::zeros(size);

    // ∂/∂p: −αp + Σλ = 0
    a[(ip, ip)] = -alpha;
    // ∂/∂d: γ − βd − Σλ = 0
    a[(id, id)] = -beta;
    b[id] = -gamma;
    for w in 0..n {
        a[(ip, ilam + w)] = 1.0;
        a[(id, ilam + w)] = -1.0;
        // ∂/∂r_ω: λ_ω − π^p_ω α r_ω = 0
        a[(ir + w, ir + w)] = -pp[w] * alpha;
        a[(ir + w, ilam + w)] = 1.0;
        // ∂/∂l_ω: π^c_ω (γ − β l_ω) − λ_ω = 0
        a[(il + w, il + w)] = -pc[w] * beta;
        a[(il + w, ilam + w)] = -1.0;
        b[il + w] = -pc[w] * gamma;
        // p + r_ω + ξ_ω − d − l_ω = 0
        let row = ilam + w;
        a[(row, ip)] = 1.0;
        a[(row, ir + w)] = 1.0;
        a[(row, id)] = -1.0;
        a[(row, il + w)] = -1.0;
        b[row] = -instance.outcomes()[w];
    }

    let x = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Internal("KKT matrix is singular".into()))?;
    let dispatch = DispatchSchedule {
        p: x[ip],
        r: (0..n).map(|w| x[ir + w]).collect(),
        d: x[id],
        l: (0..n).map(|w| x[il + w]).collect(),
    };
    let duals: Vec<f64> = (0..n).map(|w| x[ilam + w]).collect();
    if duals.iter().all(|&v| v >= 0.0) && dispatch.within(instance, 0.0) {
        Ok(Some(KktSolution { dispatch, duals }))
    } else {
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CentralizedClearing {
    pub dispatch: DispatchSchedule,
    /// Duals of the per-outcome balance constraints.
    pub duals: PriceVector,
    /// Expected welfare under the operator's beliefs.
    pub welfare: f64,
    pub iterations: usize,
    /// `‖λ − λ_KKT‖∞` when the dense KKT solve is interior.
    pub kkt_gap: Option<f64>,
}

/// Two-stage stochastic clearing under the operator's beliefs.
///
/// With every agent holding the operator's beliefs, the equilibrium prices
/// are the balance duals and the equilibrium dispatch is the clearing
/// dispatch, so the clearing runs [`tatonnement`] on that instance.
pub fn centralized_clear(
    instance: &MarketInstance,
    config: &SolverConfig,
) -> Result<CentralizedClearing> {
    let operator = instance
        .operator_beliefs()
        .ok_or_else(|| Error::Parameter("centralized clearing needs operator_beliefs".into()))?
        .clone();
    let common = instance.with_common_beliefs(&operator)?;
    let result = tatonnement(&common, config)?;
    if !result.converged {
        return Err(Error::NotConverged {
            iterations: result.iterations,
            residual: result.residual,
        });
    }
    let kkt_gap = kkt_interior_solve(&common)?.map(|k| {
        k.duals
            .iter()
            .zip(result.prices.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    });
    Ok(CentralizedClearing {
        welfare: expected_welfare(&result.dispatch, &common, &operator),
        dispatch: result.dispatch,
        duals: result.prices,
        iterations: result.iterations,
        kkt_gap,
    })
}
