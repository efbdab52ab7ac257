//! Demand excess, its Jacobian spectrum, the continuous price dynamics
//! `dλ/dt = τ z(λ)` and ex-post welfare accounting.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{BeliefSet, MarketInstance, PriceVector};

/// Demand minus supply per outcome at the unconstrained best responses:
///
/// `z_ω = (γ − Σλ)/β + (π^c_ω γ − λ_ω)/(π^c_ω β) − Σλ/α − λ_ω/(π^p_ω α) − ξ_ω`.
pub fn demand_excess(prices: &[f64], instance: &MarketInstance) -> Vec<f64> {
    let (alpha, beta, gamma) = (instance.alpha(), instance.beta(), instance.gamma_u());
    let total: f64 = prices.iter().sum();
    let first_stage = (gamma - total) / beta - total / alpha;
    prices
        .iter()
        .zip(instance.consumer_beliefs().iter())
        .zip(instance.producer_beliefs().iter())
        .zip(instance.outcomes())
        .map(|(((&lam, &pc), &pp), &xi)| {
            first_stage + (pc * gamma - lam) / (pc * beta) - lam / (pp * alpha) - xi
        })
        .collect()
}

/// Jacobian of [`demand_excess`], `J = −s·11ᵀ − diag(D)`, kept in its
/// diagonal-plus-rank-one form.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Jacobian {
    /// Rank-one weight `1/α + 1/β`.
    pub s: f64,
    /// Diagonal `D_ω = 1/(π^c_ω β) + 1/(π^p_ω α)`.
    pub diag: Vec<f64>,
}

impl Jacobian {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        -self.s - if i == j { self.diag[i] } else { 0.0 }
    }

    pub fn dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.n(), |i, j| self.entry(i, j))
    }

    /// `J⁻¹ v` via Sherman–Morrison, O(n).
    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        // (diag(D) + s·11ᵀ)⁻¹ applied to −v
        let dinv_v: Vec<f64> = v.iter().zip(&self.diag).map(|(x, d)| x / d).collect();
        let sum_dinv: f64 = self.diag.iter().map(|d| 1.0 / d).sum();
        let sum_dinv_v: f64 = dinv_v.iter().sum();
        let k = self.s * sum_dinv_v / (1.0 + self.s * sum_dinv);
        dinv_v
            .iter()
            .zip(&self.diag)
            .map(|(x, d)| -(x - k / d))
            .collect()
    }
}

pub fn jacobian(instance: &MarketInstance) -> Jacobian {
    let (alpha, beta) = (instance.alpha(), instance.beta());
    Jacobian {
        s: 1.0 / alpha + 1.0 / beta,
        diag: instance
            .consumer_beliefs()
            .iter()
            .zip(instance.producer_beliefs().iter())
            .map(|(pc, pp)| 1.0 / (pc * beta) + 1.0 / (pp * alpha))
            .collect(),
    }
}

/// Relative gap under which two diagonal entries are merged before the
/// secular solve.
const DEFLATION_TOLERANCE: f64 = 1e-14;

/// Spectrum of `J`, ascending, from the secular equation
/// `1 + s Σ_g m_g / (D_g − μ) = 0` of the positive matrix `diag(D) + s·11ᵀ`.
///
/// Equal diagonal entries are deflated first: a group of `m` equal values
/// contributes `m − 1` eigenvalues at that value and one secular pole of
/// weight `m`.
pub fn eigenvalues(jac: &Jacobian) -> Result<Vec<f64>> {
    let n = jac.n();
    if n == 0 {
        return Ok(Vec::new());
    }
    if !(jac.s > 0.0 && jac.s.is_finite()) || jac.diag.iter().any(|d| !(*d > 0.0 && d.is_finite()))
    {
        return Err(Error::Internal(
            "secular solve needs a positive rank-one weight and positive diagonal".into(),
        ));
    }
    let mut d = jac.diag.clone();
    d.sort_by(f64::total_cmp);
    let scale = d[n - 1];

    // (pole, multiplicity)
    let mut poles: Vec<(f64, f64)> = Vec::with_capacity(n);
    let mut spectrum = Vec::with_capacity(n);
    for &x in &d {
        match poles.last_mut() {
            Some((v, m)) if x - *v <= DEFLATION_TOLERANCE * scale => {
                spectrum.push(*v);
                *m += 1.0;
            }
            _ => poles.push((x, 1.0)),
        }
    }

    let s = jac.s;
    let total_weight = n as f64;
    for k in 0..poles.len() {
        let origin = poles[k].0;
        let width = match poles.get(k + 1) {
            Some(next) => next.0 - origin,
            None => s * total_weight,
        };
        // f(origin + t), increasing in t on (0, width)
        let f = |t: f64| -> f64 {
            1.0 + s * poles
                .iter()
                .map(|(p, m)| m / ((p - origin) - t))
                .sum::<f64>()
        };
        let (mut a, mut b) = (0.0f64, width);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b || b - a <= 2.0 * f64::EPSILON * (origin + b) {
                break;
            }
            let v = f(mid);
            if v.is_nan() {
                return Err(Error::Internal(format!(
                    "secular function undefined near pole {k}"
                )));
            }
            if v < 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        let root = origin + 0.5 * (a + b);
        if !(root >= origin && root <= origin + width) {
            return Err(Error::Internal(format!("secular root {k} not bracketed")));
        }
        spectrum.push(root);
    }

    let mut out: Vec<f64> = spectrum.into_iter().map(|x| -x).collect();
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Dense symmetric eigensolve of `J`, ascending. Intended for small `n`.
pub fn dense_eigenvalues(jac: &Jacobian) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(jac.dense())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    LocallyStable,
    Unstable,
    Inconclusive,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::LocallyStable => "locally_stable",
            Verdict::Unstable => "unstable",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityReport {
    pub eigenvalues: Vec<f64>,
    pub min_eig: f64,
    pub max_eig: f64,
    /// `max|eig| / min|eig|`.
    pub ratio: f64,
    pub verdict: Verdict,
}

const ZERO_EIGENVALUE: f64 = 1e-12;

pub fn stability(instance: &MarketInstance) -> Result<StabilityReport> {
    let eigenvalues = eigenvalues(&jacobian(instance))?;
    let min_eig = eigenvalues[0];
    let max_eig = *eigenvalues.last().unwrap();
    let abs_max = eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let abs_min = eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, x| m.min(x.abs()));
    let verdict = if max_eig.abs() <= ZERO_EIGENVALUE {
        Verdict::Inconclusive
    } else if max_eig < 0.0 {
        Verdict::LocallyStable
    } else {
        Verdict::Unstable
    };
    Ok(StabilityReport {
        ratio: abs_max / abs_min,
        eigenvalues,
        min_eig,
        max_eig,
        verdict,
    })
}

/// A point of the price space with the velocity `τ·z` there.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldSample {
    pub point: PriceVector,
    pub velocity: Vec<f64>,
}

/// Integrated path of the price dynamics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub points: Vec<Vec<f64>>,
    /// `true` when `‖z‖∞` dropped below the stopping threshold before the
    /// step cap; `false` marks a partial trajectory.
    pub reached_rest: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceField {
    pub samples: Vec<FieldSample>,
    pub trajectory: Trajectory,
}

pub const TRAJECTORY_STOP: f64 = 1e-6;
pub const TRAJECTORY_STEP_CAP: usize = 200_000;

/// Velocities of `dλ/dt = τ z(λ)` on `grid`, plus one RK4 trajectory from
/// `start` with fixed step `h = 0.01/τ`.
pub fn price_field(
    instance: &MarketInstance,
    grid: &[PriceVector],
    tau: f64,
    start: &[f64],
) -> Result<PriceField> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Parameter(format!("tau must be positive, got {tau}")));
    }
    instance.check_prices(start)?;
    let mut samples = Vec::with_capacity(grid.len());
    for point in grid {
        instance.check_prices(point)?;
        let velocity = demand_excess(point, instance)
            .into_iter()
            .map(|z| tau * z)
            .collect();
        samples.push(FieldSample {
            point: point.clone(),
            velocity,
        });
    }
    let trajectory = integrate(instance, start, tau, TRAJECTORY_STEP_CAP);
    Ok(PriceField {
        samples,
        trajectory,
    })
}

/// Fixed-step RK4 on `dλ/dt = τ z(λ)`.
pub fn integrate(
    instance: &MarketInstance,
    start: &[f64],
    tau: f64,
    step_cap: usize,
) -> Trajectory {
    let h = 0.01 / tau;
    let field = |x: &[f64]| -> Vec<f64> {
        demand_excess(x, instance)
            .into_iter()
            .map(|z| tau * z)
            .collect()
    };
    let axpy = |x: &[f64], a: f64, k: &[f64]| -> Vec<f64> {
        x.iter().zip(k).map(|(x, k)| x + a * k).collect()
    };
    let norm_inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let mut x = start.to_vec();
    let mut points = vec![x.clone()];
    for _ in 0..step_cap {
        if norm_inf(&demand_excess(&x, instance)) <= TRAJECTORY_STOP {
            return Trajectory {
                points,
                reached_rest: true,
            };
        }
        let k1 = field(&x);
        let k2 = field(&axpy(&x, 0.5 * h, &k1));
        let k3 = field(&axpy(&x, 0.5 * h, &k2));
        let k4 = field(&axpy(&x, h, &k3));
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            break;
        }
        points.push(x.clone());
    }
    let reached_rest = x.iter().all(|v| v.is_finite())
        && norm_inf(&demand_excess(&x, instance)) <= TRAJECTORY_STOP;
    Trajectory {
        points,
        reached_rest,
    }
}

/// Realized welfare per outcome for fixed day-ahead contracts, with the
/// welfare-optimal real-time re-dispatch in each outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExPostWelfare {
    pub p: f64,
    pub d: f64,
    pub r: Vec<f64>,
    pub l: Vec<f64>,
    /// `[u(d) − c(p)] + [u(l_ω) − c(r_ω)]`.
    pub per_outcome: Vec<f64>,
}

impl ExPostWelfare {
    pub fn expected(&self, beliefs: &BeliefSet) -> Result<f64> {
        if beliefs.len() != self.per_outcome.len() {
            return Err(Error::LengthMismatch {
                what: "beliefs",
                expected: self.per_outcome.len(),
                got: beliefs.len(),
            });
        }
        Ok(self
            .per_outcome
            .iter()
            .zip(beliefs.iter())
            .map(|(w, p)| w * p)
            .sum())
    }
}

/// Re-dispatches each outcome to maximize `u(l) − c(r)` subject to
/// `p + r + ξ − d − l ≥ 0` and the recourse boxes.
pub fn welfare_per_outcome(p: f64, d: f64, instance: &MarketInstance) -> Result<ExPostWelfare> {
    let ps = instance.producer_set();
    let cs = instance.consumer_set();
    if !ps.first_stage.contains(p, 1e-9) || !cs.first_stage.contains(d, 1e-9) {
        return Err(Error::Parameter(format!(
            "day-ahead decisions (p={p}, d={d}) outside their boxes"
        )));
    }
    let (alpha, beta, gamma) = (instance.alpha(), instance.beta(), instance.gamma_u());
    let first_stage = instance.utility(d) - instance.cost(p);
    let n = instance.n_outcomes();
    let (mut r, mut l, mut per_outcome) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for (w, &xi) in instance.outcomes().iter().enumerate() {
        let (rb, lb) = (ps.recourse[w], cs.recourse[w]);
        // net position before recourse
        let g = p + xi - d;
        let mut rw = rb.clamp(0.0);
        let mut lw = lb.clamp(gamma / beta);
        if rw + g - lw < 0.0 {
            // balance binds: l = r + g
            let lo = rb.lo.max(lb.lo - g);
            let hi = rb.hi.min(lb.hi - g);
            if lo > hi {
                return Err(Error::Infeasible { outcome: w });
            }
            rw = ((gamma - beta * g) / (alpha + beta)).max(lo).min(hi);
            lw = rw + g;
        }
        per_outcome.push(first_stage + instance.utility(lw) - instance.cost(rw));
        r.push(rw);
        l.push(lw);
    }
    Ok(ExPostWelfare {
        p,
        d,
        r,
        l,
        per_outcome,
    })
}
