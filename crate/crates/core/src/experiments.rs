//! Experiment drivers behind the CLI. Each returns plain rows that serialize
//! straight to CSV; rows come back in a fixed order even when the points are
//! computed in parallel.

use std::fs::File;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{
    demand_excess, integrate, stability, welfare_per_outcome, TRAJECTORY_STEP_CAP,
};
use crate::beliefs::{labeled_belief, Family, Label, SampleSet};
use crate::config::Config;
use crate::equilibrium::{analytic_equilibrium, exact_equilibrium, tatonnement, SolverConfig};
use crate::error::{Error, Result};
use crate::market::{BeliefSet, MarketInstance};

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let err = |e: csv::Error| Error::Internal(format!("{}: {e}", path.display()));
    let file =
        File::create(path).map_err(|e| Error::Internal(format!("{}: {e}", path.display())))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush()
        .map_err(|e| Error::Internal(format!("{}: {e}", path.display())))?;
    Ok(())
}

fn sampled(config: &Config) -> Result<(SampleSet, MarketInstance)> {
    if config.market.outcomes.is_some() {
        return Err(Error::Config(
            "labeled distributions need sampled outcomes; remove market.outcomes".into(),
        ));
    }
    Ok((config.samples()?, config.instance()?))
}

fn two_outcome(config: &Config) -> Result<MarketInstance> {
    let m = config.instance()?;
    if m.n_outcomes() != 2 {
        return Err(Error::Config(format!(
            "this experiment needs a two-outcome market, got {} outcomes",
            m.n_outcomes()
        )));
    }
    Ok(m)
}

fn with_low_outcome_beliefs(
    base: &MarketInstance,
    producer_low: f64,
    consumer_low: f64,
) -> Result<MarketInstance> {
    base.with_producer_beliefs(BeliefSet::new(vec![producer_low, 1.0 - producer_low])?)?
        .with_consumer_beliefs(BeliefSet::new(vec![consumer_low, 1.0 - consumer_low])?)
}

/// One labeled producer distribution traded against the configured consumer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyRow {
    pub label: String,
    pub delta: Option<f64>,
    pub gamma_w: Option<f64>,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    /// From the exact equilibrium.
    pub day_ahead_price: Option<f64>,
    pub p: Option<f64>,
    pub d: Option<f64>,
    /// `d − p`.
    pub mismatch: Option<f64>,
    /// Tatonnement iterations under the configured solver settings.
    pub iterations: Option<usize>,
    pub eig_ratio: Option<f64>,
    pub converged: Option<bool>,
    pub verdict: Option<String>,
    pub error: Option<String>,
}

impl FamilyRow {
    fn failed(label: Label, e: Error) -> Self {
        Self {
            label: label.name().into(),
            delta: None,
            gamma_w: None,
            mean: None,
            variance: None,
            day_ahead_price: None,
            p: None,
            d: None,
            mismatch: None,
            iterations: None,
            eig_ratio: None,
            converged: None,
            verdict: None,
            error: Some(e.to_string()),
        }
    }
}

fn family_point(
    samples: &SampleSet,
    base: &MarketInstance,
    solver: &SolverConfig,
    label: Label,
) -> Result<FamilyRow> {
    let lb = labeled_belief(samples, label)?;
    let m = base.with_producer_beliefs(lb.beliefs.clone())?;
    let eq = exact_equilibrium(&m)?;
    let run = tatonnement(&m, solver)?;
    let report = stability(&m)?;
    Ok(FamilyRow {
        label: label.name().into(),
        delta: Some(lb.params.delta),
        gamma_w: Some(lb.params.gamma_w),
        mean: Some(lb.moments.mean),
        variance: Some(lb.moments.variance),
        day_ahead_price: Some(eq.day_ahead_price()),
        p: Some(eq.dispatch.p),
        d: Some(eq.dispatch.d),
        mismatch: Some(eq.dispatch.d - eq.dispatch.p),
        iterations: Some(run.iterations),
        eig_ratio: Some(report.ratio),
        converged: Some(run.converged),
        verdict: Some(report.verdict.name().into()),
        error: None,
    })
}

/// Calibrates the seven labels of `family` as producer beliefs and solves
/// each. A failing label yields a row carrying the error.
pub fn family_sweep(config: &Config, family: Family) -> Result<Vec<FamilyRow>> {
    let (samples, base) = sampled(config)?;
    let solver = config.solver_config()?;
    Ok(family
        .labels()
        .par_iter()
        .map(|&label| {
            family_point(&samples, &base, &solver, label)
                .unwrap_or_else(|e| FamilyRow::failed(label, e))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub family: String,
    pub label: String,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub eig_ratio: Option<f64>,
    pub verdict: Option<String>,
    pub error: Option<String>,
}

/// Both families; the reference label appears once in each.
pub fn stability_table(config: &Config) -> Result<Vec<StabilityRow>> {
    let mut rows = Vec::new();
    for family in [Family::Mean, Family::Variance] {
        for r in family_sweep(config, family)? {
            rows.push(StabilityRow {
                family: family.name().into(),
                label: r.label,
                iterations: r.iterations,
                converged: r.converged,
                eig_ratio: r.eig_ratio,
                verdict: r.verdict,
                error: r.error,
            });
        }
    }
    Ok(rows)
}

/// Text table: one block per family with iterations and ratios.
pub fn stability_summary(rows: &[StabilityRow]) -> String {
    let mut out = String::new();
    for family in [Family::Mean, Family::Variance] {
        let sel: Vec<_> = rows.iter().filter(|r| r.family == family.name()).collect();
        let labels: Vec<_> = sel.iter().map(|r| format!("{:>12}", r.label)).collect();
        let iters: Vec<_> = sel
            .iter()
            .map(|r| match (r.iterations, r.converged) {
                (Some(n), Some(true)) => format!("{n:>12}"),
                (Some(_), Some(false)) => format!("{:>12}", "inf"),
                _ => format!("{:>12}", "error"),
            })
            .collect();
        let ratios: Vec<_> = sel
            .iter()
            .map(|r| {
                r.eig_ratio
                    .map_or(format!("{:>12}", "error"), |x| format!("{x:>12.3e}"))
            })
            .collect();
        out.push_str(&format!("{:<10} {}\n", family.name(), labels.join("")));
        out.push_str(&format!("{:<10} {}\n", "iterations", iters.join("")));
        out.push_str(&format!("{:<10} {}\n", "ratio", ratios.join("")));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub pi_p_l: f64,
    pub pi_c_l: f64,
    pub lambda_l: f64,
    pub lambda_h: f64,
    pub lambda_da: f64,
    /// Whether the closed form is the equilibrium at this point.
    pub interior: bool,
}

/// `n` evenly spaced probabilities from 0.01 to 0.99.
pub fn probability_grid(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Parameter(format!(
            "grid needs at least 2 points, got {n}"
        )));
    }
    Ok((0..n)
        .map(|i| 0.01 + 0.98 * i as f64 / (n - 1) as f64)
        .collect())
}

/// Equilibrium prices over a grid of low-outcome probabilities for both
/// agents. Outcome 0 is the low outcome.
pub fn grid2d(config: &Config) -> Result<Vec<GridRow>> {
    let base = two_outcome(config)?;
    let axis = probability_grid(config.experiment.grid)?;
    let points: Vec<(f64, f64)> = axis
        .iter()
        .flat_map(|&pp| axis.iter().map(move |&pc| (pp, pc)))
        .collect();
    points
        .par_iter()
        .map(|&(pp, pc)| {
            let m = with_low_outcome_beliefs(&base, pp, pc)?;
            let eq = exact_equilibrium(&m)?;
            Ok(GridRow {
                pi_p_l: pp,
                pi_c_l: pc,
                lambda_l: eq.prices[0],
                lambda_h: eq.prices[1],
                lambda_da: eq.day_ahead_price(),
                interior: analytic_equilibrium(&m)?.interior,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WelfareRow {
    /// 1-based rank of the outcome, smallest renewable output first.
    pub outcome_rank: usize,
    pub xi: f64,
    pub sw_reference: f64,
    pub sw_asymmetric: f64,
    /// `sw_reference − sw_asymmetric`.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WelfareComparison {
    pub comparison: String,
    pub rows: Vec<WelfareRow>,
    /// Expected welfare under the reference measure.
    pub expected_reference: f64,
    pub expected_asymmetric: f64,
    pub expected_loss: f64,
}

/// Ex-post welfare per outcome for day-ahead decisions of the symmetric
/// equilibrium and of the equilibrium where the producer holds the
/// `comparison` distribution.
pub fn welfare_comparison(config: &Config, comparison: Label) -> Result<WelfareComparison> {
    let (samples, base) = sampled(config)?;
    let reference = labeled_belief(&samples, Label::Reference)?.beliefs;
    let symmetric = base.with_common_beliefs(&reference)?;
    let asym = symmetric.with_producer_beliefs(labeled_belief(&samples, comparison)?.beliefs)?;
    let eq_ref = exact_equilibrium(&symmetric)?;
    let eq_asym = exact_equilibrium(&asym)?;
    let sw_ref = welfare_per_outcome(eq_ref.dispatch.p, eq_ref.dispatch.d, &symmetric)?;
    let sw_asym = welfare_per_outcome(eq_asym.dispatch.p, eq_asym.dispatch.d, &symmetric)?;

    // outcomes are stored sorted, so the index is the rank
    let rows = symmetric
        .outcomes()
        .iter()
        .enumerate()
        .map(|(w, &xi)| WelfareRow {
            outcome_rank: w + 1,
            xi,
            sw_reference: sw_ref.per_outcome[w],
            sw_asymmetric: sw_asym.per_outcome[w],
            loss: sw_ref.per_outcome[w] - sw_asym.per_outcome[w],
        })
        .collect();
    let expected_reference = sw_ref.expected(&reference)?;
    let expected_asymmetric = sw_asym.expected(&reference)?;
    Ok(WelfareComparison {
        comparison: comparison.name().into(),
        rows,
        expected_reference,
        expected_asymmetric,
        expected_loss: expected_reference - expected_asymmetric,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum FieldPreset {
    Symmetric,
    Asymmetric,
}

impl FieldPreset {
    pub const ALL: [FieldPreset; 2] = [FieldPreset::Symmetric, FieldPreset::Asymmetric];

    pub fn name(self) -> &'static str {
        match self {
            FieldPreset::Symmetric => "symmetric",
            FieldPreset::Asymmetric => "asymmetric",
        }
    }

    /// `(π^p_ℓ, π^c_ℓ)`.
    pub fn low_outcome_beliefs(self) -> (f64, f64) {
        match self {
            FieldPreset::Symmetric => (0.5, 0.5),
            FieldPreset::Asymmetric => (0.99, 0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldRow {
    pub lambda_l: f64,
    pub lambda_h: f64,
    pub v_l: f64,
    pub v_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldSummary {
    pub preset: String,
    /// Rest point of the price dynamics.
    pub lambda_l: f64,
    pub lambda_h: f64,
    /// Mean `|v_ℓ|` and `|v_h|` on a small circle around the rest point.
    pub speed_l: f64,
    pub speed_h: f64,
    /// `speed_h / speed_l`.
    pub speed_ratio: f64,
    pub trajectory_steps: usize,
    pub trajectory_reached_rest: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldRun {
    pub preset: FieldPreset,
    pub samples: Vec<FieldRow>,
    pub trajectory: Vec<FieldRow>,
    pub summary: FieldSummary,
}

/// Radius of the circle used for directional speeds.
pub const SPEED_RADIUS: f64 = 0.05;
const SPEED_DIRECTIONS: usize = 360;
/// Half-width of the sampled window around the rest point.
pub const FIELD_HALF_WIDTH: f64 = 1.0;

fn velocity(m: &MarketInstance, tau: f64, point: &[f64]) -> Vec<f64> {
    demand_excess(point, m)
        .into_iter()
        .map(|z| tau * z)
        .collect()
}

/// Samples `τ·z` on a `grid × grid` window around the rest point of the
/// dynamics and integrates one trajectory from the configured start.
pub fn field(config: &Config, preset: FieldPreset) -> Result<FieldRun> {
    let tau = config.experiment.tau;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Parameter(format!("tau must be positive, got {tau}")));
    }
    let (pp, pc) = preset.low_outcome_beliefs();
    let m = with_low_outcome_beliefs(&two_outcome(config)?, pp, pc)?;
    let rest = analytic_equilibrium(&m)?.lambda;

    let n = config.experiment.grid.max(2);
    let axis = |c: f64| -> Vec<f64> {
        let lo = (c - FIELD_HALF_WIDTH).max(0.0);
        let hi = c + FIELD_HALF_WIDTH;
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    };
    let (ax_l, ax_h) = (axis(rest[0]), axis(rest[1]));
    let mut samples = Vec::with_capacity(n * n);
    for &a in &ax_l {
        for &b in &ax_h {
            let v = velocity(&m, tau, &[a, b]);
            samples.push(FieldRow {
                lambda_l: a,
                lambda_h: b,
                v_l: v[0],
                v_h: v[1],
            });
        }
    }

    let (mut speed_l, mut speed_h) = (0.0, 0.0);
    for k in 0..SPEED_DIRECTIONS {
        let theta = 2.0 * std::f64::consts::PI * k as f64 / SPEED_DIRECTIONS as f64;
        let point = [
            rest[0] + SPEED_RADIUS * theta.cos(),
            rest[1] + SPEED_RADIUS * theta.sin(),
        ];
        let v = velocity(&m, tau, &point);
        speed_l += v[0].abs();
        speed_h += v[1].abs();
    }
    speed_l /= SPEED_DIRECTIONS as f64;
    speed_h /= SPEED_DIRECTIONS as f64;

    let start = match &config.solver.lambda0 {
        Some(v) => v.clone(),
        None => vec![0.0; 2],
    };
    let traj = integrate(&m, &start, tau, TRAJECTORY_STEP_CAP);
    let trajectory = traj
        .points
        .iter()
        .map(|pt| {
            let v = velocity(&m, tau, pt);
            FieldRow {
                lambda_l: pt[0],
                lambda_h: pt[1],
                v_l: v[0],
                v_h: v[1],
            }
        })
        .collect();

    Ok(FieldRun {
        preset,
        samples,
        trajectory,
        summary: FieldSummary {
            preset: preset.name().into(),
            lambda_l: rest[0],
            lambda_h: rest[1],
            speed_l,
            speed_h,
            speed_ratio: speed_h / speed_l,
            trajectory_steps: traj.points.len().saturating_sub(1),
            trajectory_reached_rest: traj.reached_rest,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionRow {
    pub label: String,
    pub delta: Option<f64>,
    pub gamma_w: Option<f64>,
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub error: Option<String>,
}

/// The 13 labeled distributions with their calibrated parameters.
pub fn distributions(config: &Config) -> Result<Vec<DistributionRow>> {
    let samples = config.samples()?;
    Ok(Label::ALL
        .par_iter()
        .map(|&label| match labeled_belief(&samples, label) {
            Ok(lb) => DistributionRow {
                label: label.name().into(),
                delta: Some(lb.params.delta),
                gamma_w: Some(lb.params.gamma_w),
                mean: Some(lb.moments.mean),
                variance: Some(lb.moments.variance),
                error: None,
            },
            Err(e) => DistributionRow {
                label: label.name().into(),
                delta: None,
                gamma_w: None,
                mean: None,
                variance: None,
                error: Some(e.to_string()),
            },
        })
        .collect())
}
