//! Reference renewable samples and probability-weighted beliefs over them.
//!
//! The reference distribution puts equal mass on `n` sorted normal draws.
//! Other beliefs reweight the same outcomes by pushing the reference CDF
//! through the weighting function
//!
//! ```text
//! Φ(F) = δ F^γ / (δ F^γ + (1 − F)^γ)
//! ```
//!
//! where `δ` mostly moves the mean and `γ` (called `gamma_w` here, to keep it
//! apart from the utility coefficient) mostly moves the variance.
//!
//! Sampling uses a ChaCha8 stream seeded with `seed_from_u64(seed)` and the
//! ziggurat normal sampler from `rand_distr`, so a given seed reproduces the
//! same sample bit for bit within one build.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::BeliefSet;

/// Seed used when none is configured. Its 100-draw sample from N(1.5, 0.25)
/// has mean ≈ 1.557 and variance ≈ 0.330.
pub const DEFAULT_SEED: u64 = 1690;

pub const REFERENCE_SAMPLE_SIZE: usize = 100;
pub const REFERENCE_MEAN: f64 = 1.5;
pub const REFERENCE_VARIANCE: f64 = 0.25;

/// Bounds on δ and γ_w searched by [`calibrate`].
pub const PARAM_BOUNDS: (f64, f64) = (1e-3, 1e3);

/// Moment error accepted by [`calibrate`].
pub const CALIBRATION_TOLERANCE: f64 = 1e-3;

/// Sorted renewable outcomes drawn from a normal distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSet {
    values: Vec<f64>,
    pub seed: u64,
    pub source_mean: f64,
    pub source_variance: f64,
}

impl SampleSet {
    /// Wraps explicit outcomes (sorted on the way in). Needs at least two.
    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Parameter(
                "a sample set needs at least 2 values".into(),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("sample values must be finite".into()));
        }
        values.sort_by(f64::total_cmp);
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            values,
            seed: 0,
            source_mean: mean,
            source_variance: variance,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Draws `n` normal outcomes, clamps negatives to zero and sorts them.
pub fn sample_reference(n: usize, mean: f64, variance: f64, seed: u64) -> Result<SampleSet> {
    if n < 2 {
        return Err(Error::Parameter(format!(
            "sample size must be ≥ 2, got {n}"
        )));
    }
    if !(variance.is_finite() && variance > 0.0) || !mean.is_finite() {
        return Err(Error::Parameter(format!(
            "need finite mean and positive variance, got N({mean}, {variance})"
        )));
    }
    let normal = Normal::new(mean, variance.sqrt())
        .map_err(|e| Error::Parameter(format!("normal distribution: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng).max(0.0)).collect();
    values.sort_by(f64::total_cmp);
    Ok(SampleSet {
        values,
        seed,
        source_mean: mean,
        source_variance: variance,
    })
}

/// Parameters of the probability weighting function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightingParams {
    pub delta: f64,
    pub gamma_w: f64,
}

impl WeightingParams {
    pub const IDENTITY: Self = Self {
        delta: 1.0,
        gamma_w: 1.0,
    };

    pub fn new(delta: f64, gamma_w: f64) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0 && gamma_w.is_finite() && gamma_w > 0.0) {
            return Err(Error::Parameter(format!(
                "weighting parameters must be positive, got δ={delta}, γ_w={gamma_w}"
            )));
        }
        Ok(Self { delta, gamma_w })
    }

    pub fn is_identity(&self) -> bool {
        self.delta == 1.0 && self.gamma_w == 1.0
    }
}

/// Maps a reference CDF level `F ∈ [0, 1]` to its weighted level.
pub fn weight_cdf(f: f64, params: WeightingParams) -> f64 {
    debug_assert!((0.0..=1.0).contains(&f), "CDF level {f} outside [0, 1]");
    if f <= 0.0 {
        return 0.0;
    }
    if f >= 1.0 {
        return 1.0;
    }
    if params.is_identity() {
        return f;
    }
    let num = params.delta * f.powf(params.gamma_w);
    let den = num + (1.0 - f).powf(params.gamma_w);
    if den > 0.0 && num.is_finite() {
        num / den
    } else {
        // both terms underflowed; fall back to the log-odds form
        let log_odds = params.gamma_w * ((1.0 - f) / f).ln() - params.delta.ln();
        1.0 / (1.0 + log_odds.exp())
    }
}

/// Turns the weighted CDF into a belief over the sorted samples.
///
/// The `i`-th sample (1-based) sits at empirical CDF level `i/n`, so it gets
/// `Φ(i/n) − Φ((i−1)/n)`. Entries are floored at the minimum probability and
/// renormalized; identity weighting returns the exact uniform belief.
pub fn discretize(samples: &SampleSet, params: WeightingParams) -> BeliefSet {
    let n = samples.len();
    if params.is_identity() {
        return BeliefSet::uniform(n);
    }
    let levels: Vec<f64> = (0..=n)
        .map(|i| weight_cdf(i as f64 / n as f64, params))
        .collect();
    let weights: Vec<f64> = levels.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
    BeliefSet::from_weights(&weights).expect("weighted CDF increments are finite and non-negative")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

pub fn weighted_stats(samples: &SampleSet, beliefs: &BeliefSet) -> Result<Moments> {
    if samples.len() != beliefs.len() {
        return Err(Error::LengthMismatch {
            what: "beliefs",
            expected: samples.len(),
            got: beliefs.len(),
        });
    }
    let mean: f64 = samples
        .values
        .iter()
        .zip(beliefs.iter())
        .map(|(x, p)| p * x)
        .sum();
    let variance = samples
        .values
        .iter()
        .zip(beliefs.iter())
        .map(|(x, p)| p * (x - mean).powi(2))
        .sum();
    Ok(Moments { mean, variance })
}

/// Moment a calibrated distribution should reach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum MomentTarget {
    /// Solved by varying δ with γ_w = 1.
    Mean(f64),
    /// Solved by varying γ_w with δ = 1.
    Variance(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub params: WeightingParams,
    pub moments: Moments,
}

const SCAN_POINTS: usize = 241;

/// Finds weighting parameters whose discretized belief hits `target`.
///
/// Scans the free parameter on a log grid over [`PARAM_BOUNDS`], then
/// bisects the first bracket that changes sign.
pub fn calibrate(samples: &SampleSet, target: MomentTarget) -> Result<Calibration> {
    let (goal, name, make): (f64, &'static str, fn(f64) -> WeightingParams) = match target {
        MomentTarget::Mean(m) => (m, "delta", |x| WeightingParams {
            delta: x,
            gamma_w: 1.0,
        }),
        MomentTarget::Variance(v) => {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::Parameter(format!(
                    "target variance must be positive, got {v}"
                )));
            }
            (v, "gamma_w", |x| WeightingParams {
                delta: 1.0,
                gamma_w: x,
            })
        }
    };
    if !goal.is_finite() {
        return Err(Error::Parameter("calibration target must be finite".into()));
    }
    let moment = |x: f64| -> Moments {
        weighted_stats(samples, &discretize(samples, make(x)))
            .expect("lengths agree by construction")
    };
    let pick = |m: Moments| match target {
        MomentTarget::Mean(_) => m.mean,
        MomentTarget::Variance(_) => m.variance,
    };
    let gap = |x: f64| pick(moment(x)) - goal;

    if gap(1.0) == 0.0 {
        return Ok(Calibration {
            params: make(1.0),
            moments: moment(1.0),
        });
    }

    let (lo, hi) = (PARAM_BOUNDS.0.ln(), PARAM_BOUNDS.1.ln());
    let grid: Vec<f64> = (0..SCAN_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (SCAN_POINTS - 1) as f64)
        .collect();
    let gaps: Vec<f64> = grid.iter().map(|&t| gap(t.exp())).collect();

    let bracket =
        (0..SCAN_POINTS - 1).find(|&i| gaps[i] == 0.0 || gaps[i].signum() != gaps[i + 1].signum());
    let Some(i) = bracket else {
        let best = (0..SCAN_POINTS)
            .min_by(|&a, &b| gaps[a].abs().total_cmp(&gaps[b].abs()))
            .unwrap();
        let x = grid[best].exp();
        if gaps[best].abs() <= CALIBRATION_TOLERANCE {
            return Ok(Calibration {
                params: make(x),
                moments: moment(x),
            });
        }
        return Err(Error::Calibration {
            reason: format!(
                "target {goal} not reachable for {name} in [{}, {}]",
                PARAM_BOUNDS.0, PARAM_BOUNDS.1
            ),
            best_param_name: name,
            best_param: x,
            best_value: gaps[best] + goal,
        });
    };

    let (mut a, mut b) = (grid[i], grid[i + 1]);
    let (mut ga, gb) = (gaps[i], gaps[i + 1]);
    if ga == 0.0 {
        b = a;
    } else if gb == 0.0 {
        a = b;
    }
    for _ in 0..200 {
        if b - a <= 1e-15 * a.abs().max(1.0) {
            break;
        }
        let mid = 0.5 * (a + b);
        let gm = gap(mid.exp());
        if gm == 0.0 {
            a = mid;
            b = mid;
            break;
        }
        if gm.signum() == ga.signum() {
            a = mid;
            ga = gm;
        } else {
            b = mid;
        }
    }
    let x = (0.5 * (a + b)).exp();
    let moments = moment(x);
    let achieved = pick(moments);
    if (achieved - goal).abs() > CALIBRATION_TOLERANCE {
        return Err(Error::Calibration {
            reason: format!("bisection stalled away from target {goal}"),
            best_param_name: name,
            best_param: x,
            best_value: achieved,
        });
    }
    Ok(Calibration {
        params: make(x),
        moments,
    })
}

/// Which moment a labeled distribution perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Family {
    Mean,
    Variance,
}

/// The labeled producer distributions: the reference plus three steps up and
/// three steps down in mean or in variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Label {
    Mu3Up,
    Mu2Up,
    Mu1Up,
    Reference,
    Mu1Down,
    Mu2Down,
    Mu3Down,
    Sigma3Up,
    Sigma2Up,
    Sigma1Up,
    Sigma1Down,
    Sigma2Down,
    Sigma3Down,
}

pub const MEAN_FAMILY: [Label; 7] = [
    Label::Mu3Up,
    Label::Mu2Up,
    Label::Mu1Up,
    Label::Reference,
    Label::Mu1Down,
    Label::Mu2Down,
    Label::Mu3Down,
];

pub const VARIANCE_FAMILY: [Label; 7] = [
    Label::Sigma3Up,
    Label::Sigma2Up,
    Label::Sigma1Up,
    Label::Reference,
    Label::Sigma1Down,
    Label::Sigma2Down,
    Label::Sigma3Down,
];

impl Family {
    pub fn labels(self) -> [Label; 7] {
        match self {
            Family::Mean => MEAN_FAMILY,
            Family::Variance => VARIANCE_FAMILY,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Mean => "mean",
            Family::Variance => "variance",
        }
    }
}

impl Label {
    pub const ALL: [Label; 13] = [
        Label::Mu3Up,
        Label::Mu2Up,
        Label::Mu1Up,
        Label::Reference,
        Label::Mu1Down,
        Label::Mu2Down,
        Label::Mu3Down,
        Label::Sigma3Up,
        Label::Sigma2Up,
        Label::Sigma1Up,
        Label::Sigma1Down,
        Label::Sigma2Down,
        Label::Sigma3Down,
    ];

    /// Target moment; `None` for the reference itself.
    pub fn target(self) -> Option<MomentTarget> {
        use MomentTarget::*;
        Some(match self {
            Label::Reference => return None,
            Label::Mu3Up => Mean(2.02),
            Label::Mu2Up => Mean(1.79),
            Label::Mu1Up => Mean(1.65),
            Label::Mu1Down => Mean(1.34),
            Label::Mu2Down => Mean(1.22),
            Label::Mu3Down => Mean(1.07),
            Label::Sigma3Up => Variance(1.62),
            Label::Sigma2Up => Variance(0.92),
            Label::Sigma1Up => Variance(0.54),
            Label::Sigma1Down => Variance(0.10),
            Label::Sigma2Down => Variance(0.04),
            Label::Sigma3Down => Variance(0.02),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Mu3Up => "mu3_up",
            Label::Mu2Up => "mu2_up",
            Label::Mu1Up => "mu1_up",
            Label::Reference => "R",
            Label::Mu1Down => "mu1_down",
            Label::Mu2Down => "mu2_down",
            Label::Mu3Down => "mu3_down",
            Label::Sigma3Up => "sigma3_up",
            Label::Sigma2Up => "sigma2_up",
            Label::Sigma1Up => "sigma1_up",
            Label::Sigma1Down => "sigma1_down",
            Label::Sigma2Down => "sigma2_down",
            Label::Sigma3Down => "sigma3_down",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        Label::ALL
            .into_iter()
            .find(|l| l.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A calibrated labeled belief over a sample set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledBelief {
    pub label: Label,
    pub params: WeightingParams,
    pub moments: Moments,
    pub beliefs: BeliefSet,
}

pub fn labeled_belief(samples: &SampleSet, label: Label) -> Result<LabeledBelief> {
    let params = match label.target() {
        None => WeightingParams::IDENTITY,
        Some(t) => calibrate(samples, t)?.params,
    };
    let beliefs = discretize(samples, params);
    let moments = weighted_stats(samples, &beliefs)?;
    Ok(LabeledBelief {
        label,
        params,
        moments,
        beliefs,
    })
}
