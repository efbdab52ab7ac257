//! Domain types shared by every solver: market parameters, beliefs,
//! feasible boxes, prices and dispatch schedules.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest probability an agent may assign to an outcome.
pub const MIN_PROBABILITY: f64 = 1e-9;

/// Allowed deviation of a belief vector's sum from one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

/// Default bounds for every first-stage and recourse variable.
pub const DEFAULT_BOUNDS: (f64, f64) = (0.0, 50.0);

/// A broken invariant, naming the offending field and the rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Probability vector one agent assigns to the outcome set.
///
/// Entries are strictly positive and sum to one. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct BeliefSet {
    probs: Vec<f64>,
}

impl BeliefSet {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        let mut violations = Vec::new();
        check_belief("beliefs", &probs, probs.len(), &mut violations);
        if violations.is_empty() {
            Ok(Self { probs })
        } else {
            Err(Error::InvalidInstance(violations))
        }
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform belief needs at least one outcome");
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    /// Floors non-negative weights at [`MIN_PROBABILITY`] and renormalizes.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Parameter("belief weights are empty".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Parameter(
                "belief weights must be finite and non-negative".into(),
            ));
        }
        let floored: Vec<f64> = weights.iter().map(|w| w.max(MIN_PROBABILITY)).collect();
        let total: f64 = floored.iter().sum();
        Self::new(floored.into_iter().map(|w| w / total).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

impl Deref for BeliefSet {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.probs
    }
}

fn check_belief(field: &str, probs: &[f64], n: usize, out: &mut Vec<Violation>) {
    if probs.len() != n {
        out.push(Violation::new(
            field,
            format!("length {} must equal number of outcomes {n}", probs.len()),
        ));
    }
    if probs.is_empty() {
        out.push(Violation::new(field, "must not be empty"));
        return;
    }
    if probs.iter().any(|p| !p.is_finite() || *p <= 0.0) {
        out.push(Violation::new(field, "entries must be strictly positive"));
    }
    let sum: f64 = probs.iter().sum();
    if !sum.is_finite() || (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
        out.push(Violation::new(
            field,
            format!("simplex sum ≠ 1 (got {sum})"),
        ));
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }

    pub fn strictly_contains(&self, x: f64) -> bool {
        x > self.lo && x < self.hi
    }

    fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

/// Axis-aligned feasible set for one agent: a first-stage interval and one
/// recourse interval per outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet {
    pub first_stage: Interval,
    pub recourse: Vec<Interval>,
}

impl BoxSet {
    pub fn uniform(n: usize, lo: f64, hi: f64) -> Self {
        Self {
            first_stage: Interval::new(lo, hi),
            recourse: vec![Interval::new(lo, hi); n],
        }
    }

    pub fn default_for(n: usize) -> Self {
        Self::uniform(n, DEFAULT_BOUNDS.0, DEFAULT_BOUNDS.1)
    }

    fn check(&self, field: &str, n: usize, out: &mut Vec<Violation>) {
        if !self.first_stage.is_valid() {
            out.push(Violation::new(
                format!("{field}.first_stage"),
                "bounds must be finite with lo ≤ hi",
            ));
        }
        if self.recourse.len() != n {
            out.push(Violation::new(
                format!("{field}.recourse"),
                format!(
                    "length {} must equal number of outcomes {n}",
                    self.recourse.len()
                ),
            ));
        }
        for (i, iv) in self.recourse.iter().enumerate() {
            if !iv.is_valid() {
                out.push(Violation::new(
                    format!("{field}.recourse[{i}]"),
                    "bounds must be finite with lo ≤ hi",
                ));
            }
        }
    }
}

/// Per-outcome prices, all non-negative.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PriceVector(Vec<f64>);

impl PriceVector {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if let Some(i) = lambda.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::Parameter(format!(
                "price {i} must be finite and non-negative, got {}",
                lambda[i]
            )));
        }
        Ok(Self(lambda))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// Day-ahead price: the sum of the per-outcome prices.
    pub fn day_ahead(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for PriceVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Day-ahead contracts `(p, d)` and per-outcome recourse `(r, l)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DispatchSchedule {
    pub p: f64,
    pub r: Vec<f64>,
    pub d: f64,
    pub l: Vec<f64>,
}

impl DispatchSchedule {
    /// Supply minus demand in outcome `w`: `p + r_w + xi_w - d - l_w`.
    pub fn imbalance(&self, w: usize, xi: f64) -> f64 {
        self.p + self.r[w] + xi - self.d - self.l[w]
    }

    pub fn imbalances(&self, outcomes: &[f64]) -> Vec<f64> {
        outcomes
            .iter()
            .enumerate()
            .map(|(w, &xi)| self.imbalance(w, xi))
            .collect()
    }

    pub fn within(&self, instance: &MarketInstance, tol: f64) -> bool {
        let ps = instance.producer_set();
        let cs = instance.consumer_set();
        ps.first_stage.contains(self.p, tol)
            && cs.first_stage.contains(self.d, tol)
            && self
                .r
                .iter()
                .zip(&ps.recourse)
                .all(|(x, b)| b.contains(*x, tol))
            && self
                .l
                .iter()
                .zip(&cs.recourse)
                .all(|(x, b)| b.contains(*x, tol))
    }
}

/// Unvalidated description of a market, as read from configuration.
///
/// Missing beliefs default to uniform, missing boxes to
/// [`DEFAULT_BOUNDS`] on every variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_u: f64,
    pub outcomes: Vec<f64>,
    #[serde(default)]
    pub producer_beliefs: Option<Vec<f64>>,
    #[serde(default)]
    pub consumer_beliefs: Option<Vec<f64>>,
    #[serde(default)]
    pub operator_beliefs: Option<Vec<f64>>,
    #[serde(default)]
    pub producer_set: Option<BoxSet>,
    #[serde(default)]
    pub consumer_set: Option<BoxSet>,
}

impl MarketParams {
    /// Parameters with uniform beliefs and default boxes.
    pub fn new(alpha: f64, beta: f64, gamma_u: f64, outcomes: Vec<f64>) -> Self {
        Self {
            alpha,
            beta,
            gamma_u,
            outcomes,
            producer_beliefs: None,
            consumer_beliefs: None,
            operator_beliefs: None,
            producer_set: None,
            consumer_set: None,
        }
    }

    fn n(&self) -> usize {
        self.outcomes.len()
    }
}

/// Lists every broken invariant of `params`. Empty means valid.
pub fn validate(params: &MarketParams) -> Vec<Violation> {
    let mut out = Vec::new();
    for (name, v) in [
        ("alpha", params.alpha),
        ("beta", params.beta),
        ("gamma_u", params.gamma_u),
    ] {
        if !(v.is_finite() && v > 0.0) {
            out.push(Violation::new(name, format!("{name} must be positive")));
        }
    }
    let n = params.n();
    if n == 0 {
        out.push(Violation::new(
            "outcomes",
            "must contain at least one outcome",
        ));
    }
    for (i, xi) in params.outcomes.iter().enumerate() {
        if !(xi.is_finite() && *xi >= 0.0) {
            out.push(Violation::new(
                format!("outcomes[{i}]"),
                "renewable output must be finite and non-negative",
            ));
        }
    }
    for (name, b) in [
        ("producer_beliefs", &params.producer_beliefs),
        ("consumer_beliefs", &params.consumer_beliefs),
        ("operator_beliefs", &params.operator_beliefs),
    ] {
        if let Some(p) = b {
            check_belief(name, p, n, &mut out);
        }
    }
    for (name, b) in [
        ("producer_set", &params.producer_set),
        ("consumer_set", &params.consumer_set),
    ] {
        if let Some(b) = b {
            b.check(name, n, &mut out);
        }
    }
    out
}

/// A validated market: cost `c(x) = ½αx²`, utility `u(x) = γx − ½βx²`,
/// renewable outcomes and the beliefs of each agent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarketInstance {
    alpha: f64,
    beta: f64,
    gamma_u: f64,
    outcomes: Vec<f64>,
    producer_beliefs: BeliefSet,
    consumer_beliefs: BeliefSet,
    operator_beliefs: Option<BeliefSet>,
    producer_set: BoxSet,
    consumer_set: BoxSet,
}

impl MarketInstance {
    pub fn new(params: MarketParams) -> Result<Self> {
        let violations = validate(&params);
        if !violations.is_empty() {
            return Err(Error::InvalidInstance(violations));
        }
        let n = params.n();
        let belief = |b: Option<Vec<f64>>| match b {
            Some(p) => BeliefSet::new(p),
            None => Ok(BeliefSet::uniform(n)),
        };
        Ok(Self {
            alpha: params.alpha,
            beta: params.beta,
            gamma_u: params.gamma_u,
            producer_beliefs: belief(params.producer_beliefs)?,
            consumer_beliefs: belief(params.consumer_beliefs)?,
            operator_beliefs: params.operator_beliefs.map(BeliefSet::new).transpose()?,
            producer_set: params
                .producer_set
                .unwrap_or_else(|| BoxSet::default_for(n)),
            consumer_set: params
                .consumer_set
                .unwrap_or_else(|| BoxSet::default_for(n)),
            outcomes: params.outcomes,
        })
    }

    /// Two outcomes `xi = (1, 3)` with `α = 1.5, β = 0.3, γ = 5`; the
    /// arguments are the probabilities each agent puts on the low outcome.
    pub fn two_outcome(producer_low: f64, consumer_low: f64) -> Result<Self> {
        let mut params = MarketParams::new(1.5, 0.3, 5.0, vec![1.0, 3.0]);
        params.producer_beliefs = Some(vec![producer_low, 1.0 - producer_low]);
        params.consumer_beliefs = Some(vec![consumer_low, 1.0 - consumer_low]);
        Self::new(params)
    }

    pub fn params(&self) -> MarketParams {
        MarketParams {
            alpha: self.alpha,
            beta: self.beta,
            gamma_u: self.gamma_u,
            outcomes: self.outcomes.clone(),
            producer_beliefs: Some(self.producer_beliefs.probs.clone()),
            consumer_beliefs: Some(self.consumer_beliefs.probs.clone()),
            operator_beliefs: self.operator_beliefs.as_ref().map(|b| b.probs.clone()),
            producer_set: Some(self.producer_set.clone()),
            consumer_set: Some(self.consumer_set.clone()),
        }
    }

    pub fn with_producer_beliefs(&self, beliefs: BeliefSet) -> Result<Self> {
        self.check_len("producer_beliefs", &beliefs)?;
        Ok(Self {
            producer_beliefs: beliefs,
            ..self.clone()
        })
    }

    pub fn with_consumer_beliefs(&self, beliefs: BeliefSet) -> Result<Self> {
        self.check_len("consumer_beliefs", &beliefs)?;
        Ok(Self {
            consumer_beliefs: beliefs,
            ..self.clone()
        })
    }

    pub fn with_operator_beliefs(&self, beliefs: BeliefSet) -> Result<Self> {
        self.check_len("operator_beliefs", &beliefs)?;
        Ok(Self {
            operator_beliefs: Some(beliefs),
            ..self.clone()
        })
    }

    /// Same market with producer and consumer both holding `beliefs`.
    pub fn with_common_beliefs(&self, beliefs: &BeliefSet) -> Result<Self> {
        self.with_producer_beliefs(beliefs.clone())?
            .with_consumer_beliefs(beliefs.clone())
    }

    fn check_len(&self, what: &'static str, b: &BeliefSet) -> Result<()> {
        if b.len() != self.n_outcomes() {
            return Err(Error::LengthMismatch {
                what,
                expected: self.n_outcomes(),
                got: b.len(),
            });
        }
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma_u(&self) -> f64 {
        self.gamma_u
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcomes
    }

    pub fn n_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn producer_beliefs(&self) -> &BeliefSet {
        &self.producer_beliefs
    }

    pub fn consumer_beliefs(&self) -> &BeliefSet {
        &self.consumer_beliefs
    }

    pub fn operator_beliefs(&self) -> Option<&BeliefSet> {
        self.operator_beliefs.as_ref()
    }

    pub fn producer_set(&self) -> &BoxSet {
        &self.producer_set
    }

    pub fn consumer_set(&self) -> &BoxSet {
        &self.consumer_set
    }

    /// Producer cost `½αx²`.
    pub fn cost(&self, x: f64) -> f64 {
        0.5 * self.alpha * x * x
    }

    /// Consumer utility `γx − ½βx²`.
    pub fn utility(&self, x: f64) -> f64 {
        self.gamma_u * x - 0.5 * self.beta * x * x
    }

    pub(crate) fn check_prices(&self, prices: &[f64]) -> Result<()> {
        if prices.len() != self.n_outcomes() {
            return Err(Error::LengthMismatch {
                what: "prices",
                expected: self.n_outcomes(),
                got: prices.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> MarketParams {
        let mut p = MarketParams::new(1.5, 0.3, 5.0, vec![1.0, 3.0]);
        p.producer_beliefs = Some(vec![0.5, 0.5]);
        p.consumer_beliefs = Some(vec![0.5, 0.5]);
        p
    }

    #[test]
    fn well_formed_instance_has_no_violations() {
        assert!(validate(&example()).is_empty());
        assert!(MarketInstance::new(example()).is_ok());
    }

    #[test]
    fn beliefs_off_simplex_are_reported() {
        let mut p = example();
        p.producer_beliefs = Some(vec![0.7, 0.7]);
        let v = validate(&p);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].field, "producer_beliefs");
        assert!(v[0].rule.starts_with("simplex sum ≠ 1"));
        assert!(matches!(
            MarketInstance::new(p),
            Err(Error::InvalidInstance(_))
        ));
    }

    #[test]
    fn zero_alpha_is_reported() {
        let mut p = example();
        p.alpha = 0.0;
        let v = validate(&p);
        assert_eq!(v, vec![Violation::new("alpha", "alpha must be positive")]);
    }

    #[test]
    fn validate_collects_every_violation() {
        let mut p = example();
        p.beta = -1.0;
        p.gamma_u = f64::NAN;
        p.outcomes = vec![1.0, -3.0];
        p.consumer_beliefs = Some(vec![0.0, 1.0]);
        p.producer_set = Some(BoxSet {
            first_stage: Interval::new(2.0, 1.0),
            recourse: vec![Interval::new(0.0, f64::INFINITY)],
        });
        let fields: Vec<_> = validate(&p).into_iter().map(|v| v.field).collect();
        for f in [
            "beta",
            "gamma_u",
            "outcomes[1]",
            "consumer_beliefs",
            "producer_set.first_stage",
            "producer_set.recourse",
            "producer_set.recourse[0]",
        ] {
            assert!(fields.iter().any(|x| x == f), "missing {f} in {fields:?}");
        }
    }

    #[test]
    fn belief_length_must_match_outcomes() {
        let mut p = example();
        p.operator_beliefs = Some(vec![0.2, 0.3, 0.5]);
        assert_eq!(validate(&p)[0].field, "operator_beliefs");
    }

    #[test]
    fn from_weights_floors_and_renormalizes() {
        let b = BeliefSet::from_weights(&[0.0, 2.0, 2.0]).unwrap();
        assert!(b[0] > 0.0 && b[0] < 1e-9 * 1.0001);
        assert!(((b.iter().sum::<f64>()) - 1.0).abs() <= SIMPLEX_TOLERANCE);
        assert!(BeliefSet::from_weights(&[-1.0, 1.0]).is_err());
    }

    #[test]
    fn price_vector_rejects_negative_entries() {
        assert!(PriceVector::new(vec![1.0, -0.1]).is_err());
        let p = PriceVector::new(vec![1.0, 2.5]).unwrap();
        assert_eq!(p.day_ahead(), 3.5);
    }

    #[test]
    fn defaults_fill_beliefs_and_boxes() {
        let m = MarketInstance::new(MarketParams::new(1.0, 1.0, 1.0, vec![0.0; 4])).unwrap();
        assert_eq!(m.producer_beliefs().probs(), &[0.25; 4]);
        assert_eq!(m.consumer_set().recourse.len(), 4);
        assert_eq!(m.producer_set().first_stage, Interval::new(0.0, 50.0));
    }

    #[test]
    fn replacing_beliefs_keeps_the_original() {
        let m = MarketInstance::new(example()).unwrap();
        let b = BeliefSet::new(vec![0.25, 0.75]).unwrap();
        let m2 = m.with_producer_beliefs(b).unwrap();
        assert_eq!(m.producer_beliefs().probs(), &[0.5, 0.5]);
        assert_eq!(m2.producer_beliefs().probs(), &[0.25, 0.75]);
        assert!(m.with_consumer_beliefs(BeliefSet::uniform(3)).is_err());
    }
}
