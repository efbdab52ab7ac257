//! TOML configuration for the command-line runner.
//!
//! ```toml
//! [market]
//! alpha = 1.5
//! beta = 0.3
//! gamma_u = 5.0
//! outcomes = [1.0, 3.0]          # omit to draw them from [sampling]
//! producer_beliefs = [0.5, 0.5]  # or producer_distribution = "mu3_up"
//! consumer_beliefs = [0.5, 0.5]
//! producer_set = { first_stage = [0.0, 50.0], recourse = [0.0, 50.0] }
//!
//! [sampling]
//! n = 100
//! mean = 1.5
//! variance = 0.25
//! seed = 1690
//!
//! [solver]
//! rho = 1e-5
//! epsilon = 1e-5
//! nu_max = 1000000
//! lambda0 = [0.0, 0.0]
//! trace = false
//!
//! [experiment]
//! comparison = "mu3_up"
//! grid = 49
//! tau = 1.0
//! ```
//!
//! Only `market.alpha`, `market.beta` and `market.gamma_u` are required.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::beliefs::{
    labeled_belief, sample_reference, Label, SampleSet, DEFAULT_SEED, REFERENCE_MEAN,
    REFERENCE_SAMPLE_SIZE, REFERENCE_VARIANCE,
};
use crate::equilibrium::SolverConfig;
use crate::error::{Error, Result};
use crate::market::{
    validate, BoxSet, Interval, MarketInstance, MarketParams, PriceVector, DEFAULT_BOUNDS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub market: MarketSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_u: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcomes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub producer_beliefs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consumer_beliefs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator_beliefs: Option<Vec<f64>>,
    /// Labeled distribution (e.g. `"sigma3_down"`) calibrated on the sample.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub producer_distribution: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consumer_distribution: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub producer_set: Option<BoxSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consumer_set: Option<BoxSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub first_stage: Interval,
    /// One interval for every outcome or one per outcome; defaults to
    /// `first_stage`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recourse: Option<RecourseSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RecourseSpec {
    Shared(Interval),
    PerOutcome(Vec<Interval>),
}

impl BoxSpec {
    fn to_box_set(&self, n: usize) -> BoxSet {
        let recourse = match &self.recourse {
            None => vec![self.first_stage; n],
            Some(RecourseSpec::Shared(b)) => vec![*b; n],
            Some(RecourseSpec::PerOutcome(v)) => v.clone(),
        };
        BoxSet {
            first_stage: self.first_stage,
            recourse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingSection {
    pub n: usize,
    pub mean: f64,
    pub variance: f64,
    pub seed: u64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        Self {
            n: REFERENCE_SAMPLE_SIZE,
            mean: REFERENCE_MEAN,
            variance: REFERENCE_VARIANCE,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub rho: f64,
    pub epsilon: f64,
    pub nu_max: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<Vec<f64>>,
    pub trace: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        let d = SolverConfig::default();
        Self {
            rho: d.rho,
            epsilon: d.epsilon,
            nu_max: d.nu_max,
            lambda0: None,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Producer distribution compared against the reference in `welfare`.
    pub comparison: String,
    /// Points per axis of the two-outcome probability grid.
    pub grid: usize,
    /// Speed factor of the continuous price dynamics.
    pub tau: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            comparison: Label::Mu3Up.name().to_string(),
            grid: 49,
            tau: 1.0,
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Experiment settings with 100 sampled outcomes.
    pub fn sampled() -> Self {
        Self {
            market: MarketSection {
                alpha: 1.5,
                beta: 0.3,
                gamma_u: 5.0,
                outcomes: None,
                producer_beliefs: None,
                consumer_beliefs: None,
                operator_beliefs: None,
                producer_distribution: None,
                consumer_distribution: None,
                producer_set: None,
                consumer_set: None,
            },
            sampling: SamplingSection::default(),
            solver: SolverSection::default(),
            experiment: ExperimentSection::default(),
        }
    }

    /// Two-outcome illustration with `ξ = (1, 3)` and uniform beliefs.
    pub fn two_outcome() -> Self {
        let mut c = Self::sampled();
        c.market.outcomes = Some(vec![1.0, 3.0]);
        c
    }

    pub fn samples(&self) -> Result<SampleSet> {
        let s = &self.sampling;
        sample_reference(s.n, s.mean, s.variance, s.seed)
    }

    fn labeled(&self, name: &str, field: &str) -> Result<Vec<f64>> {
        let label = Label::parse(name).ok_or_else(|| {
            Error::Config(format!("{field}: unknown distribution label {name:?}"))
        })?;
        if self.market.outcomes.is_some() {
            return Err(Error::Config(format!(
                "{field} needs sampled outcomes; remove market.outcomes"
            )));
        }
        Ok(labeled_belief(&self.samples()?, label)?.beliefs.to_vec())
    }

    fn beliefs(
        &self,
        explicit: &Option<Vec<f64>>,
        label: &Option<String>,
        field: &str,
    ) -> Result<Option<Vec<f64>>> {
        match (explicit, label) {
            (Some(_), Some(_)) => Err(Error::Config(format!(
                "give either market.{field}_beliefs or market.{field}_distribution, not both"
            ))),
            (Some(v), None) => Ok(Some(v.clone())),
            (None, Some(name)) => self
                .labeled(name, &format!("market.{field}_distribution"))
                .map(Some),
            (None, None) => Ok(None),
        }
    }

    pub fn market_params(&self) -> Result<MarketParams> {
        let m = &self.market;
        let outcomes = match &m.outcomes {
            Some(v) => v.clone(),
            None => self.samples()?.values().to_vec(),
        };
        let n = outcomes.len();
        let mut params = MarketParams::new(m.alpha, m.beta, m.gamma_u, outcomes);
        params.producer_beliefs =
            self.beliefs(&m.producer_beliefs, &m.producer_distribution, "producer")?;
        params.consumer_beliefs =
            self.beliefs(&m.consumer_beliefs, &m.consumer_distribution, "consumer")?;
        params.operator_beliefs = m.operator_beliefs.clone();
        let default_box = BoxSpec {
            first_stage: Interval::new(DEFAULT_BOUNDS.0, DEFAULT_BOUNDS.1),
            recourse: None,
        };
        params.producer_set = Some(
            m.producer_set
                .as_ref()
                .unwrap_or(&default_box)
                .to_box_set(n),
        );
        params.consumer_set = Some(
            m.consumer_set
                .as_ref()
                .unwrap_or(&default_box)
                .to_box_set(n),
        );
        Ok(params)
    }

    /// Validated instance; every violation is reported at once.
    pub fn instance(&self) -> Result<MarketInstance> {
        let params = self.market_params()?;
        let violations = validate(&params);
        if !violations.is_empty() {
            return Err(Error::InvalidInstance(violations));
        }
        MarketInstance::new(params)
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let s = &self.solver;
        Ok(SolverConfig {
            rho: s.rho,
            epsilon: s.epsilon,
            nu_max: s.nu_max,
            lambda0: s.lambda0.clone().map(PriceVector::new).transpose()?,
            trace_enabled: s.trace,
        })
    }

    pub fn comparison(&self) -> Result<Label> {
        Label::parse(&self.experiment.comparison).ok_or_else(|| {
            Error::Config(format!(
                "experiment.comparison: unknown distribution label {:?}",
                self.experiment.comparison
            ))
        })
    }
}
