use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::reinforce::{ObservationScaling, ReturnVariant, StdParameterization};
use crate::servo_env::ServoConfig;
use crate::signals::{SignalDomain, SignalFamily};

pub const DEFAULT_INTERVAL_COUNTS: [usize; 5] = [5, 10, 25, 50, 100];
pub const DEFAULT_GAMMAS: [f64; 3] = [0.5, 0.75, 0.875];
pub const DEFAULT_TRIALS: usize = 10_000;
pub const DEFAULT_RUNS: usize = 20;

/// Top-level config file: one table per experiment, every key optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub quad_fixed: QuadExperimentConfig,
    pub quad_stochastic: QuadExperimentConfig,
    pub quad_products: ProductExperimentConfig,
    pub control: ControlExperimentConfig,
}

impl HarnessConfig {
    pub fn standard() -> Self {
        Self {
            quad_stochastic: QuadExperimentConfig::stochastic_defaults(),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let mut base: toml::Table =
            toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        // The stochastic table defaults to γ = 0.75 rather than the full γ list.
        let stochastic = base
            .remove("quad_stochastic")
            .map(|v| v.try_into::<QuadExperimentConfigPatch>())
            .transpose()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut cfg: HarnessConfig = toml::Value::Table(base)
            .try_into()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.quad_stochastic = stochastic
            .unwrap_or_default()
            .apply(QuadExperimentConfig::stochastic_defaults());
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.quad_fixed.validate()?;
        self.quad_stochastic.validate()?;
        self.quad_products.validate()?;
        self.control.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadExperimentConfig {
    pub families: Vec<SignalFamily>,
    pub gammas: Vec<f64>,
    pub interval_counts: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub domain: SignalDomain,
}

impl Default for QuadExperimentConfig {
    fn default() -> Self {
        Self {
            families: SignalFamily::ALL.to_vec(),
            gammas: DEFAULT_GAMMAS.to_vec(),
            interval_counts: DEFAULT_INTERVAL_COUNTS.to_vec(),
            trials: DEFAULT_TRIALS,
            seed: 0,
            domain: SignalDomain::default(),
        }
    }
}

impl QuadExperimentConfig {
    pub fn stochastic_defaults() -> Self {
        Self { gammas: vec![0.75], ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        if self.families.is_empty() || self.gammas.is_empty() || self.interval_counts.is_empty() {
            return err("families, gammas and interval_counts must be non-empty".into());
        }
        if let Some(g) = self.gammas.iter().find(|g| !(**g > 0.0 && **g <= 1.0)) {
            return err(format!("gamma {g} outside (0, 1]"));
        }
        if self.interval_counts.contains(&0) {
            return err("interval counts must be positive".into());
        }
        if self.trials == 0 {
            return err("trials must be positive".into());
        }
        if SignalDomain::new(self.domain.start, self.domain.end).is_none() {
            return err(format!("invalid domain {:?}", self.domain));
        }
        Ok(())
    }
}

/// Same fields as [`QuadExperimentConfig`], all optional, for layering a
/// config table over non-default base values.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuadExperimentConfigPatch {
    families: Option<Vec<SignalFamily>>,
    gammas: Option<Vec<f64>>,
    interval_counts: Option<Vec<usize>>,
    trials: Option<usize>,
    seed: Option<u64>,
    domain: Option<SignalDomain>,
}

impl QuadExperimentConfigPatch {
    fn apply(self, mut base: QuadExperimentConfig) -> QuadExperimentConfig {
        if let Some(v) = self.families {
            base.families = v;
        }
        if let Some(v) = self.gammas {
            base.gammas = v;
        }
        if let Some(v) = self.interval_counts {
            base.interval_counts = v;
        }
        if let Some(v) = self.trials {
            base.trials = v;
        }
        if let Some(v) = self.seed {
            base.seed = v;
        }
        if let Some(v) = self.domain {
            base.domain = v;
        }
        base
    }
}

/// One factor of a product signal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorSource {
    Family(SignalFamily),
    Constant(f64),
}

impl FactorSource {
    pub fn name(&self) -> String {
        match self {
            FactorSource::Family(f) => f.name().to_string(),
            FactorSource::Constant(c) => format!("constant({c})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProductExperimentConfig {
    pub pairs: Vec<(FactorSource, FactorSource)>,
    pub interval_counts: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub domain: SignalDomain,
}

impl Default for ProductExperimentConfig {
    fn default() -> Self {
        use FactorSource::Family;
        use SignalFamily::{GaussianMixture, Periodic};
        Self {
            pairs: vec![
                (Family(Periodic), Family(Periodic)),
                (Family(Periodic), Family(GaussianMixture)),
                (Family(GaussianMixture), Family(GaussianMixture)),
            ],
            interval_counts: DEFAULT_INTERVAL_COUNTS.to_vec(),
            trials: DEFAULT_TRIALS,
            seed: 0,
            domain: SignalDomain::default(),
        }
    }
}

impl ProductExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.pairs.is_empty() || self.interval_counts.is_empty() || self.interval_counts.contains(&0) {
            return Err(HarnessError::Config("product pairs and positive interval counts required".into()));
        }
        if self.trials == 0 {
            return Err(HarnessError::Config("trials must be positive".into()));
        }
        if SignalDomain::new(self.domain.start, self.domain.end).is_none() {
            return Err(HarnessError::Config(format!("invalid domain {:?}", self.domain)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlExperimentConfig {
    /// Mean action-cycle times Δ_μ (s).
    pub delta_means: Vec<f64>,
    /// Per-second discount used by the agent and the integral return.
    pub gamma: f64,
    /// Step sizes are `2^e` for each exponent.
    pub alpha_exponents: Vec<i32>,
    pub runs: usize,
    /// Simulated training time per run (s).
    pub run_seconds: f64,
    pub variants: Vec<ReturnVariant>,
    pub hidden: Vec<usize>,
    pub std_parameterization: StdParameterization,
    pub scaling: ObservationScaling,
    /// Fraction of training time, counted from the end, that defines final performance.
    pub final_fraction: f64,
    /// Disable interval jitter and catastrophic intervals.
    pub deterministic_intervals: bool,
    pub seed: u64,
    /// Step sizes for learning curves; chosen from a sweep when absent.
    pub curve_alpha_dtr: Option<f64>,
    pub curve_alpha_rp: Option<f64>,
    /// Δ_μ for learning curves.
    pub curve_delta_mean: f64,
    pub servo: ServoConfig,
}

impl Default for ControlExperimentConfig {
    fn default() -> Self {
        Self {
            delta_means: vec![0.040, 0.080, 0.120],
            gamma: 0.25,
            alpha_exponents: (-18..=-6).collect(),
            runs: DEFAULT_RUNS,
            run_seconds: 25.0 * 60.0,
            variants: ReturnVariant::ALL.to_vec(),
            hidden: vec![64, 64],
            std_parameterization: StdParameterization::Softplus,
            scaling: ObservationScaling::default(),
            final_fraction: 0.2,
            deterministic_intervals: false,
            seed: 0,
            curve_alpha_dtr: None,
            curve_alpha_rp: None,
            curve_delta_mean: 0.120,
            servo: ServoConfig::default(),
        }
    }
}

impl ControlExperimentConfig {
    pub fn alphas(&self) -> Vec<f64> {
        self.alpha_exponents.iter().map(|e| 2f64.powi(*e)).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: String| Err(HarnessError::Config(m));
        if self.delta_means.is_empty() || self.delta_means.iter().any(|d| !(*d > 0.0)) {
            return err("delta_means must be non-empty and positive".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return err(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if self.alpha_exponents.is_empty() || self.variants.is_empty() {
            return err("alpha_exponents and variants must be non-empty".into());
        }
        if self.runs == 0 || !(self.run_seconds >= 0.0) {
            return err("runs must be positive and run_seconds non-negative".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return err("hidden layer sizes must be positive".into());
        }
        if !(self.final_fraction > 0.0 && self.final_fraction <= 1.0) {
            return err(format!("final_fraction {} outside (0, 1]", self.final_fraction));
        }
        for a in [self.curve_alpha_dtr, self.curve_alpha_rp].into_iter().flatten() {
            if !(a >= 0.0 && a.is_finite()) {
                return err(format!("curve step size {a} invalid"));
            }
        }
        if !(self.curve_delta_mean > 0.0) {
            return err("curve_delta_mean must be positive".into());
        }
        self.servo.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }
}
