//! Scenario configuration: the JSON schema driving the CLI.
//!
//! Every scenario carries an explicit seed; nothing in the toolkit ever
//! draws entropy from the wall clock.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::drift::LyapunovCandidate;
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::rates::{HInvMethod, RateFunction, RateProfile};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateSpec {
    Polynomial {
        alpha: f64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    LogSmoothed,
    /// Named catalog of deliberately invalid rate functions, kept so that
    /// validation failures can be exercised from config.
    Custom { name: String },
}

fn default_scale() -> f64 {
    1.0
}

impl RateSpec {
    pub fn build(&self) -> Result<RateFunction> {
        match self {
            RateSpec::Polynomial { alpha, scale } => RateFunction::polynomial(*alpha, *scale),
            RateSpec::LogSmoothed => Ok(RateFunction::LogSmoothed),
            RateSpec::Custom { name } => match name.as_str() {
                "identity" => Ok(RateFunction::custom("identity", |x| x, |_| 1.0)),
                other => Err(Error::Config(format!("unknown custom rate '{other}'"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    ClosedForm,
    Ode,
    Bisect,
}

impl From<MethodSpec> for HInvMethod {
    fn from(m: MethodSpec) -> Self {
        match m {
            MethodSpec::ClosedForm => HInvMethod::ClosedForm,
            MethodSpec::Ode => HInvMethod::OdeIntegrate,
            MethodSpec::Bisect => HInvMethod::BisectOnQuadrature,
        }
    }
}

/// Lyapunov candidate over the chain state index.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VSpec {
    Table { values: Vec<f64> },
    /// `V(n) = (n + offset)^exponent`
    Power {
        exponent: f64,
        #[serde(default = "default_offset")]
        offset: f64,
    },
    /// `V(n) = base^n`
    Geometric { base: f64 },
    /// `V = 1`
    Constant,
}

fn default_offset() -> f64 {
    1.0
}

impl VSpec {
    pub fn build(&self, n_states: usize) -> Result<LyapunovCandidate> {
        let values = match self {
            VSpec::Table { values } => values.clone(),
            VSpec::Power { exponent, offset } => (0..n_states)
                .map(|n| (n as f64 + offset).powf(*exponent))
                .collect(),
            VSpec::Geometric { base } => {
                (0..n_states).map(|n| base.powi(n as i32)).collect()
            }
            VSpec::Constant => vec![1.0; n_states],
        };
        LyapunovCandidate::tabulated(values)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum TargetSpec {
    Auto(String),
    States { states: Vec<usize> },
}

impl Default for TargetSpec {
    fn default() -> Self {
        TargetSpec::Auto("auto".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum KSpec {
    Auto(String),
    Fixed(f64),
}

impl Default for KSpec {
    fn default() -> Self {
        KSpec::Auto("auto".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum RSpec {
    Calibrate(String),
    Fixed(f64),
}

impl Default for RSpec {
    fn default() -> Self {
        RSpec::Calibrate("calibrate".into())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EstimatorSettings {
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    /// Paths per state for the psi-from-hitting tabulation.
    #[serde(default = "default_psi_paths")]
    pub psi_paths: usize,
    #[serde(default = "default_horizon_cap")]
    pub horizon_cap: f64,
    #[serde(default)]
    pub r: RSpec,
}

fn default_n_paths() -> usize {
    100_000
}
fn default_psi_paths() -> usize {
    2000
}
fn default_horizon_cap() -> f64 {
    1e4
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            n_paths: default_n_paths(),
            psi_paths: default_psi_paths(),
            horizon_cap: default_horizon_cap(),
            r: RSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GridSpec {
    Linspace { start: f64, stop: f64, points: usize },
    Logspace { start: f64, stop: f64, points: usize },
}

impl GridSpec {
    pub fn build(&self) -> Result<Vec<f64>> {
        match *self {
            GridSpec::Linspace {
                start,
                stop,
                points,
            } => {
                if points < 2 || !(stop > start) {
                    return Err(Error::Config(format!("bad linspace {self:?}")));
                }
                Ok((0..points)
                    .map(|i| start + (stop - start) * i as f64 / (points - 1) as f64)
                    .collect())
            }
            GridSpec::Logspace {
                start,
                stop,
                points,
            } => {
                if points < 2 || !(start > 0.0) || !(stop > start) {
                    return Err(Error::Config(format!("bad logspace {self:?}")));
                }
                let (a, b) = (start.ln(), stop.ln());
                Ok((0..points)
                    .map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp())
                    .collect())
            }
        }
    }
}

fn default_condition2_grid() -> GridSpec {
    GridSpec::Linspace {
        start: 0.0,
        stop: 20.0,
        points: 201,
    }
}

fn default_condition2_dt() -> f64 {
    0.02
}

fn default_delta() -> f64 {
    1.0
}

/// A complete scenario: model, rate function, Lyapunov candidate, target
/// set, estimator settings, time grids, and the master seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub model: ModelSpec,
    pub rate: RateSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_inv_method: Option<MethodSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<VSpec>,
    #[serde(default)]
    pub target_set: TargetSpec,
    #[serde(default)]
    pub k: KSpec,
    #[serde(default)]
    pub estimator: EstimatorSettings,
    #[serde(default = "default_condition2_grid")]
    pub condition2_grid: GridSpec,
    #[serde(default = "default_condition2_dt")]
    pub condition2_dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv_times: Option<GridSpec>,
    #[serde(default)]
    pub burn_in: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default)]
    pub x0: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub seed: u64,
}

fn default_window() -> usize {
    5
}

impl Scenario {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let scenario: Scenario = serde_json::from_str(&text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        self.rate.build()?;
        if let TargetSpec::Auto(s) = &self.target_set {
            if s != "auto" {
                return Err(Error::Config(format!("target_set must be 'auto' or a state list, got '{s}'")));
            }
        }
        if let KSpec::Auto(s) = &self.k {
            if s != "auto" {
                return Err(Error::Config(format!("k must be 'auto' or a number, got '{s}'")));
            }
        }
        if let RSpec::Calibrate(s) = &self.estimator.r {
            if s != "calibrate" {
                return Err(Error::Config(format!("r must be 'calibrate' or a number, got '{s}'")));
            }
        }
        if self.estimator.n_paths == 0 || self.estimator.psi_paths == 0 {
            return Err(Error::Config("path counts must be positive".into()));
        }
        Ok(())
    }

    /// The rate profile: closed form for polynomial rates unless the
    /// scenario pins a method.
    pub fn rate_profile(&self) -> Result<RateProfile> {
        let rate = self.rate.build()?;
        match self.h_inv_method {
            Some(m) => RateProfile::with_method(rate, m.into(), crate::rates::TOL_NUMERIC),
            None => Ok(RateProfile::new(rate)),
        }
    }
}
