//! Tree-structured Parzen estimator search with a median pruner.

mod pruner;
mod study;
mod tpe;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub use pruner::should_prune;
pub use study::{run_study, Direction, PrunerConfig, SamplerConfig, TpeStudy, Trial, TrialContext, TrialError, TrialState};
pub use tpe::tpe_suggest;

/// Parameter assignment keyed by name.
pub type Params = BTreeMap<String, f64>;

/// One continuous search dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    pub low: f64,
    pub high: f64,
    #[serde(default)]
    pub log: bool,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, low: f64, high: f64) -> Self {
        Self {
            name: name.into(),
            low,
            high,
            log: false,
        }
    }

    pub fn log_scale(mut self) -> Self {
        self.log = true;
        self
    }

    /// Bounds in the space where sampling happens.
    pub(crate) fn internal_bounds(&self) -> (f64, f64) {
        if self.log {
            (self.low.ln(), self.high.ln())
        } else {
            (self.low, self.high)
        }
    }

    pub(crate) fn to_internal(&self, x: f64) -> f64 {
        if self.log {
            x.ln()
        } else {
            x
        }
    }

    pub(crate) fn external_value(&self, t: f64) -> f64 {
        let x = if self.log { t.exp() } else { t };
        x.clamp(self.low, self.high)
    }
}

/// Named continuous parameters with bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ParamSpec>", into = "Vec<ParamSpec>")]
pub struct SearchSpace {
    params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        if params.is_empty() {
            return invalid("search space is empty");
        }
        for (i, p) in params.iter().enumerate() {
            if !(p.low.is_finite() && p.high.is_finite() && p.low < p.high) {
                return invalid(format!("parameter {:?} needs finite low < high", p.name));
            }
            if p.log && p.low <= 0.0 {
                return invalid(format!("log-scale parameter {:?} needs low > 0", p.name));
            }
            if params[..i].iter().any(|q| q.name == p.name) {
                return invalid(format!("duplicate parameter name {:?}", p.name));
            }
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn contains(&self, assignment: &Params) -> bool {
        assignment.len() == self.params.len()
            && self.params.iter().all(|p| {
                assignment
                    .get(&p.name)
                    .is_some_and(|&x| x >= p.low && x <= p.high)
            })
    }
}

impl TryFrom<Vec<ParamSpec>> for SearchSpace {
    type Error = crate::error::Error;

    fn try_from(params: Vec<ParamSpec>) -> Result<Self> {
        Self::new(params)
    }
}

impl From<SearchSpace> for Vec<ParamSpec> {
    fn from(s: SearchSpace) -> Self {
        s.params
    }
}

/// Branin function with both inputs mapped from `[0, 1]`; global minimum
/// 0.397887 at three points.
pub fn branin_unit(u: f64, v: f64) -> f64 {
    use std::f64::consts::PI;
    let x1 = -5.0 + 15.0 * u;
    let x2 = 15.0 * v;
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}
