use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hyperopt::pruner::should_prune;
use crate::hyperopt::tpe::tpe_suggest;
use crate::hyperopt::{Params, SearchSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Minimize,
    Maximize,
}

impl Direction {
    /// Maps a value so that smaller is always better.
    pub(crate) fn loss(self, value: f64) -> f64 {
        match self {
            Direction::Minimize => value,
            Direction::Maximize => -value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_startup: usize,
    pub gamma: f64,
    pub n_ei_candidates: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_startup: 5,
            gamma: 0.25,
            n_ei_candidates: 24,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrunerConfig {
    pub enabled: bool,
    pub n_startup_trials: usize,
    pub n_warmup_steps: usize,
    pub interval_steps: usize,
}

impl Default for PrunerConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            n_startup_trials: 5,
            n_warmup_steps: 30,
            interval_steps: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialState {
    Running,
    Complete,
    Pruned,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub id: usize,
    pub params: Params,
    /// `(step, value)` in report order.
    pub intermediates: Vec<(usize, f64)>,
    #[serde(rename = "final")]
    pub value: Option<f64>,
    pub state: TrialState,
}

impl Trial {
    pub fn value_at(&self, step: usize) -> Option<f64> {
        self.intermediates
            .iter()
            .rev()
            .find(|(s, _)| *s == step)
            .map(|&(_, v)| v)
    }
}

/// Ordered trial record plus sampler and pruner settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TpeStudy {
    pub direction: Direction,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub pruner: PrunerConfig,
    #[serde(default)]
    pub trials: Vec<Trial>,
}

impl TpeStudy {
    pub fn new(direction: Direction, seed: u64) -> Self {
        Self {
            direction,
            seed,
            sampler: SamplerConfig::default(),
            pruner: PrunerConfig::default(),
            trials: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.sampler;
        if !(s.gamma > 0.0 && s.gamma < 1.0) {
            return invalid("sampler gamma must lie in (0, 1)");
        }
        if s.n_ei_candidates == 0 {
            return invalid("sampler n_ei_candidates must be >= 1");
        }
        for (i, t) in self.trials.iter().enumerate() {
            if t.id != i {
                return Err(Error::Study(format!("trial ids are not dense: position {i} has id {}", t.id)));
            }
            if t.state == TrialState::Complete && !t.value.is_some_and(f64::is_finite) {
                return Err(Error::Study(format!("completed trial {i} lacks a finite value")));
            }
        }
        Ok(())
    }

    pub fn completed(&self) -> impl Iterator<Item = &Trial> {
        self.trials.iter().filter(|t| t.state == TrialState::Complete)
    }

    pub fn best_trial(&self) -> Option<&Trial> {
        self.completed().min_by(|a, b| {
            let la = self.direction.loss(a.value.unwrap_or(f64::NAN));
            let lb = self.direction.loss(b.value.unwrap_or(f64::NAN));
            la.total_cmp(&lb)
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("study serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let study: Self = serde_json::from_str(text).map_err(|e| Error::Study(e.to_string()))?;
        study.validate()?;
        Ok(study)
    }
}

/// Why a trial ended without a final value.
#[derive(Clone, Debug, PartialEq)]
pub enum TrialError {
    Pruned,
    Failed(String),
}

impl<E: std::fmt::Display> From<E> for TrialError {
    fn from(e: E) -> Self {
        TrialError::Failed(e.to_string())
    }
}

/// Handle an objective uses to report progress.
pub struct TrialContext<'a> {
    study: &'a TpeStudy,
    trial: Trial,
}

impl TrialContext<'_> {
    pub fn id(&self) -> usize {
        self.trial.id
    }

    /// Records an intermediate value and returns true when the trial should
    /// stop.
    pub fn report(&mut self, step: usize, value: f64) -> bool {
        self.trial.intermediates.push((step, value));
        should_prune(self.study, &self.trial, step)
    }
}

/// Runs trials until the study holds `n_trials`, calling `persist` after
/// each one. Trials left running by an interrupted session are marked
/// failed first. Returns the best completed trial.
pub fn run_study<F, P>(
    mut objective: F,
    space: &SearchSpace,
    n_trials: usize,
    study: &mut TpeStudy,
    mut persist: P,
) -> Result<Option<Trial>>
where
    F: FnMut(&Params, &mut TrialContext<'_>) -> std::result::Result<f64, TrialError>,
    P: FnMut(&TpeStudy) -> Result<()>,
{
    study.validate()?;
    for t in &mut study.trials {
        if t.state == TrialState::Running {
            t.state = TrialState::Failed;
        }
    }
    while study.trials.len() < n_trials {
        let params = tpe_suggest(study, space)?;
        let id = study.trials.len();
        let mut ctx = TrialContext {
            study,
            trial: Trial {
                id,
                params: params.clone(),
                intermediates: Vec::new(),
                value: None,
                state: TrialState::Running,
            },
        };
        let outcome = objective(&params, &mut ctx);
        let mut trial = ctx.trial;
        match outcome {
            Ok(v) if v.is_finite() => {
                trial.value = Some(v);
                trial.state = TrialState::Complete;
            }
            Ok(_) | Err(TrialError::Failed(_)) => trial.state = TrialState::Failed,
            Err(TrialError::Pruned) => trial.state = TrialState::Pruned,
        }
        study.trials.push(trial);
        persist(study)?;
    }
    Ok(study.best_trial().cloned())
}
