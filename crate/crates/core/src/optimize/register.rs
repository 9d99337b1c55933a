use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diffeo::{exponentiate, fold_metrics, invert, JacobianReport, DEFAULT_SQUARING_STEPS};
use crate::error::{invalid, Error, Result};
use crate::field::{Field, ScalarField, VectorField};
use crate::optimize::adam::{adam_step, AdamConfig, AdamState};
use crate::optimize::weights::{realize_weights, WeightParams};
use crate::regularizer::{total_loss, LabelStacks, LossTerms, PriorKind};
use crate::similarity::NccConfig;

/// Everything the per-pair optimization needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationConfig {
    pub ncc: NccConfig,
    pub prior: PriorKind,
    pub n_squaring: usize,
    pub iterations: usize,
    pub adam: AdamConfig,
    pub lambda_resolution_factor: f64,
    pub dice_weight: f64,
    pub seed: u64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            ncc: NccConfig::default(),
            prior: PriorKind::Beta {
                alpha_prime: 0.175,
                lambda_max: 3.354,
            },
            n_squaring: DEFAULT_SQUARING_STEPS,
            iterations: 400,
            adam: AdamConfig::default(),
            lambda_resolution_factor: 0.25,
            dice_weight: 0.0,
            seed: 0,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        self.ncc.validate()?;
        self.prior.validate()?;
        self.adam.validate()?;
        if self.iterations == 0 {
            return invalid("iterations must be at least 1");
        }
        if self.n_squaring > 20 {
            return invalid(format!("n_squaring {} is unreasonably large", self.n_squaring));
        }
        if !(self.lambda_resolution_factor > 0.0 && self.lambda_resolution_factor <= 1.0) {
            return invalid("lambda_resolution_factor must lie in (0, 1]");
        }
        if !(self.dice_weight.is_finite() && self.dice_weight >= 0.0) {
            return invalid("dice_weight must be >= 0");
        }
        Ok(())
    }
}

/// Outputs of one registration.
#[derive(Clone, Debug)]
pub struct RegistrationResult {
    pub velocity: VectorField,
    /// Displacement of `exp(v)`, resampling the moving image into fixed space.
    pub displacement: VectorField,
    pub inverse: VectorField,
    pub lambda: ScalarField,
    pub weights: WeightParams,
    /// Objective before each update.
    pub loss_trace: Vec<LossTerms>,
    pub jacobian: JacobianReport,
    pub wall_time_s: f64,
    /// True when an observer stopped the loop before `cfg.iterations`.
    pub stopped_early: bool,
    pub config: RegistrationConfig,
}

/// State handed to a registration observer once per iteration.
pub struct IterationReport<'a> {
    /// 1-based iteration index.
    pub iteration: usize,
    pub terms: LossTerms,
    pub velocity: &'a VectorField,
    pub weights: &'a WeightParams,
}

fn check_intensity(name: &str, img: &ScalarField) -> Result<()> {
    const TOL: f64 = 1e-9;
    let (lo, hi) = (img.min(), img.max());
    if lo < -TOL || hi > 1.0 + TOL {
        return invalid(format!(
            "{name} intensities must be normalized to [0, 1], found [{lo}, {hi}]"
        ));
    }
    Ok(())
}

/// Per-pair MAP registration: jointly fits the velocity field and the weight
/// map with Adam, starting from `v = 0`.
pub fn register(
    moving: &ScalarField,
    fixed: &ScalarField,
    cfg: &RegistrationConfig,
    labels: Option<&LabelStacks>,
) -> Result<RegistrationResult> {
    register_observed(moving, fixed, cfg, labels, |_| true)
}

/// [`register`] with a per-iteration callback; returning `false` stops the
/// loop after the current evaluation.
pub fn register_observed(
    moving: &ScalarField,
    fixed: &ScalarField,
    cfg: &RegistrationConfig,
    labels: Option<&LabelStacks>,
    mut observer: impl FnMut(&IterationReport<'_>) -> bool,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let grid = fixed.grid();
    grid.check_same(moving.grid())?;
    check_intensity("moving", moving)?;
    check_intensity("fixed", fixed)?;
    let start = Instant::now();

    let mut velocity = VectorField::zeros(grid);
    let mut weights = WeightParams::init(grid, cfg.prior, cfg.lambda_resolution_factor)?;
    let mut v_state = AdamState::new(velocity.values().len());
    let mut z_state = AdamState::new(weights.z.values().len());
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut stopped_early = false;

    for it in 1..=cfg.iterations {
        let eval = total_loss(fixed, moving, &velocity, &weights, cfg, labels).map_err(|e| match e {
            Error::NonFinite { term, .. } => Error::NonFinite { term, iteration: it },
            other => other,
        })?;
        if eval.grad_velocity.values().iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                term: "velocity gradient".into(),
                iteration: it,
            });
        }
        if eval.grad_weights.values().iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                term: "weight gradient".into(),
                iteration: it,
            });
        }
        trace.push(eval.terms);
        let report = IterationReport {
            iteration: it,
            terms: eval.terms,
            velocity: &velocity,
            weights: &weights,
        };
        if !observer(&report) {
            stopped_early = it < cfg.iterations;
            break;
        }
        adam_step(velocity.data_mut(), eval.grad_velocity.values(), &mut v_state, &cfg.adam, it)?;
        if weights.trainable() {
            adam_step(weights.z.data_mut(), eval.grad_weights.values(), &mut z_state, &cfg.adam, it)?;
        }
    }

    let displacement = exponentiate(&velocity, cfg.n_squaring);
    let inverse = invert(&velocity, cfg.n_squaring);
    let lambda = realize_weights(&weights, grid)?.lambda;
    let jacobian = fold_metrics(&displacement);
    Ok(RegistrationResult {
        velocity,
        displacement,
        inverse,
        lambda,
        weights,
        loss_trace: trace,
        jacobian,
        wall_time_s: start.elapsed().as_secs_f64(),
        stopped_early,
        config: cfg.clone(),
    })
}
