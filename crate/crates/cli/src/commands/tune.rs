use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use svreg_core::hyperopt::{run_study, Params, PrunerConfig, SamplerConfig, TrialContext, TrialError};
use svreg_core::optimize::register_observed;
use svreg_core::{endpoint_error, Direction, ParamSpec, PriorKind, RegistrationConfig, SearchSpace, TpeStudy};

use crate::commands::synth::{build, valid_names, Bundle};
use crate::config::{load, Overrides};
use crate::error::{CliError, CliResult};
use crate::io::{atomic_write, read_bytes, to_json_bytes};

pub const STUDY_FILE: &str = "study.json";
pub const BEST_PARAMS_FILE: &str = "best_params.json";

fn default_scenarios() -> Vec<String> {
    vec!["slide-v6".into(), "slide-h4".into(), "slide-s5".into()]
}

fn default_space() -> SearchSpace {
    SearchSpace::new(vec![
        ParamSpec::new("alpha_prime", 0.01, 1.0).log_scale(),
        ParamSpec::new("lambda_max", 1.0, 30.0).log_scale(),
    ])
    .expect("valid default space")
}

fn default_trials() -> usize {
    50
}

fn default_report_every() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<String>,
    #[serde(default = "default_space")]
    pub space: SearchSpace,
    /// Total trials in the study, counting those already on disk.
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    /// Base settings the sampled parameters are written into.
    #[serde(default)]
    pub registration: RegistrationConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub pruner: PrunerConfig,
    /// Iterations between intermediate reports to the pruner.
    #[serde(default = "default_report_every")]
    pub report_every: usize,
}

/// Writes sampled values into a copy of `base`. Prior parameters must match
/// the base prior's kind.
pub fn apply_params(base: &RegistrationConfig, params: &Params) -> CliResult<RegistrationConfig> {
    let mut c = base.clone();
    for (name, &x) in params {
        match (name.as_str(), &mut c.prior) {
            ("alpha_prime", PriorKind::Beta { alpha_prime, .. }) => *alpha_prime = x,
            ("lambda_max", PriorKind::Beta { lambda_max, .. }) => *lambda_max = x,
            ("sigma_prime", PriorKind::Gaussian { sigma_prime, .. }) => *sigma_prime = x,
            ("lambda_mean", PriorKind::Gaussian { lambda_mean, .. }) => *lambda_mean = x,
            ("lambda", PriorKind::Uniform { lambda }) => *lambda = x,
            ("lr", _) => c.adam.lr = x,
            ("lambda_resolution_factor", _) => c.lambda_resolution_factor = x,
            ("dice_weight", _) => c.dice_weight = x,
            (other, prior) => {
                return Err(CliError::Config(format!(
                    "search parameter {other:?} does not apply to the {} prior",
                    prior.name()
                )))
            }
        }
    }
    c.validate()?;
    Ok(c)
}

/// Similarity reported every `every` iterations, plus the median foreground
/// endpoint error at the end. Stops early when `keep_going` says so.
fn run_scenario(
    bundle: &Bundle,
    cfg: &RegistrationConfig,
    every: usize,
    mut keep_going: impl FnMut(usize, f64) -> bool,
) -> svreg_core::Result<Option<f64>> {
    let mut stopped = false;
    let result = register_observed(&bundle.moving, &bundle.fixed, cfg, None, |rep| {
        if rep.iteration % every == 0 && !keep_going(rep.iteration, rep.terms.similarity) {
            stopped = true;
            return false;
        }
        true
    })?;
    if stopped {
        return Ok(None);
    }
    let epe = endpoint_error(&result.displacement, &bundle.true_displacement, Some(&bundle.foreground))?;
    Ok(Some(epe.median))
}

/// Reports recorded during one scenario, and its final error if it ran to the end.
type ScenarioRun = (Vec<(usize, f64)>, Option<f64>);

fn objective(
    params: &Params,
    ctx: &mut TrialContext<'_>,
    c: &TuneConfig,
    bundles: &[Bundle],
    threads: usize,
) -> Result<f64, TrialError> {
    let cfg = apply_params(&c.registration, params)?;
    let iters = cfg.iterations;
    let every = c.report_every;
    let mut total = 0.0;
    if threads > 1 {
        // Run the scenarios concurrently, then replay their reports in the
        // sequential order so pruning decisions do not depend on scheduling.
        let runs: Vec<ScenarioRun> = bundles
            .par_iter()
            .map(|b| {
                let mut trace = Vec::new();
                let epe = run_scenario(b, &cfg, every, |it, sim| {
                    trace.push((it, sim));
                    true
                })?;
                Ok((trace, epe))
            })
            .collect::<svreg_core::Result<_>>()?;
        for (s, (trace, epe)) in runs.into_iter().enumerate() {
            for (it, sim) in trace {
                if ctx.report(s * iters + it, sim) {
                    return Err(TrialError::Pruned);
                }
            }
            total += epe.expect("unstopped run has a final value");
        }
    } else {
        for (s, b) in bundles.iter().enumerate() {
            match run_scenario(b, &cfg, every, |it, sim| !ctx.report(s * iters + it, sim))? {
                Some(epe) => total += epe,
                None => return Err(TrialError::Pruned),
            }
        }
    }
    Ok(total / bundles.len() as f64)
}

/// Final state of a tuning run.
#[derive(Clone, Debug)]
pub struct TuneOutcome {
    pub study: TpeStudy,
    pub best: RegistrationConfig,
}

/// Runs or resumes the study in `out_dir/study.json` until it holds
/// `n_trials`, then writes the best trial's full registration settings to
/// `out_dir/best_params.json`.
pub fn run(config: &Path, overrides: &Overrides, threads: usize) -> CliResult<TuneOutcome> {
    let l = load::<TuneConfig>(config, overrides)?;
    let c = &l.config;
    if c.scenarios.is_empty() {
        return Err(CliError::Config("scenarios is empty".into()));
    }
    if c.report_every == 0 {
        return Err(CliError::Config("report_every must be at least 1".into()));
    }
    let valid = valid_names();
    if let Some(bad) = c.scenarios.iter().find(|s| !valid.contains(s)) {
        return Err(CliError::Config(format!(
            "unknown scenario {bad:?}; valid names: {}",
            valid.join(", ")
        )));
    }
    let lows: Params = c.space.params().iter().map(|p| (p.name.clone(), p.low)).collect();
    apply_params(&c.registration, &lows)?;

    let study_path = l.output(STUDY_FILE);
    let mut study = if study_path.exists() {
        let text = String::from_utf8(read_bytes(&study_path)?).map_err(|e| CliError::io(&study_path, e))?;
        let s = TpeStudy::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", study_path.display())))?;
        if s.direction != Direction::Minimize || s.seed != c.seed || s.sampler != c.sampler || s.pruner != c.pruner {
            return Err(CliError::Config(format!(
                "{} was created with different seed, sampler or pruner settings",
                study_path.display()
            )));
        }
        s
    } else {
        let mut s = TpeStudy::new(Direction::Minimize, c.seed);
        s.sampler = c.sampler;
        s.pruner = c.pruner;
        s
    };

    let bundles = c
        .scenarios
        .iter()
        .map(|name| build(name, c.seed))
        .collect::<CliResult<Vec<_>>>()?;
    let mut persist_error = None;
    let best = run_study(
        |params, ctx| objective(params, ctx, c, &bundles, threads),
        &c.space,
        c.n_trials,
        &mut study,
        |s| {
            atomic_write(&study_path, s.to_json().as_bytes()).map_err(|e| {
                let msg = e.to_string();
                persist_error = Some(e);
                svreg_core::Error::Study(msg)
            })
        },
    );
    if let Some(e) = persist_error {
        return Err(e);
    }
    let best = best?;
    let best = best.ok_or_else(|| CliError::Numerical("no trial completed".into()))?;
    let best_cfg = apply_params(&c.registration, &best.params)?;
    atomic_write(&l.output(BEST_PARAMS_FILE), &to_json_bytes(&best_cfg))?;
    println!("{}", l.out_dir.display());
    Ok(TuneOutcome { study, best: best_cfg })
}
