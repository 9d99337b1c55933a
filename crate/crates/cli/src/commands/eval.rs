use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use svreg_core::eval::warped_dice;
use svreg_core::{endpoint_error, fold_metrics, tre, DiceScores, EpeStats, Field, TreResult};

use crate::config::{config_hash, load, Overrides};
use crate::error::{CliError, CliResult};
use crate::io::{atomic_write, read_landmarks, read_scalar, read_vector, to_json_bytes};

pub const EVAL_FILE: &str = "eval.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub displacement: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moving_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moving_landmarks: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_landmarks: Option<PathBuf>,
    /// Ground-truth displacement for endpoint errors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_displacement: Option<PathBuf>,
    /// Restricts endpoint errors to nonzero voxels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foreground: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dice: Option<DiceScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tre: Option<TreResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epe: Option<EpeStats>,
    pub pct_nonpos_j: f64,
    pub pct_ndv: f64,
    pub min_j: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_hash: String,
    pub metrics: EvalMetrics,
}

fn pair<'a>(a: &'a Option<PathBuf>, b: &'a Option<PathBuf>, what: &str) -> CliResult<Option<(&'a PathBuf, &'a PathBuf)>> {
    match (a, b) {
        (Some(a), Some(b)) => Ok(Some((a, b))),
        (None, None) => Ok(None),
        _ => Err(CliError::Config(format!("{what} need both a moving and a fixed file"))),
    }
}

/// Computes metrics for a stored displacement and writes `eval.json`. Every
/// volume must share the displacement's grid.
pub fn run(config: &Path, overrides: &Overrides) -> CliResult<EvalReport> {
    let l = load::<EvalConfig>(config, overrides)?;
    let c = &l.config;
    let disp = read_vector(&l.resolve(&c.displacement))?;
    let grid = disp.grid().clone();

    let dice = match pair(&c.moving_labels, &c.fixed_labels, "labels")? {
        Some((m, f)) => {
            let (m, _) = read_scalar(&l.resolve(m))?;
            let (f, _) = read_scalar(&l.resolve(f))?;
            grid.check_same(m.grid())?;
            grid.check_same(f.grid())?;
            Some(warped_dice(&m, &f, &disp)?)
        }
        None => None,
    };
    let tre = match pair(&c.moving_landmarks, &c.fixed_landmarks, "landmarks")? {
        Some((m, f)) => {
            let m = read_landmarks(&l.resolve(m), grid.ndim())?;
            let f = read_landmarks(&l.resolve(f), grid.ndim())?;
            Some(tre(&m, &f, &disp)?)
        }
        None => None,
    };
    let epe = match &c.true_displacement {
        Some(t) => {
            let truth = read_vector(&l.resolve(t))?;
            grid.check_same(truth.grid())?;
            let mask = match &c.foreground {
                Some(p) => {
                    let (m, _) = read_scalar(&l.resolve(p))?;
                    grid.check_same(m.grid())?;
                    Some(m)
                }
                None => None,
            };
            Some(endpoint_error(&disp, &truth, mask.as_ref())?)
        }
        None if c.foreground.is_some() => {
            return Err(CliError::Config("foreground needs true_displacement".into()));
        }
        None => None,
    };
    let jac = fold_metrics(&disp);
    let out = EvalReport {
        config_hash: config_hash(c),
        metrics: EvalMetrics {
            dice,
            tre,
            epe,
            pct_nonpos_j: jac.pct_nonpos_j,
            pct_ndv: jac.pct_ndv,
            min_j: jac.min_j,
        },
    };
    atomic_write(&l.output(EVAL_FILE), &to_json_bytes(&out))?;
    println!("{}", l.output(EVAL_FILE).display());
    Ok(out)
}
