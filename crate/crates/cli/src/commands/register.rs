use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use svreg_core::eval::{LabelPair, LandmarkPair};
use svreg_core::{register, report, Field, LabelStacks, RegistrationConfig, Report};

use crate::config::{config_hash, load, Loaded, Overrides};
use crate::error::{CliError, CliResult};
use crate::io::{atomic_write, read_bytes, read_landmarks, read_scalar, to_json_bytes, write_scalar, write_vector, Dtype};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegisterConfig {
    pub moving: PathBuf,
    pub fixed: PathBuf,
    /// Replaces `registration.seed` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Inline registration settings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registration: Option<RegistrationConfig>,
    /// Registration settings in their own JSON file, e.g. the best-params
    /// file written by `tune`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registration_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moving_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub moving_landmarks: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_landmarks: Option<PathBuf>,
}

/// `report.json`: the core report plus the hash of the effective config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegisterReport {
    pub config_hash: String,
    #[serde(flatten)]
    pub report: Report,
}

#[derive(Serialize)]
struct Hashed<'a> {
    config: &'a RegisterConfig,
    registration: &'a RegistrationConfig,
}

pub fn load_registration(path: &Path) -> CliResult<RegistrationConfig> {
    let bytes = read_bytes(path)?;
    let cfg: RegistrationConfig =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn effective_registration(l: &Loaded<RegisterConfig>) -> CliResult<RegistrationConfig> {
    let c = &l.config;
    let mut reg = match (&c.registration, &c.registration_file) {
        (Some(_), Some(_)) => {
            return Err(CliError::Config(
                "set at most one of registration and registration_file".into(),
            ))
        }
        (Some(r), None) => r.clone(),
        (None, Some(p)) => load_registration(&l.resolve(p))?,
        (None, None) => RegistrationConfig::default(),
    };
    if let Some(seed) = c.seed {
        reg.seed = seed;
    }
    reg.validate()?;
    Ok(reg)
}

fn both<'a>(a: &'a Option<PathBuf>, b: &'a Option<PathBuf>, what: &str) -> CliResult<Option<(&'a PathBuf, &'a PathBuf)>> {
    match (a, b) {
        (Some(a), Some(b)) => Ok(Some((a, b))),
        (None, None) => Ok(None),
        _ => Err(CliError::Config(format!("{what} need both a moving and a fixed file"))),
    }
}

/// Runs the registration and writes `displacement`, `inverse`, `velocity`
/// and `lambda` volumes plus `report.json` into the output directory.
pub fn run(config: &Path, overrides: &Overrides) -> CliResult<RegisterReport> {
    let l: Loaded<RegisterConfig> = load(config, overrides)?;
    let reg = effective_registration(&l)?;
    let hash = config_hash(&Hashed {
        config: &l.config,
        registration: &reg,
    });
    let c = &l.config;
    let (moving, _) = read_scalar(&l.resolve(&c.moving))?;
    let (fixed, _) = read_scalar(&l.resolve(&c.fixed))?;
    fixed.grid().check_same(moving.grid())?;

    let labels = match both(&c.moving_labels, &c.fixed_labels, "labels")? {
        Some((m, f)) => {
            let (m, _) = read_scalar(&l.resolve(m))?;
            let (f, _) = read_scalar(&l.resolve(f))?;
            fixed.grid().check_same(m.grid())?;
            fixed.grid().check_same(f.grid())?;
            Some((m, f))
        }
        None => None,
    };
    let landmarks = match both(&c.moving_landmarks, &c.fixed_landmarks, "landmarks")? {
        Some((m, f)) => {
            let d = fixed.grid().ndim();
            Some((read_landmarks(&l.resolve(m), d)?, read_landmarks(&l.resolve(f), d)?))
        }
        None => None,
    };

    let stacks = match &labels {
        Some((m, f)) if reg.dice_weight > 0.0 => {
            let n = m.max().max(f.max()).max(0.0).round() as usize;
            Some(LabelStacks::from_label_maps(m, f, n)?)
        }
        _ => None,
    };
    let result = register(&moving, &fixed, &reg, stacks.as_ref())?;
    let rep = report(
        &result,
        labels.as_ref().map(|(m, f)| LabelPair { moving: m, fixed: f }),
        landmarks.as_ref().map(|(m, f)| LandmarkPair { moving: m, fixed: f }),
    )?;

    let h = Some(hash.as_str());
    write_vector(&l.output("displacement.npy"), &result.displacement, h)?;
    write_vector(&l.output("inverse.npy"), &result.inverse, h)?;
    write_vector(&l.output("velocity.npy"), &result.velocity, h)?;
    write_scalar(&l.output("lambda.npy"), &result.lambda, Dtype::F64, h)?;
    let out = RegisterReport {
        config_hash: hash,
        report: rep,
    };
    atomic_write(&l.output("report.json"), &to_json_bytes(&out))?;
    println!("{}", l.out_dir.display());
    Ok(out)
}
