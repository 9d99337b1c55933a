use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use svreg_core::synth::{golden_scenario, golden_scenarios, random_shapes_image, random_smooth_velocity, sliding_pair_2d};
use svreg_core::{exponentiate, warp, warp_nearest, Field, Grid, LandmarkSet, ScalarField, VectorField};

use crate::config::{config_hash, load, Overrides};
use crate::error::{CliError, CliResult};
use crate::io::{atomic_write, encode_landmarks, read_bytes, sha256_hex, to_json_bytes, write_scalar, write_vector, Dtype};

pub const SHAPE_SCENARIOS: [&str; 2] = ["shapes-2d", "shapes-3d"];
const LANDMARK_STEP: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub scenarios: Vec<String>,
    /// Seeds the random-shape scenarios; golden scenarios carry their own.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub config_hash: String,
    pub files: Vec<ManifestEntry>,
}

pub fn valid_names() -> Vec<String> {
    golden_scenarios()
        .into_iter()
        .map(|s| s.name)
        .chain(SHAPE_SCENARIOS.iter().map(|s| s.to_string()))
        .collect()
}

/// Everything a bundle holds in memory.
pub struct Bundle {
    pub moving: ScalarField,
    pub fixed: ScalarField,
    pub true_displacement: VectorField,
    pub moving_labels: ScalarField,
    pub fixed_labels: ScalarField,
    pub foreground: ScalarField,
    pub discontinuity_mask: Option<ScalarField>,
    pub moving_landmarks: LandmarkSet,
    pub fixed_landmarks: LandmarkSet,
}

/// Fixed landmarks on a lattice inside the foreground, moving landmarks at
/// their true correspondences, both in mm.
fn lattice_landmarks(disp: &VectorField, foreground: &ScalarField) -> CliResult<(LandmarkSet, LandmarkSet)> {
    let g = disp.grid();
    let (mut fixed, mut moving) = (Vec::new(), Vec::new());
    for lin in 0..g.len() {
        let idx = g.unravel(lin);
        let on_lattice = (0..g.ndim()).all(|a| idx[a] % LANDMARK_STEP == LANDMARK_STEP / 2);
        if !on_lattice || foreground.values()[lin] == 0.0 {
            continue;
        }
        let u = disp.at(lin);
        fixed.push((0..g.ndim()).map(|a| idx[a] as f64 * g.spacing()[a]).collect());
        moving.push((0..g.ndim()).map(|a| (idx[a] as f64 + u[a]) * g.spacing()[a]).collect());
    }
    Ok((LandmarkSet::new(moving)?, LandmarkSet::new(fixed)?))
}

fn shapes_bundle(dims: &[usize], seed: u64) -> CliResult<Bundle> {
    let grid = Grid::new(dims)?;
    let (moving, moving_labels) = random_shapes_image(&grid, 4, seed)?;
    let cell = dims.iter().copied().min().unwrap_or(8) as f64 / 4.0;
    let v = random_smooth_velocity(&grid, 2.0, cell, seed ^ 0x5eed)?;
    let true_displacement = exponentiate(&v, svreg_core::diffeo::DEFAULT_SQUARING_STEPS);
    let fixed = warp(&moving, &true_displacement)?;
    let fixed_labels = warp_nearest(&moving_labels, &true_displacement)?;
    let margin = 4;
    let foreground = ScalarField::from_fn(&grid, |idx| {
        let inside = (0..grid.ndim()).all(|a| idx[a] >= margin && idx[a] + margin < dims[a]);
        f64::from(u8::from(inside))
    });
    let (moving_landmarks, fixed_landmarks) = lattice_landmarks(&true_displacement, &foreground)?;
    Ok(Bundle {
        moving,
        fixed,
        true_displacement,
        moving_labels,
        fixed_labels,
        foreground,
        discontinuity_mask: None,
        moving_landmarks,
        fixed_landmarks,
    })
}

/// Builds the named scenario in memory.
pub fn build(name: &str, seed: u64) -> CliResult<Bundle> {
    if let Some(sc) = golden_scenario(name) {
        let p = sliding_pair_2d(&sc)?;
        let fixed_labels = warp_nearest(&p.labels, &p.true_disp)?;
        let (moving_landmarks, fixed_landmarks) = lattice_landmarks(&p.true_disp, &p.foreground)?;
        return Ok(Bundle {
            moving: p.moving,
            fixed: p.fixed,
            true_displacement: p.true_disp,
            moving_labels: p.labels,
            fixed_labels,
            foreground: p.foreground,
            discontinuity_mask: Some(p.discontinuity_mask),
            moving_landmarks,
            fixed_landmarks,
        });
    }
    match name {
        "shapes-2d" => shapes_bundle(&[64, 64], seed),
        "shapes-3d" => shapes_bundle(&[32, 32, 32], seed),
        _ => Err(CliError::Config(format!(
            "unknown scenario {name:?}; valid names: {}",
            valid_names().join(", ")
        ))),
    }
}

fn write_bundle(dir: &Path, b: &Bundle, hash: &str) -> CliResult<Vec<PathBuf>> {
    let h = Some(hash);
    let mut files = Vec::new();
    files.extend(write_scalar(&dir.join("moving.npy"), &b.moving, Dtype::F64, h)?);
    files.extend(write_scalar(&dir.join("fixed.npy"), &b.fixed, Dtype::F64, h)?);
    files.extend(write_vector(&dir.join("true_displacement.npy"), &b.true_displacement, h)?);
    files.extend(write_scalar(&dir.join("moving_labels.npy"), &b.moving_labels, Dtype::I32, h)?);
    files.extend(write_scalar(&dir.join("fixed_labels.npy"), &b.fixed_labels, Dtype::I32, h)?);
    files.extend(write_scalar(&dir.join("foreground.npy"), &b.foreground, Dtype::I32, h)?);
    if let Some(mask) = &b.discontinuity_mask {
        files.extend(write_scalar(&dir.join("discontinuity_mask.npy"), mask, Dtype::I32, h)?);
    }
    for (name, set) in [("moving_landmarks.csv", &b.moving_landmarks), ("fixed_landmarks.csv", &b.fixed_landmarks)] {
        let path = dir.join(name);
        atomic_write(&path, &encode_landmarks(set)?)?;
        files.push(path);
    }
    Ok(files)
}

/// Writes one bundle directory per scenario, each with a `manifest.json`
/// listing the files it holds and their SHA-256.
pub fn run(config: &Path, overrides: &Overrides) -> CliResult<Vec<Manifest>> {
    let l = load::<SynthConfig>(config, overrides)?;
    let c = &l.config;
    if c.scenarios.is_empty() {
        return Err(CliError::Config("scenarios is empty".into()));
    }
    let valid = valid_names();
    if let Some(bad) = c.scenarios.iter().find(|s| !valid.contains(s)) {
        return Err(CliError::Config(format!(
            "unknown scenario {bad:?}; valid names: {}",
            valid.join(", ")
        )));
    }
    let hash = config_hash(c);
    let mut manifests = Vec::new();
    for name in &c.scenarios {
        let bundle = build(name, c.seed)?;
        let dir = l.output(name);
        let mut files = Vec::new();
        for path in write_bundle(&dir, &bundle, &hash)? {
            let bytes = read_bytes(&path)?;
            let rel = path.strip_prefix(&dir).unwrap_or(&path);
            files.push(ManifestEntry {
                path: rel.to_string_lossy().into_owned(),
                sha256: sha256_hex(&bytes),
                bytes: bytes.len() as u64,
            });
        }
        let manifest = Manifest {
            scenario: name.clone(),
            config_hash: hash.clone(),
            files,
        };
        atomic_write(&dir.join("manifest.json"), &to_json_bytes(&manifest))?;
        println!("{}", dir.display());
        manifests.push(manifest);
    }
    Ok(manifests)
}
