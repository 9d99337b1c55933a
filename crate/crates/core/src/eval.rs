//! Registration quality metrics and report assembly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::{interpolate_into, warp_nearest, Field, ScalarField, VectorField};
use crate::optimize::{RegistrationConfig, RegistrationResult};
use crate::regularizer::LossTerms;

/// Physical landmark coordinates in millimetres.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<Vec<String>>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(d) = points.first().map(Vec::len) {
            if points.iter().any(|p| p.len() != d) {
                return invalid("landmarks have inconsistent dimensionality");
            }
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return invalid("landmark coordinates must be finite");
        }
        Ok(Self { points, names: None })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Per-class Dice; `None` marks classes absent from both maps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceScores {
    pub per_class: BTreeMap<i64, Option<f64>>,
    pub mean: Option<f64>,
}

/// `2|A_k ∩ B_k| / (|A_k| + |B_k|)` for every requested class.
pub fn dice(labels_a: &ScalarField, labels_b: &ScalarField, classes: &[i64]) -> Result<DiceScores> {
    labels_a.grid().check_same(labels_b.grid())?;
    let mut per_class = BTreeMap::new();
    for &k in classes {
        let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
        for (&a, &b) in labels_a.values().iter().zip(labels_b.values()) {
            let ia = a.round() as i64 == k;
            let ib = b.round() as i64 == k;
            na += ia as usize;
            nb += ib as usize;
            inter += (ia && ib) as usize;
        }
        let score = (na + nb > 0).then(|| 2.0 * inter as f64 / (na + nb) as f64);
        per_class.insert(k, score);
    }
    let defined: Vec<f64> = per_class.values().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(DiceScores { per_class, mean })
}

/// Classes present in either label map, ignoring background label 0.
pub fn label_classes(a: &ScalarField, b: &ScalarField) -> Vec<i64> {
    let mut set: Vec<i64> = a
        .values()
        .iter()
        .chain(b.values())
        .map(|v| v.round() as i64)
        .filter(|&k| k != 0)
        .collect();
    set.sort_unstable();
    set.dedup();
    set
}

/// Landmark distances after registration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreResult {
    /// Distance in mm per landmark pair; `None` where the fixed landmark
    /// lies outside the grid.
    pub distances: Vec<Option<f64>>,
    pub excluded: usize,
    pub mean: Option<f64>,
    pub max: Option<f64>,
}

/// Target registration error. Each fixed landmark `x_f` is carried to
/// `x_f + u(x_f)` (the displacement resamples moving into fixed space) and
/// compared against its paired moving landmark.
pub fn tre(moving_lms: &LandmarkSet, fixed_lms: &LandmarkSet, disp: &VectorField) -> Result<TreResult> {
    if moving_lms.len() != fixed_lms.len() {
        return invalid(format!(
            "landmark sets differ in size: {} vs {}",
            moving_lms.len(),
            fixed_lms.len()
        ));
    }
    let grid = disp.grid();
    let d = grid.ndim();
    let spacing = grid.spacing();
    let mut distances = Vec::with_capacity(fixed_lms.len());
    for (m, f) in moving_lms.points.iter().zip(&fixed_lms.points) {
        if m.len() != d || f.len() != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                actual: m.len().min(f.len()),
            });
        }
        let mut vox = [0.0; 3];
        let mut outside = false;
        for a in 0..d {
            vox[a] = f[a] / spacing[a];
            outside |= !(0.0..=(grid.dims()[a] - 1) as f64).contains(&vox[a]);
        }
        if outside {
            distances.push(None);
            continue;
        }
        let mut u = [0.0; 3];
        interpolate_into(grid, disp.values(), d, &vox[..d], &mut u[..d]);
        let dist = (0..d)
            .map(|a| {
                let mapped = (vox[a] + u[a]) * spacing[a];
                (mapped - m[a]).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        distances.push(Some(dist));
    }
    let kept: Vec<f64> = distances.iter().flatten().copied().collect();
    Ok(TreResult {
        excluded: distances.len() - kept.len(),
        mean: (!kept.is_empty()).then(|| kept.iter().sum::<f64>() / kept.len() as f64),
        max: kept.iter().copied().reduce(f64::max),
        distances,
    })
}

/// Summary of voxel-wise endpoint errors `|u − u_true|` in voxels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpeStats {
    pub mean: f64,
    pub median: f64,
    pub max: f64,
    pub count: usize,
}

/// Endpoint error over voxels where `mask` is nonzero (all voxels when
/// absent).
pub fn endpoint_error(disp: &VectorField, truth: &VectorField, mask: Option<&ScalarField>) -> Result<EpeStats> {
    disp.grid().check_same(truth.grid())?;
    if let Some(m) = mask {
        disp.grid().check_same(m.grid())?;
    }
    let mut errs: Vec<f64> = (0..disp.grid().len())
        .filter(|&i| mask.is_none_or(|m| m.values()[i] != 0.0))
        .map(|i| {
            let sq: f64 = disp.at(i).iter().zip(truth.at(i)).map(|(a, b)| (a - b).powi(2)).sum();
            sq.sqrt()
        })
        .collect();
    if errs.is_empty() {
        return invalid("endpoint error mask selects no voxels");
    }
    errs.sort_by(f64::total_cmp);
    let n = errs.len();
    let median = if n % 2 == 1 {
        errs[n / 2]
    } else {
        0.5 * (errs[n / 2 - 1] + errs[n / 2])
    };
    Ok(EpeStats {
        mean: errs.iter().sum::<f64>() / n as f64,
        median,
        max: errs[n - 1],
        count: n,
    })
}

/// Report metrics; optional entries appear only when their inputs were given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dice: Option<DiceScores>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tre: Option<TreResult>,
    pub pct_nonpos_j: f64,
    pub pct_ndv: f64,
    pub min_j: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub iterations: usize,
    pub initial: LossTerms,
    #[serde(rename = "final")]
    pub last: LossTerms,
    pub best_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub wall_time_s: f64,
}

/// JSON-serializable summary of one registration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metrics: Metrics,
    pub loss: LossSummary,
    pub hyperparameters: RegistrationConfig,
    pub lambda_mean: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub timings: Timings,
}

/// Moving and fixed integer label maps.
pub struct LabelPair<'a> {
    pub moving: &'a ScalarField,
    pub fixed: &'a ScalarField,
}

/// Moving and fixed landmark sets.
pub struct LandmarkPair<'a> {
    pub moving: &'a LandmarkSet,
    pub fixed: &'a LandmarkSet,
}

/// Dice after resampling `moving` labels through `disp` with
/// nearest-neighbour lookup, over the nonzero labels of either map.
pub fn warped_dice(moving: &ScalarField, fixed: &ScalarField, disp: &VectorField) -> Result<DiceScores> {
    let warped = warp_nearest(moving, disp)?;
    dice(&warped, fixed, &label_classes(moving, fixed))
}

/// Assembles the report. Moving labels are warped with nearest-neighbour
/// sampling before Dice.
pub fn report(
    result: &RegistrationResult,
    labels: Option<LabelPair<'_>>,
    landmarks: Option<LandmarkPair<'_>>,
) -> Result<Report> {
    let dice = labels
        .map(|l| warped_dice(l.moving, l.fixed, &result.displacement))
        .transpose()?;
    let tre = landmarks
        .map(|l| tre(l.moving, l.fixed, &result.displacement))
        .transpose()?;
    let trace = &result.loss_trace;
    let first = trace.first().copied().unwrap_or_default();
    let last = trace.last().copied().unwrap_or_default();
    Ok(Report {
        metrics: Metrics {
            dice,
            tre,
            pct_nonpos_j: result.jacobian.pct_nonpos_j,
            pct_ndv: result.jacobian.pct_ndv,
            min_j: result.jacobian.min_j,
        },
        loss: LossSummary {
            iterations: trace.len(),
            initial: first,
            last,
            best_total: trace.iter().map(|t| t.total).fold(f64::INFINITY, f64::min),
        },
        hyperparameters: result.config.clone(),
        lambda_mean: result.lambda.mean(),
        lambda_min: result.lambda.min(),
        lambda_max: result.lambda.max(),
        timings: Timings {
            wall_time_s: result.wall_time_s,
        },
    })
}
