//! Spatially varying diffusion energy, the hyperprior penalties on the
//! weight volume, and assembly of the full registration objective.

use serde::{Deserialize, Serialize};

use crate::diffeo::ExpTape;
use crate::error::{invalid, Error, Result};
use crate::field::{warp, warp_adjoint_disp, Field, Grid, ScalarField, VectorField};
use crate::optimize::{realize_weights, weights_backward, RegistrationConfig, WeightParams};
use crate::similarity::{ncc_loss, soft_dice_loss};

/// Hyperprior on the regularization weight volume.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorKind {
    /// Power-function beta prior: `λ = λ_max · Sigmoid(z)`, penalty
    /// `−α′ Σ log(λ/λ_max)`.
    Beta { alpha_prime: f64, lambda_max: f64 },
    /// Truncated normal prior: `λ = ReLU(z)`, penalty
    /// `σ′ Σ (λ/λ_mean − 1)²`.
    Gaussian { sigma_prime: f64, lambda_mean: f64 },
    /// Spatially invariant weight with no hyperprior; the weights are frozen.
    Uniform { lambda: f64 },
}

impl PriorKind {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        match *self {
            PriorKind::Beta {
                alpha_prime,
                lambda_max,
            } => {
                if !ok(alpha_prime) {
                    return invalid(format!("alpha_prime must be >= 0, got {alpha_prime}"));
                }
                // λ_max = 0 is accepted as the unregularized limit.
                if !ok(lambda_max) {
                    return invalid(format!("lambda_max must be >= 0, got {lambda_max}"));
                }
            }
            PriorKind::Gaussian {
                sigma_prime,
                lambda_mean,
            } => {
                if !ok(sigma_prime) {
                    return invalid(format!("sigma_prime must be >= 0, got {sigma_prime}"));
                }
                if !(lambda_mean.is_finite() && lambda_mean > 0.0) {
                    return invalid(format!("lambda_mean must be > 0, got {lambda_mean}"));
                }
            }
            PriorKind::Uniform { lambda } => {
                if !ok(lambda) {
                    return invalid(format!("uniform lambda must be >= 0, got {lambda}"));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            PriorKind::Beta { .. } => "beta",
            PriorKind::Gaussian { .. } => "gaussian",
            PriorKind::Uniform { .. } => "uniform",
        }
    }
}

/// `(1/|Ω|) Σ_p λ(p) Σ_a |u(p+e_a) − u(p)|²` with gradients with respect to
/// `u` and `λ`. Pairs without a forward neighbour are skipped.
pub fn weighted_diffusion(u: &VectorField, lam: &ScalarField) -> Result<(f64, VectorField, ScalarField)> {
    let grid = u.grid();
    grid.check_same(lam.grid())?;
    if let Some(i) = lam.values().iter().position(|&l| l < 0.0) {
        return invalid(format!("negative regularization weight at voxel {i}"));
    }
    let d = grid.ndim();
    let n = grid.len();
    let inv_n = 1.0 / n as f64;
    let strides = grid.strides();
    let uv = u.values();
    let lv = lam.values();
    let mut grad_u = vec![0.0; uv.len()];
    let mut grad_l = vec![0.0; n];
    let mut energy = 0.0;
    for p in 0..n {
        let idx = grid.unravel(p);
        let mut sq = 0.0;
        for a in 0..d {
            if idx[a] + 1 >= grid.dims()[a] {
                continue;
            }
            let q = p + strides[a];
            for c in 0..d {
                let diff = uv[q * d + c] - uv[p * d + c];
                sq += diff * diff;
                let g = 2.0 * lv[p] * inv_n * diff;
                grad_u[q * d + c] += g;
                grad_u[p * d + c] -= g;
            }
        }
        energy += lv[p] * sq;
        grad_l[p] = sq * inv_n;
    }
    Ok((
        energy * inv_n,
        VectorField::from_parts_unchecked(grid.clone(), grad_u),
        ScalarField::from_parts_unchecked(grid.clone(), grad_l),
    ))
}

/// Largest grid the dense Laplacian oracle accepts.
pub const DENSE_LAPLACIAN_MAX: usize = 1000;

/// Dense weighted graph Laplacian `D − A`, row-major `n × n`.
///
/// Every forward edge `(p, p + e_a)` carries weight `λ(p)` in both
/// directions, so `uᵀ(D − A)u = Σ_p λ(p)|∇u(p)|²`.
pub fn build_laplacian_dense(lam: &ScalarField) -> Result<Vec<f64>> {
    let grid = lam.grid();
    let n = grid.len();
    if n > DENSE_LAPLACIAN_MAX {
        return invalid(format!("dense laplacian limited to {DENSE_LAPLACIAN_MAX} voxels, got {n}"));
    }
    let strides = grid.strides();
    let mut m = vec![0.0; n * n];
    for p in 0..n {
        let idx = grid.unravel(p);
        let w = lam.values()[p];
        for a in 0..grid.ndim() {
            if idx[a] + 1 >= grid.dims()[a] {
                continue;
            }
            let q = p + strides[a];
            m[p * n + q] -= w;
            m[q * n + p] -= w;
            m[p * n + p] += w;
            m[q * n + q] += w;
        }
    }
    Ok(m)
}

/// Floor applied to normalized weights inside the logarithm.
pub const BETA_LOG_FLOOR: f64 = 1e-7;

/// `−(α′/|Ω|) Σ log λ_norm(p)` and its gradient with respect to `λ_norm`.
pub fn beta_penalty(lam_norm: &ScalarField, alpha_prime: f64) -> Result<(f64, ScalarField)> {
    if !(alpha_prime.is_finite() && alpha_prime >= 0.0) {
        return invalid(format!("alpha_prime must be >= 0, got {alpha_prime}"));
    }
    let n = lam_norm.grid().len() as f64;
    let mut energy = 0.0;
    let grad = lam_norm
        .values()
        .iter()
        .map(|&x| {
            if x > BETA_LOG_FLOOR {
                energy -= x.ln();
                -alpha_prime / (n * x)
            } else {
                energy -= BETA_LOG_FLOOR.ln();
                0.0
            }
        })
        .collect();
    Ok((
        alpha_prime * energy / n,
        ScalarField::from_parts_unchecked(lam_norm.grid().clone(), grad),
    ))
}

/// `(σ′/|Ω|) Σ (λ(p)/λ_mean − 1)²` and its gradient with respect to `λ`.
pub fn gaussian_penalty(lam: &ScalarField, sigma_prime: f64, lambda_mean: f64) -> Result<(f64, ScalarField)> {
    if !(lambda_mean.is_finite() && lambda_mean > 0.0) {
        return invalid(format!("lambda_mean must be > 0, got {lambda_mean}"));
    }
    if !(sigma_prime.is_finite() && sigma_prime >= 0.0) {
        return invalid(format!("sigma_prime must be >= 0, got {sigma_prime}"));
    }
    let n = lam.grid().len() as f64;
    let mut energy = 0.0;
    let grad = lam
        .values()
        .iter()
        .map(|&l| {
            let r = l / lambda_mean - 1.0;
            energy += r * r;
            2.0 * sigma_prime * r / (lambda_mean * n)
        })
        .collect();
    Ok((sigma_prime * energy / n, ScalarField::from_parts_unchecked(lam.grid().clone(), grad)))
}

/// One-hot label stacks for the optional soft-Dice term. The moving stack is
/// warped alongside the image.
#[derive(Clone, Debug)]
pub struct LabelStacks {
    pub moving: Vec<ScalarField>,
    pub fixed: Vec<ScalarField>,
}

impl LabelStacks {
    /// One-hot encodes integer label maps for classes `1..=n_classes`.
    pub fn from_label_maps(moving: &ScalarField, fixed: &ScalarField, n_classes: usize) -> Result<Self> {
        moving.grid().check_same(fixed.grid())?;
        let one_hot = |labels: &ScalarField| -> Vec<ScalarField> {
            (1..=n_classes)
                .map(|k| labels.map(|v| if v.round() as usize == k { 1.0 } else { 0.0 }))
                .collect()
        };
        Ok(Self {
            moving: one_hot(moving),
            fixed: one_hot(fixed),
        })
    }
}

/// Per-term breakdown of the objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub total: f64,
    /// `σ_I ·` negative NCC.
    pub similarity: f64,
    pub diffusion: f64,
    pub prior: f64,
    pub dice: f64,
}

impl LossTerms {
    pub(crate) fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("similarity", self.similarity),
            ("diffusion", self.diffusion),
            ("prior", self.prior),
            ("dice", self.dice),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(name, _)| name)
    }
}

/// Objective value with gradients for both parameter blocks.
#[derive(Clone, Debug)]
pub struct LossEvaluation {
    pub terms: LossTerms,
    pub grad_velocity: VectorField,
    pub grad_weights: ScalarField,
    pub displacement: VectorField,
    pub lambda: ScalarField,
}

/// Prior penalty on the realized weights, with its gradient with respect to
/// the unscaled field (`λ/λ_max` for beta, `λ` for Gaussian).
pub(crate) fn prior_penalty(prior: &PriorKind, unit: &ScalarField) -> Result<(f64, ScalarField)> {
    match *prior {
        PriorKind::Beta { alpha_prime, .. } => beta_penalty(unit, alpha_prime),
        PriorKind::Gaussian {
            sigma_prime,
            lambda_mean,
        } => gaussian_penalty(unit, sigma_prime, lambda_mean),
        PriorKind::Uniform { .. } => Ok((0.0, ScalarField::zeros(unit.grid()))),
    }
}

/// Full objective: `σ_I·NCC(f, m∘exp(v)) + Σλ|∇v|² + prior(λ) [+ w·Dice]`,
/// with gradients chained through exponentiation, warping, activation and
/// upsampling.
pub fn total_loss(
    fixed: &ScalarField,
    moving: &ScalarField,
    velocity: &VectorField,
    weights: &WeightParams,
    cfg: &RegistrationConfig,
    labels: Option<&LabelStacks>,
) -> Result<LossEvaluation> {
    let grid: &Grid = fixed.grid();
    grid.check_same(moving.grid())?;
    grid.check_same(velocity.grid())?;

    let (displacement, tape) = ExpTape::forward(velocity, cfg.n_squaring);
    let warped = warp(moving, &displacement)?;
    let (ncc, ncc_adj) = ncc_loss(fixed, &warped, &cfg.ncc)?;
    let sigma_i = cfg.ncc.sigma_i;
    let upstream = ncc_adj.map(|g| g * sigma_i);
    let mut grad_disp = warp_adjoint_disp(moving, &displacement, &upstream)?;

    let mut dice = 0.0;
    if let Some(stacks) = labels.filter(|_| cfg.dice_weight > 0.0) {
        let warped_labels = stacks
            .moving
            .iter()
            .map(|m| warp(m, &displacement))
            .collect::<Result<Vec<_>>>()?;
        let (e, grads) = soft_dice_loss(&warped_labels, &stacks.fixed)?;
        dice = cfg.dice_weight * e;
        for (m, g) in stacks.moving.iter().zip(&grads) {
            let scaled = g.map(|x| x * cfg.dice_weight);
            let gd = warp_adjoint_disp(m, &displacement, &scaled)?;
            for (acc, x) in grad_disp.data_mut().iter_mut().zip(gd.values()) {
                *acc += x;
            }
        }
    }

    let mut grad_velocity = tape.backward(&grad_disp)?;

    let realized = realize_weights(weights, grid)?;
    let (diffusion, grad_v_reg, grad_lambda) = weighted_diffusion(velocity, &realized.lambda)?;
    for (acc, x) in grad_velocity.data_mut().iter_mut().zip(grad_v_reg.values()) {
        *acc += x;
    }
    let (prior, grad_unit_prior) = prior_penalty(&weights.prior, &realized.unit)?;
    let grad_unit: Vec<f64> = grad_lambda
        .values()
        .iter()
        .zip(grad_unit_prior.values())
        .map(|(gl, gp)| realized.scale * gl + gp)
        .collect();
    let grad_weights = weights_backward(
        weights,
        &ScalarField::from_parts_unchecked(grid.clone(), grad_unit),
    )?;

    let similarity = sigma_i * ncc;
    let terms = LossTerms {
        total: similarity + diffusion + prior + dice,
        similarity,
        diffusion,
        prior,
        dice,
    };
    if terms.first_non_finite().is_some() {
        return Err(Error::NonFinite {
            term: terms.first_non_finite().unwrap_or("total").to_string(),
            iteration: 0,
        });
    }
    Ok(LossEvaluation {
        terms,
        grad_velocity,
        grad_weights,
        displacement,
        lambda: realized.lambda,
    })
}
