use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{upsample_linear, upsample_linear_adjoint, Field, Grid, ScalarField};
use crate::regularizer::PriorKind;

/// Low-resolution pre-activation map from which the weight volume is
/// realized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub z: ScalarField,
    pub prior: PriorKind,
    pub resolution_factor: f64,
}

/// Grid of the low-resolution weight map: `ceil(dims · factor)`, at least 2
/// per axis.
pub fn low_resolution_grid(full: &Grid, factor: f64) -> Result<Grid> {
    if !(factor.is_finite() && factor > 0.0 && factor <= 1.0) {
        return invalid(format!("resolution factor must lie in (0, 1], got {factor}"));
    }
    let dims: Vec<usize> = full
        .dims()
        .iter()
        .map(|&n| ((n as f64 * factor).ceil() as usize).clamp(2, n))
        .collect();
    let spacing: Vec<f64> = full
        .dims()
        .iter()
        .zip(&dims)
        .zip(full.spacing())
        .map(|((&n, &m), &s)| s * (n - 1) as f64 / (m - 1) as f64)
        .collect();
    Grid::with_spacing(&dims, &spacing)
}

impl WeightParams {
    /// Starting point of the optimization: `z = 0` for the beta prior
    /// (`λ = λ_max/2`), `z = λ_mean` for the Gaussian prior, and the
    /// constant weight for the uniform case.
    pub fn init(full: &Grid, prior: PriorKind, resolution_factor: f64) -> Result<Self> {
        prior.validate()?;
        let low = low_resolution_grid(full, resolution_factor)?;
        let start = match prior {
            PriorKind::Beta { .. } => 0.0,
            PriorKind::Gaussian { lambda_mean, .. } => lambda_mean,
            PriorKind::Uniform { lambda } => lambda,
        };
        Ok(Self {
            z: ScalarField::constant(&low, start),
            prior,
            resolution_factor,
        })
    }

    /// Whether the weights take part in the optimization.
    pub fn trainable(&self) -> bool {
        !matches!(self.prior, PriorKind::Uniform { .. })
    }
}

/// Weight volume on the full grid.
#[derive(Clone, Debug)]
pub struct RealizedWeights {
    pub lambda: ScalarField,
    /// `λ / λ_max` for the beta prior, `λ` otherwise.
    pub unit: ScalarField,
    /// `λ = scale · unit`.
    pub scale: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Activation then align-corners upsampling of the low-resolution map.
pub fn realize_weights(wp: &WeightParams, full: &Grid) -> Result<RealizedWeights> {
    match wp.prior {
        PriorKind::Beta { lambda_max, .. } => {
            let unit = upsample_linear(&wp.z.map(sigmoid), full)?;
            let lambda = unit.map(|u| lambda_max * u);
            Ok(RealizedWeights {
                lambda,
                unit,
                scale: lambda_max,
            })
        }
        PriorKind::Gaussian { .. } => {
            let unit = upsample_linear(&wp.z.map(|z| z.max(0.0)), full)?;
            Ok(RealizedWeights {
                lambda: unit.clone(),
                unit,
                scale: 1.0,
            })
        }
        PriorKind::Uniform { lambda } => Ok(RealizedWeights {
            lambda: ScalarField::constant(full, lambda),
            unit: ScalarField::constant(full, lambda),
            scale: 1.0,
        }),
    }
}

/// Maps a gradient with respect to [`RealizedWeights::unit`] back to `z`.
/// ReLU uses the zero subgradient at the kink.
pub fn weights_backward(wp: &WeightParams, grad_unit: &ScalarField) -> Result<ScalarField> {
    let low = wp.z.grid();
    match wp.prior {
        PriorKind::Uniform { .. } => Ok(ScalarField::zeros(low)),
        prior => {
            let g = upsample_linear_adjoint(grad_unit, low)?;
            let data = g
                .values()
                .iter()
                .zip(wp.z.values())
                .map(|(&gi, &z)| match prior {
                    PriorKind::Beta { .. } => {
                        let s = sigmoid(z);
                        gi * s * (1.0 - s)
                    }
                    _ => {
                        if z > 0.0 {
                            gi
                        } else {
                            0.0
                        }
                    }
                })
                .collect();
            Ok(ScalarField::from_parts_unchecked(low.clone(), data))
        }
    }
}
