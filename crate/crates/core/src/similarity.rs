//! Image dissimilarity terms and their adjoints.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{Field, Grid, ScalarField};

/// Windowed NCC likelihood settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NccConfig {
    /// Window edge length, either one value for every axis or one per axis.
    pub window: Vec<usize>,
    pub epsilon: f64,
    /// Likelihood weight multiplying the NCC energy.
    pub sigma_i: f64,
}

impl Default for NccConfig {
    fn default() -> Self {
        Self {
            window: vec![9],
            epsilon: 1e-5,
            sigma_i: 1.0,
        }
    }
}

impl NccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window.is_empty() || self.window.len() > 3 {
            return invalid("ncc window needs 1 to 3 entries");
        }
        if self.window.iter().any(|&w| w == 0 || w % 2 == 0) {
            return invalid(format!("ncc window must be odd and positive, got {:?}", self.window));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return invalid("ncc epsilon must be positive");
        }
        if !(self.sigma_i.is_finite() && self.sigma_i > 0.0) {
            return invalid("sigma_i must be positive");
        }
        Ok(())
    }

    /// Half-width of the window along each axis of `grid`.
    pub fn radii(&self, grid: &Grid) -> Result<[usize; 3]> {
        let d = grid.ndim();
        let mut r = [0usize; 3];
        match self.window.len() {
            1 => r[..d].iter_mut().for_each(|x| *x = self.window[0] / 2),
            n if n == d => {
                for a in 0..d {
                    r[a] = self.window[a] / 2;
                }
            }
            n => return invalid(format!("ncc window has {n} entries for a {d}D grid")),
        }
        Ok(r)
    }
}

/// Sum over the border-clamped box of half-width `radii` around each voxel.
pub(crate) fn box_sum(grid: &Grid, data: &[f64], radii: &[usize; 3]) -> Vec<f64> {
    let strides = grid.strides();
    let mut cur = data.to_vec();
    let mut line = Vec::new();
    for axis in 0..grid.ndim() {
        let n = grid.dims()[axis];
        let r = radii[axis];
        if r == 0 {
            continue;
        }
        let stride = strides[axis];
        let mut next = vec![0.0; cur.len()];
        for start in 0..grid.len() {
            if grid.unravel(start)[axis] != 0 {
                continue;
            }
            line.clear();
            line.extend((0..n).map(|i| cur[start + i * stride]));
            for i in 0..n {
                let lo = i.saturating_sub(r);
                let hi = (i + r).min(n - 1);
                next[start + i * stride] = line[lo..=hi].iter().sum();
            }
        }
        cur = next;
    }
    cur
}

fn window_counts(grid: &Grid, radii: &[usize; 3]) -> Vec<f64> {
    (0..grid.len())
        .map(|lin| {
            let idx = grid.unravel(lin);
            (0..grid.ndim())
                .map(|a| {
                    let n = grid.dims()[a];
                    let lo = idx[a].saturating_sub(radii[a]);
                    let hi = (idx[a] + radii[a]).min(n - 1);
                    (hi - lo + 1) as f64
                })
                .product()
        })
        .collect()
}

/// Negative windowed NCC, averaged over voxels, and its gradient with
/// respect to `warped`.
///
/// Each voxel contributes the Pearson correlation of the two images over the
/// clamped window centred on it. The product of standard deviations is
/// floored at `epsilon`, so flat windows contribute zero.
pub fn ncc_loss(fixed: &ScalarField, warped: &ScalarField, cfg: &NccConfig) -> Result<(f64, ScalarField)> {
    cfg.validate()?;
    let grid = fixed.grid();
    grid.check_same(warped.grid())?;
    let radii = cfg.radii(grid)?;
    let f = fixed.values();
    let w = warped.values();
    let count = window_counts(grid, &radii);
    let sf = box_sum(grid, f, &radii);
    let sw = box_sum(grid, w, &radii);
    let sff = box_sum(grid, &f.iter().map(|x| x * x).collect::<Vec<_>>(), &radii);
    let sww = box_sum(grid, &w.iter().map(|x| x * x).collect::<Vec<_>>(), &radii);
    let sfw = box_sum(grid, &f.iter().zip(w).map(|(x, y)| x * y).collect::<Vec<_>>(), &radii);

    let total = grid.len();
    let eps = cfg.epsilon;
    let mut ccsum = 0.0;
    // Partial derivatives of cc(p) with respect to the window sums of
    // w, w² and f·w.
    let mut d_sw = vec![0.0; total];
    let mut d_sww = vec![0.0; total];
    let mut d_sfw = vec![0.0; total];
    for p in 0..total {
        let n = count[p];
        let vf = (sff[p] - sf[p] * sf[p] / n).max(0.0);
        let vw = (sww[p] - sw[p] * sw[p] / n).max(0.0);
        let cov = sfw[p] - sf[p] * sw[p] / n;
        let s = (vf * vw).sqrt();
        if s / n > eps {
            let cc = cov / s;
            ccsum += cc;
            d_sw[p] = -sf[p] / (n * s) + cc * sw[p] / (n * vw);
            d_sww[p] = -cc / (2.0 * vw);
            d_sfw[p] = 1.0 / s;
        } else {
            ccsum += cov / (n * eps);
            d_sw[p] = -sf[p] / (n * n * eps);
            d_sfw[p] = 1.0 / (n * eps);
        }
    }
    let energy = -ccsum / total as f64;

    let ba = box_sum(grid, &d_sw, &radii);
    let bb = box_sum(grid, &d_sww, &radii);
    let bc = box_sum(grid, &d_sfw, &radii);
    let scale = -1.0 / total as f64;
    let adj = (0..total)
        .map(|q| scale * (ba[q] + 2.0 * w[q] * bb[q] + f[q] * bc[q]))
        .collect();
    Ok((energy, ScalarField::from_parts_unchecked(grid.clone(), adj)))
}

/// Smoothing constant of the soft Dice ratio.
pub const SOFT_DICE_EPS: f64 = 1e-6;

/// `1 − mean_k 2Σ(a·b) / (Σa + Σb + ε)` over one-hot channel stacks, with
/// its gradient with respect to the first stack.
pub fn soft_dice_loss(warped_labels: &[ScalarField], fixed_labels: &[ScalarField]) -> Result<(f64, Vec<ScalarField>)> {
    if warped_labels.len() != fixed_labels.len() {
        return invalid(format!(
            "class count mismatch: {} vs {}",
            warped_labels.len(),
            fixed_labels.len()
        ));
    }
    if warped_labels.is_empty() {
        return invalid("soft dice needs at least one class");
    }
    let k = warped_labels.len() as f64;
    let mut dice_sum = 0.0;
    let mut grads = Vec::with_capacity(warped_labels.len());
    for (a, b) in warped_labels.iter().zip(fixed_labels) {
        a.grid().check_same(b.grid())?;
        let (av, bv) = (a.values(), b.values());
        let inter: f64 = av.iter().zip(bv).map(|(x, y)| x * y).sum();
        let denom = av.iter().sum::<f64>() + bv.iter().sum::<f64>() + SOFT_DICE_EPS;
        dice_sum += 2.0 * inter / denom;
        let g = bv
            .iter()
            .map(|&y| -(2.0 * y / denom - 2.0 * inter / (denom * denom)) / k)
            .collect();
        grads.push(ScalarField::from_parts_unchecked(a.grid().clone(), g));
    }
    Ok((1.0 - dice_sum / k, grads))
}
