//! Synthetic data: Perlin textures, random-shape label maps, smooth random
//! velocities, and 2D sliding-motion pairs with known truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::{warp, Field, Grid, ScalarField, VectorField};

pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    // SplitMix64 finalizer over the pair.
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Classic gradient noise: random unit gradients on a lattice of spacing
/// `cell_size` voxels, blended with the quintic fade. Values lie in
/// `[−√d/2, √d/2] ⊂ [−1, 1]`.
pub fn perlin_noise(grid: &Grid, cell_size: f64, seed: u64) -> Result<ScalarField> {
    if !(cell_size.is_finite() && cell_size >= 2.0) {
        return invalid(format!("perlin cell size must be >= 2 voxels, got {cell_size}"));
    }
    let d = grid.ndim();
    let lattice: Vec<usize> = grid
        .dims()
        .iter()
        .map(|&n| ((n - 1) as f64 / cell_size).floor() as usize + 2)
        .collect();
    let nodes: usize = lattice.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grads = Vec::with_capacity(nodes * d);
    for _ in 0..nodes {
        loop {
            let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 {
                grads.extend(g.iter().map(|x| x / norm));
                break;
            }
        }
    }
    let lattice_index = |node: &[usize; 3]| {
        let mut lin = 0;
        for a in 0..d {
            lin = lin * lattice[a] + node[a];
        }
        lin
    };
    Ok(ScalarField::from_fn(grid, |idx| {
        let mut cell = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..d {
            let x = idx[a] as f64 / cell_size;
            cell[a] = x.floor() as usize;
            frac[a] = x - cell[a] as f64;
        }
        let mut value = 0.0;
        for corner in 0..(1usize << d) {
            let mut node = [0usize; 3];
            let mut weight = 1.0;
            let mut offset = [0.0f64; 3];
            for a in 0..d {
                let bit = (corner >> a) & 1;
                node[a] = cell[a] + bit;
                offset[a] = frac[a] - bit as f64;
                let s = fade(frac[a]);
                weight *= if bit == 1 { s } else { 1.0 - s };
            }
            let base = lattice_index(&node) * d;
            let contribution: f64 = (0..d).map(|a| grads[base + a] * offset[a]).sum();
            value += weight * contribution;
        }
        value
    }))
}

/// Random-shape image and its label map (values `1..=n_labels`).
///
/// Labels are the per-voxel argmax over `n_labels` Perlin channels of mixed
/// scale. Draws are repeated with derived seeds until every label covers at
/// least [`MIN_LABEL_FRACTION`] of the grid.
pub fn random_shapes_image(grid: &Grid, n_labels: usize, seed: u64) -> Result<(ScalarField, ScalarField)> {
    if n_labels < 2 {
        return invalid(format!("need at least 2 labels, got {n_labels}"));
    }
    let min_dim = *grid.dims().iter().min().unwrap_or(&2) as f64;
    let mut best = None;
    for attempt in 0..MAX_SHAPE_ATTEMPTS {
        let s = derive_seed(seed, attempt);
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let mut channels = Vec::with_capacity(n_labels);
        for k in 0..n_labels as u64 {
            let coarse = rng.random_range((min_dim / 8.0).max(2.0)..=(min_dim / 3.0).max(2.5));
            let a = perlin_noise(grid, coarse, derive_seed(s, 2 * k + 1))?;
            let b = perlin_noise(grid, (coarse / 2.0).max(2.0), derive_seed(s, 2 * k + 2))?;
            channels.push(
                a.values()
                    .iter()
                    .zip(b.values())
                    .map(|(x, y)| x + 0.5 * y)
                    .collect::<Vec<_>>(),
            );
        }
        let labels: Vec<f64> = (0..grid.len())
            .map(|i| {
                let mut arg = 0;
                for k in 1..n_labels {
                    if channels[k][i] > channels[arg][i] {
                        arg = k;
                    }
                }
                (arg + 1) as f64
            })
            .collect();
        let mut counts = vec![0usize; n_labels];
        for &l in &labels {
            counts[l as usize - 1] += 1;
        }
        let worst = *counts.iter().min().unwrap_or(&0) as f64 / grid.len() as f64;

        let intensities: Vec<f64> = (0..n_labels).map(|_| rng.random::<f64>()).collect();
        let sigma = rng.random_range(0.0..=MAX_NOISE_SIGMA);
        let noise = Normal::new(0.0, sigma.max(1e-12)).expect("valid sigma");
        let image: Vec<f64> = labels
            .iter()
            .map(|&l| {
                let n = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                (intensities[l as usize - 1] + n).clamp(0.0, 1.0)
            })
            .collect();
        let pair = (
            ScalarField::from_parts_unchecked(grid.clone(), image),
            ScalarField::from_parts_unchecked(grid.clone(), labels),
        );
        if worst >= MIN_LABEL_FRACTION {
            return Ok(pair);
        }
        if best.as_ref().is_none_or(|(w, _)| worst > *w) {
            best = Some((worst, pair));
        }
    }
    Ok(best.expect("at least one attempt").1)
}

pub const MIN_LABEL_FRACTION: f64 = 0.005;
pub const MAX_NOISE_SIGMA: f64 = 0.05;
const MAX_SHAPE_ATTEMPTS: u64 = 64;

/// Per-component Perlin velocity rescaled so its largest vector magnitude
/// equals `max_mag` voxels.
pub fn random_smooth_velocity(grid: &Grid, max_mag: f64, smooth_cells: f64, seed: u64) -> Result<VectorField> {
    if !(max_mag.is_finite() && max_mag > 0.0) {
        return invalid(format!("max_mag must be positive, got {max_mag}"));
    }
    let d = grid.ndim();
    let comps = (0..d as u64)
        .map(|a| perlin_noise(grid, smooth_cells, derive_seed(seed, a + 101)))
        .collect::<Result<Vec<_>>>()?;
    let mut data = Vec::with_capacity(grid.len() * d);
    for i in 0..grid.len() {
        for c in &comps {
            data.push(c.values()[i]);
        }
    }
    let raw = VectorField::new(grid.clone(), data)?;
    let peak = raw.max_magnitude();
    if peak <= 0.0 {
        return invalid("degenerate noise field");
    }
    Ok(raw.scaled(max_mag / peak))
}

/// Textured image and a copy resampled by the constant displacement `shift`
/// (voxels). Returns `(moving, fixed, true_disp)`.
pub fn translation_pair(grid: &Grid, shift: &[f64], seed: u64) -> Result<(ScalarField, ScalarField, VectorField)> {
    if shift.len() != grid.ndim() || shift.iter().any(|s| !s.is_finite()) {
        return invalid("shift must be finite with one entry per axis");
    }
    let min_dim = *grid.dims().iter().min().expect("grid has axes");
    let cell = (min_dim as f64 / 8.0).max(2.0);
    let coarse = perlin_noise(grid, cell, derive_seed(seed, 1))?;
    let fine = perlin_noise(grid, (cell / 2.0).max(2.0), derive_seed(seed, 2))?;
    let moving = ScalarField::from_fn(grid, |idx| {
        let lin = grid.ravel(&idx);
        (0.5 + 0.35 * coarse.values()[lin] + 0.15 * fine.values()[lin]).clamp(0.0, 1.0)
    });
    let true_disp = VectorField::constant(grid, shift)?;
    let fixed = warp(&moving, &true_disp)?;
    Ok((moving, fixed, true_disp))
}

/// Interface between the static and the sliding region of a 2D scenario.
/// Axis 0 is vertical (rows), axis 1 horizontal (columns).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Interface {
    /// Columns `>= column` slide vertically.
    Vertical { column: usize },
    /// Rows `>= row` slide horizontally.
    Horizontal { row: usize },
    /// Indices `start..end` along `axis` slide along the other axis.
    Strip { axis: usize, start: usize, end: usize },
}

/// 2D sliding-motion scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlideScenario {
    pub name: String,
    pub dims: [usize; 2],
    pub interface: Interface,
    /// Tangential offset of the sliding region, in voxels.
    pub offset: f64,
    pub texture_seed: u64,
    /// Width of the evaluation band around the interface, in voxels.
    pub band_width: f64,
    /// Voxels closer than this to the image border are excluded from the
    /// foreground mask.
    pub margin: usize,
}

impl SlideScenario {
    pub fn validate(&self) -> Result<()> {
        let min_dim = self.dims[0].min(self.dims[1]);
        if min_dim < 8 {
            return invalid("sliding scenarios need at least 8 voxels per axis");
        }
        if !(self.offset.is_finite() && self.offset.abs() < min_dim as f64 / 4.0) {
            return invalid(format!("offset {} must be below a quarter of the smallest dimension", self.offset));
        }
        if !(self.band_width.is_finite() && self.band_width > 0.0) {
            return invalid("band_width must be positive");
        }
        let inside = |pos: usize, axis: usize| pos > 0 && pos < self.dims[axis];
        let ok = match self.interface {
            Interface::Vertical { column } => inside(column, 1),
            Interface::Horizontal { row } => inside(row, 0),
            Interface::Strip { axis, start, end } => axis < 2 && start < end && inside(start, axis) && inside(end, axis),
        };
        if !ok {
            return invalid("interface lies outside the domain");
        }
        if 2 * self.margin >= min_dim {
            return invalid("margin leaves no foreground");
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(&self.dims)
    }

    fn sliding(&self, idx: [usize; 3]) -> bool {
        match self.interface {
            Interface::Vertical { column } => idx[1] >= column,
            Interface::Horizontal { row } => idx[0] >= row,
            Interface::Strip { axis, start, end } => (start..end).contains(&idx[axis]),
        }
    }

    /// Axis the sliding region moves along.
    pub fn tangent_axis(&self) -> usize {
        match self.interface {
            Interface::Vertical { .. } => 0,
            Interface::Horizontal { .. } => 1,
            Interface::Strip { axis, .. } => 1 - axis,
        }
    }

    /// Distance from voxel centre to the nearest interface line.
    fn interface_distance(&self, idx: [usize; 3]) -> f64 {
        let dist = |i: usize, edge: usize| (i as f64 - (edge as f64 - 0.5)).abs();
        match self.interface {
            Interface::Vertical { column } => dist(idx[1], column),
            Interface::Horizontal { row } => dist(idx[0], row),
            Interface::Strip { axis, start, end } => dist(idx[axis], start).min(dist(idx[axis], end)),
        }
    }
}

/// Generated sliding-motion pair with its ground truth.
#[derive(Clone, Debug)]
pub struct SlidePair {
    pub moving: ScalarField,
    pub fixed: ScalarField,
    /// Displacement resampling `moving` into `fixed`.
    pub true_disp: VectorField,
    /// 1 inside the band around the interface.
    pub discontinuity_mask: ScalarField,
    /// 1 at least `margin` voxels from the border.
    pub foreground: ScalarField,
    /// 1 in the static region, 2 in the sliding region.
    pub labels: ScalarField,
}

/// Two Perlin-textured regions with distinct base intensities; the sliding
/// region is translated tangentially so the truth is discontinuous across
/// the interface.
pub fn sliding_pair_2d(sc: &SlideScenario) -> Result<SlidePair> {
    sc.validate()?;
    let grid = sc.grid()?;
    let cell = (sc.dims[0].min(sc.dims[1]) as f64 / 8.0).max(2.0);
    let tex_a = perlin_noise(&grid, cell, derive_seed(sc.texture_seed, 1))?;
    let tex_b = perlin_noise(&grid, cell, derive_seed(sc.texture_seed, 2))?;
    let fine = perlin_noise(&grid, (cell / 2.0).max(2.0), derive_seed(sc.texture_seed, 3))?;
    let moving = ScalarField::from_fn(&grid, |idx| {
        let lin = grid.ravel(&idx);
        let detail = 0.1 * fine.values()[lin];
        if sc.sliding(idx) {
            (0.65 + 0.25 * tex_b.values()[lin] + detail).clamp(0.0, 1.0)
        } else {
            (0.3 + 0.25 * tex_a.values()[lin] + detail).clamp(0.0, 1.0)
        }
    });
    let t = sc.tangent_axis();
    let true_disp = VectorField::from_fn(&grid, |idx| {
        let mut v = [0.0; 3];
        if sc.sliding(idx) {
            v[t] = sc.offset;
        }
        v
    });
    let fixed = warp(&moving, &true_disp)?;
    let discontinuity_mask = ScalarField::from_fn(&grid, |idx| {
        if sc.interface_distance(idx) <= sc.band_width / 2.0 {
            1.0
        } else {
            0.0
        }
    });
    let m = sc.margin;
    let foreground = ScalarField::from_fn(&grid, |idx| {
        let inside = (0..2).all(|a| idx[a] >= m && idx[a] + m < sc.dims[a]);
        if inside {
            1.0
        } else {
            0.0
        }
    });
    let labels = ScalarField::from_fn(&grid, |idx| if sc.sliding(idx) { 2.0 } else { 1.0 });
    Ok(SlidePair {
        moving,
        fixed,
        true_disp,
        discontinuity_mask,
        foreground,
        labels,
    })
}

/// The shipped sliding-motion scenarios on 128² grids.
pub fn golden_scenarios() -> Vec<SlideScenario> {
    vec![
        SlideScenario {
            name: "slide-v6".into(),
            dims: [128, 128],
            interface: Interface::Vertical { column: 64 },
            offset: 6.0,
            texture_seed: 601,
            band_width: 8.0,
            margin: 12,
        },
        SlideScenario {
            name: "slide-h4".into(),
            dims: [128, 128],
            interface: Interface::Horizontal { row: 64 },
            offset: 4.0,
            texture_seed: 402,
            band_width: 8.0,
            margin: 12,
        },
        SlideScenario {
            name: "slide-s5".into(),
            dims: [128, 128],
            interface: Interface::Strip {
                axis: 0,
                start: 44,
                end: 84,
            },
            offset: 5.0,
            texture_seed: 503,
            band_width: 8.0,
            margin: 12,
        },
    ]
}

pub fn golden_scenario(name: &str) -> Option<SlideScenario> {
    golden_scenarios().into_iter().find(|s| s.name == name)
}
