//! Voxel grids, dense scalar/vector fields and the resampling primitives the
//! rest of the engine is built on.
//!
//! Layout is row-major with the last axis fastest. Vector fields interleave
//! their `d` components per voxel and are expressed in voxel units. Sampling
//! outside the lattice replicates the border (clamp-to-edge).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Axis-aligned voxel lattice in two or three dimensions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr")]
pub struct Grid {
    dims: Vec<usize>,
    spacing: Vec<f64>,
}

#[derive(Deserialize)]
struct GridRepr {
    dims: Vec<usize>,
    spacing: Vec<f64>,
}

impl TryFrom<GridRepr> for Grid {
    type Error = Error;

    fn try_from(r: GridRepr) -> Result<Self> {
        Grid::with_spacing(&r.dims, &r.spacing)
    }
}

impl Grid {
    /// Unit-spaced grid.
    pub fn new(dims: &[usize]) -> Result<Self> {
        Self::with_spacing(dims, &vec![1.0; dims.len()])
    }

    pub fn with_spacing(dims: &[usize], spacing: &[f64]) -> Result<Self> {
        if !(2..=3).contains(&dims.len()) {
            return invalid(format!("grid must be 2D or 3D, got {} axes", dims.len()));
        }
        if spacing.len() != dims.len() {
            return invalid("spacing length differs from dims length");
        }
        if dims.iter().any(|&n| n < 2) {
            return invalid(format!("every grid axis needs at least 2 voxels, got {dims:?}"));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return invalid(format!("spacing must be positive and finite, got {spacing:?}"));
        }
        Ok(Self {
            dims: dims.to_vec(),
            spacing: spacing.to_vec(),
        })
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Number of voxels.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Linear-index stride of each axis; unused trailing axes get 0.
    pub fn strides(&self) -> [usize; 3] {
        let mut s = [0usize; 3];
        let mut acc = 1;
        for a in (0..self.ndim()).rev() {
            s[a] = acc;
            acc *= self.dims[a];
        }
        s
    }

    /// Multi-index of a linear voxel index; unused trailing axes are 0.
    #[inline]
    pub fn unravel(&self, mut lin: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        for a in (0..self.ndim()).rev() {
            idx[a] = lin % self.dims[a];
            lin /= self.dims[a];
        }
        idx
    }

    #[inline]
    pub fn ravel(&self, idx: &[usize]) -> usize {
        let mut lin = 0;
        for a in 0..self.ndim() {
            lin = lin * self.dims[a] + idx[a];
        }
        lin
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: self.describe(),
                right: other.describe(),
            })
        }
    }

    pub fn describe(&self) -> String {
        format!("dims {:?} spacing {:?}", self.dims, self.spacing)
    }
}

/// Common surface of [`ScalarField`] and [`VectorField`].
pub trait Field: Sized + Clone + Send + Sync {
    fn grid(&self) -> &Grid;
    /// Values stored per voxel.
    fn channels(&self) -> usize;
    fn data(&self) -> &[f64];
    fn data_mut(&mut self) -> &mut [f64];
    #[doc(hidden)]
    fn from_parts_unchecked(grid: Grid, data: Vec<f64>) -> Self;
}

fn check_values(grid: &Grid, channels: usize, data: &[f64]) -> Result<()> {
    let expected = grid.len() * channels;
    if data.len() != expected {
        return Err(Error::ShapeMismatch {
            expected,
            actual: data.len(),
        });
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return invalid(format!("non-finite field value at flat index {i}"));
    }
    Ok(())
}

/// One real value per voxel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: Grid,
    data: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        check_values(&grid, 1, &data)?;
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: &Grid, value: f64) -> Self {
        Self {
            grid: grid.clone(),
            data: vec![value; grid.len()],
        }
    }

    /// Builds a field by evaluating `f` at every multi-index.
    pub fn from_fn(grid: &Grid, f: impl Fn([usize; 3]) -> f64) -> Self {
        let data = (0..grid.len()).map(|i| f(grid.unravel(i))).collect();
        Self {
            grid: grid.clone(),
            data,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.grid.ravel(idx)]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

impl Field for ScalarField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn channels(&self) -> usize {
        1
    }
    fn data(&self) -> &[f64] {
        &self.data
    }
    fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    fn from_parts_unchecked(grid: Grid, data: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len(), data.len());
        Self { grid, data }
    }
}

/// `d` interleaved components per voxel, in voxel units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VectorField {
    grid: Grid,
    data: Vec<f64>,
}

impl VectorField {
    pub fn new(grid: Grid, data: Vec<f64>) -> Result<Self> {
        check_values(&grid, grid.ndim(), &data)?;
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: grid.clone(),
            data: vec![0.0; grid.len() * grid.ndim()],
        }
    }

    pub fn constant(grid: &Grid, value: &[f64]) -> Result<Self> {
        let d = grid.ndim();
        if value.len() != d {
            return Err(Error::ShapeMismatch {
                expected: d,
                actual: value.len(),
            });
        }
        let data = (0..grid.len()).flat_map(|_| value.iter().copied()).collect();
        Self::new(grid.clone(), data)
    }

    /// Builds a field by evaluating `f` at every multi-index; only the first
    /// `d` entries of the returned array are used.
    pub fn from_fn(grid: &Grid, f: impl Fn([usize; 3]) -> [f64; 3]) -> Self {
        let d = grid.ndim();
        let mut data = Vec::with_capacity(grid.len() * d);
        for i in 0..grid.len() {
            data.extend_from_slice(&f(grid.unravel(i))[..d]);
        }
        Self {
            grid: grid.clone(),
            data,
        }
    }

    pub fn ndim(&self) -> usize {
        self.grid.ndim()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    /// Components at linear voxel index `lin`.
    #[inline]
    pub fn at(&self, lin: usize) -> &[f64] {
        let d = self.ndim();
        &self.data[lin * d..(lin + 1) * d]
    }

    pub fn component(&self, axis: usize) -> ScalarField {
        let d = self.ndim();
        ScalarField {
            grid: self.grid.clone(),
            data: self.data.iter().skip(axis).step_by(d).copied().collect(),
        }
    }

    /// Euclidean norm per voxel.
    pub fn magnitude(&self) -> ScalarField {
        let d = self.ndim();
        ScalarField {
            grid: self.grid.clone(),
            data: self
                .data
                .chunks(d)
                .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect(),
        }
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitude().max()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}

impl Field for VectorField {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn channels(&self) -> usize {
        self.grid.ndim()
    }
    fn data(&self) -> &[f64] {
        &self.data
    }
    fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    fn from_parts_unchecked(grid: Grid, data: Vec<f64>) -> Self {
        debug_assert_eq!(grid.len() * grid.ndim(), data.len());
        Self { grid, data }
    }
}

/// Multilinear interpolation footprint of one sample point.
///
/// Corner `c` takes the upper neighbour on axis `a` when bit `a` of `c` is set.
/// When the point sits on (or beyond) the last lattice index of an axis both
/// neighbours coincide, so the footprint never reads outside the grid.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil {
    pub corners: usize,
    pub index: [usize; 8],
    pub weight: [f64; 8],
    /// Derivative of each corner weight with respect to the sample coordinate.
    pub dweight: [[f64; 3]; 8],
    /// Fractional offsets inside the cell per axis.
    pub frac: [f64; 3],
}

#[inline]
pub(crate) fn stencil(grid: &Grid, point: &[f64]) -> Stencil {
    let d = grid.ndim();
    let strides = grid.strides();
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut frac = [0.0f64; 3];
    let mut live = [false; 3];
    for a in 0..d {
        let top = grid.dims[a] - 1;
        let x = point[a];
        let xc = x.clamp(0.0, top as f64);
        let i0 = (xc.floor() as usize).min(top);
        lo[a] = i0;
        hi[a] = (i0 + 1).min(top);
        frac[a] = xc - i0 as f64;
        live[a] = x >= 0.0 && x < top as f64;
    }
    let corners = 1 << d;
    let mut st = Stencil {
        corners,
        index: [0; 8],
        weight: [0.0; 8],
        dweight: [[0.0; 3]; 8],
        frac,
    };
    for c in 0..corners {
        let mut idx = 0;
        let mut w = 1.0;
        let mut dw = [1.0f64; 3];
        for a in 0..d {
            let upper = (c >> a) & 1 == 1;
            idx += if upper { hi[a] } else { lo[a] } * strides[a];
            let (f, df) = if upper {
                (frac[a], 1.0)
            } else {
                (1.0 - frac[a], -1.0)
            };
            w *= f;
            for (b, g) in dw.iter_mut().enumerate().take(d) {
                if b == a {
                    *g *= if live[a] { df } else { 0.0 };
                } else {
                    *g *= f;
                }
            }
        }
        st.index[c] = idx;
        st.weight[c] = w;
        st.dweight[c] = dw;
    }
    st
}

/// Interpolates every channel of `data` at `point`, writing into `out`.
///
/// Uses nested lerps so constant neighbourhoods reproduce exactly.
#[inline]
pub(crate) fn interpolate_into(grid: &Grid, data: &[f64], channels: usize, point: &[f64], out: &mut [f64]) {
    let st = stencil(grid, point);
    let d = grid.ndim();
    for (ch, o) in out.iter_mut().enumerate().take(channels) {
        let mut v = [0.0f64; 8];
        for c in 0..st.corners {
            v[c] = data[st.index[c] * channels + ch];
        }
        let mut span = st.corners;
        for a in (0..d).rev() {
            span >>= 1;
            let t = st.frac[a];
            for c in 0..span {
                v[c] += t * (v[c + span] - v[c]);
            }
        }
        *o = v[0];
    }
}

/// Spatial derivative of the interpolant of every channel at `point`:
/// `jac[ch][axis]`.
#[inline]
pub(crate) fn interpolate_jacobian(grid: &Grid, data: &[f64], channels: usize, st: &Stencil) -> [[f64; 3]; 3] {
    let d = grid.ndim();
    let mut jac = [[0.0f64; 3]; 3];
    for (ch, row) in jac.iter_mut().enumerate().take(channels) {
        for c in 0..st.corners {
            let v = data[st.index[c] * channels + ch];
            for (b, g) in row.iter_mut().enumerate().take(d) {
                *g += st.dweight[c][b] * v;
            }
        }
    }
    jac
}

#[inline]
fn displaced_point(grid: &Grid, lin: usize, disp: &[f64]) -> [f64; 3] {
    let idx = grid.unravel(lin);
    let mut p = [0.0; 3];
    for a in 0..grid.ndim() {
        p[a] = idx[a] as f64 + disp[a];
    }
    p
}

/// Multilinear interpolation with clamp-to-edge at `coords`, given as a flat
/// list of `d`-dimensional voxel-unit points.
pub fn sample_linear(field: &ScalarField, coords: &[f64]) -> Result<Vec<f64>> {
    let d = field.grid.ndim();
    if !coords.len().is_multiple_of(d) {
        return invalid(format!("coordinate list length {} is not a multiple of {d}", coords.len()));
    }
    if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
        return invalid(format!("non-finite sample coordinate at flat index {i}"));
    }
    Ok(coords
        .chunks(d)
        .map(|p| {
            let mut out = [0.0];
            interpolate_into(&field.grid, &field.data, 1, p, &mut out);
            out[0]
        })
        .collect())
}

/// Resamples `field` through a displacement: `out(p) = field(p + disp(p))`.
pub fn warp<F: Field>(field: &F, disp: &VectorField) -> Result<F> {
    field.grid().check_same(disp.grid())?;
    let grid = field.grid();
    let ch = field.channels();
    let d = grid.ndim();
    let src = field.data();
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(ch).enumerate().for_each(|(lin, o)| {
        let p = displaced_point(grid, lin, &disp.data[lin * d..(lin + 1) * d]);
        interpolate_into(grid, src, ch, &p, o);
    });
    Ok(F::from_parts_unchecked(grid.clone(), out))
}

/// Nearest-neighbour resampling, for label maps.
pub fn warp_nearest(field: &ScalarField, disp: &VectorField) -> Result<ScalarField> {
    field.grid.check_same(&disp.grid)?;
    let grid = &field.grid;
    let d = grid.ndim();
    let data = (0..grid.len())
        .into_par_iter()
        .map(|lin| {
            let p = displaced_point(grid, lin, &disp.data[lin * d..(lin + 1) * d]);
            let mut idx = [0usize; 3];
            for a in 0..d {
                idx[a] = p[a].round().clamp(0.0, (grid.dims[a] - 1) as f64) as usize;
            }
            field.data[grid.ravel(&idx)]
        })
        .collect();
    Ok(ScalarField::from_parts_unchecked(grid.clone(), data))
}

/// Gradient of `sum(upstream * warp(image, disp))` with respect to `disp`.
pub fn warp_adjoint_disp(image: &ScalarField, disp: &VectorField, upstream: &ScalarField) -> Result<VectorField> {
    image.grid.check_same(&disp.grid)?;
    image.grid.check_same(&upstream.grid)?;
    let grid = &image.grid;
    let d = grid.ndim();
    let mut out = vec![0.0; grid.len() * d];
    out.par_chunks_mut(d).enumerate().for_each(|(lin, o)| {
        let g = upstream.data[lin];
        if g == 0.0 {
            return;
        }
        let p = displaced_point(grid, lin, &disp.data[lin * d..(lin + 1) * d]);
        let st = stencil(grid, &p);
        let jac = interpolate_jacobian(grid, &image.data, 1, &st);
        for a in 0..d {
            o[a] = g * jac[0][a];
        }
    });
    Ok(VectorField::from_parts_unchecked(grid.clone(), out))
}

/// Displacement of `φ_outer ∘ φ_inner`:
/// `result(p) = outer(p + inner(p)) + inner(p)`.
pub fn compose(outer: &VectorField, inner: &VectorField) -> Result<VectorField> {
    let mut out = warp(outer, inner)?;
    for (o, i) in out.data.iter_mut().zip(&inner.data) {
        *o += i;
    }
    Ok(out)
}

/// Reverse-mode derivative of [`compose`]: returns the gradients with
/// respect to `outer` and `inner` given the gradient on the result.
///
/// The coordinate dependence uses the exact piecewise derivative of the
/// multilinear interpolant.
pub fn compose_adjoint(
    outer: &VectorField,
    inner: &VectorField,
    upstream: &VectorField,
) -> Result<(VectorField, VectorField)> {
    outer.grid.check_same(&inner.grid)?;
    outer.grid.check_same(&upstream.grid)?;
    let grid = &outer.grid;
    let d = grid.ndim();
    let n = grid.len();
    let stencils: Vec<Stencil> = (0..n)
        .into_par_iter()
        .map(|lin| stencil(grid, &displaced_point(grid, lin, &inner.data[lin * d..(lin + 1) * d])))
        .collect();

    let mut grad_inner = upstream.data.clone();
    grad_inner
        .par_chunks_mut(d)
        .zip(stencils.par_iter())
        .enumerate()
        .for_each(|(lin, (gi, st))| {
            let g = &upstream.data[lin * d..(lin + 1) * d];
            let jac = interpolate_jacobian(grid, &outer.data, d, st);
            for b in 0..d {
                let mut acc = 0.0;
                for a in 0..d {
                    acc += g[a] * jac[a][b];
                }
                gi[b] += acc;
            }
        });

    // Scatter is kept sequential so accumulation order is fixed.
    let mut grad_outer = vec![0.0; n * d];
    for (lin, st) in stencils.iter().enumerate() {
        let g = &upstream.data[lin * d..(lin + 1) * d];
        for c in 0..st.corners {
            let w = st.weight[c];
            if w == 0.0 {
                continue;
            }
            let base = st.index[c] * d;
            for a in 0..d {
                grad_outer[base + a] += w * g[a];
            }
        }
    }
    Ok((
        VectorField::from_parts_unchecked(grid.clone(), grad_outer),
        VectorField::from_parts_unchecked(grid.clone(), grad_inner),
    ))
}

fn align_corners_point(source: &Grid, target: &Grid, lin: usize) -> [f64; 3] {
    let idx = target.unravel(lin);
    let mut p = [0.0; 3];
    for a in 0..target.ndim() {
        let s = (source.dims[a] - 1) as f64;
        let t = (target.dims[a] - 1) as f64;
        p[a] = idx[a] as f64 * s / t;
    }
    p
}

fn check_upsample(source: &Grid, target: &Grid) -> Result<()> {
    if source.ndim() != target.ndim() {
        return invalid("upsampling requires equal dimensionality");
    }
    if source.dims.iter().zip(&target.dims).any(|(s, t)| t < s) {
        return invalid(format!(
            "upsampling target {:?} is smaller than source {:?}",
            target.dims, source.dims
        ));
    }
    Ok(())
}

/// Align-corners multilinear resampling of `field` onto a finer `target`.
pub fn upsample_linear(field: &ScalarField, target: &Grid) -> Result<ScalarField> {
    check_upsample(&field.grid, target)?;
    let mut out = vec![0.0; target.len()];
    out.par_iter_mut().enumerate().for_each(|(lin, o)| {
        let p = align_corners_point(&field.grid, target, lin);
        let mut v = [0.0];
        interpolate_into(&field.grid, &field.data, 1, &p, &mut v);
        *o = v[0];
    });
    Ok(ScalarField::from_parts_unchecked(target.clone(), out))
}

/// Transpose of [`upsample_linear`]: maps a gradient on the target grid back
/// onto the source grid.
pub fn upsample_linear_adjoint(upstream: &ScalarField, source: &Grid) -> Result<ScalarField> {
    check_upsample(source, &upstream.grid)?;
    let mut out = vec![0.0; source.len()];
    for (lin, &g) in upstream.data.iter().enumerate() {
        let p = align_corners_point(source, &upstream.grid, lin);
        let st = stencil(source, &p);
        for c in 0..st.corners {
            out[st.index[c]] += st.weight[c] * g;
        }
    }
    Ok(ScalarField::from_parts_unchecked(source.clone(), out))
}

/// Forward differences along each axis; zero on the last slice of that axis.
pub fn forward_gradient<F: Field>(field: &F) -> Vec<F> {
    let grid = field.grid();
    let ch = field.channels();
    let strides = grid.strides();
    let src = field.data();
    (0..grid.ndim())
        .map(|axis| {
            let mut out = vec![0.0; src.len()];
            let step = strides[axis] * ch;
            out.par_chunks_mut(ch).enumerate().for_each(|(lin, o)| {
                if grid.unravel(lin)[axis] + 1 < grid.dims[axis] {
                    let base = lin * ch;
                    for (k, v) in o.iter_mut().enumerate() {
                        *v = src[base + step + k] - src[base + k];
                    }
                }
            });
            F::from_parts_unchecked(grid.clone(), out)
        })
        .collect()
}
