//! Grid-attached data types, trilinear interpolation, resampling and file I/O.
//!
//! All geometry is axis aligned and expressed in millimetres. Data are stored
//! x-fastest: the linear index of voxel `(i, j, k)` is `i + nx * (j + ny * k)`.

mod grid;
pub(crate) mod interp;
pub mod io;
pub mod landmarks;

pub use grid::Grid;
pub use io::{read_field, read_image, read_mask, read_scalar, write_field, write_mask, write_scalar, Image};
pub use landmarks::{Landmark, LandmarkSet, Region};

use crate::error::{Error, Result};
use crate::kernel;
use crate::scalar::Real;
use interp::Trilinear;

fn check_finite_point(p: [f64; 3]) -> Result<()> {
    if p.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::input(format!("non-finite sample point {p:?}")))
    }
}

/// Scalar image on a regular grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T = f64> {
    grid: Grid,
    data: Vec<T>,
}

impl<T: Real> Volume<T> {
    pub fn new(grid: Grid, data: Vec<T>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::input(format!(
                "volume data has {} values, grid needs {}",
                data.len(),
                grid.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite volume value at index {i}")));
        }
        Ok(Self { grid, data })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid, data: Vec<T>) -> Self {
        debug_assert_eq!(grid.len(), data.len());
        Self { grid, data }
    }

    pub fn filled(grid: Grid, value: T) -> Self {
        let n = grid.len();
        Self {
            grid,
            data: vec![value; n],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::filled(grid, T::zero())
    }

    /// Builds a volume by evaluating `f` at every voxel centre (mm).
    pub fn from_fn(grid: Grid, mut f: impl FnMut([f64; 3]) -> T) -> Self {
        let data = (0..grid.len()).map(|idx| f(grid.point_of(idx))).collect();
        Self { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[self.grid.index(i, j, k)]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            grid: self.grid.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn min_max(&self) -> (T, T) {
        self.data.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    }

    /// Trilinear interpolation at a physical point with border replication.
    pub fn sample(&self, p: [f64; 3]) -> Result<T> {
        check_finite_point(p)?;
        let c = self.grid.continuous_index(p);
        let t = Trilinear::locate(&self.grid, [T::of(c[0]), T::of(c[1]), T::of(c[2])]);
        Ok(t.sample(|i| self.data[i]))
    }

    /// Gaussian prefilter (sigma in mm, 0 disables it) followed by trilinear
    /// sampling at the voxel centres of `target`.
    pub fn resample(&self, target: &Grid, prefilter_sigma: f64) -> Result<Self> {
        if !(prefilter_sigma >= 0.0) || !prefilter_sigma.is_finite() {
            return Err(Error::input("prefilter sigma must be finite and >= 0"));
        }
        let src = if prefilter_sigma > 0.0 {
            kernel::gaussian_blur(self, prefilter_sigma)
        } else {
            self.clone()
        };
        if target == &self.grid && prefilter_sigma == 0.0 {
            return Ok(src);
        }
        let data = (0..target.len())
            .map(|idx| {
                let c = src.grid.continuous_index(target.point_of(idx));
                Trilinear::locate(&src.grid, [T::of(c[0]), T::of(c[1]), T::of(c[2])]).sample(|i| src.data[i])
            })
            .collect();
        Ok(Self::from_vec_unchecked(target.clone(), data))
    }

    pub fn cast<U: Real>(&self) -> Volume<U> {
        Volume {
            grid: self.grid.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }
}

/// Binary mask, values in {0, 1}.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    grid: Grid,
    data: Vec<u8>,
}

impl Mask {
    pub fn new(grid: Grid, data: Vec<u8>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::input(format!(
                "mask data has {} values, grid needs {}",
                data.len(),
                grid.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::input(format!("mask value {} at index {i} is not 0/1", data[i])));
        }
        Ok(Self { grid, data })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid, data: Vec<u8>) -> Self {
        Self { grid, data }
    }

    pub fn empty(grid: Grid) -> Self {
        let n = grid.len();
        Self { grid, data: vec![0; n] }
    }

    pub fn full(grid: Grid) -> Self {
        let n = grid.len();
        Self { grid, data: vec![1; n] }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut([f64; 3]) -> bool) -> Self {
        let data = (0..grid.len()).map(|idx| f(grid.point_of(idx)) as u8).collect();
        Self { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn is_set(&self, idx: usize) -> bool {
        self.data[idx] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn complement(&self) -> Self {
        Self {
            grid: self.grid.clone(),
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    pub fn to_volume<T: Real>(&self) -> Volume<T> {
        Volume::from_vec_unchecked(
            self.grid.clone(),
            self.data.iter().map(|&v| if v != 0 { T::one() } else { T::zero() }).collect(),
        )
    }
}

/// Per-voxel 3-vector field, components in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct Field3<T = f64> {
    grid: Grid,
    data: Vec<[T; 3]>,
}

impl<T: Real> Field3<T> {
    pub fn new(grid: Grid, data: Vec<[T; 3]>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::input(format!(
                "field data has {} vectors, grid needs {}",
                data.len(),
                grid.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::input(format!("non-finite field value at index {i}")));
        }
        Ok(Self { grid, data })
    }

    pub(crate) fn from_vec_unchecked(grid: Grid, data: Vec<[T; 3]>) -> Self {
        debug_assert_eq!(grid.len(), data.len());
        Self { grid, data }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::filled(grid, [T::zero(); 3])
    }

    pub fn filled(grid: Grid, value: [T; 3]) -> Self {
        let n = grid.len();
        Self {
            grid,
            data: vec![value; n],
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut([f64; 3]) -> [T; 3]) -> Self {
        let data = (0..grid.len()).map(|idx| f(grid.point_of(idx))).collect();
        Self { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[[T; 3]] {
        &self.data
    }

    #[cfg(test)]
    pub(crate) fn data_mut(&mut self) -> &mut [[T; 3]] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<[T; 3]> {
        self.data
    }

    pub fn scaled(&self, s: T) -> Self {
        self.map(|v| [v[0] * s, v[1] * s, v[2] * s])
    }

    pub fn map(&self, f: impl Fn([T; 3]) -> [T; 3]) -> Self {
        Self {
            grid: self.grid.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: T, other: &Self) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        Self {
            grid: self.grid.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]])
                .collect(),
        }
    }

    /// Largest vector magnitude.
    pub fn max_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| v.iter().map(|c| c.f64() * c.f64()).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Largest absolute component.
    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .flat_map(|v| v.iter())
            .map(|c| c.f64().abs())
            .fold(0.0, f64::max)
    }

    /// Componentwise trilinear interpolation at a physical point.
    pub fn sample(&self, p: [f64; 3]) -> Result<[T; 3]> {
        check_finite_point(p)?;
        Ok(self.sample_unchecked(p))
    }

    pub(crate) fn sample_unchecked(&self, p: [f64; 3]) -> [T; 3] {
        let c = self.grid.continuous_index(p);
        let t = Trilinear::locate(&self.grid, [T::of(c[0]), T::of(c[1]), T::of(c[2])]);
        [
            t.sample(|i| self.data[i][0]),
            t.sample(|i| self.data[i][1]),
            t.sample(|i| self.data[i][2]),
        ]
    }

    /// Trilinear resampling of each component onto `target` (no prefilter).
    pub fn resample(&self, target: &Grid) -> Self {
        if target == &self.grid {
            return self.clone();
        }
        let data = (0..target.len())
            .map(|idx| self.sample_unchecked(target.point_of(idx)))
            .collect();
        Self::from_vec_unchecked(target.clone(), data)
    }

    pub fn cast<U: Real>(&self) -> Field3<U> {
        Field3 {
            grid: self.grid.clone(),
            data: self
                .data
                .iter()
                .map(|v| [U::of(v[0].f64()), U::of(v[1].f64()), U::of(v[2].f64())])
                .collect(),
        }
    }
}
