use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned voxel lattice: dimensions, spacing (mm) and origin (mm) of
/// voxel `(0, 0, 0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
}

/// Continuous indices this close to an integer are snapped onto the node, so
/// physical points computed from `Grid::point` sample voxel values exactly.
const NODE_SNAP: f64 = 1e-9;

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(Error::input(format!("grid dims {dims:?} must be >= 2 per axis")));
        }
        if spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::input(format!("grid spacing {spacing:?} must be positive")));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::input(format!("grid origin {origin:?} must be finite")));
        }
        dims[0]
            .checked_mul(dims[1])
            .and_then(|n| n.checked_mul(dims[2]))
            .ok_or_else(|| Error::input("grid too large"))?;
        Ok(Self { dims, spacing, origin })
    }

    /// Cube of `n³` voxels with isotropic spacing and zero origin.
    pub fn cube(n: usize, spacing: f64) -> Result<Self> {
        Self::new([n; 3], [spacing; 3], [0.0; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1] * self.spacing[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Physical position (mm) of a voxel centre.
    #[inline]
    pub fn point(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    #[inline]
    pub fn point_of(&self, idx: usize) -> [f64; 3] {
        let [i, j, k] = self.coords(idx);
        self.point(i, j, k)
    }

    /// Physical point to continuous voxel index.
    #[inline]
    pub fn continuous_index(&self, p: [f64; 3]) -> [f64; 3] {
        let mut c = [0.0; 3];
        for d in 0..3 {
            let x = (p[d] - self.origin[d]) / self.spacing[d];
            let r = x.round();
            c[d] = if (x - r).abs() < NODE_SNAP { r } else { x };
        }
        c
    }

    /// Lower and upper corners of the voxel-centre bounding box.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let hi = self.point(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1);
        (self.origin, hi)
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let (lo, hi) = self.bounds();
        (0..3).all(|d| p[d] >= lo[d] && p[d] <= hi[d])
    }

    /// Coarser grid covering the same voxel-centre bounding box, with
    /// `ceil(n / factor)` voxels per axis (at least 2).
    pub fn downsampled(&self, factor: usize) -> Self {
        if factor <= 1 {
            return self.clone();
        }
        let mut dims = [0; 3];
        let mut spacing = [0.0; 3];
        for d in 0..3 {
            let n = self.dims[d].div_ceil(factor).max(2);
            dims[d] = n;
            spacing[d] = self.spacing[d] * (self.dims[d] - 1) as f64 / (n - 1) as f64;
        }
        Self {
            dims,
            spacing,
            origin: self.origin,
        }
    }

    pub(crate) fn ensure_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::input(format!("grid mismatch: {what}")))
        }
    }
}
