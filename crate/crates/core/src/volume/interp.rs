//! Trilinear interpolation in continuous index space with border replication,
//! together with the derivative and adjoint pieces the gradient code needs.

use crate::scalar::Real;

use super::Grid;

#[derive(Clone, Copy, Debug)]
pub(crate) struct Axis<T> {
    pub i0: usize,
    pub i1: usize,
    pub f: T,
    /// False when the coordinate was clamped; the derivative is then zero.
    pub active: bool,
}

#[inline(always)]
fn axis<T: Real>(c: T, n: usize) -> Axis<T> {
    let hi = T::of((n - 1) as f64);
    if !(c > T::zero()) {
        Axis { i0: 0, i1: 0, f: T::zero(), active: false }
    } else if !(c < hi) {
        Axis { i0: n - 1, i1: n - 1, f: T::zero(), active: false }
    } else {
        let fl = c.floor();
        let i0 = fl.to_usize().unwrap_or(0).min(n - 2);
        Axis { i0, i1: i0 + 1, f: c - T::of(i0 as f64), active: true }
    }
}

/// `a + f (b - a)`: exact for a == b and for f == 0.
#[inline(always)]
pub(crate) fn lerp<T: Real>(a: T, b: T, f: T) -> T {
    a + f * (b - a)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Trilinear<T> {
    pub ax: [Axis<T>; 3],
    nx: usize,
    nxy: usize,
}

impl<T: Real> Trilinear<T> {
    /// Locates a continuous index `c` (voxel units) on `grid`.
    #[inline(always)]
    pub fn locate(grid: &Grid, c: [T; 3]) -> Self {
        let d = grid.dims();
        Self {
            ax: [axis(c[0], d[0]), axis(c[1], d[1]), axis(c[2], d[2])],
            nx: d[0],
            nxy: d[0] * d[1],
        }
    }

    #[inline(always)]
    fn corner(&self, bx: usize, by: usize, bz: usize) -> usize {
        let x = if bx == 0 { self.ax[0].i0 } else { self.ax[0].i1 };
        let y = if by == 0 { self.ax[1].i0 } else { self.ax[1].i1 };
        let z = if bz == 0 { self.ax[2].i0 } else { self.ax[2].i1 };
        x + self.nx * y + self.nxy * z
    }

    #[inline(always)]
    fn corners(&self, get: impl Fn(usize) -> T) -> [T; 8] {
        [
            get(self.corner(0, 0, 0)),
            get(self.corner(1, 0, 0)),
            get(self.corner(0, 1, 0)),
            get(self.corner(1, 1, 0)),
            get(self.corner(0, 0, 1)),
            get(self.corner(1, 0, 1)),
            get(self.corner(0, 1, 1)),
            get(self.corner(1, 1, 1)),
        ]
    }

    #[inline(always)]
    pub fn sample(&self, get: impl Fn(usize) -> T) -> T {
        let v = self.corners(get);
        let [fx, fy, fz] = [self.ax[0].f, self.ax[1].f, self.ax[2].f];
        let c00 = lerp(v[0], v[1], fx);
        let c10 = lerp(v[2], v[3], fx);
        let c01 = lerp(v[4], v[5], fx);
        let c11 = lerp(v[6], v[7], fx);
        lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
    }

    /// Value and gradient with respect to the continuous index.
    #[inline(always)]
    pub fn sample_grad(&self, get: impl Fn(usize) -> T) -> (T, [T; 3]) {
        let v = self.corners(get);
        let [fx, fy, fz] = [self.ax[0].f, self.ax[1].f, self.ax[2].f];
        let c00 = lerp(v[0], v[1], fx);
        let c10 = lerp(v[2], v[3], fx);
        let c01 = lerp(v[4], v[5], fx);
        let c11 = lerp(v[6], v[7], fx);
        let c0 = lerp(c00, c10, fy);
        let c1 = lerp(c01, c11, fy);
        let val = lerp(c0, c1, fz);

        let gz = if self.ax[2].active { c1 - c0 } else { T::zero() };
        let gy = if self.ax[1].active {
            lerp(c10 - c00, c11 - c01, fz)
        } else {
            T::zero()
        };
        let gx = if self.ax[0].active {
            let d00 = v[1] - v[0];
            let d10 = v[3] - v[2];
            let d01 = v[5] - v[4];
            let d11 = v[7] - v[6];
            lerp(lerp(d00, d10, fy), lerp(d01, d11, fy), fz)
        } else {
            T::zero()
        };
        (val, [gx, gy, gz])
    }

    /// Component-wise [`sample`](Self::sample) of a vector field.
    #[inline(always)]
    pub fn sample3(&self, get: impl Fn(usize) -> [T; 3]) -> [T; 3] {
        let idx = [
            self.corner(0, 0, 0),
            self.corner(1, 0, 0),
            self.corner(0, 1, 0),
            self.corner(1, 1, 0),
            self.corner(0, 0, 1),
            self.corner(1, 0, 1),
            self.corner(0, 1, 1),
            self.corner(1, 1, 1),
        ];
        let v = idx.map(get);
        std::array::from_fn(|c| {
            let [fx, fy, fz] = [self.ax[0].f, self.ax[1].f, self.ax[2].f];
            let c00 = lerp(v[0][c], v[1][c], fx);
            let c10 = lerp(v[2][c], v[3][c], fx);
            let c01 = lerp(v[4][c], v[5][c], fx);
            let c11 = lerp(v[6][c], v[7][c], fx);
            lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz)
        })
    }

    /// Adjoint with respect to the sampled values: visits each corner with
    /// its interpolation weight.
    #[inline(always)]
    pub fn for_each_weight(&self, mut f: impl FnMut(usize, T)) {
        let one = T::one();
        let wx = [one - self.ax[0].f, self.ax[0].f];
        let wy = [one - self.ax[1].f, self.ax[1].f];
        let wz = [one - self.ax[2].f, self.ax[2].f];
        for bz in 0..2 {
            for by in 0..2 {
                let wyz = wy[by] * wz[bz];
                for bx in 0..2 {
                    f(self.corner(bx, by, bz), wx[bx] * wyz);
                }
            }
        }
    }
}
