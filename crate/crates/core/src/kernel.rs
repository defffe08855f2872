//! Multi-Gaussian smoothing kernel.
//!
//! `K m = Σ wᵢ (G_σᵢ * m)`, each Gaussian applied as three separable 1-D
//! convolutions in physical units, truncated at 4σ per side, taps normalised
//! to sum one, with replicate borders. `K` maps momentum to velocity and
//! `⟨m, K m⟩` is the regulariser.
//!
//! Replicate borders make `K` non-symmetric near the boundary, so the exact
//! transpose is provided separately as [`smooth_adjoint`]; the two agree for
//! fields supported more than 4σ from the border.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::scalar::Real;
use crate::volume::{Field3, Grid, Volume};

/// Truncation radius in standard deviations.
pub const TRUNCATE: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussComponent {
    pub weight: f64,
    /// Standard deviation in mm.
    pub sigma: f64,
}

/// Convex combination of isotropic Gaussians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpec", into = "KernelSpec")]
pub struct MultiGaussKernel {
    components: Vec<GaussComponent>,
}

/// Serialized form: parallel `sigmas` / `weights` lists.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub sigmas: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TryFrom<KernelSpec> for MultiGaussKernel {
    type Error = Error;

    fn try_from(s: KernelSpec) -> Result<Self> {
        if s.sigmas.len() != s.weights.len() {
            return Err(Error::input("kernel sigmas and weights differ in length"));
        }
        Self::new(
            s.weights
                .into_iter()
                .zip(s.sigmas)
                .map(|(weight, sigma)| GaussComponent { weight, sigma })
                .collect(),
        )
    }
}

impl From<MultiGaussKernel> for KernelSpec {
    fn from(k: MultiGaussKernel) -> Self {
        KernelSpec {
            sigmas: k.components.iter().map(|c| c.sigma).collect(),
            weights: k.components.iter().map(|c| c.weight).collect(),
        }
    }
}

impl MultiGaussKernel {
    pub fn new(components: Vec<GaussComponent>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::input("kernel needs at least one component"));
        }
        if components.iter().any(|c| !(c.weight > 0.0) || !c.weight.is_finite()) {
            return Err(Error::input("kernel weights must be positive"));
        }
        if components.iter().any(|c| !(c.sigma > 0.0) || !c.sigma.is_finite()) {
            return Err(Error::input("kernel sigmas must be positive"));
        }
        if components.windows(2).any(|w| w[1].sigma <= w[0].sigma) {
            return Err(Error::input("kernel sigmas must be strictly increasing"));
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::input(format!("kernel weights sum to {total}, expected 1")));
        }
        Ok(Self { components })
    }

    pub fn single(sigma: f64) -> Result<Self> {
        Self::new(vec![GaussComponent { weight: 1.0, sigma }])
    }

    pub fn components(&self) -> &[GaussComponent] {
        &self.components
    }
}

impl Default for MultiGaussKernel {
    /// sigmas (1.5, 3, 6) mm, weights (0.2, 0.3, 0.5).
    fn default() -> Self {
        Self {
            components: vec![
                GaussComponent { weight: 0.2, sigma: 1.5 },
                GaussComponent { weight: 0.3, sigma: 3.0 },
                GaussComponent { weight: 0.5, sigma: 6.0 },
            ],
        }
    }
}

/// Normalised 1-D taps `t[-R..=R]` for `sigma` (mm) on spacing `h` (mm).
pub fn gaussian_taps(sigma: f64, h: f64) -> Vec<f64> {
    let r = (TRUNCATE * sigma / h).ceil() as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|j| {
            let x = j as f64 * h;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|t| t / s).collect()
}

/// Per-voxel value the line convolutions operate on.
pub(crate) trait Lane: Copy + Send + Sync {
    fn zero() -> Self;
    fn add_scaled(self, w: f64, x: Self) -> Self;
}

impl<T: Real> Lane for T {
    #[inline(always)]
    fn zero() -> Self {
        T::zero()
    }
    #[inline(always)]
    fn add_scaled(self, w: f64, x: Self) -> Self {
        self + T::of(w) * x
    }
}

impl<T: Real> Lane for [T; 3] {
    #[inline(always)]
    fn zero() -> Self {
        [T::zero(); 3]
    }
    #[inline(always)]
    fn add_scaled(self, w: f64, x: Self) -> Self {
        let w = T::of(w);
        [self[0] + w * x[0], self[1] + w * x[1], self[2] + w * x[2]]
    }
}

#[inline]
pub(crate) fn conv_line<L: Lane>(src: &[L], dst: &mut [L], taps: &[f64]) {
    let n = src.len() as i64;
    let r = (taps.len() / 2) as i64;
    for (i, out) in dst.iter_mut().enumerate() {
        let mut acc = L::zero();
        for (t, &w) in taps.iter().enumerate() {
            let p = (i as i64 + t as i64 - r).clamp(0, n - 1) as usize;
            acc = acc.add_scaled(w, src[p]);
        }
        *out = acc;
    }
}

/// Transpose of [`conv_line`].
#[inline]
pub(crate) fn conv_line_adjoint<L: Lane>(src: &[L], dst: &mut [L], taps: &[f64]) {
    let n = src.len() as i64;
    let r = (taps.len() / 2) as i64;
    for (p, out) in dst.iter_mut().enumerate() {
        let p = p as i64;
        let mut acc = L::zero();
        // interior contributions: forward output i read p with tap p - i
        for i in (p - r).max(0)..=(p + r).min(n - 1) {
            acc = acc.add_scaled(taps[(p - i + r) as usize], src[i as usize]);
        }
        // clamped reads that landed on the borders
        if p == 0 {
            for i in 0..n.min(r) {
                let tail: f64 = (-r..-i).map(|j| taps[(j + r) as usize]).sum();
                acc = acc.add_scaled(tail, src[i as usize]);
            }
        }
        if p == n - 1 {
            for i in (n - r).max(0)..n {
                let tail: f64 = ((n - i)..=r).map(|j| taps[(j + r) as usize]).sum();
                acc = acc.add_scaled(tail, src[i as usize]);
            }
        }
        *out = acc;
    }
}

/// Applies a 1-D operation along `axis` to every grid line.
pub(crate) fn along_axis<L: Lane>(data: &[L], dims: [usize; 3], axis: usize, op: impl Fn(&[L], &mut [L]) + Sync) -> Vec<L> {
    let [nx, ny, nz] = dims;
    let n = dims[axis];
    let stride = [1, nx, nx * ny][axis];
    let (n_lines, line_start): (usize, Box<dyn Fn(usize) -> usize + Sync>) = match axis {
        0 => (ny * nz, Box::new(move |l| l * nx)),
        1 => (nx * nz, Box::new(move |l| (l % nx) + (l / nx) * nx * ny)),
        _ => (nx * ny, Box::new(move |l| l)),
    };
    let lines: Vec<Vec<L>> = par::map_indexed(n_lines, |l| {
        let start = line_start(l);
        let src: Vec<L> = (0..n).map(|i| data[start + i * stride]).collect();
        let mut dst = vec![L::zero(); n];
        op(&src, &mut dst);
        dst
    });
    let mut out = vec![L::zero(); data.len()];
    for (l, line) in lines.into_iter().enumerate() {
        let start = line_start(l);
        for (i, v) in line.into_iter().enumerate() {
            out[start + i * stride] = v;
        }
    }
    out
}

fn blur_lanes<L: Lane>(data: &[L], grid: &Grid, sigma: f64, adjoint: bool) -> Vec<L> {
    let dims = grid.dims();
    let spacing = grid.spacing();
    let mut cur = data.to_vec();
    let axes: [usize; 3] = if adjoint { [2, 1, 0] } else { [0, 1, 2] };
    for axis in axes {
        let taps = gaussian_taps(sigma, spacing[axis]);
        if taps.len() == 1 {
            continue;
        }
        cur = if adjoint {
            along_axis(&cur, dims, axis, |s, d| conv_line_adjoint(s, d, &taps))
        } else {
            along_axis(&cur, dims, axis, |s, d| conv_line(s, d, &taps))
        };
    }
    cur
}

fn mix<L: Lane>(data: &[L], grid: &Grid, k: &MultiGaussKernel, adjoint: bool) -> Vec<L> {
    let mut acc = vec![L::zero(); data.len()];
    for c in k.components() {
        let b = blur_lanes(data, grid, c.sigma, adjoint);
        acc.par_iter_mut().zip(b.par_iter()).for_each(|(a, &x)| *a = a.add_scaled(c.weight, x));
    }
    acc
}

/// `v = K m`.
pub fn smooth<T: Real>(m: &Field3<T>, k: &MultiGaussKernel) -> Field3<T> {
    Field3::from_vec_unchecked(m.grid().clone(), mix(m.data(), m.grid(), k, false))
}

/// `Kᵀ g`, the exact transpose of [`smooth`] under replicate borders.
pub fn smooth_adjoint<T: Real>(g: &Field3<T>, k: &MultiGaussKernel) -> Field3<T> {
    Field3::from_vec_unchecked(g.grid().clone(), mix(g.data(), g.grid(), k, true))
}

/// Single Gaussian blur of a scalar volume (sigma in mm).
pub fn gaussian_blur<T: Real>(v: &Volume<T>, sigma: f64) -> Volume<T> {
    Volume::from_vec_unchecked(v.grid().clone(), blur_lanes(v.data(), v.grid(), sigma, false))
}

/// Blur of a scalar volume with a multi-Gaussian mixture.
pub fn smooth_scalar<T: Real>(v: &Volume<T>, k: &MultiGaussKernel) -> Volume<T> {
    Volume::from_vec_unchecked(v.grid().clone(), mix(v.data(), v.grid(), k, false))
}

/// `Σ_voxels m·v × voxel volume` (mm³-weighted inner product).
pub fn reg_inner<T: Real>(m: &Field3<T>, v: &Field3<T>) -> Result<f64> {
    m.grid().ensure_same(v.grid(), "reg_inner operands")?;
    Ok(field_dot(m, v) * m.grid().voxel_volume())
}

/// Plain Euclidean inner product of two fields on the same grid.
pub(crate) fn field_dot<T: Real>(a: &Field3<T>, b: &Field3<T>) -> f64 {
    let (a, b) = (a.data(), b.data());
    par::chunked_sum(a.len(), |r| {
        r.map(|i| (0..3).map(|c| a[i][c].f64() * b[i][c].f64()).sum::<f64>()).sum()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::{RngCore, SeedableRng};

    fn uniform(rng: &mut ChaCha8Rng) -> f64 {
        (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    fn random_field(grid: &Grid, rng: &mut ChaCha8Rng) -> Field3<f64> {
        Field3::from_fn(grid.clone(), |_| [uniform(rng), uniform(rng), uniform(rng)])
    }

    #[test]
    fn validation() {
        let c = |weight, sigma| GaussComponent { weight, sigma };
        assert!(MultiGaussKernel::new(vec![c(0.5, 1.0), c(0.5, 1.0)]).is_err());
        assert!(MultiGaussKernel::new(vec![c(0.5, 1.0), c(0.4, 2.0)]).is_err());
        assert!(MultiGaussKernel::new(vec![c(1.0, 0.0)]).is_err());
        assert!(MultiGaussKernel::new(vec![c(-0.5, 1.0), c(1.5, 2.0)]).is_err());
        assert!(MultiGaussKernel::new(vec![c(0.25, 1.0), c(0.75, 2.0)]).is_ok());
        let k = MultiGaussKernel::default();
        assert!(MultiGaussKernel::new(k.components().to_vec()).is_ok());
    }

    #[test]
    fn zero_and_constant_fields() {
        let g = Grid::new([7, 6, 9], [1.0, 1.5, 2.0], [0.0; 3]).unwrap();
        let k = MultiGaussKernel::default();
        let z = smooth(&Field3::<f64>::zeros(g.clone()), &k);
        assert!(z.data().iter().all(|v| *v == [0.0; 3]));
        let c = smooth(&Field3::<f64>::filled(g, [1.0, -2.0, 3.5]), &k);
        for v in c.data() {
            assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] + 2.0).abs() < 1e-12 && (v[2] - 3.5).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_is_exact_transpose_including_borders() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid::new([6, 9, 5], [1.0, 0.75, 1.5], [0.0; 3]).unwrap();
        let k = MultiGaussKernel::default();
        let a = random_field(&g, &mut rng);
        let b = random_field(&g, &mut rng);
        let lhs = field_dot(&a, &smooth(&b, &k));
        let rhs = field_dot(&smooth_adjoint(&a, &k), &b);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }

    #[test]
    fn smoothing_energy_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Grid::cube(10, 1.5).unwrap();
        let k = MultiGaussKernel::default();
        for _ in 0..5 {
            let m = random_field(&g, &mut rng);
            assert!(reg_inner(&m, &smooth(&m, &k)).unwrap() >= 0.0);
        }
        assert_eq!(reg_inner(&Field3::<f64>::zeros(g.clone()), &Field3::zeros(g)).unwrap(), 0.0);
    }

    #[test]
    fn single_voxel_inner_product_is_central_weight() {
        let g = Grid::cube(33, 1.0).unwrap();
        let k = MultiGaussKernel::single(2.0).unwrap();
        let mut m = Field3::<f64>::zeros(g.clone());
        m.data_mut()[g.index(16, 16, 16)] = [1.0, 0.0, 0.0];
        let v = smooth(&m, &k);
        let t = gaussian_taps(2.0, 1.0);
        let centre = t[t.len() / 2].powi(3);
        let e = reg_inner(&m, &v).unwrap();
        assert!((e - centre * g.voxel_volume()).abs() < 1e-15);
    }

    #[test]
    fn reg_inner_grid_mismatch() {
        let a = Field3::<f64>::zeros(Grid::cube(3, 1.0).unwrap());
        let b = Field3::<f64>::zeros(Grid::cube(4, 1.0).unwrap());
        assert!(reg_inner(&a, &b).is_err());
    }
}
