//! Stationary-velocity-field flows and displacement maps.
//!
//! A [`DispMap`] stores `u` with `map(x) = x + u(x)`. The map `Φ⁻¹` produced by
//! [`integrate_svf`] carries atlas-grid positions to subject positions; the
//! forward map is obtained by flowing `-v` ([`invert_svf`]).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::par;
use crate::scalar::Real;
use crate::volume::interp::Trilinear;
use crate::volume::{Field3, Grid, LandmarkSet, Mask, Volume};

/// Default number of semi-Lagrangian steps.
pub const DEFAULT_STEPS: usize = 8;

/// Displacement representation of a spatial transformation.
#[derive(Clone, Debug, PartialEq)]
pub struct DispMap<T = f64> {
    u: Field3<T>,
}

impl<T: Real> DispMap<T> {
    pub fn new(u: Field3<T>) -> Self {
        Self { u }
    }

    pub fn identity(grid: Grid) -> Self {
        Self { u: Field3::zeros(grid) }
    }

    /// `x ↦ A (x - centre) + centre + t` sampled on `grid`.
    pub fn from_affine(grid: Grid, a: [[f64; 3]; 3], t: [f64; 3], centre: [f64; 3]) -> Self {
        let u = Field3::from_fn(grid, |p| {
            let d = [p[0] - centre[0], p[1] - centre[1], p[2] - centre[2]];
            let mut out = [T::zero(); 3];
            for r in 0..3 {
                let y = a[r][0] * d[0] + a[r][1] * d[1] + a[r][2] * d[2] + centre[r] + t[r];
                out[r] = T::of(y - p[r]);
            }
            out
        });
        Self { u }
    }

    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    pub fn displacement(&self) -> &Field3<T> {
        &self.u
    }

    pub fn into_displacement(self) -> Field3<T> {
        self.u
    }

    /// `x + u(x)` with border-replicated `u`.
    pub fn apply(&self, p: [f64; 3]) -> Result<[f64; 3]> {
        let d = self.u.sample(p)?;
        Ok([p[0] + d[0].f64(), p[1] + d[1].f64(), p[2] + d[2].f64()])
    }

    /// Mean displacement magnitude in mm.
    pub fn mean_magnitude(&self) -> f64 {
        let d = self.u.data();
        par::chunked_sum(d.len(), |r| r.map(|i| norm3(d[i])).sum()) / d.len() as f64
    }

    pub fn resample(&self, target: &Grid) -> Self {
        Self { u: self.u.resample(target) }
    }
}

#[inline]
fn norm3<T: Real>(v: [T; 3]) -> f64 {
    (v[0].f64().powi(2) + v[1].f64().powi(2) + v[2].f64().powi(2)).sqrt()
}

fn inv_spacing<T: Real>(grid: &Grid) -> [T; 3] {
    let s = grid.spacing();
    [T::of(1.0 / s[0]), T::of(1.0 / s[1]), T::of(1.0 / s[2])]
}

#[inline(always)]
fn node<T: Real>(grid: &Grid, idx: usize) -> [T; 3] {
    let [i, j, k] = grid.coords(idx);
    [T::of(i as f64), T::of(j as f64), T::of(k as f64)]
}

/// Departure points `x - dt v(x)` of every node, located once: `v` is
/// stationary, so all steps share them.
fn departures<T: Real>(v: &Field3<T>, dt: T) -> Vec<Trilinear<T>> {
    let grid = v.grid();
    let ih = inv_spacing::<T>(grid);
    let vd = v.data();
    par::map_indexed(grid.len(), |idx| {
        let n = node::<T>(grid, idx);
        let w = vd[idx];
        Trilinear::locate(grid, [n[0] - dt * w[0] * ih[0], n[1] - dt * w[1] * ih[1], n[2] - dt * w[2] * ih[2]])
    })
}

/// One semi-Lagrangian step: `u'(x) = u(x - dt v(x)) - dt v(x)`.
fn sl_step<T: Real>(u: &Field3<T>, v: &Field3<T>, dep: &[Trilinear<T>], dt: T) -> Field3<T> {
    let (ud, vd) = (u.data(), v.data());
    let data = par::map_indexed(ud.len(), |idx| {
        let w = vd[idx];
        let s = dep[idx].sample3(|i| ud[i]);
        [s[0] - dt * w[0], s[1] - dt * w[1], s[2] - dt * w[2]]
    });
    Field3::from_vec_unchecked(u.grid().clone(), data)
}

fn check_flow_inputs<T: Real>(v: &Field3<T>, steps: usize, init: Option<&DispMap<T>>) -> Result<()> {
    if steps == 0 {
        return Err(Error::input("integration needs at least one step"));
    }
    if let Some(m) = init {
        v.grid().ensure_same(m.grid(), "velocity field vs initial map")?;
    }
    Ok(())
}

/// Integrates `∂_t Φ⁻¹ + DΦ⁻¹ v = 0` to `t = 1` with `steps` first-order
/// semi-Lagrangian steps, starting from `init` (identity when `None`).
pub fn integrate_svf<T: Real>(v: &Field3<T>, steps: usize, init: Option<&DispMap<T>>) -> Result<DispMap<T>> {
    check_flow_inputs(v, steps, init)?;
    let dt = T::of(1.0 / steps as f64);
    let mut u = match init {
        Some(m) => m.u.clone(),
        None => Field3::zeros(v.grid().clone()),
    };
    let dep = departures(v, dt);
    for _ in 0..steps {
        u = sl_step(&u, v, &dep, dt);
    }
    Ok(DispMap { u })
}

/// Same as [`integrate_svf`] but keeps every intermediate state
/// (`steps + 1` fields) for reverse accumulation.
pub(crate) fn integrate_svf_tape<T: Real>(
    v: &Field3<T>,
    steps: usize,
    init: Option<&DispMap<T>>,
) -> Result<Vec<Field3<T>>> {
    check_flow_inputs(v, steps, init)?;
    let dt = T::of(1.0 / steps as f64);
    let mut tape = Vec::with_capacity(steps + 1);
    tape.push(match init {
        Some(m) => m.u.clone(),
        None => Field3::zeros(v.grid().clone()),
    });
    let dep = departures(v, dt);
    for k in 0..steps {
        let next = sl_step(&tape[k], v, &dep, dt);
        tape.push(next);
    }
    Ok(tape)
}

/// Reverse pass through the recorded integration: given `∂E/∂u_N`, returns
/// `∂E/∂v` for the discrete recursion (the initial map is treated as constant).
pub(crate) fn integrate_svf_backward<T: Real>(v: &Field3<T>, tape: &[Field3<T>], grad_final: Field3<T>) -> Field3<T> {
    let grid = v.grid();
    let steps = tape.len() - 1;
    let dt = T::of(1.0 / steps as f64);
    let ih = inv_spacing::<T>(grid);
    let vd = v.data();
    let dep = departures(v, dt);
    let mut gv = vec![[T::zero(); 3]; grid.len()];
    let mut g = grad_final.into_data();
    for k in (0..steps).rev() {
        let ud = tape[k].data();
        // position sensitivity, independent per voxel
        let g_ref = &g;
        gv.par_iter_mut().enumerate().for_each(|(idx, acc)| {
            let t = &dep[idx];
            let gi = g_ref[idx];
            let mut dc = [T::zero(); 3];
            for comp in 0..3 {
                let (_, jac) = t.sample_grad(|i| ud[i][comp]);
                for d in 0..3 {
                    dc[d] += gi[comp] * jac[d];
                }
            }
            for d in 0..3 {
                acc[d] -= dt * (gi[d] + dc[d] * ih[d]);
            }
        });
        // value sensitivity: scatter onto the previous state's nodes
        let mut prev = vec![[T::zero(); 3]; grid.len()];
        for idx in 0..grid.len() {
            let gi = g[idx];
            if gi == [T::zero(); 3] {
                continue;
            }
            dep[idx].for_each_weight(|i, wt| {
                let p = &mut prev[i];
                p[0] += wt * gi[0];
                p[1] += wt * gi[1];
                p[2] += wt * gi[2];
            });
        }
        g = prev;
    }
    let _ = vd;
    Field3::from_vec_unchecked(grid.clone(), gv)
}

/// Forward map: `integrate_svf(-v, steps, identity)`.
pub fn invert_svf<T: Real>(v: &Field3<T>, steps: usize) -> Result<DispMap<T>> {
    integrate_svf(&v.scaled(-T::one()), steps, None)
}

/// `I ∘ φ` on φ's grid: `out(x) = I(x + u(x))`.
pub fn warp_image<T: Real>(img: &Volume<T>, phi: &DispMap<T>) -> Volume<T> {
    let grid = phi.grid();
    let ud = phi.u.data();
    let id = img.data();
    let data = if img.grid() == grid {
        let ih = inv_spacing::<T>(grid);
        par::map_indexed(grid.len(), |idx| {
            let n = node::<T>(grid, idx);
            let u = ud[idx];
            let c = [n[0] + u[0] * ih[0], n[1] + u[1] * ih[1], n[2] + u[2] * ih[2]];
            Trilinear::locate(grid, c).sample(|i| id[i])
        })
    } else {
        let src = img.grid();
        par::map_indexed(grid.len(), |idx| {
            let p = grid.point_of(idx);
            let u = ud[idx];
            let c = src.continuous_index([p[0] + u[0].f64(), p[1] + u[1].f64(), p[2] + u[2].f64()]);
            Trilinear::locate(src, [T::of(c[0]), T::of(c[1]), T::of(c[2])]).sample(|i| id[i])
        })
    };
    Volume::from_vec_unchecked(grid.clone(), data)
}

/// Reverse pass of [`warp_image`] with respect to the displacement:
/// `∂E/∂u(x) = g(x) ∇I(x + u(x))`.
pub(crate) fn warp_image_backward<T: Real>(img: &Volume<T>, phi: &DispMap<T>, grad_out: &[T]) -> Field3<T> {
    let grid = phi.grid();
    let ud = phi.u.data();
    let id = img.data();
    let src = img.grid();
    let same = src == grid;
    let ih = inv_spacing::<T>(src);
    let data = par::map_indexed(grid.len(), |idx| {
        let g = grad_out[idx];
        if g == T::zero() {
            return [T::zero(); 3];
        }
        let u = ud[idx];
        let c = if same {
            let n = node::<T>(grid, idx);
            [n[0] + u[0] * ih[0], n[1] + u[1] * ih[1], n[2] + u[2] * ih[2]]
        } else {
            let p = grid.point_of(idx);
            src.continuous_index([p[0] + u[0].f64(), p[1] + u[1].f64(), p[2] + u[2].f64()])
                .map(T::of)
        };
        let (_, d) = Trilinear::locate(src, c).sample_grad(|i| id[i]);
        [g * d[0] * ih[0], g * d[1] * ih[1], g * d[2] * ih[2]]
    });
    Field3::from_vec_unchecked(grid.clone(), data)
}

/// Warps a binary mask: trilinear warp of the {0,1} field, then `>= threshold`.
pub fn warp_mask<T: Real>(mask: &Mask, phi: &DispMap<T>, threshold: f64) -> Result<Mask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::input(format!("mask threshold {threshold} must lie in (0, 1)")));
    }
    let warped = warp_image(&mask.to_volume::<T>(), phi);
    let thr = T::of(threshold);
    Ok(Mask::from_vec_unchecked(
        phi.grid().clone(),
        warped.data().iter().map(|&x| (x >= thr) as u8).collect(),
    ))
}

/// `outer ∘ inner` sampled on the inner grid:
/// `u(x) = u_inner(x) + u_outer(x + u_inner(x))`.
pub fn compose<T: Real>(outer: &DispMap<T>, inner: &DispMap<T>) -> DispMap<T> {
    let grid = inner.grid();
    let ui = inner.u.data();
    let uo = outer.u.data();
    let data = if outer.grid() == grid {
        let ih = inv_spacing::<T>(grid);
        par::map_indexed(grid.len(), |idx| {
            let n = node::<T>(grid, idx);
            let a = ui[idx];
            let c = [n[0] + a[0] * ih[0], n[1] + a[1] * ih[1], n[2] + a[2] * ih[2]];
            let t = Trilinear::locate(grid, c);
            [
                a[0] + t.sample(|i| uo[i][0]),
                a[1] + t.sample(|i| uo[i][1]),
                a[2] + t.sample(|i| uo[i][2]),
            ]
        })
    } else {
        par::map_indexed(grid.len(), |idx| {
            let p = grid.point_of(idx);
            let a = ui[idx];
            let b = outer.u.sample_unchecked([p[0] + a[0].f64(), p[1] + a[1].f64(), p[2] + a[2].f64()]);
            [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
        })
    };
    DispMap {
        u: Field3::from_vec_unchecked(grid.clone(), data),
    }
}

fn det3(m: [[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Determinant of `I + Du`, central differences inside, one-sided at borders.
pub fn jacobian_det<T: Real>(phi: &DispMap<T>) -> Volume<T> {
    let grid = phi.grid();
    let dims = grid.dims();
    let h = grid.spacing();
    let ud = phi.u.data();
    let data = par::map_indexed(grid.len(), |idx| {
        let ijk = grid.coords(idx);
        let mut j = [[0.0; 3]; 3];
        for d in 0..3 {
            let (lo, hi) = (ijk[d].saturating_sub(1), (ijk[d] + 1).min(dims[d] - 1));
            let mut a = ijk;
            let mut b = ijk;
            a[d] = lo;
            b[d] = hi;
            let ua = ud[grid.index(a[0], a[1], a[2])];
            let ub = ud[grid.index(b[0], b[1], b[2])];
            let span = (hi - lo) as f64 * h[d];
            for r in 0..3 {
                j[r][d] = (ub[r].f64() - ua[r].f64()) / span;
            }
        }
        for (d, row) in j.iter_mut().enumerate() {
            row[d] += 1.0;
        }
        T::of(det3(j))
    });
    Volume::from_vec_unchecked(grid.clone(), data)
}

/// Minimum of [`jacobian_det`].
pub fn min_jacobian_det<T: Real>(phi: &DispMap<T>) -> f64 {
    jacobian_det(phi).data().iter().map(|x| x.f64()).fold(f64::INFINITY, f64::min)
}

/// Landmarks mapped through a transformation, plus the ids of points that
/// fell outside the map's bounding box (their displacement is border-replicated).
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedPoints {
    pub points: LandmarkSet,
    pub outside: Vec<String>,
}

/// `p ↦ p + u(p)` for every landmark.
pub fn transform_points<T: Real>(pts: &LandmarkSet, map: &DispMap<T>) -> TransformedPoints {
    let mut outside = Vec::new();
    let positions: Vec<[f64; 3]> = pts
        .entries()
        .iter()
        .map(|e| {
            if !map.grid().contains(e.position) {
                outside.push(e.id.clone());
            }
            let p = e.position;
            let d = map.u.sample_unchecked(p);
            [p[0] + d[0].f64(), p[1] + d[1].f64(), p[2] + d[2].f64()]
        })
        .collect();
    TransformedPoints {
        points: pts.with_positions(positions),
        outside,
    }
}
