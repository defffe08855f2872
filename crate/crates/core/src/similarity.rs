//! Similarity and mask-agreement metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{along_axis, conv_line, conv_line_adjoint};
use crate::par;
use crate::scalar::Real;
use crate::volume::{Grid, Mask, Volume};

/// Window half-width (voxels) and denominator regulariser of LNCC.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LnccParams {
    pub radius: usize,
    pub epsilon: f64,
}

impl Default for LnccParams {
    fn default() -> Self {
        Self { radius: 4, epsilon: 1e-5 }
    }
}

impl LnccParams {
    pub fn new(radius: usize, epsilon: f64) -> Result<Self> {
        let p = Self { radius, epsilon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.radius < 1 {
            return Err(Error::input("LNCC radius must be >= 1"));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::input("LNCC epsilon must be positive"));
        }
        Ok(())
    }
}

/// How a validity mask enters LNCC.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Invalid voxels are not used as window centres; window statistics
    /// still read every voxel.
    #[default]
    ExcludeCenters,
    /// Invalid voxels are additionally removed from the window statistics.
    ExcludeStatistics,
}

fn box_sum(data: &[f64], grid: &Grid, radius: usize) -> Vec<f64> {
    let taps = vec![1.0; 2 * radius + 1];
    let mut cur = data.to_vec();
    for axis in 0..3 {
        cur = along_axis(&cur, grid.dims(), axis, |s, d| conv_line(s, d, &taps));
    }
    cur
}

fn box_sum_adjoint(data: &[f64], grid: &Grid, radius: usize) -> Vec<f64> {
    let taps = vec![1.0; 2 * radius + 1];
    let mut cur = data.to_vec();
    for axis in [2, 1, 0] {
        cur = along_axis(&cur, grid.dims(), axis, |s, d| conv_line_adjoint(s, d, &taps));
    }
    cur
}

struct Windows {
    n: Vec<f64>,
    si: Vec<f64>,
    sj: Vec<f64>,
    sii: Vec<f64>,
    sjj: Vec<f64>,
    sij: Vec<f64>,
    centres: Vec<bool>,
    n_centres: usize,
    weights: Option<Vec<f64>>,
}

fn windows<T: Real>(i: &Volume<T>, j: &Volume<T>, p: &LnccParams, valid: Option<&Mask>, mode: MaskMode) -> Result<Windows> {
    p.validate()?;
    i.grid().ensure_same(j.grid(), "LNCC images")?;
    if let Some(m) = valid {
        i.grid().ensure_same(m.grid(), "LNCC validity mask")?;
    }
    let grid = i.grid();
    let weights: Option<Vec<f64>> = match (valid, mode) {
        (Some(m), MaskMode::ExcludeStatistics) => Some(m.data().iter().map(|&b| b as f64).collect()),
        _ => None,
    };
    let w = |idx: usize| weights.as_ref().map_or(1.0, |w| w[idx]);
    let a: Vec<f64> = i.data().iter().enumerate().map(|(k, v)| w(k) * v.f64()).collect();
    let b: Vec<f64> = j.data().iter().enumerate().map(|(k, v)| w(k) * v.f64()).collect();
    let aa: Vec<f64> = a.iter().zip(i.data()).map(|(x, v)| x * v.f64()).collect();
    let bb: Vec<f64> = b.iter().zip(j.data()).map(|(x, v)| x * v.f64()).collect();
    let ab: Vec<f64> = a.iter().zip(j.data()).map(|(x, v)| x * v.f64()).collect();
    let r = p.radius;
    let n = match &weights {
        Some(wv) => box_sum(wv, grid, r),
        None => vec![((2 * r + 1) as f64).powi(3); grid.len()],
    };
    let mut centres: Vec<bool> = match valid {
        Some(m) => m.data().iter().map(|&b| b != 0).collect(),
        None => vec![true; grid.len()],
    };
    for (c, &cnt) in centres.iter_mut().zip(&n) {
        if cnt <= 0.0 {
            *c = false;
        }
    }
    let n_centres = centres.iter().filter(|&&c| c).count();
    if n_centres == 0 {
        return Err(Error::Metric("LNCC has no valid window centres".into()));
    }
    Ok(Windows {
        si: box_sum(&a, grid, r),
        sj: box_sum(&b, grid, r),
        sii: box_sum(&aa, grid, r),
        sjj: box_sum(&bb, grid, r),
        sij: box_sum(&ab, grid, r),
        n,
        centres,
        n_centres,
        weights,
    })
}

struct Local {
    ncc: f64,
    /// ∂ncc/∂ΣI, ∂ncc/∂ΣI², ∂ncc/∂ΣIJ
    d_si: f64,
    d_sii: f64,
    d_sij: f64,
}

#[inline]
fn local(w: &Windows, x: usize, eps: f64) -> Local {
    let n = w.n[x];
    let mi = w.si[x] / n;
    let mj = w.sj[x] / n;
    let vi = w.sii[x] / n - mi * mi;
    let vj = w.sjj[x] / n - mj * mj;
    let cov = w.sij[x] / n - mi * mj;
    let den = vi * vj + eps;
    let rs = 1.0 / den.sqrt();
    let ncc = cov * rs;
    let d_vi = -0.5 * cov * vj * rs / den;
    Local {
        ncc,
        d_si: (-mj * rs + d_vi * (-2.0 * mi)) / n,
        d_sii: d_vi / n,
        d_sij: rs / n,
    }
}

/// Mean local normalised cross-correlation over the valid window centres
/// (every voxel when `valid` is `None`), windows of `(2r+1)³` voxels with
/// replicated borders. Masked-out voxels are excluded as centres only.
pub fn lncc<T: Real>(i: &Volume<T>, j: &Volume<T>, p: &LnccParams, valid: Option<&Mask>) -> Result<f64> {
    lncc_with_mode(i, j, p, valid, MaskMode::ExcludeCenters)
}

pub fn lncc_with_mode<T: Real>(
    i: &Volume<T>,
    j: &Volume<T>,
    p: &LnccParams,
    valid: Option<&Mask>,
    mode: MaskMode,
) -> Result<f64> {
    let w = windows(i, j, p, valid, mode)?;
    let sum = par::chunked_sum(w.n.len(), |r| {
        r.filter(|&x| w.centres[x]).map(|x| local(&w, x, p.epsilon).ncc).sum()
    });
    Ok(sum / w.n_centres as f64)
}

/// LNCC and its gradient with respect to the first image.
pub(crate) fn lncc_grad<T: Real>(
    i: &Volume<T>,
    j: &Volume<T>,
    p: &LnccParams,
    valid: Option<&Mask>,
    mode: MaskMode,
) -> Result<(f64, Vec<f64>)> {
    let w = windows(i, j, p, valid, mode)?;
    let len = w.n.len();
    let scale = 1.0 / w.n_centres as f64;
    let locals = par::map_indexed(len, |x| {
        if w.centres[x] {
            let l = local(&w, x, p.epsilon);
            (l.ncc, l.d_si * scale, l.d_sii * scale, l.d_sij * scale)
        } else {
            (0.0, 0.0, 0.0, 0.0)
        }
    });
    let value = par::chunked_sum(len, |r| r.map(|x| locals[x].0).sum()) * scale;
    let grid = i.grid();
    let a = box_sum_adjoint(&locals.iter().map(|l| l.1).collect::<Vec<_>>(), grid, p.radius);
    let b = box_sum_adjoint(&locals.iter().map(|l| l.2).collect::<Vec<_>>(), grid, p.radius);
    let c = box_sum_adjoint(&locals.iter().map(|l| l.3).collect::<Vec<_>>(), grid, p.radius);
    let (id, jd) = (i.data(), j.data());
    let grad = par::map_indexed(len, |y| {
        let g = a[y] + 2.0 * id[y].f64() * b[y] + jd[y].f64() * c[y];
        match &w.weights {
            Some(wt) => wt[y] * g,
            None => g,
        }
    });
    Ok((value, grad))
}

/// Mean squared difference over the voxels of `region`.
pub fn masked_mse<T: Real>(i: &Volume<T>, j: &Volume<T>, region: &Mask) -> Result<f64> {
    i.grid().ensure_same(j.grid(), "masked_mse images")?;
    i.grid().ensure_same(region.grid(), "masked_mse region")?;
    let count = region.count();
    if count == 0 {
        return Err(Error::Metric("masked_mse over an empty region".into()));
    }
    let (a, b, m) = (i.data(), j.data(), region.data());
    let sum = par::chunked_sum(a.len(), |r| {
        r.filter(|&x| m[x] != 0)
            .map(|x| {
                let d = a[x].f64() - b[x].f64();
                d * d
            })
            .sum()
    });
    Ok(sum / count as f64)
}

/// Clamp applied to predicted probabilities before taking logarithms.
pub const BCE_CLAMP: f64 = 1e-7;

/// Binary cross-entropy of probabilities `pred` against `target`.
pub fn bce<T: Real>(pred: &Volume<T>, target: &Mask) -> Result<f64> {
    pred.grid().ensure_same(target.grid(), "bce inputs")?;
    if let Some(x) = pred.data().iter().find(|v| !(v.f64() >= 0.0 && v.f64() <= 1.0)) {
        return Err(Error::input(format!("prediction {x} outside [0, 1]")));
    }
    let (p, t) = (pred.data(), target.data());
    let sum = par::chunked_sum(p.len(), |r| {
        r.map(|x| {
            let q = p[x].f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            if t[x] != 0 {
                q.ln()
            } else {
                (1.0 - q).ln()
            }
        })
        .sum()
    });
    Ok(-sum / p.len() as f64)
}

/// Dice overlap; two empty masks score 1.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    a.grid().ensure_same(b.grid(), "dice inputs")?;
    let (na, nb) = (a.count(), b.count());
    if na + nb == 0 {
        return Ok(1.0);
    }
    let both = a.data().iter().zip(b.data()).filter(|(x, y)| **x != 0 && **y != 0).count();
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(g: &Grid) -> Volume<f64> {
        // window std of order 10; ncc(I, I) = 1 - O(eps / var²)
        Volume::from_fn(g.clone(), |p| {
            20.0 * ((0.9 * p[0]).sin() * (0.7 * p[1] + 0.3).cos() + 0.4 * (1.3 * p[2]).sin() + 0.05 * p[0])
        })
    }

    #[test]
    fn self_and_affine_correlation() {
        let g = Grid::cube(12, 1.0).unwrap();
        let i = textured(&g);
        let p = LnccParams::default();
        assert!((lncc(&i, &i, &p, None).unwrap() - 1.0).abs() < 1e-6);
        let j = i.map(|x| 2.0 * x - 10.0);
        assert!((lncc(&j, &i, &p, None).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn flat_images_correlate_near_zero() {
        let g = Grid::cube(5, 1.0).unwrap();
        let a = Volume::filled(g.clone(), 2.0);
        let b = Volume::filled(g, -1.0);
        let p = LnccParams::new(1, 1e-5).unwrap();
        // direct formula on one 3³ window: cov = 0, var = 0 -> 0 / sqrt(eps)
        let v = lncc(&a, &b, &p, None).unwrap();
        assert!(v.abs() < 1e-9, "{v}");
    }

    #[test]
    fn symmetric() {
        let g = Grid::cube(9, 1.0).unwrap();
        let a = textured(&g);
        let b = Volume::from_fn(g, |p| (p[0] * p[1] * 0.1).sin() + p[2] * 0.2);
        let p = LnccParams::new(2, 1e-5).unwrap();
        let ab = lncc(&a, &b, &p, None).unwrap();
        let ba = lncc(&b, &a, &p, None).unwrap();
        assert!((ab - ba).abs() <= 1e-12);
    }

    #[test]
    fn empty_valid_set_is_metric_error() {
        let g = Grid::cube(4, 1.0).unwrap();
        let a = textured(&g);
        let r = lncc(&a, &a, &LnccParams::default(), Some(&Mask::empty(g)));
        assert!(matches!(r, Err(Error::Metric(_))));
    }

    #[test]
    fn gradient_matches_finite_differences_in_both_modes() {
        let g = Grid::new([7, 6, 5], [1.0, 1.2, 0.8], [0.0; 3]).unwrap();
        let i = textured(&g);
        let j = Volume::from_fn(g.clone(), |p| (0.5 * p[0] + 0.2 * p[2]).cos() + 0.3 * p[1]);
        let valid = Mask::from_fn(g.clone(), |p| p[0] + p[1] > 3.0);
        let p = LnccParams::new(1, 1e-3).unwrap();
        for (mask, mode) in [
            (None, MaskMode::ExcludeCenters),
            (Some(&valid), MaskMode::ExcludeCenters),
            (Some(&valid), MaskMode::ExcludeStatistics),
        ] {
            let (val, grad) = lncc_grad(&i, &j, &p, mask, mode).unwrap();
            assert!((val - lncc_with_mode(&i, &j, &p, mask, mode).unwrap()).abs() < 1e-14);
            for idx in [0, 17, 58, 101, g.len() - 1] {
                let h = 1e-6;
                let mut dp = i.data().to_vec();
                dp[idx] += h;
                let mut dm = i.data().to_vec();
                dm[idx] -= h;
                let fp = lncc_with_mode(&Volume::new(g.clone(), dp).unwrap(), &j, &p, mask, mode).unwrap();
                let fm = lncc_with_mode(&Volume::new(g.clone(), dm).unwrap(), &j, &p, mask, mode).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - grad[idx]).abs() < 1e-7 * (1.0 + fd.abs()), "{mode:?} idx {idx}: {fd} vs {}", grad[idx]);
            }
        }
    }

    #[test]
    fn mse_cases() {
        let g = Grid::cube(2, 1.0).unwrap();
        let a = Volume::new(g.clone(), vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        let mut bd = a.data().to_vec();
        bd[1] -= 1.0;
        bd[6] += 3.0;
        let b = Volume::new(g.clone(), bd).unwrap();
        let mut m = vec![0u8; 8];
        m[1] = 1;
        m[6] = 1;
        let region = Mask::new(g.clone(), m).unwrap();
        assert_eq!(masked_mse(&a, &b, &region).unwrap(), 5.0);
        assert_eq!(masked_mse(&a, &a, &region).unwrap(), 0.0);
        assert!(matches!(masked_mse(&a, &b, &Mask::empty(g)), Err(Error::Metric(_))));
    }

    #[test]
    fn bce_cases() {
        let g = Grid::new([2, 2, 2], [1.0; 3], [0.0; 3]).unwrap();
        let t = Mask::from_fn(g.clone(), |p| p[0] > 0.5);
        assert!(bce(&t.to_volume::<f64>(), &t).unwrap() <= 1e-6);
        let half = Volume::filled(g.clone(), 0.5);
        assert!((bce(&half, &t).unwrap() - 2f64.ln()).abs() < 1e-12);
        let bad = Volume::filled(g.clone(), 1.5);
        assert!(matches!(bce(&bad, &t), Err(Error::Input(_))));
        // two-voxel case p = (0.9, 0.2), t = (1, 0), replicated over the x axis
        let pred = Volume::from_fn(g.clone(), |p| if p[0] > 0.5 { 0.9 } else { 0.2 });
        let expect = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((bce(&pred, &t).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn dice_cases() {
        let g = Grid::new([10, 2, 2], [1.0; 3], [0.0; 3]).unwrap();
        let sel = |set: &[usize]| {
            let mut d = vec![0u8; g.len()];
            for &s in set {
                d[s] = 1;
            }
            Mask::new(g.clone(), d).unwrap()
        };
        let a = sel(&[0, 1, 2, 3]);
        let b = sel(&[1, 2, 3, 4, 5, 6]);
        assert!((dice(&a, &b).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &sel(&[7, 8])).unwrap(), 0.0);
        assert_eq!(dice(&sel(&[]), &sel(&[])).unwrap(), 1.0);
    }
}
