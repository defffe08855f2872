//! Evaluation protocols: exact distance transform, tumor / near / far region
//! partition, deformation differences against a gold standard and landmark
//! errors.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::DispMap;
use crate::kernel::along_axis;
use crate::scalar::Real;
use crate::volume::{Grid, LandmarkSet, Mask, Region, Volume};

/// Distance reported everywhere when the mask is empty.
pub const NO_MASK_DISTANCE: f64 = 1e30;

/// Default near/far split in mm.
pub const DEFAULT_THRESHOLD_MM: f64 = 30.0;

#[inline(always)]
fn sq(steps: i64, h: f64) -> f64 {
    let t = steps as f64 * h;
    t * t
}

/// One pass of the lower-envelope transform: `d(q) = min_p f(p) + ((q-p) h)²`.
fn envelope_pass(f: &[f64], out: &mut [f64], h: f64) {
    let n = f.len();
    // parabola apexes (indices with finite f) and the boundaries between them
    let mut v: Vec<usize> = Vec::with_capacity(n);
    let mut z: Vec<f64> = Vec::with_capacity(n + 1);
    let h2 = h * h;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = ((f[q] + h2 * (q * q) as f64) - (f[p] + h2 * (p * p) as f64)) / (2.0 * h2 * (q - p) as f64);
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                        if v.is_empty() {
                            continue;
                        }
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        // guard against rounding in the breakpoints: take the better neighbour
        let mut best = f[v[k]] + sq(q as i64 - v[k] as i64, h);
        if k + 1 < v.len() {
            best = best.min(f[v[k + 1]] + sq(q as i64 - v[k + 1] as i64, h));
        }
        *o = best;
    }
}

/// Exact Euclidean distance (mm) from every voxel to the nearest mask voxel,
/// respecting anisotropic spacing. Empty masks yield [`NO_MASK_DISTANCE`].
pub fn distance_transform<T: Real>(mask: &Mask) -> Volume<T> {
    let grid = mask.grid();
    if mask.is_empty() {
        return Volume::filled(grid.clone(), T::of(NO_MASK_DISTANCE));
    }
    let h = grid.spacing();
    let mut cur: Vec<f64> = mask
        .data()
        .iter()
        .map(|&b| if b != 0 { 0.0 } else { f64::INFINITY })
        .collect();
    for axis in 0..3 {
        cur = along_axis(&cur, grid.dims(), axis, |s, d| envelope_pass(s, d, h[axis]));
    }
    Volume::from_vec_unchecked(grid.clone(), cur.into_iter().map(|d2| T::of(d2.sqrt())).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionLabel {
    Tumor,
    Near,
    Far,
}

/// Per-voxel tumor / near / far labelling.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionPartition {
    grid: Grid,
    labels: Vec<RegionLabel>,
    threshold_mm: f64,
}

impl RegionPartition {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn labels(&self) -> &[RegionLabel] {
        &self.labels
    }

    pub fn threshold_mm(&self) -> f64 {
        self.threshold_mm
    }

    pub fn count(&self, label: RegionLabel) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// Tumor = mask voxels, near = `0 < d ≤ threshold`, far = `d > threshold`.
pub fn partition_regions(mask: &Mask, threshold_mm: f64) -> Result<RegionPartition> {
    if !(threshold_mm >= 0.0) || !threshold_mm.is_finite() {
        return Err(Error::input("region threshold must be finite and >= 0"));
    }
    let d = distance_transform::<f64>(mask);
    let labels = d
        .data()
        .iter()
        .map(|&x| {
            if x == 0.0 {
                RegionLabel::Tumor
            } else if x <= threshold_mm {
                RegionLabel::Near
            } else {
                RegionLabel::Far
            }
        })
        .collect();
    Ok(RegionPartition {
        grid: mask.grid().clone(),
        labels,
        threshold_mm,
    })
}

/// Mean / median / max of a set of errors (mm); all `None` when empty.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub max: Option<f64>,
    pub count: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
        Self {
            mean: Some(s.iter().sum::<f64>() / n as f64),
            median: Some(median),
            max: s.last().copied(),
            count: n,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RegionStats {
    pub tumor: Summary,
    pub near: Summary,
    pub far: Summary,
}

impl RegionStats {
    pub fn get(&self, label: RegionLabel) -> &Summary {
        match label {
            RegionLabel::Tumor => &self.tumor,
            RegionLabel::Near => &self.near,
            RegionLabel::Far => &self.far,
        }
    }
}

/// Per-voxel distance between the images of two maps, aggregated per region.
pub fn deformation_difference<T: Real>(a: &DispMap<T>, b: &DispMap<T>, part: &RegionPartition) -> Result<RegionStats> {
    a.grid().ensure_same(b.grid(), "deformation_difference maps")?;
    a.grid().ensure_same(part.grid(), "deformation_difference partition")?;
    let mut buckets: [Vec<f64>; 3] = Default::default();
    for ((ua, ub), label) in a.displacement().data().iter().zip(b.displacement().data()).zip(part.labels()) {
        let e = (0..3).map(|d| (ua[d].f64() - ub[d].f64()).powi(2)).sum::<f64>().sqrt();
        buckets[*label as usize].push(e);
    }
    Ok(RegionStats {
        tumor: Summary::of(&buckets[0]),
        near: Summary::of(&buckets[1]),
        far: Summary::of(&buckets[2]),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkResidual {
    pub id: String,
    pub region: Region,
    pub error: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LandmarkReport {
    pub near_mean: Option<f64>,
    pub far_mean: Option<f64>,
    pub mean: Option<f64>,
    pub per_id: Vec<LandmarkResidual>,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Euclidean error per landmark id (regions taken from `reference`).
pub fn landmark_error(predicted: &LandmarkSet, reference: &LandmarkSet) -> Result<LandmarkReport> {
    if predicted.len() != reference.len() {
        return Err(Error::input(format!(
            "landmark sets differ in size ({} vs {})",
            predicted.len(),
            reference.len()
        )));
    }
    let mut per_id = Vec::with_capacity(reference.len());
    for r in reference.entries() {
        let p = predicted
            .get(&r.id)
            .ok_or_else(|| Error::input(format!("landmark '{}' missing from prediction", r.id)))?;
        let error = (0..3).map(|d| (p.position[d] - r.position[d]).powi(2)).sum::<f64>().sqrt();
        per_id.push(LandmarkResidual {
            id: r.id.clone(),
            region: r.region,
            error,
        });
    }
    Ok(LandmarkReport {
        near_mean: mean(per_id.iter().filter(|e| e.region == Region::Near).map(|e| e.error)),
        far_mean: mean(per_id.iter().filter(|e| e.region == Region::Far).map(|e| e.error)),
        mean: mean(per_id.iter().map(|e| e.error)),
        per_id,
    })
}

/// Contents of `metrics.json`. Field order is the serialization order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub regions: Option<RegionStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<LandmarkReport>,
    pub inputs: BTreeMap<String, String>,
}

impl MetricsReport {
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path)
    }
}

/// Pretty JSON with a trailing newline; struct fields keep declaration order.
pub fn write_json<S: Serialize>(value: &S, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// SHA-256 of a file; for image headers the raw payload named next to it
/// (`<file>.raw`) is hashed too.
pub fn hash_input(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let mut h = Sha256::new();
    h.update(fs::read(path).map_err(|e| Error::io(path, e))?);
    let raw = path.with_file_name(format!(
        "{}.raw",
        path.file_name().and_then(|n| n.to_str()).unwrap_or_default()
    ));
    if raw.is_file() {
        h.update(fs::read(&raw).map_err(|e| Error::io(&raw, e))?);
    }
    Ok(hex::encode(h.finalize()))
}
