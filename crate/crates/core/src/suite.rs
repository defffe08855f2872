//! Phantom experiment: every case registered in each mode, scored against
//! its ground truth, with per-case metrics and an aggregate over cases.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evalkit::{self, hash_input, write_json, LandmarkReport, MetricsReport, RegionLabel, RegionStats};
use crate::flow::{self, DispMap};
use crate::solver::{self, Mode, SolverConfig};
use crate::synth::{self, PhantomCase};

/// Provenance written as `manifest.json` next to every output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_sha256: Option<String>,
    pub inputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command,
            config_sha256: None,
            inputs: BTreeMap::new(),
        }
    }

    pub fn with_config(mut self, cfg: &SolverConfig) -> Self {
        self.config_sha256 = Some(hex::encode(Sha256::digest(cfg.to_toml().as_bytes())));
        self
    }

    /// Records the hash of `path` under `key`.
    pub fn add_input(&mut self, key: impl Into<String>, path: impl AsRef<Path>) -> Result<()> {
        self.inputs.insert(key.into(), hash_input(path)?);
        Ok(())
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        write_json(self, dir.as_ref().join("manifest.json"))
    }
}

#[derive(Clone, Debug)]
pub struct SuiteOptions {
    pub modes: Vec<Mode>,
    pub threshold_mm: f64,
    /// Also write maps and images of every registration.
    pub write_results: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            modes: Mode::ALL.to_vec(),
            threshold_mm: evalkit::DEFAULT_THRESHOLD_MM,
            write_results: true,
        }
    }
}

/// Scores of one registration (or of the identity, for the baseline).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseScore {
    pub regions: RegionStats,
    pub landmarks: LandmarkReport,
    pub min_jac_det: f64,
}

/// Scores `phi_inv` (atlas → subject) against the case's ground truth.
pub fn score_case(case: &PhantomCase, phi_inv: &DispMap<f64>, threshold_mm: f64) -> Result<CaseScore> {
    let tumour = flow::warp_mask(&case.lesion, &case.phi_gt, 0.5)?;
    let part = evalkit::partition_regions(&tumour, threshold_mm)?;
    let predicted = flow::transform_points(&case.landmarks_atlas, phi_inv).points;
    Ok(CaseScore {
        regions: evalkit::deformation_difference(phi_inv, &case.phi_gt, &part)?,
        landmarks: evalkit::landmark_error(&predicted, &case.landmarks_subject)?,
        min_jac_det: flow::min_jacobian_det(phi_inv),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionAggregate {
    /// Median over cases of the per-case mean error.
    pub median_of_means: Option<f64>,
    pub per_case: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeAggregate {
    pub tumor: RegionAggregate,
    pub near: RegionAggregate,
    pub far: RegionAggregate,
    pub landmark_near: RegionAggregate,
    pub landmark_far: RegionAggregate,
    pub min_jac_det: f64,
}

/// Contents of `aggregate.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub cases: Vec<String>,
    /// Keyed by `baseline` (identity map) and the mode names.
    pub modes: BTreeMap<String, ModeAggregate>,
}

impl SuiteReport {
    pub fn tumor_median(&self, key: &str) -> Option<f64> {
        self.modes.get(key).and_then(|m| m.tumor.median_of_means)
    }

    pub fn region_median(&self, key: &str, label: RegionLabel) -> Option<f64> {
        let m = self.modes.get(key)?;
        match label {
            RegionLabel::Tumor => m.tumor.median_of_means,
            RegionLabel::Near => m.near.median_of_means,
            RegionLabel::Far => m.far.median_of_means,
        }
    }
}

fn aggregate(values: Vec<Option<f64>>) -> RegionAggregate {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    RegionAggregate {
        median_of_means: evalkit::Summary::of(&present).median,
        per_case: values,
    }
}

fn mode_aggregate(scores: &[CaseScore]) -> ModeAggregate {
    let pick = |f: &dyn Fn(&CaseScore) -> Option<f64>| aggregate(scores.iter().map(f).collect());
    ModeAggregate {
        tumor: pick(&|s| s.regions.tumor.mean),
        near: pick(&|s| s.regions.near.mean),
        far: pick(&|s| s.regions.far.mean),
        landmark_near: pick(&|s| s.landmarks.near_mean),
        landmark_far: pick(&|s| s.landmarks.far_mean),
        min_jac_det: scores.iter().map(|s| s.min_jac_det).fold(f64::INFINITY, f64::min),
    }
}

fn metrics_for(score: &CaseScore, inputs: &BTreeMap<String, String>) -> MetricsReport {
    MetricsReport {
        regions: Some(score.regions.clone()),
        landmarks: Some(score.landmarks.clone()),
        inputs: inputs.clone(),
    }
}

const CASE_FILES: [&str; 4] = ["atlas.vol", "subject.vol", "phi_gt.fld", "lesion.msk"];

/// Runs every case directory under `cases` (sorted) and writes
/// `<out>/<case>/<mode>/metrics.json`, `<out>/<case>/baseline/metrics.json`,
/// `<out>/aggregate.json` and `<out>/manifest.json`.
pub fn run_suite(
    cases: impl AsRef<Path>,
    cfg: &SolverConfig,
    opts: &SuiteOptions,
    out: impl AsRef<Path>,
    command: Vec<String>,
) -> Result<SuiteReport> {
    cfg.validate()?;
    let out = out.as_ref();
    let dirs = synth::list_cases(cases.as_ref())?;
    if dirs.is_empty() {
        return Err(Error::input(format!("no cases under {}", cases.as_ref().display())));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut manifest = Manifest::new(command).with_config(cfg);
    let mut names = Vec::new();
    let mut scores: BTreeMap<String, Vec<CaseScore>> = BTreeMap::new();
    for dir in &dirs {
        let name = case_name(dir);
        let case = synth::read_case(dir)?;
        let mut inputs = BTreeMap::new();
        for f in CASE_FILES {
            let h = hash_input(dir.join(f))?;
            manifest.inputs.insert(format!("{name}/{f}"), h.clone());
            inputs.insert(f.to_string(), h);
        }
        let case_out = out.join(&name);
        let base = score_case(&case, &DispMap::identity(case.atlas.grid().clone()), opts.threshold_mm)?;
        write_case_metrics(&case_out.join("baseline"), &metrics_for(&base, &inputs))?;
        scores.entry("baseline".into()).or_default().push(base);
        for &mode in &opts.modes {
            let mcfg = SolverConfig { mode, ..cfg.clone() };
            let lesion = (mode != Mode::Plain).then_some(&case.lesion);
            let res = solver::register(&case.subject, &case.atlas, lesion, &mcfg)
                .map_err(|e| annotate(e, &name, mode))?;
            let score = score_case(&case, &res.phi_inv, opts.threshold_mm)?;
            let dir = case_out.join(mode.as_str());
            if opts.write_results {
                res.write(&dir, &mcfg, None)?;
            }
            write_case_metrics(&dir, &metrics_for(&score, &inputs))?;
            scores.entry(mode.as_str().into()).or_default().push(score);
        }
        names.push(name);
    }
    let report = SuiteReport {
        cases: names,
        modes: scores.iter().map(|(k, v)| (k.clone(), mode_aggregate(v))).collect(),
    };
    write_json(&report, out.join("aggregate.json"))?;
    manifest.write(out)?;
    Ok(report)
}

fn annotate(e: Error, case: &str, mode: Mode) -> Error {
    match e {
        Error::Solver { msg, trace } => Error::Solver {
            msg: format!("{case} ({mode}): {msg}"),
            trace,
        },
        e => e,
    }
}

fn write_case_metrics(dir: &Path, m: &MetricsReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    m.write(dir.join("metrics.json"))
}

fn case_name(dir: &Path) -> String {
    dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned())
}

/// Generates `count` random cases (`case_000`, ...) under `out`.
pub fn generate_batch(base: &synth::PhantomSpec, seed: u64, count: usize, out: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out = out.as_ref();
    (0..count)
        .map(|i| {
            let spec = synth::random_spec(base, seed, i)?;
            let dir = out.join(format!("case_{i:03}"));
            synth::write_case(&synth::make_phantom(&spec)?, &dir)?;
            Ok(dir)
        })
        .collect()
}
