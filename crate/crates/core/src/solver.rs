//! Optimisation drivers: affine pre-alignment and multi-resolution
//! registration in plain, cost-function-masked and joint modes.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::energy::{self, EnergyConfig, RegistrationInputs, SimilarityMask};
use crate::error::{Error, Result};
use crate::evalkit::write_json;
use crate::flow::{self, DispMap};
use crate::kernel::{self, MultiGaussKernel};
use crate::scalar::Real;
use crate::similarity::{self, LnccParams, MaskMode};
use crate::volume::{self, Field3, Grid, Mask, Volume};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Plain,
    Cfm,
    Joint,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Plain, Mode::Cfm, Mode::Joint];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Plain => "plain",
            Mode::Cfm => "cfm",
            Mode::Joint => "joint",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Mode::Plain),
            "cfm" => Ok(Mode::Cfm),
            "joint" => Ok(Mode::Joint),
            _ => Err(Error::input(format!("unknown mode {s:?} (plain, cfm, joint)"))),
        }
    }
}

/// Solver parameters; every key is optional in the TOML config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub kernel: MultiGaussKernel,
    pub sigma: f64,
    pub lncc: LnccParams,
    pub mask_mode: MaskMode,
    pub steps: usize,
    pub levels: usize,
    pub iters_per_level: Vec<usize>,
    pub step_init: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    pub max_backtracks: usize,
    pub joint_outer_iters: usize,
    pub rec_feather_mm: f64,
    /// Weight of the reconstruction loss in a simultaneous scheme. Unused by
    /// the alternating scheme implemented here; kept so configs can carry it.
    pub rec_weight: f64,
    pub mode: Mode,
    pub convergence_tol: f64,
    /// Threshold used when warping the lesion mask.
    pub mask_threshold: f64,
    /// Run [`affine_register`] first and register the resampled image.
    pub affine_init: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let e = EnergyConfig::default();
        Self {
            kernel: e.kernel,
            sigma: e.sigma,
            lncc: e.lncc,
            mask_mode: e.mask_mode,
            steps: e.steps,
            levels: 3,
            iters_per_level: vec![100, 60, 30],
            step_init: 0.5,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            max_backtracks: 20,
            joint_outer_iters: 4,
            rec_feather_mm: 3.0,
            rec_weight: 1.0,
            mode: Mode::Plain,
            convergence_tol: 1e-6,
            mask_threshold: 0.5,
            affine_init: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.energy().validate()?;
        let bad = |m: &str| Err(Error::input(m.to_string()));
        if self.levels == 0 {
            return bad("levels must be >= 1");
        }
        if self.iters_per_level.len() != self.levels {
            return bad("iters_per_level needs one entry per level");
        }
        if self.iters_per_level.contains(&0) {
            return bad("iters_per_level entries must be >= 1");
        }
        if !(self.step_init > 0.0) || !self.step_init.is_finite() {
            return bad("step_init must be positive");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return bad("armijo_shrink must lie in (0, 1)");
        }
        if self.joint_outer_iters == 0 {
            return bad("joint_outer_iters must be >= 1");
        }
        if !(self.rec_feather_mm >= 0.0) || !self.rec_feather_mm.is_finite() {
            return bad("rec_feather_mm must be >= 0");
        }
        if !(self.convergence_tol >= 0.0) {
            return bad("convergence_tol must be >= 0");
        }
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return bad("mask_threshold must lie in (0, 1)");
        }
        Ok(())
    }

    pub fn energy(&self) -> EnergyConfig {
        EnergyConfig {
            kernel: self.kernel.clone(),
            sigma: self.sigma,
            lncc: self.lncc,
            steps: self.steps,
            mask_mode: self.mask_mode,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::input(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str::<Self>(&text)
            .map_err(|e| Error::format(path, e.to_string()))
            .and_then(|c| c.validate().map(|_| c))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    fn level_factor(&self, level: usize) -> usize {
        1 << (self.levels - 1 - level)
    }
}

/// One accepted iterate (or reconstruction update) of the optimiser.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    /// Optimisation block; joint mode starts a new block after every
    /// reconstruction update, since that changes the objective.
    pub block: usize,
    pub level: usize,
    pub total: f64,
    pub reg: f64,
    pub sim: f64,
    pub rec: f64,
}

#[derive(Clone, Debug)]
pub struct RegistrationResult<T = f64> {
    pub mode: Mode,
    pub m0: Field3<T>,
    pub phi_inv: DispMap<T>,
    pub phi_fwd: DispMap<T>,
    /// Quasi-normal image in atlas space (the warped subject outside joint mode).
    pub irw: Volume<T>,
    /// Quasi-normal image in subject space (the subject outside joint mode).
    pub ir: Volume<T>,
    pub energy_trace: Vec<TraceEntry>,
    pub final_total: f64,
    pub final_reg: f64,
    pub final_sim: f64,
    pub final_rec: f64,
    pub min_jac_det: f64,
    pub outer_iters: usize,
}

/// Search-space abstraction for the descent loop.
trait Point: Clone {
    fn max_abs(&self) -> f64;
    fn norm_sq(&self) -> f64;
    fn step(&self, s: f64, dir: &Self) -> Self;
}

impl<T: Real> Point for Field3<T> {
    fn max_abs(&self) -> f64 {
        Field3::max_abs(self)
    }
    fn norm_sq(&self) -> f64 {
        kernel::field_dot(self, self)
    }
    fn step(&self, s: f64, dir: &Self) -> Self {
        self.axpy(T::of(s), dir)
    }
}

impl Point for Vec<f64> {
    fn max_abs(&self) -> f64 {
        self.iter().fold(0.0, |a, x| a.max(x.abs()))
    }
    fn norm_sq(&self) -> f64 {
        self.iter().map(|x| x * x).sum()
    }
    fn step(&self, s: f64, dir: &Self) -> Self {
        self.iter().zip(dir).map(|(a, b)| a + s * b).collect()
    }
}

struct Eval<P> {
    total: f64,
    reg: f64,
    sim: f64,
    grad: P,
}

/// Gradient descent with steps normalised by `‖g‖∞` and Armijo
/// backtracking; the step grows again after a move accepted without
/// backtracking.
fn descend<P: Point>(
    x0: P,
    iters: usize,
    cfg: &SolverConfig,
    mut eval: impl FnMut(&P) -> Result<Eval<P>>,
    mut on_accept: impl FnMut(&Eval<P>),
) -> Result<(P, Eval<P>)> {
    let mut x = x0;
    let mut cur = eval(&x)?;
    on_accept(&cur);
    let mut alpha = cfg.step_init;
    let alpha_max = 8.0 * cfg.step_init;
    for _ in 0..iters {
        let gmax = cur.grad.max_abs();
        if gmax == 0.0 {
            break;
        }
        let slope = cur.grad.norm_sq() / gmax;
        let mut accepted = None;
        for trial in 0..=cfg.max_backtracks {
            let cand = x.step(-alpha / gmax, &cur.grad);
            match eval(&cand) {
                Ok(e) if e.total <= cur.total - cfg.armijo_c * alpha * slope => {
                    accepted = Some((cand, e, trial == 0));
                    break;
                }
                Ok(_) | Err(Error::Numeric(_)) => alpha *= cfg.armijo_shrink,
                Err(e) => return Err(e),
            }
        }
        let Some((nx, ne, first)) = accepted else { break };
        let rel = (cur.total - ne.total) / cur.total.abs().max(f64::MIN_POSITIVE);
        x = nx;
        cur = ne;
        on_accept(&cur);
        if first {
            alpha = (alpha / cfg.armijo_shrink.sqrt()).min(alpha_max);
        }
        if rel < cfg.convergence_tol {
            break;
        }
    }
    Ok((x, cur))
}

fn solver_error(msg: impl Into<String>, trace: &[TraceEntry]) -> Error {
    Error::Solver {
        msg: msg.into(),
        trace: trace
            .iter()
            .map(|t| format!("iter {} level {}: total {:e} reg {:e} sim {:e}", t.iter, t.level, t.total, t.reg, t.sim))
            .collect(),
    }
}

/// Result of the 12-parameter affine alignment `x ↦ A (x − c) + c + t`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AffineTransform {
    pub matrix: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub centre: [f64; 3],
}

impl AffineTransform {
    pub fn identity(centre: [f64; 3]) -> Self {
        Self {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            centre,
        }
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [p[0] - self.centre[0], p[1] - self.centre[1], p[2] - self.centre[2]];
        std::array::from_fn(|r| {
            self.matrix[r][0] * d[0] + self.matrix[r][1] * d[1] + self.matrix[r][2] * d[2] + self.centre[r] + self.translation[r]
        })
    }

    pub fn to_map<T: Real>(&self, grid: &Grid) -> DispMap<T> {
        DispMap::from_affine(grid.clone(), self.matrix, self.translation, self.centre)
    }
}

#[derive(Clone, Debug)]
pub struct AffineResult<T = f64> {
    pub transform: AffineTransform,
    /// Moving image resampled on the fixed grid.
    pub resampled: Volume<T>,
    pub energy: f64,
    pub trace: Vec<f64>,
}

fn grid_centre(g: &Grid) -> [f64; 3] {
    let (lo, hi) = g.bounds();
    std::array::from_fn(|d| 0.5 * (lo[d] + hi[d]))
}

fn half_extent(g: &Grid) -> f64 {
    let (lo, hi) = g.bounds();
    (0..3).map(|d| 0.5 * (hi[d] - lo[d])).fold(0.0, f64::max)
}

fn prefilter(factor: usize, g: &Grid) -> f64 {
    if factor <= 1 {
        0.0
    } else {
        0.5 * factor as f64 * g.spacing().iter().cloned().fold(0.0, f64::max)
    }
}

fn downsample_mask(mask: &Mask, target: &Grid) -> Result<Mask> {
    if mask.grid() == target {
        return Ok(mask.clone());
    }
    // any overlap keeps the coarse voxel, so masking never shrinks
    let v = mask.to_volume::<f64>().resample(target, 0.0)?;
    Ok(Mask::from_fn(target.clone(), {
        let mut it = v.data().iter();
        move |_| *it.next().unwrap() > 0.0
    }))
}

/// Parameters are `[B·R (9 entries), t (3 entries)]` with `A = I + B` and
/// `R` the half extent of the fixed grid, so all twelve are in mm.
fn affine_from_params(p: &[f64], r: f64, centre: [f64; 3]) -> AffineTransform {
    let mut a = AffineTransform::identity(centre);
    for i in 0..3 {
        for j in 0..3 {
            a.matrix[i][j] += p[3 * i + j] / r;
        }
        a.translation[i] = p[9 + i];
    }
    a
}

/// Aligns `moving` to `fixed` by minimising `1 − LNCC(moving ∘ T, fixed)`
/// over a full affine `T`, coarse to fine.
pub fn affine_register<T: Real>(moving: &Volume<T>, fixed: &Volume<T>, cfg: &SolverConfig) -> Result<AffineResult<T>> {
    cfg.validate()?;
    let fg = fixed.grid();
    let centre = grid_centre(fg);
    let r = half_extent(fg);
    let mut p = vec![0.0; 12];
    let mut trace = Vec::new();
    let mut energy = f64::NAN;
    for level in 0..cfg.levels {
        let factor = cfg.level_factor(level);
        let g = fg.downsampled(factor);
        let fixed_l = fixed.resample(&g, prefilter(factor, fg))?;
        let mg = moving.grid().downsampled(factor);
        let moving_l = moving.resample(&mg, prefilter(factor, moving.grid()))?;
        let offsets: Vec<[f64; 3]> = (0..g.len())
            .map(|i| {
                let x = g.point_of(i);
                [x[0] - centre[0], x[1] - centre[1], x[2] - centre[2]]
            })
            .collect();
        let eval = |p: &Vec<f64>| -> Result<Eval<Vec<f64>>> {
            let phi = affine_from_params(p, r, centre).to_map::<T>(&g);
            let warped = flow::warp_image(&moving_l, &phi);
            let (c, dc) = similarity::lncc_grad(&warped, &fixed_l, &cfg.lncc, None, cfg.mask_mode)?;
            let e = 1.0 - c;
            if !e.is_finite() {
                return Err(Error::Numeric("affine energy is not finite".into()));
            }
            let g_img: Vec<T> = dc.iter().map(|&d| T::of(-d)).collect();
            let gu = flow::warp_image_backward(&moving_l, &phi, &g_img);
            let mut grad = vec![0.0; 12];
            for (u, o) in gu.data().iter().zip(&offsets) {
                for i in 0..3 {
                    let gi = u[i].f64();
                    for j in 0..3 {
                        grad[3 * i + j] += gi * o[j] / r;
                    }
                    grad[9 + i] += gi;
                }
            }
            Ok(Eval {
                total: e,
                reg: 0.0,
                sim: e,
                grad,
            })
        };
        let (np, last) = descend(p, cfg.iters_per_level[level], cfg, eval, |e| trace.push(e.total))
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Solver {
                    msg: m,
                    trace: trace.iter().map(|t| format!("{t:e}")).collect(),
                },
                e => e,
            })?;
        p = np;
        energy = last.total;
    }
    let transform = affine_from_params(&p, r, centre);
    let resampled = flow::warp_image(moving, &transform.to_map::<T>(fg));
    Ok(AffineResult {
        transform,
        resampled,
        energy,
        trace,
    })
}

struct LevelData<T> {
    grid: Grid,
    atlas: Volume<T>,
    lesion: Option<Mask>,
}

impl<T: Real> LevelData<T> {
    fn new(atlas: &Volume<T>, lesion: Option<&Mask>, cfg: &SolverConfig, level: usize) -> Result<Self> {
        let factor = cfg.level_factor(level);
        let fg = atlas.grid();
        let grid = fg.downsampled(factor);
        Ok(Self {
            atlas: atlas.resample(&grid, prefilter(factor, fg))?,
            lesion: lesion.map(|m| downsample_mask(m, &grid)).transpose()?,
            grid,
        })
    }

    fn source(&self, img: &Volume<T>, cfg: &SolverConfig, level: usize) -> Result<Volume<T>> {
        let factor = cfg.level_factor(level);
        img.resample(&self.grid, prefilter(factor, img.grid()))
    }
}

struct Registrar<'a, T> {
    cfg: &'a SolverConfig,
    ecfg: EnergyConfig,
    levels: Vec<LevelData<T>>,
    trace: Vec<TraceEntry>,
    iter: usize,
    block: usize,
    rec: f64,
}

impl<T: Real> Registrar<'_, T> {
    /// Minimises the registration energy of `source` over the given levels,
    /// starting from `m0` (resampled as needed).
    fn run(&mut self, source: &Volume<T>, m0: Field3<T>, levels: std::ops::Range<usize>) -> Result<Field3<T>> {
        let mut m = m0;
        for level in levels {
            let ld = &self.levels[level];
            m = m.resample(&ld.grid);
            let src = ld.source(source, self.cfg, level)?;
            let mask = match (self.cfg.mode, &ld.lesion) {
                (Mode::Cfm, Some(l)) => SimilarityMask::ExcludeWarpedLesion {
                    lesion: l,
                    threshold: self.cfg.mask_threshold,
                },
                _ => SimilarityMask::All,
            };
            let inp = RegistrationInputs {
                source: &src,
                atlas: &ld.atlas,
                init: None,
                mask,
            };
            let ecfg = &self.ecfg;
            let eval = |m: &Field3<T>| {
                energy::registration_energy(m, &inp, ecfg).map(|r| Eval {
                    total: r.total,
                    reg: r.reg_term,
                    sim: r.sim_term,
                    grad: r.grad_m0,
                })
            };
            let (trace, iter, rec, block) = (&mut self.trace, &mut self.iter, self.rec, self.block);
            let res = descend(m, self.cfg.iters_per_level[level], self.cfg, eval, |e| {
                trace.push(TraceEntry {
                    iter: *iter,
                    block,
                    level,
                    total: e.total,
                    reg: e.reg,
                    sim: e.sim,
                    rec,
                });
                *iter += 1;
            });
            m = match res {
                Ok((m, _)) => m,
                Err(Error::Numeric(msg)) => return Err(solver_error(msg, &self.trace)),
                Err(e) => return Err(e),
            };
        }
        Ok(m)
    }
}

/// Registers the subject `subject` to `atlas` (both on the atlas grid).
///
/// `phi_inv` maps atlas points to subject points; `phi_fwd` the reverse.
pub fn register<T: Real>(
    subject: &Volume<T>,
    atlas: &Volume<T>,
    lesion: Option<&Mask>,
    cfg: &SolverConfig,
) -> Result<RegistrationResult<T>> {
    cfg.validate()?;
    let grid = atlas.grid().clone();
    if cfg.mode != Mode::Plain && lesion.is_none() {
        return Err(Error::input(format!("mode {} needs a lesion mask", cfg.mode)));
    }
    let aligned;
    let subject = if cfg.affine_init {
        aligned = affine_register(subject, atlas, cfg)?.resampled;
        &aligned
    } else {
        grid.ensure_same(subject.grid(), "subject vs atlas")?;
        subject
    };
    if let Some(l) = lesion {
        grid.ensure_same(l.grid(), "lesion mask vs atlas")?;
    }
    let levels = (0..cfg.levels)
        .map(|l| LevelData::new(atlas, lesion, cfg, l))
        .collect::<Result<Vec<_>>>()?;
    let mut reg = Registrar {
        cfg,
        ecfg: cfg.energy(),
        levels,
        trace: Vec::new(),
        iter: 0,
        block: 0,
        rec: 0.0,
    };
    let finest = cfg.levels - 1;
    let coarse = Field3::zeros(reg.levels[0].grid.clone());
    let mut m0 = reg.run(subject, coarse, 0..cfg.levels)?;
    let mut ir = subject.clone();
    let mut irw = None;
    let mut outer = 1;

    if cfg.mode == Mode::Joint {
        let lesion = lesion.expect("checked above");
        loop {
            let v0 = kernel::smooth(&m0, &cfg.kernel);
            let phi_inv = flow::integrate_svf(&v0, cfg.steps, None)?;
            let phi_fwd = flow::invert_svf(&v0, cfg.steps)?;
            let itw = flow::warp_image(subject, &phi_inv);
            let sw = flow::warp_mask(lesion, &phi_inv, cfg.mask_threshold)?;
            let alpha = energy::reconstruction_weights::<T>(&sw, cfg.rec_feather_mm)?;
            let new_irw = energy::reconstruct_atlas_space(&itw, atlas, &sw, cfg.rec_feather_mm)?;
            reg.rec = energy::reconstruction_energy(&new_irw, &itw, atlas, &sw)?.total;
            let new_ir = energy::pullback_blend(subject, atlas, &alpha, &phi_fwd);
            irw = Some(new_irw);
            if new_ir == ir || outer >= cfg.joint_outer_iters {
                ir = new_ir;
                break;
            }
            ir = new_ir;
            reg.block += 1;
            m0 = reg.run(&ir, m0, finest..cfg.levels)?;
            outer += 1;
        }
    }

    let v0 = kernel::smooth(&m0, &cfg.kernel);
    let phi_inv = flow::integrate_svf(&v0, cfg.steps, None)?;
    let phi_fwd = flow::invert_svf(&v0, cfg.steps)?;
    let irw = irw.unwrap_or_else(|| flow::warp_image(&ir, &phi_inv));
    let last = *reg.trace.last().ok_or_else(|| solver_error("empty trace", &[]))?;
    let min_jac_det = flow::min_jacobian_det(&phi_inv);
    Ok(RegistrationResult {
        mode: cfg.mode,
        m0,
        phi_inv,
        phi_fwd,
        irw,
        ir,
        final_total: last.total,
        final_reg: last.reg,
        final_sim: last.sim,
        final_rec: reg.rec,
        energy_trace: reg.trace,
        min_jac_det,
        outer_iters: outer,
    })
}

/// Post-to-pre point transform through the atlas:
/// `x ↦ Φ_pre⁻¹(Φ_post(x))`.
pub fn compose_pre_atlas_post<T: Real>(pre: &RegistrationResult<T>, post: &RegistrationResult<T>) -> Result<DispMap<T>> {
    pre.phi_inv.grid().ensure_same(post.phi_fwd.grid(), "pre vs post registration")?;
    Ok(flow::compose(&pre.phi_inv, &post.phi_fwd))
}

#[derive(Serialize)]
struct Summary<'a> {
    mode: Mode,
    final_total: f64,
    final_reg: f64,
    final_sim: f64,
    final_rec: f64,
    min_jac_det: f64,
    iterations: usize,
    outer_iters: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_s: Option<f64>,
    config: &'a SolverConfig,
}

impl<T: Real> RegistrationResult<T> {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iter,level,total,reg,sim,rec,block\n");
        for t in &self.energy_trace {
            s.push_str(&format!(
                "{},{},{:?},{:?},{:?},{:?},{}\n",
                t.iter, t.level, t.total, t.reg, t.sim, t.rec, t.block
            ));
        }
        s
    }

    /// Writes the result directory: `m0.fld`, `phi_inv.fld`, `phi_fwd.fld`,
    /// `irw.vol`, `ir.vol`, `trace.csv` and `summary.json`.
    pub fn write(&self, dir: impl AsRef<Path>, cfg: &SolverConfig, wall_time_s: Option<f64>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        volume::write_field(&self.m0, dir.join("m0.fld"))?;
        volume::write_field(self.phi_inv.displacement(), dir.join("phi_inv.fld"))?;
        volume::write_field(self.phi_fwd.displacement(), dir.join("phi_fwd.fld"))?;
        volume::write_scalar(&self.irw, dir.join("irw.vol"))?;
        volume::write_scalar(&self.ir, dir.join("ir.vol"))?;
        let p = dir.join("trace.csv");
        std::fs::write(&p, self.trace_csv()).map_err(|e| Error::io(&p, e))?;
        let summary = Summary {
            mode: self.mode,
            final_total: self.final_total,
            final_reg: self.final_reg,
            final_sim: self.final_sim,
            final_rec: self.final_rec,
            min_jac_det: self.min_jac_det,
            iterations: self.energy_trace.len(),
            outer_iters: self.outer_iters,
            wall_time_s,
            config: cfg,
        };
        write_json(&summary, dir.join("summary.json"))
    }
}
