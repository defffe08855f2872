//! Registration and reconstruction energies.
//!
//! Registration: `E(m₀) = ⟨m₀, K m₀⟩ + σ⁻² (1 − LNCC(I_R ∘ Φ⁻¹, A))` with
//! `Φ⁻¹` the semi-Lagrangian flow of `v₀ = K m₀`. The gradient is the exact
//! gradient of this discrete pipeline, obtained by reverse accumulation
//! through the warp, every integration step and the smoothing operator.
//!
//! Reconstruction: `L_rec = MSE_{S_W=0}(I_RW, I_TW) + MSE_{S_W=1}(I_RW, A)`,
//! minimised in closed form by [`reconstruct_atlas_space`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::distance_transform;
use crate::flow::{self, DispMap};
use crate::kernel::{self, MultiGaussKernel};
use crate::scalar::Real;
use crate::similarity::{self, LnccParams, MaskMode};
use crate::volume::{Field3, Mask, Volume};

/// Parameters of the registration energy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyConfig {
    pub kernel: MultiGaussKernel,
    /// Balances regularity against similarity (`1/σ²` weights the latter).
    pub sigma: f64,
    pub lncc: LnccParams,
    pub steps: usize,
    pub mask_mode: MaskMode,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            kernel: MultiGaussKernel::default(),
            sigma: DEFAULT_SIGMA,
            lncc: LnccParams::default(),
            steps: flow::DEFAULT_STEPS,
            mask_mode: MaskMode::ExcludeCenters,
        }
    }
}

/// Default similarity weight, see [`EnergyConfig::sigma`].
///
/// The regulariser is an integral over mm³ while the similarity is a mean,
/// so σ has to absorb the domain volume.
pub const DEFAULT_SIGMA: f64 = 1e-4;

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::input("sigma must be positive"));
        }
        if self.steps == 0 {
            return Err(Error::input("steps must be >= 1"));
        }
        self.lncc.validate()
    }
}

/// Which voxels may serve as LNCC window centres.
#[derive(Clone, Copy, Debug)]
pub enum SimilarityMask<'a> {
    All,
    /// Fixed validity mask on the atlas grid.
    Fixed(&'a Mask),
    /// Cost-function masking: the complement of the lesion warped by the
    /// current `Φ⁻¹`, recomputed at every evaluation.
    ExcludeWarpedLesion { lesion: &'a Mask, threshold: f64 },
}

/// Images entering the registration energy, all on the atlas grid.
#[derive(Clone, Copy, Debug)]
pub struct RegistrationInputs<'a, T> {
    /// Image being warped (the reconstruction `I_R`, or `I_T` for plain
    /// registration).
    pub source: &'a Volume<T>,
    pub atlas: &'a Volume<T>,
    /// Initial condition of the flow (identity when `None`).
    pub init: Option<&'a DispMap<T>>,
    pub mask: SimilarityMask<'a>,
}

#[derive(Clone, Debug)]
pub struct RegEnergyReport<T = f64> {
    pub total: f64,
    /// `⟨m₀, v₀⟩` (mm³-weighted).
    pub reg_term: f64,
    /// `σ⁻² (1 − LNCC)`.
    pub sim_term: f64,
    pub grad_m0: Field3<T>,
}

/// Energy value and the quantities computed along the way.
#[derive(Clone, Debug)]
pub struct RegEvaluation<T = f64> {
    pub total: f64,
    pub reg_term: f64,
    pub sim_term: f64,
    pub lncc: Option<f64>,
    pub phi_inv: DispMap<T>,
    pub warped: Volume<T>,
}

fn check_inputs<T: Real>(m0: &Field3<T>, inp: &RegistrationInputs<'_, T>, cfg: &EnergyConfig) -> Result<()> {
    cfg.validate()?;
    let g = m0.grid();
    g.ensure_same(inp.source.grid(), "momentum vs source image")?;
    g.ensure_same(inp.atlas.grid(), "momentum vs atlas")?;
    if let Some(m) = inp.init {
        g.ensure_same(m.grid(), "momentum vs initial map")?;
    }
    match inp.mask {
        SimilarityMask::All => {}
        SimilarityMask::Fixed(m) => g.ensure_same(m.grid(), "momentum vs similarity mask")?,
        SimilarityMask::ExcludeWarpedLesion { lesion, .. } => g.ensure_same(lesion.grid(), "momentum vs lesion mask")?,
    }
    Ok(())
}

fn valid_mask<T: Real>(mask: SimilarityMask<'_>, phi: &DispMap<T>) -> Result<Option<Mask>> {
    Ok(match mask {
        SimilarityMask::All => None,
        SimilarityMask::Fixed(m) => Some(m.clone()),
        SimilarityMask::ExcludeWarpedLesion { lesion, threshold } => {
            Some(flow::warp_mask(lesion, phi, threshold)?.complement())
        }
    })
}

fn finite(name: &str, x: f64, diag: impl FnOnce() -> String) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Numeric(format!("{name} is not finite ({})", diag())))
    }
}

/// Evaluates the registration energy without its gradient.
pub fn evaluate_registration<T: Real>(
    m0: &Field3<T>,
    inp: &RegistrationInputs<'_, T>,
    cfg: &EnergyConfig,
) -> Result<RegEvaluation<T>> {
    check_inputs(m0, inp, cfg)?;
    let v0 = kernel::smooth(m0, &cfg.kernel);
    let reg_term = kernel::reg_inner(m0, &v0)?;
    let phi_inv = flow::integrate_svf(&v0, cfg.steps, inp.init)?;
    let warped = flow::warp_image(inp.source, &phi_inv);
    let valid = valid_mask(inp.mask, &phi_inv)?;
    let lncc = match &valid {
        Some(m) if m.is_empty() => None,
        _ => Some(similarity::lncc_with_mode(&warped, inp.atlas, &cfg.lncc, valid.as_ref(), cfg.mask_mode)?),
    };
    let sim_term = lncc.map_or(0.0, |c| (1.0 - c) / (cfg.sigma * cfg.sigma));
    let diag = || format!("max|m0| = {:.3e}, max|v0| = {:.3e}", m0.max_abs(), v0.max_abs());
    let reg_term = finite("regularisation term", reg_term, diag)?;
    let sim_term = finite("similarity term", sim_term, diag)?;
    Ok(RegEvaluation {
        total: reg_term + sim_term,
        reg_term,
        sim_term,
        lncc,
        phi_inv,
        warped,
    })
}

/// Registration energy and its exact gradient with respect to `m₀`.
pub fn registration_energy<T: Real>(
    m0: &Field3<T>,
    inp: &RegistrationInputs<'_, T>,
    cfg: &EnergyConfig,
) -> Result<RegEnergyReport<T>> {
    check_inputs(m0, inp, cfg)?;
    let grid = m0.grid();
    let vol = T::of(grid.voxel_volume());
    let v0 = kernel::smooth(m0, &cfg.kernel);
    let reg_term = kernel::reg_inner(m0, &v0)?;
    let tape = flow::integrate_svf_tape(&v0, cfg.steps, inp.init)?;
    let phi_inv = DispMap::new(tape[cfg.steps].clone());
    let warped = flow::warp_image(inp.source, &phi_inv);
    let valid = valid_mask(inp.mask, &phi_inv)?;

    let (sim_term, g_v) = match &valid {
        Some(m) if m.is_empty() => (0.0, None),
        _ => {
            let (c, dc) = similarity::lncc_grad(&warped, inp.atlas, &cfg.lncc, valid.as_ref(), cfg.mask_mode)?;
            let w = 1.0 / (cfg.sigma * cfg.sigma);
            let g_img: Vec<T> = dc.iter().map(|&d| T::of(-w * d)).collect();
            let g_u = flow::warp_image_backward(inp.source, &phi_inv, &g_img);
            ((1.0 - c) * w, Some(flow::integrate_svf_backward(&v0, &tape, g_u)))
        }
    };

    // d⟨m, K m⟩ = (K + Kᵀ) m, times the voxel volume; Kᵀ is shared with
    // the similarity term: grad = vol·K m + Kᵀ(vol·m + ∂E/∂v)
    let mut pre = m0.scaled(vol);
    if let Some(gv) = &g_v {
        pre = pre.axpy(T::one(), gv);
    }
    let grad = v0.scaled(vol).axpy(T::one(), &kernel::smooth_adjoint(&pre, &cfg.kernel));
    let diag = || format!("max|m0| = {:.3e}, max|v0| = {:.3e}", m0.max_abs(), v0.max_abs());
    let reg_term = finite("regularisation term", reg_term, diag)?;
    let sim_term = finite("similarity term", sim_term, diag)?;
    if grad.data().iter().any(|g| g.iter().any(|c| !c.is_finite())) {
        return Err(Error::Numeric(format!("non-finite gradient ({})", diag())));
    }
    Ok(RegEnergyReport {
        total: reg_term + sim_term,
        reg_term,
        sim_term,
        grad_m0: grad,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecEnergyReport {
    pub total: f64,
    pub normal_term: f64,
    pub tumor_term: f64,
}

/// `MSE_{Ω_N}(I_RW, I_TW) + MSE_{Ω_T}(I_RW, A)`; a term over an empty domain is 0.
pub fn reconstruction_energy<T: Real>(
    irw: &Volume<T>,
    itw: &Volume<T>,
    atlas: &Volume<T>,
    sw: &Mask,
) -> Result<RecEnergyReport> {
    let g = irw.grid();
    g.ensure_same(itw.grid(), "I_RW vs I_TW")?;
    g.ensure_same(atlas.grid(), "I_RW vs atlas")?;
    g.ensure_same(sw.grid(), "I_RW vs warped mask")?;
    let normal = sw.complement();
    let normal_term = if normal.is_empty() { 0.0 } else { similarity::masked_mse(irw, itw, &normal)? };
    let tumor_term = if sw.is_empty() { 0.0 } else { similarity::masked_mse(irw, atlas, sw)? };
    Ok(RecEnergyReport {
        total: normal_term + tumor_term,
        normal_term,
        tumor_term,
    })
}

/// Blend weight towards the atlas: 1 on the warped lesion, falling linearly
/// to 0 over `feather_mm` outside it (0 everywhere else).
pub fn reconstruction_weights<T: Real>(sw: &Mask, feather_mm: f64) -> Result<Volume<T>> {
    if !(feather_mm >= 0.0) || !feather_mm.is_finite() {
        return Err(Error::input("feather width must be finite and >= 0"));
    }
    if feather_mm == 0.0 || sw.is_empty() {
        return Ok(sw.to_volume());
    }
    let d = distance_transform::<f64>(sw);
    Ok(Volume::from_vec_unchecked(
        sw.grid().clone(),
        d.data()
            .iter()
            .map(|&x| T::of((1.0 - x / feather_mm).clamp(0.0, 1.0)))
            .collect(),
    ))
}

fn blend<T: Real>(base: &Volume<T>, fill: &Volume<T>, alpha: &Volume<T>) -> Volume<T> {
    let data = base
        .data()
        .iter()
        .zip(fill.data())
        .zip(alpha.data())
        .map(|((&b, &f), &a)| {
            if a == T::zero() {
                b
            } else if a == T::one() {
                f
            } else {
                a * f + (T::one() - a) * b
            }
        })
        .collect();
    Volume::from_vec_unchecked(base.grid().clone(), data)
}

/// Minimiser of the reconstruction energy in atlas space: `I_TW` on the
/// normal region, the atlas on the warped lesion, optionally feathered
/// across a band of `feather_mm` around the lesion.
pub fn reconstruct_atlas_space<T: Real>(
    itw: &Volume<T>,
    atlas: &Volume<T>,
    sw: &Mask,
    feather_mm: f64,
) -> Result<Volume<T>> {
    itw.grid().ensure_same(atlas.grid(), "I_TW vs atlas")?;
    itw.grid().ensure_same(sw.grid(), "I_TW vs warped mask")?;
    let alpha = reconstruction_weights::<T>(sw, feather_mm)?;
    Ok(blend(itw, atlas, &alpha))
}

/// Subject-space reconstruction `I_R = I_RW ∘ Φ` from the forward map.
pub fn pullback_reconstruction<T: Real>(irw: &Volume<T>, phi_fwd: &DispMap<T>) -> Volume<T> {
    flow::warp_image(irw, phi_fwd)
}

/// Subject-space reconstruction that keeps `I_T` untouched wherever the
/// pulled-back blend weight is zero:
/// `I_R = (1 − α∘Φ) I_T + (α∘Φ) (A∘Φ)`.
///
/// Equal to [`pullback_reconstruction`] up to the resampling of `I_T`
/// through `Φ⁻¹∘Φ`; with an empty lesion it returns `I_T` exactly.
pub fn pullback_blend<T: Real>(
    subject: &Volume<T>,
    atlas: &Volume<T>,
    alpha: &Volume<T>,
    phi_fwd: &DispMap<T>,
) -> Volume<T> {
    if alpha.data().iter().all(|&a| a == T::zero()) {
        return subject.clone();
    }
    let alpha_s = flow::warp_image(alpha, phi_fwd);
    let atlas_s = flow::warp_image(atlas, phi_fwd);
    blend(subject, &atlas_s, &alpha_s)
}
