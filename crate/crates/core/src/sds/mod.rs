//! Score-distillation gradients and the auxiliary losses.
//!
//! The distillation gradient comes in two algebraically equal forms: the
//! noise residual `w(t) (eps_hat - eps)` and the reconstruction residual
//! `w_bar(t) alpha_t (x - x0_hat)`. The second form is what allows a
//! multi-step denoised `x0_hat` to stand in for the single-step one at small
//! time steps.

mod dtc;
mod losses;

pub use dtc::{dtc_grad, observe, observe_adjoint, DtcOutput, DtcRequest, Observation, Teachers};
pub use losses::{
    laplacian_loss, laplacian_loss_grad, normal_smooth_loss, pearson, rec_loss, RecLoss, RecWeights,
    SmoothLoss, NORMAL_EPS,
};

use std::str::FromStr;

use crate::diffusion::NoiseSchedule;
use crate::error::{check_len, Error, Result};

/// Time weighting `w(t)` of the distillation gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightKind {
    /// `w(t) = sigma_t^2`, so `w_bar(t) = sigma_t`.
    SigmaSq,
    /// `w(t) = 1`, so `w_bar(t) = 1 / sigma_t`.
    Constant,
}

impl FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma_sq" => Ok(Self::SigmaSq),
            "constant" => Ok(Self::Constant),
            _ => Err(Error::invalid(format!("unknown weight kind `{s}`"))),
        }
    }
}

impl std::fmt::Display for WeightKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::SigmaSq => "sigma_sq",
            Self::Constant => "constant",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdsConfig {
    pub weight: WeightKind,
    /// Drop the `alpha_t` factor from the reconstruction form.
    pub alpha_free: bool,
    pub cfg_scale_coarse: f64,
    pub cfg_scale_fine: f64,
    /// Below this step the denoised estimate comes from a DDIM chain.
    pub multi_step_switch_t: usize,
    pub multi_step_count: usize,
}

impl Default for SdsConfig {
    fn default() -> Self {
        Self {
            weight: WeightKind::SigmaSq,
            alpha_free: false,
            cfg_scale_coarse: 5.0,
            cfg_scale_fine: 25.0,
            multi_step_switch_t: 200,
            multi_step_count: 4,
        }
    }
}

impl SdsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cfg_scale_coarse >= 0.0 && self.cfg_scale_fine >= 0.0) {
            return Err(Error::invalid("guidance scales must be nonnegative"));
        }
        if self.multi_step_count < 1 {
            return Err(Error::invalid("multi_step_count must be at least 1"));
        }
        Ok(())
    }

    pub fn omega(&self, t: usize, sched: &NoiseSchedule) -> f64 {
        match self.weight {
            WeightKind::SigmaSq => sched.sigma(t).powi(2),
            WeightKind::Constant => 1.0,
        }
    }

    /// `w_bar(t) = w(t) / sigma_t`.
    pub fn omega_bar(&self, t: usize, sched: &NoiseSchedule) -> Result<f64> {
        match self.weight {
            WeightKind::SigmaSq => Ok(sched.sigma(t)),
            WeightKind::Constant => {
                let s = sched.sigma(t);
                if s == 0.0 {
                    Err(Error::SingularSchedule { t })
                } else {
                    Ok(1.0 / s)
                }
            }
        }
    }
}

/// Noise-residual form: `w(t) (eps_hat - noise)`.
pub fn sds_grad_eps(
    render: &[f64],
    eps_hat: &[f64],
    noise: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    cfg: &SdsConfig,
) -> Result<Vec<f64>> {
    check_len(render.len(), eps_hat.len())?;
    check_len(render.len(), noise.len())?;
    let w = cfg.omega(t, sched);
    Ok(eps_hat.iter().zip(noise).map(|(e, n)| w * (e - n)).collect())
}

/// Reconstruction form: `w_bar(t) alpha_t (render - x0_hat)`, or without
/// `alpha_t` when `cfg.alpha_free` is set.
pub fn sds_grad_x0(
    render: &[f64],
    x0_hat: &[f64],
    t: usize,
    sched: &NoiseSchedule,
    cfg: &SdsConfig,
) -> Result<Vec<f64>> {
    check_len(render.len(), x0_hat.len())?;
    let scale = cfg.omega_bar(t, sched)? * if cfg.alpha_free { 1.0 } else { sched.alpha(t) };
    Ok(render.iter().zip(x0_hat).map(|(r, x)| scale * (r - x)).collect())
}
