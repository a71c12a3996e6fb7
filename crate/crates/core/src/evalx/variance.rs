//! Spread of teacher denoisings of one input at high noise, at full and at
//! reduced resolution.

use crate::diffusion::{ddim_denoise, perturb, NoiseSchedule};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::student::ProjectionCodec;
use crate::teacher::{guided_eps, Condition, Denoiser};

use super::pairwise_ssim;

/// Smallest set size accepted by [`variance_check`].
pub const MIN_SAMPLES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceReport {
    pub t: usize,
    pub samples: usize,
    pub ssim_full: f64,
    pub ssim_low: f64,
}

/// Denoises `reference` once per noise vector and decodes each estimate to
/// a clamped density profile.
#[allow(clippy::too_many_arguments)]
pub fn denoised_set(
    teacher: &dyn Denoiser,
    cond: Condition,
    guidance: f64,
    reference: &[f64],
    t: usize,
    noises: &[Vec<f64>],
    steps: usize,
    codec: &ProjectionCodec,
    sched: &NoiseSchedule,
) -> Result<Vec<Grid>> {
    noises
        .iter()
        .map(|noise| {
            let xt = perturb(reference, t, noise, sched)?;
            let eps = |x: &[f64], s: usize| guided_eps(teacher, x, s, &cond, guidance);
            let x0 = ddim_denoise(&xt, eps, steps, sched)?;
            Ok(Grid::row(codec.decode(&x0.data)).clamp01())
        })
        .collect()
}

/// Pairwise SSIM of the denoised set before and after box-averaging by
/// `downsample`. One noise vector per sample.
#[allow(clippy::too_many_arguments)]
pub fn variance_check(
    teacher: &dyn Denoiser,
    cond: Condition,
    guidance: f64,
    reference: &[f64],
    t: usize,
    noises: &[Vec<f64>],
    downsample: usize,
    steps: usize,
    codec: &ProjectionCodec,
    sched: &NoiseSchedule,
) -> Result<VarianceReport> {
    if noises.len() < MIN_SAMPLES {
        return Err(Error::invalid(format!("variance check needs at least {MIN_SAMPLES} samples")));
    }
    let full = denoised_set(teacher, cond, guidance, reference, t, noises, steps, codec, sched)?;
    let low = full
        .iter()
        .map(|g| g.downsample(downsample))
        .collect::<Result<Vec<_>>>()?;
    Ok(VarianceReport {
        t,
        samples: noises.len(),
        ssim_full: pairwise_ssim(&full)?,
        ssim_low: pairwise_ssim(&low)?,
    })
}
