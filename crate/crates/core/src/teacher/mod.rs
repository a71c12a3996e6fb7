//! Teacher score models.
//!
//! Two kinds of teacher implement [`Denoiser`]: the closed-form
//! [`GaussianMixture`] oracle, which is exact and used to check theory, and
//! the trainable [`DenoiserModel`], a small MLP over 1D projections that can
//! be conditioned on the view angle or on a shape class.

mod gmm;
mod mlp;
mod train;

pub use gmm::{GaussianMixture, GmmOracle};
pub use mlp::{ConditionKind, DenoiserModel, ForwardCache, TIME_FREQUENCIES};
pub use train::{
    denoising_loss, train_step, train_teacher, TeacherDataset, TeacherTrainConfig, TrainExample,
    TrainReport,
};

use std::f64::consts::TAU;

use crate::error::{check_len, Error, Result};

/// What a teacher is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Condition {
    None,
    /// Camera angle in `[0, 2pi)`.
    View { angle: f64 },
    Class { id: usize },
}

impl Condition {
    pub fn view(angle: f64) -> Self {
        Condition::View {
            angle: angle.rem_euclid(TAU),
        }
    }

    pub fn class(id: usize) -> Self {
        Condition::Class { id }
    }
}

/// Anything that predicts the noise in a perturbed sample.
pub trait Denoiser: Send + Sync {
    fn data_dim(&self) -> usize;

    fn predict_eps(&self, x_t: &[f64], t: usize, cond: &Condition) -> Result<Vec<f64>>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn data_dim(&self) -> usize {
        (**self).data_dim()
    }

    fn predict_eps(&self, x_t: &[f64], t: usize, cond: &Condition) -> Result<Vec<f64>> {
        (**self).predict_eps(x_t, t, cond)
    }
}

/// Classifier-free guidance: `u + scale * (c - u)`.
pub fn cfg_combine(eps_uncond: &[f64], eps_cond: &[f64], scale: f64) -> Result<Vec<f64>> {
    check_len(eps_uncond.len(), eps_cond.len())?;
    if !(scale >= 0.0) {
        return Err(Error::invalid(format!("guidance scale must be >= 0, got {scale}")));
    }
    Ok(eps_uncond
        .iter()
        .zip(eps_cond)
        .map(|(u, c)| u + scale * (c - u))
        .collect())
}

/// Guided epsilon prediction. A scale of exactly 1 or an unconditional query
/// skips the second network evaluation.
pub fn guided_eps(
    teacher: &dyn Denoiser,
    x_t: &[f64],
    t: usize,
    cond: &Condition,
    scale: f64,
) -> Result<Vec<f64>> {
    if scale == 1.0 || *cond == Condition::None {
        return teacher.predict_eps(x_t, t, cond);
    }
    let uncond = teacher.predict_eps(x_t, t, &Condition::None)?;
    let conditioned = teacher.predict_eps(x_t, t, cond)?;
    cfg_combine(&uncond, &conditioned, scale)
}
