use rand::Rng;

use super::{sds_grad_eps, sds_grad_x0, SdsConfig};
use crate::curriculum::{pose_weight, CurriculumState, GateAction, TeacherRole};
use crate::diffusion::{ddim_denoise, perturb, NoiseSchedule};
use crate::error::{check_len, Error, Result};
use crate::grid::{norm2, Grid};
use crate::student::{project, project_adjoint, ProjectionCodec, PyramidField, ViewPose};
use crate::teacher::{guided_eps, Condition, Denoiser};

/// What the teachers look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    /// Encoded projection at the requested view.
    Projection(ProjectionCodec),
    /// The whole rendered field, flattened row-major; the view is ignored.
    Field,
}

/// Teacher-space observation of the student at `pose`.
pub fn observe(field: &PyramidField, mask: &[f64], pose: ViewPose, obs: Observation) -> Result<Vec<f64>> {
    let grid = field.render(mask)?;
    match obs {
        Observation::Projection(codec) => codec.encode(&project(&grid, pose)?),
        Observation::Field => Ok(grid.into_vec()),
    }
}

/// Adjoint of [`observe`]: teacher-space gradient to coefficient gradient.
pub fn observe_adjoint(
    field: &PyramidField,
    mask: &[f64],
    pose: ViewPose,
    obs: Observation,
    grad: &[f64],
) -> Result<Vec<f64>> {
    let n = field.render_res();
    let field_grad = match obs {
        Observation::Projection(codec) => {
            let proj_grad = codec.encode_adjoint(grad, n)?;
            project_adjoint(&proj_grad, n, pose)?
        }
        Observation::Field => {
            check_len(n * n, grad.len())?;
            Grid::from_vec(n, n, grad.to_vec())?
        }
    };
    field.render_adjoint(&field_grad, mask)
}

/// The two priors. The coarse one is view-conditioned; the fine one is
/// class-conditioned and only consulted when its weight is positive.
#[derive(Clone, Copy)]
pub struct Teachers<'a> {
    pub coarse: &'a dyn Denoiser,
    pub fine: Option<&'a dyn Denoiser>,
    pub class_id: usize,
}

/// Everything fixed for one distillation query besides the student.
#[derive(Debug, Clone)]
pub struct DtcRequest<'a> {
    pub pose: ViewPose,
    pub reference: ViewPose,
    pub t: usize,
    pub noise: &'a [f64],
    pub mask: &'a [f64],
    pub observation: Observation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtcOutput {
    /// Gradient on the field coefficients.
    pub grad: Vec<f64>,
    /// Teacher-space vector `c` such that `grad = J^T c`, where `J` is the
    /// Jacobian of [`observe`]. The teacher outputs are frozen inside `c`.
    pub render_coeff: Vec<f64>,
    pub lambda: f64,
    pub pose_weight: f64,
    pub coarse_gate: GateAction,
    pub fine_gate: Option<GateAction>,
    pub fine_queried: bool,
    pub multi_step: bool,
}

/// Per-teacher distillation residual in teacher space.
fn teacher_residual(
    teacher: &dyn Denoiser,
    cond: Condition,
    scale: f64,
    x: &[f64],
    req: &DtcRequest<'_>,
    sched: &NoiseSchedule,
    cfg: &SdsConfig,
) -> Result<(Vec<f64>, bool)> {
    let xt = perturb(x, req.t, req.noise, sched)?;
    if req.t < cfg.multi_step_switch_t && cfg.multi_step_count > 1 {
        let eps = |d: &[f64], t: usize| guided_eps(teacher, d, t, &cond, scale);
        let x0 = ddim_denoise(&xt, eps, cfg.multi_step_count, sched)?;
        Ok((sds_grad_x0(x, &x0.data, req.t, sched, cfg)?, true))
    } else {
        let eps_hat = guided_eps(teacher, &xt.data, req.t, &cond, scale)?;
        Ok((sds_grad_eps(x, &eps_hat, req.noise, req.t, sched, cfg)?, false))
    }
}

/// Dual-teacher distillation gradient: the coarse term plus `lambda` times
/// the fine term, gated by view, scaled by the pose weight and chained to the
/// field coefficients.
pub fn dtc_grad<R: Rng + ?Sized>(
    field: &PyramidField,
    req: &DtcRequest<'_>,
    teachers: Teachers<'_>,
    state: &CurriculumState,
    sched: &NoiseSchedule,
    cfg: &SdsConfig,
    gate_rng: &mut R,
) -> Result<DtcOutput> {
    let diverged = || Error::Divergence {
        k: state.k,
        t: req.t,
        pose: req.pose.angle(),
    };
    let x = observe(field, req.mask, req.pose, req.observation)?;
    check_len(x.len(), req.noise.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(diverged());
    }
    let rel = req.pose.relative_to(req.reference);

    let (mut coarse, multi_step) = teacher_residual(
        teachers.coarse,
        Condition::view(req.pose.angle()),
        cfg.cfg_scale_coarse,
        &x,
        req,
        sched,
        cfg,
    )?;
    let coarse_gate = state.gate(rel, TeacherRole::Coarse, gate_rng);
    if let GateAction::Clip(max_norm) = coarse_gate {
        let norm = norm2(&observe_adjoint(field, req.mask, req.pose, req.observation, &coarse)?);
        if norm > max_norm {
            coarse.iter_mut().for_each(|c| *c *= max_norm / norm);
        }
    }

    let lambda = state.lambda();
    let mut fine_gate = None;
    let mut fine_queried = false;
    let mut combined = coarse;
    if lambda > 0.0 {
        if let Some(fine_teacher) = teachers.fine {
            let gate = state.gate(rel, TeacherRole::Fine, gate_rng);
            fine_gate = Some(gate);
            if gate != GateAction::Drop {
                fine_queried = true;
                let (fine, _) = teacher_residual(
                    fine_teacher,
                    Condition::class(teachers.class_id),
                    cfg.cfg_scale_fine,
                    &x,
                    req,
                    sched,
                    cfg,
                )?;
                for (c, f) in combined.iter_mut().zip(&fine) {
                    *c += lambda * f;
                }
            }
        }
    }

    let pw = pose_weight(req.pose, req.reference, state.cfg.pose_weight_min);
    combined.iter_mut().for_each(|c| *c *= pw);
    if combined.iter().any(|v| !v.is_finite()) {
        return Err(diverged());
    }
    let grad = observe_adjoint(field, req.mask, req.pose, req.observation, &combined)?;
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(diverged());
    }
    Ok(DtcOutput {
        grad,
        render_coeff: combined,
        lambda,
        pose_weight: pw,
        coarse_gate,
        fine_gate,
        fine_queried,
        multi_step,
    })
}
