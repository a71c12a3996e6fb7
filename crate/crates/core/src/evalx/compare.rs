//! Structural agreement of a view-conditioned and a class-conditioned
//! teacher with ground truth across noise levels.

use std::f64::consts::TAU;

use rand::Rng;

use crate::diffusion::{ddim_denoise, perturb, NoiseSchedule};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::io::csv_float;
use crate::rng::normal_vec;
use crate::student::{project, ProjectionCodec, Shape, ViewPose};
use crate::teacher::{guided_eps, Condition, Denoiser};

use super::mask_iou;

/// One held-out example.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareCase {
    pub shape: Shape,
    pub pose: ViewPose,
    pub noise: Vec<f64>,
}

/// Random shapes at random views, each with its own noise vector of length
/// `res`.
pub fn held_out_cases<R: Rng + ?Sized>(count: usize, res: usize, rng: &mut R) -> Vec<CompareCase> {
    (0..count)
        .map(|_| {
            let shape = Shape::random_any(rng);
            let pose = ViewPose::new(rng.random_range(0.0..TAU));
            CompareCase {
                shape,
                pose,
                noise: normal_vec(rng, res),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareRow {
    pub t: usize,
    pub iou_view: f64,
    pub iou_class: f64,
}

impl CompareRow {
    pub const HEADER: [&'static str; 4] = ["t", "iou_view", "iou_class", "gap"];

    /// View-conditioned advantage.
    pub fn gap(&self) -> f64 {
        self.iou_view - self.iou_class
    }

    pub fn csv(&self) -> Vec<String> {
        vec![
            self.t.to_string(),
            csv_float(self.iou_view),
            csv_float(self.iou_class),
            csv_float(self.gap()),
        ]
    }
}

/// Which label a side's teacher is conditioned on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionSource {
    View,
    Class,
}

impl ConditionSource {
    fn condition(self, case: &CompareCase) -> Condition {
        match self {
            ConditionSource::View => Condition::view(case.pose.angle()),
            ConditionSource::Class => Condition::class(case.shape.kind.class_id()),
        }
    }
}

/// Teacher, label and guidance used for one side of the comparison.
#[derive(Clone, Copy)]
pub struct Side<'a> {
    pub teacher: &'a dyn Denoiser,
    pub source: ConditionSource,
    pub guidance: f64,
}

impl<'a> Side<'a> {
    pub fn view(teacher: &'a dyn Denoiser, guidance: f64) -> Self {
        Self {
            teacher,
            source: ConditionSource::View,
            guidance,
        }
    }

    pub fn class(teacher: &'a dyn Denoiser, guidance: f64) -> Self {
        Self {
            teacher,
            source: ConditionSource::Class,
            guidance,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn denoise_mask(
    side: Side<'_>,
    x0: &[f64],
    case: &CompareCase,
    t: usize,
    steps: usize,
    codec: &ProjectionCodec,
    sched: &NoiseSchedule,
) -> Result<Grid> {
    let xt = perturb(x0, t, &case.noise, sched)?;
    let cond = side.source.condition(case);
    let eps = |x: &[f64], s: usize| guided_eps(side.teacher, x, s, &cond, side.guidance);
    let est = ddim_denoise(&xt, eps, steps, sched)?;
    Ok(Grid::row(codec.decode(&est.data)))
}

/// Mean MaskIoU of each teacher's denoised projection against the true one,
/// per time step. Masks threshold the decoded mean density.
#[allow(clippy::too_many_arguments)]
pub fn teacher_compare(
    view: Side<'_>,
    class: Side<'_>,
    t_list: &[usize],
    cases: &[CompareCase],
    threshold: f64,
    steps: usize,
    codec: &ProjectionCodec,
    sched: &NoiseSchedule,
) -> Result<Vec<CompareRow>> {
    if cases.is_empty() {
        return Err(Error::invalid("teacher comparison needs held-out shapes"));
    }
    let res = codec.teacher_res();
    let truths = cases
        .iter()
        .map(|c| {
            let proj = project(&c.shape.rasterize(res), c.pose)?;
            Ok((codec.encode(&proj)?, Grid::row(codec.mean_density(&proj)?)))
        })
        .collect::<Result<Vec<_>>>()?;

    t_list
        .iter()
        .map(|&t| {
            let (mut v_sum, mut c_sum) = (0.0, 0.0);
            for (case, (x0, truth)) in cases.iter().zip(&truths) {
                let v = denoise_mask(view, x0, case, t, steps, codec, sched)?;
                let c = denoise_mask(class, x0, case, t, steps, codec, sched)?;
                v_sum += mask_iou(&v, truth, threshold)?;
                c_sum += mask_iou(&c, truth, threshold)?;
            }
            let n = cases.len() as f64;
            Ok(CompareRow {
                t,
                iou_view: v_sum / n,
                iou_class: c_sum / n,
            })
        })
        .collect()
}
