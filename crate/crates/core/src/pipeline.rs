//! Two-stage distillation driver.
//!
//! Stage one optimizes a coarse field against the view-conditioned teacher
//! alone. The field is then upgraded to a finer resolution and stage two adds
//! the class-conditioned teacher under the lambda ramp, with de-biasing
//! gates active. A fixed fraction of iterations instead fits the reference
//! projection directly.

use std::f64::consts::TAU;
use std::path::Path;

use rand::Rng;

use crate::config::{ObservationKind, RunConfig};
use crate::curriculum::CurriculumState;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::evalx::{mask_iou, psnr};
use crate::grid::{norm2, Grid};
use crate::io::{csv_float, load_checkpoint, write_csv, write_file, write_pgm};
use crate::optim::AdamW;
use crate::rng::{normal_vec, SeedStreams, Stream};
use crate::sds::{dtc_grad, laplacian_loss_grad, normal_smooth_loss, rec_loss, DtcRequest, Observation, Teachers};
use crate::student::{
    extract_contour, project, project_adjoint, teacher_dataset, ProjectionCodec, PyramidField, Shape, ShapeKind,
    Stage, ViewPose,
};
use crate::optim::AdamConfig;
use crate::teacher::{train_teacher, ConditionKind, Denoiser, DenoiserModel, TeacherTrainConfig, TrainReport};

/// Field the run tries to recover.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    Shape(Shape),
    /// A fixed grid; only usable at its own resolution or coarser divisors.
    Field(Grid),
}

impl GroundTruth {
    /// The shape drawn from the run's shape kind and shape seed.
    pub fn from_config(cfg: &RunConfig) -> Self {
        let mut rng = SeedStreams::new(cfg.run.shape_seed).stream(Stream::Shape);
        GroundTruth::Shape(Shape::random(cfg.run.shape, &mut rng))
    }

    pub fn at(&self, res: usize) -> Result<Grid> {
        match self {
            GroundTruth::Shape(s) => Ok(s.rasterize(res)),
            GroundTruth::Field(g) => {
                if g.width() == res && g.height() == res {
                    Ok(g.clone())
                } else if g.is_square() && res > 0 && g.width() % res == 0 {
                    g.downsample(g.width() / res)
                } else {
                    Err(Error::invalid(format!(
                        "ground truth of size {} cannot be resampled to {res}",
                        g.width()
                    )))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Reference,
    Unseen,
}

/// One optimizer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub k: usize,
    pub stage: Stage,
    pub branch: Branch,
    /// Diffusion step; zero on reference iterations.
    pub t: usize,
    pub pose: f64,
    /// Reconstruction loss, or the norm of the distillation residual.
    pub loss: f64,
    pub reg_loss: f64,
    pub grad_norm: f64,
    pub lambda: f64,
    pub open_levels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
    pub status: RunStatus,
    pub divergence: Option<String>,
    pub psnr_initial: f64,
    pub psnr_final: f64,
    pub iou_final: f64,
}

impl RunRecord {
    pub const HEADER: [&'static str; 10] = [
        "k",
        "stage",
        "branch",
        "t",
        "pose",
        "loss",
        "reg_loss",
        "grad_norm",
        "lambda",
        "open_levels",
    ];

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.k.to_string(),
                    match r.stage {
                        Stage::One => "1".into(),
                        Stage::Two => "2".into(),
                    },
                    match r.branch {
                        Branch::Reference => "reference".into(),
                        Branch::Unseen => "unseen".into(),
                    },
                    r.t.to_string(),
                    csv_float(r.pose),
                    csv_float(r.loss),
                    csv_float(r.reg_loss),
                    csv_float(r.grad_norm),
                    csv_float(r.lambda),
                    r.open_levels.to_string(),
                ]
            })
            .collect()
    }

    pub fn metrics_rows(&self) -> Vec<Vec<String>> {
        vec![vec![
            match self.status {
                RunStatus::Completed => "completed".into(),
                RunStatus::Diverged => "diverged".into(),
            },
            self.rows.len().to_string(),
            csv_float(self.psnr_initial),
            csv_float(self.psnr_final),
            csv_float(self.iou_final),
        ]]
    }

    pub const METRICS_HEADER: [&'static str; 5] = ["status", "rows", "psnr_initial", "psnr_final", "mask_iou"];
}

/// Finished run: the record plus the final student.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: RunRecord,
    pub field: PyramidField,
    /// Final render at the last stage's resolution, clamped to `[0, 1]`.
    pub render: Grid,
}

/// Immutable inputs shared by both stages.
struct Context<'a> {
    cfg: &'a RunConfig,
    truth: &'a GroundTruth,
    coarse: &'a dyn Denoiser,
    fine: Option<&'a dyn Denoiser>,
    sched: &'a NoiseSchedule,
    class_id: usize,
    seeds: SeedStreams,
}

enum StageEnd {
    Completed,
    Diverged(String),
}

fn all_open(levels: usize) -> Vec<f64> {
    vec![1.0; levels]
}

fn stage_index(stage: Stage) -> u64 {
    match stage {
        Stage::One => 1,
        Stage::Two => 2,
    }
}

/// Runs one stage in place, appending to `rows`.
fn run_stage(ctx: &Context<'_>, field: &mut PyramidField, stage: Stage, iterations: usize, rows: &mut Vec<RunRow>) -> Result<StageEnd> {
    let cfg = ctx.cfg;
    let run = &cfg.run;
    let idx = stage_index(stage);
    let mut pose_rng = ctx.seeds.indexed(Stream::Pose, idx);
    let mut t_rng = ctx.seeds.indexed(Stream::Timestep, idx);
    let mut noise_rng = ctx.seeds.indexed(Stream::Noise, idx);
    let mut gate_rng = ctx.seeds.indexed(Stream::Gate, idx);
    let mut reg_rng = ctx.seeds.indexed(Stream::Regularizer, idx);

    let res = field.render_res();
    let reference = ViewPose::new(run.reference_angle);
    let ref_proj = project(&ctx.truth.at(res)?, reference)?;
    let ray = res as f64;
    let ref_density: Vec<f64> = ref_proj.iter().map(|p| p / ray).collect();
    let ref_mask: Vec<f64> = ref_density
        .iter()
        .map(|m| if *m > run.reference_mask_threshold { 1.0 } else { 0.0 })
        .collect();
    let observation = match run.observation {
        ObservationKind::Projection => Observation::Projection(ProjectionCodec::new(cfg.teacher.resolution)),
        ObservationKind::Field => Observation::Field,
    };
    let fine = if run.dual_teacher { ctx.fine } else { None };

    let mut state = CurriculumState::new(cfg.curriculum.clone(), iterations, stage, field.level_count());
    let mut opt = AdamW::new(cfg.optim);
    let mut over_threshold = 0;

    for k in 0..iterations {
        state.k = k;
        let mask = if run.band_masking {
            state.band_mask()
        } else {
            all_open(field.level_count())
        };
        let render = field.render(&mask)?;
        let take_reference = pose_rng.random::<f64>() < run.reference_prob;
        let mut grad;
        let (branch, t, pose, loss);
        if take_reference {
            let proj = project(&render, reference)?;
            let density: Vec<f64> = proj.iter().map(|p| p / ray).collect();
            let rec = rec_loss(&density, &ref_density, &ref_mask, &cfg.rec)?;
            let proj_grad: Vec<f64> = rec.grad.iter().map(|g| run.lambda_rec * g / ray).collect();
            grad = field.render_adjoint(&project_adjoint(&proj_grad, res, reference)?, &mask)?;
            (branch, t, pose, loss) = (Branch::Reference, 0, reference.angle(), rec.loss);
        } else {
            let view = ViewPose::new(pose_rng.random_range(0.0..TAU));
            let step = state.sample_t(&mut t_rng);
            let dim = match observation {
                Observation::Projection(c) => c.teacher_res(),
                Observation::Field => res * res,
            };
            let noise = normal_vec(&mut noise_rng, dim);
            let req = DtcRequest {
                pose: view,
                reference,
                t: step,
                noise: &noise,
                mask: &mask,
                observation,
            };
            let teachers = Teachers {
                coarse: ctx.coarse,
                fine,
                class_id: ctx.class_id,
            };
            match dtc_grad(field, &req, teachers, &state, ctx.sched, &cfg.sds, &mut gate_rng) {
                Ok(out) => {
                    grad = out.grad;
                    (branch, t, pose, loss) = (Branch::Unseen, step, view.angle(), norm2(&out.render_coeff));
                }
                Err(e @ Error::Divergence { .. }) => return Ok(StageEnd::Diverged(e.to_string())),
                Err(e) => return Err(e),
            }
        }

        let regularize = match branch {
            Branch::Reference => run.regularize_reference,
            Branch::Unseen => run.regularize_unseen,
        };
        let mut reg_loss = 0.0;
        if regularize && run.lambda_reg > 0.0 {
            let field_grad = match stage {
                Stage::One => {
                    let s = normal_smooth_loss(&render, run.normal_beta, &mut reg_rng, run.normal_samples)?;
                    reg_loss = s.loss;
                    Some(s.grad)
                }
                Stage::Two => contour_laplacian(&render, run.contour_iso)?.map(|(l, g)| {
                    reg_loss = l;
                    g
                }),
            };
            if let Some(fg) = field_grad {
                let g = field.render_adjoint(&fg, &mask)?;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += run.lambda_reg * b;
                }
            }
        }

        let grad_norm = norm2(&grad);
        let open_levels = mask.iter().filter(|m| **m > 0.0).count();
        rows.push(RunRow {
            k,
            stage,
            branch,
            t,
            pose,
            loss,
            reg_loss,
            grad_norm,
            lambda: state.lambda(),
            open_levels,
        });
        if !grad_norm.is_finite() {
            return Ok(StageEnd::Diverged(format!("non-finite gradient at k = {k}, t = {t}, pose = {pose:.4}")));
        }
        over_threshold = if grad_norm > run.divergence_grad_norm { over_threshold + 1 } else { 0 };
        if over_threshold >= run.divergence_patience.max(1) {
            return Ok(StageEnd::Diverged(format!(
                "gradient norm above {} for {over_threshold} iterations at k = {k}",
                run.divergence_grad_norm
            )));
        }
        opt.step(field.coeffs_mut(), &grad)?;
        if !field.all_finite() {
            return Ok(StageEnd::Diverged(format!("non-finite parameters at k = {k}")));
        }
        state.advance();
    }
    Ok(StageEnd::Completed)
}

/// Laplacian loss of the render's iso-contour and its gradient on the render.
/// `None` when the render has no usable contour yet.
fn contour_laplacian(render: &Grid, iso: f64) -> Result<Option<(f64, Grid)>> {
    let contour = match extract_contour(render, iso) {
        Ok(c) if c.len() >= 3 => c,
        Ok(_) | Err(Error::EmptyContour { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    let (loss, vertex_grad) = laplacian_loss_grad(&contour)?;
    let grad = contour.vertex_grad_to_field(&vertex_grad, render.width(), render.height());
    Ok(Some((loss, grad)))
}

fn final_render(field: &PyramidField) -> Result<Grid> {
    Ok(field.render(&all_open(field.level_count()))?.clamp01())
}

/// Runs both stages with in-memory teachers.
pub fn distill_with(
    cfg: &RunConfig,
    truth: &GroundTruth,
    coarse: &dyn Denoiser,
    fine: Option<&dyn Denoiser>,
    sched: &NoiseSchedule,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let run = &cfg.run;
    let class_id = match truth {
        GroundTruth::Shape(s) => s.kind.class_id(),
        GroundTruth::Field(_) => 0,
    };
    let ctx = Context {
        cfg,
        truth,
        coarse,
        fine,
        sched,
        class_id,
        seeds: SeedStreams::new(run.seed),
    };
    let mut field = PyramidField::doubling(run.render_res_one, Stage::One)?;
    let psnr_initial = psnr(&final_render(&field)?, &truth.at(run.render_res_one)?, 1.0)?;
    let mut rows = Vec::with_capacity(run.iterations_one + run.iterations_two);

    let mut end = run_stage(&ctx, &mut field, Stage::One, run.iterations_one, &mut rows)?;
    if matches!(end, StageEnd::Completed) {
        field = if run.render_res_two > run.render_res_one {
            field.upgrade_stage(run.render_res_two)?
        } else {
            let mut same = PyramidField::zeros(field.resolutions(), field.render_res(), Stage::Two)?;
            same.coeffs_mut().copy_from_slice(field.coeffs());
            same
        };
        end = run_stage(&ctx, &mut field, Stage::Two, run.iterations_two, &mut rows)?;
    }

    let render = final_render(&field)?;
    let truth_final = truth.at(field.render_res())?;
    let (status, divergence) = match end {
        StageEnd::Completed => (RunStatus::Completed, None),
        StageEnd::Diverged(m) => (RunStatus::Diverged, Some(m)),
    };
    let (psnr_final, iou_final) = if render.all_finite() {
        (psnr(&render, &truth_final, 1.0)?, mask_iou(&render, &truth_final, 0.5)?)
    } else {
        (0.0, 0.0)
    };
    Ok(RunOutcome {
        record: RunRecord {
            rows,
            status,
            divergence,
            psnr_initial,
            psnr_final,
            iou_final,
        },
        field,
        render,
    })
}

/// Writes `run.csv`, `metrics.csv`, `field.pgm` and `config.txt` into `dir`.
pub fn write_run_outputs(outcome: &RunOutcome, cfg: &RunConfig, dir: &Path) -> Result<()> {
    write_csv(&dir.join("run.csv"), &RunRecord::HEADER, &outcome.record.csv_rows())?;
    write_csv(&dir.join("metrics.csv"), &RunRecord::METRICS_HEADER, &outcome.record.metrics_rows())?;
    write_pgm(&outcome.render, &dir.join("field.pgm"))?;
    write_file(&dir.join("config.txt"), cfg.echo().as_bytes())
}

/// Loads both teacher checkpoints named in the configuration, runs the
/// distillation against the configured ground-truth shape and writes the
/// outputs into `out_dir`.
pub fn distill(cfg: &RunConfig, out_dir: &Path) -> Result<RunRecord> {
    let coarse = load_checkpoint(&cfg.teacher.coarse_checkpoint)?;
    let fine = if cfg.run.dual_teacher {
        Some(load_checkpoint(&cfg.teacher.fine_checkpoint)?)
    } else {
        None
    };
    let sched = NoiseSchedule::new(cfg.teacher.diffusion_steps, cfg.teacher.schedule)?;
    let truth = GroundTruth::from_config(cfg);
    let outcome = distill_with(
        cfg,
        &truth,
        &coarse,
        fine.as_ref().map(|f| f as &dyn Denoiser),
        &sched,
    )?;
    write_run_outputs(&outcome, cfg, out_dir)?;
    Ok(outcome.record)
}

/// Both teachers after training on one shared corpus.
#[derive(Debug, Clone)]
pub struct TrainedTeachers {
    pub coarse: DenoiserModel,
    pub fine: DenoiserModel,
    pub coarse_report: TrainReport,
    pub fine_report: TrainReport,
}

/// Training settings taken from the teacher section.
pub fn teacher_train_config(cfg: &RunConfig) -> TeacherTrainConfig {
    let te = &cfg.teacher;
    TeacherTrainConfig {
        hidden: te.hidden.clone(),
        epochs: te.epochs,
        batch_size: te.batch_size,
        cond_dropout: te.cond_dropout,
        adam: AdamConfig {
            lr: te.lr,
            weight_decay: te.weight_decay,
            ..AdamConfig::default()
        },
    }
}

/// Trains the view-conditioned and the class-conditioned teacher on encoded
/// projections of random shapes. Both see the same samples; only the labels
/// differ.
pub fn train_teachers(cfg: &RunConfig) -> Result<TrainedTeachers> {
    let te = &cfg.teacher;
    let sched = NoiseSchedule::new(te.diffusion_steps, te.schedule)?;
    let codec = ProjectionCodec::new(te.resolution);
    let seeds = SeedStreams::new(cfg.run.seed);
    let train_cfg = teacher_train_config(cfg);
    let classes = ConditionKind::Class {
        classes: ShapeKind::ALL.len(),
    };
    let mut kinds = [(ConditionKind::View, None), (classes, None)];
    for (kind, slot) in kinds.iter_mut() {
        let data = teacher_dataset(te.dataset_size, *kind, &codec, &mut seeds.indexed(Stream::TeacherData, 0))?;
        let heldout = teacher_dataset(te.heldout_size, *kind, &codec, &mut seeds.indexed(Stream::TeacherData, 1))?;
        *slot = Some(train_teacher(&data, &heldout, *kind, &train_cfg, &sched, seeds)?);
    }
    let [(_, coarse), (_, fine)] = kinds;
    let (coarse, coarse_report) = coarse.expect("trained above");
    let (fine, fine_report) = fine.expect("trained above");
    Ok(TrainedTeachers {
        coarse,
        fine,
        coarse_report,
        fine_report,
    })
}
