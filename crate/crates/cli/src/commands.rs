//! Subcommand bodies. Each returns the library error type so `main` can map
//! every runtime failure to one exit code.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use sdslab::config::RunConfig;
use sdslab::diffusion::NoiseSchedule;
use sdslab::evalx::{
    self, adequate_rows, is_nondecreasing, AblationCell, CompareRow, Side, TheoryCurve,
};
use sdslab::grid::Grid;
use sdslab::io::{csv_float, load_checkpoint, read_file_text, save_checkpoint, write_csv, write_pgm, write_text};
use sdslab::pipeline::{self, GroundTruth, RunStatus};
use sdslab::rng::{normal_vec, SeedStreams, Stream};
use sdslab::student::{project, ProjectionCodec, ShapeKind, ViewPose};
use sdslab::teacher::{Condition, Denoiser, DenoiserModel, GmmOracle};
use sdslab::Result;

/// Views in the projection image written by `render`.
const RENDER_VIEWS: usize = 64;

pub struct Invocation {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

impl Invocation {
    /// Loads the config, applies overrides, validates it and
    /// writes the echo.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::parse(&read_file_text(path)?)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        cfg.validate()?;
        write_text(&self.out.join("config.txt"), &cfg.echo())?;
        Ok(cfg)
    }

    /// Relative checkpoint paths live under the output root.
    fn checkpoint(&self, path: &Path) -> PathBuf {
        if path.is_relative() {
            self.out.join(path)
        } else {
            path.to_path_buf()
        }
    }

    fn load_teachers(&self, cfg: &RunConfig) -> Result<(DenoiserModel, DenoiserModel)> {
        Ok((
            load_checkpoint(&self.checkpoint(&cfg.teacher.coarse_checkpoint))?,
            load_checkpoint(&self.checkpoint(&cfg.teacher.fine_checkpoint))?,
        ))
    }
}

fn schedule(cfg: &RunConfig) -> Result<NoiseSchedule> {
    NoiseSchedule::new(cfg.teacher.diffusion_steps, cfg.teacher.schedule)
}

pub fn teacher_train(inv: &Invocation) -> Result<()> {
    let cfg = inv.resolve()?;
    let trained = pipeline::train_teachers(&cfg)?;
    save_checkpoint(&trained.coarse, &inv.checkpoint(&cfg.teacher.coarse_checkpoint))?;
    save_checkpoint(&trained.fine, &inv.checkpoint(&cfg.teacher.fine_checkpoint))?;
    let mut rows = vec![];
    for (name, report) in [("coarse", &trained.coarse_report), ("fine", &trained.fine_report)] {
        for (epoch, loss) in report.epoch_losses.iter().enumerate() {
            rows.push(vec![name.to_string(), (epoch + 1).to_string(), csv_float(*loss)]);
        }
        println!(
            "{name}: held-out loss {:.4} -> {:.4} over {} steps",
            report.initial_heldout, report.final_heldout, report.steps
        );
    }
    write_csv(&inv.out.join("teacher_train.csv"), &["teacher", "epoch", "loss"], &rows)
}

pub fn distill(inv: &Invocation) -> Result<()> {
    let cfg = inv.resolve()?;
    let coarse = load_checkpoint(&inv.checkpoint(&cfg.teacher.coarse_checkpoint))?;
    let fine = if cfg.run.dual_teacher {
        Some(load_checkpoint(&inv.checkpoint(&cfg.teacher.fine_checkpoint))?)
    } else {
        None
    };
    let truth = GroundTruth::from_config(&cfg);
    let fine_ref = fine.as_ref().map(|f| f as &dyn Denoiser);
    let outcome = pipeline::distill_with(&cfg, &truth, &coarse, fine_ref, &schedule(&cfg)?)?;
    pipeline::write_run_outputs(&outcome, &cfg, &inv.out)?;
    let record = outcome.record;
    match record.status {
        RunStatus::Completed => println!(
            "completed {} iterations: PSNR {:.2} -> {:.2} dB, MaskIoU {:.3}",
            record.rows.len(),
            record.psnr_initial,
            record.psnr_final,
            record.iou_final
        ),
        RunStatus::Diverged => println!(
            "diverged after {} iterations: {}",
            record.rows.len(),
            record.divergence.as_deref().unwrap_or("unknown cause")
        ),
    }
    Ok(())
}

pub fn ablate(inv: &Invocation) -> Result<()> {
    let cfg = inv.resolve()?;
    let (coarse, fine) = inv.load_teachers(&cfg)?;
    let cells = AblationCell::grid_from(&cfg)?;
    let seeds: Vec<u64> = (0..cfg.eval.ablation_seeds as u64).map(|i| cfg.run.seed + i).collect();
    let grid = evalx::ablate(&cfg, &cells, &seeds, &ShapeKind::ALL, &coarse, Some(&fine), &schedule(&cfg)?)?;
    grid.write(&inv.out)?;
    for c in &grid.cells {
        println!(
            "{}: failure rate {:.3}, mean PSNR {:.2} dB",
            c.cell,
            c.failure_rate(),
            c.mean_psnr()
        );
    }
    Ok(())
}

pub fn theory_check(inv: &Invocation) -> Result<()> {
    let cfg = inv.resolve()?;
    let e = &cfg.eval;
    let sched = schedule(&cfg)?;
    let seeds = SeedStreams::new(cfg.run.seed);
    let gmm = evalx::two_mode_mixture(e.theory_dim, e.theory_mode_distance, e.theory_mode_std)?;
    let (model, _) = evalx::train_mixture_teacher(
        &gmm,
        cfg.teacher.dataset_size,
        &pipeline::teacher_train_config(&cfg),
        &sched,
        seeds,
    )?;
    let oracle = GmmOracle::new(gmm.clone(), sched.clone());
    let trained = evalx::theory_curve(&gmm, &model, &e.theory_deltas, &e.theory_t_grid, e.theory_trials, &sched, &mut seeds.stream(Stream::Eval))?;
    let exact = evalx::theory_curve(&gmm, &oracle, &e.theory_deltas, &e.theory_t_grid, e.theory_trials, &sched, &mut seeds.stream(Stream::Eval))?;

    let mut rows = vec![];
    for (name, curve) in [("trained", &trained), ("oracle", &exact)] {
        for r in curve.csv_rows() {
            rows.push([vec![name.to_string()], r].concat());
        }
    }
    let header = [&["teacher"][..], &TheoryCurve::HEADER[..]].concat();
    write_csv(&inv.out.join("theory.csv"), &header, &rows)?;

    let epsilon = e.theory_epsilon_factor * trained.floor();
    let adequate = trained.adequate_t(epsilon);
    write_csv(&inv.out.join("theory_adequate.csv"), &["delta", "adequate_t"], &adequate_rows(&trained.deltas, &adequate))?;
    let oracle_max = exact.rows.iter().map(|r| r.error).fold(0.0, f64::max);
    println!(
        "epsilon {:.3e}; adequate t {:?}; nondecreasing {}; oracle max error {:.3e}",
        epsilon,
        adequate,
        is_nondecreasing(&adequate),
        oracle_max
    );
    Ok(())
}

/// Encoded projection of the configured ground truth at the reference view.
fn reference_projection(cfg: &RunConfig, codec: &ProjectionCodec) -> Result<Vec<f64>> {
    let truth = GroundTruth::from_config(cfg).at(codec.teacher_res())?;
    codec.encode(&project(&truth, ViewPose::new(cfg.run.reference_angle))?)
}

pub fn variance_check(inv: &Invocation) -> Result<()> {
    let cfg = inv.resolve()?;
    let e = &cfg.eval;
    let sched = schedule(&cfg)?;
    let coarse = load_checkpoint(&inv.checkpoint(&cfg.teacher.coarse_checkpoint))?;
    let codec = ProjectionCodec::new(cfg.teacher.resolution);
    let reference = reference_projection(&cfg, &codec)?;
    let mut rng = SeedStreams::new(cfg.run.seed).stream(Stream::Eval);
    let noises: Vec<Vec<f64>> = (0..e.variance_samples).map(|_| normal_vec(&mut rng, codec.teacher_res())).collect();
    let t = (e.variance_t_fraction * sched.steps() as f64).round() as usize;
    let cond = Condition::view(cfg.run.reference_angle);
    let guidance = cfg.sds.cfg_scale_coarse;
    let report = evalx::variance_check(&coarse, cond, guidance, &reference, t, &noises, e.variance_downsample, e.denoise_steps, &codec, &sched)?;
    write_csv(
        &inv.out.join("variance.csv"),
        &["t", "samples", "downsample", "ssim_full", "ssim_low"],
        &[vec![
            t.to_string(),
            report.samples.to_string(),
            e.variance_downsample.to_string(),
            csv_float(report.ssim_full),
            csv_float(report.ssim_low),
        ]],
    )?;
    let set = evalx::denoised_set(&coarse, cond, guidance, &reference, t, &noises, e.denoise_steps, &codec, &sched)?;
    write_pgm(&stack_rows(&set)?, &inv.out.join("variance_set.pgm"))?;
    println!("t = {t}: pairwise SSIM {:.3} full, {:.3} downsampled", report.ssim_full, report.ssim_low);
    Ok(())
}

/// One image row per profile.
fn stack_rows(rows: &[Grid]) -> Result<Grid> {
    let width = rows.first().map_or(0, Grid::width);
    let data: Vec<f64> = rows.iter().flat_map(|g| g.data().iter().copied()).collect();
    Grid::from_vec(width, rows.len(), data)
}

pub fn teacher_compare(inv: &Invocation) -> Result<()> {
    let cfg = inv.resolve()?;
    let e = &cfg.eval;
    let sched = schedule(&cfg)?;
    let (coarse, fine) = inv.load_teachers(&cfg)?;
    let codec = ProjectionCodec::new(cfg.teacher.resolution);
    let mut rng = SeedStreams::new(cfg.run.seed).stream(Stream::Eval);
    let cases = evalx::held_out_cases(e.compare_shapes, codec.teacher_res(), &mut rng);
    let rows = evalx::teacher_compare(
        Side::view(&coarse, cfg.sds.cfg_scale_coarse),
        Side::class(&fine, cfg.sds.cfg_scale_fine),
        &e.compare_t,
        &cases,
        e.compare_mask_threshold,
        e.denoise_steps,
        &codec,
        &sched,
    )?;
    write_csv(&inv.out.join("teacher_compare.csv"), &CompareRow::HEADER, &rows.iter().map(CompareRow::csv).collect::<Vec<_>>())?;
    for r in &rows {
        println!("t = {}: MaskIoU view {:.3}, class {:.3}", r.t, r.iou_view, r.iou_class);
    }
    Ok(())
}

pub fn render(inv: &Invocation, input: Option<&Path>) -> Result<()> {
    let cfg = inv.resolve()?;
    let field = match input {
        Some(path) => sdslab::io::read_pgm(path)?,
        None => GroundTruth::from_config(&cfg).at(cfg.run.render_res_two)?,
    };
    let n = field.width();
    let mut sinogram = Vec::with_capacity(RENDER_VIEWS * n);
    for i in 0..RENDER_VIEWS {
        let proj = project(&field, ViewPose::new(TAU * i as f64 / RENDER_VIEWS as f64))?;
        sinogram.extend(proj.iter().map(|p| p / n as f64));
    }
    write_pgm(&field, &inv.out.join("field.pgm"))?;
    write_pgm(&Grid::from_vec(n, RENDER_VIEWS, sinogram)?, &inv.out.join("projections.pgm"))?;
    println!("wrote {n}x{n} field and {RENDER_VIEWS} projections");
    Ok(())
}
