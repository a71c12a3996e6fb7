//! Failure-rate ablation over schedule, band masking and teacher toggles.
//!
//! A run fails when it diverges or its final PSNR falls below the threshold.
//! Runs are independent and execute in parallel; results are collected in
//! job order so the aggregates do not depend on scheduling.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::config::RunConfig;
use crate::curriculum::TimestepSchedule;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::io::{csv_float, write_csv};
use crate::pipeline::{distill_with, GroundTruth, RunStatus};
use crate::student::ShapeKind;
use crate::teacher::Denoiser;

/// Smallest accepted seed count.
pub const MIN_SEEDS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AblationCell {
    pub schedule: TimestepSchedule,
    pub band_masking: bool,
    pub dual_teacher: bool,
}

impl AblationCell {
    pub fn apply(&self, cfg: &mut RunConfig) {
        cfg.curriculum.schedule = self.schedule;
        cfg.run.band_masking = self.band_masking;
        cfg.run.dual_teacher = self.dual_teacher;
    }

    /// Directory-safe name, e.g. `annealed-mask_on-dual`.
    pub fn label(&self) -> String {
        format!(
            "{}-mask_{}-{}",
            self.schedule,
            if self.band_masking { "on" } else { "off" },
            if self.dual_teacher { "dual" } else { "coarse" }
        )
    }

    /// Cartesian product of the axes named in the configuration.
    pub fn grid_from(cfg: &RunConfig) -> Result<Vec<AblationCell>> {
        let e = &cfg.eval;
        let schedules = e
            .ablation_schedules
            .iter()
            .map(|s| TimestepSchedule::from_str(s))
            .collect::<Result<Vec<_>>>()?;
        let masks = e.ablation_masks.iter().map(|s| parse_toggle(s, "on", "off")).collect::<Result<Vec<_>>>()?;
        let teachers = e
            .ablation_teachers
            .iter()
            .map(|s| parse_toggle(s, "dual", "coarse"))
            .collect::<Result<Vec<_>>>()?;
        let mut cells = vec![];
        for &schedule in &schedules {
            for &band_masking in &masks {
                for &dual_teacher in &teachers {
                    cells.push(AblationCell {
                        schedule,
                        band_masking,
                        dual_teacher,
                    });
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::invalid("ablation grid has no cells"));
        }
        Ok(cells)
    }
}

impl fmt::Display for AblationCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn parse_toggle(s: &str, yes: &str, no: &str) -> Result<bool> {
    if s == yes {
        Ok(true)
    } else if s == no {
        Ok(false)
    } else {
        Err(Error::invalid(format!("expected `{yes}` or `{no}`, got `{s}`")))
    }
}

/// Outcome of one distillation inside the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub seed: u64,
    pub shape: ShapeKind,
    pub status: RunStatus,
    pub psnr: f64,
    pub iou: f64,
    pub failed: bool,
    /// Set when the run could not be carried out at all.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub cell: AblationCell,
    pub runs: Vec<AblationRun>,
}

impl CellResult {
    pub fn failure_rate(&self) -> f64 {
        self.runs.iter().filter(|r| r.failed).count() as f64 / self.runs.len().max(1) as f64
    }

    /// Mean final PSNR over runs that produced one.
    pub fn mean_psnr(&self) -> f64 {
        let ok: Vec<f64> = self.runs.iter().filter(|r| r.error.is_none()).map(|r| r.psnr).collect();
        if ok.is_empty() {
            0.0
        } else {
            ok.iter().sum::<f64>() / ok.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub psnr_threshold: f64,
    pub cells: Vec<CellResult>,
}

impl AblationGrid {
    pub const HEADER: [&'static str; 8] = [
        "schedule",
        "band_mask",
        "teacher",
        "runs",
        "failures",
        "failure_rate",
        "mean_psnr",
        "psnr_threshold",
    ];

    pub const RUN_HEADER: [&'static str; 7] = ["seed", "shape", "status", "psnr", "mask_iou", "failed", "error"];

    pub fn cell(&self, cell: &AblationCell) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.cell == *cell)
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.cells
            .iter()
            .map(|c| {
                vec![
                    c.cell.schedule.to_string(),
                    if c.cell.band_masking { "on" } else { "off" }.to_string(),
                    if c.cell.dual_teacher { "dual" } else { "coarse" }.to_string(),
                    c.runs.len().to_string(),
                    c.runs.iter().filter(|r| r.failed).count().to_string(),
                    csv_float(c.failure_rate()),
                    csv_float(c.mean_psnr()),
                    csv_float(self.psnr_threshold),
                ]
            })
            .collect()
    }

    pub fn run_rows(cell: &CellResult) -> Vec<Vec<String>> {
        cell.runs
            .iter()
            .map(|r| {
                vec![
                    r.seed.to_string(),
                    r.shape.to_string(),
                    match r.status {
                        RunStatus::Completed => "completed".into(),
                        RunStatus::Diverged => "diverged".into(),
                    },
                    csv_float(r.psnr),
                    csv_float(r.iou),
                    r.failed.to_string(),
                    r.error.clone().unwrap_or_default(),
                ]
            })
            .collect()
    }

    /// Writes `ablation.csv` and one `runs.csv` per cell directory.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_csv(&dir.join("ablation.csv"), &Self::HEADER, &self.csv_rows())?;
        for c in &self.cells {
            write_csv(&dir.join(c.cell.label()).join("runs.csv"), &Self::RUN_HEADER, &Self::run_rows(c))?;
        }
        Ok(())
    }
}

/// The run configuration for one grid job: the cell's toggles on top of
/// `base`, with the run and shape seeds set to `seed`.
pub fn job_config(base: &RunConfig, cell: &AblationCell, seed: u64, shape: ShapeKind) -> RunConfig {
    let mut cfg = base.clone();
    cell.apply(&mut cfg);
    cfg.run.seed = seed;
    cfg.run.shape_seed = seed;
    cfg.run.shape = shape;
    cfg
}

/// Runs every cell for every seed and shape.
pub fn ablate(
    base: &RunConfig,
    cells: &[AblationCell],
    seeds: &[u64],
    shapes: &[ShapeKind],
    coarse: &dyn Denoiser,
    fine: Option<&dyn Denoiser>,
    sched: &NoiseSchedule,
) -> Result<AblationGrid> {
    if seeds.len() < MIN_SEEDS {
        return Err(Error::invalid(format!("ablation needs at least {MIN_SEEDS} seeds")));
    }
    if cells.is_empty() || shapes.is_empty() {
        return Err(Error::invalid("ablation needs cells and shapes"));
    }
    let threshold = base.eval.psnr_threshold;
    let jobs: Vec<(usize, u64, ShapeKind)> = (0..cells.len())
        .flat_map(|c| seeds.iter().flat_map(move |&s| shapes.iter().map(move |&k| (c, s, k))))
        .collect();
    let runs: Vec<(usize, AblationRun)> = jobs
        .par_iter()
        .map(|&(c, seed, shape)| {
            let cfg = job_config(base, &cells[c], seed, shape);
            let truth = GroundTruth::from_config(&cfg);
            let run = match distill_with(&cfg, &truth, coarse, fine, sched) {
                Ok(out) => {
                    let r = out.record;
                    AblationRun {
                        seed,
                        shape,
                        status: r.status,
                        psnr: r.psnr_final,
                        iou: r.iou_final,
                        failed: r.status == RunStatus::Diverged || r.psnr_final < threshold,
                        error: None,
                    }
                }
                Err(e) => AblationRun {
                    seed,
                    shape,
                    status: RunStatus::Diverged,
                    psnr: 0.0,
                    iou: 0.0,
                    failed: true,
                    error: Some(e.to_string()),
                },
            };
            (c, run)
        })
        .collect();

    let mut results: Vec<CellResult> = cells
        .iter()
        .map(|&cell| CellResult { cell, runs: vec![] })
        .collect();
    for (c, run) in runs {
        results[c].runs.push(run);
    }
    Ok(AblationGrid {
        psnr_threshold: threshold,
        cells: results,
    })
}
