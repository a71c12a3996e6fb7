//! Metrics and verification experiments.

mod ablate;
mod compare;
mod metrics;
mod theory;
mod variance;

pub use ablate::{ablate, job_config, AblationCell, AblationGrid, AblationRun, CellResult, MIN_SEEDS};
pub use compare::{held_out_cases, teacher_compare, CompareCase, CompareRow, ConditionSource, Side};
pub use metrics::{mask_iou, mse, pairwise_ssim, psnr, ssim, PSNR_IDENTICAL};
pub use theory::{
    adequate_rows, is_nondecreasing, theory_curve, train_mixture_teacher, two_mode_mixture, TheoryCurve,
    TheoryRow, MIN_TRIALS,
};
pub use variance::{denoised_set, variance_check, VarianceReport, MIN_SAMPLES};
