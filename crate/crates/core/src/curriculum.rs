//! Time-step curriculum.
//!
//! The sampled diffusion step starts large and anneals toward small values so
//! early iterations transfer coarse structure and later ones fine detail.
//! The same progress variable opens detail bands of the student, ramps in the
//! fine teacher, and drives the de-biasing gates.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::student::{Stage, ViewPose};

/// How the interval midpoint moves over training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TimestepSchedule {
    /// Logarithmic decay that spends more iterations at small steps.
    Annealed,
    /// Uniform over `[t_min, t_max]` at every iteration.
    Random,
    /// Midpoint decays linearly.
    Linear,
}

impl FromStr for TimestepSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "annealed" => Ok(Self::Annealed),
            "random" => Ok(Self::Random),
            "linear" => Ok(Self::Linear),
            _ => Err(Error::invalid(format!("unknown schedule `{s}`"))),
        }
    }
}

impl std::fmt::Display for TimestepSchedule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Annealed => "annealed",
            Self::Random => "random",
            Self::Linear => "linear",
        })
    }
}

/// Base of the logarithm in the annealed midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LogBase {
    /// The midpoint reaches `t_min` exactly at the last iteration.
    Two,
    Natural,
}

impl LogBase {
    fn log(self, x: f64) -> f64 {
        match self {
            Self::Two => x.log2(),
            Self::Natural => x.ln(),
        }
    }
}

impl FromStr for LogBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2" | "two" => Ok(Self::Two),
            "e" | "natural" => Ok(Self::Natural),
            _ => Err(Error::invalid(format!("unknown log base `{s}`"))),
        }
    }
}

impl std::fmt::Display for LogBase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Two => "2",
            Self::Natural => "e",
        })
    }
}

/// Curriculum hyperparameters shared by both stages.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumConfig {
    pub t_max: usize,
    pub t_min: usize,
    pub delta_max: f64,
    pub delta_min: f64,
    /// Midpoint update period; `None` means a tenth of the stage length.
    pub step_len: Option<usize>,
    pub log_base: LogBase,
    pub schedule: TimestepSchedule,
    pub lambda_max: f64,
    pub pose_weight_min: f64,
    pub clip_norm: f64,
    pub drop_prob: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            t_max: 980,
            t_min: 20,
            delta_max: 100.0,
            delta_min: 10.0,
            step_len: None,
            log_base: LogBase::Two,
            schedule: TimestepSchedule::Annealed,
            lambda_max: 0.5,
            pose_weight_min: 0.5,
            clip_norm: 1.0,
            drop_prob: 0.5,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self, steps: usize) -> Result<()> {
        if !(0 < self.t_min && self.t_min < self.t_max && self.t_max <= steps) {
            return Err(Error::invalid(format!(
                "need 0 < t_min < t_max <= {steps}, got t_min={} t_max={}",
                self.t_min, self.t_max
            )));
        }
        if !(0.0 <= self.delta_min && self.delta_min <= self.delta_max) {
            return Err(Error::invalid("need 0 <= delta_min <= delta_max"));
        }
        if self.step_len == Some(0) {
            return Err(Error::invalid("step_len must be at least 1"));
        }
        if !(self.lambda_max >= 0.0) {
            return Err(Error::invalid("lambda_max must be nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.pose_weight_min) || !(0.0..=1.0).contains(&self.drop_prob) {
            return Err(Error::invalid("pose_weight_min and drop_prob must lie in [0, 1]"));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        Ok(())
    }
}

/// Schedule position within one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState {
    pub cfg: CurriculumConfig,
    pub k: usize,
    pub total: usize,
    pub stage: Stage,
    pub levels: usize,
}

impl CurriculumState {
    pub fn new(cfg: CurriculumConfig, total: usize, stage: Stage, levels: usize) -> Self {
        Self {
            cfg,
            k: 0,
            total,
            stage,
            levels,
        }
    }

    pub fn step_len(&self) -> usize {
        self.cfg.step_len.unwrap_or((self.total / 10).max(1))
    }

    /// `k` rounded down to a multiple of the step length.
    fn held_k(&self) -> usize {
        let l = self.step_len();
        (self.k / l) * l
    }

    /// Interval midpoint. The annealed form is
    /// `t_max - (t_max - t_min) * log(1 + floor(k / l) * l / N)`.
    pub fn t_mid(&self) -> usize {
        let (hi, lo) = (self.cfg.t_max as f64, self.cfg.t_min as f64);
        if self.total == 0 {
            return self.cfg.t_max;
        }
        let frac = self.held_k() as f64 / self.total as f64;
        let mid = match self.cfg.schedule {
            TimestepSchedule::Annealed | TimestepSchedule::Random => hi - (hi - lo) * self.cfg.log_base.log(1.0 + frac),
            TimestepSchedule::Linear => hi - (hi - lo) * frac,
        };
        mid.round().max(0.0) as usize
    }

    /// Interval radius, decaying linearly from `delta_max` to `delta_min`.
    pub fn delta(&self) -> usize {
        let frac = if self.total == 0 {
            0.0
        } else {
            self.k as f64 / self.total as f64
        };
        (self.cfg.delta_max + (self.cfg.delta_min - self.cfg.delta_max) * frac).round() as usize
    }

    /// Draws a training step, uniform on the clamped interval around the
    /// midpoint, or on the full range for the random schedule.
    pub fn sample_t<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let (lo, hi) = (self.cfg.t_min, self.cfg.t_max);
        if self.cfg.schedule == TimestepSchedule::Random {
            return rng.random_range(lo..=hi);
        }
        let (mid, d) = (self.t_mid(), self.delta());
        let a = mid.saturating_sub(d).clamp(lo, hi);
        let b = (mid + d).clamp(lo, hi);
        rng.random_range(a..=b)
    }

    pub fn band_mask(&self) -> Vec<f64> {
        band_mask(self.k, self.total, self.levels)
    }

    /// Weight of the fine teacher: zero in stage one, then rising as the
    /// midpoint falls.
    pub fn lambda(&self) -> f64 {
        if self.stage == Stage::One {
            return 0.0;
        }
        let (hi, lo) = (self.cfg.t_max as f64, self.cfg.t_min as f64);
        let ramp = (hi - self.t_mid() as f64) / (hi - lo);
        (self.cfg.lambda_max * ramp).clamp(0.0, self.cfg.lambda_max)
    }

    pub fn gate<R: Rng + ?Sized>(&self, rel_angle: f64, role: TeacherRole, rng: &mut R) -> GateAction {
        if self.stage == Stage::One {
            return GateAction::Pass;
        }
        debias_gate(rel_angle, role, rng, self.cfg.clip_norm, self.cfg.drop_prob)
    }

    pub fn advance(&mut self) {
        if self.k < self.total {
            self.k += 1;
        }
    }
}

/// Per-level gates: level `i` (1-based) is open iff
/// `i <= 4 + min(floor(10 k / N), L - 4)`. With `N = 0` the schedule counts
/// as finished.
pub fn band_mask(k: usize, total: usize, levels: usize) -> Vec<f64> {
    let progress = (10 * k.min(total)).checked_div(total).unwrap_or(10);
    let open = 4 + progress.min(levels.saturating_sub(4));
    (1..=levels).map(|i| if i <= open { 1.0 } else { 0.0 }).collect()
}

/// Multiplier growing with angular distance from the reference view, from
/// `w_min` at the reference to 1 opposite it.
pub fn pose_weight(pose: ViewPose, reference: ViewPose, w_min: f64) -> f64 {
    w_min + (1.0 - w_min) * pose.distance(reference) / PI
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TeacherRole {
    /// View-conditioned, shapes geometry.
    Coarse,
    /// Class-conditioned, adds detail.
    Fine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateAction {
    Pass,
    /// Rescale the term's parameter gradient to at most this norm.
    Clip(f64),
    Drop,
}

/// Suppresses teacher gradients in view ranges where a prior tends to paint
/// the reference appearance onto the back side. The coarse teacher is
/// clipped near the opposite view; the fine teacher is randomly dropped in a
/// band on either side of the reference.
pub fn debias_gate<R: Rng + ?Sized>(
    rel_angle: f64,
    role: TeacherRole,
    rng: &mut R,
    clip_norm: f64,
    drop_prob: f64,
) -> GateAction {
    let rel = ViewPose::new(rel_angle).angle();
    match role {
        TeacherRole::Coarse => {
            if (11.0 * PI / 12.0..=13.0 * PI / 12.0).contains(&rel) {
                GateAction::Clip(clip_norm)
            } else {
                GateAction::Pass
            }
        }
        TeacherRole::Fine => {
            let wrapped = if rel > PI { rel - 2.0 * PI } else { rel };
            if (PI / 6.0..=PI / 4.0).contains(&wrapped.abs()) && rng.random::<f64>() < drop_prob {
                GateAction::Drop
            } else {
                GateAction::Pass
            }
        }
    }
}
