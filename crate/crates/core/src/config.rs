//! Run configuration and its plain-text file format.
//!
//! Files hold `key = value` lines grouped under `[section]` headers, with `#`
//! starting a comment. Every key has a default, unknown keys are rejected,
//! and a failed parse leaves nothing half-applied. [`RunConfig::echo`] writes
//! the fully resolved configuration back in the same format.

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use crate::curriculum::CurriculumConfig;
use crate::diffusion::ScheduleKind;
use crate::error::{Error, Result};
use crate::optim::AdamConfig;
use crate::sds::{RecWeights, SdsConfig};
use crate::student::ShapeKind;

/// What the teachers see during distillation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationKind {
    Projection,
    Field,
}

impl FromStr for ObservationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "projection" => Ok(Self::Projection),
            "field" => Ok(Self::Field),
            _ => Err(Error::invalid(format!("unknown observation `{s}`"))),
        }
    }
}

impl Display for ObservationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Projection => "projection",
            Self::Field => "field",
        })
    }
}

/// Distillation driver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSettings {
    pub seed: u64,
    pub iterations_one: usize,
    pub iterations_two: usize,
    pub render_res_one: usize,
    pub render_res_two: usize,
    pub reference_angle: f64,
    pub reference_prob: f64,
    /// Ground-truth shape family and the seed of its random parameters.
    pub shape: ShapeKind,
    pub shape_seed: u64,
    pub band_masking: bool,
    pub dual_teacher: bool,
    pub observation: ObservationKind,
    pub lambda_rec: f64,
    pub lambda_reg: f64,
    pub normal_beta: f64,
    pub normal_samples: usize,
    pub contour_iso: f64,
    pub regularize_reference: bool,
    pub regularize_unseen: bool,
    pub divergence_grad_norm: f64,
    pub divergence_patience: usize,
    /// Occupancy threshold on mean ray density for the reference mask.
    pub reference_mask_threshold: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            iterations_one: 3000,
            iterations_two: 3000,
            render_res_one: 32,
            render_res_two: 128,
            reference_angle: 0.0,
            reference_prob: 0.25,
            shape: ShapeKind::Ellipse,
            shape_seed: 0,
            band_masking: true,
            dual_teacher: true,
            observation: ObservationKind::Projection,
            lambda_rec: 1.0,
            lambda_reg: 0.01,
            normal_beta: 1.0,
            normal_samples: 64,
            contour_iso: 0.5,
            regularize_reference: true,
            regularize_unseen: true,
            divergence_grad_norm: 1e6,
            divergence_patience: 10,
            reference_mask_threshold: 0.01,
        }
    }
}

/// Teacher architecture, training, and checkpoint locations.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherSettings {
    pub coarse_checkpoint: PathBuf,
    pub fine_checkpoint: PathBuf,
    pub diffusion_steps: usize,
    pub schedule: ScheduleKind,
    pub resolution: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub dataset_size: usize,
    pub heldout_size: usize,
    pub cond_dropout: f64,
    pub lr: f64,
    pub weight_decay: f64,
}

impl Default for TeacherSettings {
    fn default() -> Self {
        Self {
            coarse_checkpoint: PathBuf::from("teachers/coarse.dtck"),
            fine_checkpoint: PathBuf::from("teachers/fine.dtck"),
            diffusion_steps: 1000,
            schedule: ScheduleKind::Cosine,
            resolution: 32,
            hidden: vec![256, 256, 256],
            epochs: 40,
            batch_size: 128,
            dataset_size: 4000,
            heldout_size: 256,
            cond_dropout: 0.1,
            lr: 1e-3,
            weight_decay: 2e-5,
        }
    }
}

/// Settings of the verification experiments.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSettings {
    pub psnr_threshold: f64,
    pub theory_deltas: Vec<f64>,
    pub theory_t_grid: Vec<usize>,
    pub theory_trials: usize,
    /// Multiple of the on-distribution error floor used as the accuracy target.
    pub theory_epsilon_factor: f64,
    pub theory_dim: usize,
    pub theory_mode_distance: f64,
    pub theory_mode_std: f64,
    pub variance_samples: usize,
    pub variance_downsample: usize,
    pub variance_t_fraction: f64,
    pub denoise_steps: usize,
    pub compare_t: Vec<usize>,
    pub compare_shapes: usize,
    /// Mean-density threshold for projection masks in the teacher comparison.
    pub compare_mask_threshold: f64,
    pub ablation_seeds: usize,
    pub ablation_schedules: Vec<String>,
    pub ablation_masks: Vec<String>,
    pub ablation_teachers: Vec<String>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            psnr_threshold: 12.0,
            theory_deltas: vec![0.0, 0.5, 1.0],
            theory_t_grid: (1..=20).map(|i| i * 50).collect(),
            theory_trials: 200,
            theory_epsilon_factor: 2.0,
            theory_dim: 4,
            theory_mode_distance: 1.0,
            theory_mode_std: 0.2,
            variance_samples: 16,
            variance_downsample: 4,
            variance_t_fraction: 0.9,
            denoise_steps: 8,
            compare_t: vec![200, 400, 600, 800],
            compare_shapes: 200,
            compare_mask_threshold: 0.05,
            ablation_seeds: 10,
            ablation_schedules: vec!["annealed".into(), "random".into()],
            ablation_masks: vec!["on".into()],
            ablation_teachers: vec!["dual".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub run: RunSettings,
    pub teacher: TeacherSettings,
    pub curriculum: CurriculumConfig,
    pub sds: SdsConfig,
    pub rec: RecWeights,
    pub optim: AdamConfig,
    pub eval: EvalSettings,
}

/// A configuration value that reads and writes its text form.
trait TextValue {
    fn get(&self) -> String;
    fn set(&mut self, s: &str) -> std::result::Result<(), String>;
}

macro_rules! plain_text_value {
    ($($t:ty),*) => {$(
        impl TextValue for $t {
            fn get(&self) -> String {
                self.to_string()
            }
            fn set(&mut self, s: &str) -> std::result::Result<(), String> {
                *self = s.parse().map_err(|e| format!("{e}"))?;
                Ok(())
            }
        }
    )*};
}

plain_text_value!(u64, usize, bool, String, ScheduleKind, ShapeKind, ObservationKind);
plain_text_value!(crate::curriculum::TimestepSchedule, crate::curriculum::LogBase, crate::sds::WeightKind);

impl TextValue for f64 {
    fn get(&self) -> String {
        format!("{self:?}")
    }
    fn set(&mut self, s: &str) -> std::result::Result<(), String> {
        *self = s.parse().map_err(|e| format!("{e}"))?;
        Ok(())
    }
}

impl TextValue for PathBuf {
    fn get(&self) -> String {
        self.display().to_string()
    }
    fn set(&mut self, s: &str) -> std::result::Result<(), String> {
        *self = PathBuf::from(s);
        Ok(())
    }
}

impl TextValue for Option<usize> {
    fn get(&self) -> String {
        self.map_or("auto".into(), |v| v.to_string())
    }
    fn set(&mut self, s: &str) -> std::result::Result<(), String> {
        *self = if s == "auto" {
            None
        } else {
            Some(s.parse().map_err(|e| format!("{e}"))?)
        };
        Ok(())
    }
}

/// Comma-separated list.
impl<T: FromStr + Display> TextValue for Vec<T>
where
    T::Err: Display,
{
    fn get(&self) -> String {
        self.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
    fn set(&mut self, s: &str) -> std::result::Result<(), String> {
        *self = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        Ok(())
    }
}

impl RunConfig {
    fn slots(&mut self) -> Vec<(&'static str, &'static str, &mut dyn TextValue)> {
        let r = &mut self.run;
        let te = &mut self.teacher;
        let c = &mut self.curriculum;
        let s = &mut self.sds;
        let rc = &mut self.rec;
        let o = &mut self.optim;
        let e = &mut self.eval;
        vec![
            ("run", "seed", &mut r.seed),
            ("run", "iterations_one", &mut r.iterations_one),
            ("run", "iterations_two", &mut r.iterations_two),
            ("run", "render_res_one", &mut r.render_res_one),
            ("run", "render_res_two", &mut r.render_res_two),
            ("run", "reference_angle", &mut r.reference_angle),
            ("run", "reference_prob", &mut r.reference_prob),
            ("run", "shape", &mut r.shape),
            ("run", "shape_seed", &mut r.shape_seed),
            ("run", "band_masking", &mut r.band_masking),
            ("run", "dual_teacher", &mut r.dual_teacher),
            ("run", "observation", &mut r.observation),
            ("run", "lambda_rec", &mut r.lambda_rec),
            ("run", "lambda_reg", &mut r.lambda_reg),
            ("run", "normal_beta", &mut r.normal_beta),
            ("run", "normal_samples", &mut r.normal_samples),
            ("run", "contour_iso", &mut r.contour_iso),
            ("run", "regularize_reference", &mut r.regularize_reference),
            ("run", "regularize_unseen", &mut r.regularize_unseen),
            ("run", "divergence_grad_norm", &mut r.divergence_grad_norm),
            ("run", "divergence_patience", &mut r.divergence_patience),
            ("run", "reference_mask_threshold", &mut r.reference_mask_threshold),
            ("teacher", "coarse_checkpoint", &mut te.coarse_checkpoint),
            ("teacher", "fine_checkpoint", &mut te.fine_checkpoint),
            ("teacher", "diffusion_steps", &mut te.diffusion_steps),
            ("teacher", "schedule", &mut te.schedule),
            ("teacher", "resolution", &mut te.resolution),
            ("teacher", "hidden", &mut te.hidden),
            ("teacher", "epochs", &mut te.epochs),
            ("teacher", "batch_size", &mut te.batch_size),
            ("teacher", "dataset_size", &mut te.dataset_size),
            ("teacher", "heldout_size", &mut te.heldout_size),
            ("teacher", "cond_dropout", &mut te.cond_dropout),
            ("teacher", "lr", &mut te.lr),
            ("teacher", "weight_decay", &mut te.weight_decay),
            ("curriculum", "schedule", &mut c.schedule),
            ("curriculum", "t_max", &mut c.t_max),
            ("curriculum", "t_min", &mut c.t_min),
            ("curriculum", "delta_max", &mut c.delta_max),
            ("curriculum", "delta_min", &mut c.delta_min),
            ("curriculum", "step_len", &mut c.step_len),
            ("curriculum", "log_base", &mut c.log_base),
            ("curriculum", "lambda_max", &mut c.lambda_max),
            ("curriculum", "pose_weight_min", &mut c.pose_weight_min),
            ("curriculum", "clip_norm", &mut c.clip_norm),
            ("curriculum", "drop_prob", &mut c.drop_prob),
            ("sds", "weight", &mut s.weight),
            ("sds", "alpha_free", &mut s.alpha_free),
            ("sds", "cfg_scale_coarse", &mut s.cfg_scale_coarse),
            ("sds", "cfg_scale_fine", &mut s.cfg_scale_fine),
            ("sds", "multi_step_switch_t", &mut s.multi_step_switch_t),
            ("sds", "multi_step_count", &mut s.multi_step_count),
            ("rec", "value", &mut rc.value),
            ("rec", "mask", &mut rc.mask),
            ("rec", "pearson", &mut rc.pearson),
            ("rec", "mask_sharpness", &mut rc.mask_sharpness),
            ("optim", "lr", &mut o.lr),
            ("optim", "beta1", &mut o.beta1),
            ("optim", "beta2", &mut o.beta2),
            ("optim", "eps", &mut o.eps),
            ("optim", "weight_decay", &mut o.weight_decay),
            ("optim", "nesterov", &mut o.nesterov),
            ("eval", "psnr_threshold", &mut e.psnr_threshold),
            ("eval", "theory_deltas", &mut e.theory_deltas),
            ("eval", "theory_t_grid", &mut e.theory_t_grid),
            ("eval", "theory_trials", &mut e.theory_trials),
            ("eval", "theory_epsilon_factor", &mut e.theory_epsilon_factor),
            ("eval", "theory_dim", &mut e.theory_dim),
            ("eval", "theory_mode_distance", &mut e.theory_mode_distance),
            ("eval", "theory_mode_std", &mut e.theory_mode_std),
            ("eval", "variance_samples", &mut e.variance_samples),
            ("eval", "variance_downsample", &mut e.variance_downsample),
            ("eval", "variance_t_fraction", &mut e.variance_t_fraction),
            ("eval", "denoise_steps", &mut e.denoise_steps),
            ("eval", "compare_t", &mut e.compare_t),
            ("eval", "compare_shapes", &mut e.compare_shapes),
            ("eval", "compare_mask_threshold", &mut e.compare_mask_threshold),
            ("eval", "ablation_seeds", &mut e.ablation_seeds),
            ("eval", "ablation_schedules", &mut e.ablation_schedules),
            ("eval", "ablation_masks", &mut e.ablation_masks),
            ("eval", "ablation_teachers", &mut e.ablation_teachers),
        ]
    }

    /// Sets `section.key` from text.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        for (sec, k, slot) in self.slots() {
            if sec == section && k == key {
                return slot
                    .set(value)
                    .map_err(|m| Error::invalid(format!("{section}.{key}: {m}")));
            }
        }
        Err(Error::invalid(format!("unknown key `{section}.{key}`")))
    }

    /// Parses a configuration file on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply(text)?;
        Ok(cfg)
    }

    /// Applies a configuration file to `self`. On error `self` is untouched.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        let mut next = self.clone();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| Error::Config {
                line: line_no,
                message,
            };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| err(format!("unterminated section header `{line}`")))?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if section.is_empty() {
                return Err(err(format!("key `{key}` appears before any section header")));
            }
            next.set(&section, key, value).map_err(|e| match e {
                Error::InvalidArgument(m) => err(m),
                other => other,
            })?;
        }
        next.validate()?;
        *self = next;
        Ok(())
    }

    /// The resolved configuration, every key included, in file format.
    pub fn echo(&self) -> String {
        let mut copy = self.clone();
        let mut out = String::new();
        let mut current = "";
        for (sec, key, v) in copy.slots() {
            if sec != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{sec}]\n"));
                current = sec;
            }
            out.push_str(&format!("{key} = {}\n", v.get()));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.run;
        if !(0.0..=1.0).contains(&r.reference_prob) {
            return Err(Error::invalid("run.reference_prob must lie in [0, 1]"));
        }
        if r.render_res_one == 0 || r.render_res_two < r.render_res_one {
            return Err(Error::invalid("render resolutions must be positive and nondecreasing"));
        }
        if r.normal_samples == 0 || !(r.normal_beta > 0.0) {
            return Err(Error::invalid("normal smoothness needs samples and a positive beta"));
        }
        if r.lambda_rec < 0.0 || r.lambda_reg < 0.0 {
            return Err(Error::invalid("objective weights must be nonnegative"));
        }
        if r.observation == ObservationKind::Projection
            && (!r.render_res_one.is_multiple_of(self.teacher.resolution) || !r.render_res_two.is_multiple_of(self.teacher.resolution))
        {
            return Err(Error::invalid("render resolutions must be multiples of teacher.resolution"));
        }
        self.curriculum.validate(self.teacher.diffusion_steps)?;
        self.sds.validate()?;
        if self.teacher.hidden.is_empty() || self.teacher.batch_size == 0 {
            return Err(Error::invalid("teacher needs hidden layers and a positive batch size"));
        }
        if !(0.0..=1.0).contains(&self.teacher.cond_dropout) {
            return Err(Error::invalid("teacher.cond_dropout must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curriculum::TimestepSchedule;

    #[test]
    fn defaults_round_trip_through_echo() {
        let cfg = RunConfig::default();
        let text = cfg.echo();
        assert!(text.contains("[curriculum]\nschedule = annealed\n"));
        assert!(text.contains("step_len = auto"));
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn parses_sections_comments_and_lists() {
        let cfg = RunConfig::parse(
            "# header\n[run]\nseed = 7 # trailing\niterations_one = 10\n\n[curriculum]\nschedule = random\nstep_len = 5\n[teacher]\nhidden = 32, 16\n",
        )
        .unwrap();
        assert_eq!(cfg.run.seed, 7);
        assert_eq!(cfg.run.iterations_one, 10);
        assert_eq!(cfg.curriculum.schedule, TimestepSchedule::Random);
        assert_eq!(cfg.curriculum.step_len, Some(5));
        assert_eq!(cfg.teacher.hidden, vec![32, 16]);
        assert_eq!(RunConfig::parse(&cfg.echo()).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_line() {
        for (text, line) in [
            ("[run]\nseed = 1\nbogus = 2\n", 3),
            ("[run]\nseed = x\n", 2),
            ("seed = 1\n", 1),
            ("[run\n", 1),
            ("[run]\njust words\n", 2),
            ("[nope]\nseed = 1\n", 2),
        ] {
            match RunConfig::parse(text) {
                Err(Error::Config { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn failed_apply_leaves_config_untouched() {
        let mut cfg = RunConfig::default();
        assert!(cfg.apply("[run]\nseed = 5\nreference_prob = 2\n").is_err());
        assert_eq!(cfg, RunConfig::default());
    }
}
