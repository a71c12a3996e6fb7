//! Minimal adequate diffusion step as a function of how far the input sits
//! from the data distribution.
//!
//! A sample `x*` drawn from a Gaussian mixture is displaced by a vector of
//! fixed length in a random direction, perturbed to step `t`, and the
//! teacher's noise prediction is compared with the mixture's exact one. A
//! learned teacher is only accurate near its training distribution, so larger
//! displacements need more noise before the estimate becomes usable.

use rand::Rng;

use crate::diffusion::{perturb, NoiseSchedule};
use crate::error::{Error, Result};
use crate::io::csv_float;
use crate::rng::{normal_vec, SeedStreams, Stream};
use crate::teacher::{
    train_teacher, Condition, ConditionKind, DenoiserModel, Denoiser, GaussianMixture, TeacherDataset,
    TeacherTrainConfig, TrainReport,
};

/// Smallest number of trials per cell.
pub const MIN_TRIALS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryRow {
    pub delta: f64,
    pub t: usize,
    /// Mean over trials of the per-coordinate squared error of the predicted
    /// noise against the exact one.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryCurve {
    pub deltas: Vec<f64>,
    pub t_grid: Vec<usize>,
    /// Row-major over `(delta, t)`.
    pub rows: Vec<TheoryRow>,
}

impl TheoryCurve {
    pub const HEADER: [&'static str; 3] = ["delta", "t", "error"];

    pub fn error(&self, delta_index: usize, t_index: usize) -> f64 {
        self.rows[delta_index * self.t_grid.len() + t_index].error
    }

    /// Mean error over the step grid at the first displacement, taken as the
    /// teacher's on-distribution floor. Meaningful when the first
    /// displacement is zero.
    pub fn floor(&self) -> f64 {
        let n = self.t_grid.len();
        (0..n).map(|j| self.error(0, j)).sum::<f64>() / n.max(1) as f64
    }

    /// Per displacement, the smallest grid step whose error is at most
    /// `epsilon`; `None` when no step qualifies.
    pub fn adequate_t(&self, epsilon: f64) -> Vec<Option<usize>> {
        (0..self.deltas.len())
            .map(|i| {
                (0..self.t_grid.len())
                    .find(|&j| self.error(i, j) <= epsilon)
                    .map(|j| self.t_grid[j])
            })
            .collect()
    }

    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| vec![csv_float(r.delta), r.t.to_string(), csv_float(r.error)])
            .collect()
    }
}

/// `true` when the adequate steps never decrease with the displacement. An
/// unbounded cell only allows unbounded cells after it.
pub fn is_nondecreasing(adequate: &[Option<usize>]) -> bool {
    adequate.windows(2).all(|w| match (w[0], w[1]) {
        (Some(a), Some(b)) => a <= b,
        (Some(_), None) | (None, None) => true,
        (None, Some(_)) => false,
    })
}

/// Renders adequate steps as CSV rows `delta, t` with `unbounded` for misses.
pub fn adequate_rows(deltas: &[f64], adequate: &[Option<usize>]) -> Vec<Vec<String>> {
    deltas
        .iter()
        .zip(adequate)
        .map(|(d, a)| {
            vec![
                csv_float(*d),
                a.map_or_else(|| "unbounded".to_string(), |t| t.to_string()),
            ]
        })
        .collect()
}

/// Measures the teacher's noise-prediction error on a `(delta, t)` grid.
///
/// Each trial reuses its sample, direction and noise across all cells, so
/// differences between cells are not masked by sampling noise.
pub fn theory_curve<R: Rng + ?Sized>(
    gmm: &GaussianMixture,
    teacher: &dyn Denoiser,
    deltas: &[f64],
    t_grid: &[usize],
    trials: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<TheoryCurve> {
    if trials < MIN_TRIALS {
        return Err(Error::invalid(format!("theory curve needs at least {MIN_TRIALS} trials")));
    }
    if deltas.is_empty() || t_grid.is_empty() {
        return Err(Error::invalid("theory curve needs displacements and time steps"));
    }
    if deltas.iter().any(|d| !(*d >= 0.0)) {
        return Err(Error::invalid("displacements must be nonnegative"));
    }
    if let Some(t) = t_grid.iter().find(|t| **t == 0 || **t > sched.steps()) {
        return Err(Error::invalid(format!("time step {t} outside [1, {}]", sched.steps())));
    }
    let dim = gmm.dim();
    let draws: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..trials)
        .map(|_| {
            let x = gmm.sample(rng);
            let mut dir = normal_vec(rng, dim);
            let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            dir.iter_mut().for_each(|v| *v /= len);
            (x, dir, normal_vec(rng, dim))
        })
        .collect();

    let mut rows = Vec::with_capacity(deltas.len() * t_grid.len());
    for &delta in deltas {
        for &t in t_grid {
            let mut total = 0.0;
            for (x, dir, noise) in &draws {
                let shifted: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + delta * d).collect();
                let xt = perturb(&shifted, t, noise, sched)?;
                let exact = gmm.eps(&xt, sched)?;
                let predicted = teacher.predict_eps(&xt.data, t, &Condition::None)?;
                total += predicted
                    .iter()
                    .zip(&exact)
                    .map(|(p, e)| (p - e).powi(2))
                    .sum::<f64>()
                    / dim as f64;
            }
            rows.push(TheoryRow {
                delta,
                t,
                error: total / trials as f64,
            });
        }
    }
    Ok(TheoryCurve {
        deltas: deltas.to_vec(),
        t_grid: t_grid.to_vec(),
        rows,
    })
}

/// Trains an unconditional teacher on `count` samples of the mixture.
pub fn train_mixture_teacher(
    gmm: &GaussianMixture,
    count: usize,
    cfg: &TeacherTrainConfig,
    sched: &NoiseSchedule,
    seeds: SeedStreams,
) -> Result<(DenoiserModel, TrainReport)> {
    let mut rng = seeds.stream(Stream::TeacherData);
    let samples: Vec<Vec<f64>> = (0..count).map(|_| gmm.sample(&mut rng)).collect();
    let data = TeacherDataset::new(samples, vec![Condition::None; count])?;
    let empty = TeacherDataset::default();
    train_teacher(&data, &empty, ConditionKind::None, cfg, sched, seeds)
}

/// The two-mode mixture used by the experiment: modes at `+-distance` along
/// the all-ones diagonal direction.
pub fn two_mode_mixture(dim: usize, distance: f64, std: f64) -> Result<GaussianMixture> {
    if dim == 0 {
        return Err(Error::invalid("mixture dimension must be positive"));
    }
    let c = distance / (dim as f64).sqrt();
    GaussianMixture::symmetric_pair(vec![c; dim], std)
}
