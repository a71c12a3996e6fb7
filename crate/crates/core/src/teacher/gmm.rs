use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Condition, Denoiser};
use crate::diffusion::{NoiseSchedule, NoisySample};
use crate::error::{check_len, Error, Result};

/// Isotropic Gaussian mixture with a closed-form score at every noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    stds: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, stds: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::invalid("a mixture needs at least one component"));
        }
        if means.len() != k || stds.len() != k {
            return Err(Error::invalid("weights, means and stds must have equal length"));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::invalid("all means must share a positive dimension"));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("weights must be nonnegative and sum to 1"));
        }
        if stds.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("component stds must be positive"));
        }
        Ok(Self {
            dim,
            weights,
            means,
            stds,
        })
    }

    /// Two equally weighted modes at `+center` and `-center`.
    pub fn symmetric_pair(center: Vec<f64>, std: f64) -> Result<Self> {
        let neg = center.iter().map(|v| -v).collect();
        Self::new(vec![0.5, 0.5], vec![center, neg], vec![std, std])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    /// `grad log p_t(x)` where `p_t` is the mixture pushed through the forward
    /// process at step `t`.
    pub fn score(&self, x: &[f64], t: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        check_len(self.dim, x.len())?;
        let (a, s) = (sched.alpha(t), sched.sigma(t));
        let d = self.dim as f64;

        let mut log_resp = Vec::with_capacity(self.components());
        let mut variances = Vec::with_capacity(self.components());
        for k in 0..self.components() {
            let var = a * a * self.stds[k] * self.stds[k] + s * s;
            let sq: f64 = x
                .iter()
                .zip(&self.means[k])
                .map(|(xi, mi)| (xi - a * mi).powi(2))
                .sum();
            let lw = if self.weights[k] > 0.0 {
                self.weights[k].ln() - 0.5 * d * var.ln() - 0.5 * sq / var
            } else {
                f64::NEG_INFINITY
            };
            log_resp.push(lw);
            variances.push(var);
        }
        let max = log_resp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let norm: f64 = log_resp.iter().map(|l| (l - max).exp()).sum();

        let mut score = vec![0.0; self.dim];
        for k in 0..self.components() {
            let r = (log_resp[k] - max).exp() / norm;
            if r == 0.0 {
                continue;
            }
            for ((g, xi), mi) in score.iter_mut().zip(x).zip(&self.means[k]) {
                *g -= r * (xi - a * mi) / variances[k];
            }
        }
        Ok(score)
    }

    /// Bayes-optimal noise prediction `-sigma_t * score`.
    pub fn eps(&self, x_t: &NoisySample, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        let s = sched.sigma(x_t.t);
        Ok(self
            .score(&x_t.data, x_t.t, sched)?
            .into_iter()
            .map(|g| -s * g)
            .collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        self.means[k]
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(rng);
                m + self.stds[k] * z
            })
            .collect()
    }

    /// Euclidean distance from `x` to the closest component mean.
    pub fn nearest_mode_distance(&self, x: &[f64]) -> f64 {
        self.means
            .iter()
            .map(|m| {
                m.iter()
                    .zip(x)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// The mixture's exact epsilon used as a teacher. Conditions are ignored.
#[derive(Debug, Clone)]
pub struct GmmOracle {
    pub gmm: GaussianMixture,
    pub sched: NoiseSchedule,
}

impl GmmOracle {
    pub fn new(gmm: GaussianMixture, sched: NoiseSchedule) -> Self {
        Self { gmm, sched }
    }
}

impl Denoiser for GmmOracle {
    fn data_dim(&self) -> usize {
        self.gmm.dim()
    }

    fn predict_eps(&self, x_t: &[f64], t: usize, _cond: &Condition) -> Result<Vec<f64>> {
        let s = self.sched.sigma(t);
        Ok(self
            .gmm
            .score(x_t, t, &self.sched)?
            .into_iter()
            .map(|g| -s * g)
            .collect())
    }
}
