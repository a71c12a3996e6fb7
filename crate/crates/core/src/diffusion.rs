//! Discrete-time diffusion: noise schedules, forward perturbation and the
//! deterministic DDIM reverse update.
//!
//! Samples are perturbed as `x_t = alpha_t * x_0 + sigma_t * eps`. Variance
//! preserving schedules satisfy `alpha_t^2 + sigma_t^2 = 1`; the
//! variance-exploding table keeps `alpha_t = 1` and is only meant for checking
//! identities written in that form.

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Squared-cosine signal curve with offset `s = 0.008`.
    Cosine,
    /// Betas linear from 1e-4 to 0.02, rescaled by `1000 / T`.
    LinearBeta,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "linear_beta" => Ok(Self::LinearBeta),
            other => Err(Error::invalid(format!("unknown schedule kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Cosine => "cosine",
            Self::LinearBeta => "linear_beta",
        })
    }
}

/// Tabulated `alpha_t`, `sigma_t` for `t = 0..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha: Vec<f64>,
    sigma: Vec<f64>,
    variance_preserving: bool,
}

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

impl NoiseSchedule {
    pub fn new(steps: usize, kind: ScheduleKind) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid(format!(
                "a schedule needs at least 2 time steps, got {steps}"
            )));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Cosine => {
                let f = |t: usize| {
                    let u = (t as f64 / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET);
                    (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                (1..=steps)
                    .map(|t| (1.0 - f(t) / f(t - 1)).clamp(0.0, MAX_BETA))
                    .collect()
            }
            ScheduleKind::LinearBeta => {
                let scale = 1000.0 / steps as f64;
                let (lo, hi) = (scale * 1e-4, (scale * 0.02).min(MAX_BETA));
                (0..steps)
                    .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
                    .collect()
            }
        };

        let mut alpha_bar = 1.0;
        let mut alpha = Vec::with_capacity(steps + 1);
        let mut sigma = Vec::with_capacity(steps + 1);
        alpha.push(1.0);
        sigma.push(0.0);
        for beta in betas {
            alpha_bar *= 1.0 - beta;
            alpha.push(alpha_bar.sqrt());
            sigma.push((1.0 - alpha_bar).sqrt());
        }
        Ok(Self {
            alpha,
            sigma,
            variance_preserving: true,
        })
    }

    /// `alpha_t = 1`, `sigma_t = sigma_max * t / T`.
    pub fn variance_exploding(steps: usize, sigma_max: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid(format!(
                "a schedule needs at least 2 time steps, got {steps}"
            )));
        }
        if !(sigma_max > 0.0 && sigma_max.is_finite()) {
            return Err(Error::invalid("sigma_max must be positive and finite"));
        }
        Ok(Self {
            alpha: vec![1.0; steps + 1],
            sigma: (0..=steps)
                .map(|t| sigma_max * t as f64 / steps as f64)
                .collect(),
            variance_preserving: false,
        })
    }

    /// Builds a schedule from explicit tables. `alpha` must start at 1 and be
    /// nonincreasing, `sigma` must start at 0 and be nondecreasing. The table
    /// counts as variance preserving when `alpha^2 + sigma^2 = 1` everywhere.
    pub fn from_tables(alpha: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        check_len(alpha.len(), sigma.len())?;
        if alpha.len() < 3 {
            return Err(Error::invalid("a schedule needs at least 2 time steps"));
        }
        if alpha[0] != 1.0 || sigma[0] != 0.0 {
            return Err(Error::invalid("tables must start at alpha = 1, sigma = 0"));
        }
        let finite = alpha.iter().chain(&sigma).all(|v| v.is_finite());
        let monotone = alpha.windows(2).all(|w| w[1] <= w[0] && w[1] >= 0.0)
            && sigma.windows(2).all(|w| w[1] >= w[0]);
        if !finite || !monotone {
            return Err(Error::invalid(
                "alpha must be nonincreasing and sigma nondecreasing",
            ));
        }
        let variance_preserving = alpha
            .iter()
            .zip(&sigma)
            .all(|(a, s)| (a * a + s * s - 1.0).abs() < 1e-9);
        Ok(Self {
            alpha,
            sigma,
            variance_preserving,
        })
    }

    /// Number of discrete steps `T`; valid indices are `0..=T`.
    pub fn steps(&self) -> usize {
        self.alpha.len() - 1
    }

    #[inline]
    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    #[inline]
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t]
    }

    pub fn is_variance_preserving(&self) -> bool {
        self.variance_preserving
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::invalid(format!(
                "time step {t} outside [0, {}]",
                self.steps()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisySample {
    pub data: Vec<f64>,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoisedEstimate {
    pub data: Vec<f64>,
    pub steps_used: usize,
}

pub fn perturb(x0: &[f64], t: usize, noise: &[f64], sched: &NoiseSchedule) -> Result<NoisySample> {
    check_len(x0.len(), noise.len())?;
    sched.check_t(t)?;
    let (a, s) = (sched.alpha(t), sched.sigma(t));
    Ok(NoisySample {
        data: x0.iter().zip(noise).map(|(x, n)| a * x + s * n).collect(),
        t,
    })
}

/// Single-step estimate `x0 = (x_t - sigma_t * eps) / alpha_t`.
pub fn eps_to_x0(x_t: &NoisySample, eps_hat: &[f64], sched: &NoiseSchedule) -> Result<DenoisedEstimate> {
    check_len(x_t.data.len(), eps_hat.len())?;
    sched.check_t(x_t.t)?;
    let (a, s) = (sched.alpha(x_t.t), sched.sigma(x_t.t));
    if a == 0.0 {
        return Err(Error::SingularSchedule { t: x_t.t });
    }
    Ok(DenoisedEstimate {
        data: x_t
            .data
            .iter()
            .zip(eps_hat)
            .map(|(x, e)| (x - s * e) / a)
            .collect(),
        steps_used: 1,
    })
}

/// Deterministic DDIM move from `x_t.t` to an earlier step `r`.
pub fn ddim_step(x_t: &NoisySample, eps_hat: &[f64], r: usize, sched: &NoiseSchedule) -> Result<NoisySample> {
    if r >= x_t.t {
        return Err(Error::invalid(format!(
            "ddim target {r} must precede the current step {}",
            x_t.t
        )));
    }
    let x0 = eps_to_x0(x_t, eps_hat, sched)?;
    let (a, s) = (sched.alpha(r), sched.sigma(r));
    Ok(NoisySample {
        data: x0.data.iter().zip(eps_hat).map(|(x, e)| a * x + s * e).collect(),
        t: r,
    })
}

/// Uniform sub-step grid from `t` down to 0 with at most `steps` moves.
pub fn ddim_timesteps(t: usize, steps: usize) -> Vec<usize> {
    let mut grid: Vec<usize> = (0..=steps).map(|i| t * (steps - i) / steps).collect();
    grid.dedup();
    grid
}

/// Runs a `steps`-long DDIM chain from `x_t` to an estimate of `x_0`.
///
/// `teacher(data, t)` returns the epsilon prediction; any condition or
/// guidance is captured by the closure. When `t < steps` the uniform grid
/// collapses duplicate steps and fewer teacher calls are made; `steps_used`
/// reports the calls actually performed.
pub fn ddim_denoise<F>(
    x_t: &NoisySample,
    mut teacher: F,
    steps: usize,
    sched: &NoiseSchedule,
) -> Result<DenoisedEstimate>
where
    F: FnMut(&[f64], usize) -> Result<Vec<f64>>,
{
    if steps < 1 {
        return Err(Error::invalid("ddim_denoise needs at least one step"));
    }
    sched.check_t(x_t.t)?;
    let grid = ddim_timesteps(x_t.t, steps);
    if grid.len() == 1 {
        let eps = teacher(&x_t.data, x_t.t)?;
        return eps_to_x0(x_t, &eps, sched);
    }

    let mut current = x_t.clone();
    let mut calls = 0;
    for &next in &grid[1..] {
        let eps = teacher(&current.data, current.t)?;
        check_len(current.data.len(), eps.len())?;
        calls += 1;
        current = ddim_step(&current, &eps, next, sched)?;
    }
    Ok(DenoisedEstimate {
        data: current.data,
        steps_used: calls,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Hand-built two-point table used by the scalar examples.
    fn table(alpha_t: f64, sigma_t: f64) -> NoiseSchedule {
        NoiseSchedule {
            alpha: vec![1.0, 0.95, alpha_t],
            sigma: vec![0.0, 0.312, sigma_t],
            variance_preserving: false,
        }
    }

    #[test]
    fn cosine_boundary_and_vp_identity() {
        let s = NoiseSchedule::new(1000, ScheduleKind::Cosine).unwrap();
        assert_eq!(s.steps(), 1000);
        assert_eq!(s.alpha(0), 1.0);
        assert_eq!(s.sigma(0), 0.0);
        for t in 0..=1000 {
            let a = s.alpha(t);
            let sg = s.sigma(t);
            assert!((a * a + sg * sg - 1.0).abs() < 1e-9, "t = {t}");
            assert!(a > 0.0 && a <= 1.0);
        }
        for t in 1..=1000 {
            assert!(s.alpha(t) <= s.alpha(t - 1));
            assert!(s.sigma(t) >= s.sigma(t - 1));
        }
    }

    #[test]
    fn linear_beta_sigma_strictly_increasing() {
        let s = NoiseSchedule::new(10, ScheduleKind::LinearBeta).unwrap();
        for t in 2..=10 {
            assert!(s.sigma(t) > s.sigma(t - 1), "t = {t}");
        }
        for t in 0..=10 {
            assert!((s.alpha(t).powi(2) + s.sigma(t).powi(2) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn too_few_steps_rejected() {
        assert!(matches!(
            NoiseSchedule::new(1, ScheduleKind::Cosine),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn schedule_is_deterministic() {
        let a = NoiseSchedule::new(257, ScheduleKind::Cosine).unwrap();
        let b = NoiseSchedule::new(257, ScheduleKind::Cosine).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perturb_examples() {
        let s = NoiseSchedule::new(100, ScheduleKind::Cosine).unwrap();
        let v = vec![0.3, -1.2, 2.0];
        assert_eq!(perturb(&v, 0, &[5.0, 5.0, 5.0], &s).unwrap().data, v);

        let n = vec![0.1, 0.2, -0.4];
        let out = perturb(&[0.0; 3], 40, &n, &s).unwrap();
        for (o, ni) in out.data.iter().zip(&n) {
            assert_eq!(*o, s.sigma(40) * ni);
        }

        let out = perturb(&[1.0], 2, &[0.2], &table(0.8, 0.6)).unwrap();
        assert!((out.data[0] - 0.92).abs() < 1e-12);

        assert!(matches!(
            perturb(&[1.0, 2.0], 1, &[0.0], &s),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn eps_to_x0_examples() {
        let s = NoiseSchedule::new(100, ScheduleKind::Cosine).unwrap();
        let v = vec![0.5, -0.25];
        let n = vec![1.5, 0.75];
        let xt = perturb(&v, 63, &n, &s).unwrap();
        let x0 = eps_to_x0(&xt, &n, &s).unwrap();
        for (a, b) in x0.data.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(x0.steps_used, 1);

        let ve = NoiseSchedule {
            alpha: vec![1.0, 1.0],
            sigma: vec![0.0, 0.5],
            variance_preserving: false,
        };
        let out = eps_to_x0(&NoisySample { data: vec![1.1], t: 1 }, &[0.3], &ve).unwrap();
        assert!((out.data[0] - 0.95).abs() < 1e-12);

        let at0 = NoisySample { data: vec![0.7, 0.1], t: 0 };
        assert_eq!(eps_to_x0(&at0, &[9.0, -9.0], &s).unwrap().data, at0.data);
    }

    #[test]
    fn eps_to_x0_rejects_vanishing_alpha() {
        let s = NoiseSchedule {
            alpha: vec![1.0, 0.0],
            sigma: vec![0.0, 1.0],
            variance_preserving: true,
        };
        let xt = NoisySample { data: vec![1.0], t: 1 };
        assert!(matches!(
            eps_to_x0(&xt, &[0.0], &s),
            Err(Error::SingularSchedule { t: 1 })
        ));
    }

    #[test]
    fn ddim_step_examples() {
        let s = table(0.8, 0.6);
        let xt = NoisySample { data: vec![0.92], t: 2 };
        // eps_to_x0 gives (0.92 - 0.6 * 0.2) / 0.8 = 1.0.
        let out = ddim_step(&xt, &[0.2], 1, &s).unwrap();
        assert!((out.data[0] - 1.0124).abs() < 1e-12);
        assert_eq!(out.t, 1);

        let to_zero = ddim_step(&xt, &[0.2], 0, &s).unwrap();
        let direct = eps_to_x0(&xt, &[0.2], &s).unwrap();
        assert_eq!(to_zero.data, direct.data);

        assert!(ddim_step(&xt, &[0.2], 2, &s).is_err());
        assert!(ddim_step(&xt, &[0.2], 5, &s).is_err());
    }

    #[test]
    fn ddim_step_with_true_noise_lands_on_forward_marginal() {
        let s = NoiseSchedule::new(1000, ScheduleKind::Cosine).unwrap();
        let x0 = vec![0.4, -0.9, 1.3];
        let n = vec![-0.3, 0.8, 0.05];
        let xt = perturb(&x0, 700, &n, &s).unwrap();
        let xr = ddim_step(&xt, &n, 250, &s).unwrap();
        let expected = perturb(&x0, 250, &n, &s).unwrap();
        for (a, b) in xr.data.iter().zip(&expected.data) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ddim_denoise_single_step_matches_eps_to_x0() {
        let s = NoiseSchedule::new(1000, ScheduleKind::Cosine).unwrap();
        let xt = NoisySample { data: vec![0.3, -0.4], t: 600 };
        let teacher = |x: &[f64], t: usize| Ok(x.iter().map(|v| 0.5 * v + t as f64 * 1e-4).collect());
        let chain = ddim_denoise(&xt, teacher, 1, &s).unwrap();
        let eps = teacher(&xt.data, 600).unwrap();
        let single = eps_to_x0(&xt, &eps, &s).unwrap();
        assert_eq!(chain, single);
    }

    #[test]
    fn ddim_denoise_zero_teacher_is_rescaling() {
        let s = NoiseSchedule::new(1000, ScheduleKind::Cosine).unwrap();
        let xt = NoisySample { data: vec![0.3, -0.4, 1.0], t: 800 };
        for steps in [1, 2, 5, 17] {
            let out = ddim_denoise(&xt, |x: &[f64], _| Ok(vec![0.0; x.len()]), steps, &s).unwrap();
            for (o, x) in out.data.iter().zip(&xt.data) {
                assert!((o - x / s.alpha(800)).abs() < 1e-9);
            }
            assert_eq!(out.steps_used, steps);
        }
        assert!(ddim_denoise(&xt, |x: &[f64], _| Ok(vec![0.0; x.len()]), 0, &s).is_err());
    }

    #[test]
    fn short_chains_collapse_duplicate_steps() {
        assert_eq!(ddim_timesteps(2, 4), vec![2, 1, 0]);
        assert_eq!(ddim_timesteps(800, 4), vec![800, 600, 400, 200, 0]);
        assert_eq!(ddim_timesteps(0, 3), vec![0]);
    }

    proptest! {
        #[test]
        fn round_trip_perturb_then_invert(
            t in 0usize..=1000,
            x in prop::collection::vec(-3.0f64..3.0, 1..8),
            seed in 0u64..1000,
        ) {
            let s = NoiseSchedule::new(1000, ScheduleKind::Cosine).unwrap();
            let t = t.min(999);
            let n: Vec<f64> = x.iter().enumerate().map(|(i, _)| ((seed + i as u64) as f64 * 0.37).sin()).collect();
            let xt = perturb(&x, t, &n, &s).unwrap();
            let back = eps_to_x0(&xt, &n, &s).unwrap();
            for (a, b) in back.data.iter().zip(&x) {
                // 1 / alpha_t grows to ~60 at t = 999, so compare relative to it.
                prop_assert!((a - b).abs() < 1e-9 * (1.0 / s.alpha(t)).max(1.0));
            }
        }

        #[test]
        fn chain_through_intermediate_step_is_consistent(
            t in 2usize..=1000,
            frac in 0.01f64..0.99,
            x in prop::collection::vec(-2.0f64..2.0, 1..6),
            e in -2.0f64..2.0,
        ) {
            let s = NoiseSchedule::new(1000, ScheduleKind::Cosine).unwrap();
            let r = ((t as f64 * frac) as usize).clamp(1, t - 1);
            let eps = vec![e; x.len()];
            let xt = NoisySample { data: x, t };
            let via = ddim_step(&ddim_step(&xt, &eps, r, &s).unwrap(), &eps, 0, &s).unwrap();
            let direct = ddim_step(&xt, &eps, 0, &s).unwrap();
            for (a, b) in via.data.iter().zip(&direct.data) {
                prop_assert!((a - b).abs() < 1e-9 * (1.0 / s.alpha(t)));
            }
        }
    }
}
