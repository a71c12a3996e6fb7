use rand::seq::SliceRandom;
use rand::Rng;

use super::{Condition, ConditionKind, DenoiserModel};
use crate::diffusion::NoiseSchedule;
use crate::error::{check_len, Error, Result};
use crate::optim::{AdamConfig, AdamW};
use crate::rng::{normal_vec, SeedStreams, Stream};

/// Clean samples with the condition each one was drawn under.
#[derive(Debug, Clone, Default)]
pub struct TeacherDataset {
    dim: usize,
    samples: Vec<Vec<f64>>,
    conds: Vec<Condition>,
}

impl TeacherDataset {
    pub fn new(samples: Vec<Vec<f64>>, conds: Vec<Condition>) -> Result<Self> {
        if samples.len() != conds.len() {
            return Err(Error::invalid("every sample needs a condition"));
        }
        let dim = samples.first().map_or(0, Vec::len);
        if samples.iter().any(|s| s.len() != dim) {
            return Err(Error::invalid("samples must share one dimension"));
        }
        Ok(Self { dim, samples, conds })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&self, i: usize) -> (&[f64], &Condition) {
        (&self.samples[i], &self.conds[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], &Condition)> {
        self.samples.iter().map(Vec::as_slice).zip(&self.conds)
    }
}

#[derive(Debug, Clone)]
pub struct TrainExample {
    pub x0: Vec<f64>,
    pub t: usize,
    pub noise: Vec<f64>,
    pub cond: Condition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Probability of replacing the condition by `Condition::None`.
    pub cond_dropout: f64,
    pub adam: AdamConfig,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            epochs: 40,
            batch_size: 128,
            cond_dropout: 0.1,
            adam: AdamConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps: usize,
    pub epoch_losses: Vec<f64>,
    /// Held-out epsilon MSE at `t = T/2` before and after training.
    pub initial_heldout: f64,
    pub final_heldout: f64,
}

/// One optimizer update on the denoising objective
/// `mean ||eps_model(alpha_t x0 + sigma_t eps; t, y) - eps||^2`. Returns the
/// loss measured before the update.
pub fn train_step(
    model: &mut DenoiserModel,
    batch: &[TrainExample],
    sched: &NoiseSchedule,
    opt: &mut AdamW,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("training batch is empty"));
    }
    let dim = model.data_dim_inner();
    let in_dim = model.input_dim();
    let mut inputs = vec![0.0; batch.len() * in_dim];
    let mut xt = vec![0.0; dim];
    for (ex, row) in batch.iter().zip(inputs.chunks_exact_mut(in_dim)) {
        check_len(dim, ex.x0.len())?;
        check_len(dim, ex.noise.len())?;
        if ex.t > sched.steps() {
            return Err(Error::invalid(format!("time step {} outside schedule", ex.t)));
        }
        let (a, s) = (sched.alpha(ex.t), sched.sigma(ex.t));
        for ((v, x), n) in xt.iter_mut().zip(&ex.x0).zip(&ex.noise) {
            *v = a * x + s * n;
        }
        model.encode_input(&xt, ex.t, &ex.cond, row)?;
    }

    let cache = model.forward_batch(inputs, batch.len())?;
    let scale = 1.0 / (batch.len() * dim) as f64;
    let mut loss = 0.0;
    let mut d_out = Vec::with_capacity(batch.len() * dim);
    for (out, ex) in cache.output().chunks_exact(dim).zip(batch) {
        for (o, n) in out.iter().zip(&ex.noise) {
            let r = o - n;
            loss += r * r;
            d_out.push(2.0 * r * scale);
        }
    }
    loss *= scale;
    if !loss.is_finite() {
        return Err(Error::TrainingDivergence {
            iteration: opt.steps_taken() as usize,
            loss,
        });
    }

    let (grads, _) = model.backward_batch(&cache, &d_out, false)?;
    opt.step(model.params_mut(), &grads).map_err(|e| match e {
        Error::NonFiniteGradient => Error::TrainingDivergence {
            iteration: opt.steps_taken() as usize,
            loss,
        },
        other => other,
    })?;
    model.quantize();
    Ok(loss)
}

/// Mean epsilon MSE of `model` on `data` at a fixed step, using the
/// conditions stored in the dataset.
pub fn denoising_loss<R: Rng + ?Sized>(
    model: &DenoiserModel,
    data: &TeacherDataset,
    t: usize,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("evaluation set is empty"));
    }
    let dim = data.dim();
    let in_dim = model.input_dim();
    let mut inputs = vec![0.0; data.len() * in_dim];
    let mut noises = Vec::with_capacity(data.len() * dim);
    for ((x0, cond), row) in data.iter().zip(inputs.chunks_exact_mut(in_dim)) {
        let n = normal_vec(rng, dim);
        let xt: Vec<f64> = x0
            .iter()
            .zip(&n)
            .map(|(x, e)| sched.alpha(t) * x + sched.sigma(t) * e)
            .collect();
        model.encode_input(&xt, t, cond, row)?;
        noises.extend(n);
    }
    let cache = model.forward_batch(inputs, data.len())?;
    let sq: f64 = cache
        .output()
        .iter()
        .zip(&noises)
        .map(|(o, n)| (o - n).powi(2))
        .sum();
    Ok(sq / noises.len() as f64)
}

/// Trains a fresh teacher on `data`, dropping conditions with
/// `cfg.cond_dropout` so the same network also answers unconditional queries.
pub fn train_teacher(
    data: &TeacherDataset,
    heldout: &TeacherDataset,
    cond_kind: ConditionKind,
    cfg: &TeacherTrainConfig,
    sched: &NoiseSchedule,
    seeds: SeedStreams,
) -> Result<(DenoiserModel, TrainReport)> {
    if data.is_empty() {
        return Err(Error::invalid("teacher dataset is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    if !(0.0..=1.0).contains(&cfg.cond_dropout) {
        return Err(Error::invalid("cond_dropout must lie in [0, 1]"));
    }
    let mut init_rng = seeds.stream(Stream::TeacherInit);
    let mut batch_rng = seeds.stream(Stream::TeacherBatch);
    let mut model = DenoiserModel::new(data.dim(), &cfg.hidden, cond_kind, sched.steps(), &mut init_rng)?;

    let eval_t = sched.steps() / 2;
    let eval_set = if heldout.is_empty() { data } else { heldout };
    let initial_heldout = denoising_loss(&model, eval_set, eval_t, sched, &mut seeds.stream(Stream::Eval))?;

    let mut opt = AdamW::new(cfg.adam);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut batch_rng);
        let mut total = 0.0;
        let mut count = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<TrainExample> = chunk
                .iter()
                .map(|&i| {
                    let (x0, cond) = data.sample(i);
                    let cond = if batch_rng.random::<f64>() < cfg.cond_dropout {
                        Condition::None
                    } else {
                        *cond
                    };
                    TrainExample {
                        x0: x0.to_vec(),
                        t: batch_rng.random_range(1..=sched.steps()),
                        noise: normal_vec(&mut batch_rng, data.dim()),
                        cond,
                    }
                })
                .collect();
            total += train_step(&mut model, &batch, sched, &mut opt)?;
            count += 1;
            steps += 1;
        }
        epoch_losses.push(total / count as f64);
    }

    let final_heldout = denoising_loss(&model, eval_set, eval_t, sched, &mut seeds.stream(Stream::Eval))?;
    Ok((
        model,
        TrainReport {
            steps,
            epoch_losses,
            initial_heldout,
            final_heldout,
        },
    ))
}

impl DenoiserModel {
    pub(crate) fn data_dim_inner(&self) -> usize {
        *self.widths().last().expect("model has an output layer")
    }
}
