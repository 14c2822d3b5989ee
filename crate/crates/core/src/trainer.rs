//! Mini-batch ADAM training of the recurrent predictor, and the
//! train-several-times-and-average evaluation protocol.

use std::io::Write;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::allocator::{monte_carlo, MonteCarloReport};
use crate::channel_sim::{ChannelMode, Dataset, SimConfig};
use crate::error::{argument, config, Error, Result};
use crate::losses::{bce, confusion, custom_loss, mae, mse, LossKind, LossValue, Weighting, DEFAULT_ALPHA};
use crate::predictor::{backward_into, forward, Architecture, OutagePredictor, PredictorParams};
use crate::rng::StreamKey;

/// Samples per gradient chunk. Chunks are reduced in index order, so the
/// summed gradient does not depend on the thread count.
const GRAD_CHUNK: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    /// Threshold inside the custom loss.
    pub q_th_train: f64,
    pub alpha: f64,
    /// Resource count inside the custom loss.
    pub resource_count: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub replicate_count: usize,
    /// Share of the windows held out for validation reporting.
    pub validation_fraction: f64,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_kind: LossKind::Custom,
            q_th_train: 0.5,
            alpha: DEFAULT_ALPHA,
            resource_count: 6,
            batch_size: 256,
            epochs: 5,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            replicate_count: 10,
            validation_fraction: 0.1,
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.loss_kind == LossKind::Custom && self.batch_size < 2 {
            return Err(config("batch_size must be at least 2 for the custom loss"));
        }
        if self.batch_size == 0 {
            return Err(config("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(config("beta1 and beta2 must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(config("epsilon must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.q_th_train) {
            return Err(config(format!("q_th_train must lie in [0, 1], got {}", self.q_th_train)));
        }
        if self.resource_count == 0 {
            return Err(config("resource_count must be at least 1"));
        }
        if self.replicate_count == 0 {
            return Err(config("replicate_count must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(config("validation_fraction must lie in [0, 1)"));
        }
        self.architecture.validate()
    }

    /// Loss value and its gradient with respect to each output of a batch.
    pub fn loss(&self, q: &[f64], b: &[bool]) -> Result<LossValue> {
        match self.loss_kind {
            LossKind::Custom => custom_loss(q, b, self.q_th_train, self.alpha, self.resource_count),
            LossKind::Bce => bce(q, b),
            LossKind::Mse => mse(q, b),
            LossKind::Mae => mae(q, b),
        }
    }
}

/// ADAM first and second moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Moments { m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One bias-corrected ADAM update; `step` counts from 1.
pub fn adam_step(params: &mut [f64], grads: &[f64], moments: &mut Moments, step: u64, cfg: &TrainConfig) -> Result<()> {
    let n = params.len();
    if grads.len() != n || moments.m.len() != n || moments.v.len() != n {
        return Err(argument("parameter, gradient and moment lengths differ"));
    }
    if step == 0 {
        return Err(argument("ADAM steps count from 1"));
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powf(step as f64);
    let c2 = 1.0 - b2.powf(step as f64);
    for i in 0..n {
        let g = grads[i];
        moments.m[i] = b1 * moments.m[i] + (1.0 - b1) * g;
        moments.v[i] = b2 * moments.v[i] + (1.0 - b2) * g * g;
        let m_hat = moments.m[i] / c1;
        let v_hat = moments.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Step-weighted validation counts at `q_th_train`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ValidationTally {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainHistory {
    pub loss_kind: LossKind,
    pub steps_per_epoch: usize,
    pub steps: Vec<StepRecord>,
    /// One entry per epoch; `None` when nothing was held out.
    pub validation: Vec<Option<ValidationTally>>,
    pub wall_clock: Duration,
}

impl TrainHistory {
    /// Writes one row per step. Validation counts appear on the last step
    /// of each epoch and are empty elsewhere.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "epoch", "loss_kind", "loss_value", "val_tp", "val_fp", "val_tn", "val_fn"])
            .map_err(csv_err)?;
        for (i, s) in self.steps.iter().enumerate() {
            let epoch_end = (i + 1) % self.steps_per_epoch == 0;
            let val = if epoch_end { self.validation.get(s.epoch).copied().flatten() } else { None };
            let cells: [String; 4] = match val {
                Some(v) => [v.tp, v.fp, v.tn, v.fn_].map(|c| c.to_string()),
                None => Default::default(),
            };
            let row = [s.step.to_string(), s.epoch.to_string(), self.loss_kind.to_string(), s.loss.to_string()];
            w.write_record(row.iter().chain(&cells)).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("{other:?}")),
    }
}

fn batch_hash(indices: &[usize]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &i in indices {
        for byte in (i as u64).to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Summed parameter gradient of a batch plus its loss value.
pub fn batch_gradient(
    params: &PredictorParams,
    cfg: &TrainConfig,
    inputs: &[&[Complex64]],
    labels: &[bool],
) -> Result<(f64, Vec<f64>)> {
    let forwards = inputs.par_iter().map(|w| forward(params, w)).collect::<Result<Vec<_>>>()?;
    let q: Vec<f64> = forwards.iter().map(|f| f.0).collect();
    let loss = cfg.loss(&q, labels)?;
    let partial = forwards
        .par_chunks(GRAD_CHUNK)
        .zip(loss.grad.par_chunks(GRAD_CHUNK))
        .map(|(fs, gs)| {
            let mut acc = vec![0.0; params.values.len()];
            for ((_, cache), &g) in fs.iter().zip(gs) {
                backward_into(params, cache, g, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut grad = vec![0.0; params.values.len()];
    for p in &partial {
        for (a, b) in grad.iter_mut().zip(p) {
            *a += b;
        }
    }
    Ok((loss.value, grad))
}

fn validation_tally(params: &PredictorParams, data: &Dataset, idx: &[usize], q_th: f64) -> Result<ValidationTally> {
    let q = idx.par_iter().map(|&i| params.predict(&data.windows[i].input)).collect::<Result<Vec<_>>>()?;
    let b: Vec<bool> = idx.iter().map(|&i| data.windows[i].label).collect();
    let t = confusion(&q, &b, q_th, Weighting::Heaviside)?;
    Ok(ValidationTally { tp: t.tp as usize, fp: t.fp as usize, tn: t.tn as usize, fn_: t.fn_ as usize })
}

/// Trains a predictor from `cfg.seed`.
///
/// The held-out split, the initial weights and each epoch's shuffle come
/// from separate named streams of the seed. The last batch of an epoch may
/// be smaller than `batch_size`; for the custom loss a trailing batch of a
/// single window is merged into the previous one.
pub fn train(cfg: &TrainConfig, data: &Dataset) -> Result<(PredictorParams, TrainHistory)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(argument("cannot train on an empty dataset"));
    }
    let started = Instant::now();
    let key = StreamKey::new(cfg.seed);

    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut key.named("split").rng());
    let n_val = ((data.len() as f64) * cfg.validation_fraction).floor() as usize;
    let n_val = n_val.min(data.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    if cfg.loss_kind == LossKind::Custom && train_idx.len() < 2 {
        return Err(argument("the custom loss needs at least 2 training windows"));
    }

    let mut batches: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    while start < train_idx.len() {
        let end = (start + cfg.batch_size).min(train_idx.len());
        batches.push((start, end));
        start = end;
    }
    if cfg.loss_kind == LossKind::Custom && batches.len() > 1 && batches[batches.len() - 1].1 - batches[batches.len() - 1].0 < 2 {
        let last = batches.pop().unwrap();
        batches.last_mut().unwrap().1 = last.1;
    }

    let mut params = PredictorParams::init(cfg.architecture, &mut key.named("init").rng())?;
    let mut moments = Moments::zeros(params.values.len());
    let mut steps = Vec::with_capacity(cfg.epochs * batches.len());
    let mut validation = Vec::with_capacity(cfg.epochs);
    let shuffle_key = key.named("shuffle");
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut shuffle_key.child(epoch as u64).rng());
        for &(s, e) in &batches {
            let idx = &train_idx[s..e];
            let inputs: Vec<&[Complex64]> = idx.iter().map(|&i| data.windows[i].input.as_slice()).collect();
            let labels: Vec<bool> = idx.iter().map(|&i| data.windows[i].label).collect();
            let (loss, grad) = batch_gradient(&params, cfg, &inputs, &labels)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite { step, batch_hash: batch_hash(idx) });
            }
            step += 1;
            adam_step(&mut params.values, &grad, &mut moments, step as u64, cfg)?;
            steps.push(StepRecord { step: step - 1, epoch, loss });
        }
        validation.push(if val_idx.is_empty() {
            None
        } else {
            Some(validation_tally(&params, data, val_idx, cfg.q_th_train)?)
        });
    }
    if !params.is_finite() {
        return Err(Error::NonFinite { step, batch_hash: 0 });
    }
    let history = TrainHistory {
        loss_kind: cfg.loss_kind,
        steps_per_epoch: batches.len(),
        steps,
        validation,
        wall_clock: started.elapsed(),
    };
    Ok((params, history))
}

/// Mean and spread of a set of per-replicate values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dispersion {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    /// Sample standard deviation; 0 for a single value.
    pub stddev: f64,
}

impl Dispersion {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(argument("no values to summarize"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        Ok(Dispersion {
            mean,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            stddev: if values.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 },
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainedReplicate {
    pub seed: u64,
    pub params: PredictorParams,
    pub history: TrainHistory,
}

/// Trains `replicate_count` predictors with seeds `seed, seed + 1, ...`.
pub fn train_replicates(cfg: &TrainConfig, data: &Dataset) -> Result<Vec<TrainedReplicate>> {
    cfg.validate()?;
    (0..cfg.replicate_count as u64)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.seed.wrapping_add(r);
            let (params, history) = train(&TrainConfig { seed, ..cfg.clone() }, data)?;
            Ok(TrainedReplicate { seed, params, history })
        })
        .collect()
}

/// How trained predictors are scored.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub sim: SimConfig,
    pub mode: ChannelMode,
    pub q_th: f64,
    pub n_episodes: usize,
    /// Every replicate is scored on the same episodes drawn from this seed.
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct ReplicateEval {
    pub replicates: Vec<TrainedReplicate>,
    pub reports: Vec<MonteCarloReport>,
    pub outage: Dispersion,
}

/// Trains every replicate and scores each with [`monte_carlo`].
pub fn replicate_train_eval(cfg: &TrainConfig, data: &Dataset, eval: &EvalConfig) -> Result<ReplicateEval> {
    let replicates = train_replicates(cfg, data)?;
    let key = StreamKey::new(eval.seed);
    let reports = replicates
        .iter()
        .map(|r| monte_carlo(&eval.sim, &r.params, eval.q_th, eval.n_episodes, eval.mode, key))
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = reports.iter().map(|r| r.outage.value).collect();
    Ok(ReplicateEval { replicates, reports, outage: Dispersion::of(&values)? })
}
