//! Training loop: Adam over mini-batches with a one-cycle learning-rate
//! schedule. The loop is deterministic given the seed — shuffling comes from
//! a dedicated stream, batches are visited in order, and per-sample gradients
//! inside a batch are reduced in index order even when computed in parallel.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{forward, gradient, init_params, loss, GnnConfig, GnnError, GnnParams, Task};
use crate::graph::TripartiteGraph;

/// Supervision target attached to one graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Label {
    /// 1.0 feasible, 0.0 infeasible.
    Feasibility(f64),
    Objective(f64),
    Solution(Vec<f64>),
}

impl Label {
    pub fn task(&self) -> Task {
        match self {
            Label::Feasibility(_) => Task::Feasibility,
            Label::Objective(_) => Task::Objective,
            Label::Solution(_) => Task::Solution,
        }
    }
}

/// One training example.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub graph: TripartiteGraph,
    pub label: Label,
}

/// Optimization hyperparameters. Adam moments and the one-cycle shape are
/// spelled out here so a run is reproducible from its recorded config alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub max_lr: f64,
    /// Fraction of steps spent ramping linearly up to `max_lr`.
    pub warmup_frac: f64,
    /// The ramp starts at `max_lr / div_factor`.
    pub div_factor: f64,
    /// Cosine decay ends at `max_lr / final_div_factor`.
    pub final_div_factor: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            seed: 0,
            max_lr: 1e-4,
            warmup_frac: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

/// One-cycle learning rate at `step` of `total_steps`: linear ramp to the
/// maximum over the warmup fraction, cosine decay to the floor afterwards.
pub fn one_cycle_lr(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    if total_steps <= 1 {
        return cfg.max_lr;
    }
    let t = step as f64 / (total_steps - 1) as f64;
    let start = cfg.max_lr / cfg.div_factor;
    let floor = cfg.max_lr / cfg.final_div_factor;
    if t <= cfg.warmup_frac {
        start + (cfg.max_lr - start) * (t / cfg.warmup_frac)
    } else {
        let u = (t - cfg.warmup_frac) / (1.0 - cfg.warmup_frac);
        floor + (cfg.max_lr - floor) * 0.5 * (1.0 + (std::f64::consts::PI * u).cos())
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: usize,
}

impl AdamState {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.adam_beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.adam_beta2.powi(self.step as i32);
        for k in 0..params.len() {
            self.m[k] = cfg.adam_beta1 * self.m[k] + (1.0 - cfg.adam_beta1) * grad[k];
            self.v[k] = cfg.adam_beta2 * self.v[k] + (1.0 - cfg.adam_beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Trained parameters plus per-epoch loss curves.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub params: GnnParams,
    /// Mean training loss per epoch, as seen during the pass.
    pub train_curve: Vec<f64>,
    /// Mean loss on the held-out set after each epoch, when provided.
    pub val_curve: Option<Vec<f64>>,
}

fn check_samples(cfg: &GnnConfig, samples: &[TrainSample]) -> Result<(), GnnError> {
    let mut size: Option<(usize, usize)> = None;
    for sample in samples {
        if sample.label.task() != cfg.task {
            return Err(GnnError::TaskMismatch(format!(
                "label for task {:?} in a {:?} run",
                sample.label.task(),
                cfg.task
            )));
        }
        let this = (sample.graph.num_vars(), sample.graph.num_cons());
        match size {
            None => size = Some(this),
            Some(expected) if expected != this => {
                return Err(GnnError::Shape(format!(
                    "heterogeneous problem sizes {expected:?} vs {this:?}"
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

/// Trains a fresh network on the samples. Bit-reproducible given the seed.
pub fn train(
    cfg: &GnnConfig,
    tcfg: &TrainConfig,
    samples: &[TrainSample],
    validation: Option<&[TrainSample]>,
) -> Result<TrainRun, GnnError> {
    if tcfg.batch_size == 0 {
        return Err(GnnError::Config("batch_size must be at least 1".into()));
    }
    check_samples(cfg, samples)?;
    if let Some(val) = validation {
        check_samples(cfg, val)?;
    }

    let mut params = init_params(cfg, tcfg.seed);
    let mut train_curve = Vec::with_capacity(tcfg.epochs);
    let mut val_curve = validation.map(|_| Vec::with_capacity(tcfg.epochs));
    if tcfg.epochs == 0 || samples.is_empty() {
        return Ok(TrainRun {
            params,
            train_curve,
            val_curve,
        });
    }

    let batches_per_epoch = samples.len().div_ceil(tcfg.batch_size);
    let total_steps = tcfg.epochs * batches_per_epoch;
    let mut flat = params.to_flat();
    let mut adam = AdamState::new(flat.len());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(tcfg.seed.wrapping_mul(0x9e3779b97f4a7c15));
    let mut step = 0usize;

    for _epoch in 0..tcfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            let lr = one_cycle_lr(step, total_steps, tcfg);
            // Per-sample gradients in parallel, reduced in batch order.
            let results: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&idx| {
                    let sample = &samples[idx];
                    let (loss_value, grad) = gradient(&params, &sample.graph, &sample.label)?;
                    Ok((loss_value, grad.to_flat()))
                })
                .collect::<Result<_, GnnError>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut mean_grad = vec![0.0; flat.len()];
            for (loss_value, grad) in &results {
                epoch_loss += loss_value;
                for (slot, g) in mean_grad.iter_mut().zip(grad) {
                    *slot += g * scale;
                }
            }
            adam.update(&mut flat, &mean_grad, lr, tcfg);
            params.load_flat(&flat)?;
            step += 1;
        }
        train_curve.push(epoch_loss / samples.len() as f64);
        if let (Some(curve), Some(val)) = (val_curve.as_mut(), validation) {
            curve.push(evaluate_loss(&params, val)?);
        }
    }

    Ok(TrainRun {
        params,
        train_curve,
        val_curve,
    })
}

/// Mean loss over a sample set.
pub fn evaluate_loss(params: &GnnParams, samples: &[TrainSample]) -> Result<f64, GnnError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|sample| {
            let out = forward(params, &sample.graph)?;
            loss(&out, &sample.label)
        })
        .collect::<Result<_, GnnError>>()?;
    Ok(losses.iter().sum::<f64>() / samples.len() as f64)
}

/// Classification accuracy for feasibility samples: logistic link with the
/// tie at probability 0.5 counted as feasible.
pub fn evaluate_accuracy(params: &GnnParams, samples: &[TrainSample]) -> Result<f64, GnnError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let hits: Vec<bool> = samples
        .par_iter()
        .map(|sample| {
            let target = match sample.label {
                Label::Feasibility(y) => y >= 0.5,
                _ => {
                    return Err(GnnError::TaskMismatch(
                        "accuracy needs feasibility labels".into(),
                    ))
                }
            };
            let out = forward(params, &sample.graph)?;
            let predicted = 1.0 / (1.0 + (-out[0]).exp()) >= 0.5;
            Ok(predicted == target)
        })
        .collect::<Result<_, GnnError>>()?;
    Ok(hits.iter().filter(|&&hit| hit).count() as f64 / samples.len() as f64)
}
