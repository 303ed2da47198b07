//! The simple noise-prediction objective, AdamW, the epoch loop and
//! checkpoint persistence.

mod checkpoint;
mod loss;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};
pub use loss::{
    diffuse_batch, draw_noise, loss_on_tape, loss_simple, loss_simple_with, make_train_batch, masked_mse, BoundModel,
    NoiseDraw, TrainBatch,
};

use log::info;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::model::{DiffusionModel, ModelConfig};
use crate::scalar::Scalar;
use crate::sketch::{to_velocities, Sketch};
use crate::toy::DatasetSplit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub weight_decay: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            lr0: 6e-3,
            lr_decay: 0.9997,
            weight_decay: 1e-4,
            grad_clip: Some(1.0),
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.weight_decay < 0.0 || self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("weight decay must be >= 0 and the clip norm > 0".into()));
        }
        Ok(())
    }
}

/// Learning rate for epoch `e`: `lr0 * decay^e`.
pub fn lr_at_epoch(e: usize, config: &TrainConfig) -> f64 {
    config.lr0 * config.lr_decay.powi(e as i32)
}

/// Decoupled-weight-decay Adam over a list of parameter stores.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Array2<F>>,
    v: Vec<Array2<F>>,
    t: i32,
}

impl<F: Scalar> AdamW<F> {
    pub fn new(model: &DiffusionModel<F>, weight_decay: f64) -> Self {
        let zeros: Vec<Array2<F>> =
            model.stores().iter().flat_map(|s| s.values().iter().map(|v| Array2::zeros(v.raw_dim()))).collect();
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, m: zeros.clone(), v: zeros, t: 0 }
    }

    /// Applies one update; `grads` follows the flattened store order.
    pub fn step(&mut self, model: &mut DiffusionModel<F>, grads: &[Array2<F>], lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 / (1.0 - b1.powi(self.t));
        let c2 = 1.0 / (1.0 - b2.powi(self.t));
        let params = model.stores_mut().into_iter().flat_map(|s| s.values_mut().iter_mut());
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                let gf = g.as_f64();
                let mf = b1 * m.as_f64() + (1.0 - b1) * gf;
                let vf = b2 * v.as_f64() + (1.0 - b2) * gf * gf;
                *m = F::of(mf);
                *v = F::of(vf);
                let upd = (mf * c1) / ((vf * c2).sqrt() + self.eps) + self.weight_decay * p.as_f64();
                *p = F::of(p.as_f64() - lr * upd);
            });
        }
    }
}

/// Scales `grads` in place so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm<F: Scalar>(grads: &mut [Array2<F>], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g.iter().map(|x| x.as_f64().powi(2)).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = F::of(max_norm / norm);
        for g in grads.iter_mut() {
            g.mapv_inplace(|x| x * k);
        }
    }
    norm
}

/// Loss and flattened parameter gradients for one batch and draw.
pub fn loss_and_grads<F: Scalar>(
    model: &DiffusionModel<F>,
    batch: &TrainBatch<F>,
    draw: &NoiseDraw<F>,
) -> Result<(F, Vec<Array2<F>>)> {
    let mut tape = Tape::new();
    let vars = BoundModel::bind(model, &mut tape);
    let root = loss_on_tape(model, &mut tape, &vars, batch, draw)?;
    let loss = tape.scalar(root);
    let mut g = tape.backward(root);
    let shapes = model.stores().into_iter().flat_map(|s| s.values().iter().map(|v| v.dim()));
    let all_vars = vars.estimator.iter().chain(&vars.encoder);
    Ok((loss, all_vars.zip(shapes).map(|(&v, sh)| g.take_or_zeros(v, sh)).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutput<F> {
    pub last: Checkpoint<F>,
    pub best: Checkpoint<F>,
}

/// Standard deviation of the xy velocity components over `sketches`.
pub fn velocity_std(sketches: &[Sketch]) -> Result<f64> {
    let vals: Vec<f64> = sketches
        .iter()
        .flat_map(|s| to_velocities(s).elements.into_iter().flat_map(|e| [e.vx, e.vy]))
        .collect();
    if vals.is_empty() {
        return Err(Error::Data("no training sketches".into()));
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
    if !(var > 0.0) {
        return Err(Error::Data("training velocities have zero variance".into()));
    }
    Ok(var.sqrt())
}

/// Fresh model sized for `data`.
pub fn init_model<F: Scalar>(data: &DatasetSplit, config: &TrainConfig) -> Result<DiffusionModel<F>> {
    let scale = velocity_std(&data.train.sketches)?;
    let train_len = data.train.sketches.iter().map(Sketch::len).max().unwrap_or(0);
    DiffusionModel::new(&config.model, scale, train_len, config.seed)
}

const VALIDATION_STREAM: u64 = 0x5eed_0f_7a11;

fn mean_loss<F: Scalar>(model: &DiffusionModel<F>, sketches: &[Sketch], batch_size: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for chunk in sketches.chunks(batch_size) {
        let batch = make_train_batch(model, chunk)?;
        total += loss_simple(model, &batch, &mut rng)?.as_f64() * chunk.len() as f64;
    }
    Ok(total / sketches.len() as f64)
}

/// Validation objective with a fixed noise stream, comparable across epochs.
pub fn validation_loss<F: Scalar>(model: &DiffusionModel<F>, sketches: &[Sketch], batch_size: usize, seed: u64) -> Result<f64> {
    mean_loss(model, sketches, batch_size, seed ^ VALIDATION_STREAM)
}

pub fn fit<F: Scalar>(data: &DatasetSplit, config: &TrainConfig) -> Result<FitOutput<F>> {
    fit_with(data, config, |_, _| Ok(()))
}

/// Trains from a fresh initialisation. `observer` sees every finished
/// epoch's record and checkpoint, so persisting there keeps the last
/// finite state if a later epoch diverges.
pub fn fit_with<F: Scalar>(
    data: &DatasetSplit,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord, &Checkpoint<F>) -> Result<()>,
) -> Result<FitOutput<F>> {
    config.validate()?;
    if data.train.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let mut model = init_model::<F>(data, config)?;
    let mut opt = AdamW::new(&model, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let val_set = if data.val.is_empty() { &data.train.sketches } else { &data.val.sketches };

    let mut last = Checkpoint { model: model.clone(), train: *config, epoch: 0, history: Vec::new() };
    let mut best = last.clone();
    let mut best_val = f64::INFINITY;
    for epoch in 0..config.epochs {
        let lr = lr_at_epoch(epoch, config);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for idx in order.chunks(config.batch_size) {
            let sketches: Vec<Sketch> = idx.iter().map(|&i| data.train.sketches[i].clone()).collect();
            let batch = make_train_batch(&model, &sketches)?;
            let (b, l, _) = batch.v0.dim();
            let draw = draw_noise((b, l), model.schedule(), &mut rng);
            let (loss, mut grads) = loss_and_grads(&model, &batch, &draw)?;
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
                return Err(Error::Diverged { epoch, msg: format!("non-finite loss {loss}") });
            }
            if let Some(c) = config.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            opt.step(&mut model, &grads, lr);
            total += loss.as_f64() * b as f64;
        }
        let train_loss = total / data.train.len() as f64;
        let val_loss = validation_loss(&model, val_set, config.batch_size, config.seed)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch, msg: format!("non-finite validation loss {val_loss}") });
        }
        let record = EpochRecord { epoch, lr, train_loss, val_loss };
        info!("epoch {epoch}: lr {lr:.3e} train {train_loss:.4} val {val_loss:.4}");
        last.history.push(record);
        last.model = model.clone();
        last.epoch = epoch + 1;
        if val_loss < best_val {
            best_val = val_loss;
            best = last.clone();
        }
        observer(&record, &last)?;
    }
    Ok(FitOutput { last, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ConditionMode;
    use crate::nn::{EstimatorConfig, SequenceEncoderConfig, SetEncoderConfig};
    use crate::schedule::ScheduleConfig;
    use crate::toy::{generate_toy_dataset, ToyKind};

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::default();
        assert_eq!(lr_at_epoch(0, &c), 6e-3);
        assert!((lr_at_epoch(1, &c) - 5.9982e-3).abs() < 1e-12);
        // closed form: 6e-3 * exp(2310 * ln 0.9997)
        let expect = 6e-3 * (2310.0 * 0.9997f64.ln()).exp();
        assert!((lr_at_epoch(2310, &c) - expect).abs() < 1e-12);
        assert!((lr_at_epoch(2310, &c) - 3.0e-3).abs() < 1e-5);
    }

    fn tiny_config(mode: ConditionMode, epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            seed: 3,
            model: ModelConfig {
                mode,
                schedule: ScheduleConfig::linear(20),
                estimator: EstimatorConfig { hidden: 6, layers: 1, time_dim: 4, latent_dim: 0 },
                latent_dim: 4,
                sequence_encoder: SequenceEncoderConfig { hidden: 4, latent_dim: 4 },
                set_encoder: SetEncoderConfig { hidden: 6, blocks: 1, latent_dim: 4, points: 16 },
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let data = generate_toy_dataset(ToyKind::Circles, 20, 8, 0.0, 1).unwrap();
        let cfg = tiny_config(ConditionMode::None, 0);
        let out = fit::<f64>(&data, &cfg).unwrap();
        assert_eq!(out.last.model, init_model::<f64>(&data, &cfg).unwrap());
        assert!(out.last.history.is_empty());
    }

    #[test]
    fn fit_is_deterministic_for_every_mode() {
        let data = generate_toy_dataset(ToyKind::Polygons, 20, 10, 0.0, 2).unwrap();
        for mode in [ConditionMode::None, ConditionMode::SequenceEncoder, ConditionMode::SetEncoder] {
            let cfg = tiny_config(mode, 2);
            let a = fit::<f64>(&data, &cfg).unwrap();
            let b = fit::<f64>(&data, &cfg).unwrap();
            assert_eq!(a.last.history, b.last.history);
            assert_eq!(a.last.model, b.last.model);
            assert!(a.last.history.iter().all(|r| r.train_loss.is_finite()));
        }
    }

    #[test]
    fn small_step_decreases_batch_loss() {
        let data = generate_toy_dataset(ToyKind::Circles, 20, 8, 0.0, 5).unwrap();
        for seed in 0..20 {
            let mut cfg = tiny_config(ConditionMode::None, 0);
            cfg.seed = seed;
            let mut model = init_model::<f64>(&data, &cfg).unwrap();
            let batch = make_train_batch(&model, &data.train.sketches[..6]).unwrap();
            let draw = draw_noise((6, 8), model.schedule(), &mut ChaCha8Rng::seed_from_u64(seed));
            let (before, grads) = loss_and_grads(&model, &batch, &draw).unwrap();
            let mut opt = AdamW::new(&model, 0.0);
            opt.step(&mut model, &grads, 1e-4);
            let (after, _) = loss_and_grads(&model, &batch, &draw).unwrap();
            assert!(after < before, "seed {seed}: {before} -> {after}");
        }
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Array2::from_elem((2, 2), 3.0), Array2::from_elem((1, 1), 4.0)];
        let n = clip_global_norm(&mut g, 1.0);
        assert!((n - (36.0f64 + 16.0).sqrt()).abs() < 1e-12);
        let after: f64 = g.iter().map(|a| a.mapv(|x| x * x).sum()).sum::<f64>().sqrt();
        assert!((after - 1.0).abs() < 1e-12);
    }
}
