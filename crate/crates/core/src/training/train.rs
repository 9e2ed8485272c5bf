use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{random_crop, AdamState, RainPair};
use crate::error::{invalid, Error, Result};
use crate::network::{forward_traced, loss_l1l2, save_weights, Model, Preset};
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Edge of the square training crops, a multiple of 32.
    pub crop: usize,
    pub batch: usize,
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Save a checkpoint to `out_dir` every this many iterations.
    pub checkpoint_every: Option<usize>,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            crop: 64,
            batch: 4,
            lr: 5e-4,
            epochs: 1,
            seed: 0,
            checkpoint_every: None,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    /// Defaults with the learning rate suited to `preset`.
    pub fn for_preset(preset: Preset) -> Self {
        let (crop, lr) = match preset {
            Preset::Toy => (32, 1e-3),
            Preset::Small => (64, 5e-4),
            Preset::Large => (64, 1e-4),
        };
        Self {
            crop,
            lr,
            ..Self::default()
        }
    }

    pub fn iterations_per_epoch(&self, samples: usize) -> usize {
        samples.div_ceil(self.batch.max(1))
    }
}

/// Losses of one iteration, averaged over the batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
}

pub fn write_loss_csv(records: &[LossRecord], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Loss parts and parameter gradients for one sample, in layout order.
pub fn sample_gradients(model: &Model, pair: &RainPair) -> Result<(LossRecord, Vec<Tensor>)> {
    let tape = Tape::new();
    let vars = model.bind(&tape);
    let trace = forward_traced(&model.config, &vars, tape.leaf(pair.rainy.clone()))?;
    let loss = loss_l1l2(trace.output, &pair.clean)?;
    let mut grads = tape.backward_scalar(loss.total)?;
    let g = vars
        .values()
        .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros(&v.shape())))
        .collect();
    let value = |v: crate::tensor::Var<'_>| v.value().data()[0];
    let rec = LossRecord {
        iteration: 0,
        l1: value(loss.l1),
        l2: value(loss.l2),
        total: value(loss.total),
    };
    Ok((rec, g))
}

/// Mean loss and mean gradients over a batch. Samples run in parallel, each
/// on its own tape; the reduction is sequential so results do not depend on
/// the thread count.
pub fn batch_gradients(model: &Model, batch: &[RainPair]) -> Result<(LossRecord, Vec<Tensor>)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let parts: Vec<_> = batch.par_iter().map(|p| sample_gradients(model, p)).collect::<Result<_>>()?;
    let n = parts.len() as f64;
    let mut rec = LossRecord {
        iteration: 0,
        l1: 0.0,
        l2: 0.0,
        total: 0.0,
    };
    let mut grads: Vec<Tensor> = parts[0].1.iter().map(|g| Tensor::zeros(g.shape())).collect();
    for (r, g) in &parts {
        rec.l1 += r.l1 / n;
        rec.l2 += r.l2 / n;
        rec.total += r.total / n;
        for (acc, gi) in grads.iter_mut().zip(g) {
            acc.add_assign(gi);
        }
    }
    for g in &mut grads {
        *g = g.scale(1.0 / n);
    }
    Ok((rec, grads))
}

/// Minibatch Adam over random crops. Every epoch visits the samples in a
/// fresh shuffled order.
pub struct Trainer<'d> {
    pub model: Model,
    pub config: TrainConfig,
    pub adam: AdamState,
    pub log: Vec<LossRecord>,
    data: &'d [RainPair],
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl<'d> Trainer<'d> {
    pub fn new(model: Model, data: &'d [RainPair], config: TrainConfig) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if config.batch == 0 {
            return Err(invalid("train", "batch size must be positive"));
        }
        if config.checkpoint_every.is_some() && config.out_dir.is_none() {
            return Err(invalid("train", "checkpoints need an output directory"));
        }
        for p in data {
            let (h, w) = p.size();
            if h < config.crop || w < config.crop {
                return Err(invalid("train", format!("sample `{}` is {h}x{w}, smaller than the {}-pixel crop", p.id, config.crop)));
            }
        }
        Ok(Self {
            adam: AdamState::new(config.lr),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            config,
            log: Vec::new(),
            data,
            order: Vec::new(),
            cursor: 0,
            iteration: 0,
        })
    }

    /// Iterations completed so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn next_batch(&mut self) -> Result<Vec<RainPair>> {
        if self.cursor >= self.order.len() {
            self.order = (0..self.data.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.config.batch).min(self.order.len());
        let idx = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        idx.iter()
            .enumerate()
            .map(|(k, &i)| {
                let seed = self.config.seed ^ ((self.iteration as u64) << 20) ^ (k as u64).wrapping_mul(0x9E37_79B9);
                random_crop(&self.data[i], self.config.crop, seed)
            })
            .collect()
    }

    /// One optimizer update. A non-finite loss aborts before touching the
    /// weights.
    pub fn step(&mut self) -> Result<LossRecord> {
        let batch = self.next_batch()?;
        let (mut rec, grads) = batch_gradients(&self.model, &batch)?;
        rec.iteration = self.iteration;
        if !rec.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration: self.iteration,
                value: rec.total,
            });
        }
        self.adam.step(self.model.params.values_mut(), &grads)?;
        self.iteration += 1;
        self.log.push(rec);
        if let (Some(every), Some(dir)) = (self.config.checkpoint_every, &self.config.out_dir) {
            if every > 0 && self.iteration % every == 0 {
                std::fs::create_dir_all(dir)?;
                save_weights(&self.model, &dir.join(format!("checkpoint_{:06}.mcw", self.iteration)))?;
            }
        }
        Ok(rec)
    }

    /// Runs `epochs * ceil(n / batch)` iterations.
    pub fn run(&mut self) -> Result<()> {
        let total = self.config.epochs * self.config.iterations_per_epoch(self.data.len());
        for _ in 0..total {
            self.step()?;
        }
        Ok(())
    }
}

/// Trains `model` on `data` and returns it with the loss log.
pub fn train(model: Model, data: &[RainPair], config: TrainConfig) -> Result<(Model, Vec<LossRecord>)> {
    let mut t = Trainer::new(model, data, config)?;
    t.run()?;
    Ok((t.model, t.log))
}
