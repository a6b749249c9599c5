//! Adam training with clipping, best-dev selection and early stopping.

use std::fmt::Write as _;

use cascade_core::dataset::{EncodedExample, Task, PAD};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forward::{argmax, Batch, DecodeMode, Noise};
use crate::graph::{Grads, Graph, Var};
use crate::loss::LossBundle;
use crate::model::Cascade;
use crate::params::ParamStore;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    /// Epochs without dev improvement before stopping; `None` never stops early.
    pub patience: Option<usize>,
    /// Probability of feeding the gold previous symbol during training.
    pub teacher_forcing: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            clip_norm: 5.0,
            patience: Some(5),
            teacher_forcing: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("global loss became {loss} in epoch {epoch}")]
    Diverged { epoch: usize, loss: f64 },
}

impl TrainError {
    pub fn code(&self) -> &'static str {
        match self {
            TrainError::EmptyTrainSet => "EMPTY_TRAIN_SET",
            TrainError::Diverged { .. } => "DIVERGED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBundle,
    pub dev: Option<LossBundle>,
}

impl EpochRecord {
    /// The loss used for model selection.
    pub fn selection_loss(&self) -> f64 {
        self.dev.as_ref().unwrap_or(&self.train).global
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    /// Row 0 is measured before the first update.
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    /// Tab-separated log, one row per epoch.
    pub fn to_tsv(&self, tasks: &[Task]) -> String {
        let mut out = String::from("epoch");
        for t in tasks {
            write!(out, "\ttrain_{t}").unwrap();
        }
        out.push_str("\ttrain_global");
        for t in tasks {
            write!(out, "\tdev_{t}").unwrap();
        }
        out.push_str("\tdev_global\n");
        for r in &self.epochs {
            write!(out, "{}", r.epoch).unwrap();
            for t in tasks {
                write!(out, "\t{:.6}", r.train.get(*t).unwrap_or(0.0)).unwrap();
            }
            write!(out, "\t{:.6}", r.train.global).unwrap();
            for t in tasks {
                match &r.dev {
                    Some(d) => write!(out, "\t{:.6}", d.get(*t).unwrap_or(0.0)).unwrap(),
                    None => out.push_str("\t-"),
                }
            }
            match &r.dev {
                Some(d) => writeln!(out, "\t{:.6}", d.global).unwrap(),
                None => out.push_str("\t-\n"),
            }
        }
        out
    }
}

/// Returned by the per-epoch callback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ParamStore, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .entries()
            .iter()
            .map(|e| vec![0.0; e.tensor.len()])
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &Grads) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let Some(g) = &grads.0[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, g), m), v) in params
                .tensor_mut(id)
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m)
                .zip(v)
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Scales `grads` so their joint L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_gradients(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads
        .0
        .iter()
        .flatten()
        .map(|g| g.sum_sq())
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.0.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// Per-task cross-entropy nodes for a teacher-forced batch, in cascade order,
/// with the number of positions each one averages over.
pub(crate) fn batch_losses(
    model: &Cascade,
    g: &mut Graph,
    batch: &Batch,
    noise: &mut Noise,
) -> Vec<(Task, Var, usize)> {
    let run = model.run(g, batch, DecodeMode::TeacherForced, noise);
    run.tasks
        .iter()
        .map(|tr| {
            let gold = batch.targets[&tr.task].gold.clone();
            let include: Vec<bool> = gold.iter().map(|&s| s != PAD).collect();
            let count = include.iter().filter(|x| **x).count();
            (tr.task, g.cross_entropy(tr.logits, gold, include), count)
        })
        .collect()
}

/// Teacher-forced global loss of one batch, with gradients.
pub fn batch_loss_and_grads(model: &Cascade, batch: &Batch) -> (LossBundle, Grads) {
    let mut g = Graph::new(&model.params);
    let parts = batch_losses(model, &mut g, batch, &mut Noise::off());
    let vars: Vec<Var> = parts.iter().map(|p| p.1).collect();
    let total = g.sum(&vars);
    let bundle = LossBundle::from_parts(
        parts
            .iter()
            .map(|(t, v, _)| (*t, g.value(*v).item()))
            .collect(),
    );
    let grads = g.backward(total);
    (bundle, grads)
}

struct Accum {
    sums: Vec<(Task, f64, usize)>,
}

impl Accum {
    fn new(tasks: &[Task]) -> Self {
        Self {
            sums: tasks.iter().map(|t| (*t, 0.0, 0)).collect(),
        }
    }

    fn add(&mut self, task: Task, mean: f64, count: usize) {
        let e = self
            .sums
            .iter_mut()
            .find(|e| e.0 == task)
            .expect("known task");
        e.1 += mean * count as f64;
        e.2 += count;
    }

    fn finish(self) -> LossBundle {
        LossBundle::from_parts(
            self.sums
                .into_iter()
                .map(|(t, s, n)| (t, if n == 0 { 0.0 } else { s / n as f64 }))
                .collect(),
        )
    }
}

/// Teacher-forced per-task loss over `examples`, averaged over all
/// non-PAD positions.
pub fn evaluate_loss(
    model: &Cascade,
    examples: &[EncodedExample],
    batch_size: usize,
) -> LossBundle {
    let mut acc = Accum::new(model.tasks());
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&EncodedExample> = chunk.iter().collect();
        let batch = Batch::new(&refs);
        let mut g = Graph::new(&model.params);
        for (task, v, n) in batch_losses(model, &mut g, &batch, &mut Noise::off()) {
            acc.add(task, g.value(v).item(), n);
        }
    }
    acc.finish()
}

fn make_batches(examples: &[EncodedExample], size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..examples.len()).collect();
    idx.shuffle(rng);
    // Sort within windows of a few batches so padding stays small.
    for window in idx.chunks_mut(size * 8) {
        window.sort_by_key(|&i| examples[i].input.len());
    }
    let mut batches: Vec<Vec<usize>> = idx.chunks(size).map(<[usize]>::to_vec).collect();
    batches.shuffle(rng);
    batches
}

/// Replaces some gold decoder inputs by the model's own previous argmax.
fn mix_own_predictions(model: &Cascade, batch: &mut Batch, ratio: f64, rng: &mut ChaCha8Rng) {
    let mut g = Graph::new(&model.params);
    let run = model.run(&mut g, batch, DecodeMode::TeacherForced, &mut Noise::off());
    for tr in &run.tasks {
        let logits = g.value(tr.logits);
        let tb = batch.targets.get_mut(&tr.task).expect("target batch");
        let steps = tb.steps;
        for b in 0..batch.size {
            for t in 1..steps {
                let i = b * steps + t;
                if tb.dec_in[i] != PAD && rng.random::<f64>() >= ratio {
                    tb.dec_in[i] = argmax(logits.row(i - 1));
                }
            }
        }
    }
}

/// Trains `model` in place and leaves it at the best epoch seen.
///
/// `on_epoch` runs after every epoch (including epoch 0) and may stop
/// training early.
pub fn train(
    model: &mut Cascade,
    train_set: &[EncodedExample],
    dev_set: &[EncodedExample],
    schedule: &TrainSchedule,
    mut on_epoch: impl FnMut(&EpochRecord, &Cascade) -> Control,
) -> Result<TrainLog, TrainError> {
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let tasks = model.tasks().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed.wrapping_add(0x5eed));
    let mut adam = Adam::new(&model.params, schedule.learning_rate);
    let dev =
        |m: &Cascade| (!dev_set.is_empty()).then(|| evaluate_loss(m, dev_set, schedule.batch_size));

    let first = EpochRecord {
        epoch: 0,
        train: evaluate_loss(model, train_set, schedule.batch_size),
        dev: dev(model),
    };
    let mut log = TrainLog {
        epochs: vec![],
        best_epoch: 0,
        stopped_early: false,
    };
    let mut best_loss = first.selection_loss();
    let mut best_params = model.params.clone();
    let stop = on_epoch(&first, model) == Control::Stop;
    log.epochs.push(first);
    if stop {
        log.stopped_early = true;
        return Ok(log);
    }

    for epoch in 1..=schedule.epochs {
        let mut acc = Accum::new(&tasks);
        for idx in make_batches(train_set, schedule.batch_size.max(1), &mut rng) {
            let refs: Vec<&EncodedExample> = idx.iter().map(|&i| &train_set[i]).collect();
            let mut batch = Batch::new(&refs);
            if schedule.teacher_forcing < 1.0 {
                mix_own_predictions(model, &mut batch, schedule.teacher_forcing, &mut rng);
            }
            let mut grads = {
                let mut g = Graph::new(&model.params);
                let mut noise = Noise {
                    rate: model.config.dropout,
                    rng: Some(&mut rng),
                };
                let parts = batch_losses(model, &mut g, &batch, &mut noise);
                let vars: Vec<Var> = parts.iter().map(|p| p.1).collect();
                let total = g.sum(&vars);
                let loss = g.value(total).item();
                if !loss.is_finite() {
                    return Err(TrainError::Diverged { epoch, loss });
                }
                for (task, v, n) in &parts {
                    acc.add(*task, g.value(*v).item(), *n);
                }
                g.backward(total)
            };
            clip_gradients(&mut grads, schedule.clip_norm);
            adam.update(&mut model.params, &grads);
        }
        let record = EpochRecord {
            epoch,
            train: acc.finish(),
            dev: dev(model),
        };
        if !record.train.global.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                loss: record.train.global,
            });
        }
        let sel = record.selection_loss();
        if sel < best_loss {
            best_loss = sel;
            best_params = model.params.clone();
            log.best_epoch = epoch;
        }
        let control = on_epoch(&record, model);
        log.epochs.push(record);
        if control == Control::Stop {
            log.stopped_early = true;
            break;
        }
        if let Some(p) = schedule.patience {
            if epoch - log.best_epoch > p {
                log.stopped_early = true;
                break;
            }
        }
    }
    model.params = best_params;
    Ok(log)
}
