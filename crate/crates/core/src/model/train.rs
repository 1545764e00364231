use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tensor::{Adam, AdamConfig, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 0,
            max_steps: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    /// Mean per-token NLL of the step's minibatch.
    pub nll: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LossRecord>,
}

impl TrainLog {
    pub fn write_csv(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "step,lr,nll")?;
        for r in &self.records {
            writeln!(w, "{},{},{}", r.step, r.lr, r.nll)?;
        }
        Ok(())
    }

    pub fn last_nll(&self) -> Option<f64> {
        self.records.last().map(|r| r.nll)
    }
}

pub(crate) type StepResult = Result<(f64, Vec<Option<Vec<f32>>>), ModelError>;

/// Shuffled minibatch loop. `step` gets the current parameters, a batch and
/// a fresh dropout stream, and returns the batch NLL with its gradients.
pub(crate) fn run<I: Copy>(
    params: &mut ParamStore<f32>,
    adam: &mut Adam<f32>,
    items: &[I],
    cfg: &TrainConfig,
    mut step: impl FnMut(&ParamStore<f32>, &[I], ChaCha8Rng) -> StepResult,
) -> Result<TrainLog, ModelError> {
    if items.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut log = TrainLog::default();
    let mut batch = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            if cfg.max_steps.is_some_and(|m| adam.steps() >= m) {
                return Ok(log);
            }
            batch.clear();
            batch.extend(chunk.iter().map(|&i| items[i]));
            let drop_rng = ChaCha8Rng::from_rng(&mut rng).expect("chacha seeding");
            let (nll, grads) = step(params, &batch, drop_rng)?;
            if !nll.is_finite() {
                return Err(ModelError::NonFinite {
                    step: adam.steps() + 1,
                    loss: nll,
                });
            }
            let refs: Vec<Option<&[f32]>> = grads.iter().map(|g| g.as_deref()).collect();
            let lr = adam.step(params, &refs);
            log.records.push(LossRecord {
                step: adam.steps(),
                lr,
                nll,
            });
        }
    }
    Ok(log)
}

/// Copies loaded parameters into a freshly built store after checking that
/// names and shapes agree.
pub(crate) fn restore(
    store: &mut ParamStore<f32>,
    loaded: ParamStore<f32>,
) -> Result<(), ModelError> {
    if loaded.len() != store.len() {
        return Err(ModelError::Config(format!(
            "checkpoint has {} parameters, model has {}",
            loaded.len(),
            store.len()
        )));
    }
    for id in store.ids() {
        if loaded.name(id) != store.name(id) || loaded.get(id).shape() != store.get(id).shape() {
            return Err(ModelError::Config(format!(
                "checkpoint parameter {} {:?} does not match {} {:?}",
                loaded.name(id),
                loaded.get(id).shape(),
                store.name(id),
                store.get(id).shape()
            )));
        }
    }
    *store = loaded;
    Ok(())
}
