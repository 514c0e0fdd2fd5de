//! Mini-batch Adam training of the next-SID model.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::GrModel;
use super::Example;
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamConfig, AdamState, Params};
use crate::parallel::Exec;

#[derive(Debug, Clone, PartialEq)]
pub struct GrTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub divergence_limit: f64,
    pub exec: Exec,
}

impl Default for GrTrainConfig {
    fn default() -> Self {
        GrTrainConfig {
            epochs: 10,
            batch_size: 64,
            adam: AdamConfig::default(),
            seed: 0,
            divergence_limit: 1e4,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    /// Mean per-token cross-entropy on the held-out examples, if any.
    pub valid_loss: Option<f64>,
}

/// Trains `model` in place. On divergence the model is reset to its state at
/// the start of the failing epoch and `Error::Diverged` is returned.
pub fn train_gr(model: &mut GrModel, train: &[Example], valid: &[Example], cfg: &GrTrainConfig) -> Result<Vec<GrEpoch>> {
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    if train.is_empty() {
        return Err(Error::Data("GR training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut state = AdamState::new();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let checkpoint = model.clone();
        order.shuffle(&mut rng);
        let mut train_loss = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = idx.iter().map(|&i| train[i].clone()).collect();
            let (loss, grads) = match model.loss_and_grad(&batch, cfg.exec) {
                Ok(v) if v.0.is_finite() && v.0 <= cfg.divergence_limit => v,
                Ok(v) => {
                    *model = checkpoint;
                    return Err(Error::Diverged { epoch, loss: v.0 });
                }
                Err(Error::Numerical(_)) => {
                    *model = checkpoint;
                    return Err(Error::Diverged { epoch, loss: f64::NAN });
                }
                Err(e) => return Err(e),
            };
            adam_step(model, &grads, &mut state, &cfg.adam)?;
            if !model.all_finite() {
                *model = checkpoint;
                return Err(Error::Diverged { epoch, loss: f64::NAN });
            }
            train_loss += loss * batch.len() as f64 / train.len() as f64;
        }
        let valid_loss = if valid.is_empty() {
            None
        } else {
            Some(model.loss(valid, cfg.exec)?)
        };
        log::debug!("gr epoch {epoch}: train {train_loss:.4} valid {valid_loss:?}");
        log.push(GrEpoch {
            epoch,
            train_loss,
            valid_loss,
        });
    }
    Ok(log)
}
