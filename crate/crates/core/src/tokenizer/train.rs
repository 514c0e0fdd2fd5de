//! Mini-batch Adam training for the RQ-VAE tokenizer.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{ItemInputs, TokenizerModel};
use crate::error::{Error, Result};
use crate::numerics::{adam_step, AdamConfig, AdamState, Params};
use crate::parallel::Exec;
use crate::sid::SemanticId;
use crate::sid_index::metrics::{uniqueness_of, utilization_metrics, LevelUsage};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Items held out of gradient updates and tokenized after every epoch.
    /// Zero probes the whole training set instead.
    pub probe_size: usize,
    /// A batch loss above this (or NaN) aborts training.
    pub divergence_limit: f64,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 256,
            adam: AdamConfig::default(),
            seed: 0,
            probe_size: 0,
            divergence_limit: 1e6,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub recon: f64,
    pub commit: f64,
    pub total: f64,
    pub usage: Vec<LevelUsage>,
    pub probe_uniqueness: f64,
}

/// Trains `model` in place. On divergence the model is reset to its state at
/// the start of the failing epoch and `Error::Diverged` is returned.
pub fn train(model: &mut TokenizerModel, items: &[ItemInputs], cfg: &TrainConfig) -> Result<Vec<EpochMetrics>> {
    if cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    if items.is_empty() {
        return Err(Error::Data("cannot train on an empty corpus".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    if cfg.probe_size >= items.len() {
        return Err(Error::Config(format!(
            "probe_size {} leaves no training items (corpus has {})",
            cfg.probe_size,
            items.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut rng);
    let (probe, mut train_idx): (Vec<usize>, Vec<usize>) = if cfg.probe_size == 0 {
        (order.clone(), order)
    } else {
        (order[..cfg.probe_size].to_vec(), order[cfg.probe_size..].to_vec())
    };
    let probe_items: Vec<&ItemInputs> = probe.iter().map(|&i| &items[i]).collect();

    let mut state = AdamState::new();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let checkpoint = model.clone();
        train_idx.shuffle(&mut rng);
        let (mut recon, mut commit, mut total) = (0.0, 0.0, 0.0);
        for batch_idx in train_idx.chunks(cfg.batch_size) {
            let batch: Vec<ItemInputs> = batch_idx.iter().map(|&i| items[i].clone()).collect();
            let outcome = model.loss_and_grad(&batch, cfg.exec);
            let (loss, grads) = match outcome {
                Ok(v) if v.0.total.is_finite() && v.0.total <= cfg.divergence_limit => v,
                Ok(v) => {
                    *model = checkpoint;
                    return Err(Error::Diverged { epoch, loss: v.0.total });
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
            let w = batch.len() as f64 / train_idx.len() as f64;
            recon += w * loss.recon;
            commit += w * loss.commit;
            total += w * loss.total;
        }

        let sids = cfg.exec.map(&probe_items, |x| model.tokenize(x));
        let sids: Vec<SemanticId> = sids.into_iter().collect::<Result<_>>()?;
        let usage = utilization_metrics(&sids, &model.shape());
        let probe_uniqueness = uniqueness_of(&sids)?;
        log::debug!(
            "epoch {epoch}: recon {recon:.5} commit {commit:.5} uniqueness {probe_uniqueness:.4}"
        );
        log.push(EpochMetrics {
            epoch,
            recon,
            commit,
            total,
            usage,
            probe_uniqueness,
        });
    }
    Ok(log)
}
