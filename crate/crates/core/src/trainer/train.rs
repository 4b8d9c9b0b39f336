use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{batch_objective, initial_model, Adam, ElboOptions, KlMode, ModelParams, TrainConfig};
use crate::dataset::MtsSample;
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, rng_for};

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub train_neg_elbo: f64,
    pub valid_neg_elbo: f64,
    pub gate_mean: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation objective.
    pub model: ModelParams,
    pub log: Vec<LogRow>,
    pub best_epoch: Option<usize>,
}

impl TrainOutcome {
    pub fn write_log_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if self.log.is_empty() {
            w.write_record(["epoch", "train_neg_elbo", "valid_neg_elbo", "gate_mean", "lr"])?;
        }
        for row in &self.log {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }
}

/// Linear anneal from `temperature_start` at the first epoch to
/// `temperature_end` at the last.
pub fn temperature_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    if cfg.epochs <= 1 {
        return cfg.temperature_start;
    }
    let frac = epoch.min(cfg.epochs - 1) as f64 / (cfg.epochs - 1) as f64;
    cfg.temperature_start + (cfg.temperature_end - cfg.temperature_start) * frac
}

/// Fits a fresh model to `train`, early-stopping on `valid`.
pub fn train(train: &[MtsSample], valid: &[MtsSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if valid.is_empty() {
        return Err(Error::invalid("valid", "validation split is empty"));
    }
    let model = initial_model(train, cfg)?;
    for s in valid {
        model.check_sample(s)?;
    }
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            model,
            log: Vec::new(),
            best_epoch: None,
        });
    }
    fit(model, train, valid, cfg)
}

fn fit(mut model: ModelParams, train: &[MtsSample], valid: &[MtsSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut adam = Adam::new(&model.store, cfg.lr);
    let valid_seeds: Vec<u64> = (0..valid.len()).map(|i| derive_seed(cfg.seed, &format!("valid/{i}"))).collect();
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut since_best = 0;
    let mut log = Vec::new();

    for epoch in 0..cfg.epochs {
        let opts = ElboOptions {
            temperature: temperature_at(cfg, epoch),
            kl: KlMode::Sampled,
            samples: cfg.samples,
        };
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng_for(cfg.seed, &format!("shuffle/{epoch}")));
        let mut total = 0.0;
        let mut gate_total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<MtsSample> = idx.iter().map(|&i| train[i].clone()).collect();
            let seeds: Vec<u64> = idx
                .iter()
                .map(|&i| derive_seed(cfg.seed, &format!("noise/{epoch}/{i}")))
                .collect();
            let obj = batch_objective(&model, &batch, &seeds, &opts, true).map_err(|e| Error::Diverged {
                epoch: epoch + 1,
                batch: b + 1,
                source: Box::new(e),
            })?;
            adam.step(&mut model.store, obj.grads.as_deref().expect("requested"));
            model.pre.pin_rho_diagonal(&mut model.store);
            if model.store.iter().any(|p| !p.value.is_finite()) {
                return Err(Error::Diverged {
                    epoch: epoch + 1,
                    batch: b + 1,
                    source: Box::new(Error::NonFinite { op: "adam" }),
                });
            }
            model.basis_probs = obj.basis_probs;
            total += obj.mean_neg_elbo * idx.len() as f64;
            gate_total += obj.gate_mean * idx.len() as f64;
        }
        // Scored at the final temperature so that epochs stay comparable while
        // the training temperature anneals.
        let valid_opts = ElboOptions {
            temperature: cfg.temperature_end,
            ..opts
        };
        let valid_obj = batch_objective(&model, valid, &valid_seeds, &valid_opts, false).map_err(|e| Error::Diverged {
            epoch: epoch + 1,
            batch: 0,
            source: Box::new(e),
        })?;
        log.push(LogRow {
            epoch: epoch + 1,
            train_neg_elbo: total / train.len() as f64,
            valid_neg_elbo: valid_obj.mean_neg_elbo,
            gate_mean: gate_total / train.len() as f64,
            lr: cfg.lr,
        });
        let improved = best.as_ref().is_none_or(|(v, _, _)| valid_obj.mean_neg_elbo < *v);
        if improved {
            best = Some((valid_obj.mean_neg_elbo, epoch + 1, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (_, best_epoch, mut model) = best.expect("at least one epoch ran");
    model.refresh_basis_probs(train)?;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch: Some(best_epoch),
    })
}
