//! The trainable model bundle, its objective, the enumeration oracle, the
//! optimization loop and checkpoints.

mod checkpoint;
mod elbo;
mod init;
mod optim;
mod oracle;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use checkpoint::{
    checkpoint_from_str, checkpoint_load, checkpoint_save, checkpoint_to_string, Checkpoint, CHECKPOINT_VERSION,
};
pub use elbo::{batch_objective, elbo, elbo_on_tape, BatchObjective, ElboOptions, ElboTerms, KlMode};
pub use init::{initial_model, kmeans_centers};
pub use optim::Adam;
pub use oracle::{exact_log_marginal, static_mixture_loglik, EXACT_PATH_LIMIT};
pub use train::{temperature_at, train, LogRow, TrainOutcome};

use crate::dataset::MtsSample;
use crate::diffnum::{CellKind, ParamStore};
use crate::error::{Error, Result};
use crate::generative::{GenParams, MixtureBasis};
use crate::inference::{infer_forward, InferParams, Inference, InputAlignment};
use crate::preimpute::{preimpute, DenseMts, PreImputeLayer, PreImputeParams};
use crate::seeding::rng_for;

/// Mixing weight between the transition network and the basis mixture:
/// either a constant or the learned per-step gate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GammaMode {
    Fixed(f64),
    Gate,
}

impl GammaMode {
    pub fn fixed(self) -> Option<f64> {
        match self {
            GammaMode::Fixed(g) => Some(g),
            GammaMode::Gate => None,
        }
    }

    fn check(self) -> Result<()> {
        match self {
            GammaMode::Fixed(g) if !(0.0..=1.0).contains(&g) => {
                Err(Error::invalid("gamma", format!("{g} is outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for GammaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GammaMode::Fixed(g) => write!(f, "{g}"),
            GammaMode::Gate => f.write_str("gate"),
        }
    }
}

impl FromStr for GammaMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("gate") {
            return Ok(GammaMode::Gate);
        }
        let g: f64 = s.parse().map_err(|_| format!("expected a number in [0, 1] or `gate`, got `{s}`"))?;
        if !(0.0..=1.0).contains(&g) {
            return Err(format!("{g} is outside [0, 1]"));
        }
        Ok(GammaMode::Fixed(g))
    }
}

impl Serialize for GammaMode {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            GammaMode::Fixed(g) => s.serialize_f64(*g),
            GammaMode::Gate => s.serialize_str("gate"),
        }
    }
}

impl<'de> Deserialize<'de> for GammaMode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(g) => GammaMode::Fixed(g).check().map(|_| GammaMode::Fixed(g)).map_err(serde::de::Error::custom),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Architecture of a model; everything needed to rebuild its parameter
/// layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub k: usize,
    pub d: usize,
    pub hidden_dim: usize,
    /// Emission precision.
    pub sigma: f64,
    pub gamma: GammaMode,
    #[serde(default)]
    pub cell: CellKind,
    #[serde(default)]
    pub alignment: InputAlignment,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=200).contains(&self.k) {
            return Err(Error::invalid("k", format!("{} is outside [1, 200]", self.k)));
        }
        if self.d == 0 {
            return Err(Error::invalid("d", "must be at least 1"));
        }
        if self.hidden_dim == 0 {
            return Err(Error::invalid("hidden-dim", "must be at least 1"));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid("sigma", format!("{} is not a positive precision", self.sigma)));
        }
        self.gamma.check()
    }
}

/// Training hyperparameters. `window` defaults to the sample length minus
/// the horizon wherever a forecast split is needed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub k: usize,
    pub gamma: GammaMode,
    pub sigma: f64,
    pub hidden_dim: usize,
    pub window: Option<usize>,
    pub horizon: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub temperature_start: f64,
    pub temperature_end: f64,
    pub patience: usize,
    /// Relaxed sample paths per ELBO evaluation.
    pub samples: usize,
    pub cell: CellKind,
    pub alignment: InputAlignment,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 5,
            gamma: GammaMode::Fixed(0.01),
            sigma: 1.0,
            hidden_dim: 16,
            window: None,
            horizon: 5,
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            temperature_start: 1.0,
            temperature_end: 0.3,
            patience: 10,
            samples: 1,
            cell: CellKind::Gru,
            alignment: InputAlignment::Current,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, d: usize) -> ModelConfig {
        ModelConfig {
            k: self.k,
            d,
            hidden_dim: self.hidden_dim,
            sigma: self.sigma,
            gamma: self.gamma,
            cell: self.cell,
            alignment: self.alignment,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config(1).validate()?;
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        if self.window == Some(0) {
            return Err(Error::invalid("window", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch-size", "must be at least 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("lr", "must be positive"));
        }
        if !(self.temperature_start > 0.0) {
            return Err(Error::invalid("temperature-start", "must be positive"));
        }
        if !(self.temperature_end > 0.0) {
            return Err(Error::invalid("temperature-end", "must be positive"));
        }
        if self.samples == 0 {
            return Err(Error::invalid("samples-S", "must be at least 1"));
        }
        Ok(())
    }

    /// Prefix length used when splitting a length-`len` sample.
    pub fn window_for(&self, len: usize) -> usize {
        self.window.unwrap_or(len.saturating_sub(self.horizon))
    }
}

/// Every trainable parameter of the model plus the current basis
/// probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub pre: PreImputeLayer,
    pub gen: GenParams,
    pub inf: InferParams,
    pub basis_probs: Vec<f64>,
}

impl ModelParams {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, "init");
        let mut store = ParamStore::new();
        let ModelConfig { k, d, hidden_dim, cell, alignment, .. } = config;
        let pre = PreImputeLayer::new(&mut store, d);
        let gen = GenParams::new(&mut store, k, d, hidden_dim, cell, &mut rng);
        let inf = InferParams::new(&mut store, k, d, hidden_dim, cell, alignment, &mut rng);
        Ok(Self {
            config,
            store,
            pre,
            gen,
            inf,
            basis_probs: vec![1.0 / k as f64; k],
        })
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn basis(&self) -> Result<MixtureBasis> {
        self.gen.basis(&self.store, self.basis_probs.clone(), self.config.sigma)
    }

    pub fn preimpute_params(&self) -> PreImputeParams {
        self.pre.params(&self.store)
    }

    pub fn preimpute(&self, sample: &MtsSample) -> Result<DenseMts> {
        self.check_sample(sample)?;
        preimpute(sample, &self.preimpute_params())
    }

    /// Pre-imputes `sample` and runs the inference network over it.
    pub fn infer(&self, sample: &MtsSample, temperature: f64, seed: u64) -> Result<Inference> {
        let dense = self.preimpute(sample)?;
        infer_forward(&dense, &self.inf, &self.store, temperature, seed)
    }

    pub(crate) fn check_sample(&self, sample: &MtsSample) -> Result<()> {
        if sample.dims() != self.config.d {
            return Err(Error::shape(
                "model",
                format!("sample `{}` has d = {}, model has d = {}", sample.id(), sample.dims(), self.config.d),
            ));
        }
        Ok(())
    }

    /// Recomputes the basis probabilities as the average inferred marginal
    /// over every step of `samples`.
    pub fn refresh_basis_probs(&mut self, samples: &[MtsSample]) -> Result<()> {
        let mut rows = Vec::new();
        for s in samples {
            rows.extend(self.infer(s, 1.0, 0)?.seq.marginals);
        }
        self.basis_probs = crate::inference::estimate_basis_probs(&rows)?;
        Ok(())
    }
}
