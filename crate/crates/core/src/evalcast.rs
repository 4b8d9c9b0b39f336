//! Forecasting, masked scoring, imputation comparison, naive baselines and
//! the corruption sweep.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{corrupt, ForecastTask, MtsSample, Split};
use crate::error::{Error, Result};
use crate::generative::{forecast_rollout, transition_step, TransitionState};
use crate::seeding::derive_seed;
use crate::trainer::{train, GammaMode, ModelParams, TrainConfig};

/// Forecast for one sample: `d × r` predictions plus the transition
/// distribution at each future step.
#[derive(Clone, Debug, PartialEq)]
pub struct ForecastResult {
    pub d: usize,
    pub r: usize,
    /// Row-major `d × r`.
    pub predictions: Vec<f64>,
    pub psi_path: Vec<Vec<f64>>,
}

impl ForecastResult {
    pub fn at(&self, var: usize, step: usize) -> f64 {
        self.predictions[var * self.r + step]
    }
}

/// Predicts the `r` steps following `prefix`.
///
/// The transition network is driven through the inferred marginals of the
/// prefix, then rolled forward on its own output.
pub fn forecast(model: &ModelParams, prefix: &MtsSample, r: usize) -> Result<ForecastResult> {
    if r == 0 {
        return Err(Error::invalid("horizon", "must be at least 1"));
    }
    let inferred = model.infer(prefix, 1.0, 0)?;
    let q = &inferred.seq.marginals;
    let mut state = model.gen.initial_state(q[0].clone());
    for next in &q[1..] {
        let (stepped, _) = transition_step(&model.gen, &model.store, &state)?;
        state = TransitionState {
            hidden: stepped.hidden,
            last_z: next.clone(),
        };
    }
    let gamma = match model.config.gamma {
        GammaMode::Fixed(g) => g,
        GammaMode::Gate => *inferred.gates.last().expect("prefix is non-empty"),
    };
    let rollout = forecast_rollout(&model.gen, &model.store, &state, &model.basis()?, gamma, r)?;
    Ok(ForecastResult {
        d: model.d(),
        r,
        predictions: rollout.predictions,
        psi_path: rollout.psi,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    pub mae: f64,
    pub n_scored: usize,
}

/// Pools squared and absolute errors over many scoring calls.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricAccumulator {
    sq: f64,
    abs: f64,
    n: usize,
}

impl MetricAccumulator {
    pub fn add(&mut self, pred: &[f64], truth: &[f64], mask: &[bool]) -> Result<()> {
        if pred.len() != truth.len() || pred.len() != mask.len() {
            return Err(Error::shape(
                "score",
                format!("{} predictions, {} targets, {} mask entries", pred.len(), truth.len(), mask.len()),
            ));
        }
        for ((p, t), &m) in pred.iter().zip(truth).zip(mask) {
            if m {
                let e = p - t;
                self.sq += e * e;
                self.abs += e.abs();
                self.n += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &MetricAccumulator) {
        self.sq += other.sq;
        self.abs += other.abs;
        self.n += other.n;
    }

    pub fn report(&self) -> Result<MetricReport> {
        if self.n == 0 {
            return Err(Error::NothingToScore);
        }
        Ok(MetricReport {
            rmse: (self.sq / self.n as f64).sqrt(),
            mae: self.abs / self.n as f64,
            n_scored: self.n,
        })
    }
}

/// RMSE and MAE over the entries where `mask` is set.
pub fn score(pred: &[f64], truth: &[f64], mask: &[bool]) -> Result<MetricReport> {
    let mut acc = MetricAccumulator::default();
    acc.add(pred, truth, mask)?;
    acc.report()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    /// Per-variable mean of the observed prefix.
    Mean,
    /// Last observed value of each variable.
    Locf,
}

impl Baseline {
    pub const ALL: [Baseline; 2] = [Baseline::Mean, Baseline::Locf];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Mean => "mean",
            Baseline::Locf => "locf",
        }
    }

    /// Row-major `d × r` predictions; variables never observed predict 0.
    pub fn predict(self, prefix: &MtsSample, r: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(prefix.dims() * r);
        for var in 0..prefix.dims() {
            let seen: Vec<f64> = (0..prefix.len()).filter_map(|t| prefix.value(var, t)).collect();
            let v = match self {
                _ if seen.is_empty() => 0.0,
                Baseline::Mean => seen.iter().sum::<f64>() / seen.len() as f64,
                Baseline::Locf => *seen.last().expect("non-empty"),
            };
            out.extend(std::iter::repeat_n(v, r));
        }
        out
    }
}

/// Observed target values and mask, row-major `d × r`.
fn target_arrays(target: &MtsSample) -> (Vec<f64>, Vec<bool>) {
    (target.observed_or_zero(), target.mask().to_vec())
}

/// A forecast tied to its sample, with `start` the 0-based index of the
/// first predicted step.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleForecast {
    pub sample_id: String,
    pub start: usize,
    pub result: ForecastResult,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastEval {
    pub model: MetricReport,
    pub baselines: Vec<(Baseline, MetricReport)>,
    pub forecasts: Vec<SampleForecast>,
}

impl ForecastEval {
    pub fn baseline(&self, b: Baseline) -> MetricReport {
        self.baselines.iter().find(|(x, _)| *x == b).expect("all baselines scored").1
    }
}

/// Forecasts the last `horizon` steps of every sample from the `window`
/// steps before them and pools the errors over all observed targets.
/// Without a window the whole remaining prefix is used.
pub fn evaluate_forecasts(
    model: &ModelParams,
    samples: &[MtsSample],
    window: Option<usize>,
    horizon: usize,
) -> Result<ForecastEval> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_sample: Vec<_> = samples
        .par_iter()
        .map(|s| -> Result<_> {
            let w = window.unwrap_or(s.len().saturating_sub(horizon));
            let task = ForecastTask::new(w, horizon)?;
            task.check(s)?;
            let start = s.len() - horizon - w;
            let prefix = s.slice_steps(start, start + w)?;
            let target = s.slice_steps(start + w, s.len())?;
            let (truth, mask) = target_arrays(&target);
            let result = forecast(model, &prefix, horizon)?;
            let mut acc = MetricAccumulator::default();
            acc.add(&result.predictions, &truth, &mask)?;
            let mut base = Vec::new();
            for b in Baseline::ALL {
                let mut a = MetricAccumulator::default();
                a.add(&b.predict(&prefix, horizon), &truth, &mask)?;
                base.push(a);
            }
            let f = SampleForecast {
                sample_id: s.id().to_string(),
                start: start + w,
                result,
            };
            Ok((f, acc, base))
        })
        .collect::<Result<_>>()?;

    let mut acc = MetricAccumulator::default();
    let mut base = [MetricAccumulator::default(); 2];
    let mut forecasts = Vec::with_capacity(per_sample.len());
    for (f, a, b) in per_sample {
        acc.merge(&a);
        for (total, part) in base.iter_mut().zip(&b) {
            total.merge(part);
        }
        forecasts.push(f);
    }
    Ok(ForecastEval {
        model: acc.report()?,
        baselines: Baseline::ALL
            .iter()
            .zip(&base)
            .map(|(&b, a)| Ok((b, a.report()?)))
            .collect::<Result<_>>()?,
        forecasts,
    })
}

/// Writes `sample_id,t,variable,prediction` with `t` the 1-based step.
pub fn write_forecast_csv<W: Write>(writer: W, forecasts: &[SampleForecast]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sample_id", "t", "variable", "prediction"])?;
    for f in forecasts {
        for step in 0..f.result.r {
            for var in 0..f.result.d {
                w.write_record([
                    f.sample_id.clone(),
                    (f.start + step + 1).to_string(),
                    var.to_string(),
                    f.result.at(var, step).to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputationReport {
    /// Error of the pre-imputation layer at the hidden entries.
    pub before: MetricReport,
    /// Error of the marginal-weighted cluster means at the hidden entries.
    pub after: MetricReport,
}

/// Hides `hold_out_frac` of the observed entries of every sample and scores
/// both reconstructions of them.
pub fn imputation_eval(
    model: &ModelParams,
    samples: &[MtsSample],
    hold_out_frac: f64,
    seed: u64,
) -> Result<ImputationReport> {
    if !(hold_out_frac > 0.0 && hold_out_frac < 1.0) {
        return Err(Error::invalid(
            "hold_out_frac",
            format!("{hold_out_frac} is outside (0, 1)"),
        ));
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let basis = model.basis()?;
    let parts: Vec<_> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| -> Result<_> {
            let hidden_sample = corrupt(s, hold_out_frac, derive_seed(seed, &format!("holdout/{i}")))?;
            let hidden: Vec<bool> = s.mask().iter().zip(hidden_sample.mask()).map(|(&a, &b)| a && !b).collect();
            let truth = s.observed_or_zero();
            let dense = model.preimpute(&hidden_sample)?;
            let q = model.infer(&hidden_sample, 1.0, 0)?.seq.marginals;
            let (d, w) = (s.dims(), s.len());
            let mut after = vec![0.0; d * w];
            for (t, qt) in q.iter().enumerate() {
                for (var, m) in basis.mixture_mean(qt).into_iter().enumerate() {
                    after[var * w + t] = m;
                }
            }
            let mut before_acc = MetricAccumulator::default();
            before_acc.add(&dense.values, &truth, &hidden)?;
            let mut after_acc = MetricAccumulator::default();
            after_acc.add(&after, &truth, &hidden)?;
            Ok((before_acc, after_acc))
        })
        .collect::<Result<_>>()?;
    let mut before = MetricAccumulator::default();
    let mut after = MetricAccumulator::default();
    for (b, a) in &parts {
        before.merge(b);
        after.merge(a);
    }
    Ok(ImputationReport {
        before: before.report()?,
        after: after.report()?,
    })
}

/// One line of the metrics table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub dataset: String,
    pub model: String,
    pub delta: f64,
    pub seed: u64,
    pub rmse: f64,
    pub mae: f64,
    pub n_scored: usize,
}

impl MetricRow {
    pub fn new(dataset: &str, model: &str, delta: f64, seed: u64, report: MetricReport) -> Self {
        Self {
            dataset: dataset.to_string(),
            model: model.to_string(),
            delta,
            seed,
            rmse: report.rmse,
            mae: report.mae,
            n_scored: report.n_scored,
        }
    }
}

pub const METRICS_HEADER: [&str; 7] = ["dataset", "model", "delta", "seed", "rmse", "mae", "n_scored"];

/// Writes `dataset,model,delta,seed,rmse,mae,n_scored`; metrics are pooled
/// over every scored entry.
pub fn write_metrics_csv<W: Write>(writer: W, rows: &[MetricRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Result of one sweep cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub delta: f64,
    pub seed: u64,
    pub eval: ForecastEval,
}

impl SweepCell {
    /// The model row followed by one row per baseline.
    pub fn rows(&self, dataset: &str) -> Vec<MetricRow> {
        let mut rows = vec![MetricRow::new(dataset, "model", self.delta, self.seed, self.eval.model)];
        for (b, r) in &self.eval.baselines {
            rows.push(MetricRow::new(dataset, b.name(), self.delta, self.seed, *r));
        }
        rows
    }
}

/// For every `(δ, seed)`: hides a fraction `δ` of the train and valid
/// observations, retrains from scratch with that seed and scores forecasts
/// on the untouched test split.
pub fn robustness_sweep(
    cfg: &TrainConfig,
    data: &Split,
    deltas: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepCell>> {
    if let Some(&bad) = deltas.iter().find(|d| !(0.0..1.0).contains(*d)) {
        return Err(Error::invalid("delta", format!("{bad} is outside [0, 1)")));
    }
    let cells: Vec<(f64, u64)> = deltas
        .iter()
        .flat_map(|&d| seeds.iter().map(move |&s| (d, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(delta, seed)| {
            let hide = |samples: &[MtsSample], part: &str| -> Result<Vec<MtsSample>> {
                samples
                    .iter()
                    .enumerate()
                    .map(|(i, s)| corrupt(s, delta, derive_seed(seed, &format!("sweep/{part}/{i}"))))
                    .collect()
            };
            let cell_cfg = TrainConfig {
                seed,
                ..cfg.clone()
            };
            let outcome = train(&hide(&data.train, "train")?, &hide(&data.valid, "valid")?, &cell_cfg)?;
            let eval = evaluate_forecasts(&outcome.model, &data.test, cfg.window, cfg.horizon)?;
            Ok(SweepCell { delta, seed, eval })
        })
        .collect()
}
