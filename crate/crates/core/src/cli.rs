//! Command-line front end: argument parsing, config resolution and the
//! subcommands. `run` returns the process exit code: 0 on success, 1 on a
//! runtime failure, 2 on a usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use crate::dataset::{corrupt, load_long_csv, split, write_long_csv, MtsSample, SplitSpec, SynthConfig};
use crate::error::Error;
use crate::evalcast::{
    evaluate_forecasts, forecast, imputation_eval, robustness_sweep, write_forecast_csv, write_metrics_csv,
    MetricReport, MetricRow, SampleForecast,
};
use crate::fsutil::write_atomic;
use crate::generative::BasisExport;
use crate::inference::write_cluster_csv;
use crate::seeding::derive_seed;
use crate::trainer::{checkpoint_load, checkpoint_save, train, Checkpoint, GammaMode, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "sparsemix", version, about = "Dynamic Gaussian-mixture forecasting for sparse multivariate series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset from known clusters and transitions.
    Synthesize(SynthArgs),
    /// Fit a model and write a checkpoint plus the training log.
    Train(TrainArgs),
    /// Predict the steps after the end of every series.
    Forecast(ForecastArgs),
    /// Score horizon forecasts and imputations against held-out entries.
    Evaluate(EvaluateArgs),
    /// Retrain on increasingly corrupted data and score each run.
    Sweep(SweepArgs),
    /// Write per-step cluster assignments and the learned basis.
    ExportClusters(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..=200))]
    pub k: u64,
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pub d: u64,
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    pub w: u64,
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Emission precision.
    #[arg(long, default_value_t = 100.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.01)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of entries hidden after generation.
    #[arg(long, default_value_t = 0.0)]
    pub missing: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Training hyperparameters. Anything left unset falls back to the config
/// file, then to the built-in default.
#[derive(Debug, Default, Args)]
pub struct ModelFlags {
    #[arg(long)]
    pub k: Option<usize>,
    /// A constant in [0, 1] or `gate`.
    #[arg(long)]
    pub gamma: Option<GammaMode>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub temperature_start: Option<f64>,
    #[arg(long)]
    pub temperature_end: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    /// Relaxed samples per training series.
    #[arg(long = "samples-S", visible_alias = "samples")]
    pub samples: Option<usize>,
    /// TOML or JSON file with any of the above plus `data` and `out`.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fraction of train and valid observations hidden before fitting.
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Steps of history fed to the model; all of it when unset.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub horizon: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub window: Option<usize>,
    /// Defaults to the horizon the model was trained with.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Split seed; defaults to the training seed so the test split matches.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Score every series rather than the test split.
    #[arg(long)]
    pub all: bool,
    /// Fraction of observed entries hidden for the imputation rows; 0 skips
    /// them.
    #[arg(long, default_value_t = 0.1)]
    pub hold_out: f64,
    /// Recorded in the `delta` column.
    #[arg(long, default_value_t = 0.0)]
    pub delta: f64,
    /// Recorded in the `dataset` column; defaults to the data file stem.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.2, 0.4, 0.6])]
    pub delta: Vec<f64>,
    /// Training seeds; defaults to the single `--seed`.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub dataset: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument { name, reason } => CliError::Usage(format!("invalid value for --{name}: {reason}")),
            other => CliError::Runtime(other),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(CliError::Runtime(e)) => {
            let mut msg = e.to_string();
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                let part = s.to_string();
                if !msg.contains(&part) {
                    msg.push_str(&format!(": {part}"));
                }
                src = s.source();
            }
            eprintln!("error: {msg}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Synthesize(a) => cmd_synthesize(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Forecast(a) => cmd_forecast(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
        Command::ExportClusters(a) => cmd_export_clusters(&a),
    }
}

/// Resolved settings for the training commands.
#[derive(Clone, Debug, PartialEq)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Reads a TOML (`.toml`) or JSON config file into a [`CliConfig`]; unknown
/// keys are rejected.
pub fn load_config(path: &Path) -> CliResult<CliConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(Error::io(path, e)))?;
    let bad = |msg: String| CliError::Usage(format!("config {}: {msg}", path.display()));
    let mut value: Value = if path.extension().is_some_and(|e| e == "toml") {
        let t: toml::Value = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
        serde_json::to_value(t).map_err(|e| bad(e.to_string()))?
    } else {
        serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?
    };
    let map = value
        .as_object_mut()
        .ok_or_else(|| bad("expected a table of settings".into()))?;
    let mut path_key = |key: &str| -> CliResult<Option<PathBuf>> {
        match map.remove(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(PathBuf::from(s))),
            Some(other) => Err(bad(format!("`{key}` must be a string, got {other}"))),
        }
    };
    let data = path_key("data")?;
    let out = path_key("out")?;
    let train = serde_json::from_value(value).map_err(|e| bad(e.to_string()))?;
    Ok(CliConfig { train, data, out })
}

impl ModelFlags {
    /// Flags over config file over defaults.
    pub fn resolve(&self) -> CliResult<CliConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_config(p)?,
            None => CliConfig {
                train: TrainConfig::default(),
                data: None,
                out: None,
            },
        };
        let t = &mut cfg.train;
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    t.$field = v;
                }
            )*};
        }
        apply!(k, gamma, sigma, hidden_dim, horizon, epochs, batch_size, lr, seed);
        apply!(temperature_start, temperature_end, patience, samples);
        if self.window.is_some() {
            t.window = self.window;
        }
        t.validate()?;
        Ok(cfg)
    }
}

fn required(path: Option<PathBuf>, flag: &str) -> CliResult<PathBuf> {
    path.ok_or_else(|| CliError::Usage(format!("--{flag} is required (on the command line or in --config)")))
}

fn load_data(path: &Path) -> CliResult<Vec<MtsSample>> {
    let samples = load_long_csv(path)?;
    if samples.is_empty() {
        return Err(CliError::Runtime(Error::EmptyDataset));
    }
    Ok(samples)
}

fn write_csv(path: &Path, fill: impl FnOnce(&mut Vec<u8>) -> crate::Result<()>) -> CliResult<()> {
    let mut buf = Vec::new();
    fill(&mut buf)?;
    write_atomic(path, &buf)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    write_atomic(path, text.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn dataset_name(explicit: &Option<String>, data: &Path) -> String {
    explicit.clone().unwrap_or_else(|| {
        data.file_stem()
            .map_or_else(|| "data".to_string(), |s| s.to_string_lossy().into_owned())
    })
}

fn cmd_synthesize(a: &SynthArgs) -> CliResult<()> {
    let mut cfg = SynthConfig::new(a.k as usize, a.d as usize, a.w as usize, a.n as usize, a.sigma, a.gamma, a.seed);
    if !(0.0..1.0).contains(&a.missing) {
        return Err(CliError::Usage(format!("invalid value for --missing: {} is outside [0, 1)", a.missing)));
    }
    cfg.missing = a.missing;
    let data = crate::dataset::synthesize(&cfg)?;
    write_csv(&a.out.join("data.csv"), |buf| write_long_csv(buf, &data.samples))?;
    write_json(&a.out.join("truth.json"), &data.truth)
}

/// Hides a fraction `delta` of each sample's observations, seeded per
/// sample.
fn corrupt_all(samples: &[MtsSample], delta: f64, seed: u64, part: &str) -> CliResult<Vec<MtsSample>> {
    Ok(samples
        .iter()
        .enumerate()
        .map(|(i, s)| corrupt(s, delta, derive_seed(seed, &format!("{part}/{i}"))))
        .collect::<crate::Result<_>>()?)
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let cfg = a.model.resolve()?;
    let data_path = required(a.data.clone().or(cfg.data), "data")?;
    let out = required(a.out.clone().or(cfg.out), "out")?;
    let tc = cfg.train;
    if !(0.0..1.0).contains(&a.delta) {
        return Err(CliError::Usage(format!("invalid value for --delta: {} is outside [0, 1)", a.delta)));
    }
    let samples = load_data(&data_path)?;
    let parts = split(&samples, &SplitSpec::standard(tc.seed))?;
    let train_set = corrupt_all(&parts.train, a.delta, tc.seed, "delta/train")?;
    let mut valid_set = corrupt_all(&parts.valid, a.delta, tc.seed, "delta/valid")?;
    if valid_set.is_empty() {
        eprintln!("validation split is empty; early stopping on the training split");
        valid_set = train_set.clone();
    }
    let outcome = train(&train_set, &valid_set, &tc)?;
    for row in &outcome.log {
        eprintln!(
            "epoch {:>4}  train -elbo {:.4}  valid -elbo {:.4}  gate {:.4}",
            row.epoch, row.train_neg_elbo, row.valid_neg_elbo, row.gate_mean
        );
    }
    let ckpt = out.join("model.json");
    checkpoint_save(&outcome.model, Some(&tc), &ckpt)?;
    println!("wrote {}", ckpt.display());
    write_csv(&out.join("train_log.csv"), |buf| outcome.write_log_csv(buf))
}

fn load_model(path: &Path) -> CliResult<Checkpoint> {
    Ok(checkpoint_load(path)?)
}

fn cmd_forecast(a: &ForecastArgs) -> CliResult<()> {
    if a.horizon == 0 {
        return Err(CliError::Usage("invalid value for --horizon: must be at least 1".into()));
    }
    if a.window == Some(0) {
        return Err(CliError::Usage("invalid value for --window: must be at least 1".into()));
    }
    let ckpt = load_model(&a.model)?;
    let samples = load_data(&a.data)?;
    let forecasts = samples
        .iter()
        .map(|s| {
            let w = a.window.unwrap_or(s.len()).min(s.len());
            let prefix = s.slice_steps(s.len() - w, s.len())?;
            Ok(SampleForecast {
                sample_id: s.id().to_string(),
                start: s.len(),
                result: forecast(&ckpt.model, &prefix, a.horizon)?,
            })
        })
        .collect::<crate::Result<Vec<_>>>()?;
    write_csv(&a.out.join("forecasts.csv"), |buf| write_forecast_csv(buf, &forecasts))
}

fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let ckpt = load_model(&a.model)?;
    let trained = ckpt.train_config.clone().unwrap_or_default();
    let horizon = a.horizon.unwrap_or(trained.horizon);
    if horizon == 0 {
        return Err(CliError::Usage("invalid value for --horizon: must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&a.hold_out) {
        return Err(CliError::Usage(format!("invalid value for --hold-out: {} is outside [0, 1)", a.hold_out)));
    }
    let seed = a.seed.unwrap_or(trained.seed);
    let samples = load_data(&a.data)?;
    let scored = if a.all {
        samples
    } else {
        let parts = split(&samples, &SplitSpec::standard(seed))?;
        if parts.test.is_empty() {
            return Err(CliError::Usage("the test split is empty; pass --all to score every series".into()));
        }
        parts.test
    };
    let window = a.window.or(trained.window);
    let eval = evaluate_forecasts(&ckpt.model, &scored, window, horizon)?;
    let name = dataset_name(&a.dataset, &a.data);
    let row = |model: &str, r: MetricReport| MetricRow::new(&name, model, a.delta, seed, r);
    let mut rows = vec![row("model", eval.model)];
    for (b, r) in &eval.baselines {
        rows.push(row(b.name(), *r));
    }
    if a.hold_out > 0.0 {
        let imp = imputation_eval(&ckpt.model, &scored, a.hold_out, seed)?;
        rows.push(row("impute_before", imp.before));
        rows.push(row("impute_after", imp.after));
    }
    for r in &rows {
        println!("{:<14} rmse {:.4}  mae {:.4}  n {}", r.model, r.rmse, r.mae, r.n_scored);
    }
    write_csv(&a.out.join("metrics.csv"), |buf| write_metrics_csv(buf, &rows))?;
    write_csv(&a.out.join("forecasts.csv"), |buf| write_forecast_csv(buf, &eval.forecasts))
}

fn cmd_sweep(a: &SweepArgs) -> CliResult<()> {
    let cfg = a.model.resolve()?;
    let data_path = required(a.data.clone().or(cfg.data), "data")?;
    let out = required(a.out.clone().or(cfg.out), "out")?;
    let tc = cfg.train;
    if let Some(d) = a.delta.iter().find(|d| !(0.0..1.0).contains(*d)) {
        return Err(CliError::Usage(format!("invalid value for --delta: {d} is outside [0, 1)")));
    }
    let seeds = if a.seeds.is_empty() { vec![tc.seed] } else { a.seeds.clone() };
    let samples = load_data(&data_path)?;
    let parts = split(&samples, &SplitSpec::standard(tc.seed))?;
    let cells = robustness_sweep(&tc, &parts, &a.delta, &seeds)?;
    let name = dataset_name(&a.dataset, &data_path);
    let rows: Vec<MetricRow> = cells.iter().flat_map(|c| c.rows(&name)).collect();
    for c in &cells {
        println!(
            "delta {:<5} seed {:<4} rmse {:.4}  mean baseline {:.4}",
            c.delta,
            c.seed,
            c.eval.model.rmse,
            c.eval.baseline(crate::evalcast::Baseline::Mean).rmse
        );
    }
    write_csv(&out.join("sweep.csv"), |buf| write_metrics_csv(buf, &rows))
}

fn cmd_export_clusters(a: &ExportArgs) -> CliResult<()> {
    let ckpt = load_model(&a.model)?;
    let samples = load_data(&a.data)?;
    let rows = samples
        .iter()
        .map(|s| Ok((s.id().to_string(), ckpt.model.infer(s, 1.0, 0)?.seq.marginals)))
        .collect::<crate::Result<Vec<_>>>()?;
    write_csv(&a.out.join("clusters.csv"), |buf| write_cluster_csv(buf, &rows))?;
    write_json(&a.out.join("basis.json"), &BasisExport::from(&ckpt.model.basis()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("sparsemix").chain(args.iter().copied())).unwrap()
    }

    fn train_flags(args: &[&str]) -> ModelFlags {
        match parse(&[&["train"], args].concat()).command {
            Command::Train(t) => t.model,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_override_config_which_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("c.toml");
        std::fs::write(&toml_path, "k = 7\nlr = 0.05\ngamma = \"gate\"\ndata = \"x.csv\"\n").unwrap();
        let path = toml_path.to_str().unwrap();
        let cfg = train_flags(&["--config", path, "--k", "3"]).resolve().unwrap();
        assert_eq!(cfg.train.k, 3);
        assert_eq!(cfg.train.lr, 0.05);
        assert_eq!(cfg.train.gamma, GammaMode::Gate);
        assert_eq!(cfg.train.epochs, TrainConfig::default().epochs);
        assert_eq!(cfg.data, Some(PathBuf::from("x.csv")));

        let json_path = dir.path().join("c.json");
        std::fs::write(&json_path, r#"{"hidden_dim": 9, "samples": 2}"#).unwrap();
        let cfg = train_flags(&["--config", json_path.to_str().unwrap(), "--samples-S", "4"])
            .resolve()
            .unwrap();
        assert_eq!((cfg.train.hidden_dim, cfg.train.samples), (9, 4));
    }

    #[test]
    fn unknown_config_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "k = 2\nlearning_rate = 1\n").unwrap();
        let err = train_flags(&["--config", p.to_str().unwrap()]).resolve().unwrap_err();
        assert!(matches!(err, CliError::Usage(m) if m.contains("learning_rate")));
    }

    #[test]
    fn invalid_values_name_their_flag() {
        let err = train_flags(&["--sigma", "0"]).resolve().unwrap_err();
        assert!(matches!(err, CliError::Usage(m) if m.contains("--sigma")));
        let err = train_flags(&["--horizon", "0"]).resolve().unwrap_err();
        assert!(matches!(err, CliError::Usage(m) if m.contains("--horizon")));
        assert!(Cli::try_parse_from(["sparsemix", "train", "--gamma", "often"]).is_err());
    }
}
