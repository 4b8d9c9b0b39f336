//! Trains briefly, then forecasts the tail of a held-out series and compares
//! against the hidden truth and the two baselines.

use sparsemix::dataset::{split, synthesize, ForecastTask, SplitSpec, SynthConfig};
use sparsemix::evalcast::{evaluate_forecasts, forecast, Baseline};
use sparsemix::trainer::{train, TrainConfig};

fn main() -> sparsemix::Result<()> {
    let mut syn = SynthConfig::new(3, 2, 20, 200, 100.0, 0.01, 1);
    syn.advance_prob = 0.95;
    let data = synthesize(&syn)?;
    let parts = split(&data.samples, &SplitSpec::standard(1))?;
    let cfg = TrainConfig {
        k: 3,
        sigma: 100.0,
        lr: 1e-2,
        epochs: 60,
        ..TrainConfig::default()
    };
    let model = train(&parts.train, &parts.valid, &cfg)?.model;

    let (prefix, future) = ForecastTask::new(15, 5)?.split(&parts.test[0])?;
    let f = forecast(&model, &prefix, 5)?;
    for step in 0..5 {
        let pred: Vec<f64> = (0..2).map(|v| f.at(v, step)).collect();
        let truth: Vec<Option<f64>> = (0..2).map(|v| future.value(v, step)).collect();
        println!("step {step}: predicted {pred:.2?} truth {truth:.2?}");
    }

    let ev = evaluate_forecasts(&model, &parts.test, None, 5)?;
    println!("model rmse {:.4}", ev.model.rmse);
    for b in Baseline::ALL {
        println!("{} rmse {:.4}", b.name(), ev.baseline(b).rmse);
    }
    Ok(())
}
