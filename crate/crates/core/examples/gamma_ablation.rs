//! Compares fixed mixing weights and the learned gate on the same data.

use sparsemix::dataset::{split, synthesize, SplitSpec, SynthConfig};
use sparsemix::evalcast::{evaluate_forecasts, Baseline};
use sparsemix::trainer::{train, GammaMode, TrainConfig};

fn main() -> sparsemix::Result<()> {
    let mut syn = SynthConfig::new(3, 2, 20, 200, 100.0, 0.01, 4);
    syn.missing = 0.3;
    syn.advance_prob = 0.95;
    let data = synthesize(&syn)?;
    let parts = split(&data.samples, &SplitSpec::standard(4))?;
    let mut baseline = None;
    for gamma in [GammaMode::Fixed(1.0), GammaMode::Fixed(0.0), GammaMode::Fixed(0.01), GammaMode::Gate] {
        let cfg = TrainConfig {
            k: 3,
            gamma,
            sigma: 100.0,
            lr: 1e-2,
            epochs: 60,
            ..TrainConfig::default()
        };
        let outcome = train(&parts.train, &parts.valid, &cfg)?;
        let ev = evaluate_forecasts(&outcome.model, &parts.test, None, 5)?;
        let gate = outcome.log.last().map_or(f64::NAN, |r| r.gate_mean);
        println!("gamma {gamma:>5}: rmse {:.4} (mean gate {gate:.3})", ev.model.rmse);
        baseline.get_or_insert(ev.baseline(Baseline::Mean).rmse);
    }
    println!("mean baseline: rmse {:.4}", baseline.unwrap_or(f64::NAN));
    Ok(())
}
