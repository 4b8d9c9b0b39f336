//! Fits the model on synthetic data and prints the training log.

use sparsemix::dataset::{split, synthesize, SplitSpec, SynthConfig};
use sparsemix::trainer::{train, TrainConfig};

fn main() -> sparsemix::Result<()> {
    let mut syn = SynthConfig::new(3, 2, 20, 200, 100.0, 0.01, 0);
    syn.missing = 0.3;
    syn.advance_prob = 0.95;
    let data = synthesize(&syn)?;
    let parts = split(&data.samples, &SplitSpec::standard(0))?;
    let cfg = TrainConfig {
        k: 3,
        sigma: 100.0,
        lr: 1e-2,
        epochs: 40,
        ..TrainConfig::default()
    };
    let outcome = train(&parts.train, &parts.valid, &cfg)?;
    outcome.write_log_csv(std::io::stdout().lock())?;
    let basis = outcome.model.basis()?;
    for i in 0..3 {
        println!("learned mean {i}: {:.3?}", basis.mean(i));
    }
    println!("true means: {:.3?}", data.truth.means);
    Ok(())
}
