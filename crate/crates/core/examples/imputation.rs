//! Hides a tenth of the observed test entries and scores how well the model
//! fills them in, compared with the pre-imputation layer alone.

use sparsemix::dataset::{split, synthesize, SplitSpec, SynthConfig};
use sparsemix::evalcast::imputation_eval;
use sparsemix::trainer::{train, TrainConfig};

fn main() -> sparsemix::Result<()> {
    let mut syn = SynthConfig::new(3, 2, 20, 200, 100.0, 0.01, 2);
    syn.missing = 0.3;
    syn.advance_prob = 0.95;
    let data = synthesize(&syn)?;
    let parts = split(&data.samples, &SplitSpec::standard(2))?;
    let cfg = TrainConfig {
        k: 3,
        sigma: 100.0,
        lr: 1e-2,
        epochs: 60,
        ..TrainConfig::default()
    };
    let model = train(&parts.train, &parts.valid, &cfg)?.model;
    let r = imputation_eval(&model, &parts.test, 0.1, 2)?;
    println!("pre-imputation rmse {:.4} mae {:.4}", r.before.rmse, r.before.mae);
    println!("model rmse {:.4} mae {:.4} ({} entries)", r.after.rmse, r.after.mae, r.after.n_scored);
    Ok(())
}
