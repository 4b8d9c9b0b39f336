//! Per-step cluster assignments and the learned basis, as the CLI exports
//! them.

use sparsemix::dataset::{split, synthesize, SplitSpec, SynthConfig};
use sparsemix::generative::BasisExport;
use sparsemix::trainer::{train, TrainConfig};

fn main() -> sparsemix::Result<()> {
    let mut syn = SynthConfig::new(3, 2, 12, 120, 100.0, 0.01, 5);
    syn.advance_prob = 0.95;
    let data = synthesize(&syn)?;
    let parts = split(&data.samples, &SplitSpec::standard(5))?;
    let cfg = TrainConfig {
        k: 3,
        sigma: 100.0,
        lr: 1e-2,
        epochs: 40,
        ..TrainConfig::default()
    };
    let model = train(&parts.train, &parts.valid, &cfg)?.model;
    println!("{}", serde_json::to_string_pretty(&BasisExport::from(&model.basis()?))?);
    println!("sample_id,t,argmax_z,prob");
    for s in parts.test.iter().take(2) {
        let q = model.infer(s, 1.0, 0)?.seq.marginals;
        for (t, row) in q.iter().enumerate() {
            let (z, p) = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .expect("k >= 1");
            println!("{},{},{z},{p:.4}", s.id(), t + 1);
        }
    }
    Ok(())
}
