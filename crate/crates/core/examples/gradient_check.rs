//! Reverse-mode gradients of the full negative ELBO against central
//! differences, parameter tensor by tensor.

use sparsemix::dataset::MtsSample;
use sparsemix::diffnum::{fd_check, ParamStore, Tape};
use sparsemix::trainer::{elbo_on_tape, ElboOptions, GammaMode, KlMode, ModelParams, TrainConfig};

fn main() -> sparsemix::Result<()> {
    let s = MtsSample::from_rows("g", &[vec![Some(0.5), None, Some(-0.3)], vec![None, Some(1.2), Some(0.1)]])?;
    let cfg = TrainConfig {
        k: 2,
        gamma: GammaMode::Gate,
        hidden_dim: 4,
        ..TrainConfig::default()
    };
    let m = ModelParams::new(cfg.model_config(2), 3)?;
    let probs = m.basis_probs.clone();
    let opts = ElboOptions {
        temperature: 0.7,
        kl: KlMode::Sampled,
        samples: 2,
    };
    let loss = |tape: &mut Tape, store: &ParamStore| {
        let view = ModelParams {
            store: store.clone(),
            ..m.clone()
        };
        let (e, _) = elbo_on_tape(&view, tape, &s, &opts, Some(&probs), 5)?;
        tape.affine_const(e, -1.0, 0.0)
    };
    let report = fd_check(loss, &m.store, 1e-4, 1e-4)?;
    for p in &report.params {
        println!("{:<24} {:.2e}", p.name, p.max_rel_error);
    }
    println!("max relative error {:.2e}, passed: {}", report.max_rel_error, report.passed);
    Ok(())
}
