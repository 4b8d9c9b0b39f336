//! The ELBO never exceeds the exact log marginal likelihood, computed by
//! enumerating every cluster path on a short series.

use sparsemix::dataset::MtsSample;
use sparsemix::trainer::{elbo, exact_log_marginal, ElboOptions, GammaMode, KlMode, ModelParams, TrainConfig};

fn main() -> sparsemix::Result<()> {
    let s = MtsSample::from_rows(
        "short",
        &[vec![Some(0.3), Some(-1.0), None, Some(0.8)], vec![Some(1.1), None, Some(0.2), Some(-0.4)]],
    )?;
    let opts = ElboOptions {
        temperature: 1.0,
        kl: KlMode::Exact,
        samples: 1,
    };
    for gamma in [GammaMode::Fixed(0.0), GammaMode::Fixed(0.5), GammaMode::Gate] {
        let cfg = TrainConfig {
            k: 3,
            gamma,
            hidden_dim: 4,
            ..TrainConfig::default()
        };
        let m = ModelParams::new(cfg.model_config(2), 9)?;
        let bound = elbo(&m, &s, &opts, Some(&m.basis_probs), 0)?;
        let exact = exact_log_marginal(&s, &m, &m.basis_probs)?;
        println!(
            "gamma {gamma:>5}: elbo {:.5} <= log p(x) {exact:.5} (gap {:.2e})",
            bound.elbo,
            exact - bound.elbo
        );
    }
    Ok(())
}
