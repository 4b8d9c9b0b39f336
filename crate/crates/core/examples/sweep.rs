//! Robustness sweep over extra missingness, written as a metrics table.

use sparsemix::dataset::{split, synthesize, SplitSpec, SynthConfig};
use sparsemix::evalcast::{robustness_sweep, write_metrics_csv};
use sparsemix::trainer::TrainConfig;

fn main() -> sparsemix::Result<()> {
    let mut syn = SynthConfig::new(3, 2, 20, 120, 100.0, 0.01, 3);
    syn.advance_prob = 0.95;
    let data = synthesize(&syn)?;
    let parts = split(&data.samples, &SplitSpec::standard(3))?;
    let cfg = TrainConfig {
        k: 3,
        sigma: 100.0,
        lr: 1e-2,
        epochs: 30,
        ..TrainConfig::default()
    };
    let cells = robustness_sweep(&cfg, &parts, &[0.0, 0.3, 0.6], &[1])?;
    let rows: Vec<_> = cells.iter().flat_map(|c| c.rows("synthetic")).collect();
    write_metrics_csv(std::io::stdout().lock(), &rows)
}
