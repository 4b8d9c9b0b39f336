//! Draws a small synthetic dataset and prints it in the long CSV layout.

use sparsemix::dataset::{synthesize, write_long_csv, SynthConfig};

fn main() -> sparsemix::Result<()> {
    let mut cfg = SynthConfig::new(3, 2, 8, 2, 100.0, 0.01, 42);
    cfg.missing = 0.25;
    let data = synthesize(&cfg)?;
    println!("true means: {:?}", data.truth.means);
    println!("first path: {:?}", data.truth.paths[0]);
    write_long_csv(std::io::stdout().lock(), &data.samples)
}
