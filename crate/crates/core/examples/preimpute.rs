//! Kernel smoothing and cross-variable merge on one sparse series.

use sparsemix::dataset::MtsSample;
use sparsemix::preimpute::{preimpute, smooth, PreImputeParams};

fn main() -> sparsemix::Result<()> {
    let s = MtsSample::from_rows(
        "demo",
        &[
            vec![Some(1.0), None, None, Some(4.0), None],
            vec![None, Some(-1.0), Some(-0.5), None, None],
        ],
    )?;
    let mut params = PreImputeParams::identity(2);
    // Let the second variable borrow from the first.
    params.rho[2] = 0.5;
    let (xbar, lambda) = smooth(&s, &params)?;
    println!("smoothed  {xbar:.3?}");
    println!("intensity {lambda:.3?}");
    let dense = preimpute(&s, &params)?;
    for var in 0..2 {
        let row: Vec<f64> = (0..s.len()).map(|t| dense.get(var, t)).collect();
        println!("var {var}: {row:.3?}");
    }
    Ok(())
}
