use super::param::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Denominator floor for relative errors, so that gradients that are zero
/// analytically are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares reverse-mode gradients of `loss_fn` against central differences
/// with step `h`, for every scalar in `store`. The check passes when the
/// largest relative error is strictly below `tol`.
pub fn fd_check<F>(loss_fn: F, store: &ParamStore, h: f64, tol: f64) -> Result<FdReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("h", "finite-difference step must be positive"));
    }
    let mut analytic = store.clone();
    analytic.zero_grad();
    let mut tape = Tape::new();
    let loss = loss_fn(&mut tape, &analytic)?;
    tape.grad(loss, &mut analytic)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let l = loss_fn(&mut t, s)?;
        t.scalar(l)
    };

    let mut probe = store.clone();
    let mut params = Vec::with_capacity(store.len());
    for id in store.ids() {
        let mut worst = ParamCheck {
            name: store.get(id).name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..store.value(id).len() {
            let orig = store.value(id).data()[i];
            probe.value_mut(id).data_mut()[i] = orig + h;
            let plus = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig - h;
            let minus = eval(&probe)?;
            probe.value_mut(id).data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.grad(id).data()[i];
            let err = relative_error(a, numeric);
            if err > worst.max_rel_error || i == 0 {
                worst.max_rel_error = err;
                worst.worst_index = i;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        params.push(worst);
    }
    let max_rel_error = params
        .iter()
        .map(|p| p.max_rel_error)
        .fold(0.0_f64, f64::max);
    Ok(FdReport {
        params,
        max_rel_error,
        tol,
        passed: max_rel_error < tol,
    })
}
