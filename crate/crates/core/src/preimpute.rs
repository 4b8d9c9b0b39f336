//! Learnable pre-imputation: Gaussian-kernel smoothing of each variable over
//! time, then an intensity-weighted merge across variables for the entries
//! that were not observed.

use serde::{Deserialize, Serialize};

use crate::dataset::MtsSample;
use crate::diffnum::{softplus, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Plain-valued layer parameters. Bandwidths are `softplus(alpha_raw)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreImputeParams {
    pub alpha_raw: Vec<f64>,
    /// Row-major `d × d`, unit diagonal.
    pub rho: Vec<f64>,
}

impl PreImputeParams {
    /// Identity correlations and `alpha_raw = 0`, i.e. `α = ln 2`.
    pub fn identity(d: usize) -> Self {
        let mut rho = vec![0.0; d * d];
        for i in 0..d {
            rho[i * d + i] = 1.0;
        }
        Self {
            alpha_raw: vec![0.0; d],
            rho,
        }
    }

    pub fn dims(&self) -> usize {
        self.alpha_raw.len()
    }

    pub fn alpha(&self, i: usize) -> f64 {
        softplus(self.alpha_raw[i])
    }

    fn check(&self, d: usize) -> Result<()> {
        if self.alpha_raw.len() != d || self.rho.len() != d * d {
            return Err(Error::shape(
                "PreImputeParams",
                format!("parameters for d = {} applied to d = {d}", self.alpha_raw.len()),
            ));
        }
        Ok(())
    }
}

/// Fully populated series produced by the layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMts {
    pub d: usize,
    pub w: usize,
    /// Row-major `d × w`.
    pub values: Vec<f64>,
    pub source_mask: Vec<bool>,
}

impl DenseMts {
    pub fn get(&self, var: usize, t: usize) -> f64 {
        self.values[var * self.w + t]
    }

    pub fn column(&self, t: usize) -> Vec<f64> {
        (0..self.d).map(|i| self.get(i, t)).collect()
    }
}

/// `exp(−α (t* − t)²)`.
pub fn kernel(t_star: f64, t: f64, alpha: f64) -> f64 {
    (-alpha * (t_star - t).powi(2)).exp()
}

/// Observation density `Σ_t m_t κ(t*, t; α)` of one variable's mask row.
pub fn intensity(t_star: f64, mask_row: &[bool], ref_times: &[f64], alpha: f64) -> f64 {
    mask_row
        .iter()
        .zip(ref_times)
        .filter(|(&m, _)| m)
        .map(|(_, &t)| kernel(t_star, t, alpha))
        .sum()
}

/// Kernel-smoothed estimate `x̄` and intensity `λ` for every variable and
/// step, both row-major `d × w`. A variable with no observations smooths to 0
/// with intensity 0.
pub fn smooth(sample: &MtsSample, params: &PreImputeParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let (d, w) = (sample.dims(), sample.len());
    params.check(d)?;
    let times = sample.ref_times();
    let mut xbar = vec![0.0; d * w];
    let mut lambda = vec![0.0; d * w];
    for i in 0..d {
        let alpha = params.alpha(i);
        for (ts, &t_star) in times.iter().enumerate() {
            let mut num = 0.0;
            let mut den = 0.0;
            for (t, &tt) in times.iter().enumerate() {
                if let Some(x) = sample.value(i, t) {
                    let k = kernel(t_star, tt, alpha);
                    num += k * x;
                    den += k;
                }
            }
            lambda[i * w + ts] = den;
            xbar[i * w + ts] = if den > 0.0 { num / den } else { 0.0 };
        }
    }
    Ok((xbar, lambda))
}

/// Cross-variable merge. Observed entries pass through untouched; a missing
/// entry of variable `i` becomes
/// `Σ_j ρ_ij λ(t*, m^i; α_j) x̄_j / Σ_j λ(t*, m^i; α_j)`, or 0 when the
/// denominator vanishes.
pub fn merge(sample: &MtsSample, xbar: &[f64], params: &PreImputeParams) -> Result<DenseMts> {
    let (d, w) = (sample.dims(), sample.len());
    params.check(d)?;
    if xbar.len() != d * w {
        return Err(Error::shape("merge", "smoothed matrix does not match the sample"));
    }
    let times = sample.ref_times();
    let mut values = vec![0.0; d * w];
    for i in 0..d {
        let row = sample.mask_row(i);
        for (ts, &t_star) in times.iter().enumerate() {
            values[i * w + ts] = match sample.value(i, ts) {
                Some(x) => x,
                None => {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for j in 0..d {
                        let lam = intensity(t_star, row, times, params.alpha(j));
                        num += params.rho[i * d + j] * lam * xbar[j * w + ts];
                        den += lam;
                    }
                    if den > 0.0 {
                        num / den
                    } else {
                        0.0
                    }
                }
            };
        }
    }
    Ok(DenseMts {
        d,
        w,
        values,
        source_mask: sample.mask().to_vec(),
    })
}

/// `merge ∘ smooth`.
pub fn preimpute(sample: &MtsSample, params: &PreImputeParams) -> Result<DenseMts> {
    let (xbar, _) = smooth(sample, params)?;
    merge(sample, &xbar, params)
}

/// The layer's trainable parameters registered in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct PreImputeLayer {
    pub d: usize,
    pub alpha_raw: ParamId,
    pub rho: ParamId,
}

impl PreImputeLayer {
    pub fn new(store: &mut ParamStore, d: usize) -> Self {
        let init = PreImputeParams::identity(d);
        let alpha_raw = store.add("pre.alpha_raw", Tensor::from_parts_unchecked(vec![d], init.alpha_raw));
        let rho = store.add("pre.rho", Tensor::from_parts_unchecked(vec![d, d], init.rho));
        Self { d, alpha_raw, rho }
    }

    pub fn params(&self, store: &ParamStore) -> PreImputeParams {
        PreImputeParams {
            alpha_raw: store.value(self.alpha_raw).data().to_vec(),
            rho: store.value(self.rho).data().to_vec(),
        }
    }

    /// Restores `ρ_ii = 1` after an update.
    pub fn pin_rho_diagonal(&self, store: &mut ParamStore) {
        let d = self.d;
        let rho = store.value_mut(self.rho).data_mut();
        for i in 0..d {
            rho[i * d + i] = 1.0;
        }
    }

    /// Differentiable [`preimpute`]; returns one `d`-vector per step.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, sample: &MtsSample) -> Result<Vec<Var>> {
        let (d, w) = (sample.dims(), sample.len());
        if d != self.d {
            return Err(Error::shape("preimpute", format!("layer for d = {} applied to d = {d}", self.d)));
        }
        let times = sample.ref_times();
        let alpha_raw = tape.param(store, self.alpha_raw)?;
        let rho = tape.param(store, self.rho)?;
        let alpha: Vec<Var> = (0..d)
            .map(|j| {
                let a = tape.element(alpha_raw, j)?;
                tape.softplus(a)
            })
            .collect::<Result<_>>()?;
        let rho_rows: Vec<Var> = (0..d).map(|i| tape.slice(rho, i * d, d)).collect::<Result<_>>()?;
        let masks: Vec<Var> = (0..d)
            .map(|i| {
                let m = sample.mask_row(i).iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
                tape.constant_vec(m)
            })
            .collect::<Result<_>>()?;
        let observed = sample.observed_or_zero();
        let masked_x: Vec<Var> = (0..d)
            .map(|i| tape.constant_vec(observed[i * w..(i + 1) * w].to_vec()))
            .collect::<Result<_>>()?;

        let mut columns = Vec::with_capacity(w);
        for (ts, &t_star) in times.iter().enumerate() {
            let neg_sq = tape.constant_vec(times.iter().map(|&t| -(t_star - t).powi(2)).collect())?;
            // Kernel weights over the grid for each bandwidth.
            let kernels: Vec<Var> = alpha
                .iter()
                .map(|&a| {
                    let e = tape.scale(neg_sq, a)?;
                    tape.exp(e)
                })
                .collect::<Result<_>>()?;
            let mut xbar = Vec::with_capacity(d);
            for j in 0..d {
                let num = tape.dot(kernels[j], masked_x[j])?;
                let den = tape.dot(kernels[j], masks[j])?;
                xbar.push(tape.div_or_zero(num, den)?);
            }
            let xbar = tape.concat(&xbar)?;
            let mut col = Vec::with_capacity(d);
            let mut col_mask = Vec::with_capacity(d);
            for i in 0..d {
                col_mask.push(sample.is_observed(i, ts));
                if sample.is_observed(i, ts) {
                    col.push(tape.constant_scalar(0.0)?);
                    continue;
                }
                let lam: Vec<Var> = kernels
                    .iter()
                    .map(|&k| tape.dot(k, masks[i]))
                    .collect::<Result<_>>()?;
                let lam = tape.concat(&lam)?;
                let weights = tape.mul(rho_rows[i], lam)?;
                let num = tape.dot(weights, xbar)?;
                let den = tape.sum(lam)?;
                col.push(tape.div_or_zero(num, den)?);
            }
            let imputed = tape.concat(&col)?;
            let obs = tape.constant_vec((0..d).map(|i| observed[i * w + ts]).collect())?;
            columns.push(tape.select(&col_mask, obs, imputed)?);
        }
        Ok(columns)
    }
}

#[cfg(test)]
mod tests;
