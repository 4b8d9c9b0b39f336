use super::{GammaMode, ModelParams};
use crate::dataset::MtsSample;
use crate::diffnum::log_sum_exp;
use crate::error::{Error, Result};
use crate::generative::{emit_loglik, transition_step, MixtureBasis, TransitionState};

/// Largest number of latent paths the enumeration routines accept.
pub const EXACT_PATH_LIMIT: u128 = 4096;

/// Per-step emission log-likelihood under every path cluster:
/// `log[(1 − γ_t) N(x_t | μ_z) + γ_t Σ_i p(μ_i) N(x_t | μ_i)]`.
fn emission_table(sample: &MtsSample, basis: &MixtureBasis, gammas: &[f64]) -> Vec<Vec<f64>> {
    (0..sample.len())
        .map(|t| {
            let (x, mask) = sample.column(t);
            let ll: Vec<f64> = (0..basis.k).map(|z| emit_loglik(&x, &mask, z, basis)).collect();
            let basis_part: Vec<f64> = ll
                .iter()
                .zip(&basis.basis_probs)
                .map(|(l, p)| l + p.ln())
                .collect();
            let log_basis = log_sum_exp(&basis_part);
            let g = gammas[t];
            ll.iter()
                .map(|&l| {
                    let mut parts = Vec::with_capacity(2);
                    if g < 1.0 {
                        parts.push((1.0 - g).ln() + l);
                    }
                    if g > 0.0 {
                        parts.push(g.ln() + log_basis);
                    }
                    log_sum_exp(&parts)
                })
                .collect()
        })
        .collect()
}

/// Exact `log p(x)` by enumerating all `k^w` transition paths, with the
/// model's basis probabilities replaced by `basis_probs`.
pub fn exact_log_marginal(sample: &MtsSample, model: &ModelParams, basis_probs: &[f64]) -> Result<f64> {
    model.check_sample(sample)?;
    let (k, w) = (model.k(), sample.len());
    let paths = (k as u128).checked_pow(w as u32).unwrap_or(u128::MAX);
    if paths > EXACT_PATH_LIMIT {
        return Err(Error::EnumerationTooLarge {
            paths,
            limit: EXACT_PATH_LIMIT,
        });
    }
    let basis = model.gen.basis(&model.store, basis_probs.to_vec(), model.config.sigma)?;
    let gammas = match model.config.gamma {
        GammaMode::Fixed(g) => vec![g; w],
        GammaMode::Gate => model.infer(sample, 1.0, 0)?.gates,
    };
    let emit = emission_table(sample, &basis, &gammas);
    let mut leaves = Vec::with_capacity(paths as usize);
    for z1 in 0..k {
        let lp = -(k as f64).ln() + emit[0][z1];
        let state = model.gen.initial_state(one_hot(k, z1));
        enumerate(model, &emit, 1, state, lp, &mut leaves)?;
    }
    Ok(log_sum_exp(&leaves))
}

fn one_hot(k: usize, z: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[z] = 1.0;
    v
}

fn enumerate(
    model: &ModelParams,
    emit: &[Vec<f64>],
    len: usize,
    state: TransitionState,
    log_p: f64,
    leaves: &mut Vec<f64>,
) -> Result<()> {
    if len == emit.len() {
        leaves.push(log_p);
        return Ok(());
    }
    let (next, trans) = transition_step(&model.gen, &model.store, &state)?;
    for (z, &p) in trans.iter().enumerate() {
        let child = TransitionState {
            hidden: next.hidden.clone(),
            last_z: one_hot(model.k(), z),
        };
        enumerate(model, emit, len + 1, child, log_p + p.ln() + emit[len][z], leaves)?;
    }
    Ok(())
}

/// `Σ_t log Σ_i p(μ_i) N(x_t | μ_i)`: the static mixture likelihood.
pub fn static_mixture_loglik(sample: &MtsSample, basis: &MixtureBasis) -> f64 {
    (0..sample.len())
        .map(|t| {
            let (x, mask) = sample.column(t);
            let parts: Vec<f64> = (0..basis.k)
                .map(|i| basis.basis_probs[i].ln() + emit_loglik(&x, &mask, i, basis))
                .collect();
            log_sum_exp(&parts)
        })
        .sum()
}
