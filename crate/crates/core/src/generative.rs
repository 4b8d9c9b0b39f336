//! Generative side of the model: a recurrent transition network over cluster
//! variables, the dynamic Gaussian mixture that blends it with the basis
//! mixture, masked Gaussian emissions, ancestral sampling and rollout
//! forecasting.
//!
//! Emission follows the transition path: at step `t` the emitting cluster is
//! `z_t` with probability `1 − γ` and a draw from the basis probabilities
//! otherwise. Given the path prefix `z_{1:t−1}` its law is exactly the dynamic
//! mixture `ψ_t = (1 − γ) p(z_t | z_{1:t−1}) + γ p(μ)`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffnum::{CellKind, Mlp, ParamId, ParamStore, RecurrentCell, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::seeding::rng_for;

/// Gaussian means, basis probabilities and the shared isotropic precision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureBasis {
    pub k: usize,
    pub d: usize,
    /// Row-major `k × d`.
    pub means: Vec<f64>,
    pub basis_probs: Vec<f64>,
    pub sigma: f64,
}

impl MixtureBasis {
    pub fn new(k: usize, d: usize, means: Vec<f64>, basis_probs: Vec<f64>, sigma: f64) -> Result<Self> {
        if k == 0 || means.len() != k * d {
            return Err(Error::shape("MixtureBasis", format!("{} means for {k}×{d}", means.len())));
        }
        check_simplex("basis_probs", &basis_probs, k)?;
        if !(sigma > 0.0) {
            return Err(Error::invalid("sigma", "precision must be positive"));
        }
        Ok(Self { k, d, means, basis_probs, sigma })
    }

    pub fn mean(&self, i: usize) -> &[f64] {
        &self.means[i * self.d..(i + 1) * self.d]
    }

    /// `Σ_i weights_i μ_i`.
    pub fn mixture_mean(&self, weights: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        for (i, &p) in weights.iter().enumerate() {
            for (o, m) in out.iter_mut().zip(self.mean(i)) {
                *o += p * m;
            }
        }
        out
    }
}

/// JSON layout of the cluster export: `means` as `k` rows of length `d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisExport {
    pub means: Vec<Vec<f64>>,
    pub basis_probs: Vec<f64>,
}

impl From<&MixtureBasis> for BasisExport {
    fn from(b: &MixtureBasis) -> Self {
        Self {
            means: (0..b.k).map(|i| b.mean(i).to_vec()).collect(),
            basis_probs: b.basis_probs.clone(),
        }
    }
}

pub(crate) fn check_simplex(name: &'static str, p: &[f64], k: usize) -> Result<()> {
    if p.len() != k || p.iter().any(|v| !(*v >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(name, format!("{p:?} is not a length-{k} distribution")));
    }
    Ok(())
}

/// Hidden state of the transition network together with the cluster input
/// it will consume next.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionState {
    pub hidden: Vec<f64>,
    pub last_z: Vec<f64>,
}

/// Transition network `h_t = RNN(z_t, h_{t−1})`,
/// `p(z_{t+1} | z_{1:t}) = softmax(MLP(h_t))`, plus the trainable means.
#[derive(Clone, Debug, PartialEq)]
pub struct GenParams {
    pub k: usize,
    pub d: usize,
    pub cell: RecurrentCell,
    pub head: Mlp,
    pub means: ParamId,
}

impl GenParams {
    pub fn new(
        store: &mut ParamStore,
        k: usize,
        d: usize,
        hidden: usize,
        kind: CellKind,
        rng: &mut impl Rng,
    ) -> Self {
        let cell = RecurrentCell::new(store, "gen.cell", kind, k, hidden, rng);
        let head = Mlp::new(store, "gen.head", hidden, hidden, k, rng);
        let init = Normal::new(0.0, 0.1).expect("valid std");
        let mu = (0..k * d).map(|_| init.sample(rng)).collect();
        let means = store.add("gen.means", Tensor::from_parts_unchecked(vec![k, d], mu));
        Self { k, d, cell, head, means }
    }

    /// Zero hidden state; `last_z` is the caller's first cluster input.
    pub fn initial_state(&self, last_z: Vec<f64>) -> TransitionState {
        TransitionState {
            hidden: vec![0.0; self.cell.state_dim()],
            last_z,
        }
    }

    /// One recurrence on the tape: returns the new cell state and the log
    /// transition probabilities `log p(z_{t+1} | z_{1:t})`.
    pub fn step_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        state: Var,
    ) -> Result<(Var, Var)> {
        let next = self.cell.step(tape, store, z, state)?;
        let h = self.cell.output(tape, next)?;
        let logits = self.head.forward(tape, store, h)?;
        let logp = tape.log_softmax(logits)?;
        Ok((next, logp))
    }

    pub fn means_value(&self, store: &ParamStore) -> Vec<f64> {
        store.value(self.means).data().to_vec()
    }

    pub fn basis(&self, store: &ParamStore, basis_probs: Vec<f64>, sigma: f64) -> Result<MixtureBasis> {
        MixtureBasis::new(self.k, self.d, self.means_value(store), basis_probs, sigma)
    }
}

/// Advances the transition network by one step, returning the new state and
/// `p(z_{t+1} | z_{1:t})`. The returned state's `last_z` is left as the input
/// that was consumed; callers overwrite it with the next input.
pub fn transition_step(
    gen: &GenParams,
    store: &ParamStore,
    state: &TransitionState,
) -> Result<(TransitionState, Vec<f64>)> {
    if state.last_z.len() != gen.k || state.hidden.len() != gen.cell.state_dim() {
        return Err(Error::shape("transition_step", "state does not match the network"));
    }
    let mut tape = Tape::new();
    let z = tape.constant_vec(state.last_z.clone())?;
    let h = tape.constant_vec(state.hidden.clone())?;
    let (next, logp) = gen.step_on_tape(&mut tape, store, z, h)?;
    let probs: Vec<f64> = tape.data(logp).iter().map(|v| v.exp()).collect();
    Ok((
        TransitionState {
            hidden: tape.data(next).to_vec(),
            last_z: state.last_z.clone(),
        },
        probs,
    ))
}

/// `ψ = (1 − γ)·trans + γ·basis_probs`.
pub fn dynamic_mixture(trans: &[f64], basis_probs: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if trans.len() != basis_probs.len() {
        return Err(Error::shape("dynamic_mixture", "distributions differ in length"));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid("gamma", format!("{gamma} is outside [0, 1]")));
    }
    Ok(trans
        .iter()
        .zip(basis_probs)
        .map(|(a, b)| (1.0 - gamma) * a + gamma * b)
        .collect())
}

/// Masked isotropic Gaussian log-density of `x` under component `z`.
pub fn emit_loglik(x: &[f64], mask: &[bool], z: usize, basis: &MixtureBasis) -> f64 {
    let mu = basis.mean(z);
    let mut sq = 0.0;
    let mut n_obs = 0usize;
    for ((xi, mi), &m) in x.iter().zip(mu).zip(mask) {
        if m {
            sq += (xi - mi) * (xi - mi);
            n_obs += 1;
        }
    }
    -0.5 * basis.sigma * sq + gaussian_log_norm(n_obs, basis.sigma)
}

/// `n_obs · log √(σ / 2π)`.
pub fn gaussian_log_norm(n_obs: usize, sigma: f64) -> f64 {
    0.5 * n_obs as f64 * (sigma / (2.0 * std::f64::consts::PI)).ln()
}

/// [`emit_loglik`] on the tape, differentiable in `x` and `mu`.
pub fn emit_loglik_on_tape(
    tape: &mut Tape,
    x: Var,
    mu: Var,
    mask: &[bool],
    sigma: f64,
) -> Result<Var> {
    let sq = tape.masked_sq_dist(x, mu, mask)?;
    let n_obs = mask.iter().filter(|&&m| m).count();
    tape.affine_const(sq, -0.5 * sigma, gaussian_log_norm(n_obs, sigma))
}

pub fn draw_categorical(rng: &mut impl Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Emitting cluster: the path cluster `z` with probability `1 − γ`, a basis
/// draw otherwise.
pub fn draw_emission_cluster(rng: &mut impl Rng, z: usize, gamma: f64, basis_probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    if u < gamma {
        draw_categorical(rng, basis_probs)
    } else {
        z
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampledSequence {
    /// Transition path `z_{1:w}`.
    pub path: Vec<usize>,
    /// Emitting clusters `z̃_{1:w}`.
    pub emitted: Vec<usize>,
    /// Row-major `d × w`.
    pub values: Vec<f64>,
}

fn one_hot(k: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[i] = 1.0;
    v
}

/// Ancestral sampling of one series of length `w` from the generative
/// network: `z_1` uniform, hard transitions thereafter.
pub fn sample_sequence(
    gen: &GenParams,
    store: &ParamStore,
    basis: &MixtureBasis,
    gamma: f64,
    w: usize,
    seed: u64,
) -> Result<SampledSequence> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid("gamma", format!("{gamma} is outside [0, 1]")));
    }
    let k = gen.k;
    let d = basis.d;
    let mut rng = rng_for(seed, "sample_sequence");
    let noise = Normal::new(0.0, basis.sigma.powf(-0.5)).expect("positive precision");
    let mut z = draw_categorical(&mut rng, &vec![1.0 / k as f64; k]);
    let mut state = gen.initial_state(one_hot(k, z));
    let mut out = SampledSequence {
        path: Vec::with_capacity(w),
        emitted: Vec::with_capacity(w),
        values: vec![0.0; d * w],
    };
    for t in 0..w {
        if t > 0 {
            let (next, trans) = transition_step(gen, store, &state)?;
            z = draw_categorical(&mut rng, &trans);
            state = TransitionState { hidden: next.hidden, last_z: one_hot(k, z) };
        }
        let ze = draw_emission_cluster(&mut rng, z, gamma, &basis.basis_probs);
        for i in 0..d {
            out.values[i * w + t] = basis.mean(ze)[i] + noise.sample(&mut rng);
        }
        out.path.push(z);
        out.emitted.push(ze);
    }
    Ok(out)
}

/// How the rollout feeds each step's cluster distribution back into the
/// transition network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Feedback {
    /// Feed `ψ` itself; deterministic.
    #[default]
    Soft,
    /// Feed a hard draw from `ψ`, seeded.
    Sampled(u64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// `r` rows of length `k`.
    pub psi: Vec<Vec<f64>>,
    /// Row-major `d × r` mixture-mean forecasts.
    pub predictions: Vec<f64>,
}

/// Rolls the transition network forward `r` steps from `state`, emitting the
/// `ψ`-weighted mean of the Gaussian means at each step.
pub fn forecast_rollout(
    gen: &GenParams,
    store: &ParamStore,
    state: &TransitionState,
    basis: &MixtureBasis,
    gamma: f64,
    r: usize,
) -> Result<Rollout> {
    forecast_rollout_with(gen, store, state, basis, gamma, r, Feedback::Soft)
}

pub fn forecast_rollout_with(
    gen: &GenParams,
    store: &ParamStore,
    state: &TransitionState,
    basis: &MixtureBasis,
    gamma: f64,
    r: usize,
    feedback: Feedback,
) -> Result<Rollout> {
    if r == 0 {
        return Err(Error::invalid("horizon", "must be at least 1"));
    }
    let d = basis.d;
    let mut rng = match feedback {
        Feedback::Sampled(seed) => Some(rng_for(seed, "rollout")),
        Feedback::Soft => None,
    };
    let mut state = state.clone();
    let mut psi_rows = Vec::with_capacity(r);
    let mut predictions = vec![0.0; d * r];
    for step in 0..r {
        let (next, trans) = transition_step(gen, store, &state)?;
        let psi = dynamic_mixture(&trans, &basis.basis_probs, gamma)?;
        let mean = basis.mixture_mean(&psi);
        for i in 0..d {
            predictions[i * r + step] = mean[i];
        }
        let fed = match rng.as_mut() {
            Some(rng) => one_hot(gen.k, draw_categorical(rng, &psi)),
            None => psi.clone(),
        };
        state = TransitionState { hidden: next.hidden, last_z: fed };
        psi_rows.push(psi);
    }
    Ok(Rollout { psi: psi_rows, predictions })
}

#[cfg(test)]
mod tests;
