use rayon::prelude::*;

use super::{GammaMode, ModelParams};
use crate::dataset::MtsSample;
use crate::diffnum::{ParamId, Tape, Var};
use crate::error::{Error, Result};
use crate::generative::emit_loglik_on_tape;
use crate::inference::{estimate_basis_probs, gumbel_noise, InferTape};

/// How the expected transition KL is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum KlMode {
    /// Average over relaxed ancestral sample paths.
    #[default]
    Sampled,
    /// Exact expectation over every latent prefix; tiny instances only.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboOptions {
    pub temperature: f64,
    pub kl: KlMode,
    /// Relaxed sample paths when `kl` is [`KlMode::Sampled`].
    pub samples: usize,
}

impl Default for ElboOptions {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            kl: KlMode::Sampled,
            samples: 1,
        }
    }
}

/// Value of each ELBO term for one series. `elbo = reconstruction −
/// prior_kl − transition_kl + basis`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboTerms {
    pub reconstruction: f64,
    pub prior_kl: f64,
    pub transition_kl: f64,
    pub basis: f64,
    pub elbo: f64,
}

/// Everything but the basis term, which waits for the batch estimate of the
/// basis probabilities.
struct Partial {
    reconstruction: Var,
    prior_kl: Var,
    transition_kl: Var,
    /// `Σ_t γ_t log N(x_t | μ_r)` for each `r`.
    basis_loglik: Var,
    marginals: Vec<Vec<f64>>,
    gates: Vec<f64>,
}

fn build(
    model: &ModelParams,
    tape: &mut Tape,
    sample: &MtsSample,
    opts: &ElboOptions,
    seed: u64,
) -> Result<Partial> {
    model.check_sample(sample)?;
    let (k, d, w) = (model.k(), model.d(), sample.len());
    let store = &model.store;
    let inputs = model.pre.forward(tape, store, sample)?;
    let paths = match opts.kl {
        KlMode::Sampled => opts.samples.max(1),
        KlMode::Exact => 0,
    };
    let noise: Vec<_> = (0..paths)
        .map(|p| gumbel_noise(crate::seeding::derive_seed(seed, &format!("path/{p}")), w, k))
        .collect();
    let inf = model.inf.forward_on_tape(tape, store, &inputs, opts.temperature, &noise)?;

    let means = tape.param(store, model.gen.means)?;
    let mus: Vec<Var> = (0..k).map(|r| tape.slice(means, r * d, d)).collect::<Result<_>>()?;
    let mut recon_terms = Vec::with_capacity(w);
    let mut basis_terms = Vec::with_capacity(w);
    for t in 0..w {
        let (x, mask) = sample.column(t);
        let xv = tape.constant_vec(x)?;
        let lls: Vec<Var> = mus
            .iter()
            .map(|&mu| emit_loglik_on_tape(tape, xv, mu, &mask, model.config.sigma))
            .collect::<Result<_>>()?;
        let ll = tape.concat(&lls)?;
        let rec = tape.dot(inf.marginals[t], ll)?;
        match model.config.gamma {
            GammaMode::Fixed(g) => {
                recon_terms.push(tape.affine_const(rec, 1.0 - g, 0.0)?);
                basis_terms.push(tape.affine_const(ll, g, 0.0)?);
            }
            GammaMode::Gate => {
                let g = inf.gates[t];
                let one_minus = tape.affine_const(g, -1.0, 1.0)?;
                recon_terms.push(tape.mul(one_minus, rec)?);
                basis_terms.push(tape.scale(ll, g)?);
            }
        }
    }
    let reconstruction = sum_all(tape, &recon_terms)?;
    let basis_loglik = sum_all(tape, &basis_terms)?;

    let q1 = inf.conditionals[0][0];
    let lq1 = inf.log_conditionals[0][0];
    let neg_entropy = tape.dot(q1, lq1)?;
    let prior_kl = tape.affine_const(neg_entropy, 1.0, (k as f64).ln())?;

    let transition_kl = match opts.kl {
        KlMode::Sampled => sampled_transition_kl(model, tape, &inf)?,
        KlMode::Exact => exact_transition_kl(model, tape, &inf, w)?,
    };

    Ok(Partial {
        reconstruction,
        prior_kl,
        transition_kl,
        basis_loglik,
        marginals: inf.marginals.iter().map(|&m| tape.data(m).to_vec()).collect(),
        gates: inf.gates.iter().map(|&g| tape.data(g)[0]).collect(),
    })
}

fn sum_all(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

/// `Σ q (log q − log p)` from log-probabilities.
fn kl(tape: &mut Tape, log_q: Var, log_p: Var) -> Result<Var> {
    let q = tape.exp(log_q)?;
    let diff = tape.sub(log_q, log_p)?;
    tape.dot(q, diff)
}

fn sampled_transition_kl(model: &ModelParams, tape: &mut Tape, inf: &InferTape) -> Result<Var> {
    let store = &model.store;
    let n_paths = inf.samples.len();
    let mut total = tape.constant_scalar(0.0)?;
    for (samples, log_conds) in inf.samples.iter().zip(&inf.sample_log_conditionals) {
        let mut state = model.gen.cell.zero_state(tape)?;
        for t in 0..samples.len() - 1 {
            let (next, log_p) = model.gen.step_on_tape(tape, store, samples[t], state)?;
            state = next;
            let term = kl(tape, log_conds[t + 1], log_p)?;
            total = tape.add(total, term)?;
        }
    }
    tape.affine_const(total, 1.0 / n_paths as f64, 0.0)
}

/// Expectation over every prefix `z_{1:t}` weighted by its posterior
/// probability, with the transition network run on hard one-hot paths.
fn exact_transition_kl(model: &ModelParams, tape: &mut Tape, inf: &InferTape, w: usize) -> Result<Var> {
    let k = model.k();
    let paths = (k as u128).checked_pow(w as u32).unwrap_or(u128::MAX);
    if paths > super::EXACT_PATH_LIMIT {
        return Err(Error::EnumerationTooLarge {
            paths,
            limit: super::EXACT_PATH_LIMIT,
        });
    }
    let one_hots: Vec<Var> = (0..k)
        .map(|z| {
            let mut v = vec![0.0; k];
            v[z] = 1.0;
            tape.constant_vec(v)
        })
        .collect::<Result<_>>()?;
    let mut total = tape.constant_scalar(0.0)?;
    let state = model.gen.cell.zero_state(tape)?;
    for z1 in 0..k {
        let weight = tape.element(inf.conditionals[0][0], z1)?;
        let mut ctx = Dfs { model, inf, one_hots: &one_hots, w, total };
        ctx.visit(tape, 1, z1, state, weight)?;
        total = ctx.total;
    }
    Ok(total)
}

struct Dfs<'a> {
    model: &'a ModelParams,
    inf: &'a InferTape,
    one_hots: &'a [Var],
    w: usize,
    total: Var,
}

impl Dfs<'_> {
    /// `len` steps of the prefix are fixed, the last being `last`; `state`
    /// has consumed all but `last`.
    fn visit(&mut self, tape: &mut Tape, len: usize, last: usize, state: Var, weight: Var) -> Result<()> {
        if len == self.w {
            return Ok(());
        }
        let (next, log_p) = self.model.gen.step_on_tape(tape, &self.model.store, self.one_hots[last], state)?;
        let term = kl(tape, self.inf.log_conditionals[len][last], log_p)?;
        let term = tape.mul(weight, term)?;
        self.total = tape.add(self.total, term)?;
        if len + 1 == self.w {
            return Ok(());
        }
        for z in 0..self.model.k() {
            let p = tape.element(self.inf.conditionals[len][last], z)?;
            let wz = tape.mul(weight, p)?;
            self.visit(tape, len + 1, z, next, wz)?;
        }
        Ok(())
    }
}

fn finish(tape: &mut Tape, part: &Partial, basis_probs: &[f64]) -> Result<(Var, ElboTerms)> {
    let p = tape.constant_vec(basis_probs.to_vec())?;
    let basis = tape.dot(p, part.basis_loglik)?;
    let a = tape.sub(part.reconstruction, part.prior_kl)?;
    let a = tape.sub(a, part.transition_kl)?;
    let elbo = tape.add(a, basis)?;
    let terms = ElboTerms {
        reconstruction: tape.data(part.reconstruction)[0],
        prior_kl: tape.data(part.prior_kl)[0],
        transition_kl: tape.data(part.transition_kl)[0],
        basis: tape.data(basis)[0],
        elbo: tape.data(elbo)[0],
    };
    Ok((elbo, terms))
}

/// ELBO of one series built on `tape`. With `basis_probs = None` the basis
/// probabilities are estimated from this series' own marginals.
pub fn elbo_on_tape(
    model: &ModelParams,
    tape: &mut Tape,
    sample: &MtsSample,
    opts: &ElboOptions,
    basis_probs: Option<&[f64]>,
    seed: u64,
) -> Result<(Var, ElboTerms)> {
    let part = build(model, tape, sample, opts, seed)?;
    let estimated;
    let probs = match basis_probs {
        Some(p) => p,
        None => {
            estimated = estimate_basis_probs(&part.marginals)?;
            &estimated
        }
    };
    finish(tape, &part, probs)
}

/// ELBO terms of one series; see [`elbo_on_tape`].
pub fn elbo(
    model: &ModelParams,
    sample: &MtsSample,
    opts: &ElboOptions,
    basis_probs: Option<&[f64]>,
    seed: u64,
) -> Result<ElboTerms> {
    let mut tape = Tape::new();
    Ok(elbo_on_tape(model, &mut tape, sample, opts, basis_probs, seed)?.1)
}

/// Mean negative ELBO over a batch with basis probabilities estimated from
/// the whole batch, plus parameter gradients when requested.
#[derive(Clone, Debug)]
pub struct BatchObjective {
    pub mean_neg_elbo: f64,
    pub gate_mean: f64,
    pub basis_probs: Vec<f64>,
    /// Gradient of the mean negative ELBO, in parameter order.
    pub grads: Option<Vec<Vec<f64>>>,
}

pub fn batch_objective(
    model: &ModelParams,
    batch: &[MtsSample],
    seeds: &[u64],
    opts: &ElboOptions,
    with_grad: bool,
) -> Result<BatchObjective> {
    if batch.is_empty() || seeds.len() != batch.len() {
        return Err(Error::invalid("batch", "need one seed per sample and at least one sample"));
    }
    let built: Vec<(Tape, Partial)> = batch
        .par_iter()
        .zip(seeds)
        .map(|(s, &seed)| {
            let mut tape = Tape::new();
            let part = build(model, &mut tape, s, opts, seed)?;
            Ok((tape, part))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = built.iter().flat_map(|(_, p)| p.marginals.iter().cloned()).collect();
    let basis_probs = estimate_basis_probs(&rows)?;
    let gates: Vec<f64> = built.iter().flat_map(|(_, p)| p.gates.iter().copied()).collect();
    let gate_mean = match model.config.gamma {
        GammaMode::Fixed(g) => g,
        GammaMode::Gate => gates.iter().sum::<f64>() / gates.len() as f64,
    };
    let scale = -1.0 / batch.len() as f64;

    type Finished = (f64, Option<Vec<(ParamId, Vec<f64>)>>);
    let finished: Vec<Finished> = built
        .into_par_iter()
        .map(|(mut tape, part)| {
            let (elbo, terms) = finish(&mut tape, &part, &basis_probs)?;
            let grads = if with_grad {
                let loss = tape.affine_const(elbo, scale, 0.0)?;
                let g = tape.backward(loss)?;
                Some(tape.param_grads(&g))
            } else {
                None
            };
            Ok((terms.elbo, grads))
        })
        .collect::<Result<_>>()?;

    let mean_neg_elbo = -finished.iter().map(|(e, _)| e).sum::<f64>() / batch.len() as f64;
    if !mean_neg_elbo.is_finite() {
        return Err(Error::NonFinite { op: "elbo" });
    }
    let grads = with_grad.then(|| {
        let mut acc: Vec<Vec<f64>> = model.store.iter().map(|p| vec![0.0; p.value.len()]).collect();
        for (_, g) in &finished {
            for (id, g) in g.as_ref().expect("gradients requested") {
                for (a, b) in acc[id.index()].iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        acc
    });
    Ok(BatchObjective {
        mean_neg_elbo,
        gate_mean,
        basis_probs,
        grads,
    })
}
