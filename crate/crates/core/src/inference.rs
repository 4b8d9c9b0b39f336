//! Structured inference network `q(z_t | x_{1:t}, z_{t−1})`, Gumbel-softmax
//! relaxation, the gate head, marginalization of the conditional table and
//! basis-probability estimation.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Gumbel};
use serde::{Deserialize, Serialize};

use crate::diffnum::{softmax, CellKind, Mlp, ParamStore, RecurrentCell, Tape, Var};
use crate::error::{Error, Result};
use crate::preimpute::DenseMts;
use crate::seeding::rng_for;

/// Which observation the inference recurrence has consumed when it scores
/// `z_t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputAlignment {
    /// `h̃_t = RNN(x_t, h̃_{t−1})`: the posterior over `z_t` sees `x_{1:t}`.
    #[default]
    Current,
    /// `h̃_{t+1} = RNN(x_t, h̃_t)` with `h̃_1 = 0`: the posterior over `z_t`
    /// sees `x_{1:t−1}` only.
    Lagged,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferParams {
    pub k: usize,
    pub d: usize,
    pub cell: RecurrentCell,
    /// `[h̃_t; z_{t−1}] → logits`.
    pub head: Mlp,
    /// `h̃_t → γ_t` pre-activation.
    pub gate: Mlp,
    pub alignment: InputAlignment,
}

impl InferParams {
    pub fn new(
        store: &mut ParamStore,
        k: usize,
        d: usize,
        hidden: usize,
        kind: CellKind,
        alignment: InputAlignment,
        rng: &mut impl Rng,
    ) -> Self {
        let cell = RecurrentCell::new(store, "inf.cell", kind, d, hidden, rng);
        let head = Mlp::new(store, "inf.head", hidden + k, hidden, k, rng);
        let gate = Mlp::new(store, "inf.gate", hidden, hidden, 1, rng);
        Self { k, d, cell, head, gate, alignment }
    }

    /// Runs the network over per-step input columns on `tape`. Each entry of
    /// `noise` holds one Gumbel vector per step and yields one relaxed sample
    /// path.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &[Var],
        temperature: f64,
        noise: &[Vec<Vec<f64>>],
    ) -> Result<InferTape> {
        let (k, w) = (self.k, inputs.len());
        if w == 0 {
            return Err(Error::invalid("inputs", "need at least one step"));
        }
        if !(temperature > 0.0) {
            return Err(Error::invalid("temperature", "must be positive"));
        }
        if noise.iter().any(|path| path.len() != w || path.iter().any(|g| g.len() != k)) {
            return Err(Error::shape("infer", "noise must be w rows of length k per path"));
        }
        let mut state = self.cell.zero_state(tape)?;
        let mut hidden_states = Vec::with_capacity(w);
        for &x in inputs {
            if self.alignment == InputAlignment::Lagged {
                hidden_states.push(self.cell.output(tape, state)?);
            }
            state = self.cell.step(tape, store, x, state)?;
            if self.alignment == InputAlignment::Current {
                hidden_states.push(self.cell.output(tape, state)?);
            }
        }

        let one_hots: Vec<Var> = (0..k)
            .map(|s| {
                let mut v = vec![0.0; k];
                v[s] = 1.0;
                tape.constant_vec(v)
            })
            .collect::<Result<_>>()?;
        let z0 = tape.constant_vec(vec![0.0; k])?;

        let mut out = InferTape {
            log_conditionals: Vec::with_capacity(w),
            conditionals: Vec::with_capacity(w),
            marginals: Vec::with_capacity(w),
            samples: vec![Vec::with_capacity(w); noise.len()],
            sample_log_conditionals: vec![Vec::with_capacity(w); noise.len()],
            gates: Vec::with_capacity(w),
            hidden: hidden_states.clone(),
        };
        for (t, &h) in hidden_states.iter().enumerate() {
            let prev: Vec<Var> = if t == 0 { vec![z0] } else { one_hots.clone() };
            let mut logs = Vec::with_capacity(prev.len());
            let mut probs = Vec::with_capacity(prev.len());
            let mut row_logits = Vec::with_capacity(prev.len());
            for z in prev {
                let logits = self.head_logits(tape, store, h, z)?;
                row_logits.push(logits);
                logs.push(tape.log_softmax(logits)?);
                probs.push(tape.softmax(logits)?);
            }
            let marginal = if t == 0 {
                probs[0]
            } else {
                let prev_marginal = out.marginals[t - 1];
                propagate(tape, &probs, prev_marginal)?
            };
            for (path, g) in noise.iter().enumerate() {
                let (sample, log_cond) = if t == 0 {
                    // z_0 = 0 for every path, so the first row is shared.
                    (gumbel_softmax_on_tape(tape, row_logits[0], temperature, &g[0])?, logs[0])
                } else {
                    let prev = out.samples[path][t - 1];
                    let logits = self.head_logits(tape, store, h, prev)?;
                    let lc = tape.log_softmax(logits)?;
                    (gumbel_softmax_on_tape(tape, logits, temperature, &g[t])?, lc)
                };
                out.samples[path].push(sample);
                out.sample_log_conditionals[path].push(log_cond);
            }
            let g = self.gate.forward(tape, store, h)?;
            let g = tape.sigmoid(g)?;

            out.log_conditionals.push(logs);
            out.conditionals.push(probs);
            out.marginals.push(marginal);
            out.gates.push(g);
        }
        Ok(out)
    }

    fn head_logits(&self, tape: &mut Tape, store: &ParamStore, h: Var, z: Var) -> Result<Var> {
        let input = tape.concat(&[h, z])?;
        self.head.forward(tape, store, input)
    }
}

/// `Σ_s cond[s] · marginal[s]`.
fn propagate(tape: &mut Tape, cond: &[Var], marginal: Var) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for (s, &row) in cond.iter().enumerate() {
        let w = tape.element(marginal, s)?;
        let term = tape.scale(row, w)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    Ok(acc.expect("at least one cluster"))
}

/// Tape nodes produced by [`InferParams::forward_on_tape`].
#[derive(Clone, Debug)]
pub struct InferTape {
    /// `[t][s]`: `log q(z_t | z_{t−1} = s, ·)`; step 0 has the single row for
    /// `z_0 = 0`.
    pub log_conditionals: Vec<Vec<Var>>,
    pub conditionals: Vec<Vec<Var>>,
    pub marginals: Vec<Var>,
    /// `[path][t]` relaxed one-hot samples.
    pub samples: Vec<Vec<Var>>,
    /// `[path][t]`: `log q(z_t | z_{t−1} = sample, ·)` along each path.
    pub sample_log_conditionals: Vec<Vec<Var>>,
    /// Scalar `γ_t` per step.
    pub gates: Vec<Var>,
    pub hidden: Vec<Var>,
}

impl InferTape {
    pub fn to_seq(&self, tape: &Tape) -> CategoricalSeq {
        let rows = |v: &[Var]| v.iter().map(|&x| tape.data(x).to_vec()).collect::<Vec<_>>();
        CategoricalSeq {
            conditionals: self.conditionals.iter().map(|c| rows(c)).collect(),
            marginals: rows(&self.marginals),
            samples: self.samples.first().map(|p| rows(p)).unwrap_or_default(),
        }
    }
}

/// Conditional table, marginals and relaxed samples for one series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalSeq {
    /// `[t][s][r] = q(z_t = r | z_{t−1} = s, x)`; `[0]` has a single row.
    pub conditionals: Vec<Vec<Vec<f64>>>,
    pub marginals: Vec<Vec<f64>>,
    pub samples: Vec<Vec<f64>>,
}

/// Plain-valued inference output.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub seq: CategoricalSeq,
    pub hidden: Vec<Vec<f64>>,
    pub gates: Vec<f64>,
}

/// Runs the inference network over a pre-imputed series.
pub fn infer_forward(
    dense: &DenseMts,
    params: &InferParams,
    store: &ParamStore,
    temperature: f64,
    seed: u64,
) -> Result<Inference> {
    if dense.d != params.d {
        return Err(Error::shape("infer_forward", format!("d = {} vs network d = {}", dense.d, params.d)));
    }
    let noise = gumbel_noise(seed, dense.w, params.k);
    let mut tape = Tape::new();
    let inputs: Vec<Var> = (0..dense.w)
        .map(|t| tape.constant_vec(dense.column(t)))
        .collect::<Result<_>>()?;
    let out = params.forward_on_tape(&mut tape, store, &inputs, temperature, &[noise])?;
    Ok(Inference {
        seq: out.to_seq(&tape),
        hidden: out.hidden.iter().map(|&h| tape.data(h).to_vec()).collect(),
        gates: out.gates.iter().map(|&g| tape.data(g)[0]).collect(),
    })
}

/// `w` rows of i.i.d. standard Gumbel noise drawn from `seed`.
pub fn gumbel_noise(seed: u64, w: usize, k: usize) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, "gumbel");
    let g = Gumbel::new(0.0, 1.0).expect("unit scale");
    (0..w).map(|_| (0..k).map(|_| g.sample(&mut rng)).collect()).collect()
}

/// `softmax((logits + noise) / τ)` on the tape.
pub fn gumbel_softmax_on_tape(tape: &mut Tape, logits: Var, temperature: f64, noise: &[f64]) -> Result<Var> {
    let g = tape.constant_vec(noise.to_vec())?;
    let perturbed = tape.add(logits, g)?;
    let scaled = tape.affine_const(perturbed, 1.0 / temperature, 0.0)?;
    tape.softmax(scaled)
}

/// Relaxed one-hot draw `softmax((logits + g) / τ)` with `g` from `seed`.
pub fn gumbel_softmax(logits: &[f64], temperature: f64, seed: u64) -> Result<Vec<f64>> {
    let noise = gumbel_noise(seed, 1, logits.len()).remove(0);
    gumbel_softmax_with_noise(logits, temperature, &noise)
}

/// [`gumbel_softmax`] with caller-supplied noise; zero noise gives
/// `softmax(logits / τ)`.
pub fn gumbel_softmax_with_noise(logits: &[f64], temperature: f64, noise: &[f64]) -> Result<Vec<f64>> {
    if !(temperature > 0.0) {
        return Err(Error::invalid("temperature", "must be positive"));
    }
    if noise.len() != logits.len() {
        return Err(Error::shape("gumbel_softmax", "noise length"));
    }
    let z: Vec<f64> = logits.iter().zip(noise).map(|(l, g)| (l + g) / temperature).collect();
    Ok(softmax(&z))
}

/// Marginals `q(z_t | x_{1:t})` from a conditional table by forward
/// propagation.
pub fn marginals(conditionals: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<f64>>> {
    let first = conditionals
        .first()
        .and_then(|c| c.first())
        .ok_or_else(|| Error::invalid("conditionals", "empty table"))?;
    let k = first.len();
    let mut out = vec![first.clone()];
    for table in &conditionals[1..] {
        if table.len() != k || table.iter().any(|r| r.len() != k) {
            return Err(Error::shape("marginals", "rows after the first step must be k × k"));
        }
        let prev = out.last().expect("non-empty");
        let mut next = vec![0.0; k];
        for (row, &p) in table.iter().zip(prev) {
            for (n, q) in next.iter_mut().zip(row) {
                *n += q * p;
            }
        }
        out.push(next);
    }
    Ok(out)
}

/// Average membership over a batch of rows.
pub fn estimate_basis_probs(rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = rows.first().ok_or(Error::EmptyDataset)?;
    let mut acc = vec![0.0; first.len()];
    for r in rows {
        if r.len() != acc.len() {
            return Err(Error::shape("estimate_basis_probs", "ragged rows"));
        }
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v;
        }
    }
    let n = rows.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

/// Writes `sample_id,t,argmax_z,prob` rows for each sample's marginals.
pub fn write_cluster_csv<W: Write>(writer: W, rows: &[(String, Vec<Vec<f64>>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["sample_id", "t", "argmax_z", "prob"])?;
    for (id, marginals) in rows {
        for (t, m) in marginals.iter().enumerate() {
            let (z, p) = m
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
            w.write_record([id.clone(), (t + 1).to_string(), z.to_string(), p.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}
