//! Layers composed from the tape operations: affine maps, a one-hidden-layer
//! MLP, and GRU / LSTM cells.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::param::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
    Tensor::from_parts_unchecked(shape.to_vec(), data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Registers `{name}.w` (`fan_out × fan_in`) and `{name}.b`, uniformly
    /// initialized in `±1/√fan_in`.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let w = store.add(
            format!("{name}.w"),
            uniform_tensor(&[fan_out, fan_in], bound, rng),
        );
        let b = store.add(format!("{name}.b"), uniform_tensor(&[fan_out], bound, rng));
        Self {
            w,
            b,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w)?;
        let b = tape.param(store, self.b)?;
        tape.affine(w, x, b)
    }
}

/// `out(tanh(hidden(x)))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), input, hidden, rng),
            out: Linear::new(store, &format!("{name}.out"), hidden, output, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.tanh(h)?;
        self.out.forward(tape, store, h)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    #[default]
    Gru,
    Lstm,
}

/// One gate pre-activation `W x + U h + b`.
#[derive(Clone, Debug, PartialEq)]
struct Gate {
    w: ParamId,
    u: ParamId,
    b: ParamId,
}

impl Gate {
    fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (hidden.max(1) as f64).sqrt();
        Self {
            w: store.add(
                format!("{name}.w"),
                uniform_tensor(&[hidden, input], bound, rng),
            ),
            u: store.add(
                format!("{name}.u"),
                uniform_tensor(&[hidden, hidden], bound, rng),
            ),
            b: store.add(format!("{name}.b"), uniform_tensor(&[hidden], bound, rng)),
        }
    }

    fn input_part(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w)?;
        let b = tape.param(store, self.b)?;
        tape.affine(w, x, b)
    }

    fn hidden_part(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let u = tape.param(store, self.u)?;
        tape.matvec(u, h)
    }

    fn pre(&self, tape: &mut Tape, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let a = self.input_part(tape, store, x)?;
        let b = self.hidden_part(tape, store, h)?;
        tape.add(a, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum CellGates {
    Gru {
        reset: Gate,
        update: Gate,
        candidate: Gate,
        candidate_bias: ParamId,
    },
    Lstm {
        input: Gate,
        forget: Gate,
        output: Gate,
        cell: Gate,
    },
}

/// Recurrent cell whose state is a single flat vector: `h` for a GRU,
/// `[h; c]` for an LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentCell {
    kind: CellKind,
    input: usize,
    hidden: usize,
    gates: CellGates,
}

impl RecurrentCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        kind: CellKind,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let gates = match kind {
            CellKind::Gru => CellGates::Gru {
                reset: Gate::new(store, &format!("{name}.reset"), input, hidden, rng),
                update: Gate::new(store, &format!("{name}.update"), input, hidden, rng),
                candidate: Gate::new(store, &format!("{name}.cand"), input, hidden, rng),
                candidate_bias: {
                    let bound = 1.0 / (hidden.max(1) as f64).sqrt();
                    store.add(
                        format!("{name}.cand.c"),
                        uniform_tensor(&[hidden], bound, rng),
                    )
                },
            },
            CellKind::Lstm => CellGates::Lstm {
                input: Gate::new(store, &format!("{name}.in"), input, hidden, rng),
                forget: Gate::new(store, &format!("{name}.forget"), input, hidden, rng),
                output: Gate::new(store, &format!("{name}.out"), input, hidden, rng),
                cell: Gate::new(store, &format!("{name}.cell"), input, hidden, rng),
            },
        };
        Self {
            kind,
            input,
            hidden,
            gates,
        }
    }

    pub fn kind(&self) -> CellKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            CellKind::Gru => self.hidden,
            CellKind::Lstm => 2 * self.hidden,
        }
    }

    pub fn zero_state(&self, tape: &mut Tape) -> Result<Var> {
        tape.constant_vec(vec![0.0; self.state_dim()])
    }

    /// The hidden vector `h` exposed to downstream heads.
    pub fn output(&self, tape: &mut Tape, state: Var) -> Result<Var> {
        match self.kind {
            CellKind::Gru => Ok(state),
            CellKind::Lstm => tape.slice(state, 0, self.hidden),
        }
    }

    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, state: Var) -> Result<Var> {
        match &self.gates {
            CellGates::Gru {
                reset,
                update,
                candidate,
                candidate_bias,
            } => {
                let h = state;
                let r = reset.pre(tape, store, x, h)?;
                let r = tape.sigmoid(r)?;
                let u = update.pre(tape, store, x, h)?;
                let u = tape.sigmoid(u)?;
                let nx = candidate.input_part(tape, store, x)?;
                let nh = candidate.hidden_part(tape, store, h)?;
                let c = tape.param(store, *candidate_bias)?;
                let nh = tape.add(nh, c)?;
                let gated = tape.mul(r, nh)?;
                let n = tape.add(nx, gated)?;
                let n = tape.tanh(n)?;
                // h' = (1 - u) n + u h
                let one_minus_u = tape.affine_const(u, -1.0, 1.0)?;
                let a = tape.mul(one_minus_u, n)?;
                let b = tape.mul(u, h)?;
                tape.add(a, b)
            }
            CellGates::Lstm {
                input,
                forget,
                output,
                cell,
            } => {
                let h = tape.slice(state, 0, self.hidden)?;
                let c = tape.slice(state, self.hidden, self.hidden)?;
                let i = input.pre(tape, store, x, h)?;
                let i = tape.sigmoid(i)?;
                let f = forget.pre(tape, store, x, h)?;
                let f = tape.sigmoid(f)?;
                let o = output.pre(tape, store, x, h)?;
                let o = tape.sigmoid(o)?;
                let g = cell.pre(tape, store, x, h)?;
                let g = tape.tanh(g)?;
                let fc = tape.mul(f, c)?;
                let ig = tape.mul(i, g)?;
                let c_next = tape.add(fc, ig)?;
                let tc = tape.tanh(c_next)?;
                let h_next = tape.mul(o, tc)?;
                tape.concat(&[h_next, c_next])
            }
        }
    }
}
