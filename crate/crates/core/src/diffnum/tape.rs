//! Reverse-mode gradient tape over a fixed operation set.
//!
//! Every operation records its output value together with the handles of its
//! inputs. [`Tape::backward`] walks the record in reverse and applies the
//! hand-written adjoint of each operation.

use super::param::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Const,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    DivOrZero(Var, Var),
    AffineConst { x: Var, scale: f64 },
    Scale { v: Var, s: Var },
    MatVec(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Dot(Var, Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    MaskedSqDist { x: Var, mu: Var, mask: Vec<bool> },
    Select { mask: Vec<bool>, a: Var, b: Var },
    HardSample,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const => "const",
            Op::Param => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::DivOrZero(..) => "div",
            Op::AffineConst { .. } => "affine_const",
            Op::Scale { .. } => "scale",
            Op::MatVec(..) => "matvec",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::Exp(_) => "exp",
            Op::Ln(_) => "ln",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Sum(_) => "sum",
            Op::Dot(..) => "dot",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::MaskedSqDist { .. } => "masked_sq_dist",
            Op::Select { .. } => "select",
            Op::HardSample => "hard_sample",
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation graph.
///
/// A tape is single-threaded; build one per independent evaluation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    bound: Vec<Option<Var>>,
}

/// Adjoints of every node on a tape, indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Shortcut for the flat data of a node.
    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            value: Tensor::from_parts_unchecked(shape, data),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn shape_of(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn same_len(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (la, lb) = (self.data(a).len(), self.data(b).len());
        if la != lb {
            return Err(Error::shape(op, format!("lengths {la} and {lb}")));
        }
        Ok(())
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        let (shape, data) = (t.shape().to_vec(), t.into_data());
        self.push(Op::Const, shape, data)
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Result<Var> {
        let n = data.len();
        self.push(Op::Const, vec![n], data)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Result<Var> {
        self.push(Op::Const, Vec::new(), vec![value])
    }

    /// Binds a trainable parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        if let Some(Some(v)) = self.bound.get(id.index()) {
            return Ok(*v);
        }
        let t = store.value(id);
        let v = self.push(Op::Param, t.shape().to_vec(), t.data().to_vec())?;
        if self.bound.len() <= id.index() {
            self.bound.resize(id.index() + 1, None);
        }
        self.bound[id.index()] = Some(v);
        Ok(v)
    }

    fn zip(&mut self, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_len(op.name(), a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape_of(a).to_vec();
        self.push(op, shape, data)
    }

    fn map(&mut self, op: Op, x: Var, f: impl Fn(f64) -> f64) -> Result<Var> {
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape_of(x).to_vec();
        self.push(op, shape, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(Op::Mul(a, b), a, b, |x, y| x * y)
    }

    /// Elementwise `a / b`, yielding 0 (with zero gradient) where `b == 0`.
    pub fn div_or_zero(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(Op::DivOrZero(a, b), a, b, |x, y| if y == 0.0 { 0.0 } else { x / y })
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn affine_const(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.map(Op::AffineConst { x, scale }, x, |v| scale * v + shift)
    }

    /// Multiplies every element of `v` by the one-element node `s`.
    pub fn scale(&mut self, v: Var, s: Var) -> Result<Var> {
        let sv = self.scalar(s).map_err(|_| {
            Error::shape("scale", format!("factor has shape {:?}", self.shape_of(s)))
        })?;
        self.map(Op::Scale { v, s }, v, |x| x * sv)
    }

    /// Matrix `w` of shape `[m, n]` times vector `x` of length `n`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let ws = self.shape_of(w);
        if ws.len() != 2 || ws[1] != self.data(x).len() {
            return Err(Error::shape(
                "matvec",
                format!("matrix {:?} against vector of {}", ws, self.data(x).len()),
            ));
        }
        let (m, n) = (ws[0], ws[1]);
        let wd = self.data(w);
        let xd = self.data(x);
        let data = (0..m)
            .map(|i| wd[i * n..(i + 1) * n].iter().zip(xd).map(|(a, b)| a * b).sum())
            .collect();
        self.push(Op::MatVec(w, x), vec![m], data)
    }

    /// `w x + b`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let wx = self.matvec(w, x)?;
        self.add(wx, b)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map(Op::Tanh(x), x, f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(Op::Sigmoid(x), x, sigmoid)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.map(Op::Softplus(x), x, softplus)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map(Op::Exp(x), x, f64::exp)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.map(Op::Ln(x), x, f64::ln)
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let data = softmax(self.data(x));
        self.push(Op::Softmax(x), vec![data.len()], data)
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let lse = log_sum_exp(self.data(x));
        let data: Vec<f64> = self.data(x).iter().map(|v| v - lse).collect();
        self.push(Op::LogSoftmax(x), vec![data.len()], data)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        self.push(Op::Sum(x), Vec::new(), vec![s])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_len("dot", a, b)?;
        let s = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).sum();
        self.push(Op::Dot(a, b), Vec::new(), vec![s])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let data: Vec<f64> = parts.iter().flat_map(|&p| self.data(p).to_vec()).collect();
        let n = data.len();
        self.push(Op::Concat(parts.to_vec()), vec![n], data)
    }

    /// Contiguous flat range `[start, start + len)` as a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.data(x).len();
        if start + len > n {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} of {n}", start + len),
            ));
        }
        let data = self.data(x)[start..start + len].to_vec();
        self.push(Op::Slice { x, start }, vec![len], data)
    }

    /// Single flat element as a scalar node.
    pub fn element(&mut self, x: Var, i: usize) -> Result<Var> {
        let n = self.data(x).len();
        if i >= n {
            return Err(Error::shape("element", format!("index {i} of {n}")));
        }
        let v = self.data(x)[i];
        self.push(Op::Slice { x, start: i }, Vec::new(), vec![v])
    }

    /// `Σ_{i: mask_i} (x_i − μ_i)²`.
    pub fn masked_sq_dist(&mut self, x: Var, mu: Var, mask: &[bool]) -> Result<Var> {
        self.same_len("masked_sq_dist", x, mu)?;
        if mask.len() != self.data(x).len() {
            return Err(Error::shape(
                "masked_sq_dist",
                format!("mask of {} for vector of {}", mask.len(), self.data(x).len()),
            ));
        }
        let s = self
            .data(x)
            .iter()
            .zip(self.data(mu))
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|((a, b), _)| (a - b) * (a - b))
            .sum();
        let op = Op::MaskedSqDist {
            x,
            mu,
            mask: mask.to_vec(),
        };
        self.push(op, Vec::new(), vec![s])
    }

    /// `a` where `mask` holds, `b` elsewhere.
    pub fn select(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var> {
        self.same_len("select", a, b)?;
        if mask.len() != self.data(a).len() {
            return Err(Error::shape("select", "mask length"));
        }
        let data = mask
            .iter()
            .zip(self.data(a).iter().zip(self.data(b)))
            .map(|(&m, (&x, &y))| if m { x } else { y })
            .collect();
        let shape = self.shape_of(a).to_vec();
        self.push(
            Op::Select {
                mask: mask.to_vec(),
                a,
                b,
            },
            shape,
            data,
        )
    }

    /// Draws a hard one-hot categorical sample from `probs` using the uniform
    /// variate `u`. The result carries no gradient; differentiating through it
    /// is an error.
    pub fn hard_sample(&mut self, probs: Var, u: f64) -> Result<Var> {
        let p = self.data(probs);
        let mut acc = 0.0;
        let mut pick = p.len() - 1;
        for (i, &pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                pick = i;
                break;
            }
        }
        let mut data = vec![0.0; p.len()];
        data[pick] = 1.0;
        self.push(Op::HardSample, vec![data.len()], data)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.data(loss).len() != 1 {
            return Err(Error::NotScalar(self.shape_of(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: impl IntoIterator<Item = f64>) {
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(e, x)| *e += x),
                slot @ None => *slot = Some(g.into_iter().collect()),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let out = node.value.data();
            match &node.op {
                Op::Const | Op::Param => {}
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.iter().copied());
                    acc(&mut grads, *b, g.iter().copied());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.iter().copied());
                    acc(&mut grads, *b, g.iter().map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    acc(&mut grads, *a, g.iter().zip(bd).map(|(g, y)| g * y));
                    acc(&mut grads, *b, g.iter().zip(ad).map(|(g, x)| g * x));
                }
                Op::DivOrZero(a, b) => {
                    let bd = self.data(*b);
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(bd)
                        .map(|(g, &y)| if y == 0.0 { 0.0 } else { g / y })
                        .collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(bd)
                        .zip(out)
                        .map(|((g, &y), o)| if y == 0.0 { 0.0 } else { -g * o / y })
                        .collect();
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AffineConst { x, scale } => {
                    acc(&mut grads, *x, g.iter().map(|g| g * scale));
                }
                Op::Scale { v, s } => {
                    let sv = self.data(*s)[0];
                    let vd = self.data(*v);
                    let gs: f64 = g.iter().zip(vd).map(|(g, x)| g * x).sum();
                    acc(&mut grads, *v, g.iter().map(|g| g * sv));
                    acc(&mut grads, *s, [gs]);
                }
                Op::MatVec(w, x) => {
                    let (m, n) = (self.shape_of(*w)[0], self.shape_of(*w)[1]);
                    let (wd, xd) = (self.data(*w), self.data(*x));
                    let mut gw = vec![0.0; m * n];
                    let mut gx = vec![0.0; n];
                    for i in 0..m {
                        let gi = g[i];
                        let row = &wd[i * n..(i + 1) * n];
                        for j in 0..n {
                            gw[i * n + j] = gi * xd[j];
                            gx[j] += gi * row[j];
                        }
                    }
                    acc(&mut grads, *w, gw);
                    acc(&mut grads, *x, gx);
                }
                Op::Tanh(x) => {
                    acc(&mut grads, *x, g.iter().zip(out).map(|(g, y)| g * (1.0 - y * y)));
                }
                Op::Sigmoid(x) => {
                    acc(&mut grads, *x, g.iter().zip(out).map(|(g, y)| g * y * (1.0 - y)));
                }
                Op::Softplus(x) => {
                    let xd = self.data(*x);
                    acc(&mut grads, *x, g.iter().zip(xd).map(|(g, &v)| g * sigmoid(v)));
                }
                Op::Exp(x) => {
                    acc(&mut grads, *x, g.iter().zip(out).map(|(g, y)| g * y));
                }
                Op::Ln(x) => {
                    let xd = self.data(*x);
                    acc(&mut grads, *x, g.iter().zip(xd).map(|(g, v)| g / v));
                }
                Op::Softmax(x) => {
                    let gy: f64 = g.iter().zip(out).map(|(g, y)| g * y).sum();
                    acc(&mut grads, *x, g.iter().zip(out).map(|(g, y)| y * (g - gy)));
                }
                Op::LogSoftmax(x) => {
                    let gs: f64 = g.iter().sum();
                    acc(&mut grads, *x, g.iter().zip(out).map(|(g, y)| g - y.exp() * gs));
                }
                Op::Sum(x) => {
                    let n = self.data(*x).len();
                    acc(&mut grads, *x, std::iter::repeat_n(g[0], n));
                }
                Op::Dot(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    acc(&mut grads, *a, bd.iter().map(|y| g[0] * y));
                    acc(&mut grads, *b, ad.iter().map(|x| g[0] * x));
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.data(*p).len();
                        acc(&mut grads, *p, g[offset..offset + n].iter().copied());
                        offset += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.data(*x).len();
                    let mut gx = vec![0.0; n];
                    gx[*start..*start + g.len()].copy_from_slice(&g);
                    acc(&mut grads, *x, gx);
                }
                Op::MaskedSqDist { x, mu, mask } => {
                    let (xd, md) = (self.data(*x), self.data(*mu));
                    let gx: Vec<f64> = xd
                        .iter()
                        .zip(md)
                        .zip(mask)
                        .map(|((a, b), &m)| if m { 2.0 * g[0] * (a - b) } else { 0.0 })
                        .collect();
                    acc(&mut grads, *mu, gx.iter().map(|v| -v));
                    acc(&mut grads, *x, gx);
                }
                Op::Select { mask, a, b } => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(mask)
                        .map(|(g, &m)| if m { *g } else { 0.0 })
                        .collect();
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(mask)
                        .map(|(g, &m)| if m { 0.0 } else { *g })
                        .collect();
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::HardSample => {
                    if g.iter().any(|&x| x != 0.0) {
                        return Err(Error::NonDifferentiable { op: "hard_sample" });
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Back-propagates `loss` and adds the parameter adjoints into `store`.
    pub fn grad(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        self.accumulate(&grads, store);
        Ok(())
    }

    /// Adjoints of every parameter read on this tape, in parameter order.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(ParamId, Vec<f64>)> {
        self.bound
            .iter()
            .enumerate()
            .filter_map(|(i, slot)| {
                let g = grads.get((*slot)?)?;
                Some((ParamId::from_index(i), g.to_vec()))
            })
            .collect()
    }

    /// Adds the adjoints of every bound parameter into its gradient slot.
    pub fn accumulate(&self, grads: &Gradients, store: &mut ParamStore) {
        for (i, slot) in self.bound.iter().enumerate() {
            let Some(v) = slot else { continue };
            if let Some(g) = grads.get(*v) {
                store
                    .grad_mut(ParamId::from_index(i))
                    .data_mut()
                    .iter_mut()
                    .zip(g)
                    .for_each(|(a, b)| *a += b);
            }
        }
    }
}
