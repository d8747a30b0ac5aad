//! A small tape-based reverse-mode differentiation engine over dense
//! matrices, with exactly the primitives the encoder and the contrastive
//! objective need, plus Adam and a central-difference gradient checker.
//!
//! Trainable arrays live in a [`ParamStore`]. A [`Tape`] records one forward
//! pass; [`Tape::backward`] walks it in reverse and *adds* each parameter's
//! gradient into the store, so callers zero gradients between passes.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Binary cross-entropy clamps probabilities into `[P_MIN, 1 − P_MIN]`.
pub const P_MIN: f64 = 1e-7;

pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let grad = Array2::zeros(value.raw_dim());
        self.params.push(Param {
            name: name.into(),
            value,
            grad,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id].grad
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn ids(&self) -> std::ops::Range<ParamId> {
        0..self.params.len()
    }

    /// Total number of trainable scalars.
    pub fn n_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn snapshot(&self) -> Vec<Array2<f64>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: &[Array2<f64>]) -> Result<()> {
        if values.len() != self.params.len() {
            return Err(Error::shape("snapshot does not match the parameter store"));
        }
        for (p, v) in self.params.iter_mut().zip(values) {
            if p.value.dim() != v.dim() {
                return Err(Error::shape(format!("snapshot shape mismatch for {}", p.name)));
            }
            p.value.assign(v);
        }
        Ok(())
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<'a> {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    SpmmConst(&'a SparseMatrix, Var),
    AddBias(Var, Var),
    Prelu(Var, Var),
    Sigmoid(Var),
    RowMean(Var),
    ScalarMean(Vec<Var>),
    Transpose(Var),
    Scale(Var, f64),
    BinaryCrossEntropy(Var, f64),
}

#[derive(Debug)]
struct Node<'a> {
    value: Array2<f64>,
    op: Op<'a>,
    requires_grad: bool,
}

/// Ordered record of one forward pass. Sparse operands are borrowed and
/// treated as constants.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    backward_done: bool,
}

fn check_shape(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::shape(format!("{what}: got {got:?}, expected {want:?}")));
    }
    Ok(())
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op<'a>) -> Var {
        let requires_grad = match &op {
            Op::Constant => false,
            Op::Param(_) => true,
            Op::MatMul(a, b) | Op::AddBias(a, b) | Op::Prelu(a, b) => {
                self.requires_grad(*a) || self.requires_grad(*b)
            }
            Op::SpmmConst(_, x)
            | Op::Sigmoid(x)
            | Op::RowMean(x)
            | Op::Transpose(x)
            | Op::Scale(x, _)
            | Op::BinaryCrossEntropy(x, _) => self.requires_grad(*x),
            Op::ScalarMean(xs) => xs.iter().any(|x| self.requires_grad(*x)),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// The value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let value = self.value(v);
        check_shape("scalar", value.dim(), (1, 1))?;
        Ok(value[[0, 0]])
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    /// Records the current value of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (lhs, rhs) = (self.value(a), self.value(b));
        if lhs.ncols() != rhs.nrows() {
            return Err(Error::shape(format!(
                "matmul of {:?} by {:?}",
                lhs.dim(),
                rhs.dim()
            )));
        }
        let out = lhs.dot(rhs);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `s · x` for a constant sparse `s`; the sparse operand gets no gradient.
    pub fn spmm_const(&mut self, s: &'a SparseMatrix, x: Var) -> Result<Var> {
        let out = s.spmm(self.value(x).view())?;
        Ok(self.push(out, Op::SpmmConst(s, x)))
    }

    /// Adds the `1 × d` row `b` to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        check_shape("bias", bv.dim(), (1, xv.ncols()))?;
        let out = xv + bv;
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    /// `max(x, 0) + slope · min(x, 0)` with a `1 × 1` slope.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let a = self.value(slope);
        if a.dim() != (1, 1) {
            return Err(Error::shape(format!(
                "prelu slope must be a 1x1 scalar, got {:?}",
                a.dim()
            )));
        }
        let a = a[[0, 0]];
        let out = self.value(x).mapv(|v| if v > 0.0 { v } else { a * v });
        Ok(self.push(out, Op::Prelu(x, slope)))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).mapv(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    /// Column-wise mean over rows, giving `1 × d`.
    pub fn row_mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.nrows() == 0 {
            return Err(Error::contract("row_mean of an empty matrix"));
        }
        let out = xv.mean_axis(Axis(0)).unwrap().insert_axis(Axis(0));
        Ok(self.push(out, Op::RowMean(x)))
    }

    /// Mean of `1 × 1` values.
    pub fn scalar_mean(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::contract("scalar_mean of an empty list"));
        }
        let mut total = 0.0;
        for &x in xs {
            total += self.scalar(x)?;
        }
        let out = Array2::from_elem((1, 1), total / xs.len() as f64);
        Ok(self.push(out, Op::ScalarMean(xs.to_vec())))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let out = self.value(x).t().to_owned();
        self.push(out, Op::Transpose(x))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x) * factor;
        self.push(out, Op::Scale(x, factor))
    }

    /// Mean binary cross-entropy of probabilities `p` against a constant target,
    /// with `p` clamped into `[P_MIN, 1 − P_MIN]`.
    pub fn binary_cross_entropy(&mut self, p: Var, target: f64) -> Result<Var> {
        let pv = self.value(p);
        if pv.is_empty() {
            return Err(Error::contract("binary cross-entropy of an empty matrix"));
        }
        let total: f64 = pv
            .iter()
            .map(|&x| {
                let q = x.clamp(P_MIN, 1.0 - P_MIN);
                -(target * q.ln() + (1.0 - target) * (1.0 - q).ln())
            })
            .sum();
        let out = Array2::from_elem((1, 1), total / pv.len() as f64);
        Ok(self.push(out, Op::BinaryCrossEntropy(p, target)))
    }

    /// Accumulates `d loss / d param` into `store` for every parameter on the tape.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.backward_done {
            return Err(Error::contract("backward already ran on this tape"));
        }
        check_shape("loss", self.value(loss).dim(), (1, 1))
            .map_err(|_| Error::contract("backward needs a 1x1 scalar loss"))?;
        self.backward_done = true;

        let mut grads: Vec<Option<Array2<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let mut send = |v: Var, contribution: Array2<f64>| {
                if !nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => *existing += &contribution,
                    slot @ None => *slot = Some(contribution),
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let p = &mut store.params[*id];
                    check_shape(&p.name, g.dim(), p.grad.dim())?;
                    p.grad += &g;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    if nodes[a.0].requires_grad {
                        send(*a, g.dot(&bv.t()));
                    }
                    if nodes[b.0].requires_grad {
                        send(*b, av.t().dot(&g));
                    }
                }
                Op::SpmmConst(s, x) => {
                    send(*x, s.spmm_transpose(g.view())?);
                }
                Op::AddBias(x, b) => {
                    send(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    send(*x, g);
                }
                Op::Prelu(x, slope) => {
                    let xv = &nodes[x.0].value;
                    let a = nodes[slope.0].value[[0, 0]];
                    let mut gx = g.clone();
                    let mut ga = 0.0;
                    for (gxe, (&xe, &ge)) in gx.iter_mut().zip(xv.iter().zip(g.iter())) {
                        if xe <= 0.0 {
                            *gxe = a * ge;
                            ga += xe * ge;
                        }
                    }
                    send(*slope, Array2::from_elem((1, 1), ga));
                    send(*x, gx);
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let gx = ndarray::Zip::from(&g).and(y).map_collect(|&ge, &ye| ge * ye * (1.0 - ye));
                    send(*x, gx);
                }
                Op::RowMean(x) => {
                    let rows = nodes[x.0].value.nrows();
                    let gx = g
                        .broadcast(nodes[x.0].value.raw_dim())
                        .expect("1 x d broadcasts over rows")
                        .mapv(|v| v / rows as f64);
                    send(*x, gx);
                }
                Op::ScalarMean(xs) => {
                    let share = g[[0, 0]] / xs.len() as f64;
                    for &x in xs {
                        send(x, Array2::from_elem((1, 1), share));
                    }
                }
                Op::Transpose(x) => send(*x, g.t().to_owned()),
                Op::Scale(x, factor) => send(*x, g * *factor),
                Op::BinaryCrossEntropy(p, target) => {
                    let pv = &nodes[p.0].value;
                    let upstream = g[[0, 0]] / pv.len() as f64;
                    let t = *target;
                    let gp = pv.mapv(|x| {
                        if !(P_MIN..=1.0 - P_MIN).contains(&x) {
                            0.0
                        } else {
                            upstream * (-t / x + (1.0 - t) / (1.0 - x))
                        }
                    });
                    send(*p, gp);
                }
            }
        }
        Ok(())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bias-corrected Adam with per-parameter moment arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || store.iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: ParamId) -> &Array2<f64> {
        &self.first[id]
    }

    pub fn second_moment(&self, id: ParamId) -> &Array2<f64> {
        &self.second[id]
    }
}

/// One Adam update of every parameter from its accumulated gradient.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if !(state.lr > 0.0) {
        return Err(Error::contract("Adam needs lr > 0"));
    }
    if state.first.len() != store.len() {
        return Err(Error::shape("Adam state does not match the parameter store"));
    }
    if let Some(p) = store.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
        return Err(Error::numeric(format!(
            "non-finite gradient for {} at Adam step {}",
            p.name,
            state.step + 1
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, m), v) in store.params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        ndarray::Zip::from(&mut p.value)
            .and(&p.grad)
            .and(m)
            .and(v)
            .for_each(|w, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
            });
    }
    Ok(())
}

/// Compares the tape gradient of `f` against central differences
/// `(f(θ+h) − f(θ−h)) / 2h` for every entry of `params`, returning
/// `max |analytic − numeric| / max(1, |analytic|, |numeric|)`.
///
/// `f` records a forward pass on the given tape and returns its scalar loss.
pub fn grad_check<'a, F>(store: &mut ParamStore, params: &[ParamId], h: f64, mut f: F) -> Result<f64>
where
    F: FnMut(&mut Tape<'a>, &ParamStore) -> Result<Var>,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let loss = f(&mut tape, store)?;
    tape.backward(loss, store)?;
    let analytic: Vec<Array2<f64>> = params.iter().map(|&id| store.grad(id).clone()).collect();

    let mut eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        let v = tape.scalar(loss)?;
        if !v.is_finite() {
            return Err(Error::numeric(format!("objective evaluated to {v}")));
        }
        Ok(v)
    };

    let mut worst = 0.0f64;
    for (&id, grad) in params.iter().zip(&analytic) {
        for idx in 0..grad.len() {
            let original = store.value(id).as_slice().expect("standard layout")[idx];
            store.value_mut(id).as_slice_mut().unwrap()[idx] = original + h;
            let plus = eval(store)?;
            store.value_mut(id).as_slice_mut().unwrap()[idx] = original - h;
            let minus = eval(store)?;
            store.value_mut(id).as_slice_mut().unwrap()[idx] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.as_slice().unwrap()[idx];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
