use std::fmt;

use super::array::{matmul_nt, matmul_raw, matmul_tn, Array};
use crate::error::{Error, Result};

/// The slope of `acos` is evaluated at inputs clamped into `[-1 + ε, 1 - ε]`,
/// which bounds it by `1/sqrt(2ε)`. Values use the exact `acos` so that
/// identical directions give an angle of exactly zero.
pub const ACOS_CLAMP_EPS: f64 = 1e-6;

/// Handle to a trainable tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, kept in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.values[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Array) -> Result<()> {
        let cur = &self.values[id.0];
        if cur.shape() != value.shape() {
            return Err(Error::shape(
                "param_set",
                format!("{} is {:?}, got {:?}", self.names[id.0], cur.shape(), value.shape()),
            ));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn values(&self) -> &[Array] {
        &self.values
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }
}

/// Node handle on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Primitive operations understood by the tape.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    MatMul,
    /// Elementwise sum; the right operand may also be a column broadcast
    /// across the columns of the left operand.
    Add,
    Sub,
    /// Hadamard product. Dropout is a `Mul` with a constant mask.
    Mul,
    Scale(f64),
    Offset(f64),
    Sigmoid,
    Tanh,
    Relu,
    Exp,
    Log,
    /// Softmax over a column vector.
    Softmax,
    /// Softmax of every row of a matrix.
    RowSoftmax,
    /// Log-softmax over a column vector.
    LogSoftmax,
    /// Elementwise `acos`, slope clamped per [`ACOS_CLAMP_EPS`].
    Acos,
    /// `r x c` matrix to the `r x r` matrix of arccos of absolute row cosines.
    /// The diagonal is exactly zero.
    PairwiseAngles,
    /// Sum of all entries into a 1x1.
    Sum,
    /// Row `i` of a matrix as a column vector.
    Gather(usize),
    Transpose,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Scale(_) => "scale",
            Op::Offset(_) => "offset",
            Op::Sigmoid => "sigmoid",
            Op::Tanh => "tanh",
            Op::Relu => "relu",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Softmax => "softmax",
            Op::RowSoftmax => "row_softmax",
            Op::LogSoftmax => "log_softmax",
            Op::Acos => "acos",
            Op::PairwiseAngles => "pairwise_angles",
            Op::Sum => "sum",
            Op::Gather(_) => "gather",
            Op::Transpose => "transpose",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::MatMul | Op::Add | Op::Sub | Op::Mul => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum Kind {
    Param(ParamId),
    Const,
    Apply { op: Op, inputs: [usize; 2] },
}

struct Node {
    kind: Kind,
    // `None` for parameter leaves; their value lives in the store.
    value: Option<Array>,
}

/// Records primitive applications over a borrowed [`ParamStore`] for one
/// reverse pass.
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<usize>>,
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf for a parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(idx) = self.param_nodes[id.0] {
            return Var(idx);
        }
        self.nodes.push(Node {
            kind: Kind::Param(id),
            value: None,
        });
        let idx = self.nodes.len() - 1;
        self.param_nodes[id.0] = Some(idx);
        Var(idx)
    }

    pub fn constant(&mut self, value: Array) -> Var {
        self.nodes.push(Node {
            kind: Kind::Const,
            value: Some(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array {
        let node = &self.nodes[v.0];
        match node.kind {
            Kind::Param(id) => self.store.get(id),
            _ => node.value.as_ref().expect("non-parameter node carries a value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    /// Applies a primitive and records it.
    pub fn apply(&mut self, op: Op, inputs: &[Var]) -> Result<Var> {
        if inputs.len() != op.arity() {
            return Err(Error::shape(
                op.name(),
                format!("expects {} inputs, got {}", op.arity(), inputs.len()),
            ));
        }
        let a = self.value(inputs[0]);
        let b = inputs.get(1).map(|&v| self.value(v));
        let out = forward(&op, a, b)?;
        if !out.is_finite() {
            return Err(Error::NonFinite(format!("output of {}", op.name())));
        }
        let ins = [inputs[0].0, inputs.get(1).map_or(usize::MAX, |v| v.0)];
        self.nodes.push(Node {
            kind: Kind::Apply { op, inputs: ins },
            value: Some(out),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Op::Scale(c), &[a])
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        self.apply(Op::Offset(c), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Tanh, &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Relu, &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Exp, &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Log, &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Softmax, &[a])
    }

    pub fn row_softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::RowSoftmax, &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::LogSoftmax, &[a])
    }

    pub fn acos(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Acos, &[a])
    }

    pub fn pairwise_angles(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::PairwiseAngles, &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Sum, &[a])
    }

    pub fn gather(&mut self, table: Var, row: usize) -> Result<Var> {
        self.apply(Op::Gather(row), &[table])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.apply(Op::Transpose, &[a])
    }

    /// Inverted-dropout: multiplies by a constant pre-scaled mask.
    pub fn dropout(&mut self, a: Var, mask: &Array) -> Result<Var> {
        let m = self.constant(mask.clone());
        self.mul(a, m)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(Error::NotScalar {
                rows: shape.0,
                cols: shape.1,
            });
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::filled(1, 1, 1.0));
        let mut out: Vec<Array> = self
            .store
            .values()
            .iter()
            .map(|v| Array::zeros(v.rows(), v.cols()))
            .collect();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].kind {
                Kind::Param(id) => out[id.0].add_assign(&g),
                Kind::Const => {}
                Kind::Apply { op, inputs } => {
                    let y = self.nodes[idx].value.as_ref().expect("applied node value");
                    let a = self.value(Var(inputs[0]));
                    let b = (inputs[1] != usize::MAX).then(|| self.value(Var(inputs[1])));
                    let (ga, gb) = local_grads(op, &g, y, a, b);
                    if let Some(ga) = ga {
                        accumulate(&mut grads[inputs[0]], ga);
                    }
                    if let Some(gb) = gb {
                        accumulate(&mut grads[inputs[1]], gb);
                    }
                }
            }
        }
        Ok(Gradients { grads: out })
    }
}

fn accumulate(slot: &mut Option<Array>, g: Array) {
    match slot {
        Some(cur) => cur.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// Gradient of the loss with respect to every parameter of a store.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Array>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store
                .values()
                .iter()
                .map(|v| Array::zeros(v.rows(), v.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Array {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array {
        &mut self.grads[id.0]
    }

    pub fn all(&self) -> &[Array] {
        &self.grads
    }

    pub fn all_mut(&mut self) -> &mut [Array] {
        &mut self.grads
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.grads {
            for v in g.data_mut() {
                *v *= c;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

fn acos_value(x: f64) -> f64 {
    x.clamp(-1.0, 1.0).acos()
}

fn acos_slope(x: f64) -> f64 {
    let c = x.clamp(-1.0 + ACOS_CLAMP_EPS, 1.0 - ACOS_CLAMP_EPS);
    -1.0 / (1.0 - c * c).sqrt()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_slice(xs: &[f64], out: &mut [f64]) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - max).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

fn same_shape(op: &Op, a: &Array, b: &Array) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op.name(),
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn column_broadcast(a: &Array, b: &Array) -> bool {
    b.cols() == 1 && a.cols() > 1 && a.rows() == b.rows()
}

/// Per-row cosine data used by `PairwiseAngles` in both directions.
struct RowCosines {
    norms: Vec<f64>,
    gram: Array,
}

impl RowCosines {
    fn new(m: &Array) -> Self {
        let gram = matmul_nt(m, m);
        let norms = (0..m.rows()).map(|i| gram.get(i, i).sqrt()).collect();
        Self { norms, gram }
    }

    fn cosine(&self, i: usize, j: usize) -> f64 {
        let d = self.norms[i] * self.norms[j];
        if d == 0.0 {
            0.0
        } else {
            self.gram.get(i, j).abs() / d
        }
    }
}

fn forward(op: &Op, a: &Array, b: Option<&Array>) -> Result<Array> {
    let out = match op {
        Op::MatMul => {
            let b = b.expect("binary");
            if a.cols() != b.rows() {
                return Err(Error::shape(
                    "matmul",
                    format!("{:?} x {:?}", a.shape(), b.shape()),
                ));
            }
            matmul_raw(a, b)
        }
        Op::Add | Op::Sub => {
            let b = b.expect("binary");
            let sign = if *op == Op::Add { 1.0 } else { -1.0 };
            if column_broadcast(a, b) {
                let mut out = a.clone();
                for r in 0..a.rows() {
                    let bv = sign * b.get(r, 0);
                    for c in 0..a.cols() {
                        out.set(r, c, a.get(r, c) + bv);
                    }
                }
                out
            } else {
                same_shape(op, a, b)?;
                let mut out = a.clone();
                out.axpy(sign, b);
                out
            }
        }
        Op::Mul => {
            let b = b.expect("binary");
            same_shape(op, a, b)?;
            Array::raw(
                a.rows(),
                a.cols(),
                a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
            )
        }
        Op::Scale(c) => a.map(|x| c * x),
        Op::Offset(c) => a.map(|x| x + c),
        Op::Sigmoid => a.map(sigmoid),
        Op::Tanh => a.map(f64::tanh),
        Op::Relu => a.map(|x| x.max(0.0)),
        Op::Exp => a.map(f64::exp),
        Op::Log => a.map(f64::ln),
        Op::Softmax | Op::LogSoftmax => {
            if !a.is_vector() {
                return Err(Error::shape(op.name(), format!("expects a column vector, got {:?}", a.shape())));
            }
            let mut out = vec![0.0; a.len()];
            if *op == Op::Softmax {
                softmax_slice(a.data(), &mut out);
            } else {
                let max = a.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + a.data().iter().map(|x| (x - max).exp()).sum::<f64>().ln();
                for (o, x) in out.iter_mut().zip(a.data()) {
                    *o = x - lse;
                }
            }
            Array::raw(a.rows(), 1, out)
        }
        Op::RowSoftmax => {
            let mut out = vec![0.0; a.len()];
            let c = a.cols();
            for r in 0..a.rows() {
                softmax_slice(a.row(r), &mut out[r * c..(r + 1) * c]);
            }
            Array::raw(a.rows(), c, out)
        }
        Op::Acos => a.map(acos_value),
        Op::PairwiseAngles => {
            let rc = RowCosines::new(a);
            let t = a.rows();
            let mut out = vec![0.0; t * t];
            for i in 0..t {
                for j in 0..t {
                    if i != j {
                        out[i * t + j] = acos_value(rc.cosine(i, j));
                    }
                }
            }
            Array::raw(t, t, out)
        }
        Op::Sum => Array::raw(1, 1, vec![a.sum()]),
        Op::Gather(row) => {
            if *row >= a.rows() {
                return Err(Error::shape(
                    "gather",
                    format!("row {row} out of range for {:?}", a.shape()),
                ));
            }
            Array::raw(a.cols(), 1, a.row(*row).to_vec())
        }
        Op::Transpose => a.transpose(),
    };
    Ok(out)
}

fn zip_map(a: &Array, b: &Array, f: impl Fn(f64, f64) -> f64) -> Array {
    Array::raw(
        a.rows(),
        a.cols(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn local_grads(
    op: &Op,
    g: &Array,
    y: &Array,
    a: &Array,
    b: Option<&Array>,
) -> (Option<Array>, Option<Array>) {
    match op {
        Op::MatMul => {
            let b = b.expect("binary");
            (Some(matmul_nt(g, b)), Some(matmul_tn(a, g)))
        }
        Op::Add | Op::Sub => {
            let b = b.expect("binary");
            let sign = if *op == Op::Add { 1.0 } else { -1.0 };
            let gb = if column_broadcast(a, b) {
                let sums = (0..g.rows()).map(|r| sign * g.row(r).iter().sum::<f64>()).collect();
                Array::raw(g.rows(), 1, sums)
            } else {
                g.map(|v| sign * v)
            };
            (Some(g.clone()), Some(gb))
        }
        Op::Mul => {
            let b = b.expect("binary");
            (Some(zip_map(g, b, |x, y| x * y)), Some(zip_map(g, a, |x, y| x * y)))
        }
        Op::Scale(c) => (Some(g.map(|v| c * v)), None),
        Op::Offset(_) => (Some(g.clone()), None),
        Op::Sigmoid => (Some(zip_map(g, y, |gv, s| gv * s * (1.0 - s))), None),
        Op::Tanh => (Some(zip_map(g, y, |gv, t| gv * (1.0 - t * t))), None),
        Op::Relu => (Some(zip_map(g, a, |gv, x| if x > 0.0 { gv } else { 0.0 })), None),
        Op::Exp => (Some(zip_map(g, y, |gv, e| gv * e)), None),
        Op::Log => (Some(zip_map(g, a, |gv, x| gv / x)), None),
        Op::Softmax => {
            let dot: f64 = g.data().iter().zip(y.data()).map(|(x, s)| x * s).sum();
            (Some(zip_map(g, y, |gv, s| s * (gv - dot))), None)
        }
        Op::RowSoftmax => {
            let c = y.cols();
            let mut out = vec![0.0; y.len()];
            for r in 0..y.rows() {
                let (gr, yr) = (g.row(r), y.row(r));
                let dot: f64 = gr.iter().zip(yr).map(|(x, s)| x * s).sum();
                for j in 0..c {
                    out[r * c + j] = yr[j] * (gr[j] - dot);
                }
            }
            (Some(Array::raw(y.rows(), c, out)), None)
        }
        Op::LogSoftmax => {
            let total = g.sum();
            (Some(zip_map(g, y, |gv, ly| gv - ly.exp() * total)), None)
        }
        Op::Acos => (Some(zip_map(g, a, |gv, x| gv * acos_slope(x))), None),
        Op::PairwiseAngles => (Some(pairwise_angles_grad(g, a)), None),
        Op::Sum => (Some(Array::filled(a.rows(), a.cols(), g.item())), None),
        Op::Gather(row) => {
            let mut out = Array::zeros(a.rows(), a.cols());
            let c = a.cols();
            out.data_mut()[row * c..(row + 1) * c].copy_from_slice(g.data());
            (Some(out), None)
        }
        Op::Transpose => (Some(g.transpose()), None),
    }
}

fn pairwise_angles_grad(g: &Array, m: &Array) -> Array {
    let rc = RowCosines::new(m);
    let (t, d) = m.shape();
    let mut out = Array::zeros(t, d);
    for i in 0..t {
        for j in 0..t {
            if i == j {
                // |m_i . m_i| / |m_i|^2 is identically 1.
                continue;
            }
            let nn = rc.norms[i] * rc.norms[j];
            if nn == 0.0 {
                continue;
            }
            let h = g.get(i, j) * acos_slope(rc.cosine(i, j));
            if h == 0.0 {
                continue;
            }
            let gij = rc.gram.get(i, j);
            let s = if gij < 0.0 { -1.0 } else { 1.0 };
            let coef = h * s / nn;
            let ri = gij / (rc.norms[i] * rc.norms[i]);
            let rj = gij / (rc.norms[j] * rc.norms[j]);
            for k in 0..d {
                let (mi, mj) = (m.get(i, k), m.get(j, k));
                let gi = out.get(i, k) + coef * (mj - ri * mi);
                out.set(i, k, gi);
                let gj = out.get(j, k) + coef * (mi - rj * mj);
                out.set(j, k, gj);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, v: Array) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add(name, v);
        (s, id)
    }

    #[test]
    fn sigmoid_at_zero() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Array::scalar(0.0).unwrap());
        let y = tape.sigmoid(x).unwrap();
        assert_eq!(tape.scalar(y), 0.5);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let x = tape.constant(Array::zeros(2, 1));
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn identity_matmul() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let i = tape.constant(Array::identity(2));
        let x = tape.constant(Array::from_vec(vec![1.0, 2.0]).unwrap());
        let y = tape.matmul(i, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let (store, id) = store_with("x", Array::scalar(0.0).unwrap());
        let mut tape = Tape::new(&store);
        let x = tape.param(id);
        let y = tape.sigmoid(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(id).item(), 0.25);
    }

    #[test]
    fn square_sum_slope() {
        let (store, id) = store_with("x", Array::scalar(3.0).unwrap());
        let mut tape = Tape::new(&store);
        let x = tape.param(id);
        let sq = tape.mul(x, x).unwrap();
        let y = tape.sum(sq).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(id).item(), 6.0);
    }

    #[test]
    fn acos_slope_at_zero() {
        let (store, id) = store_with("c", Array::scalar(0.0).unwrap());
        let mut tape = Tape::new(&store);
        let c = tape.param(id);
        let y = tape.acos(c).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(id).item(), -1.0);
    }

    #[test]
    fn backward_requires_scalar() {
        let (store, id) = store_with("x", Array::zeros(2, 1));
        let mut tape = Tape::new(&store);
        let x = tape.param(id);
        let y = tape.tanh(x).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::NotScalar { rows: 2, cols: 1 })));
    }

    #[test]
    fn shape_errors_name_the_primitive() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let a = tape.constant(Array::zeros(2, 3));
        let b = tape.constant(Array::zeros(2, 2));
        let err = tape.mul(a, b).unwrap_err().to_string();
        assert!(err.contains("mul") && err.contains("(2, 3)"), "{err}");
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
    }

    #[test]
    fn non_finite_outputs_are_rejected() {
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let z = tape.constant(Array::zeros(1, 1));
        assert!(matches!(tape.log(z), Err(Error::NonFinite(_))));
    }

    #[test]
    fn column_bias_broadcast() {
        let (store, id) = store_with("b", Array::from_vec(vec![1.0, -1.0]).unwrap());
        let mut tape = Tape::new(&store);
        let m = tape.constant(Array::new(2, 3, vec![0.0; 6]).unwrap());
        let b = tape.param(id);
        let y = tape.add(m, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
        let s = tape.sum(y).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(id).data(), &[3.0, 3.0]);
    }

    #[test]
    fn unused_params_get_zero_gradients() {
        let mut store = ParamStore::new();
        let used = store.add("used", Array::scalar(2.0).unwrap());
        let unused = store.add("unused", Array::zeros(3, 2));
        let mut tape = Tape::new(&store);
        let x = tape.param(used);
        let y = tape.sum(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(unused), &Array::zeros(3, 2));
        assert_eq!(g.get(used).item(), 1.0);
    }

    #[test]
    fn gather_scatters_only_into_gathered_row() {
        let table = Array::new(4, 3, (0..12).map(|v| v as f64 * 0.1).collect()).unwrap();
        let (store, id) = store_with("emb", table);
        let mut tape = Tape::new(&store);
        let t = tape.param(id);
        let r = tape.gather(t, 2).unwrap();
        let s = tape.sum(r).unwrap();
        let g = tape.backward(s).unwrap();
        let g = g.get(id);
        for r in 0..4 {
            let expect = if r == 2 { 1.0 } else { 0.0 };
            assert!(g.row(r).iter().all(|&v| v == expect), "row {r}: {:?}", g.row(r));
        }
    }

    #[test]
    fn pairwise_angles_of_disjoint_rows() {
        let m = Array::new(2, 4, vec![0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.3, 0.7]).unwrap();
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let v = tape.constant(m);
        let a = tape.pairwise_angles(v).unwrap();
        let a = tape.value(a);
        let half_pi = std::f64::consts::FRAC_PI_2;
        assert_eq!(a.get(0, 0), 0.0);
        assert_eq!(a.get(1, 1), 0.0);
        assert!((a.get(0, 1) - half_pi).abs() < 1e-15);
        assert!((a.get(1, 0) - half_pi).abs() < 1e-15);
    }
}
