use super::Tensor;
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

impl ValueId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Matmul(ValueId, ValueId),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Div(ValueId, ValueId),
    /// One-element tensor times arbitrary tensor.
    ScalarMul(ValueId, ValueId),
    /// Compile-time constant times tensor; the constant is not differentiated.
    Scale(f64, ValueId),
    Tanh(ValueId),
    Sigmoid(ValueId),
    Exp(ValueId),
    Log(ValueId),
    Relu(ValueId),
    Softmax(ValueId),
    Concat(ValueId, ValueId),
    Slice { src: ValueId, offset: usize },
    Sum(ValueId),
    Dot(ValueId, ValueId),
    Stack(Vec<ValueId>),
}

/// Wengert list: forward values plus the operation that produced each.
///
/// All operations validate shapes before computing and reject non-finite
/// results immediately, so a NaN or infinity is reported at the operation
/// that created it rather than surfacing later in a loss.
pub struct Tape {
    values: Vec<Tensor>,
    ops: Vec<Op>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`ValueId`].
///
/// A `None` entry means the value does not influence the differentiated
/// output; callers that need a dense gradient substitute zeros.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { values: Vec::new(), ops: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.values[id.0]
    }

    /// Records an input value. Leaves are never checked for finiteness;
    /// callers own the validity of their inputs.
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push_unchecked(value, Op::Leaf)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op) -> ValueId {
        let id = ValueId(self.values.len());
        self.values.push(value);
        self.ops.push(op);
        id
    }

    fn push(&mut self, value: Tensor, op: Op, what: &str) -> Result<ValueId> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("{what} produced NaN or infinity")));
        }
        Ok(self.push_unchecked(value, op))
    }

    fn same_shape(&self, a: ValueId, b: ValueId, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Dim(format!("{what}: shapes {sa:?} and {sb:?} differ")));
        }
        Ok(())
    }

    /// Matrix product. Accepts matrix x matrix and matrix x vector.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 {
            return Err(Error::Dim(format!("matmul: left operand has shape {:?}, want rank 2", ta.shape())));
        }
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        let out = match tb.rank() {
            2 => {
                if tb.shape()[0] != k {
                    return Err(Error::Dim(format!(
                        "matmul: inner dimensions {k} and {} differ",
                        tb.shape()[0]
                    )));
                }
                let n = tb.shape()[1];
                let mut data = vec![0.0; m * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = ta.at2(i, p);
                        for j in 0..n {
                            data[i * n + j] += av * tb.at2(p, j);
                        }
                    }
                }
                Tensor::matrix(m, n, data)?
            }
            1 => {
                if tb.shape()[0] != k {
                    return Err(Error::Dim(format!(
                        "matmul: matrix columns {k} do not match vector length {}",
                        tb.shape()[0]
                    )));
                }
                let mut data = vec![0.0; m];
                for i in 0..m {
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += ta.at2(i, p) * tb.at(p);
                    }
                    data[i] = acc;
                }
                Tensor::vector(data)
            }
            r => return Err(Error::Dim(format!("matmul: right operand rank {r} unsupported"))),
        };
        self.push(out, Op::Matmul(a, b), "matmul")
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::from_shape(self.value(a).shape().to_vec(), data)?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.same_shape(a, b, "sub")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let out = Tensor::from_shape(self.value(a).shape().to_vec(), data)?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let out = Tensor::from_shape(self.value(a).shape().to_vec(), data)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn div(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.same_shape(a, b, "div")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x / y)
            .collect();
        let out = Tensor::from_shape(self.value(a).shape().to_vec(), data)?;
        self.push(out, Op::Div(a, b), "div")
    }

    /// One-element tensor `s` times every element of `x`.
    pub fn scalar_mul(&mut self, s: ValueId, x: ValueId) -> Result<ValueId> {
        if !self.value(s).is_scalar() {
            return Err(Error::Dim(format!(
                "scalar_mul: scalar operand has shape {:?}",
                self.value(s).shape()
            )));
        }
        let sv = self.value(s).at(0);
        let data = self.value(x).data().iter().map(|v| sv * v).collect();
        let out = Tensor::from_shape(self.value(x).shape().to_vec(), data)?;
        self.push(out, Op::ScalarMul(s, x), "scalar_mul")
    }

    /// Constant times tensor; `c` is not part of the differentiated graph.
    pub fn scale(&mut self, c: f64, x: ValueId) -> Result<ValueId> {
        let data = self.value(x).data().iter().map(|v| c * v).collect();
        let out = Tensor::from_shape(self.value(x).shape().to_vec(), data)?;
        self.push(out, Op::Scale(c, x), "scale")
    }

    pub fn tanh(&mut self, x: ValueId) -> Result<ValueId> {
        let data = self.value(x).data().iter().map(|v| v.tanh()).collect();
        let out = Tensor::from_shape(self.value(x).shape().to_vec(), data)?;
        self.push(out, Op::Tanh(x), "tanh")
    }

    pub fn sigmoid(&mut self, x: ValueId) -> Result<ValueId> {
        let data = self
            .value(x)
            .data()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        let out = Tensor::from_shape(self.value(x).shape().to_vec(), data)?;
        self.push(out, Op::Sigmoid(x), "sigmoid")
    }

    pub fn exp(&mut self, x: ValueId) -> Result<ValueId> {
        let data = self.value(x).data().iter().map(|v| v.exp()).collect();
        let out = Tensor::from_shape(self.value(x).shape().to_vec(), data)?;
        self.push(out, Op::Exp(x), "exp")
    }

    pub fn log(&mut self, x: ValueId) -> Result<ValueId> {
        if let Some(bad) = self.value(x).data().iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        let data = self.value(x).data().iter().map(|v| v.ln()).collect();
        let out = Tensor::from_shape(self.value(x).shape().to_vec(), data)?;
        self.push(out, Op::Log(x), "log")
    }

    pub fn relu(&mut self, x: ValueId) -> Result<ValueId> {
        let data = self.value(x).data().iter().map(|v| v.max(0.0)).collect();
        let out = Tensor::from_shape(self.value(x).shape().to_vec(), data)?;
        self.push(out, Op::Relu(x), "relu")
    }

    /// Numerically stable softmax over a non-empty vector.
    pub fn softmax(&mut self, x: ValueId) -> Result<ValueId> {
        let t = self.value(x);
        if t.rank() != 1 || t.numel() == 0 {
            return Err(Error::Dim(format!(
                "softmax: want a non-empty vector, got shape {:?}",
                t.shape()
            )));
        }
        let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = t.data().iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let out = Tensor::vector(exps.into_iter().map(|e| e / total).collect());
        self.push(out, Op::Softmax(x), "softmax")
    }

    /// Concatenation of two vectors; either side may be empty.
    pub fn concat(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 1 || tb.rank() != 1 {
            return Err(Error::Dim(format!(
                "concat: want two vectors, got shapes {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let mut data = Vec::with_capacity(ta.numel() + tb.numel());
        data.extend_from_slice(ta.data());
        data.extend_from_slice(tb.data());
        self.push(Tensor::vector(data), Op::Concat(a, b), "concat")
    }

    /// Contiguous sub-vector `[offset, offset + len)` of a vector.
    pub fn slice(&mut self, x: ValueId, offset: usize, len: usize) -> Result<ValueId> {
        let t = self.value(x);
        if t.rank() != 1 {
            return Err(Error::Dim(format!("slice: want a vector, got shape {:?}", t.shape())));
        }
        if offset + len > t.numel() {
            return Err(Error::Dim(format!(
                "slice: range {offset}..{} exceeds length {}",
                offset + len,
                t.numel()
            )));
        }
        let data = t.data()[offset..offset + len].to_vec();
        self.push(Tensor::vector(data), Op::Slice { src: x, offset }, "slice")
    }

    /// Sum of all elements, as a rank-0 scalar.
    pub fn sum(&mut self, x: ValueId) -> Result<ValueId> {
        let total: f64 = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), "sum")
    }

    /// Inner product of two same-shape tensors, as a rank-0 scalar.
    pub fn dot(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.same_shape(a, b, "dot")?;
        let total: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        self.push(Tensor::scalar(total), Op::Dot(a, b), "dot")
    }

    /// Packs one-element tensors into a vector, preserving order.
    pub fn stack(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let mut data = Vec::with_capacity(parts.len());
        for &p in parts {
            let t = self.value(p);
            if !t.is_scalar() {
                return Err(Error::Dim(format!(
                    "stack: every part must hold one element, got shape {:?}",
                    t.shape()
                )));
            }
            data.push(t.at(0));
        }
        self.push(Tensor::vector(data), Op::Stack(parts.to_vec()), "stack")
    }

    /// Reverse sweep from `loss`, which must hold exactly one element.
    ///
    /// The tape is not consumed: repeated calls return bitwise-identical
    /// gradients.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Usage(format!(
                "backward: loss must hold one element, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(dout) = grads[i].clone() else { continue };
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Matmul(a, b) => self.backward_matmul(&mut grads, *a, *b, &dout),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, self.value(*a).shape(), dout.data());
                    accumulate(&mut grads, *b, self.value(*b).shape(), dout.data());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, self.value(*a).shape(), dout.data());
                    let neg: Vec<f64> = dout.data().iter().map(|v| -v).collect();
                    accumulate(&mut grads, *b, self.value(*b).shape(), &neg);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = dout
                        .data()
                        .iter()
                        .zip(self.value(*b).data())
                        .map(|(d, y)| d * y)
                        .collect();
                    let db: Vec<f64> = dout
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(d, x)| d * x)
                        .collect();
                    accumulate(&mut grads, *a, self.value(*a).shape(), &da);
                    accumulate(&mut grads, *b, self.value(*b).shape(), &db);
                }
                Op::Div(a, b) => {
                    let bs = self.value(*b).data();
                    let outs = self.value(ValueId(i)).data();
                    let da: Vec<f64> = dout.data().iter().zip(bs).map(|(d, y)| d / y).collect();
                    let db: Vec<f64> = dout
                        .data()
                        .iter()
                        .zip(outs.iter().zip(bs))
                        .map(|(d, (o, y))| -d * o / y)
                        .collect();
                    accumulate(&mut grads, *a, self.value(*a).shape(), &da);
                    accumulate(&mut grads, *b, self.value(*b).shape(), &db);
                }
                Op::ScalarMul(s, x) => {
                    let sv = self.value(*s).at(0);
                    let ds: f64 = dout
                        .data()
                        .iter()
                        .zip(self.value(*x).data())
                        .map(|(d, v)| d * v)
                        .sum();
                    accumulate(&mut grads, *s, self.value(*s).shape(), &[ds]);
                    let dx: Vec<f64> = dout.data().iter().map(|d| d * sv).collect();
                    accumulate(&mut grads, *x, self.value(*x).shape(), &dx);
                }
                Op::Scale(c, x) => {
                    let dx: Vec<f64> = dout.data().iter().map(|d| d * c).collect();
                    accumulate(&mut grads, *x, self.value(*x).shape(), &dx);
                }
                Op::Tanh(x) => {
                    let ys = self.value(ValueId(i)).data();
                    let dx: Vec<f64> = dout
                        .data()
                        .iter()
                        .zip(ys)
                        .map(|(d, y)| d * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads, *x, self.value(*x).shape(), &dx);
                }
                Op::Sigmoid(x) => {
                    let ys = self.value(ValueId(i)).data();
                    let dx: Vec<f64> = dout
                        .data()
                        .iter()
                        .zip(ys)
                        .map(|(d, y)| d * y * (1.0 - y))
                        .collect();
                    accumulate(&mut grads, *x, self.value(*x).shape(), &dx);
                }
                Op::Exp(x) => {
                    let ys = self.value(ValueId(i)).data();
                    let dx: Vec<f64> = dout.data().iter().zip(ys).map(|(d, y)| d * y).collect();
                    accumulate(&mut grads, *x, self.value(*x).shape(), &dx);
                }
                Op::Log(x) => {
                    let xs = self.value(*x).data();
                    let dx: Vec<f64> = dout.data().iter().zip(xs).map(|(d, v)| d / v).collect();
                    accumulate(&mut grads, *x, self.value(*x).shape(), &dx);
                }
                Op::Relu(x) => {
                    let xs = self.value(*x).data();
                    let dx: Vec<f64> = dout
                        .data()
                        .iter()
                        .zip(xs)
                        .map(|(d, v)| if *v > 0.0 { *d } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, self.value(*x).shape(), &dx);
                }
                Op::Softmax(x) => {
                    let ys = self.value(ValueId(i)).data();
                    let inner: f64 = dout.data().iter().zip(ys).map(|(d, y)| d * y).sum();
                    let dx: Vec<f64> = dout
                        .data()
                        .iter()
                        .zip(ys)
                        .map(|(d, y)| y * (d - inner))
                        .collect();
                    accumulate(&mut grads, *x, self.value(*x).shape(), &dx);
                }
                Op::Concat(a, b) => {
                    let la = self.value(*a).numel();
                    accumulate(&mut grads, *a, self.value(*a).shape(), &dout.data()[..la]);
                    accumulate(&mut grads, *b, self.value(*b).shape(), &dout.data()[la..]);
                }
                Op::Slice { src, offset } => {
                    let mut dsrc = vec![0.0; self.value(*src).numel()];
                    dsrc[*offset..offset + dout.numel()].copy_from_slice(dout.data());
                    accumulate(&mut grads, *src, self.value(*src).shape(), &dsrc);
                }
                Op::Sum(x) => {
                    let d = dout.at(0);
                    let dx = vec![d; self.value(*x).numel()];
                    accumulate(&mut grads, *x, self.value(*x).shape(), &dx);
                }
                Op::Dot(a, b) => {
                    let d = dout.at(0);
                    let da: Vec<f64> = self.value(*b).data().iter().map(|y| d * y).collect();
                    let db: Vec<f64> = self.value(*a).data().iter().map(|x| d * x).collect();
                    accumulate(&mut grads, *a, self.value(*a).shape(), &da);
                    accumulate(&mut grads, *b, self.value(*b).shape(), &db);
                }
                Op::Stack(parts) => {
                    for (j, p) in parts.iter().enumerate() {
                        accumulate(&mut grads, *p, self.value(*p).shape(), &[dout.at(j)]);
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_matmul(&self, grads: &mut [Option<Tensor>], a: ValueId, b: ValueId, dout: &Tensor) {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.shape()[0], ta.shape()[1]);
        // A vector right operand behaves as a k x 1 matrix.
        let n = if tb.rank() == 2 { tb.shape()[1] } else { 1 };
        let bd = tb.data();
        let dd = dout.data();

        let mut da = vec![0.0; m * k];
        for i in 0..m {
            for p in 0..k {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += dd[i * n + j] * bd[p * n + j];
                }
                da[i * k + p] = acc;
            }
        }
        accumulate(grads, a, ta.shape(), &da);

        let ad = ta.data();
        let mut db = vec![0.0; k * n];
        for p in 0..k {
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..m {
                    acc += ad[i * k + p] * dd[i * n + j];
                }
                db[p * n + j] = acc;
            }
        }
        accumulate(grads, b, tb.shape(), &db);
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: ValueId, shape: &[usize], contribution: &[f64]) {
    let slot = &mut grads[id.0];
    match slot {
        Some(g) => {
            for (dst, src) in g.data_mut().iter_mut().zip(contribution) {
                *dst += src;
            }
        }
        None => {
            let mut g = Tensor::zeros(shape);
            g.data_mut().copy_from_slice(contribution);
            *slot = Some(g);
        }
    }
}
