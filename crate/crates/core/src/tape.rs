//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every primitive applied to its variables together with
//! the forward value. [`Tape::backward`] walks the record once in reverse and
//! returns the gradient of a scalar node with respect to every node that was
//! created from a [`Tape::param`] leaf. A fresh tape is built for every
//! minibatch.
//!
//! ```
//! use dmf_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::scalar(3.0).unwrap());
//! let y = tape.square(x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), Some(6.0));
//! ```

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{SparseRows, Tensor};

/// Floor applied to vector norms before they are used as divisors.
pub const NORM_EPS: f64 = 1e-12;

const SELU_SCALE: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Entry-wise functions with a registered derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Selu,
    Tanh,
    Relu,
    /// `1 / (1 + exp(-slope * (x - center)))`
    Sigmoid { slope: f64, center: f64 },
    Square,
    Abs,
}

impl Elementwise {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Elementwise::Selu => {
                if x > 0.0 {
                    SELU_SCALE * x
                } else {
                    SELU_SCALE * SELU_ALPHA * libm::expm1(x)
                }
            }
            Elementwise::Tanh => libm::tanh(x),
            Elementwise::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Elementwise::Sigmoid { slope, center } => logistic(slope * (x - center)),
            Elementwise::Square => x * x,
            Elementwise::Abs => libm::fabs(x),
        }
    }

    /// Derivative at `x`, given the forward output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Elementwise::Selu => {
                if x > 0.0 {
                    SELU_SCALE
                } else {
                    SELU_SCALE * SELU_ALPHA * libm::exp(x)
                }
            }
            Elementwise::Tanh => 1.0 - y * y,
            Elementwise::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Elementwise::Sigmoid { slope, .. } => slope * y * (1.0 - y),
            Elementwise::Square => 2.0 * x,
            Elementwise::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Numerically stable standard logistic function.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// A piecewise function made of shifted logistic steps.
///
/// Segment `v` covers `[knots[v], knots[v + 1])` and evaluates
/// `bases[v] + height * logistic(slope * (x - center[v]))`. Inputs left of the
/// first knot use the first segment, inputs at or right of the last knot use
/// the last one. Centers are supplied as a tape variable so they can be
/// learned; knots are fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmoidSegments {
    pub knots: Vec<f64>,
    pub bases: Vec<f64>,
    pub height: f64,
    pub slope: f64,
}

impl SigmoidSegments {
    pub fn segments(&self) -> usize {
        self.bases.len()
    }

    /// Index of the segment that owns `x`.
    pub fn segment(&self, x: f64) -> usize {
        let s = self.segments();
        let interior = &self.knots[1..s];
        interior.partition_point(|&k| k <= x)
    }

    pub fn eval(&self, x: f64, centers: &[f64]) -> f64 {
        let v = self.segment(x);
        self.bases[v] + self.height * logistic(self.slope * (x - centers[v]))
    }

    /// `(d/dx, d/dcenter)` of the owning segment; the selector itself
    /// contributes no gradient.
    pub fn grad(&self, x: f64, centers: &[f64]) -> (f64, f64) {
        let v = self.segment(x);
        let s = logistic(self.slope * (x - centers[v]));
        let d = self.height * self.slope * s * (1.0 - s);
        (d, -d)
    }

    fn check(&self) -> Result<()> {
        if self.bases.is_empty() || self.knots.len() != self.bases.len() + 1 {
            return Err(Error::Contract(format!(
                "{} segments need {} knots, got {}",
                self.bases.len(),
                self.bases.len() + 1,
                self.knots.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SparseMatMul { input: SparseRows, weight: Var },
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Map(Var, Elementwise),
    ClampMin(Var, f64),
    Sum(Var),
    Mean(Var),
    RowDot(Var, Var),
    RowNorm(Var),
    Norm(Var),
    Segments { x: Var, centers: Var, spec: SigmoidSegments },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Record of one forward computation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar node, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient with respect to `v`, or `None` when `v` does not influence
    /// the differentiated node through any parameter path.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Rows and columns when a rank-1 tensor is read as a single row.
fn as_rows(t: &Tensor) -> (usize, usize) {
    match t.shape() {
        [r, c] => (*r, *c),
        [c] => (1, *c),
        _ => (1, t.len()),
    }
}

fn matmul_nn(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let orow = &mut out[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * c..(p + 1) * c];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `g (r x c) * b^T` where `b` is `k x c`.
fn matmul_nt(g: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * k];
    for i in 0..r {
        let grow = &g[i * c..(i + 1) * c];
        for p in 0..k {
            let brow = &b[p * c..(p + 1) * c];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a^T * g` where `a` is `r x k` and `g` is `r x c`.
fn matmul_tn(a: &[f64], g: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * c];
    for i in 0..r {
        let grow = &g[i * c..(i + 1) * c];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * c..(p + 1) * c];
            for (o, gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_unchecked(Op::Leaf, value, true)
    }

    /// Leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push_unchecked(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, op: Op, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        let requires_grad = self.operands(&op).iter().any(|o| self.nodes[o.0].requires_grad);
        Ok(self.push_unchecked(op, Tensor::from_parts(shape, values), requires_grad))
    }

    fn operands(&self, op: &Op) -> Vec<Var> {
        match *op {
            Op::Leaf => Vec::new(),
            Op::SparseMatMul { weight, .. } => vec![weight],
            Op::MatMul(a, b)
            | Op::AddBias(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::RowDot(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::Map(a, _)
            | Op::ClampMin(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowNorm(a)
            | Op::Norm(a) => vec![a],
            Op::Segments { x, centers, .. } => vec![x, centers],
        }
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::Contract(format!("variable {} is not on this tape", v.0)))
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.check_var(a)?;
        self.check_var(b)?;
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, format!("{:?} vs {:?}", sa, sb)));
        }
        Ok(())
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_var(a)?;
        self.check_var(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let ((r, k), (k2, c)) = match (ta.dims2(), tb.dims2()) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(Error::dim("matmul", "operands must be rank 2")),
        };
        if k != k2 {
            return Err(Error::dim("matmul", format!("{}x{} times {}x{}", r, k, k2, c)));
        }
        let out = matmul_nn(ta.values(), tb.values(), r, k, c);
        self.push("matmul", Op::MatMul(a, b), vec![r, c], out)
    }

    /// Product of constant sparse rows with a dense weight matrix.
    pub fn sparse_matmul(&mut self, input: SparseRows, weight: Var) -> Result<Var> {
        self.check_var(weight)?;
        let w = self.value(weight);
        let (k, c) = w.dims2().ok_or_else(|| Error::dim("sparse_matmul", "weight must be rank 2"))?;
        if input.cols() != k {
            return Err(Error::dim(
                "sparse_matmul",
                format!("input width {} vs weight {}x{}", input.cols(), k, c),
            ));
        }
        let r = input.rows();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let orow = &mut out[i * c..(i + 1) * c];
            for (p, xv) in input.row(i) {
                for (o, wv) in orow.iter_mut().zip(&w.values()[p * c..(p + 1) * c]) {
                    *o += xv * wv;
                }
            }
        }
        self.push("sparse_matmul", Op::SparseMatMul { input, weight }, vec![r, c], out)
    }

    /// Adds a bias vector to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check_var(x)?;
        self.check_var(bias)?;
        let (tx, tb) = (self.value(x), self.value(bias));
        let (_, c) = as_rows(tx);
        if tb.rank() != 1 || tb.len() != c {
            return Err(Error::dim("add_bias", format!("bias {:?} for rows of width {}", tb.shape(), c)));
        }
        let out = tx
            .values()
            .chunks(c)
            .flat_map(|row| row.iter().zip(tb.values()).map(|(a, b)| a + b))
            .collect();
        let shape = tx.shape().to_vec();
        self.push("add_bias", Op::AddBias(x, bias), shape, out)
    }

    fn zip_with(&mut self, name: &'static str, op: Op, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let out = self
            .value(a)
            .values()
            .iter()
            .zip(self.value(b).values())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        self.push(name, op, shape, out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("div", Op::Div(a, b), a, b, |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.check_var(a)?;
        let t = self.value(a);
        let out = t.values().iter().map(|x| x * s).collect();
        let shape = t.shape().to_vec();
        self.push("scale", Op::Scale(a, s), shape, out)
    }

    pub fn map(&mut self, a: Var, kind: Elementwise) -> Result<Var> {
        self.check_var(a)?;
        let t = self.value(a);
        let out = t.values().iter().map(|&x| kind.apply(x)).collect();
        let shape = t.shape().to_vec();
        self.push("elementwise", Op::Map(a, kind), shape, out)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.map(a, Elementwise::Square)
    }

    /// `max(x, floor)` entry-wise; the gradient is zero where the floor is
    /// active.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var> {
        self.check_var(a)?;
        let t = self.value(a);
        let out = t.values().iter().map(|&x| if x > floor { x } else { floor }).collect();
        let shape = t.shape().to_vec();
        self.push("clamp_min", Op::ClampMin(a, floor), shape, out)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check_var(a)?;
        let s = self.value(a).values().iter().sum();
        self.push("sum", Op::Sum(a), Vec::new(), vec![s])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check_var(a)?;
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let s = t.values().iter().sum::<f64>() / t.len() as f64;
        self.push("mean", Op::Mean(a), Vec::new(), vec![s])
    }

    /// Dot product of matching rows; output has one entry per row.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_dot", a, b)?;
        let (r, c) = as_rows(self.value(a));
        let (ta, tb) = (self.value(a).values(), self.value(b).values());
        let out = (0..r)
            .map(|i| ta[i * c..(i + 1) * c].iter().zip(&tb[i * c..(i + 1) * c]).map(|(x, y)| x * y).sum())
            .collect();
        self.push("row_dot", Op::RowDot(a, b), vec![r], out)
    }

    /// Euclidean norm of every row.
    ///
    /// The forward value is the exact norm (zero for a zero row). The local
    /// gradient `x / max(|x|, NORM_EPS)` keeps zero rows differentiable.
    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        self.check_var(a)?;
        let (r, c) = as_rows(self.value(a));
        let t = self.value(a).values();
        let out = (0..r).map(|i| libm::sqrt(t[i * c..(i + 1) * c].iter().map(|x| x * x).sum())).collect();
        self.push("row_norm", Op::RowNorm(a), vec![r], out)
    }

    /// Euclidean norm of the whole tensor as a scalar.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        self.check_var(a)?;
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Contract("norm of an empty tensor".into()));
        }
        let n = libm::sqrt(t.sum_squares());
        self.push("l2_norm", Op::Norm(a), Vec::new(), vec![n])
    }

    /// Applies `spec` entry-wise to `x`, with `centers` holding one sigmoid
    /// center per segment.
    pub fn sigmoid_segments(&mut self, x: Var, centers: Var, spec: &SigmoidSegments) -> Result<Var> {
        self.check_var(x)?;
        self.check_var(centers)?;
        spec.check()?;
        let cs = self.value(centers);
        if cs.len() != spec.segments() {
            return Err(Error::dim(
                "sigmoid_segments",
                format!("{} centers for {} segments", cs.len(), spec.segments()),
            ));
        }
        let tx = self.value(x);
        let out = tx.values().iter().map(|&v| spec.eval(v, cs.values())).collect();
        let shape = tx.shape().to_vec();
        let op = Op::Segments { x, centers, spec: spec.clone() };
        self.push("sigmoid_segments", op, shape, out)
    }

    /// Gradient of the scalar node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check_var(loss)?;
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.filter(|_| n.requires_grad).map(|g| Tensor::from_parts(n.value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, delta: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(delta).for_each(|(e, d)| *e += d),
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |v: Var| self.nodes[v.0].value.values();
        let needs = |v: Var| self.nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (r, k) = self.nodes[a.0].value.dims2().unwrap();
                let (_, c) = self.nodes[b.0].value.dims2().unwrap();
                if needs(*a) {
                    acc(*a, matmul_nt(g, val(*b), r, k, c));
                }
                if needs(*b) {
                    acc(*b, matmul_tn(val(*a), g, r, k, c));
                }
            }
            Op::SparseMatMul { input, weight } => {
                let (k, c) = self.nodes[weight.0].value.dims2().unwrap();
                let mut dw = vec![0.0; k * c];
                for i in 0..input.rows() {
                    let grow = &g[i * c..(i + 1) * c];
                    for (p, xv) in input.row(i) {
                        for (d, gv) in dw[p * c..(p + 1) * c].iter_mut().zip(grow) {
                            *d += xv * gv;
                        }
                    }
                }
                acc(*weight, dw);
            }
            Op::AddBias(x, bias) => {
                let c = self.nodes[bias.0].value.len();
                if needs(*bias) {
                    let mut db = vec![0.0; c];
                    for row in g.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    acc(*bias, db);
                }
                acc(*x, g.to_vec());
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                acc(*b, g.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(*a, g.iter().zip(vb).map(|(g, y)| g / y).collect());
                acc(
                    *b,
                    g.iter().zip(va).zip(vb).map(|((g, x), y)| -g * x / (y * y)).collect(),
                );
            }
            Op::Scale(a, s) => acc(*a, g.iter().map(|v| v * s).collect()),
            Op::Map(a, kind) => {
                let out = node.value.values();
                acc(
                    *a,
                    g.iter()
                        .zip(val(*a))
                        .zip(out)
                        .map(|((g, &x), &y)| g * kind.derivative(x, y))
                        .collect(),
                );
            }
            Op::ClampMin(a, floor) => {
                acc(*a, g.iter().zip(val(*a)).map(|(g, &x)| if x > *floor { *g } else { 0.0 }).collect());
            }
            Op::Sum(a) => acc(*a, vec![g[0]; self.nodes[a.0].value.len()]),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len();
                acc(*a, vec![g[0] / n as f64; n]);
            }
            Op::RowDot(a, b) => {
                let (_, c) = as_rows(&self.nodes[a.0].value);
                let (va, vb) = (val(*a), val(*b));
                acc(*a, vb.iter().enumerate().map(|(k, y)| g[k / c] * y).collect());
                acc(*b, va.iter().enumerate().map(|(k, x)| g[k / c] * x).collect());
            }
            Op::RowNorm(a) => {
                let (_, c) = as_rows(&self.nodes[a.0].value);
                let norms = node.value.values();
                acc(
                    *a,
                    val(*a)
                        .iter()
                        .enumerate()
                        .map(|(k, x)| {
                            let n = norms[k / c];
                            g[k / c] * x / if n > NORM_EPS { n } else { NORM_EPS }
                        })
                        .collect(),
                );
            }
            Op::Norm(a) => {
                let n = node.value.values()[0];
                let n = if n > NORM_EPS { n } else { NORM_EPS };
                acc(*a, val(*a).iter().map(|x| g[0] * x / n).collect());
            }
            Op::Segments { x, centers, spec } => {
                let cs = val(*centers);
                let mut dx = Vec::with_capacity(g.len());
                let mut dc = vec![0.0; cs.len()];
                for (gv, &xv) in g.iter().zip(val(*x)) {
                    let (gx, gc) = spec.grad(xv, cs);
                    dx.push(gv * gx);
                    dc[spec.segment(xv)] += gv * gc;
                }
                acc(*x, dx);
                acc(*centers, dc);
            }
        }
    }
}
