//! Reference-counted tensors that record the ops producing them.
//!
//! Every op's backward rule is itself written in terms of differentiable
//! tensor ops, so gradients can be differentiated again (needed by the
//! gradient penalty of the Wasserstein critic). When a gradient is requested
//! without `create_graph`, the backward sweep runs under [`no_grad`] and the
//! resulting tensors are plain constants.

use std::cell::Cell;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::rc::Rc;

use ndarray::{ArrayD, Axis, IxDyn, Slice};

use super::kernels::{self, ConvGeom};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Runs `f` with graph recording disabled on this thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|c| c.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|c| c.replace(false)));
    f()
}

#[derive(Clone)]
enum Op {
    Leaf,
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Div(Tensor, Tensor),
    Neg(Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    Exp(Tensor),
    Ln(Tensor),
    Sqrt(Tensor),
    RecipSqrt(Tensor),
    Relu(Tensor),
    LeakyRelu(Tensor, f64),
    Sigmoid(Tensor),
    Clamp(Tensor, f64, f64),
    SumTo(Tensor),
    BroadcastTo(Tensor),
    Reshape(Tensor),
    Permute(Tensor, Vec<usize>),
    Concat(Vec<Tensor>, usize),
    Narrow(Tensor, usize, usize),
    Pad(Tensor, usize, usize),
    Im2Col(Tensor, ConvGeom),
    Col2Im(Tensor, ConvGeom),
    Bmm(Tensor, Tensor),
}

struct Node {
    id: u64,
    value: ArrayD<f64>,
    requires_grad: bool,
    op: Op,
}

/// An n-dimensional `f64` array that remembers how it was computed.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Op {
    fn inputs(&self) -> Vec<&Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Bmm(a, b) => {
                vec![a, b]
            }
            Op::Concat(xs, _) => xs.iter().collect(),
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Sqrt(a)
            | Op::RecipSqrt(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Sigmoid(a)
            | Op::Clamp(a, _, _)
            | Op::SumTo(a)
            | Op::BroadcastTo(a)
            | Op::Reshape(a)
            | Op::Permute(a, _)
            | Op::Narrow(a, _, _)
            | Op::Pad(a, _, _)
            | Op::Im2Col(a, _)
            | Op::Col2Im(a, _) => vec![a],
        }
    }
}

fn record(value: ArrayD<f64>, op: Op) -> Tensor {
    let requires_grad = grad_enabled() && op.inputs().iter().any(|t| t.0.requires_grad);
    let op = if requires_grad { op } else { Op::Leaf };
    Tensor(Rc::new(Node {
        id: next_id(),
        value,
        requires_grad,
        op,
    }))
}

/// Sums `x` down to `shape` under numpy-style right-aligned broadcasting.
fn reduce_to(x: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    if x.shape() == shape {
        return x.clone();
    }
    let mut out = x.clone();
    while out.ndim() > shape.len() {
        out = out.sum_axis(Axis(0));
    }
    for (ax, &s) in shape.iter().enumerate() {
        if s == 1 && out.shape()[ax] != 1 {
            out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    assert_eq!(out.shape(), shape, "cannot reduce to target shape");
    out
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| {
            let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
            let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
            assert!(
                da == db || da == 1 || db == 1,
                "incompatible broadcast {a:?} vs {b:?}"
            );
            da.max(db)
        })
        .collect()
}

fn zip_broadcast(
    a: &ArrayD<f64>,
    b: &ArrayD<f64>,
    f: impl Fn(f64, f64) -> f64,
) -> ArrayD<f64> {
    if a.shape() == b.shape() {
        let mut out = a.clone();
        out.zip_mut_with(b, |x, &y| *x = f(*x, y));
        return out;
    }
    let shape = broadcast_shape(a.shape(), b.shape());
    let av = a.broadcast(IxDyn(&shape)).expect("broadcast lhs");
    let bv = b.broadcast(IxDyn(&shape)).expect("broadcast rhs");
    let mut out = av.to_owned();
    out.zip_mut_with(&bv, |x, &y| *x = f(*x, y));
    out
}

impl Tensor {
    /// A constant that never receives gradients.
    pub fn constant(value: ArrayD<f64>) -> Self {
        Tensor(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: false,
            op: Op::Leaf,
        }))
    }

    /// A trainable leaf.
    pub fn parameter(value: ArrayD<f64>) -> Self {
        Tensor(Rc::new(Node {
            id: next_id(),
            value,
            requires_grad: true,
            op: Op::Leaf,
        }))
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        Self::constant(ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape/data mismatch"))
    }

    pub fn scalar(v: f64) -> Self {
        Self::constant(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::constant(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::constant(ArrayD::ones(IxDyn(shape)))
    }

    pub fn value(&self) -> &ArrayD<f64> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn ndim(&self) -> usize {
        self.0.value.ndim()
    }

    pub fn len(&self) -> usize {
        self.0.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.value.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape());
        *self.0.value.iter().next().unwrap()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.value.iter().copied().collect()
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::constant(self.0.value.clone())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> ArrayD<f64> {
        self.0.value.mapv(f)
    }

    pub fn add(&self, rhs: &Tensor) -> Tensor {
        let v = zip_broadcast(self.value(), rhs.value(), |a, b| a + b);
        record(v, Op::Add(self.clone(), rhs.clone()))
    }

    pub fn sub(&self, rhs: &Tensor) -> Tensor {
        let v = zip_broadcast(self.value(), rhs.value(), |a, b| a - b);
        record(v, Op::Sub(self.clone(), rhs.clone()))
    }

    pub fn mul(&self, rhs: &Tensor) -> Tensor {
        let v = zip_broadcast(self.value(), rhs.value(), |a, b| a * b);
        record(v, Op::Mul(self.clone(), rhs.clone()))
    }

    pub fn div(&self, rhs: &Tensor) -> Tensor {
        let v = zip_broadcast(self.value(), rhs.value(), |a, b| a / b);
        record(v, Op::Div(self.clone(), rhs.clone()))
    }

    pub fn neg(&self) -> Tensor {
        record(self.map(|x| -x), Op::Neg(self.clone()))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        record(self.map(|x| x * c), Op::Scale(self.clone(), c))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        record(self.map(|x| x + c), Op::AddScalar(self.clone()))
    }

    /// `c - self`
    pub fn rsub_scalar(&self, c: f64) -> Tensor {
        self.neg().add_scalar(c)
    }

    pub fn square(&self) -> Tensor {
        self.mul(self)
    }

    pub fn exp(&self) -> Tensor {
        record(self.map(f64::exp), Op::Exp(self.clone()))
    }

    pub fn ln(&self) -> Tensor {
        record(self.map(f64::ln), Op::Ln(self.clone()))
    }

    pub fn sqrt(&self) -> Tensor {
        record(self.map(f64::sqrt), Op::Sqrt(self.clone()))
    }

    /// `1/sqrt(x)`, defined as 0 where `x == 0` so that the gradient of a
    /// norm at the origin is zero instead of NaN.
    pub fn recip_sqrt(&self) -> Tensor {
        let v = self.map(|x| if x == 0.0 { 0.0 } else { 1.0 / x.sqrt() });
        record(v, Op::RecipSqrt(self.clone()))
    }

    pub fn relu(&self) -> Tensor {
        record(self.map(|x| x.max(0.0)), Op::Relu(self.clone()))
    }

    pub fn leaky_relu(&self, slope: f64) -> Tensor {
        let v = self.map(|x| if x > 0.0 { x } else { slope * x });
        record(v, Op::LeakyRelu(self.clone(), slope))
    }

    pub fn sigmoid(&self) -> Tensor {
        record(self.map(sigmoid), Op::Sigmoid(self.clone()))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Tensor {
        record(self.map(|x| x.clamp(lo, hi)), Op::Clamp(self.clone(), lo, hi))
    }

    /// Reduces by summation to `shape` (right-aligned broadcasting rules).
    pub fn sum_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        record(reduce_to(self.value(), shape), Op::SumTo(self.clone()))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let v = self
            .value()
            .broadcast(IxDyn(shape))
            .unwrap_or_else(|| panic!("cannot broadcast {:?} to {shape:?}", self.shape()))
            .to_owned();
        record(v, Op::BroadcastTo(self.clone()))
    }

    pub fn sum(&self) -> Tensor {
        self.sum_to(&[]).reshape(&[])
    }

    pub fn mean(&self) -> Tensor {
        let n = self.len() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sum over `axes`, keeping them as size-1 dimensions.
    pub fn sum_axes_keep(&self, axes: &[usize]) -> Tensor {
        let mut shape = self.shape().to_vec();
        for &a in axes {
            shape[a] = 1;
        }
        self.sum_to(&shape)
    }

    pub fn mean_axes_keep(&self, axes: &[usize]) -> Tensor {
        let n: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_axes_keep(axes).scale(1.0 / n as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        if self.shape() == shape {
            return self.clone();
        }
        let v = self
            .value()
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(shape))
            .unwrap_or_else(|_| panic!("cannot reshape {:?} to {shape:?}", self.shape()));
        record(v, Op::Reshape(self.clone()))
    }

    pub fn permute(&self, axes: &[usize]) -> Tensor {
        let v = self
            .value()
            .view()
            .permuted_axes(IxDyn(axes))
            .as_standard_layout()
            .into_owned();
        record(v, Op::Permute(self.clone(), axes.to_vec()))
    }

    /// Swaps the last two axes.
    pub fn transpose_last(&self) -> Tensor {
        let n = self.ndim();
        let mut axes: Vec<usize> = (0..n).collect();
        axes.swap(n - 2, n - 1);
        self.permute(&axes)
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Tensor {
        let views: Vec<_> = parts.iter().map(|t| t.value().view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views).expect("concat shape mismatch");
        record(v, Op::Concat(parts.to_vec(), axis))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        let v = self
            .value()
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        record(v, Op::Narrow(self.clone(), axis, start))
    }

    /// Zero-pads `axis` with `before` leading and enough trailing entries to reach `total`.
    fn pad_axis(&self, axis: usize, before: usize, total: usize) -> Tensor {
        let mut shape = self.shape().to_vec();
        shape[axis] = total;
        let mut v = ArrayD::zeros(IxDyn(&shape));
        let len = self.shape()[axis];
        v.slice_axis_mut(Axis(axis), Slice::from(before..before + len))
            .assign(self.value());
        record(v, Op::Pad(self.clone(), axis, before))
    }

    pub fn im2col(&self, g: ConvGeom) -> Tensor {
        assert_eq!(self.shape(), &g.input_shape()[..], "im2col geometry mismatch");
        record(kernels::im2col(self.value(), &g), Op::Im2Col(self.clone(), g))
    }

    fn col2im(&self, g: ConvGeom) -> Tensor {
        record(kernels::col2im(self.value(), &g), Op::Col2Im(self.clone(), g))
    }

    pub fn bmm(&self, rhs: &Tensor) -> Tensor {
        record(kernels::bmm(self.value(), rhs.value()), Op::Bmm(self.clone(), rhs.clone()))
    }

    fn backward_rule(&self, g: &Tensor) -> Vec<(Tensor, Tensor)> {
        let node = &self.0;
        match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![
                (a.clone(), g.sum_to(a.shape())),
                (b.clone(), g.sum_to(b.shape())),
            ],
            Op::Sub(a, b) => vec![
                (a.clone(), g.sum_to(a.shape())),
                (b.clone(), g.neg().sum_to(b.shape())),
            ],
            Op::Mul(a, b) => vec![
                (a.clone(), g.mul(b).sum_to(a.shape())),
                (b.clone(), g.mul(a).sum_to(b.shape())),
            ],
            Op::Div(a, b) => vec![
                (a.clone(), g.div(b).sum_to(a.shape())),
                (
                    b.clone(),
                    g.mul(a).div(&b.square()).neg().sum_to(b.shape()),
                ),
            ],
            Op::Neg(a) => vec![(a.clone(), g.neg())],
            Op::Scale(a, c) => vec![(a.clone(), g.scale(*c))],
            Op::AddScalar(a) => vec![(a.clone(), g.clone())],
            Op::Exp(a) => vec![(a.clone(), g.mul(&a.exp()))],
            Op::Ln(a) => vec![(a.clone(), g.div(a))],
            Op::Sqrt(a) => vec![(a.clone(), g.mul(&a.recip_sqrt()).scale(0.5))],
            Op::RecipSqrt(a) => {
                let r = a.recip_sqrt();
                vec![(a.clone(), g.mul(&r.mul(&r).mul(&r)).scale(-0.5))]
            }
            Op::Relu(a) => {
                let mask = Tensor::constant(a.map(|x| if x > 0.0 { 1.0 } else { 0.0 }));
                vec![(a.clone(), g.mul(&mask))]
            }
            Op::LeakyRelu(a, slope) => {
                let mask = Tensor::constant(a.map(|x| if x > 0.0 { 1.0 } else { *slope }));
                vec![(a.clone(), g.mul(&mask))]
            }
            Op::Sigmoid(a) => {
                let s = a.sigmoid();
                vec![(a.clone(), g.mul(&s.mul(&s.rsub_scalar(1.0))))]
            }
            Op::Clamp(a, lo, hi) => {
                let mask =
                    Tensor::constant(a.map(|x| if x >= *lo && x <= *hi { 1.0 } else { 0.0 }));
                vec![(a.clone(), g.mul(&mask))]
            }
            Op::SumTo(a) => vec![(a.clone(), g.broadcast_to(a.shape()))],
            Op::BroadcastTo(a) => vec![(a.clone(), g.sum_to(a.shape()))],
            Op::Reshape(a) => vec![(a.clone(), g.reshape(a.shape()))],
            Op::Permute(a, axes) => {
                let mut inv = vec![0; axes.len()];
                for (i, &ax) in axes.iter().enumerate() {
                    inv[ax] = i;
                }
                vec![(a.clone(), g.permute(&inv))]
            }
            Op::Concat(parts, axis) => {
                let mut start = 0;
                parts
                    .iter()
                    .map(|p| {
                        let len = p.shape()[*axis];
                        let gp = g.narrow(*axis, start, len);
                        start += len;
                        (p.clone(), gp)
                    })
                    .collect()
            }
            Op::Narrow(a, axis, start) => {
                vec![(a.clone(), g.pad_axis(*axis, *start, a.shape()[*axis]))]
            }
            Op::Pad(a, axis, before) => {
                vec![(a.clone(), g.narrow(*axis, *before, a.shape()[*axis]))]
            }
            Op::Im2Col(a, geom) => vec![(a.clone(), g.col2im(*geom))],
            Op::Col2Im(a, geom) => vec![(a.clone(), g.im2col(*geom))],
            Op::Bmm(a, b) => {
                let ga = g.bmm(&b.transpose_last()).sum_to(a.shape());
                let gb = a.transpose_last().bmm(g).sum_to(b.shape());
                vec![(a.clone(), ga), (b.clone(), gb)]
            }
        }
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

/// Gradients of `output` (summed if not scalar) with respect to `inputs`.
///
/// Inputs that `output` does not depend on get a zero gradient. With
/// `create_graph` the returned tensors are themselves differentiable.
pub fn grad(output: &Tensor, inputs: &[&Tensor], create_graph: bool) -> Vec<Tensor> {
    let sweep = || {
        let mut nodes: BTreeMap<u64, Tensor> = BTreeMap::new();
        let mut stack = vec![output.clone()];
        while let Some(t) = stack.pop() {
            if !t.0.requires_grad || nodes.contains_key(&t.0.id) {
                continue;
            }
            for inp in t.0.op.inputs() {
                if inp.0.requires_grad && !nodes.contains_key(&inp.0.id) {
                    stack.push(inp.clone());
                }
            }
            nodes.insert(t.0.id, t);
        }

        let mut grads: HashMap<u64, Tensor> = HashMap::new();
        if output.0.requires_grad {
            grads.insert(output.0.id, Tensor::ones(output.shape()));
        }
        // Inputs always carry smaller ids than the ops consuming them.
        for (id, node) in nodes.iter().rev() {
            let Some(g) = grads.get(id).cloned() else {
                continue;
            };
            for (inp, gi) in node.backward_rule(&g) {
                if !inp.0.requires_grad {
                    continue;
                }
                let acc = match grads.remove(&inp.0.id) {
                    Some(prev) => prev.add(&gi),
                    None => gi,
                };
                grads.insert(inp.0.id, acc);
            }
        }
        inputs
            .iter()
            .map(|t| {
                grads
                    .get(&t.0.id)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(t.shape()))
            })
            .collect()
    };
    if create_graph {
        sweep()
    } else {
        no_grad(sweep)
    }
}
