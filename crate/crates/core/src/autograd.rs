//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] is built fresh for every forward pass. Each differentiable
//! operation appends one node; node inputs always have smaller indices, so
//! the tape is topologically ordered by construction and [`Tape::backward`]
//! is a single reverse sweep.

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    /// Multiplication by a constant scalar operand.
    Scale,
}

/// Right-hand side of an elementwise operation.
#[derive(Clone, Copy, Debug)]
pub enum Operand<T> {
    Var(Var),
    Scalar(T),
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    Scale(Var, T),
    MatMul(Var, Var),
    Sum(Var),
    Relu(Var),
    Reshape(Var),
    PadReplicate {
        x: Var,
        pad: usize,
    },
    Conv2d {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    Spp {
        x: Var,
        argmax: Vec<usize>,
    },
    Linear {
        x: Var,
        weight: Var,
        bias: Option<Var>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        label: usize,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf. Its `requires_grad` and `param_id` come from the tensor.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    /// Records a constant leaf (never receives a gradient).
    pub fn constant(&mut self, tensor: Tensor<T>) -> Var {
        self.push(tensor.with_requires_grad(false), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if it has received one.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad()
    }

    /// Leaf gradients keyed by parameter id, in tape order.
    pub fn param_grads(&self) -> Vec<(usize, &[T])> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Leaf))
            .filter_map(|n| Some((n.value.param_id()?, n.value.grad()?)))
            .collect()
    }

    /// Clears all leaf gradients on this tape.
    pub fn zero_grads(&mut self) {
        for n in self.nodes.iter_mut().filter(|n| matches!(n.op, Op::Leaf)) {
            if n.value.grad().is_some() {
                n.value.zero_grad();
            }
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data).expect("same shape")
    }

    pub fn elementwise(&mut self, kind: ElementwiseOp, a: Var, b: Operand<T>) -> Result<Var> {
        match (kind, b) {
            (ElementwiseOp::Add, Operand::Var(b)) => self.add(a, b),
            (ElementwiseOp::Sub, Operand::Var(b)) => self.sub(a, b),
            (ElementwiseOp::Mul, Operand::Var(b)) => self.mul(a, b),
            (ElementwiseOp::Add, Operand::Scalar(c)) => Ok(self.add_scalar(a, c)),
            (ElementwiseOp::Sub, Operand::Scalar(c)) => Ok(self.add_scalar(a, -c)),
            (ElementwiseOp::Mul | ElementwiseOp::Scale, Operand::Scalar(c)) => Ok(self.scale(a, c)),
            (ElementwiseOp::Scale, Operand::Var(_)) => {
                Err(Error::InvalidArgument("scale takes a scalar operand".into()))
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x + c);
        let rg = self.needs(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let out = self.value(a).map(|x| x * c);
        let rg = self.needs(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    left: sa.to_vec(),
                    right: sb.to_vec(),
                })
            }
        };
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            T::zero(),
            &mut out,
            (n, 1),
        );
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.needs(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let rg = self.needs(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.value(a).len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.shape(a).to_vec(),
                right: shape,
            });
        }
        let out = Tensor::new(shape, self.value(a).data().to_vec())?;
        let rg = self.needs(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Pads a `[C,H,W]` tensor by repeating its edge values `pad` times.
    pub fn pad_replicate(&mut self, x: Var, pad: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(c * ph * pw);
        for ch in 0..c {
            for y in 0..ph {
                let sy = y.saturating_sub(pad).min(h - 1);
                let row = &src[(ch * h + sy) * w..(ch * h + sy + 1) * w];
                for xx in 0..pw {
                    out.push(row[xx.saturating_sub(pad).min(w - 1)]);
                }
            }
        }
        let rg = self.needs(x);
        Ok(self.push(Tensor::new(vec![c, ph, pw], out)?, Op::PadReplicate { x, pad }, rg))
    }

    /// Cross-correlation of a `[C,H,W]` input with `[O,C,kh,kw]` weights.
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        let (o, kh, kw) = match self.shape(weight) {
            &[o, wc, kh, kw] if wc == c => (o, kh, kw),
            other => {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    left: vec![c, h, w],
                    right: other.to_vec(),
                })
            }
        };
        if let Some(b) = bias {
            if self.shape(b) != [o] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    left: vec![o],
                    right: self.shape(b).to_vec(),
                });
            }
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be positive".into()));
        }
        let geom = ConvGeom::new((c, h, w), (o, kh, kw), stride, pad).ok_or(Error::InputTooSmall {
            op: "conv2d",
            height: h,
            width: w,
            min_height: kh.saturating_sub(2 * pad).max(1),
            min_width: kw.saturating_sub(2 * pad).max(1),
        })?;
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let rg = self.needs(x) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        let value = Tensor::new(vec![o, geom.out_h, geom.out_w], out)?;
        Ok(self.push(value, Op::Conv2d { x, weight, bias, geom }, rg))
    }

    pub fn maxpool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if kernel == 0 || stride == 0 {
            return Err(Error::InvalidArgument("pool kernel and stride must be positive".into()));
        }
        if h < kernel || w < kernel {
            return Err(Error::InputTooSmall {
                op: "maxpool2d",
                height: h,
                width: w,
                min_height: kernel,
                min_width: kernel,
            });
        }
        let (out, argmax, (oh, ow)) = kernels::maxpool2d_forward(self.value(x).data(), (c, h, w), kernel, stride);
        let rg = self.needs(x);
        Ok(self.push(Tensor::new(vec![c, oh, ow], out)?, Op::MaxPool { x, argmax }, rg))
    }

    /// Spatial pyramid max pooling to a flat `[C·Σs²]` vector.
    pub fn spp(&mut self, x: Var, scales: &[usize]) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if scales.is_empty() || scales.contains(&0) {
            return Err(Error::InvalidArgument(format!("invalid SPP scales {scales:?}")));
        }
        let max_scale = *scales.iter().max().expect("nonempty");
        if h < max_scale || w < max_scale {
            return Err(Error::InputTooSmall {
                op: "spp",
                height: h,
                width: w,
                min_height: max_scale,
                min_width: max_scale,
            });
        }
        let (out, argmax) = kernels::spp_forward(self.value(x).data(), (c, h, w), scales);
        let rg = self.needs(x);
        let len = out.len();
        Ok(self.push(Tensor::new(vec![len], out)?, Op::Spp { x, argmax }, rg))
    }

    /// `W·x + b` with `x` flattened to `[d]` and `W` of shape `[k, d]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let d = self.value(x).len();
        let k = match self.shape(weight) {
            &[k, wd] if wd == d => k,
            other => {
                return Err(Error::ShapeMismatch {
                    op: "linear",
                    left: vec![d],
                    right: other.to_vec(),
                })
            }
        };
        if let Some(b) = bias {
            if self.shape(b) != [k] {
                return Err(Error::ShapeMismatch {
                    op: "linear bias",
                    left: vec![k],
                    right: self.shape(b).to_vec(),
                });
            }
        }
        let mut out = match bias {
            Some(b) => self.value(b).data().to_vec(),
            None => vec![T::zero(); k],
        };
        T::gemm(
            k,
            d,
            1,
            T::one(),
            self.value(weight).data(),
            (d, 1),
            self.value(x).data(),
            (1, 1),
            T::one(),
            &mut out,
            (1, 1),
        );
        let rg = self.needs(x) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(Tensor::new(vec![k], out)?, Op::Linear { x, weight, bias }, rg))
    }

    /// Per-example cross-entropy `-ln softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits).data();
        if label >= z.len() {
            return Err(Error::LabelOutOfRange {
                label,
                classes: z.len(),
            });
        }
        let loss = kernels::cross_entropy(z, label);
        let probs = kernels::softmax(z);
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy { logits, label, probs },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Leaf gradients accumulate across
    /// calls until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_shape = self.shape(loss);
        if numel(loss_shape) != 1 {
            return Err(Error::NotScalar(loss_shape.to_vec()));
        }
        let mut adj: Vec<Option<Vec<T>>> = Vec::with_capacity(loss.0 + 1);
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.nodes[i].value.accumulate_grad(&g)?;
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        macro_rules! with_slot {
            ($v:expr, |$buf:ident| $body:expr) => {
                if nodes[$v.0].requires_grad {
                    let len = nodes[$v.0].value.len();
                    let $buf: &mut Vec<T> = adj[$v.0].get_or_insert_with(|| vec![T::zero(); len]);
                    $body;
                }
            };
        }
        let val = |v: Var| nodes[v.0].value.data();

        match &nodes[i].op {
            Op::Leaf => unreachable!("leaves handled by caller"),
            Op::Add(a, b) => {
                with_slot!(*a, |buf| add_into(buf, g));
                with_slot!(*b, |buf| add_into(buf, g));
            }
            Op::Sub(a, b) => {
                with_slot!(*a, |buf| add_into(buf, g));
                with_slot!(*b, |buf| buf.iter_mut().zip(g).for_each(|(s, &d)| *s -= d));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                with_slot!(*a, |buf| buf
                    .iter_mut()
                    .zip(g.iter().zip(vb))
                    .for_each(|(s, (&d, &y))| *s += d * y));
                with_slot!(*b, |buf| buf
                    .iter_mut()
                    .zip(g.iter().zip(va))
                    .for_each(|(s, (&d, &x))| *s += d * x));
            }
            Op::AddScalar(a) => with_slot!(*a, |buf| add_into(buf, g)),
            Op::Scale(a, c) => {
                let c = *c;
                with_slot!(*a, |buf| buf.iter_mut().zip(g).for_each(|(s, &d)| *s += d * c));
            }
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.shape()[0], nodes[a.0].value.shape()[1]);
                let n = nodes[b.0].value.shape()[1];
                let (va, vb) = (val(*a), val(*b));
                // dA = G·Bᵀ
                with_slot!(*a, |buf| T::gemm(
                    m,
                    n,
                    k,
                    T::one(),
                    g,
                    (n, 1),
                    vb,
                    (1, n),
                    T::one(),
                    buf,
                    (k, 1)
                ));
                // dB = Aᵀ·G
                with_slot!(*b, |buf| T::gemm(
                    k,
                    m,
                    n,
                    T::one(),
                    va,
                    (1, k),
                    g,
                    (n, 1),
                    T::one(),
                    buf,
                    (n, 1)
                ));
            }
            Op::Sum(a) => {
                let d = g[0];
                with_slot!(*a, |buf| buf.iter_mut().for_each(|s| *s += d));
            }
            Op::Relu(a) => {
                let va = val(*a);
                with_slot!(*a, |buf| buf.iter_mut().zip(g.iter().zip(va)).for_each(
                    |(s, (&d, &x))| if x > T::zero() {
                        *s += d
                    }
                ));
            }
            Op::Reshape(a) => with_slot!(*a, |buf| add_into(buf, g)),
            Op::PadReplicate { x, pad } => {
                let shape = nodes[x.0].value.shape();
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (ph, pw) = (h + 2 * pad, w + 2 * pad);
                with_slot!(*x, |buf| for ch in 0..c {
                    for y in 0..ph {
                        let sy = y.saturating_sub(*pad).min(h - 1);
                        for xx in 0..pw {
                            let sx = xx.saturating_sub(*pad).min(w - 1);
                            buf[(ch * h + sy) * w + sx] += g[(ch * ph + y) * pw + xx];
                        }
                    }
                });
            }
            Op::Conv2d { x, weight, bias, geom } => {
                let (vx, vw) = (val(*x), val(*weight));
                // Split borrows: inputs have distinct indices below `i`.
                let mut dx = take_slot(nodes, adj, *x);
                let mut dw = take_slot(nodes, adj, *weight);
                let mut db = bias.and_then(|b| take_slot(nodes, adj, b));
                kernels::conv2d_backward(geom, vx, vw, g, dx.as_deref_mut(), dw.as_deref_mut(), db.as_deref_mut());
                restore_slot(adj, *x, dx);
                restore_slot(adj, *weight, dw);
                if let Some(b) = bias {
                    restore_slot(adj, *b, db);
                }
            }
            Op::MaxPool { x, argmax } | Op::Spp { x, argmax } => {
                with_slot!(*x, |buf| kernels::scatter_argmax(g, argmax, buf));
            }
            Op::Linear { x, weight, bias } => {
                let d = nodes[x.0].value.len();
                let k = g.len();
                let (vx, vw) = (val(*x), val(*weight));
                // dx = Wᵀ·g
                with_slot!(*x, |buf| T::gemm(
                    d,
                    k,
                    1,
                    T::one(),
                    vw,
                    (1, d),
                    g,
                    (1, 1),
                    T::one(),
                    buf,
                    (1, 1)
                ));
                // dW = g·xᵀ
                with_slot!(*weight, |buf| T::gemm(
                    k,
                    1,
                    d,
                    T::one(),
                    g,
                    (1, 1),
                    vx,
                    (1, 1),
                    T::one(),
                    buf,
                    (d, 1)
                ));
                if let Some(b) = bias {
                    with_slot!(*b, |buf| add_into(buf, g));
                }
            }
            Op::SoftmaxCrossEntropy { logits, label, probs } => {
                let d = g[0];
                let label = *label;
                with_slot!(
                    *logits,
                    |buf| for (j, (s, &p)) in buf.iter_mut().zip(probs).enumerate() {
                        let target = if j == label { T::one() } else { T::zero() };
                        *s += d * (p - target);
                    }
                );
            }
        }
    }
}

fn add_into<T: Scalar>(buf: &mut [T], g: &[T]) {
    buf.iter_mut().zip(g).for_each(|(s, &d)| *s += d);
}

fn take_slot<T: Scalar>(nodes: &[Node<T>], adj: &mut [Option<Vec<T>>], v: Var) -> Option<Vec<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(
        adj[v.0]
            .take()
            .unwrap_or_else(|| vec![T::zero(); nodes[v.0].value.len()]),
    )
}

fn restore_slot<T>(adj: &mut [Option<Vec<T>>], v: Var, buf: Option<Vec<T>>) {
    if buf.is_some() {
        adj[v.0] = buf;
    }
}
