use std::fmt;

use super::ops::{self, ConvGeom};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Names of the differentiable operations, used for reporting and for fault
/// injection in gradient-check negative controls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Conv2d,
    MaxPool2d,
    Upsample2x,
    Relu,
    Linear,
    ConcatChannels,
    BroadcastSpatial,
    Add,
    Mul,
    Scale,
    Sum,
    MaskedMse,
}

impl OpKind {
    pub const ALL: [OpKind; 12] = [
        OpKind::Conv2d,
        OpKind::MaxPool2d,
        OpKind::Upsample2x,
        OpKind::Relu,
        OpKind::Linear,
        OpKind::ConcatChannels,
        OpKind::BroadcastSpatial,
        OpKind::Add,
        OpKind::Mul,
        OpKind::Scale,
        OpKind::Sum,
        OpKind::MaskedMse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2d => "conv2d",
            OpKind::MaxPool2d => "max_pool2d",
            OpKind::Upsample2x => "upsample_nearest2x",
            OpKind::Relu => "relu",
            OpKind::Linear => "linear",
            OpKind::ConcatChannels => "concat_channels",
            OpKind::BroadcastSpatial => "broadcast_spatial",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::Sum => "sum",
            OpKind::MaskedMse => "masked_mse",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    MaxPool2d {
        x: Var,
        argmax: Vec<u32>,
    },
    Upsample2x {
        x: Var,
    },
    Relu {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Concat {
        xs: Vec<Var>,
    },
    Broadcast {
        v: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Sum {
        x: Var,
    },
    // `diff` holds valid * (pred - gt); `count` the number of valid pixels.
    MaskedMse {
        pred: Var,
        diff: Vec<T>,
        count: T,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Records operations in execution order and replays them in reverse to
/// accumulate gradients into leaf nodes.
///
/// Gradients accumulate: calling [`Tape::backward`] twice without
/// [`Tape::zero_grad`] doubles every leaf gradient.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    fault: Option<OpKind>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            fault: None,
        }
    }

    /// A tape whose backward rule for `kind` is deliberately wrong. Only
    /// useful as a negative control for the gradient checker.
    #[doc(hidden)]
    pub fn with_fault(kind: OpKind) -> Self {
        Tape {
            nodes: Vec::new(),
            fault: Some(kind),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register a leaf that receives gradients.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Register a leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a leaf; `None` before any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, kind: OpKind, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        #[cfg(debug_assertions)]
        if !value.is_finite() && inputs.iter().all(|&v| self.value(v).is_finite()) {
            panic!("{kind} produced a non-finite value from finite inputs");
        }
        #[cfg(not(debug_assertions))]
        let _ = kind;
        let requires_grad = inputs.iter().any(|&v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    /// 2-d cross-correlation with zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, cin, h, wd) = self.value(x).dims4()?;
        let (cout, wcin, kh, kw) = self.value(w).dims4()?;
        if wcin != cin {
            return Err(Error::Contract(format!(
                "conv2d: input has {cin} channels but kernel expects {wcin}"
            )));
        }
        if self.value(b).shape() != [cout] {
            return Err(Error::Contract(format!(
                "conv2d: bias shape {:?} does not match {cout} output channels",
                self.value(b).shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Geometry("conv2d: stride must be at least 1".into()));
        }
        if kh > h + 2 * pad || kw > wd + 2 * pad {
            return Err(Error::Geometry(format!(
                "conv2d: kernel {kh}x{kw} exceeds padded input {}x{}",
                h + 2 * pad,
                wd + 2 * pad
            )));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        let geom = ConvGeom {
            n,
            cin,
            h,
            w: wd,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        };
        let out = ops::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let value = Tensor::new(vec![n, cout, ho, wo], out)?;
        Ok(self.push_op(
            OpKind::Conv2d,
            value,
            Op::Conv2d { x, w, b, geom },
            &[x, w, b],
        ))
    }

    pub fn max_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let dims @ (n, c, h, w) = self.value(x).dims4()?;
        if k == 0 || h % k != 0 || w % k != 0 {
            return Err(Error::Geometry(format!(
                "max_pool2d: {h}x{w} is not divisible by window {k}"
            )));
        }
        let (out, argmax) = ops::max_pool_forward(dims, k, self.value(x).data());
        let value = Tensor::new(vec![n, c, h / k, w / k], out)?;
        Ok(self.push_op(OpKind::MaxPool2d, value, Op::MaxPool2d { x, argmax }, &[x]))
    }

    pub fn upsample_nearest2x(&mut self, x: Var) -> Result<Var> {
        let dims @ (n, c, h, w) = self.value(x).dims4()?;
        let out = ops::upsample2x_forward(dims, self.value(x).data());
        let value = Tensor::new(vec![n, c, 2 * h, 2 * w], out)?;
        Ok(self.push_op(OpKind::Upsample2x, value, Op::Upsample2x { x }, &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.push_op(OpKind::Relu, value, Op::Relu { x }, &[x])
    }

    /// `y = x w^T + b` for `x: [N, Din]`, `w: [Dout, Din]`, `b: [Dout]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (n, din) = self.value(x).dims2()?;
        let (dout, wdin) = self.value(w).dims2()?;
        if wdin != din || self.value(b).shape() != [dout] {
            return Err(Error::Contract(format!(
                "linear: x {:?}, w {:?}, b {:?} are incompatible",
                self.value(x).shape(),
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let bias = self.value(b).data();
        let mut out: Vec<T> = (0..n).flat_map(|_| bias.iter().copied()).collect();
        T::gemm(
            n,
            din,
            dout,
            T::one(),
            self.value(x).data(),
            din as isize,
            1,
            self.value(w).data(),
            1,
            din as isize,
            T::one(),
            &mut out,
            dout as isize,
            1,
        );
        let value = Tensor::new(vec![n, dout], out)?;
        Ok(self.push_op(OpKind::Linear, value, Op::Linear { x, w, b }, &[x, w, b]))
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::Contract("concat_channels: no inputs".into()));
        };
        let (n, _, h, w) = self.value(first).dims4()?;
        let mut total = 0;
        for &v in xs {
            let (vn, vc, vh, vw) = self.value(v).dims4()?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::Contract(format!(
                    "concat_channels: {:?} does not align with {:?}",
                    self.value(v).shape(),
                    self.value(first).shape()
                )));
            }
            total += vc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for &v in xs {
                let c = self.value(v).shape()[1];
                out.extend_from_slice(&self.value(v).data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let value = Tensor::new(vec![n, total, h, w], out)?;
        Ok(self.push_op(
            OpKind::ConcatChannels,
            value,
            Op::Concat { xs: xs.to_vec() },
            xs,
        ))
    }

    /// Replicate `[N, C]` features over an `h x w` grid.
    pub fn broadcast_spatial(&mut self, v: Var, h: usize, w: usize) -> Result<Var> {
        let (n, c) = self.value(v).dims2()?;
        if h == 0 || w == 0 {
            return Err(Error::Geometry("broadcast_spatial: empty grid".into()));
        }
        let src = self.value(v).data();
        let mut out = Vec::with_capacity(n * c * h * w);
        for &s in src {
            out.extend(std::iter::repeat_n(s, h * w));
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        Ok(self.push_op(OpKind::BroadcastSpatial, value, Op::Broadcast { v }, &[v]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push_op(OpKind::Add, value, Op::Add { a, b }, &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        Ok(self.push_op(OpKind::Mul, value, Op::Mul { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push_op(OpKind::Scale, value, Op::Scale { x, factor }, &[x])
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push_op(OpKind::Sum, value, Op::Sum { x }, &[x])
    }

    /// `sum(valid * (pred - gt)^2) / sum(valid)`, differentiable in `pred`.
    ///
    /// `valid` is a 0/1 map with the shape of `pred`; masked pixels carry
    /// exactly zero gradient.
    pub fn masked_mse(&mut self, pred: Var, gt: &Tensor<T>, valid: &Tensor<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != gt.shape() || p.shape() != valid.shape() {
            return Err(Error::Contract(format!(
                "masked_mse: pred {:?}, gt {:?}, valid {:?} disagree",
                p.shape(),
                gt.shape(),
                valid.shape()
            )));
        }
        let mut count = T::zero();
        let mut diff = Vec::with_capacity(p.len());
        for ((&pv, &gv), &m) in p.data().iter().zip(gt.data()).zip(valid.data()) {
            if m > T::zero() {
                count = count + T::one();
                diff.push(pv - gv);
            } else {
                diff.push(T::zero());
            }
        }
        if count == T::zero() {
            return Err(Error::AllMasked);
        }
        let sse: T = diff.iter().map(|&d| d * d).sum();
        let value = Tensor::scalar(sse / count);
        Ok(self.push_op(
            OpKind::MaskedMse,
            value,
            Op::MaskedMse { pred, diff, count },
            &[pred],
        ))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Contract(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    /// Propagate d(loss)/d(node) back to every leaf that requires gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward: loss must be a scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<T>>> = Vec::new();
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(acc) => {
                        for (a, d) in acc.data_mut().iter_mut().zip(&g) {
                            *a = *a + *d;
                        }
                    }
                    None => {
                        node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                    }
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let fault = self.fault;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut dx = self.wants(*x, adj);
                let mut dw = self.wants(*w, adj);
                let mut db = self.wants(*b, adj);
                ops::conv2d_backward(
                    geom,
                    xv,
                    wv,
                    g,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if fault == Some(OpKind::Conv2d) {
                    if let Some(dw) = dw.as_deref_mut() {
                        for v in dw.iter_mut() {
                            *v = *v * T::from_f64_lossy(1.01);
                        }
                    }
                }
                restore(adj, *x, dx);
                restore(adj, *w, dw);
                restore(adj, *b, db);
            }
            Op::MaxPool2d { x, argmax } => {
                if let Some(mut dx) = self.wants(*x, adj) {
                    for (&src, &d) in argmax.iter().zip(g) {
                        dx[src as usize] = dx[src as usize] + d;
                    }
                    restore(adj, *x, Some(dx));
                }
            }
            Op::Upsample2x { x } => {
                if let Some(mut dx) = self.wants(*x, adj) {
                    let dims = self.value(*x).dims4().expect("recorded as 4-d");
                    ops::upsample2x_backward(dims, g, &mut dx);
                    restore(adj, *x, Some(dx));
                }
            }
            Op::Relu { x } => {
                if let Some(mut dx) = self.wants(*x, adj) {
                    for ((d, &xv), &gv) in dx.iter_mut().zip(self.value(*x).data()).zip(g) {
                        if xv > T::zero() {
                            *d = *d + gv;
                        }
                    }
                    restore(adj, *x, Some(dx));
                }
            }
            Op::Linear { x, w, b } => {
                let (n, din) = self.value(*x).dims2().expect("recorded as 2-d");
                let dout = self.value(*b).len();
                if let Some(mut dx) = self.wants(*x, adj) {
                    // dX[N x Din] += dY[N x Dout] * W[Dout x Din]
                    T::gemm(
                        n,
                        dout,
                        din,
                        T::one(),
                        g,
                        dout as isize,
                        1,
                        self.value(*w).data(),
                        din as isize,
                        1,
                        T::one(),
                        &mut dx,
                        din as isize,
                        1,
                    );
                    restore(adj, *x, Some(dx));
                }
                if let Some(mut dw) = self.wants(*w, adj) {
                    // dW[Dout x Din] += dY^T[Dout x N] * X[N x Din]
                    T::gemm(
                        dout,
                        n,
                        din,
                        T::one(),
                        g,
                        1,
                        dout as isize,
                        self.value(*x).data(),
                        din as isize,
                        1,
                        T::one(),
                        &mut dw,
                        din as isize,
                        1,
                    );
                    restore(adj, *w, Some(dw));
                }
                if let Some(mut db) = self.wants(*b, adj) {
                    for row in g.chunks_exact(dout) {
                        for (d, &gv) in db.iter_mut().zip(row) {
                            *d = *d + gv;
                        }
                    }
                    restore(adj, *b, Some(db));
                }
            }
            Op::Concat { xs } => {
                let (n, total, h, w) = node.value.dims4().expect("recorded as 4-d");
                let plane = h * w;
                let mut offset = 0;
                for &v in xs {
                    let c = self.value(v).shape()[1];
                    if let Some(mut dv) = self.wants(v, adj) {
                        for b in 0..n {
                            let src =
                                &g[(b * total + offset) * plane..(b * total + offset + c) * plane];
                            let dst = &mut dv[b * c * plane..(b + 1) * c * plane];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d = *d + s;
                            }
                        }
                        restore(adj, v, Some(dv));
                    }
                    offset += c;
                }
            }
            Op::Broadcast { v } => {
                if let Some(mut dv) = self.wants(*v, adj) {
                    let (_, _, h, w) = node.value.dims4().expect("recorded as 4-d");
                    for (d, block) in dv.iter_mut().zip(g.chunks_exact(h * w)) {
                        *d = *d + block.iter().copied().sum::<T>();
                    }
                    restore(adj, *v, Some(dv));
                }
            }
            Op::Add { a, b } => {
                for v in [*a, *b] {
                    if let Some(mut dv) = self.wants(v, adj) {
                        for (d, &gv) in dv.iter_mut().zip(g) {
                            *d = *d + gv;
                        }
                        restore(adj, v, Some(dv));
                    }
                }
            }
            Op::Mul { a, b } => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if let Some(mut dv) = self.wants(v, adj) {
                        for ((d, &gv), &o) in dv.iter_mut().zip(g).zip(self.value(other).data()) {
                            *d = *d + gv * o;
                        }
                        restore(adj, v, Some(dv));
                    }
                }
            }
            Op::Scale { x, factor } => {
                if let Some(mut dx) = self.wants(*x, adj) {
                    for (d, &gv) in dx.iter_mut().zip(g) {
                        *d = *d + gv * *factor;
                    }
                    restore(adj, *x, Some(dx));
                }
            }
            Op::Sum { x } => {
                if let Some(mut dx) = self.wants(*x, adj) {
                    for d in dx.iter_mut() {
                        *d = *d + g[0];
                    }
                    restore(adj, *x, Some(dx));
                }
            }
            Op::MaskedMse { pred, diff, count } => {
                if let Some(mut dp) = self.wants(*pred, adj) {
                    let two = T::one() + T::one();
                    let k = g[0] * two / *count;
                    for (d, &r) in dp.iter_mut().zip(diff) {
                        *d = *d + k * r;
                    }
                    restore(adj, *pred, Some(dp));
                }
            }
        }
    }

    // Takes the adjoint buffer for `v` out of `adj` (allocating zeros on
    // first touch) when `v` participates in differentiation.
    fn wants(&self, v: Var, adj: &mut [Option<Vec<T>>]) -> Option<Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(
            adj[v.0]
                .take()
                .unwrap_or_else(|| vec![T::zero(); self.nodes[v.0].value.len()]),
        )
    }
}

fn restore<T>(adj: &mut [Option<Vec<T>>], v: Var, buf: Option<Vec<T>>) {
    if buf.is_some() {
        adj[v.0] = buf;
    }
}
