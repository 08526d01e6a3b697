use std::cell::{Cell, Ref, RefCell};

use crate::error::{AutodiffError, Result};
use crate::kernels::{self, ConvGeom};
use crate::params::ParamSet;
use crate::tensor::{split_axis, Tensor};

/// Recorded operation together with the forward context its backward rule needs.
#[derive(Debug)]
pub(crate) enum Op {
    Input,
    Param(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        x: usize,
        k: usize,
        bias: Option<usize>,
        geom: ConvGeom,
    },
    Sobel {
        x: usize,
        c: usize,
        h: usize,
        w: usize,
    },
    MaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
        rows: usize,
        din: usize,
        dout: usize,
    },
    Relu(usize),
    Sigmoid(usize),
    Abs(usize),
    Log1p(usize),
    Softmax {
        x: usize,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Concat {
        parts: Vec<usize>,
        outer: usize,
        inner: usize,
        lens: Vec<usize>,
    },
    Reshape(usize),
    Sum {
        x: usize,
        outer: usize,
        len: usize,
        inner: usize,
    },
    Mean {
        x: usize,
        outer: usize,
        len: usize,
        inner: usize,
    },
    L2NormRows {
        x: usize,
        cols: usize,
    },
    SliceRows {
        x: usize,
        start: usize,
    },
    SliceCols {
        x: usize,
        cols: usize,
        start: usize,
        end: usize,
    },
    Transpose {
        x: usize,
        rows: usize,
        cols: usize,
    },
    RowField {
        x: usize,
        jac: Vec<f64>,
    },
    Bce {
        x: usize,
        label: f64,
        active: bool,
    },
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Per-forward-pass operation record.
///
/// Nodes are appended in execution order, so parents always precede their
/// children; `backward` walks the list once in reverse. The tape also keeps
/// running FLOP and peak-buffer counters for the complexity measurements.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    flops: Cell<u64>,
    peak_numel: Cell<usize>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} {:?})", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// FLOPs recorded so far (see crate docs for the counting convention).
    pub fn flops(&self) -> u64 {
        self.flops.get()
    }

    /// Largest single buffer (in elements) produced by any recorded op.
    pub fn peak_numel(&self) -> usize {
        self.peak_numel.get()
    }

    /// Constant leaf; no gradient flows into it.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Input, false, 0)
    }

    /// Leaf whose gradient is tracked (an input we want `∂loss/∂x` for).
    pub fn var(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Input, true, 0)
    }

    /// Leaf bound to parameter `idx` of `params`.
    pub fn param(&self, params: &ParamSet, idx: usize) -> Var<'_> {
        self.push(params.tensor(idx).clone(), Op::Param(idx), true, 0)
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, requires_grad: bool, flops: u64) -> Var<'_> {
        self.flops.set(self.flops.get() + flops);
        self.peak_numel
            .set(self.peak_numel.get().max(value.numel()));
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn nodes(&self) -> Ref<'_, Vec<Node>> {
        self.nodes.borrow()
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.id].value.shape();
        if nodes[loss.id].value.numel() != 1 {
            return Err(AutodiffError::NonScalarLoss(shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            if !nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let params = nodes
            .iter()
            .enumerate()
            .filter_map(|(id, n)| match n.op {
                Op::Param(p) => Some((p, id)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Gradients produced by one backward sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, usize)>,
}

impl Gradients {
    /// `∂loss/∂v`, or `None` when `v` does not influence the loss.
    pub fn wrt(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Same as [`wrt`](Self::wrt) but zero-filled for untouched nodes.
    pub fn wrt_or_zero(&self, v: Var<'_>) -> Vec<f64> {
        self.wrt(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; v.numel()])
    }

    /// Per-parameter gradients summed over every leaf bound to the same parameter.
    pub fn param_grads(&self, params: &ParamSet) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = (0..params.len())
            .map(|i| vec![0.0; params.tensor(i).numel()])
            .collect();
        for &(p, id) in &self.params {
            if let Some(g) = &self.grads[id] {
                for (o, v) in out[p].iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
        out
    }
}

fn slot<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    nodes: &[Node],
    id: usize,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[id].requires_grad {
        return None;
    }
    let n = nodes[id].value.numel();
    Some(grads[id].get_or_insert_with(|| vec![0.0; n]))
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    let val = |i: usize| nodes[i].value.data();
    match &nodes[id].op {
        Op::Input | Op::Param(_) => {}
        Op::Add(a, b) => {
            for p in [*a, *b] {
                if let Some(d) = slot(grads, nodes, p) {
                    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
                }
            }
        }
        Op::Sub(a, b) => {
            if let Some(d) = slot(grads, nodes, *a) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
            if let Some(d) = slot(grads, nodes, *b) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d -= g);
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            if let Some(d) = slot(grads, nodes, *a) {
                for i in 0..d.len() {
                    d[i] += g[i] * bv[i];
                }
            }
            if let Some(d) = slot(grads, nodes, *b) {
                for i in 0..d.len() {
                    d[i] += g[i] * av[i];
                }
            }
        }
        Op::Scale(a, s) => {
            if let Some(d) = slot(grads, nodes, *a) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g);
            }
        }
        Op::AddScalar(a) | Op::Reshape(a) => {
            if let Some(d) = slot(grads, nodes, *a) {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
            }
        }
        Op::MatMul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            if nodes[*a].requires_grad {
                let bv = val(*b);
                // dA = G · Bᵀ
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        let mut acc = 0.0;
                        for j in 0..n {
                            acc += g[i * n + j] * bv[p * n + j];
                        }
                        da[i * k + p] = acc;
                    }
                }
                let d = slot(grads, nodes, *a).unwrap();
                d.iter_mut().zip(&da).for_each(|(d, v)| *d += v);
            }
            if nodes[*b].requires_grad {
                let av = val(*a);
                // dB = Aᵀ · G
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = av[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += aip * g[i * n + j];
                        }
                    }
                }
                let d = slot(grads, nodes, *b).unwrap();
                d.iter_mut().zip(&db).for_each(|(d, v)| *d += v);
            }
        }
        Op::Conv2d { x, k, bias, geom } => {
            let mut dx = nodes[*x]
                .requires_grad
                .then(|| vec![0.0; nodes[*x].value.numel()]);
            let mut dk = nodes[*k]
                .requires_grad
                .then(|| vec![0.0; nodes[*k].value.numel()]);
            let mut db = bias
                .filter(|b| nodes[*b].requires_grad)
                .map(|b| vec![0.0; nodes[b].value.numel()]);
            kernels::conv2d_backward(
                val(*x),
                val(*k),
                g,
                geom,
                dx.as_deref_mut(),
                dk.as_deref_mut(),
                db.as_deref_mut(),
            );
            for (p, dp) in [(Some(*x), dx), (Some(*k), dk), (*bias, db)] {
                if let (Some(p), Some(dp)) = (p, dp) {
                    let d = slot(grads, nodes, p).unwrap();
                    d.iter_mut().zip(&dp).for_each(|(d, v)| *d += v);
                }
            }
        }
        Op::Sobel { x, c, h, w } => {
            if let Some(d) = slot(grads, nodes, *x) {
                kernels::sobel_backward(g, *c, *h, *w, d);
            }
        }
        Op::MaxPool { x, argmax } => {
            if let Some(d) = slot(grads, nodes, *x) {
                for (gi, &src) in g.iter().zip(argmax) {
                    d[src] += gi;
                }
            }
        }
        Op::Linear {
            x,
            w,
            b,
            rows,
            din,
            dout,
        } => {
            let (rows, din, dout) = (*rows, *din, *dout);
            if nodes[*x].requires_grad {
                let wv = val(*w);
                let mut dx = vec![0.0; rows * din];
                for r in 0..rows {
                    for o in 0..dout {
                        let go = g[r * dout + o];
                        if go == 0.0 {
                            continue;
                        }
                        let wr = &wv[o * din..(o + 1) * din];
                        for (dxi, wi) in dx[r * din..(r + 1) * din].iter_mut().zip(wr) {
                            *dxi += go * wi;
                        }
                    }
                }
                let d = slot(grads, nodes, *x).unwrap();
                d.iter_mut().zip(&dx).for_each(|(d, v)| *d += v);
            }
            if nodes[*w].requires_grad {
                let xv = val(*x);
                let d = slot(grads, nodes, *w).unwrap();
                for r in 0..rows {
                    let xr = &xv[r * din..(r + 1) * din];
                    for o in 0..dout {
                        let go = g[r * dout + o];
                        if go == 0.0 {
                            continue;
                        }
                        for (dw, xi) in d[o * din..(o + 1) * din].iter_mut().zip(xr) {
                            *dw += go * xi;
                        }
                    }
                }
            }
            if let Some(b) = b {
                if let Some(d) = slot(grads, nodes, *b) {
                    for r in 0..rows {
                        for o in 0..dout {
                            d[o] += g[r * dout + o];
                        }
                    }
                }
            }
        }
        Op::Relu(a) => {
            let av = val(*a);
            if let Some(d) = slot(grads, nodes, *a) {
                for i in 0..d.len() {
                    if av[i] > 0.0 {
                        d[i] += g[i];
                    }
                }
            }
        }
        Op::Sigmoid(a) => {
            let y = out.data();
            if let Some(d) = slot(grads, nodes, *a) {
                for i in 0..d.len() {
                    d[i] += g[i] * y[i] * (1.0 - y[i]);
                }
            }
        }
        Op::Abs(a) => {
            let av = val(*a);
            if let Some(d) = slot(grads, nodes, *a) {
                for i in 0..d.len() {
                    let s = if av[i] > 0.0 {
                        1.0
                    } else if av[i] < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    d[i] += g[i] * s;
                }
            }
        }
        Op::Log1p(a) => {
            let av = val(*a);
            if let Some(d) = slot(grads, nodes, *a) {
                for i in 0..d.len() {
                    d[i] += g[i] / (1.0 + av[i]);
                }
            }
        }
        Op::Softmax {
            x,
            outer,
            len,
            inner,
        } => {
            let y = out.data();
            if let Some(d) = slot(grads, nodes, *x) {
                for o in 0..*outer {
                    for j in 0..*inner {
                        let idx = |l: usize| (o * len + l) * inner + j;
                        let dot: f64 = (0..*len).map(|l| g[idx(l)] * y[idx(l)]).sum();
                        for l in 0..*len {
                            d[idx(l)] += y[idx(l)] * (g[idx(l)] - dot);
                        }
                    }
                }
            }
        }
        Op::Concat {
            parts,
            outer,
            inner,
            lens,
        } => {
            let total: usize = lens.iter().sum();
            let mut offset = 0;
            for (&p, &len) in parts.iter().zip(lens) {
                if let Some(d) = slot(grads, nodes, p) {
                    for o in 0..*outer {
                        let src =
                            &g[(o * total + offset) * inner..(o * total + offset + len) * inner];
                        let dst = &mut d[o * len * inner..(o + 1) * len * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
                offset += len;
            }
        }
        Op::Sum {
            x,
            outer,
            len,
            inner,
        }
        | Op::Mean {
            x,
            outer,
            len,
            inner,
        } => {
            let scale = if matches!(nodes[id].op, Op::Mean { .. }) {
                1.0 / *len as f64
            } else {
                1.0
            };
            if let Some(d) = slot(grads, nodes, *x) {
                for o in 0..*outer {
                    for l in 0..*len {
                        for j in 0..*inner {
                            d[(o * len + l) * inner + j] += scale * g[o * inner + j];
                        }
                    }
                }
            }
        }
        Op::L2NormRows { x, cols } => {
            let xv = val(*x);
            let norms = out.data();
            if let Some(d) = slot(grads, nodes, *x) {
                for (r, (&nr, &gr)) in norms.iter().zip(g).enumerate() {
                    if nr > 0.0 {
                        for c in 0..*cols {
                            d[r * cols + c] += gr * xv[r * cols + c] / nr;
                        }
                    }
                }
            }
        }
        Op::SliceRows { x, start } => {
            let cols: usize = nodes[*x].value.shape()[1..].iter().product();
            if let Some(d) = slot(grads, nodes, *x) {
                let dst = &mut d[start * cols..start * cols + g.len()];
                dst.iter_mut().zip(g).for_each(|(d, s)| *d += s);
            }
        }
        Op::SliceCols {
            x,
            cols,
            start,
            end,
        } => {
            let w = end - start;
            if let Some(d) = slot(grads, nodes, *x) {
                for (r, grow) in g.chunks_exact(w).enumerate() {
                    for (c, gv) in grow.iter().enumerate() {
                        d[r * cols + start + c] += gv;
                    }
                }
            }
        }
        Op::Transpose { x, rows, cols } => {
            if let Some(d) = slot(grads, nodes, *x) {
                // g is cols×rows
                for r in 0..*rows {
                    for c in 0..*cols {
                        d[r * cols + c] += g[c * rows + r];
                    }
                }
            }
        }
        Op::RowField { x, jac } => {
            if let Some(d) = slot(grads, nodes, *x) {
                let cols = jac.len() / g.len().max(1);
                for (r, gr) in g.iter().enumerate() {
                    for c in 0..cols {
                        d[r * cols + c] += gr * jac[r * cols + c];
                    }
                }
            }
        }
        Op::Bce { x, label, active } => {
            if *active {
                let mu = val(*x)[0];
                if let Some(d) = slot(grads, nodes, *x) {
                    d[0] += g[0] * (-label / mu + (1.0 - label) / (1.0 - mu));
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes()[self.id].value.numel()
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        self.tape.nodes()[self.id].value.clone()
    }

    /// The single value of a one-element node.
    pub fn item(&self) -> f64 {
        self.tape.nodes()[self.id].value.data()[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes()[self.id].requires_grad
    }

    pub(crate) fn same_tape(&self, other: &Var<'_>) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars recorded on different tapes"
        );
    }
}

pub(crate) fn axis_split(
    op: &'static str,
    shape: &[usize],
    axis: usize,
) -> Result<(usize, usize, usize)> {
    split_axis(op, shape, axis)
}
