//! Forward operators. Each records one node on the tape of its inputs.

use crate::error::{invalid, mismatch, Result};
use crate::kernels::{self, ConvGeom};
use crate::tape::{axis_split, Op, Var};
use crate::tensor::Tensor;

impl<'t> Var<'t> {
    fn unary(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let n = &nodes[self.id];
            let data = n.value.data().iter().map(|&v| f(v)).collect();
            (Tensor::new(n.value.shape(), data).unwrap(), n.requires_grad)
        };
        let flops = value.numel() as u64;
        self.tape.push(value, op, rg, flops)
    }

    fn binary(
        &self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            if a.value.shape() != b.value.shape() {
                return Err(mismatch(name, a.value.shape(), b.value.shape()));
            }
            let data = a
                .value
                .data()
                .iter()
                .zip(b.value.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            (
                Tensor::new(a.value.shape(), data).unwrap(),
                a.requires_grad || b.requires_grad,
            )
        };
        let flops = value.numel() as u64;
        Ok(self.tape.push(value, op, rg, flops))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    /// Elementwise product.
    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, s), |v| v * s)
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t> {
        self.unary(Op::AddScalar(self.id), |v| v + c)
    }

    pub fn relu(&self) -> Var<'t> {
        self.unary(Op::Relu(self.id), |v| v.max(0.0))
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.unary(Op::Sigmoid(self.id), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn abs(&self) -> Var<'t> {
        self.unary(Op::Abs(self.id), f64::abs)
    }

    pub fn log1p(&self) -> Var<'t> {
        self.unary(Op::Log1p(self.id), f64::ln_1p)
    }

    pub fn square(&self) -> Var<'t> {
        self.mul(*self).expect("same shape")
    }

    /// `self (m×k) · other (k×n)`.
    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other);
        let (value, rg, m, k, n) = {
            let nodes = self.tape.nodes();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let (sa, sb) = (a.value.shape(), b.value.shape());
            if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                return Err(mismatch("matmul", sa, sb));
            }
            let (m, k, n) = (sa[0], sa[1], sb[1]);
            let data = kernels::matmul(a.value.data(), b.value.data(), m, k, n);
            (
                Tensor::new([m, n], data).unwrap(),
                a.requires_grad || b.requires_grad,
                m,
                k,
                n,
            )
        };
        let op = Op::MatMul {
            a: self.id,
            b: other.id,
            m,
            k,
            n,
        };
        Ok(self.tape.push(value, op, rg, 2 * (m * k * n) as u64))
    }

    /// Cross-correlation of `self: [Cin, H, W]` with `kernel: [Cout, Cin, kh, kw]`,
    /// zero padding.
    pub fn conv2d(
        &self,
        kernel: Var<'t>,
        bias: Option<Var<'t>>,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t>> {
        self.same_tape(&kernel);
        let (value, rg, geom) = {
            let nodes = self.tape.nodes();
            let (x, k) = (&nodes[self.id], &nodes[kernel.id]);
            let (sx, sk) = (x.value.shape(), k.value.shape());
            if sx.len() != 3 || sk.len() != 4 || sx[0] != sk[1] {
                return Err(mismatch("conv2d", sx, sk));
            }
            let geom = ConvGeom {
                cin: sx[0],
                h: sx[1],
                w: sx[2],
                cout: sk[0],
                kh: sk[2],
                kw: sk[3],
                stride,
                pad,
            };
            let Some((ho, wo)) = geom.out_hw() else {
                return Err(invalid(
                    "conv2d",
                    format!(
                        "kernel {sk:?} does not fit input {sx:?} with pad {pad}, stride {stride}"
                    ),
                ));
            };
            let mut rg = x.requires_grad || k.requires_grad;
            let bias_data = match bias {
                Some(b) => {
                    let bn = &nodes[b.id];
                    if bn.value.shape() != [geom.cout] {
                        return Err(mismatch("conv2d bias", bn.value.shape(), &[geom.cout]));
                    }
                    rg |= bn.requires_grad;
                    Some(bn.value.data())
                }
                None => None,
            };
            let data = kernels::conv2d_forward(x.value.data(), k.value.data(), bias_data, &geom);
            (Tensor::new([geom.cout, ho, wo], data).unwrap(), rg, geom)
        };
        let flops = (value.numel() * 2 * geom.kh * geom.kw * geom.cin) as u64;
        let op = Op::Conv2d {
            x: self.id,
            k: kernel.id,
            bias: bias.map(|b| b.id),
            geom,
        };
        Ok(self.tape.push(value, op, rg, flops))
    }

    /// Fixed 3×3 Sobel filtering of `[C, H, W]` into `[2C, H, W]`
    /// (horizontal then vertical response per input channel). Borders are
    /// replicated so a constant field has an all-zero response.
    pub fn sobel_conv2d(&self) -> Result<Var<'t>> {
        let (value, rg, c, h, w) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let s = x.value.shape();
            if s.len() != 3 {
                return Err(invalid(
                    "sobel_conv2d",
                    format!("expected [C, H, W], got {s:?}"),
                ));
            }
            let (c, h, w) = (s[0], s[1], s[2]);
            let data = kernels::sobel_forward(x.value.data(), c, h, w);
            (
                Tensor::new([2 * c, h, w], data).unwrap(),
                x.requires_grad,
                c,
                h,
                w,
            )
        };
        // six non-zero taps per output element
        let flops = (value.numel() * 2 * 6) as u64;
        Ok(self.tape.push(
            value,
            Op::Sobel {
                x: self.id,
                c,
                h,
                w,
            },
            rg,
            flops,
        ))
    }

    /// Non-overlapping `window × window` max pooling of `[C, H, W]`.
    pub fn maxpool2d(&self, window: usize) -> Result<Var<'t>> {
        let (value, rg, argmax) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let s = x.value.shape();
            if s.len() != 3 || window == 0 || s[1] < window || s[2] < window {
                return Err(invalid(
                    "maxpool2d",
                    format!("window {window} on shape {s:?}"),
                ));
            }
            let (data, argmax) = kernels::maxpool_forward(x.value.data(), s[0], s[1], s[2], window);
            (
                Tensor::new([s[0], s[1] / window, s[2] / window], data).unwrap(),
                x.requires_grad,
                argmax,
            )
        };
        let flops = (value.numel() * window * window) as u64;
        Ok(self
            .tape
            .push(value, Op::MaxPool { x: self.id, argmax }, rg, flops))
    }

    /// `x · Wᵀ + b` for `x: [in]` or `[N, in]`, `W: [out, in]`, `b: [out]`.
    pub fn linear(&self, weight: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
        self.same_tape(&weight);
        let (value, rg, rows, din, dout) = {
            let nodes = self.tape.nodes();
            let (x, w) = (&nodes[self.id], &nodes[weight.id]);
            let (sx, sw) = (x.value.shape(), w.value.shape());
            let (rows, din) = match sx {
                [d] => (1, *d),
                [n, d] => (*n, *d),
                _ => return Err(mismatch("linear", sx, sw)),
            };
            if sw.len() != 2 || sw[1] != din {
                return Err(mismatch("linear", sx, sw));
            }
            let dout = sw[0];
            let mut rg = x.requires_grad || w.requires_grad;
            let bdata = match bias {
                Some(b) => {
                    let bn = &nodes[b.id];
                    if bn.value.shape() != [dout] {
                        return Err(mismatch("linear bias", bn.value.shape(), &[dout]));
                    }
                    rg |= bn.requires_grad;
                    Some(bn.value.data())
                }
                None => None,
            };
            let data =
                kernels::linear_forward(x.value.data(), w.value.data(), bdata, rows, din, dout);
            let shape = if sx.len() == 1 {
                vec![dout]
            } else {
                vec![rows, dout]
            };
            (Tensor::new(shape, data).unwrap(), rg, rows, din, dout)
        };
        let op = Op::Linear {
            x: self.id,
            w: weight.id,
            b: bias.map(|b| b.id),
            rows,
            din,
            dout,
        };
        Ok(self
            .tape
            .push(value, op, rg, (2 * rows * din * dout) as u64))
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let (value, rg, outer, len, inner) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let (outer, len, inner) = axis_split("softmax", x.value.shape(), axis)?;
            if len == 0 {
                return Err(invalid("softmax", "zero-length axis"));
            }
            let xv = x.value.data();
            let mut out = vec![0.0; xv.len()];
            for o in 0..outer {
                for j in 0..inner {
                    let idx = |l: usize| (o * len + l) * inner + j;
                    let max = (0..len)
                        .map(|l| xv[idx(l)])
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for l in 0..len {
                        let e = (xv[idx(l)] - max).exp();
                        out[idx(l)] = e;
                        sum += e;
                    }
                    for l in 0..len {
                        out[idx(l)] /= sum;
                    }
                }
            }
            (
                Tensor::new(x.value.shape(), out).unwrap(),
                x.requires_grad,
                outer,
                len,
                inner,
            )
        };
        let flops = 3 * value.numel() as u64;
        let op = Op::Softmax {
            x: self.id,
            outer,
            len,
            inner,
        };
        Ok(self.tape.push(value, op, rg, flops))
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            (x.value.clone().reshape(shape)?, x.requires_grad)
        };
        Ok(self.tape.push(value, Op::Reshape(self.id), rg, 0))
    }

    fn reduce(&self, axis: Option<usize>, mean: bool) -> Result<Var<'t>> {
        let name = if mean { "mean" } else { "sum" };
        let (value, rg, outer, len, inner) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let s = x.value.shape();
            let (outer, len, inner, out_shape) = match axis {
                None => (1, x.value.numel(), 1, Vec::new()),
                Some(a) => {
                    let (o, l, i) = axis_split(name, s, a)?;
                    let mut os = s.to_vec();
                    os.remove(a);
                    (o, l, i, os)
                }
            };
            if len == 0 && mean {
                return Err(invalid(name, "zero-length axis"));
            }
            let xv = x.value.data();
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    for j in 0..inner {
                        out[o * inner + j] += xv[(o * len + l) * inner + j];
                    }
                }
            }
            if mean {
                out.iter_mut().for_each(|v| *v /= len as f64);
            }
            (
                Tensor::new(out_shape, out).unwrap(),
                x.requires_grad,
                outer,
                len,
                inner,
            )
        };
        let flops = (outer * len * inner) as u64;
        let op = if mean {
            Op::Mean {
                x: self.id,
                outer,
                len,
                inner,
            }
        } else {
            Op::Sum {
                x: self.id,
                outer,
                len,
                inner,
            }
        };
        Ok(self.tape.push(value, op, rg, flops))
    }

    /// Mean over `axis`, or over every element when `None`.
    pub fn mean(&self, axis: Option<usize>) -> Result<Var<'t>> {
        self.reduce(axis, true)
    }

    pub fn sum(&self, axis: Option<usize>) -> Result<Var<'t>> {
        self.reduce(axis, false)
    }

    /// Euclidean norm of each row of `[N, D]` → `[N]`. The gradient at a
    /// zero row is taken as zero.
    pub fn l2norm_rows(&self) -> Result<Var<'t>> {
        let (value, rg, cols) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let s = x.value.shape();
            if s.len() != 2 {
                return Err(invalid(
                    "l2norm_rows",
                    format!("expected rank 2, got {s:?}"),
                ));
            }
            let data = x
                .value
                .data()
                .chunks_exact(s[1].max(1))
                .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect::<Vec<_>>();
            let data = if s[1] == 0 { vec![0.0; s[0]] } else { data };
            (Tensor::new([s[0]], data).unwrap(), x.requires_grad, s[1])
        };
        let flops = (2 * value.numel() * cols) as u64;
        Ok(self
            .tape
            .push(value, Op::L2NormRows { x: self.id, cols }, rg, flops))
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let (value, rg) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let s = x.value.shape();
            if s.is_empty() || start > end || end > s[0] {
                return Err(invalid(
                    "slice_rows",
                    format!("range {start}..{end} on shape {s:?}"),
                ));
            }
            let cols: usize = s[1..].iter().product();
            let mut shape = s.to_vec();
            shape[0] = end - start;
            let data = x.value.data()[start * cols..end * cols].to_vec();
            (Tensor::new(shape, data).unwrap(), x.requires_grad)
        };
        Ok(self
            .tape
            .push(value, Op::SliceRows { x: self.id, start }, rg, 0))
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'t>> {
        let (value, rg, cols) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let s = x.value.shape();
            if s.len() != 2 || start >= end || end > s[1] {
                return Err(invalid(
                    "slice_cols",
                    format!("range {start}..{end} on shape {s:?}"),
                ));
            }
            let data = x
                .value
                .data()
                .chunks_exact(s[1])
                .flat_map(|r| r[start..end].iter().copied())
                .collect();
            (
                Tensor::new([s[0], end - start], data).unwrap(),
                x.requires_grad,
                s[1],
            )
        };
        let op = Op::SliceCols {
            x: self.id,
            cols,
            start,
            end,
        };
        Ok(self.tape.push(value, op, rg, 0))
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Var<'t>> {
        let (value, rg, rows, cols) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let s = x.value.shape();
            if s.len() != 2 {
                return Err(invalid("transpose", format!("expected rank 2, got {s:?}")));
            }
            (x.value.transpose()?, x.requires_grad, s[0], s[1])
        };
        let op = Op::Transpose {
            x: self.id,
            rows,
            cols,
        };
        Ok(self.tape.push(value, op, rg, 0))
    }

    /// Applies a scalar field to every row of `[N, D]`. `field` returns the
    /// value and its gradient with respect to the row; the result is `[N]`.
    pub fn row_field<F>(&self, mut field: F) -> Result<Var<'t>>
    where
        F: FnMut(&[f64]) -> (f64, Vec<f64>),
    {
        let (value, rg, jac) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            let s = x.value.shape();
            if s.len() != 2 {
                return Err(invalid("row_field", format!("expected rank 2, got {s:?}")));
            }
            let mut vals = Vec::with_capacity(s[0]);
            let mut jac = Vec::with_capacity(x.value.numel());
            for row in x.value.data().chunks_exact(s[1]) {
                let (v, g) = field(row);
                if g.len() != s[1] {
                    return Err(mismatch("row_field", &[g.len()], &[s[1]]));
                }
                vals.push(v);
                jac.extend(g);
            }
            (Tensor::new([s[0]], vals).unwrap(), x.requires_grad, jac)
        };
        let flops = value.numel() as u64;
        Ok(self
            .tape
            .push(value, Op::RowField { x: self.id, jac }, rg, flops))
    }

    /// Binary cross-entropy of a probability against a fixed label. The
    /// probability is clamped to `[1e-7, 1 - 1e-7]` before the logarithm.
    pub fn bce(&self, label: f64) -> Result<Var<'t>> {
        const EPS: f64 = 1e-7;
        let (value, rg, active) = {
            let nodes = self.tape.nodes();
            let x = &nodes[self.id];
            if x.value.numel() != 1 {
                return Err(invalid(
                    "bce",
                    format!("expected one probability, got {:?}", x.value.shape()),
                ));
            }
            let raw = x.value.data()[0];
            let mu = raw.clamp(EPS, 1.0 - EPS);
            let loss = -(label * mu.ln() + (1.0 - label) * (1.0 - mu).ln());
            (Tensor::scalar(loss), x.requires_grad, mu == raw)
        };
        let op = Op::Bce {
            x: self.id,
            label,
            active,
        };
        Ok(self.tape.push(value, op, rg, 4))
    }
}

/// Concatenates tensors along `axis`; all other extents must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let Some(first) = parts.first() else {
        return Err(invalid("concat", "no inputs"));
    };
    let tape = first.tape;
    let (value, rg, outer, inner, lens) = {
        let nodes = tape.nodes();
        let s0 = nodes[first.id].value.shape().to_vec();
        let (outer, _, inner) = axis_split("concat", &s0, axis)?;
        let mut lens = Vec::with_capacity(parts.len());
        let mut rg = false;
        for p in parts {
            first.same_tape(p);
            let s = nodes[p.id].value.shape();
            if s.len() != s0.len()
                || s.iter()
                    .zip(&s0)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(mismatch("concat", &s0, s));
            }
            lens.push(s[axis]);
            rg |= nodes[p.id].requires_grad;
        }
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                let src = nodes[p.id].value.data();
                data.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = s0;
        shape[axis] = total;
        (Tensor::new(shape, data).unwrap(), rg, outer, inner, lens)
    };
    let op = Op::Concat {
        parts: parts.iter().map(|p| p.id).collect(),
        outer,
        inner,
        lens,
    };
    Ok(tape.push(value, op, rg, 0))
}
