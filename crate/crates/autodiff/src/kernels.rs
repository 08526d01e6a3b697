//! Raw array kernels behind the tape operators. Everything here works on
//! flat row-major slices; shape checking happens in the caller.

/// Horizontal Sobel kernel. The vertical kernel is its transpose.
pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> Option<(usize, usize)> {
        let hp = self.h + 2 * self.pad;
        let wp = self.w + 2 * self.pad;
        if self.stride == 0 || hp < self.kh || wp < self.kw {
            return None;
        }
        Some((
            (hp - self.kh) / self.stride + 1,
            (wp - self.kw) / self.stride + 1,
        ))
    }

    /// Output indices along one axis whose input tap `o*stride + k - pad` is in `[0, len)`.
    fn valid_range(&self, k: usize, len: usize, out_len: usize) -> std::ops::Range<usize> {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        // smallest o with o*s + off >= 0
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        // largest o with o*s + off <= len - 1
        let hi_num = len as isize - 1 - off;
        if hi_num < 0 {
            return 0..0;
        }
        let hi = (hi_num / s + 1).min(out_len as isize);
        (lo.min(hi)) as usize..hi as usize
    }
}

pub fn conv2d_forward(x: &[f64], k: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = g.out_hw().expect("validated geometry");
    let mut out = vec![0.0; g.cout * ho * wo];
    for co in 0..g.cout {
        let plane = &mut out[co * ho * wo..(co + 1) * ho * wo];
        if let Some(b) = bias {
            plane.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..g.cin {
            let xin = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let rows = g.valid_range(ky, g.h, ho);
                for kx in 0..g.kw {
                    let wv = k[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let cols = g.valid_range(kx, g.w, wo);
                    for oy in rows.clone() {
                        let iy = oy * g.stride + ky - g.pad;
                        let orow = &mut plane[oy * wo..(oy + 1) * wo];
                        let irow = &xin[iy * g.w..(iy + 1) * g.w];
                        for ox in cols.clone() {
                            orow[ox] += wv * irow[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates input, kernel and bias gradients of a conv2d.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward(
    x: &[f64],
    k: &[f64],
    dout: &[f64],
    g: &ConvGeom,
    mut dx: Option<&mut [f64]>,
    mut dk: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let (ho, wo) = g.out_hw().expect("validated geometry");
    if let Some(db) = db {
        for co in 0..g.cout {
            db[co] += dout[co * ho * wo..(co + 1) * ho * wo].iter().sum::<f64>();
        }
    }
    for co in 0..g.cout {
        let dplane = &dout[co * ho * wo..(co + 1) * ho * wo];
        for ci in 0..g.cin {
            let base = ci * g.h * g.w;
            for ky in 0..g.kh {
                let rows = g.valid_range(ky, g.h, ho);
                for kx in 0..g.kw {
                    let kidx = ((co * g.cin + ci) * g.kh + ky) * g.kw + kx;
                    let wv = k[kidx];
                    let cols = g.valid_range(kx, g.w, wo);
                    let mut acc = 0.0;
                    for oy in rows.clone() {
                        let iy = oy * g.stride + ky - g.pad;
                        let drow = &dplane[oy * wo..(oy + 1) * wo];
                        let ioff = base + iy * g.w;
                        for ox in cols.clone() {
                            let ix = ox * g.stride + kx - g.pad;
                            let d = drow[ox];
                            acc += d * x[ioff + ix];
                            if let Some(dx) = dx.as_deref_mut() {
                                dx[ioff + ix] += wv * d;
                            }
                        }
                    }
                    if let Some(dk) = dk.as_deref_mut() {
                        dk[kidx] += acc;
                    }
                }
            }
        }
    }
}

fn sobel_taps(vertical: bool) -> [[f64; 3]; 3] {
    let mut t = SOBEL_X;
    if vertical {
        for (r, row) in t.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v = SOBEL_X[c][r];
            }
        }
    }
    t
}

#[inline]
fn clamp_idx(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Sobel responses with replicated borders. Output channel `2c` is the
/// horizontal response of input channel `c`, `2c + 1` the vertical one.
pub fn sobel_forward(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; 2 * c * h * w];
    for ch in 0..c {
        let xin = &x[ch * h * w..(ch + 1) * h * w];
        for (dir, taps) in [sobel_taps(false), sobel_taps(true)].iter().enumerate() {
            let plane = &mut out[(2 * ch + dir) * h * w..(2 * ch + dir + 1) * h * w];
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = 0.0;
                    for (ky, trow) in taps.iter().enumerate() {
                        let sy = clamp_idx(y as isize + ky as isize - 1, h);
                        for (kx, &t) in trow.iter().enumerate() {
                            if t != 0.0 {
                                let sx = clamp_idx(xx as isize + kx as isize - 1, w);
                                acc += t * xin[sy * w + sx];
                            }
                        }
                    }
                    plane[y * w + xx] = acc;
                }
            }
        }
    }
    out
}

pub fn sobel_backward(dout: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    for ch in 0..c {
        for (dir, taps) in [sobel_taps(false), sobel_taps(true)].iter().enumerate() {
            let dplane = &dout[(2 * ch + dir) * h * w..(2 * ch + dir + 1) * h * w];
            let dxin = &mut dx[ch * h * w..(ch + 1) * h * w];
            for y in 0..h {
                for xx in 0..w {
                    let d = dplane[y * w + xx];
                    if d == 0.0 {
                        continue;
                    }
                    for (ky, trow) in taps.iter().enumerate() {
                        let sy = clamp_idx(y as isize + ky as isize - 1, h);
                        for (kx, &t) in trow.iter().enumerate() {
                            if t != 0.0 {
                                let sx = clamp_idx(xx as isize + kx as isize - 1, w);
                                dxin[sy * w + sx] += t * d;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Non-overlapping max pooling; returns values and the flat input index of
/// each maximum (first one wins on ties).
pub fn maxpool_forward(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    win: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (ho, wo) = (h / win, w / win);
    let mut out = Vec::with_capacity(c * ho * wo);
    let mut arg = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for dy in 0..win {
                    for dx in 0..win {
                        let i = ch * h * w + (oy * win + dy) * w + ox * win + dx;
                        if x[i] > best || (dy == 0 && dx == 0) {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

/// `a (m×k) · b (k×n)`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `y = x · wᵀ + b` for `x: rows×in`, `w: out×in`.
pub fn linear_forward(
    x: &[f64],
    w: &[f64],
    b: Option<&[f64]>,
    rows: usize,
    din: usize,
    dout: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; rows * dout];
    for r in 0..rows {
        let xr = &x[r * din..(r + 1) * din];
        for o in 0..dout {
            let wr = &w[o * din..(o + 1) * din];
            let mut acc = b.map_or(0.0, |b| b[o]);
            for (a, c) in xr.iter().zip(wr) {
                acc += a * c;
            }
            out[r * dout + o] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_bruteforce() {
        for (len, k, pad, stride) in [
            (5, 3, 1, 1),
            (6, 3, 1, 2),
            (7, 5, 2, 2),
            (4, 1, 0, 1),
            (5, 3, 0, 2),
        ] {
            let g = ConvGeom {
                cin: 1,
                h: len,
                w: len,
                cout: 1,
                kh: k,
                kw: k,
                stride,
                pad,
            };
            let (out_len, _) = g.out_hw().unwrap();
            for kk in 0..k {
                let expect: Vec<usize> = (0..out_len)
                    .filter(|&o| {
                        let i = (o * stride + kk) as isize - pad as isize;
                        i >= 0 && i < len as isize
                    })
                    .collect();
                let got: Vec<usize> = g.valid_range(kk, len, out_len).collect();
                assert_eq!(
                    got, expect,
                    "len={len} k={k} pad={pad} stride={stride} kk={kk}"
                );
            }
        }
    }

    #[test]
    fn sobel_vertical_kernel_is_transpose() {
        let v = sobel_taps(true);
        assert_eq!(v, [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]]);
    }
}
