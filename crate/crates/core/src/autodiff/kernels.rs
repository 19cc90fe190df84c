//! Raw numeric kernels behind the graph operations.
//!
//! Everything here works on flat row-major buffers. Per-sample work can be
//! spread over a thread pool, but every reduction across samples happens
//! sequentially in sample order so results do not depend on scheduling.

use crate::par::map_ordered;

/// Strided read-only matrix view: element `(i, j)` lives at `i * rs + j * cs`.
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }
}

pub(crate) struct MatMut<'a> {
    pub data: &'a mut [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> MatMut<'a> {
    pub fn row_major(data: &'a mut [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    pub fn transposed(data: &'a mut [f64], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }
}

fn max_offset(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    (rows - 1) * rs + (cols - 1) * cs
}

/// `c = alpha * a · b + beta * c` with `a: m×k`, `b: k×n`, `c: m×n`.
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: MatRef<'_>,
    b: MatRef<'_>,
    beta: f64,
    c: MatMut<'_>,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(max_offset(m, n, c.rs, c.cs) < c.data.len(), "gemm: c out of bounds");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c.data[i * c.rs + j * c.cs] *= beta;
            }
        }
        return;
    }
    assert!(max_offset(m, k, a.rs, a.cs) < a.data.len(), "gemm: a out of bounds");
    assert!(max_offset(k, n, b.rs, b.cs) < b.data.len(), "gemm: b out of bounds");
    // SAFETY: every index the routine touches is bounded by the offsets
    // checked above, and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr(),
            c.rs as isize,
            c.cs as isize,
        );
    }
}

/// Zero padding around the two spatial axes of a feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn symmetric(ph: usize, pw: usize) -> Self {
        Self {
            top: ph,
            bottom: ph,
            left: pw,
            right: pw,
        }
    }

    /// Padding that preserves spatial size at stride 1. Even kernels put the
    /// extra row/column after the input.
    pub fn same(kh: usize, kw: usize) -> Self {
        Self {
            top: (kh - 1) / 2,
            bottom: kh / 2,
            left: (kw - 1) / 2,
            right: kw / 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: Padding,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    fn patch(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Range of output columns whose input column `ox + kj - left` is in bounds.
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let lo = self.pad.left.saturating_sub(kj);
        let hi = (self.width + self.pad.left)
            .saturating_sub(kj)
            .min(self.out_w);
        (lo, hi.max(lo))
    }

    fn input_row(&self, oy: usize, ki: usize) -> Option<usize> {
        let iy = oy + ki;
        if iy < self.pad.top || iy - self.pad.top >= self.height {
            None
        } else {
            Some(iy - self.pad.top)
        }
    }
}

fn im2col(x: &[f64], g: &ConvGeometry, cols: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.out_h {
                    let out = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    match g.input_row(oy, ki) {
                        None => out.fill(0.0),
                        Some(iy) => {
                            out[..lo].fill(0.0);
                            out[hi..].fill(0.0);
                            if hi > lo {
                                let src0 = iy * g.width + lo + kj - g.pad.left;
                                out[lo..hi].copy_from_slice(&plane[src0..src0 + (hi - lo)]);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], g: &ConvGeometry, dx: &mut [f64]) {
    let p = g.positions();
    for c in 0..g.channels {
        let plane = &mut dx[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = g.valid_cols(kj);
                if hi <= lo {
                    continue;
                }
                for oy in 0..g.out_h {
                    if let Some(iy) = g.input_row(oy, ki) {
                        let dst0 = iy * g.width + lo + kj - g.pad.left;
                        let s = &src[oy * g.out_w + lo..oy * g.out_w + hi];
                        plane[dst0..dst0 + (hi - lo)]
                            .iter_mut()
                            .zip(s)
                            .for_each(|(d, v)| *d += v);
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(
    x: &[f64],
    weight: &[f64],
    bias: &[f64],
    batch: usize,
    g: &ConvGeometry,
) -> Vec<f64> {
    let (patch, p, o) = (g.patch(), g.positions(), g.out_channels);
    let per_sample = map_ordered(batch, |n| {
        let xs = &x[n * g.in_len()..(n + 1) * g.in_len()];
        let mut cols = vec![0.0; patch * p];
        im2col(xs, g, &mut cols);
        let mut out = vec![0.0; o * p];
        for (oc, row) in out.chunks_mut(p).enumerate() {
            row.fill(bias[oc]);
        }
        gemm(
            o,
            patch,
            p,
            1.0,
            MatRef::row_major(weight, patch),
            MatRef::row_major(&cols, p),
            1.0,
            MatMut::row_major(&mut out, p),
        );
        out
    });
    per_sample.concat()
}

pub(crate) struct ConvGrads {
    pub dx: Option<Vec<f64>>,
    pub dweight: Vec<f64>,
    pub dbias: Vec<f64>,
}

pub(crate) fn conv2d_backward(
    x: &[f64],
    weight: &[f64],
    dout: &[f64],
    batch: usize,
    g: &ConvGeometry,
    need_dx: bool,
) -> ConvGrads {
    let (patch, p, o) = (g.patch(), g.positions(), g.out_channels);
    let per_sample = map_ordered(batch, |n| {
        let xs = &x[n * g.in_len()..(n + 1) * g.in_len()];
        let dy = &dout[n * o * p..(n + 1) * o * p];
        let mut cols = vec![0.0; patch * p];
        im2col(xs, g, &mut cols);
        let mut dw = vec![0.0; o * patch];
        gemm(
            o,
            p,
            patch,
            1.0,
            MatRef::row_major(dy, p),
            MatRef::transposed(&cols, p),
            0.0,
            MatMut::row_major(&mut dw, patch),
        );
        let db: Vec<f64> = dy.chunks(p).map(|r| r.iter().sum()).collect();
        let dx = need_dx.then(|| {
            gemm(
                patch,
                o,
                p,
                1.0,
                MatRef::transposed(weight, patch),
                MatRef::row_major(dy, p),
                0.0,
                MatMut::row_major(&mut cols, p),
            );
            let mut dx = vec![0.0; g.in_len()];
            col2im(&cols, g, &mut dx);
            dx
        });
        (dx, dw, db)
    });

    let mut dweight = vec![0.0; o * patch];
    let mut dbias = vec![0.0; o];
    let mut dx = need_dx.then(|| Vec::with_capacity(batch * g.in_len()));
    for (dxn, dw, db) in per_sample {
        dweight.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
        dbias.iter_mut().zip(&db).for_each(|(a, b)| *a += b);
        if let (Some(all), Some(part)) = (dx.as_mut(), dxn) {
            all.extend_from_slice(&part);
        }
    }
    ConvGrads { dx, dweight, dbias }
}

/// 2×2 max pooling with stride 2. Odd trailing rows/columns are padded with
/// −∞, so the output is `ceil(h/2) × ceil(w/2)`. Returns the pooled values
/// and, per output, the flat input index of the window maximum (first in
/// row-major window order on ties).
pub(crate) fn maxpool2_forward(
    x: &[f64],
    planes: usize,
    h: usize,
    w: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for pl in 0..planes {
        let base = pl * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for dy in 0..2 {
                    let iy = 2 * oy + dy;
                    if iy >= h {
                        continue;
                    }
                    for dx in 0..2 {
                        let ix = 2 * ox + dx;
                        if ix >= w {
                            continue;
                        }
                        let idx = base + iy * w + ix;
                        if best_idx == usize::MAX || x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (out, arg)
}
