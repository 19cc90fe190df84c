//! Multi-head self-attention whose head maps are fused into one map.
//!
//! The spatial positions of a `[C, H, W]` feature map are read as a
//! sequence of `P = H·W` vectors of width `C`. Each head runs scaled
//! dot-product attention on its `C / heads` slice of the query and key
//! projections. The per-head weight matrices are then fused into a single
//! row-stochastic `P × P` map, which is applied once to the full-width value
//! projection.

use serde::{Deserialize, Serialize};

use super::kernels::{gemm, MatMut, MatRef};
use crate::par::map_ordered;

/// How per-head attention maps are combined before renormalisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadFusion {
    /// Element-wise sum of head maps, rows renormalised to 1. Equivalent to
    /// the head average.
    #[default]
    Sum,
    /// Element-wise maximum over heads, rows renormalised to 1.
    Max,
}

impl HeadFusion {
    pub fn code(self) -> u8 {
        match self {
            HeadFusion::Sum => 0,
            HeadFusion::Max => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(HeadFusion::Sum),
            1 => Some(HeadFusion::Max),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct AttentionGeometry {
    pub channels: usize,
    pub positions: usize,
    pub heads: usize,
    pub fusion: HeadFusion,
}

impl AttentionGeometry {
    fn head_dim(&self) -> usize {
        self.channels / self.heads
    }

    fn scale(&self) -> f64 {
        1.0 / (self.head_dim() as f64).sqrt()
    }
}

/// Activations kept from the forward pass of one sample.
#[derive(Debug, Clone)]
pub(crate) struct AttentionSaved {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    head_maps: Vec<f64>,
    pub fused: Vec<f64>,
    row_sums: Vec<f64>,
    argmax_head: Vec<u8>,
}

fn softmax_rows_in_place(m: &mut [f64], cols: usize) {
    for row in m.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

fn project(x: &[f64], w: &[f64], g: &AttentionGeometry) -> Vec<f64> {
    let (c, p) = (g.channels, g.positions);
    let mut out = vec![0.0; p * c];
    gemm(
        p,
        c,
        c,
        1.0,
        MatRef::transposed(x, p),
        MatRef::transposed(w, c),
        0.0,
        MatMut::row_major(&mut out, c),
    );
    out
}

fn forward_sample(
    x: &[f64],
    wq: &[f64],
    wk: &[f64],
    wv: &[f64],
    g: &AttentionGeometry,
) -> (Vec<f64>, AttentionSaved) {
    let (c, p, d) = (g.channels, g.positions, g.head_dim());
    let q = project(x, wq, g);
    let k = project(x, wk, g);
    let v = project(x, wv, g);

    let mut head_maps = vec![0.0; g.heads * p * p];
    for (h, map) in head_maps.chunks_mut(p * p).enumerate() {
        gemm(
            p,
            d,
            p,
            g.scale(),
            MatRef { data: &q[h * d..], rs: c, cs: 1 },
            MatRef { data: &k[h * d..], rs: 1, cs: c },
            0.0,
            MatMut::row_major(map, p),
        );
        softmax_rows_in_place(map, p);
    }

    let mut fused = vec![0.0; p * p];
    let mut argmax_head = Vec::new();
    match g.fusion {
        HeadFusion::Sum => {
            for map in head_maps.chunks(p * p) {
                fused.iter_mut().zip(map).for_each(|(f, a)| *f += a);
            }
        }
        HeadFusion::Max => {
            argmax_head = vec![0u8; p * p];
            fused.copy_from_slice(&head_maps[..p * p]);
            for (h, map) in head_maps.chunks(p * p).enumerate().skip(1) {
                for ((f, a), arg) in fused.iter_mut().zip(map).zip(argmax_head.iter_mut()) {
                    if *a > *f {
                        *f = *a;
                        *arg = h as u8;
                    }
                }
            }
        }
    }
    let mut row_sums = Vec::with_capacity(p);
    for row in fused.chunks_mut(p) {
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
        row_sums.push(s);
    }

    let mut y = vec![0.0; c * p];
    gemm(
        p,
        p,
        c,
        1.0,
        MatRef::row_major(&fused, p),
        MatRef::row_major(&v, c),
        0.0,
        MatMut::transposed(&mut y, p),
    );
    let saved = AttentionSaved {
        q,
        k,
        v,
        head_maps,
        fused,
        row_sums,
        argmax_head,
    };
    (y, saved)
}

pub(crate) fn forward(
    x: &[f64],
    wq: &[f64],
    wk: &[f64],
    wv: &[f64],
    batch: usize,
    g: &AttentionGeometry,
) -> (Vec<f64>, Vec<AttentionSaved>) {
    let len = g.channels * g.positions;
    let results = map_ordered(batch, |n| {
        forward_sample(&x[n * len..(n + 1) * len], wq, wk, wv, g)
    });
    let mut y = Vec::with_capacity(batch * len);
    let mut saved = Vec::with_capacity(batch);
    for (yn, s) in results {
        y.extend_from_slice(&yn);
        saved.push(s);
    }
    (y, saved)
}

pub(crate) struct AttentionGrads {
    pub dx: Vec<f64>,
    pub dwq: Vec<f64>,
    pub dwk: Vec<f64>,
    pub dwv: Vec<f64>,
}

struct SampleGrads {
    dx: Vec<f64>,
    dwq: Vec<f64>,
    dwk: Vec<f64>,
    dwv: Vec<f64>,
}

fn backward_sample(
    x: &[f64],
    weights: [&[f64]; 3],
    dy: &[f64],
    s: &AttentionSaved,
    g: &AttentionGeometry,
) -> SampleGrads {
    let (c, p, d) = (g.channels, g.positions, g.head_dim());
    let dout = MatRef::transposed(dy, p);

    let mut dfused = vec![0.0; p * p];
    gemm(p, c, p, 1.0, dout, MatRef::transposed(&s.v, c), 0.0, MatMut::row_major(&mut dfused, p));
    let mut dv = vec![0.0; p * c];
    gemm(p, p, c, 1.0, MatRef::transposed(&s.fused, p), dout, 0.0, MatMut::row_major(&mut dv, c));

    // Back through the row renormalisation.
    let mut dsum = dfused;
    for ((drow, frow), r) in dsum.chunks_mut(p).zip(s.fused.chunks(p)).zip(&s.row_sums) {
        let dot: f64 = drow.iter().zip(frow).map(|(a, b)| a * b).sum();
        drow.iter_mut().for_each(|v| *v = (*v - dot) / r);
    }

    let mut dq = vec![0.0; p * c];
    let mut dk = vec![0.0; p * c];
    let mut dscores = vec![0.0; p * p];
    for (h, map) in s.head_maps.chunks(p * p).enumerate() {
        match g.fusion {
            HeadFusion::Sum => dscores.copy_from_slice(&dsum),
            HeadFusion::Max => {
                for ((ds, dm), arg) in dscores.iter_mut().zip(&dsum).zip(&s.argmax_head) {
                    *ds = if *arg as usize == h { *dm } else { 0.0 };
                }
            }
        }
        // Softmax backward, in place.
        for (drow, arow) in dscores.chunks_mut(p).zip(map.chunks(p)) {
            let dot: f64 = drow.iter().zip(arow).map(|(a, b)| a * b).sum();
            drow.iter_mut().zip(arow).for_each(|(v, a)| *v = a * (*v - dot));
        }
        gemm(
            p,
            p,
            d,
            g.scale(),
            MatRef::row_major(&dscores, p),
            MatRef { data: &s.k[h * d..], rs: c, cs: 1 },
            0.0,
            MatMut { data: &mut dq[h * d..], rs: c, cs: 1 },
        );
        gemm(
            p,
            p,
            d,
            g.scale(),
            MatRef::transposed(&dscores, p),
            MatRef { data: &s.q[h * d..], rs: c, cs: 1 },
            0.0,
            MatMut { data: &mut dk[h * d..], rs: c, cs: 1 },
        );
    }

    let xm = MatRef::transposed(x, p);
    let mut dx = vec![0.0; c * p];
    let mut dws: Vec<Vec<f64>> = Vec::with_capacity(3);
    for (i, (dproj, w)) in [&dq, &dk, &dv].into_iter().zip(weights).enumerate() {
        let mut dw = vec![0.0; c * c];
        gemm(c, p, c, 1.0, MatRef::transposed(dproj, c), xm, 0.0, MatMut::row_major(&mut dw, c));
        dws.push(dw);
        gemm(
            p,
            c,
            c,
            1.0,
            MatRef::row_major(dproj, c),
            MatRef::row_major(w, c),
            if i == 0 { 0.0 } else { 1.0 },
            MatMut::transposed(&mut dx, p),
        );
    }
    let dwv = dws.pop().expect("three projections");
    let dwk = dws.pop().expect("three projections");
    let dwq = dws.pop().expect("three projections");
    SampleGrads { dx, dwq, dwk, dwv }
}

pub(crate) fn backward(
    x: &[f64],
    weights: [&[f64]; 3],
    dy: &[f64],
    saved: &[AttentionSaved],
    g: &AttentionGeometry,
) -> AttentionGrads {
    let len = g.channels * g.positions;
    let per_sample = map_ordered(saved.len(), |n| {
        backward_sample(
            &x[n * len..(n + 1) * len],
            weights,
            &dy[n * len..(n + 1) * len],
            &saved[n],
            g,
        )
    });
    let cc = g.channels * g.channels;
    let mut out = AttentionGrads {
        dx: Vec::with_capacity(x.len()),
        dwq: vec![0.0; cc],
        dwk: vec![0.0; cc],
        dwv: vec![0.0; cc],
    };
    for sg in per_sample {
        out.dx.extend_from_slice(&sg.dx);
        for (acc, part) in [
            (&mut out.dwq, &sg.dwq),
            (&mut out.dwk, &sg.dwk),
            (&mut out.dwv, &sg.dwv),
        ] {
            acc.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        }
    }
    out
}
