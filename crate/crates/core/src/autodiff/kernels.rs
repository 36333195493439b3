//! Forward/backward numeric kernels shared by the tape and the eager helpers.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Strided view of a row-major matrix block inside a flat buffer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Mat {
    pub offset: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl Mat {
    pub fn rm(cols: usize) -> Self {
        Self {
            offset: 0,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// Transposed view of a row-major `[rows, cols]` matrix.
    pub fn rm_t(cols: usize) -> Self {
        Self {
            offset: 0,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }

    pub fn at(mut self, offset: usize) -> Self {
        self.offset = offset;
        self
    }

    fn max_index(&self, rows: usize, cols: usize) -> isize {
        self.offset as isize
            + (rows.saturating_sub(1)) as isize * self.row_stride
            + (cols.saturating_sub(1)) as isize * self.col_stride
    }
}

/// `c = alpha * a·b + beta * c` with `a: [m,k]`, `b: [k,n]`, `c: [m,n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    av: Mat,
    b: &[f64],
    bv: Mat,
    beta: f64,
    c: &mut [f64],
    cv: Mat,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(av.max_index(m, k) < a.len() as isize || k == 0);
    assert!(bv.max_index(k, n) < b.len() as isize || k == 0);
    assert!(cv.max_index(m, n) < c.len() as isize);
    assert!(av.row_stride >= 0 && av.col_stride >= 0);
    assert!(bv.row_stride >= 0 && bv.col_stride >= 0);
    assert!(cv.row_stride >= 0 && cv.col_stride >= 0);
    // SAFETY: the asserts above keep every addressed element inside the
    // three slices; `c` is exclusively borrowed so it cannot alias `a`/`b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.offset),
            av.row_stride,
            av.col_stride,
            b.as_ptr().add(bv.offset),
            bv.row_stride,
            bv.col_stride,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.row_stride,
            cv.col_stride,
        );
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

/// `ln(1 + eˣ)` without overflow for large `x`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

/// In-place numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    softmax_in_place(&mut out);
    out
}

/// `log Σ exp(row)`.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Row statistics saved by the layer-norm forward pass.
pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_forward(
    x: &[f64],
    d: usize,
    gain: &[f64],
    bias: &[f64],
) -> (Vec<f64>, LayerNormCache) {
    let rows = x.len() / d;
    let mut out = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std[r] = inv;
        for j in 0..d {
            let h = (xr[j] - mean) * inv;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gain[j] + bias[j];
        }
    }
    (out, LayerNormCache { xhat, inv_std })
}

/// Returns `(dx, dgain, dbias)`.
pub(crate) fn layer_norm_backward(
    g: &[f64],
    d: usize,
    gain: &[f64],
    cache: &LayerNormCache,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let rows = g.len() / d;
    let mut dx = vec![0.0; g.len()];
    let mut dgain = vec![0.0; d];
    let mut dbias = vec![0.0; d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let gr = &g[r * d..(r + 1) * d];
        let hr = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dh = 0.0;
        let mut mean_dh_h = 0.0;
        for j in 0..d {
            dgain[j] += gr[j] * hr[j];
            dbias[j] += gr[j];
            dxhat[j] = gr[j] * gain[j];
            mean_dh += dxhat[j];
            mean_dh_h += dxhat[j] * hr[j];
        }
        mean_dh /= d as f64;
        mean_dh_h /= d as f64;
        let inv = cache.inv_std[r];
        for j in 0..d {
            dx[r * d + j] = inv * (dxhat[j] - mean_dh - hr[j] * mean_dh_h);
        }
    }
    (dx, dgain, dbias)
}

/// Geometry of a fused multi-head attention call over `batch` sequences of
/// `seq` tokens with model width `dim`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct AttnShape {
    pub batch: usize,
    pub seq: usize,
    pub dim: usize,
    pub heads: usize,
}

impl AttnShape {
    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    fn scale(&self) -> f64 {
        1.0 / (self.head_dim() as f64).sqrt()
    }

    fn block(&self, b: usize, h: usize) -> usize {
        b * self.seq * self.dim + h * self.head_dim()
    }

    fn probs_block(&self, b: usize, h: usize) -> usize {
        (b * self.heads + h) * self.seq * self.seq
    }
}

/// Returns `(output, attention probabilities)`; probabilities are laid out
/// `[batch, heads, seq, seq]`.
pub(crate) fn attention_forward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    s: AttnShape,
) -> (Vec<f64>, Vec<f64>) {
    let (t, dh, d) = (s.seq, s.head_dim(), s.dim);
    let mut out = vec![0.0; q.len()];
    let mut probs = vec![0.0; s.batch * s.heads * t * t];
    let qkv = Mat {
        offset: 0,
        row_stride: d as isize,
        col_stride: 1,
    };
    for b in 0..s.batch {
        for h in 0..s.heads {
            let base = s.block(b, h);
            let pb = s.probs_block(b, h);
            let kt = Mat {
                offset: base,
                row_stride: 1,
                col_stride: d as isize,
            };
            gemm(
                t,
                dh,
                t,
                s.scale(),
                q,
                qkv.at(base),
                k,
                kt,
                0.0,
                &mut probs,
                Mat::rm(t).at(pb),
            );
            for r in 0..t {
                softmax_in_place(&mut probs[pb + r * t..pb + (r + 1) * t]);
            }
            gemm(
                t,
                t,
                dh,
                1.0,
                &probs,
                Mat::rm(t).at(pb),
                v,
                qkv.at(base),
                0.0,
                &mut out,
                qkv.at(base),
            );
        }
    }
    (out, probs)
}

/// Returns `(dq, dk, dv)`.
pub(crate) fn attention_backward(
    g: &[f64],
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    s: AttnShape,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (t, dh, d) = (s.seq, s.head_dim(), s.dim);
    let mut dq = vec![0.0; q.len()];
    let mut dk = vec![0.0; k.len()];
    let mut dv = vec![0.0; v.len()];
    let mut dp = vec![0.0; t * t];
    let qkv = Mat {
        offset: 0,
        row_stride: d as isize,
        col_stride: 1,
    };
    for b in 0..s.batch {
        for h in 0..s.heads {
            let base = s.block(b, h);
            let pb = s.probs_block(b, h);
            // dP = dO · Vᵀ
            gemm(
                t,
                dh,
                t,
                1.0,
                g,
                qkv.at(base),
                v,
                Mat {
                    offset: base,
                    row_stride: 1,
                    col_stride: d as isize,
                },
                0.0,
                &mut dp,
                Mat::rm(t),
            );
            // dV = Pᵀ · dO
            gemm(
                t,
                t,
                dh,
                1.0,
                probs,
                Mat::rm_t(t).at(pb),
                g,
                qkv.at(base),
                1.0,
                &mut dv,
                qkv.at(base),
            );
            // dS = P ⊙ (dP − rowsum(dP ⊙ P))
            for r in 0..t {
                let pr = &probs[pb + r * t..pb + (r + 1) * t];
                let dpr = &mut dp[r * t..(r + 1) * t];
                let dot: f64 = pr.iter().zip(dpr.iter()).map(|(p, g)| p * g).sum();
                for (x, p) in dpr.iter_mut().zip(pr) {
                    *x = p * (*x - dot);
                }
            }
            // dQ = dS · K · scale, dK = dSᵀ · Q · scale
            gemm(
                t,
                t,
                dh,
                s.scale(),
                &dp,
                Mat::rm(t),
                k,
                qkv.at(base),
                1.0,
                &mut dq,
                qkv.at(base),
            );
            gemm(
                t,
                t,
                dh,
                s.scale(),
                &dp,
                Mat::rm_t(t),
                q,
                qkv.at(base),
                1.0,
                &mut dk,
                qkv.at(base),
            );
        }
    }
    (dq, dk, dv)
}
