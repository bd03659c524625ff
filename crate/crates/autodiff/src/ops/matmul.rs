//! Dense 2D matrix product and friends. Backs every fully connected layer.
//!
//! Backward avoids materializing transposes: dA = G * B^T contracts
//! contiguous rows of G and B directly, dB = A^T * G accumulates row
//! updates. Both parallelize over output rows; single-row products
//! parallelize over column chunks instead.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{BackwardOp, Graph, TensorId};
use crate::real::Real;
use crate::tensor::{Tensor, TensorView};

/// Work threshold below which forking is not worth it.
const PAR_THRESHOLD: usize = 1 << 14;
const COL_CHUNK: usize = 4096;

pub(crate) fn matmul_raw<R: Real>(a: &[R], b: &[R], m: usize, k: usize, n: usize) -> Vec<R> {
    let mut out = vec![R::ZERO; m * n];
    let work = m * n * k;
    if work <= PAR_THRESHOLD {
        for (i, row) in out.chunks_mut(n).enumerate() {
            row_accumulate(&a[i * k..(i + 1) * k], b, n, row);
        }
    } else if m == 1 {
        // One output row: split it into column chunks.
        out.par_chunks_mut(COL_CHUNK)
            .enumerate()
            .for_each(|(ci, chunk)| {
                let start = ci * COL_CHUNK;
                for (p, &av) in a.iter().enumerate() {
                    if av == R::ZERO {
                        continue;
                    }
                    let b_row = &b[p * n + start..p * n + start + chunk.len()];
                    for (slot, &bv) in chunk.iter_mut().zip(b_row) {
                        *slot += av * bv;
                    }
                }
            });
    } else {
        out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            row_accumulate(&a[i * k..(i + 1) * k], b, n, row);
        });
    }
    out
}

#[inline]
fn row_accumulate<R: Real>(a_row: &[R], b: &[R], n: usize, out_row: &mut [R]) {
    for (p, &av) in a_row.iter().enumerate() {
        if av == R::ZERO {
            continue;
        }
        let b_row = &b[p * n..(p + 1) * n];
        for (slot, &bv) in out_row.iter_mut().zip(b_row) {
            *slot += av * bv;
        }
    }
}

/// `A[m,n] * B^T` where `b` is stored `[k, n]`: rows of both operands are
/// contiguous, so each output element is a straight dot product.
fn matmul_bt_raw<R: Real>(a: &[R], b: &[R], m: usize, n: usize, k: usize) -> Vec<R> {
    let mut out = vec![R::ZERO; m * k];
    let body = |(i, row): (usize, &mut [R])| {
        let a_row = &a[i * n..(i + 1) * n];
        for (p, slot) in row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = R::ZERO;
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            *slot = acc;
        }
    };
    if m * n * k > PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(k).enumerate().for_each(body);
    } else if m == 1 && n * k > PAR_THRESHOLD {
        // Chunk the single output row over p.
        out.par_chunks_mut(256).enumerate().for_each(|(ci, chunk)| {
            let start = ci * 256;
            for (off, slot) in chunk.iter_mut().enumerate() {
                let p = start + off;
                let b_row = &b[p * n..(p + 1) * n];
                let mut acc = R::ZERO;
                for (&x, &y) in a.iter().zip(b_row) {
                    acc += x * y;
                }
                *slot = acc;
            }
        });
    } else {
        out.chunks_mut(k).enumerate().for_each(body);
    }
    out
}

/// `A^T * G` where `a` is `[m, k]` and `g` is `[m, n]`: accumulate
/// `dB[p, :] += A[i, p] * G[i, :]`, parallel over the `p` rows.
fn matmul_at_raw<R: Real>(a: &[R], g: &[R], m: usize, k: usize, n: usize) -> Vec<R> {
    let mut out = vec![R::ZERO; k * n];
    let body = |(p, row): (usize, &mut [R])| {
        for i in 0..m {
            let av = a[i * k + p];
            if av == R::ZERO {
                continue;
            }
            let g_row = &g[i * n..(i + 1) * n];
            for (slot, &gv) in row.iter_mut().zip(g_row) {
                *slot += av * gv;
            }
        }
    };
    if m * n * k > PAR_THRESHOLD && k > 1 {
        out.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        out.chunks_mut(n).enumerate().for_each(body);
    }
    out
}

pub(crate) fn transpose_raw<R: Real>(x: &[R], rows: usize, cols: usize) -> Vec<R> {
    let mut out = vec![R::ZERO; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

#[derive(Debug)]
struct MatmulBack {
    m: usize,
    k: usize,
    n: usize,
    has_bias: bool,
}
impl<R: Real> BackwardOp<R> for MatmulBack {
    fn backward(
        &self,
        gout: &[R],
        inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let da = needs[0].then(|| matmul_bt_raw(gout, inputs[1].data, m, n, k));
        let db = needs[1].then(|| matmul_at_raw(inputs[0].data, gout, m, k, n));
        if !self.has_bias {
            return vec![da, db];
        }
        let dbias = needs[2].then(|| {
            let mut acc = vec![R::ZERO; n];
            for row in gout.chunks_exact(n) {
                for (a, &g) in acc.iter_mut().zip(row) {
                    *a += g;
                }
            }
            acc
        });
        vec![da, db, dbias]
    }
}

#[derive(Debug)]
struct Transpose2dBack {
    rows: usize,
    cols: usize,
}
impl<R: Real> BackwardOp<R> for Transpose2dBack {
    fn backward(
        &self,
        gout: &[R],
        _inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        vec![needs[0].then(|| transpose_raw(gout, self.cols, self.rows))]
    }
}

impl<R: Real> Graph<R> {
    /// `a[m×k] · b[k×n] -> [m×n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::dim(
                "matmul",
                format!("expected 2D operands, got {sa:?} and {sb:?}"),
            ));
        }
        let (m, k) = (sa[0], sa[1]);
        let (k2, n) = (sb[0], sb[1]);
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner dims disagree: {sa:?} vs {sb:?}"),
            ));
        }
        let data = matmul_raw(self.data(a), self.data(b), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(
            &[a, b],
            out,
            Box::new(MatmulBack {
                m,
                k,
                n,
                has_bias: false,
            }),
        ))
    }

    /// Fully connected: `x[m×k] · w[k×n] + bias[n]` in one op.
    pub fn linear_mm(&mut self, x: TensorId, w: TensorId, bias: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.shape(x), self.shape(w));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim(
                "linear",
                format!("operands {sa:?} and {sb:?}"),
            ));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        if self.shape(bias) != [n] {
            return Err(Error::shape(
                "linear",
                format!("bias {:?} vs n={n}", self.shape(bias)),
            ));
        }
        let mut data = matmul_raw(self.data(x), self.data(w), m, k, n);
        let bd = self.data(bias);
        for row in data.chunks_exact_mut(n) {
            for (slot, &b) in row.iter_mut().zip(bd) {
                *slot += b;
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(
            &[x, w, bias],
            out,
            Box::new(MatmulBack {
                m,
                k,
                n,
                has_bias: true,
            }),
        ))
    }

    pub fn transpose2d(&mut self, x: TensorId) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dim("transpose2d", format!("got {s:?}")));
        }
        let (rows, cols) = (s[0], s[1]);
        let data = transpose_raw(self.data(x), rows, cols);
        let out = Tensor::new(vec![cols, rows], data)?;
        Ok(self.push(&[x], out, Box::new(Transpose2dBack { rows, cols })))
    }

    /// `x[m×n] + row-broadcast bias[n]`.
    pub fn add_row_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 || self.shape(bias) != [s[1]] {
            return Err(Error::shape(
                "add_row_bias",
                format!("x {:?}, bias {:?}", s, self.shape(bias)),
            ));
        }
        let wide = self.broadcast_to(bias, &s)?;
        self.add(x, wide)
    }
}
