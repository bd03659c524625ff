//! Reductions, gathers, concatenation and slicing.

use crate::error::{Error, Result};
use crate::graph::{BackwardOp, Graph, TensorId};
use crate::real::Real;
use crate::tensor::{Tensor, TensorView};

#[derive(Debug)]
struct SumAllBack;
impl<R: Real> BackwardOp<R> for SumAllBack {
    fn backward(
        &self,
        gout: &[R],
        inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        vec![needs[0].then(|| vec![gout[0]; inputs[0].numel()])]
    }
}

#[derive(Debug)]
struct MeanAllBack;
impl<R: Real> BackwardOp<R> for MeanAllBack {
    fn backward(
        &self,
        gout: &[R],
        inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        let n = inputs[0].numel();
        let g = gout[0] / R::from_f64(n as f64);
        vec![needs[0].then(|| vec![g; n])]
    }
}

/// Max over groups of `k` consecutive rows; gradient routes to the argmax row
/// (first occurrence on ties).
#[derive(Debug)]
struct MaxPoolRowsBack {
    argmax: Vec<u32>,
    in_rows: usize,
    cols: usize,
}
impl<R: Real> BackwardOp<R> for MaxPoolRowsBack {
    fn backward(
        &self,
        gout: &[R],
        _inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        vec![needs[0].then(|| {
            let mut dx = vec![R::ZERO; self.in_rows * self.cols];
            for (slot, &src_row) in self.argmax.iter().enumerate() {
                let (out_row, col) = (slot / self.cols, slot % self.cols);
                let _ = out_row;
                dx[src_row as usize * self.cols + col] += gout[slot];
            }
            dx
        })]
    }
}

#[derive(Debug)]
struct GatherRowsBack {
    indices: Vec<u32>,
    in_rows: usize,
    cols: usize,
}
impl<R: Real> BackwardOp<R> for GatherRowsBack {
    fn backward(
        &self,
        gout: &[R],
        _inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        vec![needs[0].then(|| {
            let mut dx = vec![R::ZERO; self.in_rows * self.cols];
            for (m, &row) in self.indices.iter().enumerate() {
                let src = &gout[m * self.cols..(m + 1) * self.cols];
                let dst = &mut dx[row as usize * self.cols..(row as usize + 1) * self.cols];
                for (d, &g) in dst.iter_mut().zip(src) {
                    *d += g;
                }
            }
            dx
        })]
    }
}

/// Column gather out of a `[C, S]` map, emitted transposed as `[M, C]`.
#[derive(Debug)]
struct GatherColsTBack {
    indices: Vec<u32>,
    c: usize,
    s: usize,
}
impl<R: Real> BackwardOp<R> for GatherColsTBack {
    fn backward(
        &self,
        gout: &[R],
        _inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        vec![needs[0].then(|| {
            let mut dx = vec![R::ZERO; self.c * self.s];
            for (m, &col) in self.indices.iter().enumerate() {
                for ci in 0..self.c {
                    dx[ci * self.s + col as usize] += gout[m * self.c + ci];
                }
            }
            dx
        })]
    }
}

#[derive(Debug)]
struct ConcatColsBack {
    widths: Vec<usize>,
    rows: usize,
}
impl<R: Real> BackwardOp<R> for ConcatColsBack {
    fn backward(
        &self,
        gout: &[R],
        _inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        let total: usize = self.widths.iter().sum();
        let mut offsets = Vec::with_capacity(self.widths.len());
        let mut acc = 0;
        for &w in &self.widths {
            offsets.push(acc);
            acc += w;
        }
        self.widths
            .iter()
            .zip(&offsets)
            .zip(needs)
            .map(|((&w, &off), &need)| {
                need.then(|| {
                    let mut dx = vec![R::ZERO; self.rows * w];
                    for r in 0..self.rows {
                        dx[r * w..(r + 1) * w]
                            .copy_from_slice(&gout[r * total + off..r * total + off + w]);
                    }
                    dx
                })
            })
            .collect()
    }
}

#[derive(Debug)]
struct ConcatRowsBack {
    row_counts: Vec<usize>,
    cols: usize,
}
impl<R: Real> BackwardOp<R> for ConcatRowsBack {
    fn backward(
        &self,
        gout: &[R],
        _inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        let mut off = 0usize;
        self.row_counts
            .iter()
            .zip(needs)
            .map(|(&rows, &need)| {
                let slice = &gout[off * self.cols..(off + rows) * self.cols];
                off += rows;
                need.then(|| slice.to_vec())
            })
            .collect()
    }
}

#[derive(Debug)]
struct NarrowColsBack {
    start: usize,
    len: usize,
    rows: usize,
    cols: usize,
}
impl<R: Real> BackwardOp<R> for NarrowColsBack {
    fn backward(
        &self,
        gout: &[R],
        _inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        vec![needs[0].then(|| {
            let mut dx = vec![R::ZERO; self.rows * self.cols];
            for r in 0..self.rows {
                dx[r * self.cols + self.start..r * self.cols + self.start + self.len]
                    .copy_from_slice(&gout[r * self.len..(r + 1) * self.len]);
            }
            dx
        })]
    }
}

impl<R: Real> Graph<R> {
    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let s: R = self.data(x).iter().copied().sum();
        self.push(&[x], Tensor::scalar(s), Box::new(SumAllBack))
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let n = R::from_f64(self.data(x).len() as f64);
        let s: R = self.data(x).iter().copied().sum();
        self.push(&[x], Tensor::scalar(s / n), Box::new(MeanAllBack))
    }

    /// `x[(m*k) x C] -> [m x C]`, max over each consecutive group of `k` rows.
    pub fn max_pool_rows(&mut self, x: TensorId, k: usize) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 2 || k == 0 || s[0] % k != 0 {
            return Err(Error::dim(
                "max_pool_rows",
                format!("shape {s:?} not divisible into groups of {k}"),
            ));
        }
        let (rows, cols) = (s[0], s[1]);
        let m = rows / k;
        let xd = self.data(x);
        let mut out = vec![R::ZERO; m * cols];
        let mut argmax = vec![0u32; m * cols];
        for g in 0..m {
            let first = g * k;
            for c in 0..cols {
                let mut best = xd[first * cols + c];
                let mut best_row = first;
                for r in first + 1..first + k {
                    let v = xd[r * cols + c];
                    if v > best {
                        best = v;
                        best_row = r;
                    }
                }
                out[g * cols + c] = best;
                argmax[g * cols + c] = best_row as u32;
            }
        }
        let out_t = Tensor::new(vec![m, cols], out)?;
        Ok(self.push(
            &[x],
            out_t,
            Box::new(MaxPoolRowsBack {
                argmax,
                in_rows: rows,
                cols,
            }),
        ))
    }

    /// Row select: `x[N x C], idx[M] -> [M x C]`. Backward scatter-adds.
    pub fn gather_rows(&mut self, x: TensorId, indices: &[u32]) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dim("gather_rows", format!("expected 2D, got {s:?}")));
        }
        let (rows, cols) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= rows) {
            return Err(Error::dim(
                "gather_rows",
                format!("index {bad} out of range for {rows} rows"),
            ));
        }
        let xd = self.data(x);
        let mut out = vec![R::ZERO; indices.len() * cols];
        for (m, &row) in indices.iter().enumerate() {
            out[m * cols..(m + 1) * cols]
                .copy_from_slice(&xd[row as usize * cols..(row as usize + 1) * cols]);
        }
        let out_t = Tensor::new(vec![indices.len(), cols], out)?;
        Ok(self.push(
            &[x],
            out_t,
            Box::new(GatherRowsBack {
                indices: indices.to_vec(),
                in_rows: rows,
                cols,
            }),
        ))
    }

    /// Spatial gather out of `x[C, S]` (a flattened feature map): returns
    /// `[M, C]`, row i = x[:, idx[i]].
    pub fn gather_cols_t(&mut self, x: TensorId, indices: &[u32]) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dim("gather_cols_t", format!("expected 2D, got {s:?}")));
        }
        let (c, spatial) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i as usize >= spatial) {
            return Err(Error::dim(
                "gather_cols_t",
                format!("index {bad} out of range for {spatial} columns"),
            ));
        }
        let xd = self.data(x);
        let mut out = vec![R::ZERO; indices.len() * c];
        for (m, &col) in indices.iter().enumerate() {
            for ci in 0..c {
                out[m * c + ci] = xd[ci * spatial + col as usize];
            }
        }
        let out_t = Tensor::new(vec![indices.len(), c], out)?;
        Ok(self.push(
            &[x],
            out_t,
            Box::new(GatherColsTBack {
                indices: indices.to_vec(),
                c,
                s: spatial,
            }),
        ))
    }

    /// Column-wise concat of 2D tensors with equal row counts.
    pub fn concat_cols(&mut self, xs: &[TensorId]) -> Result<TensorId> {
        if xs.is_empty() {
            return Err(Error::dim("concat_cols", "no inputs"));
        }
        let rows = self.shape(xs[0])[0];
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != 2 || s[0] != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!("row mismatch: {:?} vs {} rows", s, rows),
                ));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![R::ZERO; rows * total];
        let mut off = 0;
        for (&x, &w) in xs.iter().zip(&widths) {
            let xd = self.data(x);
            for r in 0..rows {
                out[r * total + off..r * total + off + w]
                    .copy_from_slice(&xd[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let out_t = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(xs, out_t, Box::new(ConcatColsBack { widths, rows })))
    }

    /// Row-wise concat of 2D tensors with equal column counts.
    pub fn concat_rows(&mut self, xs: &[TensorId]) -> Result<TensorId> {
        if xs.is_empty() {
            return Err(Error::dim("concat_rows", "no inputs"));
        }
        let cols = self.shape(xs[0])[1];
        let mut row_counts = Vec::with_capacity(xs.len());
        let mut data = Vec::new();
        for &x in xs {
            let s = self.shape(x);
            if s.len() != 2 || s[1] != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column mismatch: {:?} vs {} cols", s, cols),
                ));
            }
            row_counts.push(s[0]);
            data.extend_from_slice(self.data(x));
        }
        let rows: usize = row_counts.iter().sum();
        let out = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(xs, out, Box::new(ConcatRowsBack { row_counts, cols })))
    }

    /// Column slice `x[:, start..start+len]`.
    pub fn narrow_cols(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let s = self.shape(x);
        if s.len() != 2 || start + len > s[1] {
            return Err(Error::dim(
                "narrow_cols",
                format!("slice {start}..{} of {s:?}", start + len),
            ));
        }
        let (rows, cols) = (s[0], s[1]);
        let xd = self.data(x);
        let mut out = vec![R::ZERO; rows * len];
        for r in 0..rows {
            out[r * len..(r + 1) * len]
                .copy_from_slice(&xd[r * cols + start..r * cols + start + len]);
        }
        let out_t = Tensor::new(vec![rows, len], out)?;
        Ok(self.push(
            &[x],
            out_t,
            Box::new(NarrowColsBack {
                start,
                len,
                rows,
                cols,
            }),
        ))
    }
}
