//! Direct 2D convolution and transposed convolution, NCHW layout.
//!
//! Output sizing is strict: `(H + 2*pad - kh) / stride` must divide exactly,
//! otherwise the call fails with a dimension error. Stride-2 stages therefore
//! use even kernels (4x4) on even inputs.
//!
//! Kernels are organized as shifted-row accumulations: the innermost loops
//! run over contiguous output/input rows for one (channel, kernel-tap) pair,
//! which the compiler vectorizes.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{BackwardOp, Graph, TensorId};
use crate::real::Real;
use crate::tensor::{Tensor, TensorView};

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
}

fn out_dim(op: &'static str, input: usize, k: usize, spec: ConvSpec) -> Result<usize> {
    let padded = input + 2 * spec.pad;
    if k > padded {
        return Err(Error::dim(
            op,
            format!("kernel {k} exceeds padded extent {padded}"),
        ));
    }
    let span = padded - k;
    if span % spec.stride != 0 {
        return Err(Error::dim(
            op,
            format!(
                "non-integral output: ({input} + 2*{} - {k}) / {}",
                spec.pad, spec.stride
            ),
        ));
    }
    Ok(span / spec.stride + 1)
}

#[derive(Debug, Clone)]
struct ConvDims {
    b: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvDims {
    /// Valid `ow` range so that `ow*stride + kj - pad` stays inside `[0, w)`.
    #[inline]
    fn ow_range(&self, kj: usize) -> (usize, usize) {
        let s = self.stride;
        let start = if self.pad > kj {
            (self.pad - kj).div_ceil(s)
        } else {
            0
        };
        let limit = self.w + self.pad;
        if limit <= kj {
            return (0, 0);
        }
        let end = ((limit - 1 - kj) / s + 1).min(self.ow);
        (start.min(end), end)
    }

    #[inline]
    fn ih_of(&self, oh: usize, ki: usize) -> Option<usize> {
        let ih = (oh * self.stride + ki) as isize - self.pad as isize;
        if ih < 0 || ih >= self.h as isize {
            None
        } else {
            Some(ih as usize)
        }
    }
}

fn conv_forward<R: Real>(x: &[R], w: &[R], bias: Option<&[R]>, d: &ConvDims) -> Vec<R> {
    let mut out = vec![R::ZERO; d.b * d.o * d.oh * d.ow];
    out.par_chunks_mut(d.oh * d.ow)
        .enumerate()
        .for_each(|(bo, plane)| {
            let (b, o) = (bo / d.o, bo % d.o);
            if let Some(bv) = bias {
                plane.iter_mut().for_each(|p| *p = bv[o]);
            }
            let x_img = &x[b * d.c * d.h * d.w..(b + 1) * d.c * d.h * d.w];
            for c in 0..d.c {
                let x_c = &x_img[c * d.h * d.w..(c + 1) * d.h * d.w];
                for ki in 0..d.kh {
                    for kj in 0..d.kw {
                        let wv = w[((o * d.c + c) * d.kh + ki) * d.kw + kj];
                        if wv == R::ZERO {
                            continue;
                        }
                        let (start, end) = d.ow_range(kj);
                        if start >= end {
                            continue;
                        }
                        for oh in 0..d.oh {
                            let Some(ih) = d.ih_of(oh, ki) else { continue };
                            let x_row = &x_c[ih * d.w..(ih + 1) * d.w];
                            let out_row = &mut plane[oh * d.ow..(oh + 1) * d.ow];
                            if d.stride == 1 {
                                let off = start + kj - d.pad;
                                let xs = &x_row[off..off + (end - start)];
                                for (slot, &xv) in
                                    out_row[start..end].iter_mut().zip(xs)
                                {
                                    *slot += wv * xv;
                                }
                            } else {
                                for ow in start..end {
                                    let iw = ow * d.stride + kj - d.pad;
                                    out_row[ow] += wv * x_row[iw];
                                }
                            }
                        }
                    }
                }
            }
        });
    out
}

#[derive(Debug)]
struct Conv2dBack {
    dims: ConvDims,
    has_bias: bool,
}

impl<R: Real> BackwardOp<R> for Conv2dBack {
    fn backward(
        &self,
        gout: &[R],
        inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        let d = &self.dims;
        let x = inputs[0].data;
        let w = inputs[1].data;

        let dx = needs[0].then(|| {
            let mut dx = vec![R::ZERO; d.b * d.c * d.h * d.w];
            dx.par_chunks_mut(d.h * d.w).enumerate().for_each(|(bc, plane)| {
                let (b, c) = (bc / d.c, bc % d.c);
                for o in 0..d.o {
                    let g_plane = &gout[(b * d.o + o) * d.oh * d.ow..];
                    for ki in 0..d.kh {
                        for kj in 0..d.kw {
                            let wv = w[((o * d.c + c) * d.kh + ki) * d.kw + kj];
                            if wv == R::ZERO {
                                continue;
                            }
                            let (start, end) = d.ow_range(kj);
                            if start >= end {
                                continue;
                            }
                            for oh in 0..d.oh {
                                let Some(ih) = d.ih_of(oh, ki) else { continue };
                                let g_row = &g_plane[oh * d.ow..(oh + 1) * d.ow];
                                let dx_row = &mut plane[ih * d.w..(ih + 1) * d.w];
                                if d.stride == 1 {
                                    let off = start + kj - d.pad;
                                    for (slot, &gv) in dx_row[off..off + (end - start)]
                                        .iter_mut()
                                        .zip(&g_row[start..end])
                                    {
                                        *slot += wv * gv;
                                    }
                                } else {
                                    for ow in start..end {
                                        let iw = ow * d.stride + kj - d.pad;
                                        dx_row[iw] += wv * g_row[ow];
                                    }
                                }
                            }
                        }
                    }
                }
            });
            dx
        });

        let dw = needs[1].then(|| {
            let mut dw = vec![R::ZERO; d.o * d.c * d.kh * d.kw];
            dw.par_chunks_mut(d.c * d.kh * d.kw)
                .enumerate()
                .for_each(|(o, w_slice)| {
                    for b in 0..d.b {
                        let g_plane = &gout[(b * d.o + o) * d.oh * d.ow..];
                        let x_img = &x[b * d.c * d.h * d.w..];
                        for c in 0..d.c {
                            let x_c = &x_img[c * d.h * d.w..(c + 1) * d.h * d.w];
                            for ki in 0..d.kh {
                                for kj in 0..d.kw {
                                    let (start, end) = d.ow_range(kj);
                                    if start >= end {
                                        continue;
                                    }
                                    let mut acc = R::ZERO;
                                    for oh in 0..d.oh {
                                        let Some(ih) = d.ih_of(oh, ki) else { continue };
                                        let x_row = &x_c[ih * d.w..(ih + 1) * d.w];
                                        let g_row =
                                            &g_plane[oh * d.ow..(oh + 1) * d.ow];
                                        if d.stride == 1 {
                                            let off = start + kj - d.pad;
                                            let xs = &x_row[off..off + (end - start)];
                                            for (&gv, &xv) in
                                                g_row[start..end].iter().zip(xs)
                                            {
                                                acc += gv * xv;
                                            }
                                        } else {
                                            for ow in start..end {
                                                let iw = ow * d.stride + kj - d.pad;
                                                acc += g_row[ow] * x_row[iw];
                                            }
                                        }
                                    }
                                    w_slice[(c * d.kh + ki) * d.kw + kj] += acc;
                                }
                            }
                        }
                    }
                });
            dw
        });

        let db = if self.has_bias && needs[2] {
            let mut db = vec![R::ZERO; d.o];
            for b in 0..d.b {
                for (o, slot) in db.iter_mut().enumerate() {
                    let plane =
                        &gout[(b * d.o + o) * d.oh * d.ow..(b * d.o + o + 1) * d.oh * d.ow];
                    for &g in plane {
                        *slot += g;
                    }
                }
            }
            Some(db)
        } else {
            None
        };

        if self.has_bias {
            vec![dx, dw, db]
        } else {
            vec![dx, dw]
        }
    }
}

/// For transposed conv, `oh = h*stride + ki - pad` maps input rows to output
/// rows; `d` carries input dims in (h, w) and output dims in (oh, ow).
fn deconv_w_range(d: &ConvDims, kj: usize) -> (usize, usize) {
    // Valid input w so that w*stride + kj - pad lies in [0, ow).
    let s = d.stride;
    let start = if d.pad > kj {
        (d.pad - kj).div_ceil(s)
    } else {
        0
    };
    let limit = d.ow + d.pad;
    if limit <= kj {
        return (0, 0);
    }
    let end = ((limit - 1 - kj) / s + 1).min(d.w);
    (start.min(end), end)
}

fn deconv_oh_of(d: &ConvDims, h: usize, ki: usize) -> Option<usize> {
    let oh = (h * d.stride + ki) as isize - d.pad as isize;
    if oh < 0 || oh >= d.oh as isize {
        None
    } else {
        Some(oh as usize)
    }
}

fn deconv_forward<R: Real>(x: &[R], w: &[R], bias: Option<&[R]>, d: &ConvDims) -> Vec<R> {
    let mut out = vec![R::ZERO; d.b * d.o * d.oh * d.ow];
    out.par_chunks_mut(d.oh * d.ow)
        .enumerate()
        .for_each(|(bo, plane)| {
            let (b, o) = (bo / d.o, bo % d.o);
            if let Some(bv) = bias {
                plane.iter_mut().for_each(|p| *p = bv[o]);
            }
            for c in 0..d.c {
                let x_c = &x[(b * d.c + c) * d.h * d.w..(b * d.c + c + 1) * d.h * d.w];
                for ki in 0..d.kh {
                    for kj in 0..d.kw {
                        let wv = w[((c * d.o + o) * d.kh + ki) * d.kw + kj];
                        if wv == R::ZERO {
                            continue;
                        }
                        let (start, end) = deconv_w_range(d, kj);
                        if start >= end {
                            continue;
                        }
                        for h in 0..d.h {
                            let Some(oh) = deconv_oh_of(d, h, ki) else { continue };
                            let x_row = &x_c[h * d.w..(h + 1) * d.w];
                            let out_row = &mut plane[oh * d.ow..(oh + 1) * d.ow];
                            for iw in start..end {
                                let ow = iw * d.stride + kj - d.pad;
                                out_row[ow] += wv * x_row[iw];
                            }
                        }
                    }
                }
            }
        });
    out
}

#[derive(Debug)]
struct Deconv2dBack {
    dims: ConvDims,
    has_bias: bool,
}

impl<R: Real> BackwardOp<R> for Deconv2dBack {
    fn backward(
        &self,
        gout: &[R],
        inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        let d = &self.dims;
        let x = inputs[0].data;
        let w = inputs[1].data;

        let dx = needs[0].then(|| {
            let mut dx = vec![R::ZERO; d.b * d.c * d.h * d.w];
            dx.par_chunks_mut(d.h * d.w).enumerate().for_each(|(bc, plane)| {
                let (b, c) = (bc / d.c, bc % d.c);
                for o in 0..d.o {
                    let g_plane = &gout[(b * d.o + o) * d.oh * d.ow..];
                    for ki in 0..d.kh {
                        for kj in 0..d.kw {
                            let wv = w[((c * d.o + o) * d.kh + ki) * d.kw + kj];
                            if wv == R::ZERO {
                                continue;
                            }
                            let (start, end) = deconv_w_range(d, kj);
                            if start >= end {
                                continue;
                            }
                            for h in 0..d.h {
                                let Some(oh) = deconv_oh_of(d, h, ki) else { continue };
                                let g_row = &g_plane[oh * d.ow..(oh + 1) * d.ow];
                                let dx_row = &mut plane[h * d.w..(h + 1) * d.w];
                                for iw in start..end {
                                    let ow = iw * d.stride + kj - d.pad;
                                    dx_row[iw] += wv * g_row[ow];
                                }
                            }
                        }
                    }
                }
            });
            dx
        });

        let dw = needs[1].then(|| {
            let mut dw = vec![R::ZERO; d.c * d.o * d.kh * d.kw];
            dw.par_chunks_mut(d.o * d.kh * d.kw)
                .enumerate()
                .for_each(|(c, c_slice)| {
                    for b in 0..d.b {
                        let x_c = &x[(b * d.c + c) * d.h * d.w..(b * d.c + c + 1) * d.h * d.w];
                        for o in 0..d.o {
                            let g_plane = &gout[(b * d.o + o) * d.oh * d.ow..];
                            for ki in 0..d.kh {
                                for kj in 0..d.kw {
                                    let (start, end) = deconv_w_range(d, kj);
                                    if start >= end {
                                        continue;
                                    }
                                    let mut acc = R::ZERO;
                                    for h in 0..d.h {
                                        let Some(oh) = deconv_oh_of(d, h, ki) else {
                                            continue;
                                        };
                                        let x_row = &x_c[h * d.w..(h + 1) * d.w];
                                        let g_row =
                                            &g_plane[oh * d.ow..(oh + 1) * d.ow];
                                        for iw in start..end {
                                            let ow = iw * d.stride + kj - d.pad;
                                            acc += x_row[iw] * g_row[ow];
                                        }
                                    }
                                    c_slice[(o * d.kh + ki) * d.kw + kj] += acc;
                                }
                            }
                        }
                    }
                });
            dw
        });

        let db = if self.has_bias && needs[2] {
            let mut db = vec![R::ZERO; d.o];
            for b in 0..d.b {
                for (o, slot) in db.iter_mut().enumerate() {
                    let plane =
                        &gout[(b * d.o + o) * d.oh * d.ow..(b * d.o + o + 1) * d.oh * d.ow];
                    for &g in plane {
                        *slot += g;
                    }
                }
            }
            Some(db)
        } else {
            None
        };

        if self.has_bias {
            vec![dx, dw, db]
        } else {
            vec![dx, dw]
        }
    }
}

impl<R: Real> Graph<R> {
    /// `x[B,C,H,W] * w[O,C,kh,kw] (+ bias[O]) -> [B,O,H',W']`.
    pub fn conv2d(
        &mut self,
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
        spec: ConvSpec,
    ) -> Result<TensorId> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::dim(
                "conv2d",
                format!("expected 4D x and w, got {xs:?} and {ws:?}"),
            ));
        }
        if xs[1] != ws[1] {
            return Err(Error::dim(
                "conv2d",
                format!("channel mismatch: x {xs:?} vs w {ws:?}"),
            ));
        }
        let dims = ConvDims {
            b: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            o: ws[0],
            kh: ws[2],
            kw: ws[3],
            oh: out_dim("conv2d", xs[2], ws[2], spec)?,
            ow: out_dim("conv2d", xs[3], ws[3], spec)?,
            stride: spec.stride,
            pad: spec.pad,
        };
        if let Some(b) = bias {
            if self.shape(b) != [dims.o] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias {:?} vs O={}", self.shape(b), dims.o),
                ));
            }
        }
        let data = conv_forward(
            self.data(x),
            self.data(w),
            bias.map(|b| self.data(b)),
            &dims,
        );
        let out = Tensor::new(vec![dims.b, dims.o, dims.oh, dims.ow], data)?;
        let mut ids = vec![x, w];
        if let Some(b) = bias {
            ids.push(b);
        }
        Ok(self.push(
            &ids,
            out,
            Box::new(Conv2dBack {
                dims,
                has_bias: bias.is_some(),
            }),
        ))
    }

    /// Transposed convolution: `x[B,C,H,W] * w[C,O,kh,kw] -> [B,O,H'',W'']`
    /// with `H'' = (H-1)*stride - 2*pad + kh`.
    pub fn conv2d_transpose(
        &mut self,
        x: TensorId,
        w: TensorId,
        bias: Option<TensorId>,
        spec: ConvSpec,
    ) -> Result<TensorId> {
        let xs = self.shape(x);
        let ws = self.shape(w);
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::dim(
                "conv2d_transpose",
                format!("expected 4D x and w, got {xs:?} and {ws:?}"),
            ));
        }
        if xs[1] != ws[0] {
            return Err(Error::dim(
                "conv2d_transpose",
                format!("channel mismatch: x {xs:?} vs w {ws:?}"),
            ));
        }
        let expand = |input: usize, k: usize| -> Result<usize> {
            let grown = (input - 1) * spec.stride + k;
            if grown < 2 * spec.pad + 1 {
                return Err(Error::dim("conv2d_transpose", "padding swallows output"));
            }
            Ok(grown - 2 * spec.pad)
        };
        let dims = ConvDims {
            b: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            o: ws[1],
            kh: ws[2],
            kw: ws[3],
            oh: expand(xs[2], ws[2])?,
            ow: expand(xs[3], ws[3])?,
            stride: spec.stride,
            pad: spec.pad,
        };
        if let Some(b) = bias {
            if self.shape(b) != [dims.o] {
                return Err(Error::shape(
                    "conv2d_transpose",
                    format!("bias {:?} vs O={}", self.shape(b), dims.o),
                ));
            }
        }
        let data = deconv_forward(
            self.data(x),
            self.data(w),
            bias.map(|b| self.data(b)),
            &dims,
        );
        let out = Tensor::new(vec![dims.b, dims.o, dims.oh, dims.ow], data)?;
        let mut ids = vec![x, w];
        if let Some(b) = bias {
            ids.push(b);
        }
        Ok(self.push(
            &ids,
            out,
            Box::new(Deconv2dBack {
                dims,
                has_bias: bias.is_some(),
            }),
        ))
    }
}
