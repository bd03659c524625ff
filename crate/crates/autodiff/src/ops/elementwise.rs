//! Same-shape elementwise kernels plus scalar/broadcast variants.

use crate::error::{Error, Result};
use crate::graph::{BackwardOp, Graph, TensorId};
use crate::real::Real;
use crate::tensor::{Tensor, TensorView};

fn check_same_shape<R: Real>(
    op: &'static str,
    g: &Graph<R>,
    a: TensorId,
    b: TensorId,
) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", g.shape(a), g.shape(b)),
        ));
    }
    Ok(())
}

#[derive(Debug)]
struct AddBack;
impl<R: Real> BackwardOp<R> for AddBack {
    fn backward(
        &self,
        gout: &[R],
        _inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        let g = |want: bool| want.then(|| gout.to_vec());
        vec![g(needs[0]), g(needs[1])]
    }
}

#[derive(Debug)]
struct SubBack;
impl<R: Real> BackwardOp<R> for SubBack {
    fn backward(
        &self,
        gout: &[R],
        _inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        vec![
            needs[0].then(|| gout.to_vec()),
            needs[1].then(|| gout.iter().map(|&v| -v).collect()),
        ]
    }
}

#[derive(Debug)]
struct MulBack;
impl<R: Real> BackwardOp<R> for MulBack {
    fn backward(
        &self,
        gout: &[R],
        inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        let da = needs[0].then(|| {
            gout.iter()
                .zip(inputs[1].data)
                .map(|(&g, &b)| g * b)
                .collect()
        });
        let db = needs[1].then(|| {
            gout.iter()
                .zip(inputs[0].data)
                .map(|(&g, &a)| g * a)
                .collect()
        });
        vec![da, db]
    }
}

#[derive(Debug)]
struct ScaleBack<R: Real>(R);
impl<R: Real> BackwardOp<R> for ScaleBack<R> {
    fn backward(
        &self,
        gout: &[R],
        _inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        vec![needs[0].then(|| gout.iter().map(|&g| g * self.0).collect())]
    }
}

#[derive(Debug)]
struct AddScalarBack;
impl<R: Real> BackwardOp<R> for AddScalarBack {
    fn backward(
        &self,
        gout: &[R],
        _inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        vec![needs[0].then(|| gout.to_vec())]
    }
}

#[derive(Debug)]
struct ReluBack;
impl<R: Real> BackwardOp<R> for ReluBack {
    fn backward(
        &self,
        gout: &[R],
        inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        vec![needs[0].then(|| {
            gout.iter()
                .zip(inputs[0].data)
                .map(|(&g, &x)| if x > R::ZERO { g } else { R::ZERO })
                .collect()
        })]
    }
}

#[derive(Debug)]
struct SigmoidBack;
impl<R: Real> BackwardOp<R> for SigmoidBack {
    fn backward(
        &self,
        gout: &[R],
        _inputs: &[TensorView<'_, R>],
        out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        vec![needs[0].then(|| {
            gout.iter()
                .zip(out.data)
                .map(|(&g, &y)| g * y * (R::ONE - y))
                .collect()
        })]
    }
}

#[derive(Debug)]
struct LnBack;
impl<R: Real> BackwardOp<R> for LnBack {
    fn backward(
        &self,
        gout: &[R],
        inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        vec![needs[0].then(|| {
            gout.iter()
                .zip(inputs[0].data)
                .map(|(&g, &x)| g / x)
                .collect()
        })]
    }
}

#[derive(Debug)]
struct SqrtBack;
impl<R: Real> BackwardOp<R> for SqrtBack {
    fn backward(
        &self,
        gout: &[R],
        _inputs: &[TensorView<'_, R>],
        out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        let half = R::from_f64(0.5);
        vec![needs[0].then(|| {
            gout.iter()
                .zip(out.data)
                .map(|(&g, &y)| g * half / y)
                .collect()
        })]
    }
}

#[derive(Debug)]
struct AbsBack;
impl<R: Real> BackwardOp<R> for AbsBack {
    fn backward(
        &self,
        gout: &[R],
        inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        vec![needs[0].then(|| {
            gout.iter()
                .zip(inputs[0].data)
                .map(|(&g, &x)| {
                    if x > R::ZERO {
                        g
                    } else if x < R::ZERO {
                        -g
                    } else {
                        R::ZERO
                    }
                })
                .collect()
        })]
    }
}

/// Clamp passes gradient through strictly inside the band and blocks it at
/// the rails.
#[derive(Debug)]
struct ClampBack<R: Real> {
    lo: R,
    hi: R,
}
impl<R: Real> BackwardOp<R> for ClampBack<R> {
    fn backward(
        &self,
        gout: &[R],
        inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        vec![needs[0].then(|| {
            gout.iter()
                .zip(inputs[0].data)
                .map(|(&g, &x)| {
                    if x > self.lo && x < self.hi {
                        g
                    } else {
                        R::ZERO
                    }
                })
                .collect()
        })]
    }
}

/// Expands `x` to `target` shape, numpy-style: shapes are right-aligned and
/// every axis must match or be 1 on the input side. Backward sums over the
/// expanded axes.
#[derive(Debug)]
struct BroadcastBack {
    in_shape: Vec<usize>,
    target: Vec<usize>,
}
impl<R: Real> BackwardOp<R> for BroadcastBack {
    fn backward(
        &self,
        gout: &[R],
        _inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        if !needs[0] {
            return vec![None];
        }
        let n_in: usize = self.in_shape.iter().product();
        let mut acc = vec![R::ZERO; n_in];
        let padded = pad_left(&self.in_shape, self.target.len());
        let in_strides = row_major_strides(&padded);
        let out_strides = row_major_strides(&self.target);
        for (flat, &g) in gout.iter().enumerate() {
            let mut src = 0usize;
            let mut rem = flat;
            for axis in 0..self.target.len() {
                let idx = rem / out_strides[axis];
                rem %= out_strides[axis];
                if padded[axis] != 1 {
                    src += idx * in_strides[axis];
                }
            }
            acc[src] += g;
        }
        vec![Some(acc)]
    }
}

pub(crate) fn pad_left(shape: &[usize], ndim: usize) -> Vec<usize> {
    let mut padded = vec![1usize; ndim];
    padded[ndim - shape.len()..].copy_from_slice(shape);
    padded
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Reshape is a free view change; backward reshapes the gradient back.
#[derive(Debug)]
struct ReshapeBack;
impl<R: Real> BackwardOp<R> for ReshapeBack {
    fn backward(
        &self,
        gout: &[R],
        _inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        vec![needs[0].then(|| gout.to_vec())]
    }
}

impl<R: Real> Graph<R> {
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        check_same_shape("add", self, a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(&[a, b], out, Box::new(AddBack)))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        check_same_shape("sub", self, a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x - y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(&[a, b], out, Box::new(SubBack)))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        check_same_shape("mul", self, a, b)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(&[a, b], out, Box::new(MulBack)))
    }

    pub fn scale(&mut self, x: TensorId, k: R) -> TensorId {
        let data = self.data(x).iter().map(|&v| v * k).collect();
        let out = Tensor {
            shape: self.shape(x).to_vec(),
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(&[x], out, Box::new(ScaleBack(k)))
    }

    pub fn add_scalar(&mut self, x: TensorId, k: R) -> TensorId {
        let data = self.data(x).iter().map(|&v| v + k).collect();
        let out = Tensor {
            shape: self.shape(x).to_vec(),
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(&[x], out, Box::new(AddScalarBack))
    }

    /// `k - x`, used for complement terms like `1 - p`.
    pub fn rsub_scalar(&mut self, x: TensorId, k: R) -> TensorId {
        let neg = self.scale(x, -R::ONE);
        self.add_scalar(neg, k)
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let data = self.data(x).iter().map(|&v| v.max(R::ZERO)).collect();
        let out = Tensor {
            shape: self.shape(x).to_vec(),
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(&[x], out, Box::new(ReluBack))
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let data = self
            .data(x)
            .iter()
            .map(|&v| R::ONE / (R::ONE + (-v).exp()))
            .collect();
        let out = Tensor {
            shape: self.shape(x).to_vec(),
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(&[x], out, Box::new(SigmoidBack))
    }

    /// Natural log. Caller keeps inputs strictly positive (clamp first).
    pub fn ln(&mut self, x: TensorId) -> TensorId {
        let data = self.data(x).iter().map(|&v| v.ln()).collect();
        let out = Tensor {
            shape: self.shape(x).to_vec(),
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(&[x], out, Box::new(LnBack))
    }

    /// Elementwise square root. Caller keeps inputs strictly positive.
    pub fn sqrt(&mut self, x: TensorId) -> TensorId {
        let data = self.data(x).iter().map(|&v| v.sqrt()).collect();
        let out = Tensor {
            shape: self.shape(x).to_vec(),
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(&[x], out, Box::new(SqrtBack))
    }

    pub fn abs(&mut self, x: TensorId) -> TensorId {
        let data = self.data(x).iter().map(|&v| v.abs()).collect();
        let out = Tensor {
            shape: self.shape(x).to_vec(),
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(&[x], out, Box::new(AbsBack))
    }

    pub fn square(&mut self, x: TensorId) -> Result<TensorId> {
        self.mul(x, x)
    }

    pub fn clamp(&mut self, x: TensorId, lo: R, hi: R) -> TensorId {
        let data = self.data(x).iter().map(|&v| v.max(lo).min(hi)).collect();
        let out = Tensor {
            shape: self.shape(x).to_vec(),
            data,
            requires_grad: false,
            grad: None,
        };
        self.push(&[x], out, Box::new(ClampBack { lo, hi }))
    }

    pub fn broadcast_to(&mut self, x: TensorId, target: &[usize]) -> Result<TensorId> {
        let in_shape = self.shape(x).to_vec();
        if in_shape.len() > target.len() {
            return Err(Error::shape(
                "broadcast",
                format!("{in_shape:?} has more axes than target {target:?}"),
            ));
        }
        let padded = pad_left(&in_shape, target.len());
        for (axis, (&i, &t)) in padded.iter().zip(target).enumerate() {
            if i != t && i != 1 {
                return Err(Error::shape(
                    "broadcast",
                    format!("axis {axis}: {i} cannot expand to {t}"),
                ));
            }
        }
        let out_n: usize = target.iter().product();
        let in_strides = row_major_strides(&padded);
        let out_strides = row_major_strides(target);
        let src = self.data(x);
        let mut data = vec![R::ZERO; out_n];
        for (flat, slot) in data.iter_mut().enumerate() {
            let mut s = 0usize;
            let mut rem = flat;
            for axis in 0..target.len() {
                let idx = rem / out_strides[axis];
                rem %= out_strides[axis];
                if padded[axis] != 1 {
                    s += idx * in_strides[axis];
                }
            }
            *slot = src[s];
        }
        let out = Tensor::new(target.to_vec(), data)?;
        Ok(self.push(
            &[x],
            out,
            Box::new(BroadcastBack {
                in_shape,
                target: target.to_vec(),
            }),
        ))
    }

    pub fn reshape(&mut self, x: TensorId, new_shape: &[usize]) -> Result<TensorId> {
        let n: usize = new_shape.iter().product();
        if n != self.data(x).len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {:?}", self.shape(x), new_shape),
            ));
        }
        let out = Tensor::new(new_shape.to_vec(), self.data(x).to_vec())?;
        Ok(self.push(&[x], out, Box::new(ReshapeBack)))
    }
}
