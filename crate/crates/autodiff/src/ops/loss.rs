//! Scalar reduction losses over equal-shaped prediction/target pairs.

use crate::error::{Error, Result};
use crate::graph::{BackwardOp, Graph, TensorId};
use crate::real::Real;
use crate::tensor::{Tensor, TensorView};

fn check<R: Real>(op: &'static str, g: &Graph<R>, a: TensorId, b: TensorId) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", g.shape(a), g.shape(b)),
        ));
    }
    Ok(())
}

#[derive(Debug)]
struct L1Back;
impl<R: Real> BackwardOp<R> for L1Back {
    fn backward(
        &self,
        gout: &[R],
        inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        let n = R::from_f64(inputs[0].numel() as f64);
        let g = gout[0] / n;
        let signs = |flip: bool| {
            inputs[0]
                .data
                .iter()
                .zip(inputs[1].data)
                .map(|(&a, &b)| {
                    let d = a - b;
                    let s = if d > R::ZERO {
                        g
                    } else if d < R::ZERO {
                        -g
                    } else {
                        R::ZERO
                    };
                    if flip {
                        -s
                    } else {
                        s
                    }
                })
                .collect()
        };
        vec![needs[0].then(|| signs(false)), needs[1].then(|| signs(true))]
    }
}

#[derive(Debug)]
struct SmoothL1Back;
impl<R: Real> BackwardOp<R> for SmoothL1Back {
    fn backward(
        &self,
        gout: &[R],
        inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        let n = R::from_f64(inputs[0].numel() as f64);
        let g = gout[0] / n;
        let grads = |flip: bool| {
            inputs[0]
                .data
                .iter()
                .zip(inputs[1].data)
                .map(|(&a, &b)| {
                    let d = a - b;
                    let s = if d.abs() < R::ONE {
                        g * d
                    } else if d > R::ZERO {
                        g
                    } else {
                        -g
                    };
                    if flip {
                        -s
                    } else {
                        s
                    }
                })
                .collect()
        };
        vec![needs[0].then(|| grads(false)), needs[1].then(|| grads(true))]
    }
}

#[derive(Debug)]
struct MseBack;
impl<R: Real> BackwardOp<R> for MseBack {
    fn backward(
        &self,
        gout: &[R],
        inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        let n = R::from_f64(inputs[0].numel() as f64);
        let two = R::from_f64(2.0);
        let g = gout[0] / n;
        let grads = |flip: bool| {
            inputs[0]
                .data
                .iter()
                .zip(inputs[1].data)
                .map(|(&a, &b)| {
                    let s = two * (a - b) * g;
                    if flip {
                        -s
                    } else {
                        s
                    }
                })
                .collect()
        };
        vec![needs[0].then(|| grads(false)), needs[1].then(|| grads(true))]
    }
}

impl<R: Real> Graph<R> {
    /// Mean absolute difference.
    pub fn l1_loss(&mut self, pred: TensorId, target: TensorId) -> Result<TensorId> {
        check("l1_loss", self, pred, target)?;
        let n = R::from_f64(self.data(pred).len() as f64);
        let s: R = self
            .data(pred)
            .iter()
            .zip(self.data(target))
            .map(|(&a, &b)| (a - b).abs())
            .sum();
        Ok(self.push(&[pred, target], Tensor::scalar(s / n), Box::new(L1Back)))
    }

    /// Huber with delta = 1: quadratic below unit error, linear above. Mean.
    pub fn smooth_l1_loss(&mut self, pred: TensorId, target: TensorId) -> Result<TensorId> {
        check("smooth_l1_loss", self, pred, target)?;
        let half = R::from_f64(0.5);
        let n = R::from_f64(self.data(pred).len() as f64);
        let s: R = self
            .data(pred)
            .iter()
            .zip(self.data(target))
            .map(|(&a, &b)| {
                let d = (a - b).abs();
                if d < R::ONE {
                    half * d * d
                } else {
                    d - half
                }
            })
            .sum();
        Ok(self.push(&[pred, target], Tensor::scalar(s / n), Box::new(SmoothL1Back)))
    }

    /// Mean squared difference.
    pub fn mse_loss(&mut self, pred: TensorId, target: TensorId) -> Result<TensorId> {
        check("mse_loss", self, pred, target)?;
        let n = R::from_f64(self.data(pred).len() as f64);
        let s: R = self
            .data(pred)
            .iter()
            .zip(self.data(target))
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        Ok(self.push(&[pred, target], Tensor::scalar(s / n), Box::new(MseBack)))
    }
}
