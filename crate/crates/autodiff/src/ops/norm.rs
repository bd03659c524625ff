//! Per-channel batch normalization over NCHW tensors.
//!
//! Training mode normalizes with the batch statistics (biased variance) and
//! folds them into the running buffers; eval mode normalizes with the running
//! buffers. Both modes are differentiable w.r.t. x, gamma, beta.

use crate::error::{Error, Result};
use crate::graph::{BackwardOp, Graph, TensorId};
use crate::real::Real;
use crate::tensor::{Tensor, TensorView};

#[derive(Debug)]
struct BatchNormBack<R: Real> {
    mean: Vec<R>,
    inv_std: Vec<R>,
    // Batch stats participate in the gradient only in training mode.
    batch_stats: bool,
    per_channel: usize,
}

impl<R: Real> BackwardOp<R> for BatchNormBack<R> {
    fn backward(
        &self,
        gout: &[R],
        inputs: &[TensorView<'_, R>],
        _out: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>> {
        let x = inputs[0].data;
        let gamma = inputs[1].data;
        let shape = inputs[0].shape;
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let plane = h * w;
        let n = R::from_f64(self.per_channel as f64);

        let mut dgamma = vec![R::ZERO; c];
        let mut dbeta = vec![R::ZERO; c];
        let mut sum_g = vec![R::ZERO; c];
        let mut sum_g_xhat = vec![R::ZERO; c];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * plane;
                for k in 0..plane {
                    let g = gout[base + k];
                    let xhat = (x[base + k] - self.mean[ci]) * self.inv_std[ci];
                    dbeta[ci] += g;
                    dgamma[ci] += g * xhat;
                    sum_g[ci] += g;
                    sum_g_xhat[ci] += g * xhat;
                }
            }
        }

        let dx = needs[0].then(|| {
            let mut dx = vec![R::ZERO; x.len()];
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * plane;
                    let scale = gamma[ci] * self.inv_std[ci];
                    for k in 0..plane {
                        let g = gout[base + k];
                        dx[base + k] = if self.batch_stats {
                            let xhat =
                                (x[base + k] - self.mean[ci]) * self.inv_std[ci];
                            scale * (g - sum_g[ci] / n - xhat * sum_g_xhat[ci] / n)
                        } else {
                            scale * g
                        };
                    }
                }
            }
            dx
        });
        vec![dx, needs[1].then_some(dgamma), needs[2].then_some(dbeta)]
    }
}

impl<R: Real> Graph<R> {
    /// Normalize `x[B,C,H,W]` per channel. In training mode `running_mean` /
    /// `running_var` are updated in place with momentum `momentum`.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm2d(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        running_mean: &mut [R],
        running_var: &mut [R],
        training: bool,
        momentum: f64,
        eps: f64,
    ) -> Result<TensorId> {
        let shape = self.shape(x).to_vec();
        if shape.len() != 4 {
            return Err(Error::dim("batch_norm2d", format!("expected 4D, got {shape:?}")));
        }
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || running_mean.len() != c {
            return Err(Error::shape(
                "batch_norm2d",
                format!("per-channel params must have len {c}"),
            ));
        }
        let plane = h * w;
        let per_channel = b * plane;
        let n = R::from_f64(per_channel as f64);
        let eps_r = R::from_f64(eps);

        let xd = self.data(x);
        let (mean, var) = if training {
            let mut mean = vec![R::ZERO; c];
            let mut var = vec![R::ZERO; c];
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * plane;
                    for k in 0..plane {
                        mean[ci] += xd[base + k];
                    }
                }
            }
            for m in mean.iter_mut() {
                *m /= n;
            }
            for bi in 0..b {
                for ci in 0..c {
                    let base = (bi * c + ci) * plane;
                    for k in 0..plane {
                        let d = xd[base + k] - mean[ci];
                        var[ci] += d * d;
                    }
                }
            }
            for v in var.iter_mut() {
                *v /= n;
            }
            let mom = R::from_f64(momentum);
            for ci in 0..c {
                running_mean[ci] = (R::ONE - mom) * running_mean[ci] + mom * mean[ci];
                running_var[ci] = (R::ONE - mom) * running_var[ci] + mom * var[ci];
            }
            (mean, var)
        } else {
            (running_mean.to_vec(), running_var.to_vec())
        };

        let inv_std: Vec<R> = var.iter().map(|&v| R::ONE / (v + eps_r).sqrt()).collect();
        let gd = self.data(gamma);
        let bd = self.data(beta);
        let mut out = vec![R::ZERO; xd.len()];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * plane;
                for k in 0..plane {
                    out[base + k] =
                        gd[ci] * (xd[base + k] - mean[ci]) * inv_std[ci] + bd[ci];
                }
            }
        }
        let out_t = Tensor::new(shape, out)?;
        Ok(self.push(
            &[x, gamma, beta],
            out_t,
            Box::new(BatchNormBack {
                mean,
                inv_std,
                batch_stats: training,
                per_channel,
            }),
        ))
    }
}
