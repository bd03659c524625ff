//! Finite-difference sweep over every primitive kernel.
//!
//! Each entry perturbs one input of one kernel across many seeds and reports
//! the worst relative error. Inputs are drawn away from the non-smooth points
//! of kinked ops (relu, abs, L1) so the central difference is valid.

use rand::Rng;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use crate::gradcheck::grad_check;
use crate::graph::{Graph, TensorId};
use crate::ops::conv::ConvSpec;
use crate::tensor::Tensor;

pub const SUITE_EPS: f64 = 1e-6;
pub const SUITE_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct KernelReport {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub seeds: u32,
}

impl KernelReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < SUITE_TOL
    }
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Biased away from zero so kinked ops stay differentiable at the sample.
fn rand_tensor_off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let mag = rng.random_range(0.1..1.5);
            if rng.random_range(0.0..1.0) < 0.5 {
                -mag
            } else {
                mag
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Weighted sum so permutation/mixing mistakes in a backward rule cannot
/// cancel out the way a plain sum would let them.
fn scalarize(g: &mut Graph<f64>, out: TensorId, seed: u64) -> TensorId {
    let mut rng = rng_for(seed ^ 0x5eed);
    let shape = g.shape(out).to_vec();
    let w = g.constant(rand_tensor(&mut rng, &shape, 0.3, 1.7));
    let prod = g.mul(out, w).unwrap();
    g.sum_all(prod)
}

type Runner = Box<dyn Fn(u64) -> f64 + Send + Sync>;

fn checks() -> Vec<(&'static str, Runner)> {
    let mut list: Vec<(&'static str, Runner)> = Vec::new();

    list.push((
        "add.lhs",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
            let other = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
            grad_check(
                move |g, id| {
                    let c = g.constant(other.clone());
                    let y = g.add(id, c).unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "sub.rhs",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
            let other = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
            grad_check(
                move |g, id| {
                    let c = g.constant(other.clone());
                    let y = g.sub(c, id).unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "mul.both",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
            // mul(x, x) exercises duplicated-input accumulation too
            grad_check(
                move |g, id| {
                    let y = g.mul(id, id).unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "scale",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[5], -2.0, 2.0);
            grad_check(
                move |g, id| {
                    let y = g.scale(id, -1.7);
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "add_scalar",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[5], -2.0, 2.0);
            grad_check(
                move |g, id| {
                    let y = g.add_scalar(id, 0.37);
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "relu",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor_off_zero(&mut rng, &[4, 4]);
            grad_check(
                move |g, id| {
                    let y = g.relu(id);
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "sigmoid",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[6], -2.0, 2.0);
            grad_check(
                move |g, id| {
                    let y = g.sigmoid(id);
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "ln",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[6], 0.2, 3.0);
            grad_check(
                move |g, id| {
                    let y = g.ln(id);
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "sqrt",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[6], 0.2, 3.0);
            grad_check(
                move |g, id| {
                    let y = g.sqrt(id);
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "abs",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor_off_zero(&mut rng, &[7]);
            grad_check(
                move |g, id| {
                    let y = g.abs(id);
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "clamp",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            // Mixture of interior and clearly-railed values; none near the rails.
            let data: Vec<f64> = (0..8)
                .map(|i| {
                    if i % 3 == 0 {
                        rng.random_range(2.0..3.0)
                    } else {
                        rng.random_range(-0.8..0.8)
                    }
                })
                .collect();
            let x = Tensor::new(vec![8], data).unwrap();
            grad_check(
                move |g, id| {
                    let y = g.clamp(id, -1.0, 1.0);
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "broadcast",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[1, 4], -1.0, 1.0);
            grad_check(
                move |g, id| {
                    let y = g.broadcast_to(id, &[3, 4]).unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "reshape",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[2, 6], -1.0, 1.0);
            grad_check(
                move |g, id| {
                    let y = g.reshape(id, &[3, 4]).unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "matmul.lhs",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[4, 5], -1.0, 1.0);
            let other = rand_tensor(&mut rng, &[5, 6], -1.0, 1.0);
            grad_check(
                move |g, id| {
                    let c = g.constant(other.clone());
                    let y = g.matmul(id, c).unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "matmul.rhs",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let other = rand_tensor(&mut rng, &[4, 5], -1.0, 1.0);
            let x = rand_tensor(&mut rng, &[5, 6], -1.0, 1.0);
            grad_check(
                move |g, id| {
                    let c = g.constant(other.clone());
                    let y = g.matmul(c, id).unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "linear_mm.w",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let xv = rand_tensor(&mut rng, &[5, 4], -1.0, 1.0);
            let x = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
            let b = rand_tensor(&mut rng, &[3], -0.5, 0.5);
            grad_check(
                move |g, id| {
                    let xc = g.constant(xv.clone());
                    let bc = g.constant(b.clone());
                    let y = g.linear_mm(xc, id, bc).unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "linear_mm.bias",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let xv = rand_tensor(&mut rng, &[5, 4], -1.0, 1.0);
            let w = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
            let x = rand_tensor(&mut rng, &[3], -0.5, 0.5);
            grad_check(
                move |g, id| {
                    let xc = g.constant(xv.clone());
                    let wc = g.constant(w.clone());
                    let y = g.linear_mm(xc, wc, id).unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "transpose2d",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[3, 5], -1.0, 1.0);
            grad_check(
                move |g, id| {
                    let y = g.transpose2d(id).unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "add_row_bias",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let m = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
            let x = rand_tensor(&mut rng, &[3], -1.0, 1.0);
            grad_check(
                move |g, id| {
                    let c = g.constant(m.clone());
                    let y = g.add_row_bias(c, id).unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "conv2d.x",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[1, 2, 5, 5], -1.0, 1.0);
            let w = rand_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
            let b = rand_tensor(&mut rng, &[3], -0.5, 0.5);
            grad_check(
                move |g, id| {
                    let wc = g.constant(w.clone());
                    let bc = g.constant(b.clone());
                    let y = g
                        .conv2d(id, wc, Some(bc), ConvSpec { stride: 1, pad: 1 })
                        .unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "conv2d.w",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let xv = rand_tensor(&mut rng, &[2, 2, 6, 6], -1.0, 1.0);
            let x = rand_tensor(&mut rng, &[3, 2, 4, 4], -1.0, 1.0);
            grad_check(
                move |g, id| {
                    let xc = g.constant(xv.clone());
                    let y = g
                        .conv2d(xc, id, None, ConvSpec { stride: 2, pad: 1 })
                        .unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "conv2d.bias",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let xv = rand_tensor(&mut rng, &[1, 2, 5, 5], -1.0, 1.0);
            let w = rand_tensor(&mut rng, &[3, 2, 3, 3], -1.0, 1.0);
            let x = rand_tensor(&mut rng, &[3], -0.5, 0.5);
            grad_check(
                move |g, id| {
                    let xc = g.constant(xv.clone());
                    let wc = g.constant(w.clone());
                    let y = g
                        .conv2d(xc, wc, Some(id), ConvSpec { stride: 1, pad: 0 })
                        .unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "conv2d_transpose.x",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[1, 3, 4, 4], -1.0, 1.0);
            let w = rand_tensor(&mut rng, &[3, 2, 4, 4], -1.0, 1.0);
            grad_check(
                move |g, id| {
                    let wc = g.constant(w.clone());
                    let y = g
                        .conv2d_transpose(id, wc, None, ConvSpec { stride: 2, pad: 1 })
                        .unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "conv2d_transpose.w",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let xv = rand_tensor(&mut rng, &[1, 3, 4, 4], -1.0, 1.0);
            let x = rand_tensor(&mut rng, &[3, 2, 4, 4], -1.0, 1.0);
            let b = rand_tensor(&mut rng, &[2], -0.5, 0.5);
            grad_check(
                move |g, id| {
                    let xc = g.constant(xv.clone());
                    let bc = g.constant(b.clone());
                    let y = g
                        .conv2d_transpose(xc, id, Some(bc), ConvSpec { stride: 2, pad: 1 })
                        .unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "batch_norm.train.x",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[2, 3, 4, 4], -1.5, 1.5);
            let gamma = rand_tensor(&mut rng, &[3], 0.5, 1.5);
            let beta = rand_tensor(&mut rng, &[3], -0.5, 0.5);
            grad_check(
                move |g, id| {
                    let ga = g.constant(gamma.clone());
                    let be = g.constant(beta.clone());
                    let mut rm = vec![0.0; 3];
                    let mut rv = vec![1.0; 3];
                    let y = g
                        .batch_norm2d(id, ga, be, &mut rm, &mut rv, true, 0.1, 1e-5)
                        .unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "batch_norm.train.gamma",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let xv = rand_tensor(&mut rng, &[2, 3, 4, 4], -1.5, 1.5);
            let x = rand_tensor(&mut rng, &[3], 0.5, 1.5);
            let beta = rand_tensor(&mut rng, &[3], -0.5, 0.5);
            grad_check(
                move |g, id| {
                    let xc = g.constant(xv.clone());
                    let be = g.constant(beta.clone());
                    let mut rm = vec![0.0; 3];
                    let mut rv = vec![1.0; 3];
                    let y = g
                        .batch_norm2d(xc, id, be, &mut rm, &mut rv, true, 0.1, 1e-5)
                        .unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "batch_norm.eval.x",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[1, 3, 4, 4], -1.5, 1.5);
            let gamma = rand_tensor(&mut rng, &[3], 0.5, 1.5);
            let beta = rand_tensor(&mut rng, &[3], -0.5, 0.5);
            let rm: Vec<f64> = (0..3).map(|_| rng.random_range(-0.3..0.3)).collect();
            let rv: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..1.5)).collect();
            grad_check(
                move |g, id| {
                    let ga = g.constant(gamma.clone());
                    let be = g.constant(beta.clone());
                    let mut rm = rm.clone();
                    let mut rv = rv.clone();
                    let y = g
                        .batch_norm2d(id, ga, be, &mut rm, &mut rv, false, 0.1, 1e-5)
                        .unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "sum_all",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[3, 3], -1.0, 1.0);
            grad_check(
                move |g, id| {
                    let s = g.sum_all(id);
                    let w = g.constant(Tensor::scalar(1.3));
                    let y = g.mul(s, w).unwrap();
                    g.sum_all(y)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "mean_all",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[4, 5], -1.0, 1.0);
            grad_check(
                move |g, id| {
                    let s = g.mean_all(id);
                    let w = g.constant(Tensor::scalar(2.1));
                    let y = g.mul(s, w).unwrap();
                    g.sum_all(y)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "max_pool_rows",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[12, 5], -2.0, 2.0);
            grad_check(
                move |g, id| {
                    let y = g.max_pool_rows(id, 4).unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "gather_rows",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[6, 4], -1.0, 1.0);
            grad_check(
                move |g, id| {
                    // Duplicate index exercises scatter-add accumulation.
                    let y = g.gather_rows(id, &[0, 3, 3, 5, 1]).unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "gather_cols_t",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[4, 9], -1.0, 1.0);
            grad_check(
                move |g, id| {
                    let y = g.gather_cols_t(id, &[0, 8, 2, 2]).unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "concat_cols",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let other = rand_tensor(&mut rng, &[3, 2], -1.0, 1.0);
            let x = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
            grad_check(
                move |g, id| {
                    let c = g.constant(other.clone());
                    let y = g.concat_cols(&[c, id]).unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "narrow_cols",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let x = rand_tensor(&mut rng, &[3, 7], -1.0, 1.0);
            grad_check(
                move |g, id| {
                    let y = g.narrow_cols(id, 2, 4).unwrap();
                    scalarize(g, y, seed)
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "l1_loss",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let target = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
            // Keep |pred - target| away from the kink at zero.
            let x = Tensor::new(
                vec![4, 3],
                target
                    .data
                    .iter()
                    .map(|&t| t + rng.random_range(0.2..0.9) * if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 })
                    .collect(),
            )
            .unwrap();
            grad_check(
                move |g, id| {
                    let t = g.constant(target.clone());
                    g.l1_loss(id, t).unwrap()
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "smooth_l1_loss",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let target = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
            // Mix of diffs clearly below and above the unit kink.
            let x = Tensor::new(
                vec![4, 3],
                target
                    .data
                    .iter()
                    .enumerate()
                    .map(|(i, &t)| {
                        let mag = if i % 2 == 0 {
                            rng.random_range(0.1..0.7)
                        } else {
                            rng.random_range(1.3..2.0)
                        };
                        t + mag * if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 }
                    })
                    .collect(),
            )
            .unwrap();
            grad_check(
                move |g, id| {
                    let t = g.constant(target.clone());
                    g.smooth_l1_loss(id, t).unwrap()
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list.push((
        "mse_loss",
        Box::new(|seed| {
            let mut rng = rng_for(seed);
            let target = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
            let x = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
            grad_check(
                move |g, id| {
                    let t = g.constant(target.clone());
                    g.mse_loss(id, t).unwrap()
                },
                &x,
                SUITE_EPS,
            )
        }),
    ));

    list
}

/// Run the finite-difference suite over every kernel with `seeds` random
/// draws each.
pub fn run_kernel_suite(seeds: u32) -> Vec<KernelReport> {
    checks()
        .into_iter()
        .map(|(name, runner)| {
            let mut worst = 0.0f64;
            for s in 0..seeds {
                let err = runner(s as u64 * 7919 + 13);
                if err > worst {
                    worst = err;
                }
            }
            KernelReport {
                name,
                max_rel_err: worst,
                seeds,
            }
        })
        .collect()
}
