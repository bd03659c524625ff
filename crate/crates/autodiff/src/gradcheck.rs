//! Central finite-difference verification of backward rules.

use crate::graph::{Graph, TensorId};
use crate::real::Real;
use crate::tensor::Tensor;

/// Maximum relative error between the analytic gradient of `f` at `x` and a
/// central finite difference with step `eps`:
/// `max_i |analytic_i - fd_i| / max(1, |analytic_i|)`.
///
/// `f` must build a scalar output on the supplied graph from the given input
/// id. It is re-invoked on perturbed copies of `x`, so it must be a pure
/// function of the graph input.
pub fn grad_check<R, F>(f: F, x: &Tensor<R>, eps: f64) -> f64
where
    R: Real,
    F: Fn(&mut Graph<R>, TensorId) -> TensorId,
{
    let eval = |data: &[R]| -> f64 {
        let mut g = Graph::new();
        let id = g.constant(Tensor {
            shape: x.shape.clone(),
            data: data.to_vec(),
            requires_grad: false,
            grad: None,
        });
        let out = f(&mut g, id);
        g.value(out).to_f64()
    };

    // Analytic pass.
    let mut g = Graph::new();
    let id = g.param(Tensor {
        shape: x.shape.clone(),
        data: x.data.clone(),
        requires_grad: true,
        grad: None,
    });
    let out = f(&mut g, id);
    assert_eq!(g.tensor(out).numel(), 1, "grad_check needs a scalar function");
    g.backward(out).expect("backward failed in grad_check");
    let analytic = g.grad(id);

    let mut worst = 0.0f64;
    let mut probe = x.data.clone();
    for i in 0..probe.len() {
        let orig = probe[i];
        probe[i] = orig + R::from_f64(eps);
        let plus = eval(&probe);
        probe[i] = orig - R::from_f64(eps);
        let minus = eval(&probe);
        probe[i] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        let a = analytic[i].to_f64();
        let rel = (a - fd).abs() / a.abs().max(1.0);
        if rel > worst {
            worst = rel;
        }
    }
    worst
}
