//! Finite-difference verification of gradients flowing through whole
//! subnetworks, keyed by parameter name.

use autodiff::{ParamStore, Session, TensorId};

/// Max relative error between analytic and central-difference gradients of a
/// scalar loss w.r.t. the named parameter.
///
/// `forward` must deterministically rebuild the loss from the store. For
/// large parameters only `max_elements` seeded positions are probed; the
/// analytic side still comes from one full backward pass.
pub fn fd_param_check<F>(
    store: &mut ParamStore<f64>,
    name: &str,
    forward: F,
    eps: f64,
    max_elements: usize,
) -> f64
where
    F: Fn(&mut Session<'_, f64>) -> TensorId,
{
    let analytic = {
        let mut sess = Session::new(store, true);
        let loss = forward(&mut sess);
        assert_eq!(
            sess.graph.tensor(loss).numel(),
            1,
            "fd_param_check needs a scalar loss"
        );
        sess.graph.backward(loss).expect("backward failed");
        let id = sess.param(name).expect("parameter must be bound by forward");
        sess.graph.grad(id)
    };

    let n = analytic.len();
    let probes: Vec<usize> = if n <= max_elements {
        (0..n).collect()
    } else {
        // Deterministic stratified subset.
        (0..max_elements)
            .map(|i| (i * 2654435761 + 17) % n)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect()
    };

    let eval = |store: &mut ParamStore<f64>| -> f64 {
        let mut sess = Session::new(store, true);
        let loss = forward(&mut sess);
        sess.graph.value(loss)
    };

    let mut worst = 0.0f64;
    for &i in &probes {
        let orig = store.get(name).unwrap().data[i];
        store.get_mut(name).unwrap().data[i] = orig + eps;
        let plus = eval(store);
        store.get_mut(name).unwrap().data[i] = orig - eps;
        let minus = eval(store);
        store.get_mut(name).unwrap().data[i] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        if rel > worst {
            worst = rel;
        }
    }
    worst
}
