use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Tensor, TensorView};

/// Additive merge, chunk-parallel for large buffers (gradient fan-in on big
/// parameters is memory-bound).
fn accumulate<R: Real>(acc: &mut [R], g: &[R]) {
    const PAR: usize = 1 << 16;
    if acc.len() >= PAR {
        acc.par_chunks_mut(1 << 14)
            .zip(g.par_chunks(1 << 14))
            .for_each(|(a_chunk, g_chunk)| {
                for (a, v) in a_chunk.iter_mut().zip(g_chunk) {
                    *a += *v;
                }
            });
    } else {
        for (a, v) in acc.iter_mut().zip(g) {
            *a += *v;
        }
    }
}

/// Handle to a tensor recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

impl TensorId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of one recorded operation.
///
/// Returns one gradient buffer per input (`None` where `needs[k]` is false).
/// Duplicated inputs (e.g. `mul(x, x)`) are fine: the graph accumulates each
/// returned buffer additively.
pub trait BackwardOp<R: Real>: std::fmt::Debug + Send + Sync {
    fn backward(
        &self,
        grad_out: &[R],
        inputs: &[TensorView<'_, R>],
        output: TensorView<'_, R>,
        needs: &[bool],
    ) -> Vec<Option<Vec<R>>>;
}

#[derive(Debug)]
struct Node<R: Real> {
    tensor: Tensor<R>,
    inputs: Vec<TensorId>,
    backward: Option<Box<dyn BackwardOp<R>>>,
}

/// Tape of recorded operations. Construction order is topological by
/// definition (an op can only consume ids that already exist), so the reverse
/// sweep visits every node exactly once.
#[derive(Debug, Default)]
pub struct Graph<R: Real> {
    nodes: Vec<Node<R>>,
    grads: Vec<Option<Vec<R>>>,
}

impl<R: Real> Graph<R> {
    pub fn new() -> Graph<R> {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf that participates in differentiation.
    pub fn param(&mut self, mut t: Tensor<R>) -> TensorId {
        t.requires_grad = true;
        self.insert(t, Vec::new(), None)
    }

    /// Record a leaf that is treated as constant data.
    pub fn constant(&mut self, mut t: Tensor<R>) -> TensorId {
        t.requires_grad = false;
        self.insert(t, Vec::new(), None)
    }

    /// Record an op output. `requires_grad` is inherited from the inputs and
    /// `backward` is dropped when no input needs gradients.
    pub fn push(
        &mut self,
        inputs: &[TensorId],
        mut out: Tensor<R>,
        backward: Box<dyn BackwardOp<R>>,
    ) -> TensorId {
        // Debug builds verify that ops keep finite inputs finite; non-finite
        // inputs (e.g. a diverged parameter) are allowed to propagate so the
        // trainer's non-finite-loss abort stays reachable.
        debug_assert!(
            out.is_finite()
                || inputs
                    .iter()
                    .any(|id| !self.nodes[id.0].tensor.is_finite()),
            "non-finite values produced by a forward op on finite inputs"
        );
        let any_grad = inputs.iter().any(|id| self.nodes[id.0].tensor.requires_grad);
        out.requires_grad = any_grad;
        let backward = if any_grad { Some(backward) } else { None };
        self.insert(out, inputs.to_vec(), backward)
    }

    fn insert(
        &mut self,
        tensor: Tensor<R>,
        inputs: Vec<TensorId>,
        backward: Option<Box<dyn BackwardOp<R>>>,
    ) -> TensorId {
        let id = TensorId(self.nodes.len());
        self.nodes.push(Node {
            tensor,
            inputs,
            backward,
        });
        self.grads.push(None);
        id
    }

    pub fn tensor(&self, id: TensorId) -> &Tensor<R> {
        &self.nodes[id.0].tensor
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].tensor.shape
    }

    pub fn data(&self, id: TensorId) -> &[R] {
        &self.nodes[id.0].tensor.data
    }

    pub fn view(&self, id: TensorId) -> TensorView<'_, R> {
        let t = &self.nodes[id.0].tensor;
        TensorView {
            shape: &t.shape,
            data: &t.data,
        }
    }

    pub fn value(&self, id: TensorId) -> R {
        self.nodes[id.0].tensor.item()
    }

    /// Gradient of `id` after [`Graph::backward`]. Zeros when the tensor was
    /// unreachable from the loss.
    pub fn grad(&self, id: TensorId) -> Vec<R> {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => vec![R::ZERO; self.nodes[id.0].tensor.numel()],
        }
    }

    /// Move the tensor out of the graph with its gradient attached.
    pub fn take_with_grad(&mut self, id: TensorId) -> Tensor<R> {
        let mut t = self.nodes[id.0].tensor.clone();
        t.grad = Some(self.grad(id));
        t
    }

    /// Reverse sweep from a scalar loss. Gradients accumulate additively
    /// across fan-out; each node is visited exactly once.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let profile = std::env::var_os("AD_PROFILE_BACKWARD").is_some();
        let mut timings: Vec<(String, std::time::Duration)> = Vec::new();
        let loss_node = &self.nodes[loss.0];
        if loss_node.tensor.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_node.tensor.shape.clone()));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss.0] = Some(vec![R::ONE]);

        for i in (0..=loss.0).rev() {
            let Some(gout) = self.grads[i].take() else {
                continue;
            };
            let produced = {
                let node = &self.nodes[i];
                match &node.backward {
                    None => None,
                    Some(rule) => {
                        let views: Vec<TensorView<'_, R>> = node
                            .inputs
                            .iter()
                            .map(|id| {
                                let t = &self.nodes[id.0].tensor;
                                TensorView {
                                    shape: &t.shape,
                                    data: &t.data,
                                }
                            })
                            .collect();
                        let needs: Vec<bool> = node
                            .inputs
                            .iter()
                            .map(|id| self.nodes[id.0].tensor.requires_grad)
                            .collect();
                        let out_view = TensorView {
                            shape: &node.tensor.shape,
                            data: &node.tensor.data,
                        };
                        let start = profile.then(std::time::Instant::now);
                        let grads = rule.backward(&gout, &views, out_view, &needs);
                        if let Some(t0) = start {
                            let mut label = format!("{rule:?}");
                            label.truncate(60);
                            timings.push((label, t0.elapsed()));
                        }
                        Some((node.inputs.clone(), grads))
                    }
                }
            };
            if let Some((input_ids, input_grads)) = produced {
                debug_assert_eq!(input_ids.len(), input_grads.len());
                for (id, maybe_g) in input_ids.iter().zip(input_grads) {
                    let Some(g) = maybe_g else { continue };
                    debug_assert_eq!(g.len(), self.nodes[id.0].tensor.numel());
                    match &mut self.grads[id.0] {
                        Some(acc) => accumulate(acc, &g),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            self.grads[i] = Some(gout);
        }
        if profile {
            timings.sort_by(|a, b| b.1.cmp(&a.1));
            eprintln!("-- slowest backward rules --");
            for (label, dt) in timings.iter().take(20) {
                eprintln!("{dt:>12?}  {label}");
            }
        }
        Ok(())
    }
}
