//! One forward/backward pass over a fresh graph with parameters bound by
//! name from a [`ParamStore`].

use std::collections::HashMap;

use crate::error::Result;
use crate::graph::{Graph, TensorId};
use crate::ops::conv::ConvSpec;
use crate::params::{ParamKind, ParamStore};
use crate::real::Real;
use crate::tensor::Tensor;

pub struct Session<'s, R: Real> {
    pub graph: Graph<R>,
    store: &'s mut ParamStore<R>,
    bound: HashMap<String, TensorId>,
    pub training: bool,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl<'s, R: Real> Session<'s, R> {
    pub fn new(store: &'s mut ParamStore<R>, training: bool) -> Session<'s, R> {
        Session {
            graph: Graph::new(),
            store,
            bound: HashMap::new(),
            training,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    /// Bind a named parameter into the graph (trainables as differentiable
    /// leaves, buffers as constants). Ids are cached per session.
    pub fn param(&mut self, name: &str) -> Result<TensorId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let entry = self.store.get(name)?;
        let t = Tensor::new(entry.shape.clone(), entry.data.clone())?;
        let id = match entry.kind {
            ParamKind::Trainable => self.graph.param(t),
            ParamKind::Buffer => self.graph.constant(t),
        };
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn constant(&mut self, t: Tensor<R>) -> TensorId {
        self.graph.constant(t)
    }

    /// Fully connected layer: params `{name}.w [din,dout]` and `{name}.b [dout]`.
    pub fn linear(&mut self, name: &str, x: TensorId) -> Result<TensorId> {
        let w = self.param(&format!("{name}.w"))?;
        let b = self.param(&format!("{name}.b"))?;
        self.graph.linear_mm(x, w, b)
    }

    /// Convolution layer: params `{name}.w [O,C,kh,kw]` and `{name}.b [O]`.
    pub fn conv(&mut self, name: &str, x: TensorId, spec: ConvSpec) -> Result<TensorId> {
        let w = self.param(&format!("{name}.w"))?;
        let b = self.param(&format!("{name}.b"))?;
        self.graph.conv2d(x, w, Some(b), spec)
    }

    /// Transposed convolution layer, weight layout `[C,O,kh,kw]`.
    pub fn deconv(&mut self, name: &str, x: TensorId, spec: ConvSpec) -> Result<TensorId> {
        let w = self.param(&format!("{name}.w"))?;
        let b = self.param(&format!("{name}.b"))?;
        self.graph.conv2d_transpose(x, w, Some(b), spec)
    }

    /// Batch norm with running buffers `{name}.running_mean/.running_var` and
    /// affine params `{name}.gamma/.beta`.
    ///
    /// Normalization always uses the current frame's statistics: forwards
    /// here run one sample at a time, so frame stats are deterministic and
    /// identical between training and inference (avoiding the small-batch
    /// running-stat gap). The running buffers are still tracked during
    /// training and persist in checkpoints.
    pub fn batch_norm(&mut self, name: &str, x: TensorId) -> Result<TensorId> {
        let gamma = self.param(&format!("{name}.gamma"))?;
        let beta = self.param(&format!("{name}.beta"))?;
        let mut mean = self.store.get(&format!("{name}.running_mean"))?.data.clone();
        let mut var = self.store.get(&format!("{name}.running_var"))?.data.clone();
        let (training, momentum, eps) = (self.training, self.bn_momentum, self.bn_eps);
        let y = self
            .graph
            .batch_norm2d(x, gamma, beta, &mut mean, &mut var, true, momentum, eps)?;
        if training {
            self.store.set_data(&format!("{name}.running_mean"), mean)?;
            self.store.set_data(&format!("{name}.running_var"), var)?;
        }
        Ok(y)
    }

    /// Gradients of all bound trainable parameters, keyed by name. Call after
    /// `graph.backward`.
    pub fn grads(&self) -> HashMap<String, Vec<R>> {
        self.bound
            .iter()
            .filter(|(name, _)| {
                self.store
                    .get(name)
                    .map(|e| e.kind == ParamKind::Trainable)
                    .unwrap_or(false)
            })
            .map(|(name, &id)| (name.clone(), self.graph.grad(id)))
            .collect()
    }
}
