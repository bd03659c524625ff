//! Adam with bias correction. Moments are kept per trainable entry in store
//! order, so updates are deterministic.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::params::{ParamKind, ParamStore};
use crate::real::Real;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<R: Real> {
    pub config: AdamConfig,
    pub step: u64,
    /// name -> (m, v)
    moments: HashMap<String, (Vec<R>, Vec<R>)>,
}

impl<R: Real> Adam<R> {
    pub fn new(config: AdamConfig) -> Adam<R> {
        Adam {
            config,
            step: 0,
            moments: HashMap::new(),
        }
    }

    /// Apply one update with learning rate `lr`. Parameters without an entry
    /// in `grads` are left untouched.
    pub fn step(&mut self, store: &mut ParamStore<R>, grads: &HashMap<String, Vec<R>>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = R::from_f64(self.config.beta1);
        let b2 = R::from_f64(self.config.beta2);
        let eps = R::from_f64(self.config.eps);
        let lr = R::from_f64(lr);
        let corr1 = R::ONE - b1.powi(t);
        let corr2 = R::ONE - b2.powi(t);

        for entry in store.entries_mut() {
            if entry.kind != ParamKind::Trainable {
                continue;
            }
            let Some(g) = grads.get(&entry.name) else {
                continue;
            };
            let (m, v) = self
                .moments
                .entry(entry.name.clone())
                .or_insert_with(|| (vec![R::ZERO; g.len()], vec![R::ZERO; g.len()]));
            // Chunk-parallel: the update is elementwise, so splitting is
            // deterministic.
            const CHUNK: usize = 1 << 15;
            entry
                .data
                .par_chunks_mut(CHUNK)
                .zip(g.par_chunks(CHUNK))
                .zip(m.par_chunks_mut(CHUNK).zip(v.par_chunks_mut(CHUNK)))
                .for_each(|((pc, gc), (mc, vc))| {
                    for ((p, &gi), (mi, vi)) in
                        pc.iter_mut().zip(gc).zip(mc.iter_mut().zip(vc.iter_mut()))
                    {
                        *mi = b1 * *mi + (R::ONE - b1) * gi;
                        *vi = b2 * *vi + (R::ONE - b2) * gi * gi;
                        let m_hat = *mi / corr1;
                        let v_hat = *vi / corr2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                });
        }
    }

    pub fn moments(&self) -> &HashMap<String, (Vec<R>, Vec<R>)> {
        &self.moments
    }

    pub fn set_moment(&mut self, name: &str, m: Vec<R>, v: Vec<R>) {
        self.moments.insert(name.to_string(), (m, v));
    }
}
