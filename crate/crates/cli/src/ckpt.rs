//! Full training-state checkpoints in the flat binary container: parameters,
//! persistent buffers, optimizer moments and u64 metadata records.

use std::path::Path;

use autodiff::checkpoint::{self, Record};
use autodiff::{Adam, AdamConfig, ParamStore, Real};
use handmesh_core::config::RunConfig;
use handmesh_core::model::define_params;

use crate::error::{CliError, Result};

pub struct LoadedState<R: Real> {
    pub store: ParamStore<R>,
    pub adam: Adam<R>,
    pub epoch: u64,
    pub step: u64,
    pub topology_hash: u64,
}

pub fn save_checkpoint<R: Real>(
    path: &Path,
    store: &ParamStore<R>,
    adam: &Adam<R>,
    epoch: u64,
    step: u64,
    topology_hash: u64,
) -> Result<()> {
    let mut records: Vec<Record> = Vec::with_capacity(store.entries().len() * 3 + 4);
    for e in store.entries() {
        records.push(Record::from_reals(&e.name, &e.shape, &e.data));
    }
    // Moments in store order for reproducible files.
    for e in store.entries() {
        if let Some((m, v)) = adam.moments().get(&e.name) {
            records.push(Record::from_reals(&format!("opt.m.{}", e.name), &e.shape, m));
            records.push(Record::from_reals(&format!("opt.v.{}", e.name), &e.shape, v));
        }
    }
    records.push(Record::from_u64("meta.epoch", epoch));
    records.push(Record::from_u64("meta.step", step));
    records.push(Record::from_u64("meta.adam_step", adam.step));
    records.push(Record::from_u64("meta.topology_hash", topology_hash));
    checkpoint::save(path, &records)?;
    Ok(())
}

pub fn load_checkpoint<R: Real>(path: &Path, cfg: &RunConfig) -> Result<LoadedState<R>> {
    let records = checkpoint::load(path)?;
    let mut store: ParamStore<R> = define_params(cfg)?;
    let mut adam: Adam<R> = Adam::new(AdamConfig::default());
    let mut seen = std::collections::HashSet::new();
    let mut meta = std::collections::HashMap::new();
    let mut moments: std::collections::HashMap<String, (Option<Vec<R>>, Option<Vec<R>>)> =
        std::collections::HashMap::new();

    for r in &records {
        if let Some(name) = r.name.strip_prefix("meta.") {
            meta.insert(name.to_string(), r.as_u64()?);
        } else if let Some(name) = r.name.strip_prefix("opt.m.") {
            moments.entry(name.to_string()).or_default().0 = Some(r.to_reals()?);
        } else if let Some(name) = r.name.strip_prefix("opt.v.") {
            moments.entry(name.to_string()).or_default().1 = Some(r.to_reals()?);
        } else {
            let entry = store.get(&r.name).map_err(|_| {
                CliError::Validation(format!(
                    "checkpoint parameter `{}` does not exist under this config",
                    r.name
                ))
            })?;
            if entry.shape != r.shape {
                return Err(CliError::Validation(format!(
                    "checkpoint parameter `{}` has shape {:?}, config expects {:?}",
                    r.name, r.shape, entry.shape
                )));
            }
            store.set_data(&r.name, r.to_reals()?)?;
            seen.insert(r.name.clone());
        }
    }

    let missing: Vec<String> = store
        .entries()
        .iter()
        .filter(|e| !seen.contains(&e.name))
        .map(|e| e.name.clone())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Validation(format!(
            "checkpoint is missing {} parameters (first: {})",
            missing.len(),
            missing[0]
        )));
    }

    for (name, (m, v)) in moments {
        if let (Some(m), Some(v)) = (m, v) {
            adam.set_moment(&name, m, v);
        }
    }
    adam.step = meta.get("adam_step").copied().unwrap_or(0);

    Ok(LoadedState {
        store,
        adam,
        epoch: meta.get("epoch").copied().unwrap_or(0),
        step: meta.get("step").copied().unwrap_or(0),
        topology_hash: meta.get("topology_hash").copied().unwrap_or(0),
    })
}
