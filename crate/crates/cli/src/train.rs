//! Training loop: per-sample graphs with gradient accumulation over the
//! batch, the step learning-rate schedule, per-step CSV logging, periodic
//! evaluation and latest/best checkpoints.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use autodiff::{Adam, AdamConfig, ParamStore, Real, Session};
use handmesh_core::config::{Precision, RunConfig};
use handmesh_core::losses::MeshConnectivity;
use handmesh_core::metrics::MetricAccumulator;
use handmesh_core::model::{
    define_params, extract_predictions, forward_batch, frame_loss, ForwardOpts,
};
use handmesh_core::topology::MeshTopology;
use handmesh_synth::augment::{augment, AugmentParams, AugmentRanges};
use handmesh_synth::Sample;
use rand::seq::SliceRandom;
use rand_chacha::{rand_core::SeedableRng, ChaCha8Rng};

use crate::ckpt;
use crate::data::{cloud_seed, frame_input, frame_targets, load_dataset};
use crate::error::{CliError, Result};
use crate::eval::{evaluate_samples, EvalReport};

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: usize,
    pub final_loss: f64,
    pub best_al_mpjpe: f64,
    pub best_checkpoint: PathBuf,
    pub latest_checkpoint: PathBuf,
    pub log_path: PathBuf,
}

pub fn run_training(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.validate()?;
    match cfg.precision {
        Precision::F32 => train_generic::<f32>(cfg, resume),
        Precision::F64 => train_generic::<f64>(cfg, resume),
    }
}

const LOSS_TERMS: [&str; 7] = ["center", "mask", "root", "mesh", "joint", "reproj", "smooth"];

fn train_generic<R: Real>(cfg: &RunConfig, resume: Option<&Path>) -> Result<TrainSummary> {
    let topo = MeshTopology::load(&cfg.paths.topology)?;
    let conn = MeshConnectivity::from_faces(&topo.faces);
    let data = load_dataset(&cfg.paths.dataset, cfg, &topo)?;
    std::fs::create_dir_all(&cfg.paths.out_dir)
        .map_err(|e| CliError::io(&cfg.paths.out_dir, e))?;

    let (mut store, mut adam, start_epoch, mut step): (ParamStore<R>, Adam<R>, usize, u64) =
        match resume {
            None => (
                define_params(cfg)?,
                Adam::new(AdamConfig::default()),
                0,
                0,
            ),
            Some(path) => {
                let state = ckpt::load_checkpoint::<R>(path, cfg)?;
                if state.topology_hash != topo.hash {
                    return Err(CliError::Validation(format!(
                        "checkpoint topology hash {:016x} does not match loaded topology {:016x}",
                        state.topology_hash, topo.hash
                    )));
                }
                (state.store, state.adam, state.epoch as usize, state.step)
            }
        };

    let log_path = cfg.paths.out_dir.join("train_log.csv");
    let mut log = File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    writeln!(
        log,
        "step,epoch,lr,{},total,train_mpjpe_mm,train_al_mpjpe_mm",
        LOSS_TERMS.join(",")
    )
    .map_err(|e| CliError::io(&log_path, e))?;

    let latest_path = cfg.paths.out_dir.join("latest.ckpt");
    let best_path = cfg.paths.out_dir.join("best.ckpt");
    let mut best_al = f64::INFINITY;
    let mut last_total = f64::NAN;
    let ranges = AugmentRanges::default();
    let max_steps = cfg.max_steps.unwrap_or(u64::MAX as usize) as u64;

    let mut epoch = start_epoch;
    'outer: while epoch < cfg.epochs {
        let lr = if epoch >= cfg.lr_drop_epoch {
            cfg.learning_rate * cfg.lr_drop_factor
        } else {
            cfg.learning_rate
        };

        let mut order: Vec<usize> = (0..data.samples.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (epoch as u64) << 17);
        order.shuffle(&mut shuffle_rng);

        for batch in order.chunks(cfg.batch_size) {
            if step >= max_steps {
                break 'outer;
            }
            let mut term_sums = [0.0f64; LOSS_TERMS.len()];
            let mut metrics = MetricAccumulator::default();

            // The whole batch shares one graph: parameters bind once, the
            // decoder's global map runs once over all hands, and a single
            // backward pass serves the averaged loss.
            let batch_samples: Vec<Sample> = batch
                .iter()
                .map(|&idx| {
                    if cfg.augment {
                        let mut arng =
                            ChaCha8Rng::seed_from_u64(cloud_seed(cfg.seed ^ 0xa06, epoch, idx));
                        let params =
                            AugmentParams::sample(&ranges, data.samples[idx].width, &mut arng);
                        augment(&data.samples[idx], &params)
                    } else {
                        data.samples[idx].clone()
                    }
                })
                .collect();

            let mut sess = Session::new(&mut store, true);
            let inputs: Vec<_> = batch_samples.iter().map(frame_input).collect();
            let frames: Vec<_> = inputs
                .iter()
                .zip(batch)
                .map(|(input, &idx)| {
                    (
                        input,
                        ForwardOpts {
                            training: true,
                            use_gt_mask: cfg.use_gt_mask,
                            cloud_seed: cloud_seed(cfg.seed, epoch, idx),
                        },
                    )
                })
                .collect();
            let fwds = forward_batch(&mut sess, cfg, &topo, &frames)?;

            let mut totals = Vec::with_capacity(fwds.len());
            for ((sample, fwd), input) in batch_samples.iter().zip(&fwds).zip(&inputs) {
                let targets = frame_targets(sample);
                let bundle =
                    frame_loss(&mut sess, cfg, &topo, &conn, fwd, &targets, &input.intr)?;
                for (name, value) in bundle.term_values(&sess.graph) {
                    if let Some(pos) = LOSS_TERMS.iter().position(|&t| t == name) {
                        term_sums[pos] += value;
                    }
                }
                totals.push(bundle.total);
            }
            let mut batch_total = totals[0];
            for &t in &totals[1..] {
                batch_total = sess.graph.add(batch_total, t)?;
            }
            let batch_total = sess
                .graph
                .scale(batch_total, R::from_f64(1.0 / totals.len() as f64));
            let total = sess.graph.value(batch_total).to_f64();
            if !total.is_finite() {
                let dump = cfg.paths.out_dir.join("nan_dump.json");
                let _ = std::fs::write(
                    &dump,
                    serde_json::to_string_pretty(&serde_json::json!({
                        "step": step,
                        "epoch": epoch,
                        "samples": batch.iter().map(|&i| data.names[i].clone()).collect::<Vec<_>>(),
                        "terms": LOSS_TERMS
                            .iter()
                            .zip(&term_sums)
                            .map(|(n, v)| (n.to_string(), v / batch.len() as f64))
                            .collect::<Vec<_>>(),
                    }))
                    .unwrap_or_default(),
                );
                return Err(CliError::Runtime(format!(
                    "non-finite loss at step {step} (diagnostics in {})",
                    dump.display()
                )));
            }
            sess.graph.backward(batch_total)?;

            for (fwd, sample) in fwds.iter().zip(&batch_samples) {
                let targets = frame_targets(sample);
                let preds = extract_predictions(&sess, fwd, cfg.center_confidence_threshold);
                for (hi, pred) in preds.iter().enumerate() {
                    if let Some(t) = &targets.hands[hi] {
                        metrics.add(&handmesh_core::metrics::hand_metrics(
                            &pred.joints_camera(),
                            &pred.mesh_camera(),
                            &t.joints_cam,
                            &t.mesh_cam,
                        ));
                    }
                }
            }

            let grads: HashMap<String, Vec<R>> = sess.grads();
            drop(sess);
            adam.step(&mut store, &grads, lr);
            step += 1;
            last_total = total;

            let n = batch.len() as f64;
            let m = metrics.mean();
            writeln!(
                log,
                "{step},{epoch},{lr},{},{:.6},{:.3},{:.3}",
                term_sums
                    .iter()
                    .map(|v| format!("{:.6}", v / n))
                    .collect::<Vec<_>>()
                    .join(","),
                last_total,
                m.mpjpe,
                m.al_mpjpe
            )
            .map_err(|e| CliError::io(&log_path, e))?;
        }

        epoch += 1;
        let do_eval = epoch % cfg.eval_interval == 0 || epoch == cfg.epochs || step >= max_steps;
        if epoch % cfg.checkpoint_interval == 0 || epoch == cfg.epochs || step >= max_steps {
            ckpt::save_checkpoint(&latest_path, &store, &adam, epoch as u64, step, topo.hash)?;
        }
        if do_eval {
            let report = evaluate_samples(cfg, &mut store, &topo, &data.samples, cfg.use_gt_mask)?;
            let al = report.mean_al_mpjpe();
            eprintln!(
                "epoch {epoch} step {step}: loss {last_total:.5}, train AL-MPJPE {al:.2} mm"
            );
            if al < best_al {
                best_al = al;
                ckpt::save_checkpoint(&best_path, &store, &adam, epoch as u64, step, topo.hash)?;
            }
            let al_ok = cfg.early_stop_al_mpjpe.map_or(false, |t| al < t);
            let mpjpe_ok = cfg.early_stop_mpjpe.map_or(true, |t| report.mean_mpjpe() < t);
            if al_ok && mpjpe_ok {
                eprintln!("early stop: targets reached at step {step}");
                ckpt::save_checkpoint(&latest_path, &store, &adam, epoch as u64, step, topo.hash)?;
                break;
            }
        }
        if step >= max_steps {
            break;
        }
    }

    if !best_path.exists() {
        ckpt::save_checkpoint(&best_path, &store, &adam, epoch as u64, step, topo.hash)?;
    }
    if !latest_path.exists() {
        ckpt::save_checkpoint(&latest_path, &store, &adam, epoch as u64, step, topo.hash)?;
    }

    Ok(TrainSummary {
        steps: step,
        epochs: epoch,
        final_loss: last_total,
        best_al_mpjpe: best_al,
        best_checkpoint: best_path,
        latest_checkpoint: latest_path,
        log_path,
    })
}

/// Evaluate a report for `cmd_eval`, honoring precision from the config.
pub fn run_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    dataset: &Path,
    use_gt_mask: bool,
) -> Result<EvalReport> {
    cfg.validate()?;
    let topo = MeshTopology::load(&cfg.paths.topology)?;
    let mut cfg = cfg.clone();
    cfg.paths.dataset = dataset.to_path_buf();
    let data = load_dataset(&cfg.paths.dataset, &cfg, &topo)?;
    match cfg.precision {
        Precision::F32 => {
            let state = ckpt::load_checkpoint::<f32>(checkpoint, &cfg)?;
            check_hash(state.topology_hash, topo.hash)?;
            let mut store = state.store;
            evaluate_samples(&cfg, &mut store, &topo, &data.samples, use_gt_mask)
        }
        Precision::F64 => {
            let state = ckpt::load_checkpoint::<f64>(checkpoint, &cfg)?;
            check_hash(state.topology_hash, topo.hash)?;
            let mut store = state.store;
            evaluate_samples(&cfg, &mut store, &topo, &data.samples, use_gt_mask)
        }
    }
}

fn check_hash(from_ckpt: u64, loaded: u64) -> Result<()> {
    if from_ckpt != loaded {
        return Err(CliError::Validation(format!(
            "checkpoint topology hash {from_ckpt:016x} does not match loaded topology {loaded:016x}"
        )));
    }
    Ok(())
}
