use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use handmesh_cli::error::{CliError, Result};
use handmesh_cli::obj::parse_obj_file;
use handmesh_cli::{gradsuite, infer, train};
use handmesh_core::config::RunConfig;
use handmesh_core::fusion::FusionMode;
use handmesh_core::{template, topology};

#[derive(Parser)]
#[command(
    name = "handmesh",
    about = "Camera-space two-hand mesh reconstruction from RGB-D frames"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AblationMode {
    Pdfnet,
    Concat,
    RgbOnly,
    DepthOnly,
}

impl AblationMode {
    fn apply(self, cfg: &mut RunConfig) {
        let (mode, ftn, center) = match self {
            AblationMode::Pdfnet => (FusionMode::Pdfnet, true, true),
            AblationMode::Concat => (FusionMode::Concat, false, true),
            AblationMode::RgbOnly => (FusionMode::RgbOnly, false, true),
            AblationMode::DepthOnly => (FusionMode::DepthOnly, false, false),
        };
        cfg.fusion.mode = mode;
        cfg.fusion.ftn = ftn;
        cfg.fusion.center_feature = center;
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train from a dataset; writes checkpoints and a per-step CSV log.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        ablation: Option<AblationMode>,
    },
    /// Evaluate a checkpoint on a dataset and print the metric table.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; defaults to the config's dataset path.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Segment clouds with ground-truth masks (true) or predicted masks.
        #[arg(long)]
        gt_mask: Option<bool>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        ablation: Option<AblationMode>,
        /// Also write the table to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct both hands from one RGB-D frame; writes OBJ + JSON.
    Infer {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        rgb: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        /// JSON file holding {"fx":..,"fy":..,"cx":..,"cy":..}.
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic dataset with exact ground truth.
    GenData {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 192)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient suite; exit 3 on any failure.
    CheckGrad {
        #[arg(long, default_value_t = 20)]
        seeds: u32,
        /// Add a deliberately corrupted rule; the suite must then fail.
        #[arg(long, default_value_t = false)]
        inject_fault: bool,
    },
    /// Build the mesh hierarchy asset (from the built-in hand template, or
    /// an OBJ supplied with --obj).
    MakeTopology {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        obj: Option<PathBuf>,
        /// Level sizes for a custom mesh (built-in template always uses
        /// 63/126/252).
        #[arg(long, num_args = 3)]
        levels: Option<Vec<usize>>,
    },
}

fn load_config(
    path: &PathBuf,
    seed: Option<u64>,
    ablation: Option<AblationMode>,
) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(a) = ablation {
        a.apply(&mut cfg);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            resume,
            seed,
            ablation,
        } => {
            let cfg = load_config(&config, seed, ablation)?;
            let summary = train::run_training(&cfg, resume.as_deref())?;
            println!(
                "trained {} steps over {} epochs; final loss {:.5}; best train AL-MPJPE {:.2} mm",
                summary.steps, summary.epochs, summary.final_loss, summary.best_al_mpjpe
            );
            println!("latest: {}", summary.latest_checkpoint.display());
            println!("best:   {}", summary.best_checkpoint.display());
            Ok(())
        }
        Command::Eval {
            config,
            checkpoint,
            dataset,
            gt_mask,
            seed,
            ablation,
            out,
        } => {
            let cfg = load_config(&config, seed, ablation)?;
            let dataset = dataset.unwrap_or_else(|| cfg.paths.dataset.clone());
            let use_gt = gt_mask.unwrap_or(cfg.use_gt_mask);
            let report = train::run_eval(&cfg, &checkpoint, &dataset, use_gt)?;
            let table = report.table();
            print!("{table}");
            if let Some(path) = out {
                std::fs::write(&path, table).map_err(|e| CliError::io(&path, e))?;
            }
            Ok(())
        }
        Command::Infer {
            config,
            checkpoint,
            rgb,
            depth,
            intrinsics,
            out,
        } => {
            let cfg = load_config(&config, None, None)?;
            let result = infer::run_infer(&cfg, &checkpoint, &rgb, &depth, &intrinsics, &out)?;
            for (label, hand) in [("left", &result.left), ("right", &result.right)] {
                if hand.present {
                    println!(
                        "{label}: detected (confidence {:.2}), root at [{:.3}, {:.3}, {:.3}] m",
                        hand.confidence, hand.root[0], hand.root[1], hand.root[2]
                    );
                } else {
                    println!("{label}: no hand detected (confidence {:.2})", hand.confidence);
                }
            }
            println!("outputs in {}", out.display());
            Ok(())
        }
        Command::GenData {
            seed,
            count,
            resolution,
            out,
        } => {
            if resolution == 0 || resolution % 4 != 0 {
                return Err(CliError::Validation(
                    "resolution must be a positive multiple of 4".into(),
                ));
            }
            let manifest = handmesh_synth::generate_synthetic(seed, count, resolution, &out)?;
            println!(
                "wrote {} samples at {resolution}x{resolution} into {} (topology {})",
                manifest.samples.len(),
                out.display(),
                manifest.topology_hash
            );
            Ok(())
        }
        Command::CheckGrad {
            seeds,
            inject_fault,
        } => {
            let report = gradsuite::run_suite(seeds, inject_fault);
            print!("{}", report.render());
            if report.all_passed() {
                println!("all {} checks passed", report.lines.len());
                Ok(())
            } else {
                Err(CliError::GradCheck(format!(
                    "{} of {} checks failed",
                    report.lines.iter().filter(|l| !l.passed).count(),
                    report.lines.len()
                )))
            }
        }
        Command::MakeTopology { out, obj, levels } => {
            let topo = match obj {
                None => topology::build(&template::build())?,
                Some(path) => {
                    let (verts, faces) = parse_obj_file(&path)?;
                    let sizes = match levels {
                        Some(v) => [v[0], v[1], v[2]],
                        None => topology::LEVEL_SIZES,
                    };
                    // A custom mesh carries no joint semantics; give it a
                    // uniform single-vertex regressor per joint slot.
                    let joint_rows: Vec<Vec<(u32, f64)>> = (0..handmesh_core::template::JOINTS)
                        .map(|j| vec![((j % verts.len()) as u32, 1.0)])
                        .collect();
                    topology::build_custom(&verts, &faces, &joint_rows, sizes)?
                }
            };
            topo.save(&out)?;
            println!(
                "topology asset with hash {:016x} written to {}",
                topo.hash,
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
