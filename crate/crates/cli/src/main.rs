//! `vesselgan`: train, run and evaluate the conditional patch-based GAN for
//! retinal vessel segmentation.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error,
//! 3 numeric abort (non-finite training state or failed numeric check).

use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};

use vesselgan_core::checks::{self, Suite};
use vesselgan_core::error::{Error, ErrorKind, Result};
use vesselgan_core::eval::{evaluate_dirs, write_report, ThresholdMode};
use vesselgan_core::run::{RunConfig, Trainer, ZMode};

#[derive(Parser)]
#[command(
    name = "vesselgan",
    version,
    about = "Conditional patch-based GAN for retinal vessel segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a dataset directory (see README for the expected layout).
    Train {
        /// Flat key=value config file; missing keys take documented defaults.
        #[arg(long)]
        config: PathBuf,
        /// Dataset root containing images/, labels/ and optionally masks/.
        #[arg(long)]
        data_root: PathBuf,
        /// Output directory for logs, checkpoints and the resolved config.
        #[arg(long)]
        out: PathBuf,
        /// Override train.seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Resume from a checkpoint written by a run with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run the generator over one image and write the probability map.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed for the test-time noise stream.
        #[arg(long, conflicts_with = "z_zero")]
        z_seed: Option<u64>,
        /// Use z = 0 instead of drawing noise (deterministic deployment).
        #[arg(long)]
        z_zero: bool,
    },
    /// Evaluate probability maps against ground truth, matched by stem.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Report file (one JSON object per image plus an aggregate row).
        #[arg(long)]
        report: PathBuf,
        /// Binarize at this threshold instead of per-image Otsu.
        #[arg(long)]
        fixed_threshold: Option<f64>,
        /// Exit 3 unless the pooled AUC reaches this bound.
        #[arg(long)]
        min_auc: Option<f64>,
    },
    /// Finite-difference gradient checks (f64, step 1e-3, tolerance 1e-4).
    Gradcheck {
        #[arg(long, default_value = "all")]
        module: String,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            data_root,
            out,
            seed,
            resume,
        } => {
            let text = std::fs::read_to_string(&config).map_err(|e| {
                Error::config(format!("cannot read config file {}: {e}", config.display()))
            })?;
            let mut cfg = RunConfig::parse(&text)?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            let mut trainer = Trainer::new(cfg, &data_root, &out, resume.as_deref())?;
            let summary = trainer.run()?;
            println!(
                "trained {} steps over {} epochs; final checkpoint: {}",
                summary.steps,
                summary.epochs,
                summary.final_checkpoint.display()
            );
            if let Some(r) = summary.last_report {
                println!(
                    "last step: d_loss {:.4} g_adv {:.4} g_l1 {:.4} g_total {:.4}",
                    r.losses.d_loss_total,
                    r.losses.g_adv_loss,
                    r.losses.g_l1_loss,
                    r.losses.g_total
                );
            }
            Ok(())
        }
        Command::Infer {
            ckpt,
            image,
            out,
            z_seed,
            z_zero,
        } => {
            let loaded = vesselgan_core::run::checkpoint::load(&ckpt)?;
            let z = if z_zero {
                ZMode::Zero
            } else if let Some(seed) = z_seed {
                ZMode::Seeded(seed)
            } else {
                // fall back to the checkpoint's embedded config
                let cfg = loaded.config()?;
                if cfg.infer.z_seeded {
                    ZMode::Seeded(cfg.infer.z_seed)
                } else {
                    ZMode::Zero
                }
            };
            let outcome = vesselgan_core::run::infer_file(&loaded, &image, &out, z)?;
            println!("probability map: {}", outcome.prob_path.display());
            Ok(())
        }
        Command::Eval {
            pred,
            gt,
            mask,
            report,
            fixed_threshold,
            min_auc,
        } => {
            let mode = match fixed_threshold {
                Some(t) => {
                    if !(0.0..=1.0).contains(&t) {
                        return Err(Error::config(format!(
                            "--fixed-threshold must lie in [0,1], got {t}"
                        )));
                    }
                    ThresholdMode::Fixed(t)
                }
                None => ThresholdMode::Otsu,
            };
            let summary = evaluate_dirs(&pred, &gt, mask.as_deref(), mode)?;
            write_report(&report, &summary)?;
            let agg = &summary.aggregate;
            println!(
                "{} images; pooled acc {:.4} se {:.4} sp {:.4} auc {}",
                summary.rows.len(),
                agg.acc,
                agg.se,
                agg.sp,
                agg.auc.map_or("n/a".to_string(), |a| format!("{a:.4}")),
            );
            if let Some(bound) = min_auc {
                let auc = agg.auc.ok_or_else(|| {
                    Error::numeric("pooled AUC undefined; cannot enforce --min-auc".to_string())
                })?;
                if auc < bound {
                    return Err(Error::numeric(format!(
                        "pooled AUC {auc:.4} below required minimum {bound:.4}"
                    )));
                }
            }
            Ok(())
        }
        Command::Gradcheck { module } => {
            let suite: Suite = module.parse()?;
            let t0 = Instant::now();
            let reports = checks::run_suite(suite)?;
            let mut failed = 0usize;
            for r in &reports {
                let status = if r.passes() { "pass" } else { "FAIL" };
                if !r.passes() {
                    failed += 1;
                }
                println!(
                    "{status}  {:<44} max_rel_err {:.3e}  checked {:>2}  skipped {}",
                    r.name, r.report.max_rel_err, r.report.checked, r.report.skipped
                );
            }
            println!(
                "{} checks, {} failed, tolerance {:.0e}, {:.1}s",
                reports.len(),
                failed,
                checks::TOLERANCE,
                t0.elapsed().as_secs_f64()
            );
            if failed > 0 {
                return Err(Error::numeric(format!("{failed} gradient checks failed")));
            }
            Ok(())
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e.kind() {
                ErrorKind::Config => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numeric => 3,
            };
            std::process::exit(code);
        }
    }
}
