//! Command-line front end. Each subcommand is a thin wrapper over
//! [`crate::pipeline`].

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::equivalence::{check_thc_vs_hyperconv, run_battery, EquivalenceCase};
use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::pipeline::{
    analyze_checkpoint, coldstart_prepared, evaluate_checkpoint, gradcheck_battery_instances,
    prepare, run_gradcheck, train_prepared, EvalTarget, Prepared, RunConfig,
};

#[derive(Debug, Parser)]
#[command(name = "groupid", version, about = "Group identification on user-group-item hypergraphs")]
pub struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one config key; the value is parsed as JSON when possible.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,

    #[arg(short, long)]
    pub output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn sets(&self, default_out: Option<&Path>) -> Vec<String> {
        let mut sets = Vec::new();
        if let Some(d) = default_out {
            sets.push(out_set(d));
        }
        sets.extend(self.sets.iter().cloned());
        if let Some(d) = &self.output_dir {
            sets.push(out_set(d));
        }
        sets
    }
}

fn out_set(dir: &Path) -> String {
    format!("output_dir={}", serde_json::Value::from(dir.display().to_string()))
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load or generate a dataset, split it and write a prepared directory.
    Prepare {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train on a prepared directory.
    Train {
        #[arg(long)]
        prepared: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Rank all groups for every held-out user and report Recall/NDCG.
    Evaluate {
        #[arg(long)]
        prepared: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Cutoffs; defaults to the checkpoint's k_list.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[arg(long, default_value = "test")]
        target: EvalTarget,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Retrain with each user's training groups capped at k.
    Coldstart {
        #[arg(long)]
        prepared: PathBuf,
        /// Caps; defaults to the config's coldstart_k.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// View consistency and group relatedness of a checkpoint.
    Analyze {
        #[arg(long)]
        prepared: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the config's analysis_bins.
        #[arg(long)]
        bins: Option<usize>,
        /// Defaults to the checkpoint's directory.
        #[arg(short, long)]
        output_dir: Option<PathBuf>,
    },
    /// Finite-difference gradient check on small random instances.
    Gradcheck {
        /// Run the convolution equivalence battery instead.
        #[arg(long)]
        equivalence: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Writes to stdout; a closed pipe is not an error.
fn print_out(text: &str) {
    let mut stdout = std::io::stdout().lock();
    let _ = stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush());
}

fn emit<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    print_out(&format!("{text}\n"));
    if let Some(path) = out {
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare { cfg } => {
            let config = RunConfig::layered(None, cfg.config.as_deref(), &cfg.sets(None))?;
            let stats = prepare(&config)?;
            emit(&stats, None)
        }
        Command::Train { prepared, cfg } => {
            let p = Prepared::load(&prepared)?;
            let config = p.config_with(cfg.config.as_deref(), &cfg.sets(Some(&prepared.join("train"))))?;
            let out = train_prepared(&p, &config)?;
            eprintln!(
                "trained {} epochs, best epoch {}, stop: {:?}",
                out.history.epochs.len(),
                out.history.best_epoch,
                out.history.stop_reason
            );
            emit(&out.test_metrics, None)
        }
        Command::Evaluate {
            prepared,
            checkpoint,
            k,
            target,
            out,
        } => {
            let p = Prepared::load(&prepared)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let k_list = k.unwrap_or_else(|| ck.hyperparams.k_list.clone());
            let report = evaluate_checkpoint(&p, &ck, target, &k_list)?;
            emit(&report, out.as_deref())
        }
        Command::Coldstart { prepared, k, cfg } => {
            let p = Prepared::load(&prepared)?;
            let config =
                p.config_with(cfg.config.as_deref(), &cfg.sets(Some(&prepared.join("coldstart"))))?;
            let ks = k.unwrap_or_else(|| config.coldstart_k.clone());
            let table = coldstart_prepared(&p, &config, &ks)?;
            print_out(&table.to_csv());
            Ok(())
        }
        Command::Analyze {
            prepared,
            checkpoint,
            bins,
            output_dir,
        } => {
            let p = Prepared::load(&prepared)?;
            let ck = Checkpoint::load(&checkpoint)?;
            let out = output_dir.unwrap_or_else(|| {
                checkpoint
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            let a = analyze_checkpoint(&p, &ck, bins.unwrap_or(p.config.analysis_bins), &out)?;
            emit(&serde_json::json!({
                "consistency": a.consistency,
                "pearson": a.relatedness.pearson,
                "bins": a.relatedness.bins.len(),
                "pairs": a.relatedness.num_pairs,
            }), None)
        }
        Command::Gradcheck {
            equivalence,
            seed,
            step,
            tolerance,
            out,
        } => {
            if equivalence {
                gradcheck_equivalence(seed, out.as_deref())
            } else {
                let cases = run_gradcheck(&gradcheck_battery_instances(seed)?, step, tolerance)?;
                for c in &cases {
                    eprintln!(
                        "gamma {:<4} beta {:<4} L {}  max rel {:.3e}  {}",
                        c.gamma,
                        c.beta,
                        c.layers,
                        c.report.max_rel_error,
                        if c.report.passed { "ok" } else { "FAIL" }
                    );
                }
                emit(&cases, out.as_deref())?;
                let failed = cases.iter().filter(|c| !c.report.passed).count();
                if failed > 0 {
                    return Err(Error::CheckFailed(format!("{failed} of {} gradient cases", cases.len())));
                }
                Ok(())
            }
        }
    }
}

fn gradcheck_equivalence(seed: u64, out: Option<&Path>) -> Result<()> {
    let report = run_battery(30, &[1, 8, 64], &[0.05, 0.5], 1e-10)?;
    let mut control = EquivalenceCase::new(12, 8, 0.5, seed, 8);
    control.gamma = 0.7;
    control.with_intrinsic = true;
    let control = check_thc_vs_hyperconv(&control)?;
    eprintln!(
        "{} cases, max deviation {:.3e}; negative control deviation {:.3e} ({})",
        report.outcomes.len(),
        report.max_deviation,
        control.max_deviation,
        if control.passed { "unexpectedly passed" } else { "fails as expected" }
    );
    emit(
        &serde_json::json!({ "battery": report, "negative_control": control }),
        out,
    )?;
    if !report.all_passed || control.passed {
        return Err(Error::CheckFailed("equivalence battery".into()));
    }
    Ok(())
}
