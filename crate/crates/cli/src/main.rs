use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pem_core::harness::{self, ExperimentConfig, ExperimentKind};
use pem_core::RecurrentPredictor;

#[derive(Parser)]
#[command(name = "pem", version, about = "Path evolution channel twin")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Fig5,
    Generalization,
    Track,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one run and write the measurement archive and ground truth.
    Simulate(Common),
    /// Extract path features from a measurement archive.
    Extract {
        #[command(flatten)]
        common: Common,
        /// Archive written by `simulate`; defaults to `<out>/measurements.pemm`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Track paths over one run and dump tracked and true path curves.
    Track(Common),
    /// Train the learned predictor.
    Train(Common),
    /// Evaluate PEM and the baselines at every configured SRS period.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Saved predictor to use instead of the config's.
        #[arg(long)]
        predictor: Option<PathBuf>,
    },
    /// Run a full experiment.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Overrides the config's `experiment` field.
        #[arg(long, value_enum)]
        kind: Option<Kind>,
    },
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config).with_context(|| format!("loading {}", c.config.display()))?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn print_rows(rows: &[harness::SummaryRow]) {
    for r in rows {
        println!("{:<8} {:>4} ms  {:<18} {:>8.2} dB  ({} instants, {} cold)", r.scene, r.period_ms, r.method, r.nmse_db, r.instants, r.cold);
    }
}

fn track(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let dump = harness::cmd_track_dump(cfg, out)?;
    for e in &dump.geo_events {
        println!("geometry {:>8.3} s  {} {}", e.t, if e.appeared { "birth" } else { "death" }, e.kind);
    }
    for e in &dump.track_events {
        println!(
            "tracker  {:>8.3} s  {} track {} ({})",
            e.t,
            if e.born { "birth" } else { "death" },
            e.id,
            e.kind.as_deref().unwrap_or("unlabelled")
        );
    }
    println!("max tracked delay deviation: {:.3} ns", dump.max_delay_dev_ns);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(c) => {
            let n = harness::cmd_simulate(&load(&c)?, &c.out)?;
            println!("{n} occasions written to {}", c.out.join("measurements.pemm").display());
        }
        Command::Extract { common: c, input } => {
            let input = input.unwrap_or_else(|| c.out.join("measurements.pemm"));
            let n = harness::cmd_extract(&load(&c)?, &input, &c.out)?;
            println!("{n} occasions extracted to {}", c.out.join("features.csv").display());
        }
        Command::Track(c) => track(&load(&c)?, &c.out)?,
        Command::Train(c) => {
            let rep = harness::cmd_train(&load(&c)?, &c.out)?;
            println!("loss {:.4} -> {:.4}", rep.initial_loss, rep.final_loss);
        }
        Command::Eval { common: c, predictor } => {
            let cfg = load(&c)?;
            std::fs::create_dir_all(&c.out)?;
            let learned = match predictor {
                Some(p) => Some(Arc::new(RecurrentPredictor::load(&p)?)),
                None => harness::learned_predictor(&cfg)?,
            };
            let res = harness::run_fig5(&cfg, learned)?;
            let summary = std::fs::File::create(c.out.join("eval_summary.csv"))?;
            harness::write_summary_csv(summary, &res.rows)?;
            for r in &res.reports {
                let stem = format!("{}_{}_{}ms", r.meta.scene, r.meta.method, (r.meta.srs_period_s * 1e3).round());
                r.write_all(&c.out.join("reports"), &stem)?;
            }
            print_rows(&res.rows);
        }
        Command::Experiment { common: c, kind } => {
            let cfg = load(&c)?;
            let kind = match (kind, cfg.experiment) {
                (Some(Kind::Fig5), _) => ExperimentKind::Fig5,
                (Some(Kind::Generalization), _) => ExperimentKind::Generalization,
                (Some(Kind::Track), _) => ExperimentKind::Track,
                (None, Some(k)) => k,
                (None, None) => bail!("config has no `experiment` field; pass --kind"),
            };
            match kind {
                ExperimentKind::Fig5 => print_rows(&harness::cmd_experiment_fig5(&cfg, &c.out)?.rows),
                ExperimentKind::Generalization => {
                    let res = harness::cmd_experiment_generalization(&cfg, &c.out)?;
                    print_rows(&res.rows);
                    println!(
                        "env-2 minus env-1: pem_learned {:+.2} dB, pem_learned_noaug {:+.2} dB, pem_kalman {:+.2} dB, toy_ckm {:+.2} dB",
                        res.pem_gap_db, res.pem_noaug_gap_db, res.kalman_gap_db, res.ckm_gap_db
                    );
                }
                ExperimentKind::Track => track(&cfg, &c.out)?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
