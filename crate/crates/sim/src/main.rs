use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use robust_wmmse_sim::config::Config;
use robust_wmmse_sim::experiment::run_experiment;
use robust_wmmse_sim::flops::{kernel_counts, measured_rows, model_rows, write_flops};
use robust_wmmse_sim::report::{num, write_report, write_timings, writer};
use robust_wmmse_sim::training::{load_policy, save_policy, train, write_trace};
use robust_wmmse_sim::{config::Algorithm, selftest};

#[derive(Parser)]
#[command(name = "rwmmse", version, about = "Robust WMMSE precoding simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate every configured algorithm over the (K, SNR, seed, block) grid.
    Run(Common),
    /// Train a depth and compensation policy.
    Train(Common),
    /// Complexity table, optionally with instrumented counts.
    Flops(Common),
    /// Quick numerical self-checks.
    Selftest,
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Count multiply-accumulates in every kernel.
    #[arg(long)]
    instrument_flops: bool,
}

impl Common {
    fn setup(&self) -> Result<Config> {
        if let Some(n) = self.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global()
                .context("configuring the thread pool")?;
        }
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        Ok(cfg)
    }
}

fn cmd_run(a: &Common) -> Result<()> {
    let cfg = a.setup()?;
    let policy = match (
        &cfg.checkpoint,
        cfg.algorithms()?.contains(&Algorithm::Rlddu),
    ) {
        (Some(p), true) => Some(load_policy(p)?),
        _ => None,
    };
    let rows = run_experiment(&cfg, policy.as_ref(), a.instrument_flops)?;
    let report = a.out.join("report.csv");
    write_report(&report, &rows)?;
    if cfg.timings {
        write_timings(&a.out.join("timings.csv"), &rows)?;
    }
    println!("{} rows -> {}", rows.len(), report.display());
    Ok(())
}

fn write_summary(path: &Path, fields: &[(&str, String)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(fields.iter().map(|f| f.0))?;
    w.write_record(fields.iter().map(|f| f.1.as_str()))?;
    w.flush()?;
    Ok(())
}

fn cmd_train(a: &Common) -> Result<()> {
    let cfg = a.setup()?;
    let run = train(&cfg, cfg.seed)?;
    save_policy(&a.out.join("policy.ckpt"), &run.output.params)?;
    write_trace(&a.out.join("train_trace.csv"), &run.output.trace)?;
    let (first, last) = run.trend;
    write_summary(
        &a.out.join("train_summary.csv"),
        &[
            ("seed", cfg.seed.to_string()),
            ("episodes", cfg.episodes.to_string()),
            ("first_10pct_reward", num(first)),
            ("last_10pct_reward", num(last)),
            ("skipped", run.output.skipped().to_string()),
        ],
    )?;
    println!(
        "trained {} episodes: mean reward {first:.4} (first 10%) -> {last:.4} (last 10%), {} skipped",
        cfg.episodes,
        run.output.skipped()
    );
    Ok(())
}

fn cmd_flops(a: &Common) -> Result<()> {
    let cfg = a.setup()?;
    let mut rows = model_rows(&cfg)?;
    if a.instrument_flops {
        rows.extend(measured_rows(&cfg, 0)?);
        let k = kernel_counts(&cfg, 0)?;
        println!(
            "gram pruned/dense {:.4} (model {:.4}), inverse structured/dense {:.4} (model {:.4})",
            k.gram_ratio(),
            k.gram_model(),
            k.inverse_ratio(),
            k.inverse_model()
        );
    }
    for r in rows
        .iter()
        .filter(|r| r.module == "model" && r.op == "total")
    {
        println!("{:<10} {:.3e}", r.algo, r.formula_value.unwrap_or(f64::NAN));
    }
    write_flops(&a.out.join("flops.csv"), &rows)
}

fn cmd_selftest() -> Result<()> {
    let checks = selftest::run_all();
    for ch in &checks {
        println!("{}", ch.line());
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    anyhow::ensure!(failed == 0, "{failed} self-check(s) failed");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Flops(a) => cmd_flops(a),
        Cmd::Selftest => cmd_selftest(),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
