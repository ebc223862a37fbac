use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lowrank_online::commands::{self, RunOutput, ValidateSizes};
use lowrank_online::{load, CliError, Result};

#[derive(Parser)]
#[command(name = "lowrank-online", version, about = "Online low-rank matrix recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set schedule.alpha=-0.2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Raw byte file to use as channel pilot bits.
    #[arg(long)]
    bits_file: Option<PathBuf>,
}

impl Common {
    fn overrides(&self, extra: Vec<String>) -> Vec<String> {
        let mut all = self.set.clone();
        all.extend(extra);
        if let Some(t) = self.trials {
            all.push(format!("trials={t}"));
        }
        if let Some(s) = self.seed {
            all.push(format!("seed={s}"));
        }
        if let Some(o) = &self.out {
            all.push(format!("output_dir={}", json_string(&o.display().to_string())));
        }
        if let Some(b) = &self.bits_file {
            all.push(format!("channel.bits_file={}", json_string(&b.display().to_string())));
        }
        all
    }

    fn jobs(&self) -> usize {
        self.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
            .max(1)
    }
}

fn json_string(s: &str) -> String {
    serde_json::Value::String(s.to_owned()).to_string()
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    FullRank,
    LowRank,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte-Carlo campaign and write summary.json, trace.csv and
    /// config.resolved.json.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Run the asymptotic-normality diagnostic.
    Normality {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Compare the plain RLS estimate with the thresholded one.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of rls_only,two_stage.
        #[arg(long, default_value = "rls_only,two_stage")]
        stages: String,
    },
    /// Run the randomized property sweeps.
    Validate {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn print_summary(out: &RunOutput) {
    match out {
        RunOutput::Campaign(s) => {
            println!("{} campaign, {} trials, N = {}", s.kind.name(), s.trials, s.horizon);
            println!("{:<10} {:>12} {:>14} {:>10}", "stage", "ParaEstErr", "RankEstError", "NMSE dB");
            for (stage, m) in &s.metrics {
                println!(
                    "{:<10} {:>12.4e} {:>14.3} {:>10.2}",
                    stage, m.para_est_err, m.rank_est_error, m.nmse_db
                );
            }
        }
        RunOutput::Normality(s) => {
            println!(
                "normality ({:?}), {} trials, N = {}: covariance deviation {:.4}, max standardized mean {:.4}",
                s.metrics.mode, s.trials, s.horizon, s.metrics.covariance_deviation, s.metrics.max_standardized_mean
            );
        }
    }
}

fn execute(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { common } => {
            let cfg = load(common.config.as_deref(), &common.overrides(vec![]))?;
            let out = commands::run_experiment(&cfg, common.jobs())?;
            print_summary(&out);
            Ok(true)
        }
        Command::Normality { common, mode, d, n, horizon } => {
            let mut extra = vec!["kind=normality".to_owned()];
            if let Some(m) = mode {
                let name = match m {
                    Mode::FullRank => "full_rank",
                    Mode::LowRank => "low_rank",
                };
                extra.push(format!("normality.mode={name}"));
            }
            if let Some(d) = d {
                extra.push(format!("normality.d={d}"));
            }
            if let Some(n) = n {
                extra.push(format!("normality.n={n}"));
            }
            if let Some(h) = horizon {
                extra.push(format!("horizon={h}"));
            }
            let cfg = load(common.config.as_deref(), &common.overrides(extra))?;
            let summary = commands::run_normality(&cfg, common.jobs())?;
            print_summary(&RunOutput::Normality(summary));
            Ok(true)
        }
        Command::Compare { common, stages } => {
            let stages = stages
                .split(',')
                .filter(|s| !s.trim().is_empty())
                .map(commands::parse_stage)
                .collect::<Result<Vec<_>>>()?;
            let cfg = load(common.config.as_deref(), &common.overrides(vec![]))?;
            let rows = commands::compare(&cfg, &stages, common.jobs())?;
            println!("{:<10} {:>12} {:>14} {:>10}", "stage", "ParaEstErr", "RankEstError", "NMSE dB");
            for r in rows {
                println!(
                    "{:<10} {:>12.4e} {:>14.3} {:>10.2}",
                    r.stage.name(),
                    r.para_est_err,
                    r.rank_est_error,
                    r.nmse_db
                );
            }
            Ok(true)
        }
        Command::Validate { seed, out } => {
            let results = commands::validate(seed, ValidateSizes::default(), out.as_deref())?;
            let mut ok = true;
            for r in &results {
                ok &= r.passed();
                println!(
                    "{:<28} {:>6} cases  {:>4} violations  worst {:+.3e}  {}",
                    r.name,
                    r.cases,
                    r.violations,
                    r.worst,
                    if r.passed() { "ok" } else { "FAILED" }
                );
            }
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Core(inner) = &e {
                let mut source = std::error::Error::source(inner);
                while let Some(s) = source {
                    eprintln!("  caused by: {s}");
                    source = s.source();
                }
            }
            ExitCode::from(2)
        }
    }
}
