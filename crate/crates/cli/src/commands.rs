//! Command implementations. Each one computes everything in memory first
//! and writes its files only after the computation has succeeded.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lowrank_core::evaluation::suites::{
    perturbation_suite, proximal_suite, recursion_batch_suite, SuiteResult,
};
use lowrank_core::evaluation::{MetricsReport, NormalityDiagnostics};
use lowrank_core::experiments::{run_campaign, CampaignResult, Stage};

use crate::config::{ExperimentConfig, Kind};
use crate::error::{CliError, Result};

pub const SUMMARY_FILE: &str = "summary.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const RESOLVED_FILE: &str = "config.resolved.json";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const VALIDATE_FILE: &str = "validate.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub kind: Kind,
    pub trials: usize,
    pub horizon: usize,
    /// One report per stage, keyed by stage name.
    pub metrics: BTreeMap<String, MetricsReport>,
    pub config_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormalitySummary {
    pub kind: Kind,
    pub trials: usize,
    pub horizon: usize,
    pub metrics: NormalityDiagnostics,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub stage: Stage,
    pub para_est_err: f64,
    pub rank_est_error: f64,
    pub nmse: f64,
    pub nmse_db: f64,
}

/// Where a config's files go: `output_dir`, else `results/<kind>`.
pub fn output_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir
        .clone()
        .unwrap_or_else(|| Path::new("results").join(cfg.kind.name()))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

/// Write every file or none of them.
fn write_all(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
    let outcome = (|| {
        for (name, bytes) in files {
            let tmp = dir.join(format!(".{name}.partial"));
            staged.push((tmp.clone(), dir.join(name)));
            fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
        }
        for (tmp, dst) in &staged {
            fs::rename(tmp, dst).map_err(io_err(dst))?;
        }
        Ok(())
    })();
    if outcome.is_err() {
        for (tmp, dst) in &staged {
            let _ = fs::remove_file(tmp);
            let _ = fs::remove_file(dst);
        }
    }
    outcome
}

fn pretty<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn campaign(cfg: &ExperimentConfig, jobs: usize) -> Result<CampaignResult> {
    let experiment = cfg.experiment()?;
    Ok(run_campaign(&experiment, &cfg.settings(), cfg.trials, cfg.seed, jobs)?)
}

fn summarize(cfg: &ExperimentConfig, result: &CampaignResult) -> Result<Summary> {
    let mut metrics = BTreeMap::new();
    for stage in &cfg.stages {
        metrics.insert(stage.name().to_owned(), result.report(*stage)?);
    }
    Ok(Summary {
        kind: cfg.kind,
        trials: cfg.trials,
        horizon: cfg.horizon,
        metrics,
        config_hash: cfg.hash(),
    })
}

fn trace_csv(result: &CampaignResult) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in result.trace() {
        w.serialize(row)?;
    }
    if result.trace().next().is_none() {
        w.write_record(["trial", "N", "lambda", "ratio", "para_err", "rank_est", "raw_real_rank"])?;
    }
    w.into_inner().map_err(|e| CliError::Failed(format!("cannot finish trace CSV: {e}")))
}

pub enum RunOutput {
    Campaign(Summary),
    Normality(NormalitySummary),
}

/// `run`: summary.json, trace.csv and config.resolved.json.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<RunOutput> {
    if cfg.kind == Kind::Normality {
        return run_normality(cfg, jobs).map(RunOutput::Normality);
    }
    let result = campaign(cfg, jobs)?;
    let summary = summarize(cfg, &result)?;
    write_all(
        &output_dir(cfg),
        &[
            (SUMMARY_FILE, pretty(&summary)?),
            (TRACE_FILE, trace_csv(&result)?),
            (RESOLVED_FILE, pretty(cfg)?),
        ],
    )?;
    Ok(RunOutput::Campaign(summary))
}

/// `normality`: summary.json with the moment diagnostics, and
/// config.resolved.json.
pub fn run_normality(cfg: &ExperimentConfig, jobs: usize) -> Result<NormalitySummary> {
    if cfg.kind != Kind::Normality {
        return Err(CliError::Config(format!(
            "the normality command needs kind `normality`, got `{}`",
            cfg.kind.name()
        )));
    }
    let diagnostics = cfg
        .normality_experiment()?
        .run(&cfg.settings(), cfg.trials, cfg.seed, jobs)?;
    let summary = NormalitySummary {
        kind: cfg.kind,
        trials: cfg.trials,
        horizon: cfg.horizon,
        metrics: diagnostics,
        config_hash: cfg.hash(),
    };
    write_all(&output_dir(cfg), &[(SUMMARY_FILE, pretty(&summary)?), (RESOLVED_FILE, pretty(cfg)?)])?;
    Ok(summary)
}

/// `compare`: one row per stage, as CSV and JSON.
pub fn compare(cfg: &ExperimentConfig, stages: &[Stage], jobs: usize) -> Result<Vec<ComparisonRow>> {
    if stages.is_empty() {
        return Err(CliError::Config("compare needs at least one stage".into()));
    }
    if cfg.kind == Kind::Normality {
        return Err(CliError::Config("compare does not apply to normality runs".into()));
    }
    let result = campaign(cfg, jobs)?;
    let mut rows = Vec::with_capacity(stages.len());
    for &stage in stages {
        let r = result.report(stage)?;
        rows.push(ComparisonRow {
            stage,
            para_est_err: r.para_est_err,
            rank_est_error: r.rank_est_error,
            nmse: r.nmse,
            nmse_db: r.nmse_db,
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row)?;
    }
    let csv_bytes = w.into_inner().map_err(|e| CliError::Failed(format!("cannot finish CSV: {e}")))?;
    write_all(
        &output_dir(cfg),
        &[(COMPARISON_CSV, csv_bytes), (COMPARISON_JSON, pretty(&rows)?), (RESOLVED_FILE, pretty(cfg)?)],
    )?;
    Ok(rows)
}

pub fn parse_stage(s: &str) -> Result<Stage> {
    Stage::ALL
        .into_iter()
        .find(|st| st.name() == s.trim())
        .ok_or_else(|| CliError::Config(format!("unknown stage `{s}`; expected rls_only or two_stage")))
}

/// Sizes of the property sweeps run by `validate`.
#[derive(Debug, Clone, Copy)]
pub struct ValidateSizes {
    pub trajectories: usize,
    pub proximal_inputs: usize,
    pub perturbations: usize,
    pub pairs: usize,
}

impl Default for ValidateSizes {
    fn default() -> Self {
        Self { trajectories: 50, proximal_inputs: 50, perturbations: 100, pairs: 1000 }
    }
}

/// `validate`: the randomized property sweeps. Writes validate.json when
/// `out` is given.
pub fn validate(seed: u64, sizes: ValidateSizes, out: Option<&Path>) -> Result<Vec<SuiteResult>> {
    let results = vec![
        recursion_batch_suite(sizes.trajectories, seed)?,
        proximal_suite(sizes.proximal_inputs, sizes.perturbations, seed)?,
        perturbation_suite(sizes.pairs, seed)?,
    ];
    if let Some(dir) = out {
        write_all(dir, &[(VALIDATE_FILE, pretty(&results)?)])?;
    }
    Ok(results)
}
