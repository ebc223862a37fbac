//! Trial runners for the closed-loop, channel, synthetic and normality
//! experiments.
//!
//! Every trial feeds one stream of `(φ, y)` pairs to a fresh [`RlsState`],
//! thresholds the running estimate every `stride` observations, and scores
//! both the plain RLS estimate and the thresholded one at the horizon.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{
    build_channel, channel_observe, extract_complex_estimate, realify_system, ChannelConfig,
    PilotSource,
};
use crate::datagen::{lowrank_observe, make_lowrank_target, GaussianRegressors, LowRankTarget, StrConfig, StrState};
use crate::error::{Error, Result};
use crate::evaluation::{
    error_rate_probe, monte_carlo, normality_check, normality_statistic, MetricsReport,
    NormalityDiagnostics, NormalityMode, NormalityPlan, RatePoint, TrialMetrics,
};
use crate::recovery::{numerical_rank, recover, LambdaSchedule, RecoveryOutput, RlsState};
use crate::rng::{self, derive_seed};

// stream labels for per-trial randomness
const TARGET_STREAM: u64 = 100;
const REGRESSOR_STREAM: u64 = 101;
const NOISE_STREAM: u64 = 102;
const GAIN_STREAM: u64 = 103;
const ANGLE_STREAM: u64 = 104;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// The unconstrained recursive least-squares estimate.
    RlsOnly,
    /// RLS followed by adaptive weighted soft-thresholding.
    TwoStage,
}

impl Stage {
    pub const ALL: [Stage; 2] = [Stage::RlsOnly, Stage::TwoStage];

    pub fn name(self) -> &'static str {
        match self {
            Stage::RlsOnly => "rls_only",
            Stage::TwoStage => "two_stage",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub horizon: usize,
    pub mu: f64,
    pub schedule: LambdaSchedule,
    /// Threshold the running estimate every `stride` observations.
    pub stride: usize,
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::param("horizon must be at least 1"));
        }
        if self.stride == 0 {
            return Err(Error::param("recover_stride must be at least 1"));
        }
        if !(self.mu > 0.0) || !self.mu.is_finite() {
            return Err(Error::param(format!("mu must be positive and finite, got {}", self.mu)));
        }
        self.schedule.validate()
    }
}

/// One thresholding checkpoint of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub trial: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub lambda: f64,
    pub ratio: f64,
    pub para_err: f64,
    pub rank_est: usize,
    pub raw_real_rank: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub rls_only: TrialMetrics,
    pub two_stage: TrialMetrics,
    /// Rank reported for the plain RLS estimate.
    pub rls_rank: usize,
    pub two_stage_rank: usize,
    pub trace: Vec<TraceRow>,
}

impl TrialOutcome {
    pub fn metrics(&self, stage: Stage) -> TrialMetrics {
        match stage {
            Stage::RlsOnly => self.rls_only,
            Stage::TwoStage => self.two_stage,
        }
    }
}

/// How a real parameter estimate is scored against the truth.
trait Scorer {
    /// Returns the metrics, the rank estimate on the scale of the true rank,
    /// and the raw real-valued rank when it differs from that scale.
    fn score(&self, x: &DMatrix<f64>, raw_rank: usize) -> Result<(TrialMetrics, usize, Option<usize>)>;
}

struct RealScorer<'a> {
    theta: &'a DMatrix<f64>,
    rank: usize,
}

impl Scorer for RealScorer<'_> {
    fn score(&self, x: &DMatrix<f64>, raw_rank: usize) -> Result<(TrialMetrics, usize, Option<usize>)> {
        Ok((TrialMetrics::of(x, self.theta, raw_rank, self.rank)?, raw_rank, None))
    }
}

struct ComplexScorer<'a> {
    h: &'a DMatrix<Complex64>,
    rank: usize,
}

impl Scorer for ComplexScorer<'_> {
    fn score(&self, x: &DMatrix<f64>, raw_rank: usize) -> Result<(TrialMetrics, usize, Option<usize>)> {
        let est = extract_complex_estimate(x, raw_rank)?;
        let m = TrialMetrics::of(&est.h_hat, self.h, est.complex_rank_est, self.rank)?;
        Ok((m, est.complex_rank_est, Some(raw_rank)))
    }
}

fn drive<F>(
    settings: &RunSettings,
    trial: usize,
    state: &mut RlsState,
    scorer: &dyn Scorer,
    mut next_pair: F,
) -> Result<TrialOutcome>
where
    F: FnMut() -> Result<(DVector<f64>, DVector<f64>)>,
{
    settings.validate()?;
    let mut trace = Vec::with_capacity(settings.horizon / settings.stride);
    let mut last: Option<RecoveryOutput> = None;
    for k in 1..=settings.horizon {
        let (phi, y) = next_pair()?;
        state.update(&phi, &y)?;
        let checkpoint = k % settings.stride == 0;
        if checkpoint || k == settings.horizon {
            let out = recover(&*state, &settings.schedule)?;
            if checkpoint {
                let (m, rank, raw) = scorer.score(&out.x, out.rank_est)?;
                trace.push(TraceRow {
                    trial,
                    n: k,
                    lambda: out.lambda_used,
                    ratio: out.excitation.ratio,
                    para_err: m.para_err,
                    rank_est: rank,
                    raw_real_rank: raw,
                });
            }
            if k == settings.horizon {
                last = Some(out);
            }
        }
    }
    let out = last.ok_or_else(|| Error::param("horizon must be at least 1"))?;
    let (two_stage, two_stage_rank, _) = scorer.score(&out.x, out.rank_est)?;
    let rls_raw = numerical_rank(out.sigma().as_slice());
    let (rls_only, rls_rank, _) = scorer.score(state.theta_hat(), rls_raw)?;
    Ok(TrialOutcome { rls_only, two_stage, rls_rank, two_stage_rank, trace })
}

/// Low-rank target observed along a self-tuning-regulator trajectory.
#[derive(Debug, Clone)]
pub struct StrExperiment {
    pub plant: StrConfig,
    pub rank: usize,
    pub entry_std: f64,
    pub obs_noise_std: f64,
}

impl StrExperiment {
    pub fn dim(&self) -> usize {
        self.plant.regressor_dim()
    }

    pub fn run_trial(&self, settings: &RunSettings, trial: usize, seed: u64) -> Result<TrialOutcome> {
        let d = self.dim();
        let target = make_lowrank_target(d, d, self.rank, self.entry_std, derive_seed(seed, TARGET_STREAM))?;
        let mut loop_state = StrState::new(&self.plant)?;
        let mut plant_rng = rng::stream(seed, REGRESSOR_STREAM);
        let mut noise_rng = rng::stream(seed, NOISE_STREAM);
        let mut state = RlsState::new(d, d, settings.mu)?;
        let scorer = RealScorer { theta: &target.theta, rank: self.rank };
        drive(settings, trial, &mut state, &scorer, || {
            let phi = loop_state.step(&self.plant, &mut plant_rng)?;
            let y = lowrank_observe(&target.theta, &phi, self.obs_noise_std, &mut noise_rng)?;
            Ok((phi, y))
        })
    }
}

#[derive(Debug, Clone)]
pub enum PilotBits {
    Random,
    /// A fixed byte stream; trial `t` starts at pilot `t · horizon`.
    Bytes(Arc<Vec<u8>>),
}

/// Rank-one multipath channel estimated from QAM pilots.
#[derive(Debug, Clone)]
pub struct ChannelExperiment {
    /// The per-trial path seeds are derived from the trial seed; the seeds in
    /// this template are ignored.
    pub channel: ChannelConfig,
    pub pilots: PilotBits,
}

impl ChannelExperiment {
    pub fn run_trial(&self, settings: &RunSettings, trial: usize, seed: u64) -> Result<TrialOutcome> {
        let cfg = ChannelConfig {
            path_gain_seed: derive_seed(seed, GAIN_STREAM),
            angle_seed: derive_seed(seed, ANGLE_STREAM),
            ..self.channel.clone()
        };
        let channel = build_channel(&cfg)?;
        let mut pilots = match &self.pilots {
            PilotBits::Random => PilotSource::random(cfg.d, seed),
            PilotBits::Bytes(bytes) => PilotSource::from_bytes(bytes, cfg.d, trial.wrapping_mul(settings.horizon))?,
        };
        let mut noise_rng = rng::stream(seed, NOISE_STREAM);
        let mut state = RlsState::new(2 * cfg.d, 2 * cfg.n, settings.mu)?;
        let scorer = ComplexScorer { h: &channel.h, rank: channel.complex_rank };
        drive(settings, trial, &mut state, &scorer, || {
            let x = pilots.next_pilot();
            let y = channel_observe(&channel, &x, cfg.snr_db, &mut noise_rng)?;
            realify_system(&x, &y)
        })
    }
}

/// Gaussian regressors `φ_k ~ N(0, k^δ Σ)` with `Σ_ij = ρ^|i−j|`.
#[derive(Debug, Clone)]
pub struct SyntheticExperiment {
    pub d: usize,
    pub n: usize,
    pub rank: usize,
    pub entry_std: f64,
    pub noise_std: f64,
    pub rho: f64,
    pub delta: f64,
}

/// `Σ_ij = ρ^|i−j|`.
pub fn toeplitz_covariance(d: usize, rho: f64) -> Result<DMatrix<f64>> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::param(format!("rho must lie in (−1, 1), got {rho}")));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rho.powi(i.abs_diff(j) as i32)))
}

impl SyntheticExperiment {
    fn parts(&self, seed: u64) -> Result<(LowRankTarget, GaussianRegressors)> {
        let target = make_lowrank_target(self.d, self.n, self.rank, self.entry_std, derive_seed(seed, TARGET_STREAM))?;
        let gen = GaussianRegressors::growing(&toeplitz_covariance(self.d, self.rho)?, self.delta)?;
        Ok((target, gen))
    }

    pub fn run_trial(&self, settings: &RunSettings, trial: usize, seed: u64) -> Result<TrialOutcome> {
        let (target, gen) = self.parts(seed)?;
        let mut reg_rng = rng::stream(seed, REGRESSOR_STREAM);
        let mut noise_rng = rng::stream(seed, NOISE_STREAM);
        let mut state = RlsState::new(self.d, self.n, settings.mu)?;
        let scorer = RealScorer { theta: &target.theta, rank: self.rank };
        let mut k = 0;
        drive(settings, trial, &mut state, &scorer, || {
            k += 1;
            let phi = gen.sample(k, &mut reg_rng);
            let y = lowrank_observe(&target.theta, &phi, self.noise_std, &mut noise_rng)?;
            Ok((phi, y))
        })
    }

    /// Error of one trajectory at each horizon in `grid`.
    pub fn rate_probe(&self, settings: &RunSettings, grid: &[usize], seed: u64) -> Result<Vec<RatePoint>> {
        settings.validate()?;
        let (target, gen) = self.parts(seed)?;
        let mut reg_rng = rng::stream(seed, REGRESSOR_STREAM);
        let mut noise_rng = rng::stream(seed, NOISE_STREAM);
        let mut state = RlsState::new(self.d, self.n, settings.mu)?;
        error_rate_probe(grid, &target.theta, |horizon| {
            while state.n_obs() < horizon {
                let phi = gen.sample(state.n_obs() + 1, &mut reg_rng);
                let y = lowrank_observe(&target.theta, &phi, self.noise_std, &mut noise_rng)?;
                state.update(&phi, &y)?;
            }
            let out = recover(&state, &settings.schedule)?;
            Ok((out.x, out.excitation))
        })
    }
}

#[derive(Debug, Clone)]
pub enum Experiment {
    Str(StrExperiment),
    Channel(ChannelExperiment),
    Synthetic(SyntheticExperiment),
}

impl Experiment {
    pub fn run_trial(&self, settings: &RunSettings, trial: usize, seed: u64) -> Result<TrialOutcome> {
        match self {
            Experiment::Str(e) => e.run_trial(settings, trial, seed),
            Experiment::Channel(e) => e.run_trial(settings, trial, seed),
            Experiment::Synthetic(e) => e.run_trial(settings, trial, seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    pub outcomes: Vec<TrialOutcome>,
}

impl CampaignResult {
    pub fn report(&self, stage: Stage) -> Result<MetricsReport> {
        MetricsReport::from_trials(self.outcomes.iter().map(|o| o.metrics(stage)).collect())
    }

    pub fn ranks(&self, stage: Stage) -> Vec<usize> {
        self.outcomes
            .iter()
            .map(|o| match stage {
                Stage::RlsOnly => o.rls_rank,
                Stage::TwoStage => o.two_stage_rank,
            })
            .collect()
    }

    pub fn trace(&self) -> impl Iterator<Item = &TraceRow> {
        self.outcomes.iter().flat_map(|o| o.trace.iter())
    }
}

pub fn run_campaign(
    experiment: &Experiment,
    settings: &RunSettings,
    trials: usize,
    master_seed: u64,
    jobs: usize,
) -> Result<CampaignResult> {
    settings.validate()?;
    let outcomes = monte_carlo(trials, master_seed, jobs, |i, seed| experiment.run_trial(settings, i, seed))?;
    Ok(CampaignResult { outcomes })
}

/// Repeated trajectories against a fixed target, scored with the scaled
/// error statistic of the limiting Gaussian law.
#[derive(Debug, Clone)]
pub struct NormalityExperiment {
    pub mode: NormalityMode,
    pub d: usize,
    pub n: usize,
    /// Nonzero singular values of `Θ`; their count is the rank.
    pub singular_values: Vec<f64>,
    pub noise_std: f64,
    /// Regressor covariance `Σ_ij = ρ^|i−j|`.
    pub rho: f64,
}

impl NormalityExperiment {
    pub fn validate(&self) -> Result<()> {
        let r = self.singular_values.len();
        match self.mode {
            NormalityMode::FullRank if r != self.n => Err(Error::param(format!(
                "full-rank mode needs {} singular values, got {r}",
                self.n
            ))),
            NormalityMode::LowRank if r >= self.n => Err(Error::param(format!(
                "low-rank mode needs fewer than {} singular values, got {r}",
                self.n
            ))),
            _ if !(self.noise_std > 0.0) => Err(Error::param("noise_std must be positive")),
            _ => Ok(()),
        }
    }

    pub fn run(
        &self,
        settings: &RunSettings,
        trials: usize,
        master_seed: u64,
        jobs: usize,
    ) -> Result<NormalityDiagnostics> {
        self.validate()?;
        settings.validate()?;
        let target = LowRankTarget::with_spectrum(
            self.d,
            self.n,
            &self.singular_values,
            derive_seed(master_seed, TARGET_STREAM),
        )?;
        let cov = toeplitz_covariance(self.d, self.rho)?;
        let gen = GaussianRegressors::stationary(&cov)?;
        let sigma2 = self.noise_std * self.noise_std;
        let r = target.r;
        let plan = match self.mode {
            NormalityMode::FullRank => NormalityPlan::full_rank(&DMatrix::identity(self.d, self.d), self.n, sigma2)?,
            NormalityMode::LowRank => {
                NormalityPlan::low_rank(&cov, settings.horizon, target.left_basis(), self.n, sigma2)?
            }
        };

        let samples = monte_carlo(trials, master_seed, jobs, |_, seed| {
            let mut reg_rng = rng::stream(seed, REGRESSOR_STREAM);
            let mut noise_rng = rng::stream(seed, NOISE_STREAM);
            let mut state = RlsState::new(self.d, self.n, settings.mu)?;
            let mut gram = DMatrix::zeros(self.d, self.d);
            for k in 1..=settings.horizon {
                let phi = gen.sample(k, &mut reg_rng);
                let y = lowrank_observe(&target.theta, &phi, self.noise_std, &mut noise_rng)?;
                gram.ger(1.0, &phi, &phi, 1.0);
                state.update(&phi, &y)?;
            }
            let out = recover(&state, &settings.schedule)?;
            match self.mode {
                NormalityMode::FullRank => {
                    let trial_plan = NormalityPlan::full_rank(&gram, self.n, sigma2)?;
                    normality_statistic(&out.x, &target.theta, &trial_plan, None)
                }
                NormalityMode::LowRank => {
                    let u1_hat = out.leading_left(r);
                    normality_statistic(&out.x, &target.theta, &plan, Some(&u1_hat))
                }
            }
        })?;
        normality_check(&samples, &plan)
    }
}
