//! Experiment configuration: JSON file plus `--set key=value` overrides,
//! merged over per-kind defaults.
//!
//! Keys of the kind's own block may also be given at the top level, so
//! `{"kind":"channel","snr_db":5}` means the same as
//! `{"kind":"channel","channel":{"snr_db":5}}`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use lowrank_core::channel::ChannelConfig;
use lowrank_core::datagen::StrConfig;
use lowrank_core::evaluation::NormalityMode;
use lowrank_core::experiments::{
    ChannelExperiment, Experiment, NormalityExperiment, PilotBits, RunSettings, Stage, StrExperiment,
    SyntheticExperiment,
};
use lowrank_core::LambdaSchedule;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Str,
    Channel,
    Synthetic,
    Normality,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Str => "str",
            Kind::Channel => "channel",
            Kind::Synthetic => "synthetic",
            Kind::Normality => "normality",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [Kind::Str, Kind::Channel, Kind::Synthetic, Kind::Normality]
            .into_iter()
            .find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrSection {
    pub dim: usize,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub noise_std: f64,
    pub ref_amplitude: f64,
    pub ref_period: usize,
    pub dither_halfwidth: f64,
    pub eps_bar: f64,
    pub regulator_mu: f64,
    pub rank: usize,
    pub entry_std: f64,
    pub obs_noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub d: usize,
    pub n: usize,
    pub num_paths: usize,
    pub snr_db: f64,
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub common_distance_m: f64,
    /// Raw byte file used as the pilot bit stream; seeded random bits when
    /// absent.
    pub bits_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub d: usize,
    pub n: usize,
    pub rank: usize,
    pub entry_std: f64,
    pub noise_std: f64,
    pub rho: f64,
    /// Variance growth exponent; 0 gives a stationary design.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalitySection {
    pub mode: NormalityMode,
    pub d: usize,
    pub n: usize,
    pub singular_values: Vec<f64>,
    pub noise_std: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub trials: usize,
    pub horizon: usize,
    pub mu: f64,
    pub seed: u64,
    pub recover_stride: usize,
    pub schedule: LambdaSchedule,
    pub stages: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub str: Option<StrSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<ChannelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normality: Option<NormalitySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

const COMMON_KEYS: [&str; 9] =
    ["kind", "trials", "horizon", "mu", "seed", "recover_stride", "schedule", "stages", "output_dir"];

/// Fully populated defaults for `kind`. The normality block depends on the
/// mode.
pub fn defaults(kind: Kind, mode: NormalityMode) -> Value {
    let both = json!(["rls_only", "two_stage"]);
    let mut value = match kind {
        Kind::Str => json!({
            "kind": "str", "trials": 20, "horizon": 4000, "mu": 10.0, "seed": 1,
            "recover_stride": 10, "stages": both,
            "schedule": {"variant": "power", "alpha": -0.1},
            "str": {
                "dim": 10, "a1": -1.7, "a2": 0.7, "b1": 1.0, "b2": 0.5, "noise_std": 0.5,
                "ref_amplitude": 10.0, "ref_period": 1000, "dither_halfwidth": 0.1,
                "eps_bar": 0.02, "regulator_mu": 1e4, "rank": 4, "entry_std": 2.0,
                "obs_noise_std": 0.5f64.sqrt()
            }
        }),
        Kind::Channel => {
            let c = ChannelConfig::default();
            json!({
                "kind": "channel", "trials": 20, "horizon": 256, "mu": 10.0, "seed": 1,
                "recover_stride": 16, "stages": both,
                "schedule": {"variant": "power", "alpha": 0.5},
                "channel": {
                    "d": c.d, "n": c.n, "num_paths": c.num_paths, "snr_db": c.snr_db,
                    "carrier_hz": c.carrier_hz, "subcarrier_spacing_hz": c.subcarrier_spacing_hz,
                    "common_distance_m": c.common_distance_m, "bits_file": null
                }
            })
        }
        Kind::Synthetic => json!({
            "kind": "synthetic", "trials": 20, "horizon": 4000, "mu": 10.0, "seed": 1,
            "recover_stride": 10, "stages": both,
            "schedule": {"variant": "ratio_power", "eps": 0.25},
            "synthetic": {
                "d": 12, "n": 8, "rank": 3, "entry_std": 1.0, "noise_std": 0.5,
                "rho": 0.0, "delta": 0.0
            }
        }),
        Kind::Normality => {
            let block = match mode {
                NormalityMode::FullRank => json!({
                    "mode": "full_rank", "d": 4, "n": 2, "singular_values": [200.0, 120.0],
                    "noise_std": 1.0, "rho": 0.0
                }),
                NormalityMode::LowRank => json!({
                    "mode": "low_rank", "d": 6, "n": 4, "singular_values": [200.0, 120.0],
                    "noise_std": 1.0, "rho": 0.5
                }),
            };
            json!({
                "kind": "normality", "trials": 400, "horizon": 2000, "mu": 1e4, "seed": 1,
                "recover_stride": 2000, "stages": ["two_stage"],
                "schedule": {"variant": "ratio_power", "eps": 0.25},
                "normality": block
            })
        }
    };
    value["output_dir"] = Value::Null;
    value
}

/// An override such as `schedule.alpha=-0.2`. The value is read as JSON
/// when it parses and as a plain string otherwise.
pub fn parse_override(s: &str) -> Result<(Vec<String>, Value)> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{s}` is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override `{s}` has an empty key segment")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_owned()));
    Ok((path, value))
}

fn join(path: &[&str]) -> String {
    path.join(".")
}

/// Merge `user` into `base`, rejecting keys that `base` does not have.
fn merge(base: &mut Value, user: &Value, path: &mut Vec<String>) -> Result<()> {
    let (Value::Object(b), Value::Object(u)) = (&mut *base, user) else {
        *base = user.clone();
        return Ok(());
    };
    for (key, value) in u {
        path.push(key.clone());
        let is_schedule = path.len() == 1 && key == "schedule";
        match b.get_mut(key) {
            Some(slot) if is_schedule => merge_schedule(slot, value, path)?,
            Some(slot) if slot.is_object() && value.is_object() => merge(slot, value, path)?,
            Some(slot) => *slot = value.clone(),
            None => {
                let shown: Vec<&str> = path.iter().map(String::as_str).collect();
                return Err(CliError::Config(format!("unknown key `{}`", join(&shown))));
            }
        }
        path.pop();
    }
    Ok(())
}

/// A schedule switch to another variant drops the old variant's parameter.
fn merge_schedule(slot: &mut Value, user: &Value, path: &mut Vec<String>) -> Result<()> {
    let Value::Object(u) = user else {
        return Err(CliError::Config("`schedule` must be an object".into()));
    };
    let mut merged = match (slot.get("variant"), u.get("variant")) {
        (Some(old), Some(new)) if old != new => json!({ "variant": new }),
        _ => slot.clone(),
    };
    let Value::Object(m) = &mut merged else { unreachable!("schedule defaults are objects") };
    for (key, value) in u {
        if !matches!(key.as_str(), "variant" | "alpha" | "eps") {
            return Err(CliError::Config(format!("unknown key `{}.{key}`", path.join("."))));
        }
        m.insert(key.clone(), value.clone());
    }
    *slot = merged;
    Ok(())
}

/// Move top-level keys that belong to the kind's block into it.
fn hoist_flat_keys(user: &mut Map<String, Value>, kind: Kind, defaults: &Value) {
    let Some(Value::Object(block)) = defaults.get(kind.name()) else { return };
    let flat: Vec<String> = user
        .keys()
        .filter(|k| !COMMON_KEYS.contains(&k.as_str()) && k.as_str() != kind.name() && block.contains_key(*k))
        .cloned()
        .collect();
    if flat.is_empty() {
        return;
    }
    let mut moved = Map::new();
    for k in flat {
        if let Some(v) = user.remove(&k) {
            moved.insert(k, v);
        }
    }
    match user.get_mut(kind.name()) {
        Some(Value::Object(existing)) => {
            for (k, v) in moved {
                existing.entry(k).or_insert(v);
            }
        }
        _ => {
            user.insert(kind.name().to_owned(), Value::Object(moved));
        }
    }
}

fn mode_hint(user: &Map<String, Value>) -> Result<NormalityMode> {
    let raw = user
        .get("normality")
        .and_then(|b| b.get("mode"))
        .or_else(|| user.get("mode"));
    match raw {
        None => Ok(NormalityMode::FullRank),
        Some(v) => parse_mode(v.as_str().unwrap_or_default()).ok_or_else(|| {
            CliError::Config(format!("`normality.mode` must be full_rank or low_rank, got {v}"))
        }),
    }
}

pub fn parse_mode(s: &str) -> Option<NormalityMode> {
    match s.replace('-', "_").as_str() {
        "full_rank" => Some(NormalityMode::FullRank),
        "low_rank" => Some(NormalityMode::LowRank),
        _ => None,
    }
}

/// Resolve a config from an optional file body and ordered overrides.
pub fn resolve(file: Option<&str>, overrides: &[(Vec<String>, Value)]) -> Result<ExperimentConfig> {
    let mut user = match file {
        Some(text) => match serde_json::from_str::<Value>(text)
            .map_err(|e| CliError::Config(format!("config is not valid JSON: {e}")))?
        {
            Value::Object(m) => m,
            _ => return Err(CliError::Config("config must be a JSON object".into())),
        },
        None => Map::new(),
    };
    for (path, value) in overrides {
        let mut layer = Value::Object(std::mem::take(&mut user));
        let mut path_buf = Vec::new();
        deep_set(&mut layer, path, value.clone(), &mut path_buf)?;
        let Value::Object(m) = layer else { unreachable!() };
        user = m;
    }

    let kind_name = match user.get("kind") {
        Some(Value::String(s)) => s.clone(),
        Some(other) => return Err(CliError::Config(format!("`kind` must be a string, got {other}"))),
        None => return Err(CliError::Config("missing `kind` (str, channel, synthetic or normality)".into())),
    };
    let kind = Kind::parse(&kind_name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown kind `{kind_name}`; expected str, channel, synthetic or normality"
        ))
    })?;
    let mode = if kind == Kind::Normality { mode_hint(&user)? } else { NormalityMode::FullRank };
    let mut resolved = defaults(kind, mode);
    if kind == Kind::Normality {
        if let Some(m) = user.remove("mode") {
            if let Some(block) = user.entry("normality").or_insert_with(|| json!({})).as_object_mut() {
                block.insert("mode".into(), m);
            }
        }
    }
    hoist_flat_keys(&mut user, kind, &resolved);
    merge(&mut resolved, &Value::Object(user), &mut Vec::new())?;

    let cfg: ExperimentConfig = serde_path_to_error::deserialize(resolved)
        .map_err(|e| CliError::Config(format!("`{}`: {}", e.path(), e.inner())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Insert `value` at `path`, creating intermediate objects.
fn deep_set(target: &mut Value, path: &[String], value: Value, seen: &mut Vec<String>) -> Result<()> {
    let Value::Object(m) = target else {
        return Err(CliError::Config(format!("`{}` is not an object", seen.join("."))));
    };
    let (head, rest) = path.split_first().expect("override paths are non-empty");
    if rest.is_empty() {
        m.insert(head.clone(), value);
        return Ok(());
    }
    seen.push(head.clone());
    let slot = m.entry(head.clone()).or_insert_with(|| Value::Object(Map::new()));
    if slot.is_null() {
        *slot = Value::Object(Map::new());
    }
    deep_set(slot, rest, value, seen)
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = match path {
        Some(p) => Some(
            std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?,
        ),
        None => None,
    };
    let parsed = overrides.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    resolve(text.as_deref(), &parsed)
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("`{name}` must be positive and finite, got {v}")))
    }
}

fn nonnegative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("`{name}` must be nonnegative and finite, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(CliError::Config("`trials` must be at least 1".into()));
        }
        if self.horizon == 0 {
            return Err(CliError::Config("`horizon` must be at least 1".into()));
        }
        if self.recover_stride == 0 {
            return Err(CliError::Config("`recover_stride` must be at least 1".into()));
        }
        positive("mu", self.mu)?;
        self.schedule
            .validate()
            .map_err(|e| CliError::Config(format!("`schedule`: {e}")))?;
        if self.stages.is_empty() {
            return Err(CliError::Config("`stages` must name at least one stage".into()));
        }
        match self.kind {
            Kind::Str => {
                let s = self.str.as_ref().expect("kind block is always filled");
                if s.dim == 0 || s.rank == 0 || s.rank > 4 * s.dim {
                    return Err(CliError::Config(format!(
                        "`str.rank` must lie in 1..={} and `str.dim` must be positive",
                        4 * s.dim
                    )));
                }
                positive("str.entry_std", s.entry_std)?;
                positive("str.regulator_mu", s.regulator_mu)?;
                nonnegative("str.obs_noise_std", s.obs_noise_std)?;
                self.str_experiment()?
                    .plant
                    .validate()
                    .map_err(|e| CliError::Config(format!("`str`: {e}")))?;
            }
            Kind::Channel => {
                let c = self.channel.as_ref().expect("kind block is always filled");
                self.channel_config(c)
                    .validate()
                    .map_err(|e| CliError::Config(format!("`channel`: {e}")))?;
            }
            Kind::Synthetic => {
                let s = self.synthetic.as_ref().expect("kind block is always filled");
                if s.n == 0 || s.d < s.n || s.rank == 0 || s.rank > s.n {
                    return Err(CliError::Config(format!(
                        "`synthetic` needs d ≥ n ≥ rank ≥ 1, got d={}, n={}, rank={}",
                        s.d, s.n, s.rank
                    )));
                }
                positive("synthetic.entry_std", s.entry_std)?;
                nonnegative("synthetic.noise_std", s.noise_std)?;
                if !(s.rho > -1.0 && s.rho < 1.0) {
                    return Err(CliError::Config(format!("`synthetic.rho` must lie in (−1, 1), got {}", s.rho)));
                }
                if !(0.0..1.0).contains(&s.delta) {
                    return Err(CliError::Config(format!("`synthetic.delta` must lie in [0, 1), got {}", s.delta)));
                }
            }
            Kind::Normality => {
                let s = self.normality.as_ref().expect("kind block is always filled");
                if s.n == 0 || s.d < s.n {
                    return Err(CliError::Config(format!(
                        "`normality` needs d ≥ n ≥ 1, got d={}, n={}",
                        s.d, s.n
                    )));
                }
                if !(s.rho > -1.0 && s.rho < 1.0) {
                    return Err(CliError::Config(format!("`normality.rho` must lie in (−1, 1), got {}", s.rho)));
                }
                self.normality_experiment()?
                    .validate()
                    .map_err(|e| CliError::Config(format!("`normality`: {e}")))?;
                if self.trials < lowrank_core::evaluation::MIN_NORMALITY_SAMPLES {
                    return Err(CliError::Config(format!(
                        "normality runs need at least {} trials",
                        lowrank_core::evaluation::MIN_NORMALITY_SAMPLES
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn settings(&self) -> RunSettings {
        RunSettings {
            horizon: self.horizon,
            mu: self.mu,
            schedule: self.schedule,
            stride: self.recover_stride,
        }
    }

    fn channel_config(&self, c: &ChannelSection) -> ChannelConfig {
        ChannelConfig {
            d: c.d,
            n: c.n,
            num_paths: c.num_paths,
            snr_db: c.snr_db,
            path_gain_seed: self.seed,
            angle_seed: self.seed,
            carrier_hz: c.carrier_hz,
            subcarrier_spacing_hz: c.subcarrier_spacing_hz,
            common_distance_m: c.common_distance_m,
        }
    }

    fn str_experiment(&self) -> Result<StrExperiment> {
        let s = self
            .str
            .as_ref()
            .ok_or_else(|| CliError::Config("missing `str` block".into()))?;
        let mut plant = StrConfig::scalar_plant(s.dim, s.a1, s.a2, s.b1, s.b2);
        plant.noise_std = s.noise_std;
        plant.ref_amplitude = s.ref_amplitude;
        plant.ref_period = s.ref_period;
        plant.dither_halfwidth = s.dither_halfwidth;
        plant.eps_bar = s.eps_bar;
        plant.regulator_mu = s.regulator_mu;
        Ok(StrExperiment { plant, rank: s.rank, entry_std: s.entry_std, obs_noise_std: s.obs_noise_std })
    }

    pub fn normality_experiment(&self) -> Result<NormalityExperiment> {
        let s = self
            .normality
            .as_ref()
            .ok_or_else(|| CliError::Config("missing `normality` block".into()))?;
        Ok(NormalityExperiment {
            mode: s.mode,
            d: s.d,
            n: s.n,
            singular_values: s.singular_values.clone(),
            noise_std: s.noise_std,
            rho: s.rho,
        })
    }

    /// The campaign this config describes. Reads the pilot file if one is
    /// configured.
    pub fn experiment(&self) -> Result<Experiment> {
        match self.kind {
            Kind::Str => Ok(Experiment::Str(self.str_experiment()?)),
            Kind::Channel => {
                let c = self.channel.as_ref().ok_or_else(|| CliError::Config("missing `channel` block".into()))?;
                let pilots = match &c.bits_file {
                    None => PilotBits::Random,
                    Some(p) => PilotBits::Bytes(std::sync::Arc::new(std::fs::read(p).map_err(|e| {
                        CliError::Config(format!("cannot read pilot file {}: {e}", p.display()))
                    })?)),
                };
                Ok(Experiment::Channel(ChannelExperiment { channel: self.channel_config(c), pilots }))
            }
            Kind::Synthetic => {
                let s = self.synthetic.as_ref().ok_or_else(|| CliError::Config("missing `synthetic` block".into()))?;
                Ok(Experiment::Synthetic(SyntheticExperiment {
                    d: s.d,
                    n: s.n,
                    rank: s.rank,
                    entry_std: s.entry_std,
                    noise_std: s.noise_std,
                    rho: s.rho,
                    delta: s.delta,
                }))
            }
            Kind::Normality => Err(CliError::Config(
                "normality configs run through the `normality` command".into(),
            )),
        }
    }

    /// Canonical JSON (sorted keys) of everything except the output
    /// location.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("output_dir");
        }
        serde_json::to_string(&v).expect("value serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
