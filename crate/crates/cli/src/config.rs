//! Run configuration: one TOML file plus `key=value` overrides.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use topsim::baselines::AcoParams;
use topsim::simenv::EnvConfig;
use topsim::trainer::TrainConfig;

use crate::error::{CliError, CliResult};

/// Road network and events drawn from seeded generators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub rows: usize,
    pub cols: usize,
    pub edge_time_s: f64,
    pub spot_probability: f64,
    pub grid_seed: u64,
    pub start_date: NaiveDate,
    pub days: usize,
    pub arrival_rate_per_hour: f64,
    pub mean_stay_s: f64,
    pub duration_menu: Vec<f64>,
    pub event_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            rows: 5,
            cols: 5,
            edge_time_s: 120.0,
            spot_probability: 0.5,
            grid_seed: 7,
            start_date: NaiveDate::from_ymd_opt(2019, 1, 1).expect("valid date"),
            days: 20,
            arrival_rate_per_hour: 1.0,
            mean_stay_s: 1800.0,
            duration_menu: vec![900.0, 1800.0, 3600.0],
            event_seed: 7,
        }
    }
}

/// How days are assigned to train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SplitMode {
    /// Day of year mod 13.
    DayOfYear,
    /// The first `train` days, then `validation`, then `test`, in date order.
    Sequential {
        train: usize,
        validation: usize,
        test: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub graph: Option<PathBuf>,
    pub spots: Option<PathBuf>,
    pub events: Option<PathBuf>,
    pub synthetic: Option<SynthSpec>,
    pub split: SplitMode,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            graph: None,
            spots: None,
            events: None,
            synthetic: Some(SynthSpec::default()),
            split: SplitMode::Sequential {
                train: 10,
                validation: 5,
                test: 5,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub aco: AcoParams,
    /// Fitted rate model to load instead of fitting on the train split.
    pub rate_model: Option<PathBuf>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            // Capped so that plans do not depend on machine speed.
            aco: AcoParams {
                max_iterations: Some(50),
                ..AcoParams::default()
            },
            rate_model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// `random`, `greedy`, `aco` or `checkpoint`.
    pub policies: Vec<String>,
    pub checkpoint: Option<PathBuf>,
    /// `train`, `validation`, `test` or `all`.
    pub split: String,
    /// Write one trace CSV per episode.
    pub traces: bool,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            policies: vec!["random".into(), "greedy".into()],
            checkpoint: None,
            split: "test".into(),
            traces: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    /// Run collectors and evaluation on the calling thread only.
    pub single_collector: bool,
    pub data: DataConfig,
    pub env: EnvConfig,
    pub trainer: TrainConfig,
    pub baseline: BaselineConfig,
    pub simulate: SimulateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            seed: 0,
            single_collector: false,
            data: DataConfig::default(),
            env: EnvConfig::default(),
            trainer: TrainConfig::desk(),
            baseline: BaselineConfig::default(),
            simulate: SimulateConfig::default(),
        }
    }
}

/// The seeded 5×5 grid benchmark: 10 train, 5 validation and 5 test days.
pub fn desk_benchmark() -> RunConfig {
    RunConfig {
        name: "desk".into(),
        ..RunConfig::default()
    }
}

/// Set `a.b.c = value` inside a TOML table. The value is parsed as a TOML
/// literal and falls back to a plain string.
fn apply_override(root: &mut toml::Table, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key `{key}`")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        table = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{p}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parse `text`, apply overrides in order, then an optional seed.
    pub fn from_toml(text: &str, overrides: &[String], seed: Option<u64>) -> CliResult<RunConfig> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        // Naming input files replaces the default synthetic source.
        let files_only = table.get("data").and_then(|d| d.as_table()).is_some_and(|d| {
            !d.contains_key("synthetic") && ["graph", "spots", "events"].iter().any(|k| d.contains_key(*k))
        });
        let mut cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        if files_only {
            cfg.data.synthetic = None;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.trainer.seed = cfg.seed;
        if cfg.single_collector {
            cfg.trainer.n_envs = 1;
        }
        Ok(cfg)
    }

    /// Load from a file, or start from the desk benchmark without one.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> CliResult<RunConfig> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => desk_benchmark().to_toml(),
        };
        let cfg = RunConfig::from_toml(&text, overrides, seed)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 over the resolved TOML, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// First 12 hex digits, used in artifacts.
    pub fn short_hash(&self) -> String {
        self.hash()[..12].to_string()
    }

    pub fn validate(&self) -> CliResult<()> {
        let d = &self.data;
        let files = [&d.graph, &d.spots, &d.events];
        let any_file = files.iter().any(|f| f.is_some());
        match (&d.synthetic, any_file) {
            (Some(_), true) => {
                return Err(CliError::Config(
                    "data: give either `synthetic` or graph/spots/events files, not both".into(),
                ))
            }
            (None, false) => return Err(CliError::Config("data: no data source configured".into())),
            (None, true) => {
                for (name, f) in ["graph", "spots", "events"].iter().zip(files) {
                    match f {
                        None => return Err(CliError::Config(format!("data.{name} is missing"))),
                        Some(p) if !p.exists() => {
                            return Err(CliError::Data(format!("data.{name}: {} does not exist", p.display())))
                        }
                        Some(_) => {}
                    }
                }
            }
            (Some(s), false) => {
                if s.rows < 2 || s.cols < 2 || s.days == 0 || s.duration_menu.is_empty() {
                    return Err(CliError::Config("data.synthetic: grid or day counts too small".into()));
                }
            }
        }
        self.env.validate().map_err(CliError::from_core)?;
        self.trainer.validate().map_err(CliError::from_core)?;
        self.baseline.aco.validate().map_err(CliError::from_core)?;
        for p in &self.simulate.policies {
            crate::commands::PolicyKind::parse(p)?;
        }
        Ok(())
    }
}
