//! Turning a data block into a world, event logs and a day split.

use std::sync::Arc;

use chrono::NaiveDate;
use topsim::events::{generate_synthetic, load_events, split_days, DatasetSplit, EventLogs, SynthEventParams};
use topsim::par::ExecMode;
use topsim::roadnet::{load_graph, synth_grid, LoadOptions, ParkingSpot, RoadGraph, RoadNetwork};
use topsim::simenv::{EnvConfig, World};

use crate::config::{DataConfig, SplitMode, SynthSpec};
use crate::error::{CliError, CliResult};

pub struct Dataset {
    pub world: Arc<World>,
    pub logs: Arc<EventLogs>,
    pub split: DatasetSplit,
}

impl Dataset {
    pub fn days(&self, split: &str) -> CliResult<Vec<NaiveDate>> {
        let days = match split {
            "train" => self.split.train.clone(),
            "validation" | "val" => self.split.validation.clone(),
            "test" => self.split.test.clone(),
            "all" => self.logs.keys().copied().collect(),
            other => {
                return Err(CliError::Config(format!(
                    "unknown split `{other}` (expected train, validation, test or all)"
                )))
            }
        };
        if days.is_empty() {
            return Err(CliError::Data(format!("split `{split}` has no days")));
        }
        Ok(days)
    }
}

pub fn synth_events(spec: &SynthSpec) -> SynthEventParams {
    SynthEventParams {
        start_date: spec.start_date,
        days: spec.days,
        arrival_rate_per_hour: spec.arrival_rate_per_hour,
        mean_stay_s: spec.mean_stay_s,
        duration_menu: spec.duration_menu.clone(),
        seed: spec.event_seed,
    }
}

/// Graph, spots and events straight from the configured source.
pub fn load_raw(data: &DataConfig, env: &EnvConfig) -> CliResult<(RoadGraph, Vec<ParkingSpot>, EventLogs)> {
    match (&data.synthetic, &data.graph, &data.spots, &data.events) {
        (Some(s), _, _, _) => {
            let (graph, spots) = synth_grid(s.rows, s.cols, s.edge_time_s, s.spot_probability, s.grid_seed)?;
            let logs = generate_synthetic(&spots, &synth_events(s))?;
            Ok((graph, spots, logs))
        }
        (None, Some(g), Some(sp), Some(ev)) => {
            let opts = LoadOptions {
                speed_kmh: env.officer_speed_kmh,
            };
            let (graph, spots) = load_graph(g, sp, &opts)?;
            let logs = load_events(ev, &spots)?;
            Ok((graph, spots, logs))
        }
        _ => Err(CliError::Config("data: incomplete data source".into())),
    }
}

fn split(logs: &EventLogs, mode: SplitMode) -> CliResult<DatasetSplit> {
    let days: Vec<NaiveDate> = logs.keys().copied().collect();
    match mode {
        SplitMode::DayOfYear => Ok(split_days(&days)),
        SplitMode::Sequential {
            train,
            validation,
            test,
        } => {
            if train + validation + test > days.len() {
                return Err(CliError::Data(format!(
                    "split asks for {} days, data has {}",
                    train + validation + test,
                    days.len()
                )));
            }
            Ok(DatasetSplit {
                train: days[..train].to_vec(),
                validation: days[train..train + validation].to_vec(),
                test: days[train + validation..train + validation + test].to_vec(),
            })
        }
    }
}

pub fn load_dataset(data: &DataConfig, env: &EnvConfig, mode: ExecMode) -> CliResult<Dataset> {
    let (graph, spots, logs) = load_raw(data, env)?;
    let net = Arc::new(RoadNetwork::new(graph, spots)?);
    let world = Arc::new(World::with_mode(net, env.clone(), mode)?);
    let split = split(&logs, data.split)?;
    Ok(Dataset {
        world,
        logs: Arc::new(logs),
        split,
    })
}
