//! Independent reference implementations used as test oracles.
//!
//! Nothing here calls into the code under test except for plain data
//! accessors (graph edges, spot offsets, event lists, parameter values).

#![allow(dead_code)]

pub mod gradcheck;
pub mod graphs;
pub mod netloop;
pub mod resim;
pub mod tours;

use std::sync::Arc;

use chrono::NaiveDate;
use topsim::events::{generate_synthetic, EventLogs, SynthEventParams};
use topsim::roadnet::{synth_grid, RoadNetwork};
use topsim::simenv::{EnvConfig, World};

/// Small grid world with synthetic events, cheap enough for many episodes.
pub struct Fixture {
    pub world: Arc<World>,
    pub logs: Arc<EventLogs>,
    pub days: Vec<NaiveDate>,
}

pub fn grid_fixture(rows: usize, cols: usize, days: usize, seed: u64, cfg: EnvConfig) -> Fixture {
    let (graph, spots) = synth_grid(rows, cols, 120.0, 0.5, seed).expect("grid");
    let logs = generate_synthetic(
        &spots,
        &SynthEventParams {
            days,
            seed,
            arrival_rate_per_hour: 1.0,
            mean_stay_s: 1800.0,
            duration_menu: vec![900.0, 1800.0, 3600.0],
            ..Default::default()
        },
    )
    .expect("events");
    let net = Arc::new(RoadNetwork::new(graph, spots).expect("network"));
    let world = Arc::new(World::new(net, cfg).expect("world"));
    let days = logs.keys().copied().collect();
    Fixture {
        world,
        logs: Arc::new(logs),
        days,
    }
}

/// Random state that respects the runtime invariants: a clock inside the
/// shift, timers in the past and violation onsets one max-duration after
/// arrival.
pub fn fuzz_state<R: rand::Rng>(world: &World, rng: &mut R, day: NaiveDate) -> topsim::simenv::SimState {
    use topsim::simenv::{SimState, SpotRuntimeState, SpotStatus};
    let cfg = &world.config;
    let clock = rng.gen_range(cfg.shift_start()..=cfg.shift_end()).round();
    let spots = (0..world.n_spots())
        .map(|_| {
            let max_duration = [60.0, 900.0, 1800.0, 3600.0, 7200.0][rng.gen_range(0..5)];
            match rng.gen_range(0..4) {
                0 => SpotRuntimeState::default(),
                1 => SpotRuntimeState {
                    status: SpotStatus::Occupied,
                    event: Some(0),
                    occupied_since: clock - rng.gen_range(0.0..max_duration),
                    violation_since: 0.0,
                    max_duration,
                },
                k => {
                    let violation_since = clock - rng.gen_range(0.0..5.0 * max_duration);
                    SpotRuntimeState {
                        status: if k == 2 { SpotStatus::InViolation } else { SpotStatus::Fined },
                        event: Some(0),
                        occupied_since: violation_since - max_duration,
                        violation_since,
                        max_duration,
                    }
                }
            }
        })
        .collect();
    SimState {
        day,
        clock,
        origin: rng.gen_range(0..world.n_origins()),
        spots,
        cursor: 0,
        fines: 0,
        decisions: 0,
        done: false,
    }
}

/// Contract violations of one observation, empty when it is valid.
pub fn feature_violations(obs: &topsim::simenv::Observation) -> Vec<String> {
    let mut out = Vec::new();
    for (p, row) in obs.features.rows().into_iter().enumerate() {
        let one_hot: f64 = row.iter().take(4).sum();
        if one_hot != 1.0 || row.iter().take(4).any(|&v| v != 0.0 && v != 1.0) {
            out.push(format!("spot {p}: status one-hot {:?}", &row.to_vec()[..4]));
        }
        if !(-1.0..=2.0).contains(&row[9]) {
            out.push(format!("spot {p}: duration feature {}", row[9]));
        }
        if !(0.0..=1.0).contains(&row[5]) {
            out.push(format!("spot {p}: time of day {}", row[5]));
        }
        if row[4] != 0.0 && row[4] != 1.0 {
            out.push(format!("spot {p}: optimistic flag {}", row[4]));
        }
        if row.iter().any(|v| !v.is_finite()) {
            out.push(format!("spot {p}: non-finite feature"));
        }
    }
    out
}
