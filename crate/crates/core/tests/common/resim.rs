//! Second-by-second re-simulation of an officer shift straight from the
//! event intervals. Spot status is never stored: it is evaluated from the
//! event list at the queried second, plus the set of already fined events.

use std::collections::HashSet;

use regex::Regex;
use topsim::events::EventLog;
use topsim::roadnet::{shortest_path, Position, RoadNetwork};
use topsim::simenv::{EnvConfig, SpotStatus, TraceEvent, TraceRow};

use super::graphs::pass_times;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub zeta: f64,
    pub fines: usize,
    pub tau: usize,
    pub truncated: bool,
    pub done: bool,
}

pub struct Resim<'a> {
    net: &'a RoadNetwork,
    log: &'a EventLog,
    gamma: f64,
    shift_end: f64,
    by_spot: Vec<Vec<usize>>,
    pub fined: HashSet<usize>,
    pub clock: f64,
    pub position: Position,
    pub total_fines: usize,
}

impl<'a> Resim<'a> {
    pub fn new(net: &'a RoadNetwork, cfg: &EnvConfig, log: &'a EventLog, start_vertex: usize) -> Self {
        let mut by_spot = vec![Vec::new(); net.spots.len()];
        for (i, e) in log.events().iter().enumerate() {
            by_spot[e.spot].push(i);
        }
        Resim {
            net,
            log,
            gamma: cfg.gamma,
            shift_end: cfg.shift_end_h * 3600.0,
            by_spot,
            fined: HashSet::new(),
            clock: cfg.shift_start_h * 3600.0,
            position: Position::Vertex(start_vertex),
            total_fines: 0,
        }
    }

    /// Event covering `spot` at second `t`, if any.
    pub fn event_at(&self, spot: usize, t: f64) -> Option<usize> {
        self.by_spot[spot].iter().copied().find(|&i| {
            let e = &self.log.events()[i];
            e.arrival <= t && t < e.departure
        })
    }

    pub fn status(&self, spot: usize, t: f64) -> SpotStatus {
        match self.event_at(spot, t) {
            None => SpotStatus::Free,
            Some(i) => {
                let e = &self.log.events()[i];
                if e.departure > e.arrival + e.max_duration && t >= e.arrival + e.max_duration {
                    if self.fined.contains(&i) {
                        SpotStatus::Fined
                    } else {
                        SpotStatus::InViolation
                    }
                } else {
                    SpotStatus::Occupied
                }
            }
        }
    }

    pub fn step(&mut self, action: usize) -> Outcome {
        let target_edge = self.net.actions.edge(action);
        let (passes, duration, stationary) = if self.position == Position::EndOfEdge(target_edge) {
            let here: Vec<(usize, f64)> = self
                .net
                .spots
                .iter()
                .filter(|s| s.edge == target_edge)
                .map(|s| (s.id, 0.0))
                .collect();
            (here, 0.0, true)
        } else {
            let route = shortest_path(self.net, self.position, action).expect("route");
            let duration: f64 = route.edges.iter().map(|&e| self.net.graph.edge(e).travel_time).sum();
            (pass_times(self.net, &route.edges), duration, false)
        };
        let mut full = 1;
        if !stationary {
            while (full as f64) < duration - 1e-9 {
                full += 1;
            }
        }
        let mut remaining = 0;
        while self.clock + (remaining as f64) < self.shift_end {
            remaining += 1;
        }
        let tau = full.min(remaining);
        let t0 = self.clock;
        let mut zeta = 0.0;
        let mut fines = 0;
        let mut discount = 1.0;
        for s in 1..=tau {
            let now = t0 + s as f64;
            let lo = (s - 1) as f64;
            for &(spot, at) in &passes {
                let reached = if s == 1 { at <= 1.0 } else { at > lo && at <= s as f64 };
                if reached && self.status(spot, now) == SpotStatus::InViolation {
                    let ev = self.event_at(spot, now).expect("violating event");
                    self.fined.insert(ev);
                    fines += 1;
                    zeta += discount;
                }
            }
            discount *= self.gamma;
        }
        self.clock = t0 + tau as f64;
        self.position = Position::EndOfEdge(target_edge);
        self.total_fines += fines;
        Outcome {
            zeta,
            fines,
            tau,
            truncated: full > remaining,
            done: self.clock >= self.shift_end,
        }
    }
}

/// Each spot's trace must read `Free (Occupied (InViolation (Fined)?)? Free)*`,
/// possibly ending inside an occupation when the shift ends.
pub fn check_status_pattern(trace: &[TraceRow], n_spots: usize) -> Result<(), String> {
    let mut seqs = vec![String::new(); n_spots];
    for row in trace {
        let Some(spot) = row.spot else { continue };
        let c = match row.event {
            TraceEvent::Occupied => 'O',
            TraceEvent::Violation => 'V',
            TraceEvent::Fine => 'F',
            TraceEvent::Free => 'R',
            TraceEvent::Decision => continue,
        };
        seqs[spot].push(c);
    }
    let pattern = Regex::new("^(O(VF?)?R)*(O(VF?)?)?$").expect("pattern");
    for (spot, seq) in seqs.iter().enumerate() {
        if !pattern.is_match(seq) {
            return Err(format!("spot {spot} has status sequence {seq}"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeCheck {
    pub decisions: usize,
    pub fines: usize,
}

/// Roll a seeded uniform-random policy through `day` in the environment and
/// in the re-simulator side by side, comparing every transition, the spot
/// statuses at every decision point and the trace. `world` must record
/// traces.
pub fn replay_random_episode(
    world: &std::sync::Arc<topsim::simenv::World>,
    logs: &std::sync::Arc<topsim::events::EventLogs>,
    day: chrono::NaiveDate,
    seed: u64,
) -> Result<EpisodeCheck, String> {
    use rand::{Rng, SeedableRng};
    use topsim::simenv::{Env, TraceEvent};

    let mut env = Env::new(std::sync::Arc::clone(world), std::sync::Arc::clone(logs));
    let log = &logs[&day];
    let mut oracle = Resim::new(&world.net, &world.config, log, world.start_vertex());
    let first = env.reset(day).map_err(|e| e.to_string())?;
    let statuses_match = |status: &[SpotStatus], oracle: &Resim, when: &str| -> Result<(), String> {
        for (p, &s) in status.iter().enumerate() {
            let expected = oracle.status(p, oracle.clock);
            if s != expected {
                return Err(format!("{when}: spot {p} is {s:?}, oracle says {expected:?} at {}", oracle.clock));
            }
        }
        Ok(())
    };
    statuses_match(&first.status, &oracle, "reset")?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = world.n_actions();
    let mut decisions = 0;
    while !env.is_done() {
        let a = rng.gen_range(0..n);
        let t = env.step(a).map_err(|e| e.to_string())?;
        let o = oracle.step(a);
        decisions += 1;
        let at = format!("decision {decisions} (action {a}, clock {})", t.observation.clock);
        if t.tau != o.tau || t.fines != o.fines || t.truncated != o.truncated || t.done != o.done {
            return Err(format!(
                "{at}: env (tau {}, fines {}, truncated {}, done {}) vs oracle {o:?}",
                t.tau, t.fines, t.truncated, t.done
            ));
        }
        if (t.zeta - o.zeta).abs() > 1e-9 {
            return Err(format!("{at}: zeta {} vs oracle {}", t.zeta, o.zeta));
        }
        if t.zeta > t.fines as f64 + 1e-12 {
            return Err(format!("{at}: zeta {} exceeds raw fines {}", t.zeta, t.fines));
        }
        if t.next_observation.clock != oracle.clock {
            return Err(format!("{at}: clock {} vs oracle {}", t.next_observation.clock, oracle.clock));
        }
        statuses_match(&t.next_observation.status, &oracle, &at)?;
    }
    check_status_pattern(env.trace(), world.n_spots())?;
    let summary = env.summary().expect("finished episode");
    let traced = env.trace().iter().filter(|r| r.event == TraceEvent::Fine).count();
    if summary.fines != oracle.total_fines || traced != summary.fines {
        return Err(format!(
            "fines: summary {}, trace {traced}, oracle {}",
            summary.fines, oracle.total_fines
        ));
    }
    let onsets = log.events().iter().filter(|e| e.violates()).count();
    if summary.fines > onsets {
        return Err(format!("{} fines exceed {onsets} violation onsets", summary.fines));
    }
    Ok(EpisodeCheck {
        decisions,
        fines: summary.fines,
    })
}
