//! Semi-Markov officer environment.
//!
//! Decisions happen at whole seconds. An action walks the cached route to the
//! end of its target edge; the walk lasts `τ = max(1, ⌈duration⌉)` steps,
//! and the self-action (target = edge the officer just finished) lasts one
//! step and checks the spots on that edge. During sub-step `j` the clock moves
//! to `t0 + j + 1`, status changes due by then are applied, then spots whose
//! pass-by step is `j` are fined if they are in violation. A spot passed at
//! route time `φ` belongs to step `max(0, ⌈φ⌉ − 1)`.
//!
//! Shared structures live in [`World`]: routes from the start vertex and
//! from the end of every action edge, the per-origin geometry handed to the
//! network, and the normalized edge-information tensor.

use std::sync::Arc;

use chrono::NaiveDate;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{event_timeline, ChangeKind, EventLog, EventLogs, StatusChange};
use crate::nn::{GeometryContext, FEATURE_DIM};
use crate::par::{self, ExecMode};
use crate::roadnet::{EdgeInfoMatrix, PathCache, Position, RoadNetwork, Route};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub gamma: f64,
    /// Used when edge travel times are derived from lengths at load time.
    pub officer_speed_kmh: f64,
    pub shift_start_h: f64,
    pub shift_end_h: f64,
    /// File id of the start vertex; defaults to the end vertex of the
    /// lowest-id action edge.
    pub start_vertex: Option<u64>,
    pub distance_norm: f64,
    pub duration_norm: f64,
    pub route_time_norm: f64,
    /// Scale travel times in the edge-information tensor by `duration_norm`.
    pub norm_edge_info: bool,
    pub record_trace: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            gamma: 0.999,
            officer_speed_kmh: crate::roadnet::DEFAULT_SPEED_KMH,
            shift_start_h: 7.0,
            shift_end_h: 19.0,
            start_vertex: None,
            distance_norm: 1.0 / 3000.0,
            duration_norm: 1.0 / 3000.0,
            route_time_norm: 1.0 / 3000.0,
            norm_edge_info: true,
            record_trace: false,
        }
    }
}

impl EnvConfig {
    pub fn shift_start(&self) -> f64 {
        self.shift_start_h * 3600.0
    }

    pub fn shift_end(&self) -> f64 {
        self.shift_end_h * 3600.0
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.officer_speed_kmh,
            self.distance_norm,
            self.duration_norm,
            self.route_time_norm,
        ];
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma must be in (0, 1], got {}", self.gamma)));
        }
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("speed and normalization factors must be positive".into()));
        }
        if !(0.0 <= self.shift_start_h && self.shift_start_h < self.shift_end_h && self.shift_end_h <= 24.0) {
            return Err(Error::Config("shift hours must satisfy 0 <= start < end <= 24".into()));
        }
        Ok(())
    }
}

/// Pass-by time to sub-step index.
pub fn pass_step(time: f64) -> usize {
    (time.ceil() - 1.0).max(0.0) as usize
}

/// Number of one-second steps an action occupies.
pub fn route_steps(route: &Route) -> usize {
    if route.is_stationary() {
        1
    } else {
        ((route.duration - 1e-9).ceil() as usize).max(1)
    }
}

/// Precomputed data for one decision origin.
#[derive(Debug, Clone)]
pub struct OriginData {
    pub position: Position,
    pub x: f64,
    pub y: f64,
    pub routes: Arc<Vec<Route>>,
    /// Walking time to each spot along the route to its host action.
    pub walk: Arc<Vec<f64>>,
    /// Euclidean distance to each spot.
    pub distance: Vec<f64>,
    pub context: Arc<GeometryContext>,
}

/// Read-only environment structures shared by all env instances.
#[derive(Debug)]
pub struct World {
    pub net: Arc<RoadNetwork>,
    pub cache: PathCache,
    pub edge_info: EdgeInfoMatrix,
    pub config: EnvConfig,
    start_vertex: usize,
    /// Index 0 is the start vertex; `1 + a` is the end of action `a`'s edge.
    origins: Vec<OriginData>,
    bbox: (f64, f64, f64, f64),
}

impl World {
    pub fn new(net: Arc<RoadNetwork>, config: EnvConfig) -> Result<World> {
        World::with_mode(net, config, ExecMode::default())
    }

    pub fn with_mode(net: Arc<RoadNetwork>, config: EnvConfig, mode: ExecMode) -> Result<World> {
        config.validate()?;
        let start_vertex = match config.start_vertex {
            Some(id) => net
                .graph
                .vertex_by_id(id)
                .ok_or_else(|| Error::Config(format!("start vertex {id} not in graph")))?,
            None => net.graph.edge(net.actions.edge(0)).to,
        };
        let cache = PathCache::build(Arc::clone(&net), &[start_vertex])?;
        let edge_info = EdgeInfoMatrix::build(&cache);
        let n = net.actions.len();
        let travel_scale = if config.norm_edge_info {
            config.duration_norm
        } else {
            1.0
        };
        let delta = Arc::new(Array2::from_shape_fn((n * n, 2), |(i, c)| {
            let (a, b) = (i / n, i % n);
            if c == 0 {
                edge_info.travel_time(a, b) * travel_scale
            } else {
                edge_info.spot_count(a, b) as f64
            }
        }));
        let target_spots: Arc<Vec<Vec<usize>>> =
            Arc::new((0..n).map(|a| net.actions.spots(a).to_vec()).collect());
        let mut positions = vec![Position::Vertex(start_vertex)];
        positions.extend((0..n).map(|a| Position::EndOfEdge(net.actions.edge(a))));
        let origins = par::map(mode, &positions, |&pos| {
            origin_data(&net, &cache, &config, pos, &target_spots, &delta)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let bbox = net.graph.bounding_box();
        Ok(World {
            net,
            cache,
            edge_info,
            config,
            start_vertex,
            origins,
            bbox,
        })
    }

    pub fn n_spots(&self) -> usize {
        self.net.spots.len()
    }

    pub fn n_actions(&self) -> usize {
        self.net.actions.len()
    }

    pub fn n_origins(&self) -> usize {
        self.origins.len()
    }

    pub fn start_vertex(&self) -> usize {
        self.start_vertex
    }

    pub const START_ORIGIN: usize = 0;

    pub fn origin_after(action: usize) -> usize {
        action + 1
    }

    pub fn origin(&self, id: usize) -> &OriginData {
        &self.origins[id]
    }

    pub fn context(&self, origin: usize) -> &Arc<GeometryContext> {
        &self.origins[origin].context
    }

    /// Observation of `state`, without touching any environment.
    pub fn observe(&self, state: &SimState) -> Observation {
        let cfg = &self.config;
        let origin = &self.origins[state.origin];
        let (start, end) = (cfg.shift_start(), cfg.shift_end());
        let span = end - start;
        let clock = state.clock;
        let time_of_day = ((clock - start) / span).clamp(0.0, 1.0);
        let (min_x, min_y, max_x, max_y) = self.bbox;
        let unit = |v: f64, lo: f64, hi: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        let n = self.n_spots();
        let mut features = Array2::zeros((n, FEATURE_DIM));
        let mut until_violation = vec![f64::INFINITY; n];
        for (p, spot) in self.net.spots.iter().enumerate() {
            let s = &state.spots[p];
            let walk = origin.walk[p];
            let mut row = features.row_mut(p);
            row[s.status.index()] = 1.0;
            let duration = match s.status {
                SpotStatus::Free => 0.0,
                SpotStatus::Occupied => {
                    let onset = s.occupied_since + s.max_duration;
                    until_violation[p] = onset - clock;
                    if clock + walk >= onset {
                        row[4] = 1.0;
                    }
                    (clock - s.occupied_since) / s.max_duration - 1.0
                }
                SpotStatus::InViolation | SpotStatus::Fined => {
                    (clock - s.violation_since) / s.max_duration
                }
            };
            row[5] = time_of_day;
            row[6] = walk * cfg.route_time_norm;
            row[7] = (clock + walk - start) / span;
            row[8] = origin.distance[p] * cfg.distance_norm;
            row[9] = duration.clamp(-1.0, 2.0);
            row[10] = unit(spot.x, min_x, max_x);
            row[11] = unit(spot.y, min_y, max_y);
        }
        Observation {
            features,
            origin: state.origin,
            clock,
            context: Arc::clone(&origin.context),
            walk: Arc::clone(&origin.walk),
            status: state.spots.iter().map(|s| s.status).collect(),
            until_violation,
        }
    }
}

fn origin_data(
    net: &RoadNetwork,
    cache: &PathCache,
    config: &EnvConfig,
    position: Position,
    target_spots: &Arc<Vec<Vec<usize>>>,
    delta: &Arc<Array2<f64>>,
) -> Result<OriginData> {
    let routes = cache.routes_from(position)?;
    let (x, y) = match position {
        Position::Vertex(v) => {
            let v = net.graph.vertex(v);
            (v.x, v.y)
        }
        Position::EndOfEdge(e) => {
            let v = net.graph.vertex(net.graph.edge(e).to);
            (v.x, v.y)
        }
        Position::OnEdge { edge, offset } => net.graph.point_on_edge(edge, offset),
    };
    let mut walk = vec![f64::NAN; net.spots.len()];
    for (a, route) in routes.iter().enumerate() {
        for pb in &route.pass_by {
            if net.actions.action_of_spot(pb.spot) == a {
                walk[pb.spot] = pb.time;
            }
        }
    }
    if let Some(p) = walk.iter().position(|w| w.is_nan()) {
        return Err(Error::Unreachable {
            source_desc: format!("{position:?}"),
            target: net.actions.action_of_spot(p),
        });
    }
    let distance = net
        .spots
        .iter()
        .map(|s| ((s.x - x).powi(2) + (s.y - y).powi(2)).sqrt())
        .collect();
    let context = GeometryContext {
        n_spots: net.spots.len(),
        target_spots: Arc::clone(target_spots),
        route_spots: routes
            .iter()
            .map(|r| {
                r.pass_by
                    .iter()
                    .map(|pb| (pb.spot, pb.time * config.route_time_norm))
                    .collect()
            })
            .collect(),
        durations: routes
            .iter()
            .map(|r| r.duration * config.duration_norm)
            .collect(),
        edge_info: Arc::clone(delta),
    };
    Ok(OriginData {
        position,
        x,
        y,
        routes,
        walk: Arc::new(walk),
        distance,
        context: Arc::new(context),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpotStatus {
    Free,
    Occupied,
    InViolation,
    Fined,
}

impl SpotStatus {
    pub fn index(self) -> usize {
        match self {
            SpotStatus::Free => 0,
            SpotStatus::Occupied => 1,
            SpotStatus::InViolation => 2,
            SpotStatus::Fined => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotRuntimeState {
    pub status: SpotStatus,
    /// Index of the current event in the day's log.
    pub event: Option<usize>,
    pub occupied_since: f64,
    pub violation_since: f64,
    pub max_duration: f64,
}

impl Default for SpotRuntimeState {
    fn default() -> Self {
        SpotRuntimeState {
            status: SpotStatus::Free,
            event: None,
            occupied_since: 0.0,
            violation_since: 0.0,
            max_duration: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub day: NaiveDate,
    pub clock: f64,
    /// Origin index into the world's precomputed positions.
    pub origin: usize,
    pub spots: Vec<SpotRuntimeState>,
    /// Next unapplied entry of the day's status timeline.
    pub cursor: usize,
    pub fines: usize,
    pub decisions: usize,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct Observation {
    /// `|P| × 12` spot features.
    pub features: Array2<f64>,
    pub origin: usize,
    pub clock: f64,
    pub context: Arc<GeometryContext>,
    /// Walking time to each spot, seconds.
    pub walk: Arc<Vec<f64>>,
    pub status: Vec<SpotStatus>,
    /// Seconds until an occupied spot enters violation; infinite otherwise.
    pub until_violation: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub observation: Observation,
    pub action: usize,
    /// `Σ γ^j r_j` over the action's sub-steps.
    pub zeta: f64,
    pub fines: usize,
    pub tau: usize,
    pub next_observation: Observation,
    pub done: bool,
    /// The action was cut short by the shift end.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceEvent {
    Decision,
    Fine,
    Occupied,
    Violation,
    Free,
}

impl TraceEvent {
    pub fn as_str(self) -> &'static str {
        match self {
            TraceEvent::Decision => "decision",
            TraceEvent::Fine => "fine",
            TraceEvent::Occupied => "occupied",
            TraceEvent::Violation => "violation",
            TraceEvent::Free => "free",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub time: f64,
    pub event: TraceEvent,
    pub spot: Option<usize>,
    pub action: Option<usize>,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub day: NaiveDate,
    pub fines: usize,
    /// Violations whose interval touches the shift.
    pub violations: usize,
    /// `fines / violations`, 0 when there were none.
    pub fine_ratio: f64,
    pub decisions: usize,
}

/// One officer on one day.
#[derive(Debug, Clone)]
pub struct Env {
    world: Arc<World>,
    logs: Arc<EventLogs>,
    log: Option<EventLog>,
    timeline: Arc<Vec<StatusChange>>,
    state: Option<SimState>,
    trace: Vec<TraceRow>,
}

impl Env {
    pub fn new(world: Arc<World>, logs: Arc<EventLogs>) -> Env {
        Env {
            world,
            logs,
            log: None,
            timeline: Arc::new(Vec::new()),
            state: None,
            trace: Vec::new(),
        }
    }

    pub fn world(&self) -> &Arc<World> {
        &self.world
    }

    pub fn logs(&self) -> &Arc<EventLogs> {
        &self.logs
    }

    pub fn reset(&mut self, day: NaiveDate) -> Result<Observation> {
        let log = self
            .logs
            .get(&day)
            .ok_or_else(|| Error::MissingDay(day.to_string()))?
            .clone();
        self.timeline = Arc::new(event_timeline(&log));
        self.log = Some(log);
        let mut state = SimState {
            day,
            clock: self.world.config.shift_start(),
            origin: World::START_ORIGIN,
            spots: vec![SpotRuntimeState::default(); self.world.n_spots()],
            cursor: 0,
            fines: 0,
            decisions: 0,
            done: false,
        };
        let now = state.clock;
        self.trace.clear();
        self.apply_changes(&mut state, now);
        self.state = Some(state);
        Ok(self.observe())
    }

    /// Continue from a saved state of a day present in the logs.
    pub fn restore(&mut self, state: SimState) -> Result<()> {
        if state.spots.len() != self.world.n_spots() || state.origin >= self.world.n_origins() {
            return Err(Error::Shape("state does not match this world".into()));
        }
        let log = self
            .logs
            .get(&state.day)
            .ok_or_else(|| Error::MissingDay(state.day.to_string()))?
            .clone();
        self.timeline = Arc::new(event_timeline(&log));
        self.log = Some(log);
        self.state = Some(state);
        self.trace.clear();
        Ok(())
    }

    pub fn state(&self) -> Option<&SimState> {
        self.state.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.state.as_ref().is_none_or(|s| s.done)
    }

    pub fn observe(&self) -> Observation {
        self.world
            .observe(self.state.as_ref().expect("environment has not been reset"))
    }

    pub fn trace(&self) -> &[TraceRow] {
        &self.trace
    }

    fn apply_changes(&mut self, state: &mut SimState, until: f64) {
        let log = self.log.as_ref().expect("log loaded");
        let record = self.world.config.record_trace;
        while let Some(c) = self.timeline.get(state.cursor) {
            if c.time > until {
                break;
            }
            let s = &mut state.spots[c.spot];
            let before = s.status;
            match c.kind {
                ChangeKind::Occupied => {
                    *s = SpotRuntimeState {
                        status: SpotStatus::Occupied,
                        event: Some(c.event),
                        occupied_since: c.time,
                        violation_since: 0.0,
                        max_duration: log.events()[c.event].max_duration,
                    };
                }
                ChangeKind::Violation => {
                    if s.event == Some(c.event) && s.status == SpotStatus::Occupied {
                        s.status = SpotStatus::InViolation;
                        s.violation_since = c.time;
                    }
                }
                ChangeKind::Free => {
                    if s.event == Some(c.event) {
                        *s = SpotRuntimeState::default();
                    }
                }
            }
            if record && (s.status != before || c.kind == ChangeKind::Occupied) {
                let event = match s.status {
                    SpotStatus::Free => TraceEvent::Free,
                    SpotStatus::Occupied => TraceEvent::Occupied,
                    _ => TraceEvent::Violation,
                };
                self.trace.push(TraceRow {
                    time: c.time,
                    event,
                    spot: Some(c.spot),
                    action: None,
                    reward: 0.0,
                });
            }
            state.cursor += 1;
        }
    }

    pub fn step(&mut self, action: usize) -> Result<Transition> {
        let n_actions = self.world.n_actions();
        if action >= n_actions {
            return Err(Error::InvalidAction {
                action,
                size: n_actions,
            });
        }
        let mut state = match self.state.take() {
            Some(s) if !s.done => s,
            other => {
                self.state = other;
                return Err(Error::EpisodeFinished);
            }
        };
        let observation = self.world.observe(&state);
        let world = Arc::clone(&self.world);
        let route = &world.origin(state.origin).routes[action];
        let shift_end = world.config.shift_end();
        let t0 = state.clock;
        let mut tau = route_steps(route);
        let remaining = (shift_end - t0).ceil().max(0.0) as usize;
        let truncated = tau > remaining;
        if truncated {
            tau = remaining;
        }
        if self.world.config.record_trace {
            self.trace.push(TraceRow {
                time: t0,
                event: TraceEvent::Decision,
                spot: None,
                action: Some(action),
                reward: 0.0,
            });
        }
        let gamma = world.config.gamma;
        let mut zeta = 0.0;
        let mut fines = 0;
        for pb in &route.pass_by {
            let j = pass_step(pb.time);
            if j >= tau {
                break;
            }
            let now = t0 + (j + 1) as f64;
            self.apply_changes(&mut state, now);
            let s = &mut state.spots[pb.spot];
            if s.status == SpotStatus::InViolation {
                s.status = SpotStatus::Fined;
                fines += 1;
                zeta += gamma.powi(j as i32);
                if world.config.record_trace {
                    self.trace.push(TraceRow {
                        time: now,
                        event: TraceEvent::Fine,
                        spot: Some(pb.spot),
                        action: Some(action),
                        reward: 1.0,
                    });
                }
            }
        }
        state.clock = t0 + tau as f64;
        let now = state.clock;
        self.apply_changes(&mut state, now);
        state.origin = World::origin_after(action);
        state.fines += fines;
        state.decisions += 1;
        state.done = state.clock >= shift_end;
        let done = state.done;
        let next_observation = world.observe(&state);
        self.state = Some(state);
        Ok(Transition {
            observation,
            action,
            zeta,
            fines,
            tau,
            next_observation,
            done,
            truncated,
        })
    }

    pub fn summary(&self) -> Option<EpisodeSummary> {
        let state = self.state.as_ref()?;
        let log = self.log.as_ref()?;
        let cfg = &self.world.config;
        let violations = log.violations_within(cfg.shift_start(), cfg.shift_end());
        Some(EpisodeSummary {
            day: state.day,
            fines: state.fines,
            violations,
            fine_ratio: if violations == 0 {
                0.0
            } else {
                state.fines as f64 / violations as f64
            },
            decisions: state.decisions,
        })
    }
}

/// Anything that picks an action from an observation.
pub trait Policy {
    fn name(&self) -> &str;

    /// Called before the first decision of every day.
    fn begin_day(&mut self, _day: NaiveDate) {}

    fn act(&mut self, world: &World, obs: &Observation) -> Result<usize>;
}

/// Roll `policy` through one full shift.
pub fn run_episode(env: &mut Env, policy: &mut dyn Policy, day: NaiveDate) -> Result<EpisodeSummary> {
    policy.begin_day(day);
    let mut obs = env.reset(day)?;
    while !env.is_done() {
        let a = policy.act(env.world(), &obs)?;
        obs = env.step(a)?.next_observation;
    }
    Ok(env.summary().expect("episode ran"))
}

/// Trace rows as CSV with columns `time,event,spot,action,reward`.
pub fn trace_to_csv<W: std::io::Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time", "event", "spot", "action", "reward"])?;
    for r in rows {
        w.write_record([
            r.time.to_string(),
            r.event.as_str().to_string(),
            r.spot.map(|s| s.to_string()).unwrap_or_default(),
            r.action.map(|a| a.to_string()).unwrap_or_default(),
            r.reward.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
