//! Non-learning policies: probabilistic greedy, ant-colony tour planning and
//! uniform random.
//!
//! Both informed policies use a per-spot exponential model of how long a
//! violation lasts: the chance a violation seen now is still there after
//! `t` seconds is `exp(−λ_p t)`.

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::EventLog;
use crate::simenv::{Observation, Policy, SpotStatus, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRateModel {
    /// λ per spot, 1/seconds.
    pub rates: Vec<f64>,
    /// Mean of the fitted rates; used for spots without observations.
    pub fallback: f64,
}

impl ViolationRateModel {
    /// `λ_p = 1 / mean(departure − onset)` over the spot's violations.
    pub fn fit<'a>(logs: impl IntoIterator<Item = &'a EventLog>, n_spots: usize) -> Result<Self> {
        let mut sum = vec![0.0; n_spots];
        let mut count = vec![0usize; n_spots];
        for log in logs {
            for e in log.events().iter().filter(|e| e.violates()) {
                if e.spot >= n_spots {
                    return Err(Error::UnknownSpot { spot: e.spot as i64, line: 0 });
                }
                sum[e.spot] += e.departure - e.violation_onset();
                count[e.spot] += 1;
            }
        }
        let fitted: Vec<Option<f64>> = sum
            .iter()
            .zip(&count)
            .map(|(&s, &c)| (c > 0).then(|| c as f64 / s))
            .collect();
        let known: Vec<f64> = fitted.iter().flatten().copied().collect();
        if known.is_empty() {
            return Err(Error::NoViolations);
        }
        let fallback = known.iter().sum::<f64>() / known.len() as f64;
        Ok(ViolationRateModel {
            rates: fitted.iter().map(|r| r.unwrap_or(fallback)).collect(),
            fallback,
        })
    }

    /// Same rate everywhere.
    pub fn uniform(n_spots: usize, rate: f64) -> Self {
        ViolationRateModel {
            rates: vec![rate; n_spots],
            fallback: rate,
        }
    }

    pub fn rate(&self, spot: usize) -> f64 {
        self.rates.get(spot).copied().unwrap_or(self.fallback)
    }

    pub fn to_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["spot_id", "lambda"])?;
        for (p, r) in self.rates.iter().enumerate() {
            w.write_record([p.to_string(), format!("{r:e}")])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn from_csv(path: &Path, text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut rates = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |k: usize| {
                rec.get(k)
                    .ok_or_else(|| Error::parse(path, line, "expected spot_id,lambda"))
            };
            let spot: usize = field(0)?
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, line, "bad spot id"))?;
            let rate: f64 = field(1)?
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, line, "bad rate"))?;
            if spot != rates.len() || !(rate > 0.0 && rate.is_finite()) {
                return Err(Error::parse(path, line, "spot ids must be dense and rates positive"));
            }
            rates.push(rate);
        }
        if rates.is_empty() {
            return Err(Error::parse(path, 1, "no rates"));
        }
        let fallback = rates.iter().sum::<f64>() / rates.len() as f64;
        Ok(ViolationRateModel { rates, fallback })
    }
}

/// Greedy choice with the default `exp` score.
pub fn greedy_action(world: &World, obs: &Observation, model: &ViolationRateModel) -> usize {
    greedy_action_by(world, obs, model, f64::exp)
}

/// Greedy choice with `transform` applied to the log-probability of each
/// candidate spot. Any strictly increasing transform yields the same action.
///
/// Preference order: actions hosting a violation, then actions hosting an
/// occupied spot that could overstay before arrival, then the nearest
/// action that moves the officer.
pub fn greedy_action_by<F: Fn(f64) -> f64>(
    world: &World,
    obs: &Observation,
    model: &ViolationRateModel,
    transform: F,
) -> usize {
    let n = world.n_actions();
    let best_by = |score: &dyn Fn(usize) -> Option<f64>| {
        let mut best: Option<(usize, f64)> = None;
        for p in 0..obs.status.len() {
            let Some(s) = score(p) else { continue };
            let a = world.net.actions.action_of_spot(p);
            let s = transform(s);
            // Spots are visited in id order, so compare by action too.
            match best {
                Some((ba, bs)) if bs > s || (bs == s && ba <= a) => {}
                _ => best = Some((a, s)),
            }
        }
        best.map(|(a, _)| a)
    };
    let violating = |p: usize| {
        (obs.status[p] == SpotStatus::InViolation).then(|| -model.rate(p) * obs.walk[p])
    };
    if let Some(a) = best_by(&violating) {
        return a;
    }
    let overstaying = |p: usize| {
        (obs.status[p] == SpotStatus::Occupied && obs.features[[p, 4]] > 0.0)
            .then(|| -model.rate(p) * (obs.walk[p] - obs.until_violation[p]).max(0.0))
    };
    if let Some(a) = best_by(&overstaying) {
        return a;
    }
    nearest_moving_action(world, obs.origin).unwrap_or(0).min(n - 1)
}

/// Shortest non-stationary route from an origin; ties go to the lower index.
pub fn nearest_moving_action(world: &World, origin: usize) -> Option<usize> {
    let routes = &world.origin(origin).routes;
    let mut best: Option<(usize, f64)> = None;
    for (a, r) in routes.iter().enumerate() {
        if r.is_stationary() {
            continue;
        }
        if best.is_none_or(|(_, d)| r.duration < d) {
            best = Some((a, r.duration));
        }
    }
    best.map(|(a, _)| a)
}

/// Score of a visiting order: expected fines first, shorter duration on ties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TourScore {
    pub expected: f64,
    pub duration: f64,
}

impl TourScore {
    pub fn better_than(&self, other: &TourScore) -> bool {
        let tol = 1e-12 * self.expected.abs().max(other.expected.abs()).max(1.0);
        if (self.expected - other.expected).abs() > tol {
            self.expected > other.expected
        } else {
            self.duration < other.duration
        }
    }
}

/// Frozen snapshot of the violation-hosting actions for tour planning.
#[derive(Debug, Clone, PartialEq)]
pub struct TourInstance {
    /// Action index of each node.
    pub actions: Vec<usize>,
    /// Travel time from the officer to each node.
    pub start: Vec<f64>,
    /// `travel[i][j]` from node `i` to node `j`.
    pub travel: Vec<Vec<f64>>,
    /// Rates of the violating spots at each node.
    pub rates: Vec<Vec<f64>>,
}

impl TourInstance {
    pub fn from_observation(world: &World, obs: &Observation, model: &ViolationRateModel) -> Self {
        let mut actions: Vec<usize> = Vec::new();
        let mut rates: Vec<Vec<f64>> = Vec::new();
        for p in 0..obs.status.len() {
            if obs.status[p] != SpotStatus::InViolation {
                continue;
            }
            let a = world.net.actions.action_of_spot(p);
            match actions.iter().position(|&x| x == a) {
                Some(i) => rates[i].push(model.rate(p)),
                None => {
                    actions.push(a);
                    rates.push(vec![model.rate(p)]);
                }
            }
        }
        let routes = &world.origin(obs.origin).routes;
        let start = actions.iter().map(|&a| routes[a].duration).collect();
        let travel = actions
            .iter()
            .map(|&a| {
                actions
                    .iter()
                    .map(|&b| world.edge_info.travel_time(a, b))
                    .collect()
            })
            .collect();
        TourInstance {
            actions,
            start,
            travel,
            rates,
        }
    }

    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }

    /// Each spot counts `exp(−λ T)` with `T` the arrival time at its node.
    pub fn score(&self, tour: &[usize]) -> TourScore {
        let mut t = 0.0;
        let mut expected = 0.0;
        let mut prev: Option<usize> = None;
        for &i in tour {
            t += match prev {
                None => self.start[i],
                Some(j) => self.travel[j][i],
            };
            expected += self.rates[i].iter().map(|&l| (-l * t).exp()).sum::<f64>();
            prev = Some(i);
        }
        TourScore {
            expected,
            duration: t,
        }
    }

    /// Always move to the closest unvisited node.
    pub fn nearest_neighbor(&self) -> Vec<usize> {
        let n = self.len();
        let mut visited = vec![false; n];
        let mut tour = Vec::with_capacity(n);
        let mut prev: Option<usize> = None;
        for _ in 0..n {
            let next = (0..n)
                .filter(|&i| !visited[i])
                .min_by(|&a, &b| {
                    let d = |i: usize| prev.map_or(self.start[i], |j| self.travel[j][i]);
                    d(a).total_cmp(&d(b)).then(a.cmp(&b))
                })
                .expect("unvisited node");
            visited[next] = true;
            tour.push(next);
            prev = Some(next);
        }
        tour
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcoParams {
    pub ants: usize,
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    pub deposit: f64,
    /// Wall-clock budget per plan, seconds.
    pub budget_s: f64,
    /// Optional hard cap on iterations, for reproducible plans.
    pub max_iterations: Option<usize>,
}

impl Default for AcoParams {
    fn default() -> Self {
        AcoParams {
            ants: 20,
            alpha: 1.0,
            beta: 2.0,
            rho: 0.1,
            deposit: 1.0,
            budget_s: 0.1,
            max_iterations: None,
        }
    }
}

impl AcoParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.ants > 0
            && self.alpha > 0.0
            && self.beta > 0.0
            && self.rho > 0.0
            && self.rho < 1.0
            && self.deposit > 0.0
            && self.budget_s > 0.0
            && self.max_iterations != Some(0);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid ACO parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct AcoResult {
    pub tour: Vec<usize>,
    pub score: TourScore,
    pub iterations: usize,
    /// Best-so-far score after each iteration.
    pub history: Vec<TourScore>,
}

/// Anytime ant-colony planner with rank-weighted pheromone deposit on the
/// iteration-best and global-best tours.
#[derive(Debug, Clone)]
pub struct AcoPlanner {
    pub params: AcoParams,
    rng: ChaCha8Rng,
}

impl AcoPlanner {
    pub fn new(params: AcoParams, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(AcoPlanner {
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn plan(&mut self, inst: &TourInstance) -> AcoResult {
        let started = Instant::now();
        let budget = Duration::from_secs_f64(self.params.budget_s);
        let n = inst.len();
        let nn = inst.nearest_neighbor();
        let nn_score = inst.score(&nn);
        let mut best = (nn, nn_score);
        if n <= 1 {
            return AcoResult {
                tour: best.0,
                score: nn_score,
                iterations: 0,
                history: vec![nn_score],
            };
        }
        // Row n is the officer's position.
        let leg = |from: usize, to: usize| if from == n { inst.start[to] } else { inst.travel[from][to] };
        let scale = nn_score.duration.max(1e-9) / n as f64;
        let heuristic: Vec<Vec<f64>> = (0..=n)
            .map(|i| (0..n).map(|j| (scale / (leg(i, j) + 1e-3 * scale)).powf(self.params.beta)).collect())
            .collect();
        let tau0: f64 = 1.0;
        let mut pheromone = vec![vec![tau0; n]; n + 1];
        let mut history = Vec::new();
        let mut iterations = 0;
        let mut weights = vec![0.0f64; n];
        'outer: loop {
            if self.params.max_iterations.is_some_and(|m| iterations >= m) {
                break;
            }
            let mut iter_best: Option<(Vec<usize>, TourScore)> = None;
            for _ in 0..self.params.ants {
                if self.params.max_iterations.is_none() && started.elapsed() >= budget {
                    break 'outer;
                }
                let mut visited = vec![false; n];
                let mut tour = Vec::with_capacity(n);
                let mut at = n;
                for _ in 0..n {
                    let mut total: f64 = 0.0;
                    for j in 0..n {
                        weights[j] = if visited[j] {
                            0.0
                        } else {
                            pheromone[at][j].powf(self.params.alpha) * heuristic[at][j]
                        };
                        total += weights[j];
                    }
                    let next = if total > 0.0 && total.is_finite() {
                        let mut r = self.rng.gen::<f64>() * total;
                        let mut pick = None;
                        for j in (0..n).filter(|&j| !visited[j]) {
                            pick = Some(j);
                            r -= weights[j];
                            if r <= 0.0 {
                                break;
                            }
                        }
                        pick.expect("unvisited node")
                    } else {
                        (0..n).find(|&j| !visited[j]).expect("unvisited node")
                    };
                    visited[next] = true;
                    tour.push(next);
                    at = next;
                }
                let score = inst.score(&tour);
                if iter_best.as_ref().is_none_or(|(_, s)| score.better_than(s)) {
                    iter_best = Some((tour, score));
                }
            }
            let Some(iter_best) = iter_best else { break };
            if iter_best.1.better_than(&best.1) {
                best = iter_best.clone();
            }
            for row in pheromone.iter_mut() {
                for v in row.iter_mut() {
                    *v = (*v * (1.0 - self.params.rho)).max(1e-12);
                }
            }
            for (tour, rank_weight) in [(&iter_best.0, 1.0), (&best.0, 2.0)] {
                let s = inst.score(tour);
                let amount = self.params.deposit
                    * rank_weight
                    * (1.0 + s.expected)
                    / (1.0 + nn_score.expected)
                    * (nn_score.duration.max(1e-9) / s.duration.max(1e-9));
                let mut at = n;
                for &j in tour.iter() {
                    pheromone[at][j] += amount;
                    at = j;
                }
            }
            iterations += 1;
            history.push(best.1);
        }
        if history.is_empty() {
            history.push(best.1);
        }
        AcoResult {
            tour: best.0,
            score: best.1,
            iterations,
            history,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64) -> Self {
        RandomPolicy {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn draw(&mut self, n_actions: usize) -> usize {
        self.rng.gen_range(0..n_actions)
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> &str {
        "random"
    }

    fn act(&mut self, world: &World, _obs: &Observation) -> Result<usize> {
        Ok(self.draw(world.n_actions()))
    }
}

#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    pub model: ViolationRateModel,
}

impl Policy for GreedyPolicy {
    fn name(&self) -> &str {
        "greedy"
    }

    fn act(&mut self, world: &World, obs: &Observation) -> Result<usize> {
        Ok(greedy_action(world, obs, &self.model))
    }
}

/// Plans a tour at every decision and executes its first leg.
#[derive(Debug, Clone)]
pub struct AcoPolicy {
    pub model: ViolationRateModel,
    pub planner: AcoPlanner,
}

impl Policy for AcoPolicy {
    fn name(&self) -> &str {
        "aco"
    }

    fn act(&mut self, world: &World, obs: &Observation) -> Result<usize> {
        let inst = TourInstance::from_observation(world, obs, &self.model);
        if inst.is_empty() {
            return Ok(greedy_action(world, obs, &self.model));
        }
        let plan = self.planner.plan(&inst);
        Ok(inst.actions[plan.tour[0]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::ParkingEvent;
    use chrono::NaiveDate;

    fn log(events: Vec<ParkingEvent>) -> EventLog {
        EventLog::new(NaiveDate::from_ymd_opt(2019, 1, 2).unwrap(), events).unwrap()
    }

    fn ev(spot: usize, arrival: f64, stay: f64) -> ParkingEvent {
        ParkingEvent { spot, arrival, departure: arrival + stay, max_duration: 100.0 }
    }

    #[test]
    fn rate_is_inverse_mean_overstay() {
        let l = log(vec![ev(0, 0.0, 700.0), ev(0, 1000.0, 1300.0), ev(1, 0.0, 50.0)]);
        let m = ViolationRateModel::fit([&l], 3).unwrap();
        assert!((m.rates[0] - 1.0 / 900.0).abs() < 1e-15);
        assert_eq!(m.rates[1], m.fallback);
        assert_eq!(m.rates[2], m.fallback);
        assert!((m.fallback - 1.0 / 900.0).abs() < 1e-15);
    }

    #[test]
    fn no_violations_is_an_error() {
        let l = log(vec![ev(0, 0.0, 50.0)]);
        assert!(matches!(ViolationRateModel::fit([&l], 1), Err(Error::NoViolations)));
    }

    #[test]
    fn rate_csv_round_trip() {
        let m = ViolationRateModel { rates: vec![0.001, 0.003], fallback: 0.002 };
        let mut buf = Vec::new();
        m.to_csv(&mut buf).unwrap();
        let back = ViolationRateModel::from_csv(Path::new("r.csv"), std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn tour_score_prefers_expected_then_duration() {
        let a = TourScore { expected: 2.0, duration: 50.0 };
        let b = TourScore { expected: 2.0, duration: 40.0 };
        let c = TourScore { expected: 2.5, duration: 90.0 };
        assert!(b.better_than(&a));
        assert!(c.better_than(&b));
        assert!(!a.better_than(&a));
    }

    #[test]
    fn single_node_tour() {
        let inst = TourInstance {
            actions: vec![4],
            start: vec![10.0],
            travel: vec![vec![0.0]],
            rates: vec![vec![0.001]],
        };
        let mut p = AcoPlanner::new(AcoParams::default(), 0).unwrap();
        assert_eq!(p.plan(&inst).tour, vec![0]);
    }

    #[test]
    fn random_single_action() {
        let mut r = RandomPolicy::new(3);
        assert!((0..20).all(|_| r.draw(1) == 0));
    }
}
