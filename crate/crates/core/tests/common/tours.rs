//! Exhaustive tour search and exhaustive greedy scoring.

use topsim::baselines::{TourInstance, ViolationRateModel};
use topsim::simenv::{Observation, SpotStatus, World};

/// Arrival time at every node and total expected fines for `order`.
pub fn tour_value(inst: &TourInstance, order: &[usize]) -> (f64, f64) {
    let mut t = 0.0;
    let mut expected = 0.0;
    for (k, &i) in order.iter().enumerate() {
        t += if k == 0 { inst.start[i] } else { inst.travel[order[k - 1]][i] };
        for &l in &inst.rates[i] {
            expected += (-l * t).exp();
        }
    }
    (expected, t)
}

fn permutations(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == items.len() {
        out.push(items.clone());
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permutations(items, k + 1, out);
        items.swap(k, i);
    }
}

pub fn all_orders(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    permutations(&mut (0..n).collect(), 0, &mut out);
    out
}

/// Shortest total duration over every visiting order.
pub fn optimal_duration(inst: &TourInstance) -> f64 {
    all_orders(inst.len())
        .iter()
        .map(|o| tour_value(inst, o).1)
        .fold(f64::INFINITY, f64::min)
}

/// Largest expected fines over every visiting order.
pub fn optimal_expected(inst: &TourInstance) -> f64 {
    all_orders(inst.len())
        .iter()
        .map(|o| tour_value(inst, o).0)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Greedy choice by scoring every action independently:
/// violating spots by `exp(−λ·walk)`, then optimistic occupied spots by
/// `exp(−λ·max(0, walk − until_violation))`, then the quickest route that
/// moves. Ties go to the lowest action index.
pub fn exhaustive_greedy(world: &World, obs: &Observation, model: &ViolationRateModel) -> usize {
    let n = world.n_actions();
    let acts = &world.net.actions;
    let score = |a: usize, pick: &dyn Fn(usize) -> Option<f64>| {
        acts.spots(a)
            .iter()
            .filter_map(|&p| pick(p))
            .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
    };
    let best = |pick: &dyn Fn(usize) -> Option<f64>| {
        let mut best: Option<(usize, f64)> = None;
        for a in 0..n {
            if let Some(s) = score(a, pick) {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((a, s));
                }
            }
        }
        best.map(|(a, _)| a)
    };
    let violating = |p: usize| {
        (obs.status[p] == SpotStatus::InViolation).then(|| (-model.rate(p) * obs.walk[p]).exp())
    };
    if let Some(a) = best(&violating) {
        return a;
    }
    let optimistic = |p: usize| {
        (obs.status[p] == SpotStatus::Occupied && obs.walk[p] >= obs.until_violation[p])
            .then(|| (-model.rate(p) * (obs.walk[p] - obs.until_violation[p]).max(0.0)).exp())
    };
    if let Some(a) = best(&optimistic) {
        return a;
    }
    let routes = &world.origin(obs.origin).routes;
    let mut best: Option<(usize, f64)> = None;
    for (a, r) in routes.iter().enumerate() {
        if r.edges.is_empty() {
            continue;
        }
        if best.is_none_or(|(_, d)| r.duration < d) {
            best = Some((a, r.duration));
        }
    }
    best.map_or(0, |(a, _)| a)
}

/// Six-or-so nodes scattered in a 2 km square with zero rates, so every
/// order has the same expected value and only the duration matters.
pub fn frozen_instance<R: rand::Rng>(rng: &mut R, n: usize) -> TourInstance {
    let speed = 5.0 / 3.6;
    let pts: Vec<(f64, f64)> = (0..=n).map(|_| (rng.gen_range(0.0..2000.0), rng.gen_range(0.0..2000.0))).collect();
    let dist = |a: usize, b: usize| {
        let (dx, dy) = (pts[a].0 - pts[b].0, pts[a].1 - pts[b].1);
        (dx * dx + dy * dy).sqrt() / speed
    };
    TourInstance {
        actions: (0..n).collect(),
        start: (0..n).map(|i| dist(n, i)).collect(),
        travel: (0..n).map(|i| (0..n).map(|j| dist(i, j)).collect()).collect(),
        rates: vec![vec![0.0]; n],
    }
}
