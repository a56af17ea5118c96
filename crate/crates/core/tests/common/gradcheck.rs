//! Central finite differences against tape gradients.

use ndarray::Array2;
use rand::Rng;
use std::sync::Arc;
use topsim::nn::{GeometryContext, ParamStore, Sample, SatopNet, Tape};

/// Random geometry for `n_spots` spots and `n_actions` actions. Every spot
/// sits on exactly one target edge; routes pass a random subset.
pub fn random_context<R: Rng>(rng: &mut R, n_spots: usize, n_actions: usize) -> GeometryContext {
    let mut target_spots = vec![Vec::new(); n_actions];
    for p in 0..n_spots {
        let a = if p < n_actions { p } else { rng.gen_range(0..n_actions) };
        target_spots[a].push(p);
    }
    let route_spots = (0..n_actions)
        .map(|_| {
            let mut route = Vec::new();
            for p in 0..n_spots {
                if rng.gen_bool(0.5) {
                    route.push((p, rng.gen_range(0.0..1.0)));
                }
            }
            route
        })
        .collect();
    GeometryContext {
        n_spots,
        target_spots: Arc::new(target_spots),
        route_spots,
        durations: (0..n_actions).map(|_| rng.gen_range(0.0..1.0)).collect(),
        edge_info: Arc::new(Array2::from_shape_fn((n_actions * n_actions, 2), |_| rng.gen_range(0.0..1.0))),
    }
}

/// Status one-hot plus uniform values in the contract ranges.
pub fn random_features<R: Rng>(rng: &mut R, n_spots: usize) -> Array2<f64> {
    let mut f = Array2::zeros((n_spots, topsim::nn::FEATURE_DIM));
    for p in 0..n_spots {
        f[[p, rng.gen_range(0..4)]] = 1.0;
        f[[p, 4]] = f64::from(u8::from(rng.gen_bool(0.5)));
        f[[p, 9]] = rng.gen_range(-1.0..2.0);
        for k in [5, 6, 7, 8, 10, 11] {
            f[[p, k]] = rng.gen_range(0.0..1.0);
        }
    }
    f
}

/// `Σ weights ⊙ Q` over the stacked batch.
pub fn weighted_q(net: &SatopNet, store: &ParamStore, samples: &[Sample], weights: &Array2<f64>) -> f64 {
    let q = net.q_values(store, samples).expect("forward");
    q.iter().flatten().zip(weights.iter()).map(|(q, w)| q * w).sum()
}

pub struct CheckReport {
    pub coordinates: usize,
    pub max_relative: f64,
    pub worst: String,
    /// Parameter names that had at least one coordinate checked.
    pub covered: Vec<String>,
}

/// Relative error `|g − n| / max(|g|, |n|, floor)` per coordinate, for
/// every scalar of every parameter.
pub fn check_all(
    net: &SatopNet,
    store: &ParamStore,
    samples: &[Sample],
    weights: &Array2<f64>,
    h: f64,
    floor: f64,
) -> CheckReport {
    let mut tape = Tape::new();
    let q = net.forward(&mut tape, store, samples).expect("forward");
    let loss = tape.weighted_sum(q, weights.clone());
    let grads = tape.backward(loss).expect("backward");
    let mut probe = store.clone();
    let mut report = CheckReport {
        coordinates: 0,
        max_relative: 0.0,
        worst: String::new(),
        covered: Vec::new(),
    };
    for id in store.ids() {
        let dim = store.get(id).dim();
        for i in 0..dim.0 {
            for j in 0..dim.1 {
                let orig = store.get(id)[[i, j]];
                probe.get_mut(id)[[i, j]] = orig + h;
                let up = weighted_q(net, &probe, samples, weights);
                probe.get_mut(id)[[i, j]] = orig - h;
                let down = weighted_q(net, &probe, samples, weights);
                probe.get_mut(id)[[i, j]] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.get(id).map_or(0.0, |g| g[[i, j]]);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
                if rel > report.max_relative {
                    report.max_relative = rel;
                    report.worst = format!("{}[{i},{j}]: tape {analytic}, numeric {numeric}", store.name(id));
                }
                report.coordinates += 1;
            }
        }
        report.covered.push(store.name(id).to_string());
    }
    report
}
