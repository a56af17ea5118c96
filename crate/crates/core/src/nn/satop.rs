//! Spatial-aware Q network over parking spots and edge actions.
//!
//! Per forward pass:
//!
//! 1. every spot's 12 features plus its learnable embedding go through a
//!    shared MLP, giving `h_p`;
//! 2. the action-target encoder sums `W_at h_p` over spots on the target
//!    edge and adds `b_at` (identity activation);
//! 3. route aggregation sums `θ · φ̂_a(p) · h_p` over spots passed on the
//!    way to the target;
//! 4. `MLP_ah([ar_a, at_a, duration_a])` gives the layer-0 action state;
//! 5. `N` future-positioning layers pass messages between actions weighted
//!    by `tanh(MLP_δ(δ_{a,a'}))`, with a residual to layer 0 and layer norm;
//! 6. `MLP_Q` reduces each action state to a Q value.
//!
//! Several samples are evaluated at once by stacking their spot rows and
//! action rows; the inter-action weights depend only on the static edge
//! information and are shared across the batch.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{ParamId, ParamStore};
use crate::nn::tape::{SparseRows, Tape, Var};

/// Width of the per-spot observation row.
pub const FEATURE_DIM: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SatopConfig {
    pub n_spots: usize,
    pub d_h: usize,
    pub d_le: usize,
    pub d_at: usize,
    pub d_ah: usize,
    pub spot_hidden: usize,
    pub spot_layers: usize,
    pub ah_hidden: usize,
    pub ah_layers: usize,
    pub delta_hidden: usize,
    pub delta_layers: usize,
    pub q_hidden: usize,
    pub q_layers: usize,
    pub future_layers: usize,
}

impl SatopConfig {
    /// Published architecture sizes.
    pub fn full(n_spots: usize) -> Self {
        SatopConfig {
            n_spots,
            d_h: 256,
            d_le: 64,
            d_at: 256,
            d_ah: 256,
            spot_hidden: 256,
            spot_layers: 4,
            ah_hidden: 1024,
            ah_layers: 4,
            delta_hidden: 256,
            delta_layers: 2,
            q_hidden: 256,
            q_layers: 4,
            future_layers: 2,
        }
    }

    /// CPU-sized variant with the same topology.
    pub fn desk(n_spots: usize) -> Self {
        SatopConfig {
            n_spots,
            d_h: 32,
            d_le: 8,
            d_at: 32,
            d_ah: 32,
            spot_hidden: 32,
            ah_hidden: 32,
            delta_hidden: 16,
            q_hidden: 32,
            ..SatopConfig::full(n_spots)
        }
    }

    /// Very small variant for gradient checks.
    pub fn tiny(n_spots: usize) -> Self {
        SatopConfig {
            n_spots,
            d_h: 8,
            d_le: 4,
            d_at: 8,
            d_ah: 8,
            spot_hidden: 8,
            ah_hidden: 8,
            delta_hidden: 8,
            q_hidden: 8,
            ..SatopConfig::full(n_spots)
        }
    }
}

/// Position-dependent geometry consumed by the network.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryContext {
    pub n_spots: usize,
    /// Spots on each action's target edge.
    pub target_spots: Arc<Vec<Vec<usize>>>,
    /// Spots passed on each action's route with normalized pass-by time.
    pub route_spots: Vec<Vec<(usize, f64)>>,
    /// Normalized route duration per action.
    pub durations: Vec<f64>,
    /// Row `a·|A| + a'` holds the normalized (travel time, spot count)
    /// between action targets.
    pub edge_info: Arc<Array2<f64>>,
}

impl GeometryContext {
    pub fn n_actions(&self) -> usize {
        self.target_spots.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_actions();
        if n == 0 {
            return Err(Error::Shape("context has no actions".into()));
        }
        if self.route_spots.len() != n || self.durations.len() != n {
            return Err(Error::Shape("context lists disagree on action count".into()));
        }
        if self.edge_info.dim() != (n * n, 2) {
            return Err(Error::Shape(format!(
                "edge info is {:?}, expected ({}, 2)",
                self.edge_info.dim(),
                n * n
            )));
        }
        let in_range = |p: usize| p < self.n_spots;
        if !self.target_spots.iter().flatten().copied().all(in_range)
            || !self.route_spots.iter().flatten().all(|&(p, w)| in_range(p) && w.is_finite())
        {
            return Err(Error::Shape("context references spots out of range".into()));
        }
        Ok(())
    }
}

/// One network input: `|P| × 12` features and the matching geometry.
#[derive(Debug, Clone, Copy)]
pub struct Sample<'a> {
    pub features: &'a Array2<f64>,
    pub context: &'a GeometryContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Elu,
    Tanh,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
    /// (gain, bias) after each hidden activation; empty without layer norm.
    pub norms: Vec<(ParamId, ParamId)>,
    pub activation: Activation,
}

fn uniform_fan_in<R: Rng>(rng: &mut R, fan_in: usize, rows: usize, cols: usize) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

impl Mlp {
    /// `dims = [in, hidden.., out]`; no activation after the last layer.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        dims: &[usize],
        activation: Activation,
        layer_norm: bool,
    ) -> Mlp {
        let mut mlp = Mlp {
            weights: Vec::new(),
            biases: Vec::new(),
            norms: Vec::new(),
            activation,
        };
        for (i, w) in dims.windows(2).enumerate() {
            let (fan_in, out) = (w[0], w[1]);
            mlp.weights
                .push(store.add(format!("{name}.w{i}"), uniform_fan_in(rng, fan_in, fan_in, out)));
            mlp.biases
                .push(store.add(format!("{name}.b{i}"), uniform_fan_in(rng, fan_in, 1, out)));
            if layer_norm && i + 2 < dims.len() {
                let g = store.add(format!("{name}.ln{i}.gain"), Array2::ones((1, out)));
                let b = store.add(format!("{name}.ln{i}.bias"), Array2::zeros((1, out)));
                mlp.norms.push((g, b));
            }
        }
        mlp
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, mut x: Var) -> Var {
        let last = self.weights.len() - 1;
        for i in 0..=last {
            let w = tape.param(store, self.weights[i]);
            let b = tape.param(store, self.biases[i]);
            x = tape.matmul(x, w);
            x = tape.add_bias(x, b);
            if i < last {
                x = match self.activation {
                    Activation::Elu => tape.elu(x),
                    Activation::Tanh => tape.tanh(x),
                };
                if let Some(&(g, b)) = self.norms.get(i) {
                    let g = tape.param(store, g);
                    let b = tape.param(store, b);
                    x = tape.layer_norm(x, g, b);
                }
            }
        }
        x
    }
}

fn layer_dims(input: usize, hidden: usize, layers: usize, output: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend(std::iter::repeat_n(hidden, layers.saturating_sub(1)));
    dims.push(output);
    dims
}

#[derive(Debug, Clone)]
pub struct FutureLayer {
    pub delta_mlp: Mlp,
    pub weight: ParamId,
    pub bias: ParamId,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct SatopNet {
    pub config: SatopConfig,
    pub spot_mlp: Mlp,
    pub embedding: ParamId,
    pub w_at: ParamId,
    pub b_at: ParamId,
    pub theta: ParamId,
    pub ah_mlp: Mlp,
    pub future: Vec<FutureLayer>,
    pub q_mlp: Mlp,
}

impl SatopNet {
    /// Fan-in uniform weights, N(0, 0.1) embeddings, θ = 1.
    pub fn new<R: Rng>(config: SatopConfig, rng: &mut R) -> (SatopNet, ParamStore) {
        let c = &config;
        let mut store = ParamStore::default();
        let spot_mlp = Mlp::new(
            &mut store,
            rng,
            "spot_mlp",
            &layer_dims(FEATURE_DIM + c.d_le, c.spot_hidden, c.spot_layers, c.d_h),
            Activation::Elu,
            true,
        );
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let embedding = store.add(
            "embedding",
            Array2::from_shape_fn((c.n_spots, c.d_le), |_| normal.sample(rng)),
        );
        let w_at = store.add("action_target.w", uniform_fan_in(rng, c.d_h, c.d_h, c.d_at));
        let b_at = store.add("action_target.b", uniform_fan_in(rng, c.d_h, 1, c.d_at));
        let theta = store.add("route.theta", Array2::ones((1, 1)));
        let ah_mlp = Mlp::new(
            &mut store,
            rng,
            "ah_mlp",
            &layer_dims(c.d_h + c.d_at + 1, c.ah_hidden, c.ah_layers, c.d_ah),
            Activation::Elu,
            true,
        );
        let future = (0..c.future_layers)
            .map(|l| FutureLayer {
                delta_mlp: Mlp::new(
                    &mut store,
                    rng,
                    &format!("future{l}.delta_mlp"),
                    &layer_dims(2, c.delta_hidden, c.delta_layers, 1),
                    Activation::Tanh,
                    false,
                ),
                weight: store.add(format!("future{l}.w"), uniform_fan_in(rng, c.d_ah, c.d_ah, c.d_ah)),
                bias: store.add(format!("future{l}.b"), uniform_fan_in(rng, c.d_ah, 1, c.d_ah)),
                ln_gain: store.add(format!("future{l}.ln.gain"), Array2::ones((1, c.d_ah))),
                ln_bias: store.add(format!("future{l}.ln.bias"), Array2::zeros((1, c.d_ah))),
            })
            .collect();
        let q_mlp = Mlp::new(
            &mut store,
            rng,
            "q_mlp",
            &layer_dims(c.d_ah, c.q_hidden, c.q_layers, 1),
            Activation::Elu,
            true,
        );
        let net = SatopNet {
            config,
            spot_mlp,
            embedding,
            w_at,
            b_at,
            theta,
            ah_mlp,
            future,
            q_mlp,
        };
        (net, store)
    }

    fn check_samples(&self, samples: &[Sample]) -> Result<usize> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Shape("empty batch".into()))?;
        let n_actions = first.context.n_actions();
        for s in samples {
            if s.features.dim() != (self.config.n_spots, FEATURE_DIM) {
                return Err(Error::Shape(format!(
                    "features are {:?}, expected ({}, {FEATURE_DIM})",
                    s.features.dim(),
                    self.config.n_spots
                )));
            }
            if s.context.n_spots != self.config.n_spots || s.context.n_actions() != n_actions {
                return Err(Error::Shape("contexts disagree with the network or each other".into()));
            }
            if !Arc::ptr_eq(&s.context.edge_info, &first.context.edge_info)
                && s.context.edge_info != first.context.edge_info
            {
                return Err(Error::Shape("samples from different action graphs".into()));
            }
        }
        first.context.validate()?;
        Ok(n_actions)
    }

    /// Stacked spot features, `(B·|P|) × 12`.
    pub fn stack_features(&self, samples: &[Sample]) -> Array2<f64> {
        let p = self.config.n_spots;
        let mut out = Array2::zeros((samples.len() * p, FEATURE_DIM));
        for (b, s) in samples.iter().enumerate() {
            out.slice_mut(ndarray::s![b * p..(b + 1) * p, ..]).assign(s.features);
        }
        out
    }

    /// `h_p` for every stacked spot row.
    pub fn encode_spots(&self, tape: &mut Tape, store: &ParamStore, features: Var, batch: usize) -> Var {
        let emb = tape.param(store, self.embedding);
        let emb = tape.tile_rows(emb, batch);
        let x = tape.concat_cols(&[features, emb]);
        self.spot_mlp.forward(tape, store, x)
    }

    /// `at_a = (Σ_{p ∈ PE(a)} W_at h_p) + b_at`.
    pub fn action_target(&self, tape: &mut Tape, store: &ParamStore, h: Var, samples: &[Sample]) -> Var {
        let p = self.config.n_spots;
        let rows: SparseRows = samples
            .iter()
            .enumerate()
            .flat_map(|(b, s)| {
                s.context
                    .target_spots
                    .iter()
                    .map(move |list| list.iter().map(|&i| (b * p + i, 1.0)).collect())
            })
            .collect();
        let summed = tape.aggregate(h, Arc::new(rows));
        let w = tape.param(store, self.w_at);
        let b = tape.param(store, self.b_at);
        let x = tape.matmul(summed, w);
        tape.add_bias(x, b)
    }

    /// `ar_a = Σ_{p ∈ PR_a} θ · φ̂_a(p) · h_p`.
    pub fn route_aggregate(&self, tape: &mut Tape, store: &ParamStore, h: Var, samples: &[Sample]) -> Var {
        let p = self.config.n_spots;
        let rows: SparseRows = samples
            .iter()
            .enumerate()
            .flat_map(|(b, s)| {
                s.context
                    .route_spots
                    .iter()
                    .map(move |list| list.iter().map(|&(i, w)| (b * p + i, w)).collect())
            })
            .collect();
        let weighted = tape.aggregate(h, Arc::new(rows));
        let theta = tape.param(store, self.theta);
        tape.scale(weighted, theta)
    }

    /// Normalized durations stacked as a `(B·|A|) × 1` column.
    pub fn stack_durations(samples: &[Sample]) -> Array2<f64> {
        let d: Vec<f64> = samples
            .iter()
            .flat_map(|s| s.context.durations.iter().copied())
            .collect();
        let n = d.len();
        Array2::from_shape_vec((n, 1), d).expect("column")
    }

    /// `ah⁰_a = MLP_ah([ar_a, at_a, duration_a])`.
    pub fn action_representation(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ar: Var,
        at: Var,
        durations: Var,
    ) -> Var {
        let x = tape.concat_cols(&[ar, at, durations]);
        self.ah_mlp.forward(tape, store, x)
    }

    /// `δ̂^(l) = tanh(MLP_δ^(l)(δ))` reshaped to `|A| × |A|`.
    pub fn edge_importance(&self, tape: &mut Tape, store: &ParamStore, layer: usize, delta: Var) -> Var {
        let pairs = tape.shape(delta).0;
        let n = (pairs as f64).sqrt().round() as usize;
        let raw = self.future[layer].delta_mlp.forward(tape, store, delta);
        let squashed = tape.tanh(raw);
        tape.reshape(squashed, n, n)
    }

    /// Message passing between actions with residual to layer 0.
    pub fn future_positioning(&self, tape: &mut Tape, store: &ParamStore, ah0: Var, delta: Var) -> Var {
        let mut ah = ah0;
        for (l, layer) in self.future.iter().enumerate() {
            let importance = self.edge_importance(tape, store, l, delta);
            let w = tape.param(store, layer.weight);
            let b = tape.param(store, layer.bias);
            let projected = tape.matmul(ah, w);
            let messages = tape.block_left_mul(importance, projected);
            let pre = tape.add_bias(messages, b);
            let activated = tape.elu(pre);
            let residual = tape.add(activated, ah0);
            let g = tape.param(store, layer.ln_gain);
            let beta = tape.param(store, layer.ln_bias);
            ah = tape.layer_norm(residual, g, beta);
        }
        ah
    }

    pub fn q_head(&self, tape: &mut Tape, store: &ParamStore, ah: Var) -> Var {
        self.q_mlp.forward(tape, store, ah)
    }

    /// Q values for all samples as a `(B·|A|) × 1` column.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, samples: &[Sample]) -> Result<Var> {
        self.check_samples(samples)?;
        let features = tape.constant(self.stack_features(samples));
        let h = self.encode_spots(tape, store, features, samples.len());
        let at = self.action_target(tape, store, h, samples);
        let ar = self.route_aggregate(tape, store, h, samples);
        let durations = tape.constant(Self::stack_durations(samples));
        let ah0 = self.action_representation(tape, store, ar, at, durations);
        let delta = tape.constant(samples[0].context.edge_info.as_ref().clone());
        let ah = self.future_positioning(tape, store, ah0, delta);
        let q = self.q_head(tape, store, ah);
        tape.check_finite()?;
        Ok(q)
    }

    /// Q values per sample without keeping the tape.
    pub fn q_values(&self, store: &ParamStore, samples: &[Sample]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let q = self.forward(&mut tape, store, samples)?;
        let n = samples[0].context.n_actions();
        let col = tape.value(q);
        Ok((0..samples.len())
            .map(|b| (0..n).map(|a| col[[b * n + a, 0]]).collect())
            .collect())
    }
}

/// Index of the largest value; the smallest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
