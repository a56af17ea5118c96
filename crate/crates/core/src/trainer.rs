//! Semi-Markov DoubleDQN training.
//!
//! Several environments are stepped in lockstep. Each round picks one action
//! per environment (ε-greedy, with all greedy choices batched into a single
//! forward pass), steps the environments, then appends the transitions to
//! the replay buffer in environment order. Random draws come from one
//! seeded generator used only between rounds, so a run is reproducible for
//! a given seed whether the environments step in parallel or not.
//!
//! Bootstrapped targets use `y = ζ + γ^τ · Q_target(s', argmax_a Q_online(s', a))`.

use std::collections::VecDeque;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use chrono::NaiveDate;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::EventLogs;
use crate::nn::{argmax, ParamStore, RmsProp, RmsPropConfig, Sample, SatopConfig, SatopNet, Tape};
use crate::par::{self, ExecMode};
use crate::simenv::{run_episode, Env, EpisodeSummary, Observation, Policy, SimState, Transition, World};

/// Fixed-capacity ring buffer; the oldest entry is overwritten first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer<T> {
    capacity: usize,
    items: VecDeque<T>,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    /// Oldest first.
    pub fn get(&self, i: usize) -> &T {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    /// Uniform indices, with replacement.
    pub fn sample_indices<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<usize> {
        (0..n).map(|_| rng.gen_range(0..self.items.len())).collect()
    }
}

/// Replay entry. Geometry is looked up from the origin index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTransition {
    pub features: Array2<f32>,
    pub origin: usize,
    pub action: usize,
    pub zeta: f64,
    pub tau: usize,
    pub next_features: Array2<f32>,
    pub next_origin: usize,
    pub done: bool,
    pub truncated: bool,
}

impl StoredTransition {
    pub fn from_transition(t: &Transition) -> Self {
        StoredTransition {
            features: t.observation.features.mapv(|v| v as f32),
            origin: t.observation.origin,
            action: t.action,
            zeta: t.zeta,
            tau: t.tau,
            next_features: t.next_observation.features.mapv(|v| v as f32),
            next_origin: t.next_observation.origin,
            done: t.done,
            truncated: t.truncated,
        }
    }
}

/// Constant until `decay_start`, exponential down to `min` at `decay_end`,
/// constant afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub min: f64,
    pub decay_start: u64,
    pub decay_end: u64,
}

impl EpsilonSchedule {
    pub fn value(&self, step: u64) -> f64 {
        if step <= self.decay_start {
            return self.start;
        }
        if step >= self.decay_end {
            return self.min;
        }
        let frac = (step - self.decay_start) as f64 / (self.decay_end - self.decay_start) as f64;
        (self.start * ((self.min / self.start).ln() * frac).exp()).max(self.min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetSize {
    Full,
    Desk,
    Tiny,
}

impl NetSize {
    pub fn config(self, n_spots: usize) -> SatopConfig {
        match self {
            NetSize::Full => SatopConfig::full(n_spots),
            NetSize::Desk => SatopConfig::desk(n_spots),
            NetSize::Tiny => SatopConfig::tiny(n_spots),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub n_envs: usize,
    /// Environment steps per gradient step.
    pub train_every: u64,
    /// Gradient steps between target-network copies.
    pub target_update: u64,
    pub learning_start: u64,
    pub total_steps: u64,
    /// Step quota per training "episode"; validation runs after each.
    pub steps_per_episode: u64,
    pub buffer_capacity: usize,
    pub epsilon: EpsilonSchedule,
    pub optimizer: RmsPropConfig,
    /// Bootstrap from the next state when an action was cut by the shift end.
    pub bootstrap_truncated: bool,
    pub net: NetSize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::full()
    }
}

impl TrainConfig {
    pub fn full() -> Self {
        TrainConfig {
            batch_size: 256,
            n_envs: 8,
            train_every: 32,
            target_update: 3125,
            learning_start: 10_000,
            total_steps: 8_000_000,
            steps_per_episode: 200_000,
            buffer_capacity: 100_000,
            epsilon: EpsilonSchedule {
                start: 1.0,
                min: 0.01,
                decay_start: 10_000,
                decay_end: 5_000_000,
            },
            optimizer: RmsPropConfig::default(),
            bootstrap_truncated: false,
            net: NetSize::Full,
            seed: 0,
        }
    }

    /// 100k-step CPU run.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 32,
            n_envs: 8,
            train_every: 8,
            target_update: 250,
            learning_start: 2_000,
            total_steps: 100_000,
            steps_per_episode: 10_000,
            buffer_capacity: 10_000,
            epsilon: EpsilonSchedule {
                start: 1.0,
                min: 0.01,
                decay_start: 2_000,
                decay_end: 62_500,
            },
            optimizer: RmsPropConfig {
                lr: 5e-4,
                ..RmsPropConfig::default()
            },
            net: NetSize::Desk,
            ..TrainConfig::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.batch_size > 0
            && self.n_envs > 0
            && self.train_every > 0
            && self.target_update > 0
            && self.steps_per_episode > 0
            && self.buffer_capacity > 0;
        let eps = &self.epsilon;
        let eps_ok = eps.min > 0.0
            && eps.min <= eps.start
            && eps.start <= 1.0
            && eps.decay_start < eps.decay_end;
        let opt = &self.optimizer;
        let opt_ok = opt.lr > 0.0 && (0.0..1.0).contains(&opt.alpha) && opt.eps > 0.0;
        if positive && eps_ok && opt_ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration {self:?}")))
        }
    }

    /// Gradient steps owed after `env_steps` environment steps.
    pub fn grad_steps_due(&self, env_steps: u64) -> u64 {
        env_steps.saturating_sub(self.learning_start) / self.train_every
    }
}

/// `ζ + γ^τ · bootstrap`, or `ζ` when there is nothing to bootstrap from.
pub fn td_target(zeta: f64, tau: usize, gamma: f64, bootstrap: Option<f64>) -> f64 {
    match bootstrap {
        Some(v) => zeta + gamma.powi(tau as i32) * v,
        None => zeta,
    }
}

/// DoubleDQN targets from next-state Q values of the online and target nets.
pub fn double_dqn_targets(
    batch: &[&StoredTransition],
    q_online_next: &[Vec<f64>],
    q_target_next: &[Vec<f64>],
    gamma: f64,
    bootstrap_truncated: bool,
) -> Vec<f64> {
    batch
        .iter()
        .enumerate()
        .map(|(b, t)| {
            let terminal = t.done && !(bootstrap_truncated && t.truncated);
            let bootstrap = (!terminal).then(|| q_target_next[b][argmax(&q_online_next[b])]);
            td_target(t.zeta, t.tau, gamma, bootstrap)
        })
        .collect()
}

/// Greedy policy over a Q network.
#[derive(Debug, Clone)]
pub struct QPolicy {
    pub net: Arc<SatopNet>,
    pub store: Arc<ParamStore>,
}

impl QPolicy {
    pub fn q_values(&self, obs: &Observation) -> Result<Vec<f64>> {
        let sample = Sample {
            features: &obs.features,
            context: &obs.context,
        };
        Ok(self.net.q_values(&self.store, &[sample])?.remove(0))
    }
}

impl Policy for QPolicy {
    fn name(&self) -> &str {
        "satop"
    }

    fn act(&mut self, _world: &World, obs: &Observation) -> Result<usize> {
        Ok(argmax(&self.q_values(obs)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_day: Vec<EpisodeSummary>,
}

impl EvalReport {
    pub fn mean_fines(&self) -> f64 {
        self.per_day.iter().map(|s| s.fines as f64).sum::<f64>() / self.per_day.len() as f64
    }
}

/// One rollout per day with a fresh policy from `make_policy`.
pub fn evaluate<P, F>(
    world: &Arc<World>,
    logs: &Arc<EventLogs>,
    days: &[NaiveDate],
    mode: ExecMode,
    make_policy: F,
) -> Result<EvalReport>
where
    P: Policy,
    F: Fn(NaiveDate) -> P + Sync + Send,
{
    if days.is_empty() {
        return Err(Error::Config("no evaluation days".into()));
    }
    let per_day = par::map(mode, days, |&day| {
        let mut env = Env::new(Arc::clone(world), Arc::clone(logs));
        let mut policy = make_policy(day);
        run_episode(&mut env, &mut policy, day)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { per_day })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub wall_time: f64,
    pub env_steps: u64,
    pub grad_steps: u64,
    pub epsilon: f64,
    pub train_loss: f64,
    pub val_fines_per_day: f64,
}

/// Where a collector is within its shuffled day order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectorState {
    pub sim: Option<SimState>,
    pub queue: Vec<NaiveDate>,
    pub next: usize,
}

/// Everything needed to continue a run exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainerState {
    pub config: TrainConfig,
    pub gamma: f64,
    pub online: ParamStore,
    pub target: ParamStore,
    pub best: ParamStore,
    pub best_val: Option<f64>,
    pub optimizer: RmsProp,
    pub buffer: ReplayBuffer<StoredTransition>,
    pub rng: ChaCha8Rng,
    pub collectors: Vec<CollectorState>,
    pub env_steps: u64,
    pub grad_steps: u64,
    pub last_loss: f64,
    pub next_eval: u64,
    pub metrics: Vec<MetricsRow>,
    /// Wall time consumed before the latest resume.
    pub elapsed_s: f64,
}

struct Collector {
    env: Env,
    obs: Option<Observation>,
}

pub struct Trainer {
    pub world: Arc<World>,
    pub logs: Arc<EventLogs>,
    pub net: Arc<SatopNet>,
    train_days: Vec<NaiveDate>,
    val_days: Vec<NaiveDate>,
    collectors: Vec<Collector>,
    pub state: TrainerState,
    pub mode: ExecMode,
    out_dir: Option<PathBuf>,
    started: Instant,
}

impl Trainer {
    pub fn new(
        world: Arc<World>,
        logs: Arc<EventLogs>,
        train_days: Vec<NaiveDate>,
        val_days: Vec<NaiveDate>,
        config: TrainConfig,
    ) -> Result<Trainer> {
        config.validate()?;
        if train_days.is_empty() || val_days.is_empty() {
            return Err(Error::Config("training needs at least one train and one validation day".into()));
        }
        for d in train_days.iter().chain(&val_days) {
            if !logs.contains_key(d) {
                return Err(Error::MissingDay(d.to_string()));
            }
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (net, online) = SatopNet::new(config.net.config(world.n_spots()), &mut init_rng);
        let rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
        let state = TrainerState {
            gamma: world.config.gamma,
            target: online.clone(),
            best: online.clone(),
            best_val: None,
            optimizer: RmsProp::new(config.optimizer, &online),
            buffer: ReplayBuffer::new(config.buffer_capacity),
            rng,
            collectors: vec![
                CollectorState {
                    sim: None,
                    queue: Vec::new(),
                    next: 0,
                };
                config.n_envs
            ],
            env_steps: 0,
            grad_steps: 0,
            last_loss: f64::NAN,
            next_eval: config.steps_per_episode,
            metrics: Vec::new(),
            elapsed_s: 0.0,
            online,
            config,
        };
        Trainer::assemble(world, logs, net, train_days, val_days, state)
    }

    fn assemble(
        world: Arc<World>,
        logs: Arc<EventLogs>,
        net: SatopNet,
        train_days: Vec<NaiveDate>,
        val_days: Vec<NaiveDate>,
        state: TrainerState,
    ) -> Result<Trainer> {
        let mut collectors = Vec::with_capacity(state.collectors.len());
        for cs in &state.collectors {
            let mut env = Env::new(Arc::clone(&world), Arc::clone(&logs));
            let obs = match &cs.sim {
                Some(sim) => {
                    env.restore(sim.clone())?;
                    Some(env.observe())
                }
                None => None,
            };
            collectors.push(Collector { env, obs });
        }
        Ok(Trainer {
            world,
            logs,
            net: Arc::new(net),
            train_days,
            val_days,
            collectors,
            state,
            mode: ExecMode::default(),
            out_dir: None,
            started: Instant::now(),
        })
    }

    /// Write checkpoints and metrics under `dir`.
    pub fn with_output(mut self, dir: impl Into<PathBuf>) -> Self {
        self.out_dir = Some(dir.into());
        self
    }

    pub fn with_mode(mut self, mode: ExecMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn save_state(&self, path: &Path) -> Result<()> {
        let mut state = self.state.clone();
        state.elapsed_s = self.wall_time();
        for (cs, c) in state.collectors.iter_mut().zip(&self.collectors) {
            cs.sim = c.env.state().cloned();
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let bytes = bincode::serialize(&state)?;
        fs::write(path, bytes)?;
        Ok(())
    }

    pub fn resume(
        path: &Path,
        world: Arc<World>,
        logs: Arc<EventLogs>,
        train_days: Vec<NaiveDate>,
        val_days: Vec<NaiveDate>,
    ) -> Result<Trainer> {
        let state: TrainerState = bincode::deserialize(&fs::read(path)?)?;
        state.config.validate()?;
        let mut init_rng = ChaCha8Rng::seed_from_u64(state.config.seed);
        let (net, fresh) = SatopNet::new(state.config.net.config(world.n_spots()), &mut init_rng);
        if fresh.len() != state.online.len() || fresh.scalar_count() != state.online.scalar_count() {
            return Err(Error::Checkpoint("trainer state does not match this network".into()));
        }
        Trainer::assemble(world, logs, net, train_days, val_days, state)
    }

    fn wall_time(&self) -> f64 {
        self.state.elapsed_s + self.started.elapsed().as_secs_f64()
    }

    pub fn val_days(&self) -> &[NaiveDate] {
        &self.val_days
    }

    /// Observation collector `i` will act on next, or `None` when its next
    /// round starts a new episode.
    pub fn observation(&self, i: usize) -> Option<&Observation> {
        let c = self.collectors.get(i)?;
        if c.env.is_done() {
            return None;
        }
        c.obs.as_ref()
    }

    pub fn epsilon(&self) -> f64 {
        self.state.config.epsilon.value(self.state.env_steps)
    }

    pub fn policy(&self, store: &ParamStore) -> QPolicy {
        QPolicy {
            net: Arc::clone(&self.net),
            store: Arc::new(store.clone()),
        }
    }

    fn next_day(&mut self, i: usize) -> NaiveDate {
        let cs = &mut self.state.collectors[i];
        if cs.next >= cs.queue.len() {
            cs.queue = self.train_days.clone();
            cs.queue.shuffle(&mut self.state.rng);
            cs.next = 0;
        }
        cs.next += 1;
        cs.queue[cs.next - 1]
    }

    /// One action for each of the first `count` environments.
    pub fn collect_round(&mut self, count: usize) -> Result<Vec<Transition>> {
        let count = count.min(self.collectors.len());
        for i in 0..count {
            if self.collectors[i].obs.is_none() || self.collectors[i].env.is_done() {
                let day = self.next_day(i);
                let obs = self.collectors[i]
                    .env
                    .reset(day)
                    .map_err(|e| Error::Env { index: i, source: Box::new(e) })?;
                self.collectors[i].obs = Some(obs);
            }
        }
        let eps = self.epsilon();
        let n_actions = self.world.n_actions();
        let mut actions: Vec<Option<usize>> = Vec::with_capacity(count);
        for _ in 0..count {
            let explore = self.state.rng.gen::<f64>() < eps;
            actions.push(explore.then(|| self.state.rng.gen_range(0..n_actions)));
        }
        let greedy: Vec<usize> = (0..count).filter(|&i| actions[i].is_none()).collect();
        if !greedy.is_empty() {
            let samples: Vec<Sample> = greedy
                .iter()
                .map(|&i| {
                    let obs = self.collectors[i].obs.as_ref().expect("observation");
                    Sample {
                        features: &obs.features,
                        context: &obs.context,
                    }
                })
                .collect();
            let q = self.net.q_values(&self.state.online, &samples)?;
            for (&i, qi) in greedy.iter().zip(&q) {
                actions[i] = Some(argmax(qi));
            }
        }
        let actions: Vec<usize> = actions.into_iter().map(|a| a.expect("action chosen")).collect();
        let results = par::map_mut(self.mode, &mut self.collectors[..count], |i, c| c.env.step(actions[i]));
        let mut out = Vec::with_capacity(count);
        for (i, r) in results.into_iter().enumerate() {
            let t = r.map_err(|e| Error::Env { index: i, source: Box::new(e) })?;
            self.state.buffer.push(StoredTransition::from_transition(&t));
            self.state.env_steps += 1;
            self.collectors[i].obs = Some(t.next_observation.clone());
            out.push(t);
        }
        Ok(out)
    }

    /// One gradient step on a uniformly sampled batch; returns the loss.
    pub fn train_step(&mut self) -> Result<f64> {
        let world = Arc::clone(&self.world);
        let cfg = &self.state.config;
        let idx = self.state.buffer.sample_indices(&mut self.state.rng, cfg.batch_size);
        let batch: Vec<&StoredTransition> = idx.iter().map(|&i| self.state.buffer.get(i)).collect();
        let next_feats: Vec<Array2<f64>> = batch.iter().map(|t| t.next_features.mapv(f64::from)).collect();
        let feats: Vec<Array2<f64>> = batch.iter().map(|t| t.features.mapv(f64::from)).collect();
        let next = samples(&world, &next_feats, batch.iter().map(|t| t.next_origin));
        let q_online_next = self.net.q_values(&self.state.online, &next)?;
        let q_target_next = self.net.q_values(&self.state.target, &next)?;
        let targets = double_dqn_targets(
            &batch,
            &q_online_next,
            &q_target_next,
            self.state.gamma,
            cfg.bootstrap_truncated,
        );
        let current = samples(&world, &feats, batch.iter().map(|t| t.origin));
        let n_actions = self.world.n_actions();
        let selected: Vec<usize> = batch
            .iter()
            .enumerate()
            .map(|(b, t)| b * n_actions + t.action)
            .collect();
        let mut tape = Tape::new();
        let q = self.net.forward(&mut tape, &self.state.online, &current)?;
        let loss_var = tape.mse_selected(q, selected, targets.clone());
        let loss = tape.value(loss_var)[[0, 0]];
        if !loss.is_finite() {
            let lo = targets.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            return Err(Error::Numerical(format!(
                "loss {loss} at grad step {} (env step {}), targets in [{lo}, {hi}]",
                self.state.grad_steps, self.state.env_steps
            )));
        }
        let grads = tape.backward(loss_var)?;
        self.state.optimizer.step(&mut self.state.online, &grads);
        self.state.grad_steps += 1;
        if self.state.grad_steps % self.state.config.target_update == 0 {
            self.state.target.copy_from(&self.state.online);
        }
        self.state.last_loss = loss;
        Ok(loss)
    }

    pub fn evaluate_store(&self, store: &ParamStore, days: &[NaiveDate]) -> Result<EvalReport> {
        let policy = self.policy(store);
        evaluate(&self.world, &self.logs, days, self.mode, |_| policy.clone())
    }

    fn validate_now(&mut self) -> Result<()> {
        let report = self.evaluate_store(&self.state.online, &self.val_days)?;
        let val = report.mean_fines();
        let row = MetricsRow {
            wall_time: self.wall_time(),
            env_steps: self.state.env_steps,
            grad_steps: self.state.grad_steps,
            epsilon: self.epsilon(),
            train_loss: self.state.last_loss,
            val_fines_per_day: val,
        };
        self.state.metrics.push(row);
        if self.state.best_val.is_none_or(|b| val > b) {
            self.state.best_val = Some(val);
            self.state.best = self.state.online.clone();
            if let Some(dir) = &self.out_dir {
                self.state.best.save(&dir.join("checkpoints").join("best.bin"))?;
            }
        }
        if let Some(dir) = self.out_dir.clone() {
            write_metrics(&dir.join("metrics.csv"), &self.state.metrics)?;
            self.state.online.save(&dir.join("checkpoints").join("latest.bin"))?;
            self.save_state(&dir.join("checkpoints").join("trainer.state"))?;
        }
        Ok(())
    }

    /// Collect and train until `env_steps` reaches `until` (capped at the
    /// configured total), validating after every episode quota.
    pub fn run_until(&mut self, until: u64) -> Result<()> {
        let until = until.min(self.state.config.total_steps);
        if self.state.metrics.is_empty() && self.state.env_steps == 0 && until == 0 {
            return self.validate_now();
        }
        while self.state.env_steps < until {
            let remaining = (until - self.state.env_steps) as usize;
            self.collect_round(remaining)?;
            let due = self.state.config.grad_steps_due(self.state.env_steps);
            while self.state.grad_steps < due && self.state.buffer.len() >= self.state.config.batch_size {
                self.train_step()?;
            }
            if self.state.env_steps >= self.state.next_eval {
                self.state.next_eval += self.state.config.steps_per_episode;
                self.validate_now()?;
            }
        }
        let last_eval = self.state.metrics.last().map(|m| m.env_steps);
        if until == self.state.config.total_steps && last_eval != Some(self.state.env_steps) {
            self.validate_now()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.state.config.total_steps)
    }
}

fn samples<'a>(
    world: &'a World,
    feats: &'a [Array2<f64>],
    origins: impl Iterator<Item = usize>,
) -> Vec<Sample<'a>> {
    feats
        .iter()
        .zip(origins)
        .map(|(f, o)| Sample {
            features: f,
            context: world.context(o),
        })
        .collect()
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Run a trainer to completion and report the best validation result.
pub fn run_training(trainer: &mut Trainer) -> Result<(ParamStore, f64)> {
    trainer.run()?;
    let best = trainer.state.best.clone();
    let val = trainer.state.best_val.unwrap_or(0.0);
    if let Some(dir) = &trainer.out_dir {
        let mut f = fs::File::create(dir.join("checkpoints").join("best.txt"))?;
        writeln!(f, "{val}")?;
    }
    Ok((best, val))
}
