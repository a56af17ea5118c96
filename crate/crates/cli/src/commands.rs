//! The subcommands. Each writes under `<out>/<name>/`:
//! `config.resolved`, `summary.csv`, `episodes/`, and for training
//! `checkpoints/` and `metrics.csv`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use topsim::baselines::{AcoPlanner, AcoPolicy, GreedyPolicy, RandomPolicy, ViolationRateModel};
use topsim::events::{events_to_string, split_days};
use topsim::nn::SatopNet;
use topsim::par::{self, ExecMode};
use topsim::roadnet::{graph_to_string, spots_to_string};
use topsim::simenv::{run_episode, trace_to_csv, Env, EpisodeSummary, Policy};
use topsim::trainer::{run_training, QPolicy, Trainer};

use crate::config::RunConfig;
use crate::data::{load_dataset, load_raw, Dataset};
use crate::error::{CliError, CliResult};
use crate::report::{read_summary, write_summary, EpisodeRow, ResultsTable};

pub const POLICY_NAMES: [&str; 4] = ["random", "greedy", "aco", "checkpoint"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Random,
    Greedy,
    Aco,
    Checkpoint,
}

impl PolicyKind {
    pub fn parse(name: &str) -> CliResult<PolicyKind> {
        match name {
            "random" => Ok(PolicyKind::Random),
            "greedy" => Ok(PolicyKind::Greedy),
            "aco" => Ok(PolicyKind::Aco),
            "checkpoint" => Ok(PolicyKind::Checkpoint),
            other => Err(CliError::Config(format!(
                "unknown policy `{other}`; valid policies are {}",
                POLICY_NAMES.join(", ")
            ))),
        }
    }

    /// Name used in summaries.
    pub fn label(self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Greedy => "greedy",
            PolicyKind::Aco => "aco",
            PolicyKind::Checkpoint => "satop",
        }
    }
}

pub fn exec_mode(cfg: &RunConfig) -> ExecMode {
    if cfg.single_collector {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    }
}

pub fn run_dir(out: &Path, cfg: &RunConfig) -> PathBuf {
    out.join(&cfg.name)
}

fn write_resolved(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    fs::create_dir_all(dir)?;
    let text = format!("# config hash {}\n# seed {}\n{}", cfg.hash(), cfg.seed, cfg.to_toml());
    fs::write(dir.join("config.resolved"), text)?;
    Ok(())
}

/// Per-day seed for stochastic baselines.
fn day_seed(seed: u64, day: NaiveDate) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ u64::from(day.num_days_from_ce().unsigned_abs())
}

fn rate_model(cfg: &RunConfig, data: &Dataset) -> CliResult<ViolationRateModel> {
    match &cfg.baseline.rate_model {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Ok(ViolationRateModel::from_csv(p, &text)?)
        }
        None => Ok(ViolationRateModel::fit(
            data.split.train.iter().map(|d| &data.logs[d]),
            data.world.n_spots(),
        )?),
    }
}

fn load_checkpoint(cfg: &RunConfig, data: &Dataset, path: &Path) -> CliResult<QPolicy> {
    if !path.exists() {
        return Err(CliError::Data(format!("checkpoint {} does not exist", path.display())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (net, mut store) = SatopNet::new(cfg.trainer.net.config(data.world.n_spots()), &mut rng);
    store.load_into(path)?;
    Ok(QPolicy {
        net: Arc::new(net),
        store: Arc::new(store),
    })
}

enum Built {
    Random(u64),
    Greedy(ViolationRateModel),
    Aco(ViolationRateModel),
    Q(QPolicy),
}

impl Built {
    fn make(&self, cfg: &RunConfig, day: NaiveDate) -> CliResult<Box<dyn Policy>> {
        Ok(match self {
            Built::Random(seed) => Box::new(RandomPolicy::new(day_seed(*seed, day))),
            Built::Greedy(m) => Box::new(GreedyPolicy { model: m.clone() }),
            Built::Aco(m) => Box::new(AcoPolicy {
                model: m.clone(),
                planner: AcoPlanner::new(cfg.baseline.aco.clone(), day_seed(cfg.seed, day))?,
            }),
            Built::Q(q) => Box::new(q.clone()),
        })
    }
}

fn build(
    cfg: &RunConfig,
    data: &Dataset,
    kind: PolicyKind,
    checkpoint: Option<&Path>,
    model: &mut Option<ViolationRateModel>,
) -> CliResult<Built> {
    let mut fitted = || -> CliResult<ViolationRateModel> {
        if model.is_none() {
            *model = Some(rate_model(cfg, data)?);
        }
        Ok(model.clone().expect("fitted"))
    };
    Ok(match kind {
        PolicyKind::Random => Built::Random(cfg.seed),
        PolicyKind::Greedy => Built::Greedy(fitted()?),
        PolicyKind::Aco => Built::Aco(fitted()?),
        PolicyKind::Checkpoint => {
            let path = checkpoint
                .ok_or_else(|| CliError::Config("policy `checkpoint` needs a checkpoint path".into()))?;
            Built::Q(load_checkpoint(cfg, data, path)?)
        }
    })
}

/// Roll every policy over `days`; traces go to `episodes/` when enabled.
fn play(
    cfg: &RunConfig,
    data: &Dataset,
    policies: &[(PolicyKind, Built)],
    split: &str,
    days: &[NaiveDate],
    dir: &Path,
    traces: bool,
) -> CliResult<Vec<EpisodeRow>> {
    let episodes = dir.join("episodes");
    if traces {
        fs::create_dir_all(&episodes)?;
    }
    let hash = cfg.short_hash();
    let mut rows = Vec::new();
    for (kind, built) in policies {
        let results: Vec<CliResult<EpisodeSummary>> = par::map(exec_mode(cfg), days, |&day| {
            let mut policy = built.make(cfg, day)?;
            let mut env = Env::new(Arc::clone(&data.world), Arc::clone(&data.logs));
            let summary = run_episode(&mut env, policy.as_mut(), day)?;
            if traces {
                let file = fs::File::create(episodes.join(format!("{}_{day}.csv", kind.label())))?;
                trace_to_csv(env.trace(), std::io::BufWriter::new(file))?;
            }
            Ok(summary)
        });
        for r in results {
            let s = r?;
            rows.push(EpisodeRow {
                config_hash: hash.clone(),
                seed: cfg.seed,
                policy: kind.label().to_string(),
                split: split.to_string(),
                day: s.day.to_string(),
                fines: s.fines,
                violations: s.violations,
                fine_ratio: s.fine_ratio,
                decisions: s.decisions,
            });
        }
    }
    Ok(rows)
}

fn parse_kinds(names: &[String]) -> CliResult<Vec<PolicyKind>> {
    names.iter().map(|n| PolicyKind::parse(n)).collect()
}

/// Run the configured policies and write traces and a summary.
pub fn simulate(cfg: &RunConfig, out: &Path) -> CliResult<PathBuf> {
    let kinds = parse_kinds(&cfg.simulate.policies)?;
    let mut env_cfg = cfg.env.clone();
    env_cfg.record_trace = cfg.simulate.traces;
    let data = load_dataset(&cfg.data, &env_cfg, exec_mode(cfg))?;
    let days = data.days(&cfg.simulate.split)?;
    let dir = run_dir(out, cfg);
    write_resolved(&dir, cfg)?;
    let mut model = None;
    let policies = kinds
        .iter()
        .map(|&k| Ok((k, build(cfg, &data, k, cfg.simulate.checkpoint.as_deref(), &mut model)?)))
        .collect::<CliResult<Vec<_>>>()?;
    if let Some(m) = &model {
        m.to_csv(fs::File::create(dir.join("rate_model.csv"))?)?;
    }
    let rows = play(cfg, &data, &policies, &cfg.simulate.split, &days, &dir, cfg.simulate.traces)?;
    write_summary(&dir.join("summary.csv"), &rows)?;
    Ok(dir)
}

/// Evaluate a checkpoint next to the configured baselines, without traces.
pub fn evaluate(cfg: &RunConfig, out: &Path, checkpoint: &Path) -> CliResult<PathBuf> {
    let mut cfg = cfg.clone();
    cfg.simulate.traces = false;
    cfg.simulate.checkpoint = Some(checkpoint.to_path_buf());
    if !cfg.simulate.policies.iter().any(|p| p == "checkpoint") {
        cfg.simulate.policies.push("checkpoint".into());
    }
    simulate(&cfg, out)
}

/// Train, resuming from `checkpoints/trainer.state` when the resolved
/// config matches, then evaluate the best network on the test split.
pub fn train(cfg: &RunConfig, out: &Path, fresh: bool) -> CliResult<PathBuf> {
    let kinds = parse_kinds(&cfg.simulate.policies)?;
    let mode = exec_mode(cfg);
    let data = load_dataset(&cfg.data, &cfg.env, mode)?;
    let test = data.days("test")?;
    let dir = run_dir(out, cfg);
    let state_path = dir.join("checkpoints").join("trainer.state");
    let same_config = fs::read_to_string(dir.join("config.resolved"))
        .ok()
        .and_then(|t| RunConfig::from_toml(&t, &[], None).ok())
        .is_some_and(|old| old.hash() == cfg.hash());
    let trainer = if !fresh && same_config && state_path.exists() {
        Trainer::resume(
            &state_path,
            Arc::clone(&data.world),
            Arc::clone(&data.logs),
            data.split.train.clone(),
            data.split.validation.clone(),
        )?
    } else {
        Trainer::new(
            Arc::clone(&data.world),
            Arc::clone(&data.logs),
            data.split.train.clone(),
            data.split.validation.clone(),
            cfg.trainer.clone(),
        )?
    };
    write_resolved(&dir, cfg)?;
    let mut trainer = trainer.with_mode(mode).with_output(&dir);
    let (best, _) = run_training(&mut trainer)?;
    let mut model = None;
    let mut policies = vec![(PolicyKind::Checkpoint, Built::Q(trainer.policy(&best)))];
    for k in kinds.into_iter().filter(|&k| k != PolicyKind::Checkpoint) {
        policies.push((k, build(cfg, &data, k, None, &mut model)?));
    }
    let rows = play(cfg, &data, &policies, "test", &test, &dir, false)?;
    write_summary(&dir.join("summary.csv"), &rows)?;
    Ok(dir)
}

/// Aggregate the summaries of several runs.
pub fn report(dirs: &[PathBuf]) -> CliResult<ResultsTable> {
    if dirs.is_empty() {
        return Err(CliError::Config("report needs at least one run directory".into()));
    }
    let mut rows = Vec::new();
    for d in dirs {
        rows.extend(read_summary(&d.join("summary.csv"))?);
    }
    if rows.is_empty() {
        return Err(CliError::Data("summaries contain no episodes".into()));
    }
    Ok(ResultsTable::from_episodes(&rows))
}

/// Split counts and day lists for every day of `year`.
pub fn split_info(year: i32) -> CliResult<String> {
    let first = NaiveDate::from_ymd_opt(year, 1, 1).ok_or_else(|| CliError::Config(format!("bad year {year}")))?;
    let days: Vec<NaiveDate> = first.iter_days().take_while(|d| d.year() == year).collect();
    let split = split_days(&days);
    let list = |v: &[NaiveDate]| v.iter().map(|d| d.format("%m-%d").to_string()).collect::<Vec<_>>().join(" ");
    Ok(format!(
        "year {year}: {} days\ntest {}\nvalidation {}\ntrain {}\n\ntest days: {}\nvalidation days: {}\n",
        days.len(),
        split.test.len(),
        split.validation.len(),
        split.train.len(),
        list(&split.test),
        list(&split.validation),
    ))
}

/// Write the configured data source as plain files.
pub fn gen_synth(cfg: &RunConfig, out: &Path) -> CliResult<PathBuf> {
    if cfg.data.synthetic.is_none() {
        return Err(CliError::Config("gen-synth needs a `data.synthetic` block".into()));
    }
    let (graph, spots, logs) = load_raw(&cfg.data, &cfg.env)?;
    let dir = run_dir(out, cfg);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("graph.txt"), graph_to_string(&graph))?;
    fs::write(dir.join("spots.csv"), spots_to_string(&graph, &spots))?;
    fs::write(dir.join("events.csv"), events_to_string(&logs))?;
    write_resolved(&dir, cfg)?;
    Ok(dir)
}
