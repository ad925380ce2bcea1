//! Benchmark runner, metrics, and exports.
//!
//! A benchmark runs one episode per (task variation, seed) under a chosen
//! strategy, then folds the results into a [`MetricsReport`]: per-task
//! average scores, tokens-per-action, scores-per-action, episode lengths,
//! and Short/Medium/Long rows grouped by the oracle's average trajectory
//! length. Episodes may execute in parallel (`parallel` feature, on by
//! default); results are folded in (family, variation, seed) order
//! regardless of completion order, so reports and exports are byte-stable.

mod export;
mod stubs;

pub use export::{emit_plot_data, export_trajectories, import_trajectories};
pub use stubs::{gold_calls, oracle_stub_script, planning_answers};

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{
    episode_from_trajectory, run_episode, run_llm_every_step_episode, ControllerConfig,
    EpisodeError, EpisodeResult,
};
use crate::llm::{HttpClient, HttpConfig, LlmClient, StubClient};
use crate::oracle::{self, OracleError};
use crate::swift::{build_dataset, BalanceConfig, DatasetError, RetrievalPolicy};
use crate::world::{TaskFamily, TaskVariation, Trajectory, WorldSpec};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Fast policy with the slow module on the four switch conditions.
    Swiftsage,
    /// Fast policy only; never calls a model.
    SwiftOnly,
    /// One model call per action, no fast policy.
    LlmEveryStep,
    /// Replay the handcrafted solver.
    Oracle,
}

impl Strategy {
    pub fn needs_policy(self) -> bool {
        matches!(self, Strategy::Swiftsage | Strategy::SwiftOnly)
    }

    pub fn needs_llm(self) -> bool {
        matches!(self, Strategy::Swiftsage | Strategy::LlmEveryStep)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Swiftsage => "swiftsage",
            Strategy::SwiftOnly => "swift-only",
            Strategy::LlmEveryStep => "llm-every-step",
            Strategy::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LlmBackend {
    /// Per-variation scripts generated from the oracle's gold path.
    #[default]
    OracleStub,
    Http(HttpConfig),
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    /// Task families to run; empty means every family given to the runner.
    pub families: Vec<String>,
    /// The first N variations of each family.
    pub variations_per_family: usize,
    pub seeds: Vec<u64>,
    pub strategy: Strategy,
    pub backend: LlmBackend,
    pub controller: ControllerConfig,
    /// Variation indices whose gold trajectories train the fast policy.
    pub train_variations: Vec<usize>,
    pub balance: BalanceConfig,
    /// `Some(1)` forces sequential execution; `None` uses the default
    /// thread pool. Ignored without the `parallel` feature.
    pub parallelism: Option<usize>,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            families: Vec::new(),
            variations_per_family: 10,
            seeds: vec![0],
            strategy: Strategy::Swiftsage,
            backend: LlmBackend::OracleStub,
            controller: ControllerConfig::default(),
            train_variations: (0..8).collect(),
            balance: BalanceConfig::default(),
            parallelism: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("configuration problems:\n  - {}", .0.join("\n  - "))]
    Config(Vec<String>),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Llm(#[from] crate::llm::LlmError),
    #[error(transparent)]
    World(#[from] crate::world::WorldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LengthGroup {
    Short,
    Medium,
    Long,
}

impl LengthGroup {
    pub fn as_str(self) -> &'static str {
        match self {
            LengthGroup::Short => "short",
            LengthGroup::Medium => "medium",
            LengthGroup::Long => "long",
        }
    }
}

/// Classify a task by its average oracle trajectory length:
/// (0, 20] short, (20, 50] medium, above that long.
pub fn length_group(oracle_len: f64) -> LengthGroup {
    if oracle_len <= 20.0 {
        LengthGroup::Short
    } else if oracle_len <= 50.0 {
        LengthGroup::Medium
    } else {
        LengthGroup::Long
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub label: String,
    pub episodes: usize,
    pub avg_final_score: f64,
    pub avg_last_nonnegative_score: f64,
    pub avg_episode_length: f64,
    /// Total prompt+completion tokens over total executed actions.
    pub tokens_per_action: f64,
    /// Total evaluation score over total executed actions.
    pub scores_per_action: f64,
    pub oracle_len: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: Strategy,
    pub tasks: Vec<MetricsRow>,
    pub groups: Vec<MetricsRow>,
    pub overall: MetricsRow,
}

#[derive(Default, Clone, Copy)]
struct Tally {
    episodes: usize,
    final_score: f64,
    last_nonnegative: f64,
    actions: u64,
    tokens: u64,
    eval_score_total: f64,
}

impl Tally {
    fn add(&mut self, result: &EpisodeResult) {
        self.episodes += 1;
        self.final_score += result.final_score as f64;
        self.last_nonnegative += result.last_nonnegative_score as f64;
        self.actions += result.action_count() as u64;
        self.tokens += result.total_tokens();
        self.eval_score_total += result.last_nonnegative_score as f64;
    }

    fn merge(&mut self, other: &Tally) {
        self.episodes += other.episodes;
        self.final_score += other.final_score;
        self.last_nonnegative += other.last_nonnegative;
        self.actions += other.actions;
        self.tokens += other.tokens;
        self.eval_score_total += other.eval_score_total;
    }

    fn row(&self, label: String, oracle_len: f64) -> MetricsRow {
        let n = self.episodes.max(1) as f64;
        let actions = self.actions.max(1) as f64;
        MetricsRow {
            label,
            episodes: self.episodes,
            avg_final_score: self.final_score / n,
            avg_last_nonnegative_score: self.last_nonnegative / n,
            avg_episode_length: self.actions as f64 / n,
            tokens_per_action: self.tokens as f64 / actions,
            scores_per_action: self.eval_score_total / actions,
            oracle_len,
        }
    }
}

/// Fold episode results into the report. `oracle_lens` maps each family to
/// its average gold-trajectory length over the selected variations.
///
/// Score columns average across variations within a task; group and
/// overall score columns average uniformly across task rows. The tpa and
/// spa columns are ratio-of-totals at every level, so they can be recomputed
/// exactly from the raw logs.
pub fn compute_metrics(
    strategy: Strategy,
    results: &[EpisodeResult],
    oracle_lens: &[(String, f64)],
) -> MetricsReport {
    let mut tasks = Vec::new();
    let mut group_tallies: Vec<(LengthGroup, Tally, Vec<f64>, Vec<f64>, f64, usize)> = Vec::new();
    let mut overall_tally = Tally::default();
    let mut overall_finals = Vec::new();
    let mut overall_lasts = Vec::new();
    let mut overall_lens = Vec::new();

    for (family, oracle_len) in oracle_lens {
        let mut tally = Tally::default();
        for result in results.iter().filter(|r| &r.trajectory.family == family) {
            tally.add(result);
        }
        let row = tally.row(family.clone(), *oracle_len);
        let group = length_group(*oracle_len);
        let entry = group_tallies.iter_mut().find(|(g, ..)| *g == group);
        match entry {
            Some((_, t, finals, lasts, len_sum, count)) => {
                t.merge(&tally);
                finals.push(row.avg_final_score);
                lasts.push(row.avg_last_nonnegative_score);
                *len_sum += *oracle_len;
                *count += 1;
            }
            None => group_tallies.push((
                group,
                tally,
                vec![row.avg_final_score],
                vec![row.avg_last_nonnegative_score],
                *oracle_len,
                1,
            )),
        }
        overall_tally.merge(&tally);
        overall_finals.push(row.avg_final_score);
        overall_lasts.push(row.avg_last_nonnegative_score);
        overall_lens.push(*oracle_len);
        tasks.push(row);
    }

    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };

    let groups = group_tallies
        .into_iter()
        .map(|(group, tally, finals, lasts, len_sum, count)| {
            let mut row = tally.row(group.as_str().to_string(), len_sum / count as f64);
            row.avg_final_score = mean(&finals);
            row.avg_last_nonnegative_score = mean(&lasts);
            row
        })
        .collect();

    let mut overall = overall_tally.row("overall".to_string(), mean(&overall_lens));
    overall.avg_final_score = mean(&overall_finals);
    overall.avg_last_nonnegative_score = mean(&overall_lasts);

    MetricsReport {
        strategy,
        tasks,
        groups,
        overall,
    }
}

impl MetricsReport {
    /// Aligned text table, deterministic to the byte.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("strategy: {}\n", self.strategy.as_str()));
        out.push_str(&format!(
            "{:<14} {:>4} {:>8} {:>8} {:>8} {:>10} {:>8} {:>8}\n",
            "task", "n", "score", "last>=0", "len", "tpa", "spa", "*len"
        ));
        let line = |row: &MetricsRow| {
            format!(
                "{:<14} {:>4} {:>8.2} {:>8.2} {:>8.2} {:>10.2} {:>8.2} {:>8.2}\n",
                row.label,
                row.episodes,
                row.avg_final_score,
                row.avg_last_nonnegative_score,
                row.avg_episode_length,
                row.tokens_per_action,
                row.scores_per_action,
                row.oracle_len,
            )
        };
        for row in &self.tasks {
            out.push_str(&line(row));
        }
        out.push_str(&"-".repeat(74));
        out.push('\n');
        for row in &self.groups {
            out.push_str(&line(row));
        }
        out.push_str(&line(&self.overall));
        out
    }
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

/// Everything a finished benchmark produced: episodes in deterministic
/// (family, variation, seed) order plus the folded report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchmarkOutcome {
    pub episodes: Vec<EpisodeResult>,
    pub report: MetricsReport,
}

struct EpisodeInput {
    variation: TaskVariation,
    gold: Trajectory,
    seed: u64,
}

fn validate(
    families: &[&TaskFamily],
    config: &BenchmarkConfig,
) -> Result<(), EvalError> {
    let mut problems = Vec::new();
    if families.is_empty() {
        problems.push("no task families selected".to_string());
    }
    if config.variations_per_family == 0 {
        problems.push("variations_per_family must be at least 1".to_string());
    }
    if config.seeds.is_empty() {
        problems.push("at least one seed is required".to_string());
    }
    for family in families {
        if oracle::script_for(family.name()).is_none() {
            problems.push(format!("no oracle script for family `{}`", family.name()));
        }
        if config.variations_per_family > family.variation_count() {
            problems.push(format!(
                "family `{}` has only {} variations, {} requested",
                family.name(),
                family.variation_count(),
                config.variations_per_family
            ));
        }
    }
    if config.strategy.needs_policy() && config.train_variations.is_empty() {
        problems.push("the chosen strategy needs train_variations for the fast policy".to_string());
    }
    if config.strategy.needs_llm() && matches!(config.backend, LlmBackend::None) {
        problems.push(format!(
            "strategy `{}` needs an llm backend",
            config.strategy.as_str()
        ));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(EvalError::Config(problems))
    }
}

/// Run one episode per (variation, seed) under the configured strategy and
/// fold the results into a report. Deterministic for the stub backend:
/// identical configs produce byte-identical outcomes.
pub fn run_benchmark(
    world: &WorldSpec,
    all_families: &[TaskFamily],
    config: &BenchmarkConfig,
) -> Result<BenchmarkOutcome, EvalError> {
    let families: Vec<&TaskFamily> = if config.families.is_empty() {
        all_families.iter().collect()
    } else {
        config
            .families
            .iter()
            .filter_map(|name| all_families.iter().find(|f| f.name() == name))
            .collect()
    };
    if !config.families.is_empty() && families.len() != config.families.len() {
        let known: Vec<&str> = all_families.iter().map(|f| f.name()).collect();
        return Err(EvalError::Config(vec![format!(
            "unknown family in selection; known families: {}",
            known.join(", ")
        )]));
    }
    validate(&families, config)?;

    // Gold trajectories for the selected variations: oracle lengths, stub
    // scripts, and (for the policy strategies) training data.
    let mut inputs = Vec::new();
    let mut oracle_lens = Vec::new();
    for family in &families {
        let mut len_sum = 0usize;
        let mut variations = Vec::new();
        for index in 0..config.variations_per_family {
            variations.push(family.variation(index)?);
        }
        let golds = map_maybe_parallel(config.parallelism, variations, |v| {
            oracle::solve(world, &v).map(|g| (v, g))
        })?;
        for (variation, gold) in golds {
            len_sum += gold.action_count();
            for &seed in &config.seeds {
                inputs.push(EpisodeInput {
                    variation: variation.clone(),
                    gold: gold.clone(),
                    seed,
                });
            }
        }
        oracle_lens.push((
            family.name().to_string(),
            len_sum as f64 / config.variations_per_family as f64,
        ));
    }

    let policy = if config.strategy.needs_policy() {
        let mut train = Vec::new();
        for family in &families {
            for &index in &config.train_variations {
                if index < family.variation_count() {
                    let v = family.variation(index)?;
                    train.push(oracle::solve(world, &v)?);
                }
            }
        }
        let examples = build_dataset(&train, &config.balance)?;
        Some(Arc::new(RetrievalPolicy::fit(world.grammar.clone(), examples)))
    } else {
        None
    };

    let http: Option<Arc<HttpClient>> = match &config.backend {
        LlmBackend::Http(http_config) => Some(Arc::new(HttpClient::new(http_config.clone())?)),
        _ => None,
    };

    let strategy = config.strategy;
    let controller = &config.controller;
    let run_one = |input: EpisodeInput| -> Result<EpisodeResult, EvalError> {
        let mut episode_config = controller.clone();
        episode_config.seed = input.seed;
        // The stub's call counter is scoped to this episode.
        let stub: Option<StubClient> = match (&config.backend, strategy.needs_llm()) {
            (LlmBackend::OracleStub, true) => Some(StubClient::new(oracle_stub_script(
                world,
                &input.variation,
                &input.gold,
            ))),
            _ => None,
        };
        let llm: Option<&dyn LlmClient> = match (&stub, &http) {
            (Some(s), _) => Some(s),
            (None, Some(h)) if strategy.needs_llm() => Some(h.as_ref()),
            _ => None,
        };
        let result = match strategy {
            Strategy::Oracle => episode_from_trajectory(input.gold.clone(), input.seed),
            Strategy::SwiftOnly => run_episode(
                world,
                &input.variation,
                policy.as_deref().expect("validated"),
                None,
                &episode_config,
            )?,
            Strategy::Swiftsage => run_episode(
                world,
                &input.variation,
                policy.as_deref().expect("validated"),
                llm,
                &episode_config,
            )?,
            Strategy::LlmEveryStep => run_llm_every_step_episode(
                world,
                &input.variation,
                llm.expect("validated"),
                &episode_config,
            )?,
        };
        Ok(result)
    };

    let episodes = map_maybe_parallel(config.parallelism, inputs, run_one)?;
    let report = compute_metrics(strategy, &episodes, &oracle_lens);
    Ok(BenchmarkOutcome { episodes, report })
}

// ---------------------------------------------------------------------------
// Parallel/sequential mapping
// ---------------------------------------------------------------------------

#[cfg(feature = "parallel")]
fn map_maybe_parallel<T, R, E, F>(
    parallelism: Option<usize>,
    inputs: Vec<T>,
    f: F,
) -> Result<Vec<R>, E>
where
    T: Send,
    R: Send,
    E: Send,
    F: Fn(T) -> Result<R, E> + Sync + Send,
{
    use rayon::prelude::*;
    match parallelism {
        Some(1) => inputs.into_iter().map(f).collect(),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .expect("thread pool");
            pool.install(|| inputs.into_par_iter().map(f).collect())
        }
        None => inputs.into_par_iter().map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn map_maybe_parallel<T, R, E, F>(
    _parallelism: Option<usize>,
    inputs: Vec<T>,
    f: F,
) -> Result<Vec<R>, E>
where
    F: Fn(T) -> Result<R, E>,
{
    inputs.into_iter().map(f).collect()
}
