//! The integration loop: fast by default, slow when needed.
//!
//! An episode starts in fast mode. Before executing a fast prediction the
//! controller checks, in priority order: Critical (the predicted action's
//! template is gated to the slow path and the slow module has not run yet),
//! Invalid (the prediction is not in the current valid-action set), and
//! Stuck (the last `stuck_window` rewards were all zero). After executing a
//! prediction it checks Unexpected (the observation carries an exception
//! phrase). Any firing condition invokes the slow module: one planning
//! call, one grounding call (plus at most one planning retry), yielding an
//! action buffer that is executed until drained, until two consecutive
//! faults, or until the episode ends; then control reverts to the fast
//! module with a fresh reward window.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::Action;
use crate::llm::{CompletionRequest, LlmClient, LlmError};
use crate::sage::{
    build_grounding_prompt, build_planning_prompt, parse_grounding_output,
    parse_planning_output, ActionBuffer, SageConfig, GROUNDING_MARKER,
};
use crate::swift::{context_at, serialize_context, FastPolicy};
use crate::world::{Engine, EnvState, TaskVariation, Trajectory, Transition, WorldError, WorldSpec};

// ---------------------------------------------------------------------------
// Configuration and result types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentMode {
    Swift,
    Sage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwitchCondition {
    Critical,
    Invalid,
    Unexpected,
    Stuck,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwitchConfig {
    /// Consecutive zero-reward steps that trigger the Stuck condition.
    pub stuck_window: usize,
    /// Substrings whose (case-insensitive) presence in an observation
    /// signals an exception.
    pub exception_phrases: Vec<String>,
    /// Template ids the fast path may not emit until the slow module has
    /// run at least once.
    pub critical_templates: BTreeSet<String>,
    pub max_steps: usize,
    pub max_sage_calls: usize,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        Self {
            stuck_window: 5,
            exception_phrases: vec![
                "no known action can match".to_string(),
                "cannot".to_string(),
                "doesn't".to_string(),
            ],
            critical_templates: ["focus".to_string()].into_iter().collect(),
            max_steps: 100,
            max_sage_calls: 10,
        }
    }
}

/// Everything an episode needs beyond world and variation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub switch: SwitchConfig,
    pub sage: SageConfig,
    pub model: String,
    pub temperature: f64,
    pub max_completion_tokens: u32,
    pub seed: u64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            switch: SwitchConfig::default(),
            sage: SageConfig::default(),
            model: "default".to_string(),
            temperature: 0.0,
            max_completion_tokens: 512,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeEntry {
    pub mode: AgentMode,
    /// The condition whose firing this step resolves, if any.
    pub condition: Option<SwitchCondition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmCall {
    pub stage: String,
    pub prompt: String,
    pub completion: String,
    pub prompt_tokens: u32,
    pub completion_tokens: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminationReason {
    Completed,
    Violation,
    MaxSteps,
    MaxSageCalls,
    LlmFailure,
    PolicyFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub trajectory: Trajectory,
    pub final_score: i32,
    pub last_nonnegative_score: i32,
    /// One entry per trajectory transition.
    pub mode_log: Vec<ModeEntry>,
    pub llm_calls: Vec<LlmCall>,
    pub terminated: TerminationReason,
    pub sage_invocations: usize,
    pub seed: u64,
}

impl EpisodeResult {
    pub fn total_tokens(&self) -> u64 {
        self.llm_calls
            .iter()
            .map(|c| c.prompt_tokens as u64 + c.completion_tokens as u64)
            .sum()
    }

    /// Actions executed after the implicit initial look.
    pub fn action_count(&self) -> usize {
        self.trajectory.action_count()
    }
}

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    World(#[from] WorldError),
}

// ---------------------------------------------------------------------------
// Switch logic
// ---------------------------------------------------------------------------

/// True iff any configured phrase occurs in the observation,
/// case-insensitively.
pub fn detect_exception(observation: &str, config: &SwitchConfig) -> bool {
    let lowered = observation.to_lowercase();
    config
        .exception_phrases
        .iter()
        .any(|p| lowered.contains(&p.to_lowercase()))
}

/// First firing condition in priority order Critical > Invalid >
/// Unexpected > Stuck, or none.
///
/// `recent_rewards` is ordered oldest-first; Stuck fires only when at least
/// `stuck_window` rewards exist and the trailing `stuck_window` of them are
/// all zero. A missing prediction (`None`) counts as invalid.
pub fn check_switch(
    recent_rewards: &[i32],
    predicted: Option<&Action>,
    valid: bool,
    last_observation: &str,
    config: &SwitchConfig,
) -> Option<SwitchCondition> {
    if let Some(action) = predicted {
        if config.critical_templates.contains(&action.template_id) {
            return Some(SwitchCondition::Critical);
        }
    }
    if !valid {
        return Some(SwitchCondition::Invalid);
    }
    if detect_exception(last_observation, config) {
        return Some(SwitchCondition::Unexpected);
    }
    let k = config.stuck_window;
    if k > 0
        && recent_rewards.len() >= k
        && recent_rewards[recent_rewards.len() - k..].iter().all(|r| *r == 0)
    {
        return Some(SwitchCondition::Stuck);
    }
    None
}

// ---------------------------------------------------------------------------
// Buffer execution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BufferOutcome {
    Drained,
    HaltedDoubleFault,
    MilestoneTerminal,
    StepLimit,
}

/// Execute buffered actions in order. Halts early after two consecutive
/// faults (invalid transitions or exception observations), when the episode
/// ends (score 100 or violation), or when the step budget runs out.
pub fn execute_buffer(
    engine: &Engine<'_>,
    state: &EnvState,
    buffer: &ActionBuffer,
    config: &SwitchConfig,
    step_budget: usize,
) -> (EnvState, Vec<Transition>, BufferOutcome) {
    let mut state = state.clone();
    let mut transitions = Vec::new();
    let mut consecutive_faults = 0;
    for action in &buffer.actions {
        if transitions.len() >= step_budget {
            return (state, transitions, BufferOutcome::StepLimit);
        }
        let (next, transition) = engine.step(&state, action);
        state = next;
        let faulted = !transition.valid || detect_exception(&transition.observation, config);
        transitions.push(transition);
        if state.score >= 100 || state.violated {
            return (state, transitions, BufferOutcome::MilestoneTerminal);
        }
        if faulted {
            consecutive_faults += 1;
            if consecutive_faults >= 2 {
                return (state, transitions, BufferOutcome::HaltedDoubleFault);
            }
        } else {
            consecutive_faults = 0;
        }
    }
    (state, transitions, BufferOutcome::Drained)
}

// ---------------------------------------------------------------------------
// Slow-module invocation
// ---------------------------------------------------------------------------

enum SageOutcome {
    Buffer(ActionBuffer),
    /// Planning output stayed unparseable after the retry.
    PlanningFailed,
}

struct SageDriver<'a> {
    llm: &'a dyn LlmClient,
    config: &'a ControllerConfig,
    calls: Vec<LlmCall>,
}

impl<'a> SageDriver<'a> {
    fn new(llm: &'a dyn LlmClient, config: &'a ControllerConfig) -> Self {
        Self {
            llm,
            config,
            calls: Vec::new(),
        }
    }

    fn complete(&mut self, stage: &str, prompt: String) -> Result<String, LlmError> {
        let request = CompletionRequest {
            prompt,
            model: self.config.model.clone(),
            temperature: self.config.temperature,
            max_tokens: self.config.max_completion_tokens,
        };
        let response = self.llm.complete(&request)?;
        self.calls.push(LlmCall {
            stage: stage.to_string(),
            prompt: request.prompt,
            completion: response.completion.clone(),
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
        });
        Ok(response.completion)
    }

    /// One planning call (with a single formatting retry) and one grounding
    /// call.
    fn invoke(
        &mut self,
        world: &WorldSpec,
        task: &str,
        trajectory: &Trajectory,
    ) -> Result<SageOutcome, LlmError> {
        let env_text = trajectory
            .transitions
            .last()
            .map(|t| t.env_text.clone())
            .unwrap_or_default();
        let planning = build_planning_prompt(task, trajectory, &env_text, &self.config.sage);
        let first = self.complete("planning", planning.text.clone())?;
        let answers = match parse_planning_output(&first) {
            Ok(a) => a,
            Err(e) => {
                log::debug!("planning output unparseable ({e}); retrying once");
                let reminder = format!(
                    "{}\n\nReminder: follow the answer format exactly. Every header from \
\"Answer 1:\" to \"Answer 5:\" must appear, and Answer 4 must contain a line starting \
with \"Current subgoal:\".",
                    planning.text
                );
                let second = self.complete("planning", reminder)?;
                match parse_planning_output(&second) {
                    Ok(a) => a,
                    Err(e) => {
                        log::debug!("planning retry unparseable ({e}); reverting to fast mode");
                        return Ok(SageOutcome::PlanningFailed);
                    }
                }
            }
        };
        let grounding_prompt =
            build_grounding_prompt(task, &answers, &world.grammar, trajectory, &self.config.sage);
        let grounding = self.complete("grounding", grounding_prompt)?;
        let mut buffer = parse_grounding_output(&grounding, &world.grammar);
        let first_call = self.calls.len().saturating_sub(2);
        buffer.origin = vec![format!("planning#{first_call}"), format!("grounding#{}", self.calls.len() - 1)];
        Ok(SageOutcome::Buffer(buffer))
    }
}

// ---------------------------------------------------------------------------
// Episode loops
// ---------------------------------------------------------------------------

/// Run one episode. With `llm = None` the slow module is disabled and the
/// fast policy runs the whole episode (including gated templates — there is
/// nothing to defer to).
pub fn run_episode(
    world: &WorldSpec,
    variation: &TaskVariation,
    policy: &dyn FastPolicy,
    llm: Option<&dyn LlmClient>,
    config: &ControllerConfig,
) -> Result<EpisodeResult, EpisodeError> {
    let engine = Engine::new(world, variation);
    let (mut state, first) = engine.reset()?;
    let mut trajectory = Trajectory::new(variation);
    trajectory.transitions.push(first);
    let mut mode_log = vec![ModeEntry {
        mode: AgentMode::Swift,
        condition: None,
    }];
    let mut llm_calls: Vec<LlmCall> = Vec::new();
    let mut sage_invocations = 0usize;
    let mut sage_activated = false;
    let mut cooldown = 0usize;
    let mut rewards_since_sage: Vec<i32> = Vec::new();

    let reason = 'episode: loop {
        if state.score >= 100 {
            break TerminationReason::Completed;
        }
        if state.violated {
            break TerminationReason::Violation;
        }
        if trajectory.action_count() >= config.switch.max_steps {
            break TerminationReason::MaxSteps;
        }

        let ctx = context_at(&variation.description, &trajectory.transitions);
        let predicted = policy.predict(&ctx);
        let (action, prediction_valid) = match predicted {
            Ok(action) => {
                let valid = engine
                    .valid_actions(&state)
                    .iter()
                    .any(|a| a.surface == action.surface);
                (Some(action), valid)
            }
            Err(e) => {
                log::debug!("fast policy failed: {e}");
                (None, false)
            }
        };

        let in_cooldown = cooldown > 0;
        if cooldown > 0 {
            cooldown -= 1;
        }

        // Pre-execution conditions: Critical, Invalid, Stuck. The empty
        // observation keeps Unexpected out of this check.
        let mut fired = None;
        if llm.is_some() && !in_cooldown {
            let mut effective = config.switch.clone();
            if sage_activated {
                // The gate applies only until the slow module has run once.
                effective.critical_templates.clear();
            }
            fired = check_switch(
                &rewards_since_sage,
                action.as_ref(),
                prediction_valid,
                "",
                &effective,
            );
        }

        if let Some(condition) = fired {
            let llm = llm.expect("condition fired only with a slow module");
            if sage_invocations >= config.switch.max_sage_calls {
                break TerminationReason::MaxSageCalls;
            }
            sage_invocations += 1;
            sage_activated = true;
            let mut driver = SageDriver::new(llm, config);
            let outcome = driver.invoke(world, &variation.description, &trajectory);
            llm_calls.extend(driver.calls);
            match outcome {
                Err(e) => {
                    log::warn!("slow module transport failure: {e}");
                    break TerminationReason::LlmFailure;
                }
                Ok(SageOutcome::PlanningFailed) => {
                    cooldown = config.switch.stuck_window;
                    rewards_since_sage.clear();
                    continue;
                }
                Ok(SageOutcome::Buffer(buffer)) if buffer.is_empty() => {
                    log::debug!("empty action buffer; reverting to fast mode");
                    // The pending prediction still resolves this step, under
                    // the slow module's slot — unless it is gated.
                    if let Some(action) = action {
                        if condition != SwitchCondition::Critical {
                            let (next, transition) = engine.step(&state, &action);
                            state = next;
                            trajectory.transitions.push(transition);
                            mode_log.push(ModeEntry {
                                mode: AgentMode::Sage,
                                condition: Some(condition),
                            });
                        }
                    }
                    cooldown = config.switch.stuck_window;
                    rewards_since_sage.clear();
                    continue;
                }
                Ok(SageOutcome::Buffer(buffer)) => {
                    let budget = config.switch.max_steps - trajectory.action_count();
                    let (next, transitions, outcome) =
                        execute_buffer(&engine, &state, &buffer, &config.switch, budget);
                    state = next;
                    for (i, transition) in transitions.into_iter().enumerate() {
                        trajectory.transitions.push(transition);
                        mode_log.push(ModeEntry {
                            mode: AgentMode::Sage,
                            condition: if i == 0 { Some(condition) } else { None },
                        });
                    }
                    log::debug!("buffer finished: {outcome:?}");
                    rewards_since_sage.clear();
                    continue;
                }
            }
        }

        // Execute the fast prediction.
        let Some(action) = action else {
            break TerminationReason::PolicyFailure;
        };
        let (next, transition) = engine.step(&state, &action);
        state = next;
        rewards_since_sage.push(transition.reward);
        let observation = transition.observation.clone();
        trajectory.transitions.push(transition);
        mode_log.push(ModeEntry {
            mode: AgentMode::Swift,
            condition: None,
        });

        // Post-execution condition: Unexpected, on the executed action's
        // observation.
        if llm.is_some() && !in_cooldown && detect_exception(&observation, &config.switch) {
            let condition = SwitchCondition::Unexpected;
            mode_log.last_mut().expect("just pushed").condition = Some(condition);
            let llm = llm.expect("checked");
            if sage_invocations >= config.switch.max_sage_calls {
                break TerminationReason::MaxSageCalls;
            }
            sage_invocations += 1;
            sage_activated = true;
            let mut driver = SageDriver::new(llm, config);
            let outcome = driver.invoke(world, &variation.description, &trajectory);
            llm_calls.extend(driver.calls);
            match outcome {
                Err(e) => {
                    log::warn!("slow module transport failure: {e}");
                    break TerminationReason::LlmFailure;
                }
                Ok(SageOutcome::PlanningFailed) => {
                    cooldown = config.switch.stuck_window;
                    rewards_since_sage.clear();
                }
                Ok(SageOutcome::Buffer(buffer)) if buffer.is_empty() => {
                    log::debug!("empty action buffer; reverting to fast mode");
                    cooldown = config.switch.stuck_window;
                    rewards_since_sage.clear();
                }
                Ok(SageOutcome::Buffer(buffer)) => {
                    let budget = config.switch.max_steps - trajectory.action_count();
                    let (next, transitions, outcome) =
                        execute_buffer(&engine, &state, &buffer, &config.switch, budget);
                    state = next;
                    // The condition is already logged on the triggering step.
                    for transition in transitions {
                        trajectory.transitions.push(transition);
                        mode_log.push(ModeEntry {
                            mode: AgentMode::Sage,
                            condition: None,
                        });
                    }
                    log::debug!("buffer finished: {outcome:?}");
                    rewards_since_sage.clear();
                }
            }
            continue 'episode;
        }
    };

    Ok(finish_episode(
        trajectory,
        mode_log,
        llm_calls,
        reason,
        sage_invocations,
        config.seed,
    ))
}

/// Baseline that asks the language model for every single action: one call,
/// one step, no fast module and no buffering. Exists for cost comparison.
pub fn run_llm_every_step_episode(
    world: &WorldSpec,
    variation: &TaskVariation,
    llm: &dyn LlmClient,
    config: &ControllerConfig,
) -> Result<EpisodeResult, EpisodeError> {
    let engine = Engine::new(world, variation);
    let (mut state, first) = engine.reset()?;
    let mut trajectory = Trajectory::new(variation);
    trajectory.transitions.push(first);
    let mut mode_log = vec![ModeEntry {
        mode: AgentMode::Sage,
        condition: None,
    }];
    let mut llm_calls = Vec::new();
    let mut consecutive_unparseable = 0;

    let reason = loop {
        if state.score >= 100 {
            break TerminationReason::Completed;
        }
        if state.violated {
            break TerminationReason::Violation;
        }
        if trajectory.action_count() >= config.switch.max_steps {
            break TerminationReason::MaxSteps;
        }

        let ctx = context_at(&variation.description, &trajectory.transitions);
        let prompt = build_every_step_prompt(world, &ctx);
        let request = CompletionRequest {
            prompt: prompt.clone(),
            model: config.model.clone(),
            temperature: config.temperature,
            max_tokens: config.max_completion_tokens,
        };
        let response = match llm.complete(&request) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("baseline transport failure: {e}");
                break TerminationReason::LlmFailure;
            }
        };
        llm_calls.push(LlmCall {
            stage: "step".to_string(),
            prompt,
            completion: response.completion.clone(),
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
        });
        let action = response.completion.lines().find_map(|line| {
            let trimmed = line.trim();
            if trimmed.is_empty() {
                return None;
            }
            world
                .grammar
                .parse_formal(trimmed)
                .and_then(|c| world.grammar.formal_to_surface(&c))
                .ok()
        });
        match action {
            Some(action) => {
                consecutive_unparseable = 0;
                let (next, transition) = engine.step(&state, &action);
                state = next;
                trajectory.transitions.push(transition);
                mode_log.push(ModeEntry {
                    mode: AgentMode::Sage,
                    condition: None,
                });
            }
            None => {
                consecutive_unparseable += 1;
                if consecutive_unparseable >= 3 {
                    break TerminationReason::LlmFailure;
                }
            }
        }
    };

    Ok(finish_episode(trajectory, mode_log, llm_calls, reason, 0, config.seed))
}

/// Wrap an externally produced trajectory (e.g. the oracle's) in an episode
/// record with no model calls.
pub fn episode_from_trajectory(trajectory: Trajectory, seed: u64) -> EpisodeResult {
    let reason = if trajectory.final_score() >= 100 {
        TerminationReason::Completed
    } else {
        TerminationReason::MaxSteps
    };
    let mode_log = trajectory
        .transitions
        .iter()
        .map(|_| ModeEntry {
            mode: AgentMode::Swift,
            condition: None,
        })
        .collect();
    finish_episode(trajectory, mode_log, Vec::new(), reason, 0, seed)
}

fn finish_episode(
    trajectory: Trajectory,
    mode_log: Vec<ModeEntry>,
    llm_calls: Vec<LlmCall>,
    terminated: TerminationReason,
    sage_invocations: usize,
    seed: u64,
) -> EpisodeResult {
    debug_assert_eq!(trajectory.transitions.len(), mode_log.len());
    EpisodeResult {
        final_score: trajectory.final_score(),
        last_nonnegative_score: trajectory.last_nonnegative_score(),
        trajectory,
        mode_log,
        llm_calls,
        terminated,
        sage_invocations,
        seed,
    }
}

fn build_every_step_prompt(world: &WorldSpec, ctx: &crate::swift::SwiftContext) -> String {
    // Deliberately free of the planning/grounding markers so stub scripts
    // can tell the strategies apart.
    debug_assert!(!GROUNDING_MARKER.contains("next action"));
    format!(
        "You are an agent working in a text world. Choose the next action.\n\n{}\n\n\
Allowed action types:\n{}\n\nRespond with exactly one action as NAME(argument, ...).",
        serialize_context(ctx),
        world.grammar.catalog_lines().join("\n")
    )
}
