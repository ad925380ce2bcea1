//! The slow module: plan with five questions, then ground into actions.
//!
//! One planning call asks all five questions over a condensed,
//! memory-augmented history and returns labeled answers; one grounding call
//! turns the current subgoal into a list of formal calls over the action
//! catalog. Prompts are pure functions of their inputs, byte-identical for
//! identical inputs, so scripted stubs can match on them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{Action, ActionGrammar};
use crate::swift::object_names_in_listing;
use crate::world::Trajectory;

/// The five planning questions, asked in order in a single prompt.
pub const PLANNING_QUESTIONS: [&str; 5] = [
    "To complete the task, which objects do I need to collect? Please list them and their possible locations one by one.",
    "Are there any objects that have not been collected yet?",
    "To complete the task most efficiently, what are the important subgoals to achieve? Please list the subgoals one by one.",
    "Considering these subgoals, what have I already completed? And which subgoal should I focus on right now?",
    "Have I made any mistakes that might prevent me from efficiently completing the next subgoal? If any, how should I fix them?",
];

/// Marker sentences the stub scripts key on.
pub const PLANNING_MARKER: &str = "Answer the five questions below";
pub const GROUNDING_MARKER: &str = "Emit the actions that accomplish the current subgoal only";

/// Prompt-shaping knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SageConfig {
    /// Include the Q1–Q3 answers in the grounding prompt (a small quality
    /// gain) or only Q4/Q5 (cheaper).
    pub ground_with_q1_q3: bool,
    /// Character budget for observations quoted in history lines.
    pub observation_budget: usize,
    /// Free-form environment hints appended to the planning prompt.
    pub extra_hints: String,
}

impl Default for SageConfig {
    fn default() -> Self {
        Self {
            ground_with_q1_q3: true,
            observation_budget: 80,
            extra_hints: String::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// History condensation and memory augmentation
// ---------------------------------------------------------------------------

fn truncate(text: &str, budget: usize) -> String {
    if text.chars().count() <= budget {
        return text.to_string();
    }
    let cut: String = text.chars().take(budget).collect();
    format!("{cut}...")
}

/// One line per action with its location tag and a truncated observation.
/// Consecutive identical invalid actions collapse into one line with a
/// repeat count.
pub fn summarize_history(trajectory: &Trajectory, observation_budget: usize) -> String {
    let mut lines: Vec<String> = Vec::new();
    let mut run: Option<(String, String, String, usize)> = None; // surface, room, obs, count
    let flush = |run: &mut Option<(String, String, String, usize)>, lines: &mut Vec<String>| {
        if let Some((surface, room, obs, count)) = run.take() {
            let suffix = if count > 1 {
                format!(" (x{count})")
            } else {
                String::new()
            };
            lines.push(format!("{surface} [location: {room}] -> {obs}{suffix}"));
        }
    };
    for t in &trajectory.transitions {
        let obs = truncate(&t.observation, observation_budget);
        if !t.valid {
            if let Some((surface, room, _, count)) = run.as_mut() {
                if *surface == t.action.surface && *room == t.room {
                    *count += 1;
                    continue;
                }
            }
            flush(&mut run, &mut lines);
            run = Some((t.action.surface.clone(), t.room.clone(), obs, 1));
        } else {
            flush(&mut run, &mut lines);
            lines.push(format!(
                "{} [location: {}] -> {obs}",
                t.action.surface, t.room
            ));
        }
    }
    flush(&mut run, &mut lines);
    lines.join("\n")
}

/// Objects last observed in each previously visited room, from the most
/// recent environment rendering there. The current room is excluded.
pub fn build_memory_augmentation(trajectory: &Trajectory) -> String {
    let transitions = &trajectory.transitions;
    let Some(last) = transitions.last() else {
        return String::new();
    };
    let mut visit_order: Vec<&str> = Vec::new();
    for t in transitions {
        if !visit_order.contains(&t.room.as_str()) {
            visit_order.push(&t.room);
        }
    }
    let mut lines = Vec::new();
    for room in visit_order {
        if room == last.room {
            continue;
        }
        let Some(latest) = transitions.iter().rev().find(|t| t.room == room) else {
            continue;
        };
        let names = object_names_in_listing(&latest.env_text, "you see: ");
        let listing = if names.is_empty() {
            "(nothing)".to_string()
        } else {
            names.into_iter().collect::<Vec<_>>().join(", ")
        };
        lines.push(format!("{room}: {listing}"));
    }
    lines.join("\n")
}

// ---------------------------------------------------------------------------
// Planning
// ---------------------------------------------------------------------------

/// The assembled planning prompt plus the pieces it was built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanningPrompt {
    pub task_summary: String,
    pub condensed_history: String,
    pub current_env_text: String,
    pub memory_augmentation: String,
    pub text: String,
}

pub fn build_planning_prompt(
    task: &str,
    trajectory: &Trajectory,
    env_text: &str,
    config: &SageConfig,
) -> PlanningPrompt {
    let condensed_history = summarize_history(trajectory, config.observation_budget);
    let memory_augmentation = build_memory_augmentation(trajectory);
    let history_block = if condensed_history.is_empty() {
        "(no actions yet)"
    } else {
        &condensed_history
    };
    let memory_block = if memory_augmentation.is_empty() {
        "(none)"
    } else {
        &memory_augmentation
    };
    let hints_block = if config.extra_hints.is_empty() {
        String::new()
    } else {
        format!("Hints:\n{}\n\n", config.extra_hints)
    };
    let questions: Vec<String> = PLANNING_QUESTIONS
        .iter()
        .enumerate()
        .map(|(i, q)| format!("Question {}: {q}", i + 1))
        .collect();
    let text = format!(
        "You are an agent working in a text world, partway through the task below. \
Study the history and the current room, then answer five questions.\n\n\
Task: {task}\n\n\
Action history:\n{history_block}\n\n\
Current room:\n{env_text}\n\n\
Objects seen in previously visited rooms:\n{memory_block}\n\n\
{hints_block}\
{PLANNING_MARKER}. Start each answer on its own line with the header \"Answer N:\" \
(N = 1..5). Use \"- \" for list items. In Answer 4, include a line starting with \
\"Current subgoal:\".\n\n{}",
        questions.join("\n")
    );
    PlanningPrompt {
        task_summary: task.to_string(),
        condensed_history,
        current_env_text: env_text.to_string(),
        memory_augmentation,
        text,
    }
}

/// Parsed answers. Q1–Q3 and Q5 are optional lists; a missing or empty Q4
/// current subgoal fails the parse.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanAnswers {
    pub q1_objects: Vec<(String, String)>,
    pub q2_missing: Vec<String>,
    pub q3_subgoals: Vec<String>,
    pub q4_completed: Vec<String>,
    pub q4_current_subgoal: String,
    pub q5_fixes: Vec<String>,
    /// Verbatim answer sections, reused when building the grounding prompt.
    pub raw_sections: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanParseError {
    #[error("planning output has no `Answer 4:` section")]
    MissingAnswer4,
    #[error("planning output names no current subgoal")]
    MissingCurrentSubgoal,
}

pub fn parse_planning_output(text: &str) -> Result<PlanAnswers, PlanParseError> {
    let sections = split_answer_sections(text);
    let q4 = sections[3].as_ref().ok_or(PlanParseError::MissingAnswer4)?;

    let (q4_completed, q4_current_subgoal) = parse_progress(q4)?;
    let mut answers = PlanAnswers {
        q1_objects: sections[0]
            .as_deref()
            .map(|s| {
                list_items(s)
                    .into_iter()
                    .map(|item| match item.split_once(':') {
                        Some((obj, loc)) => (obj.trim().to_string(), loc.trim().to_string()),
                        None => (item, String::new()),
                    })
                    .collect()
            })
            .unwrap_or_default(),
        q2_missing: sections[1].as_deref().map(list_items).unwrap_or_default(),
        q3_subgoals: sections[2].as_deref().map(list_items).unwrap_or_default(),
        q4_completed,
        q4_current_subgoal,
        q5_fixes: sections[4].as_deref().map(list_items).unwrap_or_default(),
        raw_sections: Vec::new(),
    };
    answers.raw_sections = sections
        .into_iter()
        .map(|s| s.unwrap_or_default().trim().to_string())
        .collect();
    Ok(answers)
}

fn split_answer_sections(text: &str) -> Vec<Option<String>> {
    let mut sections: Vec<Option<String>> = vec![None; 5];
    let mut current: Option<usize> = None;
    let mut buffers: Vec<String> = vec![String::new(); 5];
    for line in text.lines() {
        let trimmed = line.trim();
        let mut header = None;
        for n in 1..=5 {
            if let Some(rest) = trimmed.strip_prefix(&format!("Answer {n}:")) {
                header = Some((n - 1, rest.trim().to_string()));
                break;
            }
        }
        match header {
            Some((idx, rest)) => {
                sections[idx] = Some(String::new());
                if !rest.is_empty() {
                    buffers[idx].push_str(&rest);
                    buffers[idx].push('\n');
                }
                current = Some(idx);
            }
            None => {
                if let Some(idx) = current {
                    buffers[idx].push_str(line);
                    buffers[idx].push('\n');
                }
            }
        }
    }
    for (section, buffer) in sections.iter_mut().zip(buffers) {
        if section.is_some() {
            *section = Some(buffer.trim().to_string());
        }
    }
    sections
}

/// Items of a list answer: `- ` lines, or the whole section when it is a
/// single plain statement. `none`-style answers yield an empty list.
fn list_items(section: &str) -> Vec<String> {
    let bullets: Vec<String> = section
        .lines()
        .filter_map(|l| l.trim().strip_prefix("- ").map(str::to_string))
        .collect();
    if !bullets.is_empty() {
        return bullets;
    }
    let flat = section.trim();
    let lowered = flat.to_lowercase();
    if flat.is_empty() || lowered == "none" || lowered == "none." || lowered == "no" || lowered == "no." {
        Vec::new()
    } else {
        vec![flat.to_string()]
    }
}

fn parse_progress(section: &str) -> Result<(Vec<String>, String), PlanParseError> {
    if let Some(pos) = section.find("Current subgoal:") {
        let completed_part = &section[..pos];
        let current = section[pos + "Current subgoal:".len()..]
            .lines()
            .next()
            .unwrap_or("")
            .trim()
            .to_string();
        if current.is_empty() {
            return Err(PlanParseError::MissingCurrentSubgoal);
        }
        let completed = completed_part
            .lines()
            .filter_map(|l| l.trim().strip_prefix("- ").map(str::to_string))
            .collect();
        Ok((completed, current))
    } else {
        let current = section.trim().to_string();
        if current.is_empty() {
            return Err(PlanParseError::MissingCurrentSubgoal);
        }
        Ok((Vec::new(), current))
    }
}

// ---------------------------------------------------------------------------
// Grounding
// ---------------------------------------------------------------------------

/// The ordered list of grounded actions produced by one slow-module
/// invocation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionBuffer {
    pub actions: Vec<Action>,
    /// Identifiers of the LLM calls that produced this buffer.
    pub origin: Vec<String>,
    /// Output lines that matched no catalog template, kept for the episode
    /// record.
    pub skipped: Vec<String>,
}

impl ActionBuffer {
    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Last ten history lines, as in the planning summary.
fn recent_history(trajectory: &Trajectory, budget: usize) -> String {
    let start = trajectory.transitions.len().saturating_sub(10);
    let tail = Trajectory {
        family: trajectory.family.clone(),
        variation_id: trajectory.variation_id.clone(),
        description: trajectory.description.clone(),
        transitions: trajectory.transitions[start..].to_vec(),
    };
    summarize_history(&tail, budget)
}

pub fn build_grounding_prompt(
    task: &str,
    plan: &PlanAnswers,
    grammar: &ActionGrammar,
    trajectory: &Trajectory,
    config: &SageConfig,
) -> String {
    let catalog = grammar.catalog_lines().join("\n");
    let included: Vec<usize> = if config.ground_with_q1_q3 {
        vec![0, 1, 2, 3, 4]
    } else {
        vec![3, 4]
    };
    let mut notes = String::new();
    for idx in included {
        let section = plan.raw_sections.get(idx).cloned().unwrap_or_default();
        if !section.is_empty() {
            notes.push_str(&format!("Answer {}: {section}\n", idx + 1));
        }
    }
    if notes.is_empty() {
        notes.push_str("(none)\n");
    }
    let history = recent_history(trajectory, config.observation_budget);
    let history_block = if history.is_empty() {
        "(no actions yet)"
    } else {
        &history
    };
    format!(
        "You are an agent working in a text world. Turn the current subgoal into \
executable actions.\n\n\
Task: {task}\n\n\
Allowed action types:\n{catalog}\n\n\
Plan notes:\n{notes}\n\
Recent actions (last 10):\n{history_block}\n\n\
{GROUNDING_MARKER}, one action per line as NAME(argument, ...), using only the \
allowed action types. Output nothing else."
    )
}

/// Convert grounding output into an [`ActionBuffer`]. Lines that are not a
/// cataloged `NAME(arg, ...)` call with the right arity are skipped and
/// logged; order is preserved. An empty buffer is a legal outcome.
pub fn parse_grounding_output(text: &str, grammar: &ActionGrammar) -> ActionBuffer {
    let mut buffer = ActionBuffer::default();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let parsed = grammar
            .parse_formal(trimmed)
            .and_then(|call| grammar.formal_to_surface(&call));
        match parsed {
            Ok(action) => buffer.actions.push(action),
            Err(e) => {
                log::debug!("grounding line skipped ({e}): {trimmed}");
                buffer.skipped.push(trimmed.to_string());
            }
        }
    }
    buffer
}
