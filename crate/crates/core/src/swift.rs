//! The fast module: context serialization, imitation dataset, retrieval
//! policy.
//!
//! The context window covers the last `K = 10` transitions plus the task
//! description, step index, score, current room and inventory renderings,
//! and the deduplicated list of visited rooms. A [`FastPolicy`] maps one
//! such context to the next action. The default implementation is
//! deterministic nearest-context retrieval over the oracle's trajectories:
//! weighted token overlap picks the closest stored context, and the stored
//! action's arguments are re-bound to objects present in the current scene
//! when the stored ones are absent. A neural or remote policy can be
//! plugged in through the same trait via the newline-delimited subprocess
//! adapter.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grammar::{Action, ActionGrammar, SlotKind};
use crate::world::{Trajectory, Transition};

/// Sliding-window length over recent transitions.
pub const CONTEXT_WINDOW: usize = 10;

// ---------------------------------------------------------------------------
// Context
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub action: String,
    pub reward: i32,
    pub observation: String,
}

/// Everything the fast policy sees when predicting the next action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwiftContext {
    pub task: String,
    /// Count of valid actions taken so far (the `t-1` of the next step).
    pub time: u32,
    pub score: i32,
    /// At most [`CONTEXT_WINDOW`] recent transitions, oldest first.
    pub window: Vec<HistoryEntry>,
    pub current_room_text: String,
    pub inventory_text: String,
    /// Insertion-ordered, deduplicated; always contains the current room.
    pub visited_rooms: Vec<String>,
}

/// Build the context visible after the given transition prefix.
pub fn context_at(description: &str, transitions: &[Transition]) -> SwiftContext {
    let last = transitions.last().expect("context requires the reset transition");
    let start = transitions.len().saturating_sub(CONTEXT_WINDOW);
    let window = transitions[start..]
        .iter()
        .map(|t| HistoryEntry {
            action: t.action.surface.clone(),
            reward: t.reward,
            observation: t.observation.clone(),
        })
        .collect();
    let mut visited_rooms: Vec<String> = Vec::new();
    for t in transitions {
        if !visited_rooms.contains(&t.room) {
            visited_rooms.push(t.room.clone());
        }
    }
    // The reset look is valid but does not consume a step.
    let time = transitions[1..].iter().filter(|t| t.valid).count() as u32;
    SwiftContext {
        task: description.to_string(),
        time,
        score: last.score,
        window,
        current_room_text: last.env_text.clone(),
        inventory_text: last.inventory_text.clone(),
        visited_rooms,
    }
}

pub fn context_from_trajectory(trajectory: &Trajectory) -> SwiftContext {
    context_at(&trajectory.description, &trajectory.transitions)
}

/// Render the context in the fixed field order. One field per line; history
/// entries joined with ` | `.
pub fn serialize_context(ctx: &SwiftContext) -> String {
    let history: Vec<String> = ctx
        .window
        .iter()
        .map(|e| format!("{} ({:+}) -> {}", e.action, e.reward, e.observation))
        .collect();
    format!(
        "Task: {}\nTime: {}\nScore: {}\nAction history: {}\nCurrent room: {}\nInventory: {}\nVisited rooms: {}",
        ctx.task,
        ctx.time,
        ctx.score,
        history.join(" | "),
        ctx.current_room_text,
        ctx.inventory_text,
        ctx.visited_rooms.join(", "),
    )
}

// ---------------------------------------------------------------------------
// Imitation dataset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImitationExample {
    pub id: usize,
    pub context_text: String,
    pub target: String,
    pub task_family: String,
    pub weight: f64,
}

/// Caps and down-sampling rates applied while building the dataset.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BalanceConfig {
    /// Keep at most this many trajectories per family (the first N).
    pub max_trajectories_per_family: Option<usize>,
    /// template id -> keep probability for low-information actions.
    pub template_keep_rates: BTreeMap<String, f64>,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no trajectories to build a dataset from")]
    Empty,
}

/// Turn oracle trajectories into (context, next action) pairs, capped per
/// family and with configured action templates down-sampled under the
/// seeded filter. Identical pairs collapse to one example.
pub fn build_dataset(
    trajectories: &[Trajectory],
    config: &BalanceConfig,
) -> Result<Vec<ImitationExample>, DatasetError> {
    if trajectories.is_empty() {
        return Err(DatasetError::Empty);
    }
    let mut per_family: BTreeMap<&str, usize> = BTreeMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut examples = Vec::new();
    for trajectory in trajectories {
        let kept = per_family.entry(trajectory.family.as_str()).or_insert(0);
        if let Some(cap) = config.max_trajectories_per_family {
            if *kept >= cap {
                continue;
            }
        }
        *kept += 1;
        for t in 1..trajectory.transitions.len() {
            let next = &trajectory.transitions[t];
            if let Some(rate) = config.template_keep_rates.get(&next.action.template_id) {
                // One draw per candidate example, in deterministic order.
                if rng.gen::<f64>() >= *rate {
                    continue;
                }
            }
            let context_text = serialize_context(&context_at(
                &trajectory.description,
                &trajectory.transitions[..t],
            ));
            let target = next.action.surface.clone();
            if !seen.insert((context_text.clone(), target.clone())) {
                continue;
            }
            examples.push(ImitationExample {
                id: examples.len(),
                context_text,
                target,
                task_family: trajectory.family.clone(),
                weight: 1.0,
            });
        }
    }
    Ok(examples)
}

pub fn dataset_to_jsonl(examples: &[ImitationExample]) -> String {
    examples
        .iter()
        .map(|e| serde_json::to_string(e).expect("example serializes"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn dataset_from_jsonl(text: &str) -> Result<Vec<ImitationExample>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

// ---------------------------------------------------------------------------
// Policy interface
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum PredictError {
    #[error("policy was fitted on no examples")]
    EmptyPolicy,
    #[error("retrieved target `{target}` does not parse: {message}")]
    UnparseableTarget { target: String, message: String },
    #[error("external policy failed: {0}")]
    External(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyMetadata {
    /// Stable hash of the fitted dataset (or adapter identity).
    pub fingerprint: String,
    pub detail: String,
}

/// The fast-policy contract: deterministic next-action prediction from a
/// serialized context.
pub trait FastPolicy: Send + Sync {
    fn predict(&self, ctx: &SwiftContext) -> Result<Action, PredictError>;
    fn metadata(&self) -> PolicyMetadata;
}

// ---------------------------------------------------------------------------
// Retrieval policy
// ---------------------------------------------------------------------------

/// Per-field weights for the token-overlap similarity. The task description
/// and the most recent observation dominate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldWeights {
    pub task: f64,
    pub last_observation: f64,
    pub history: f64,
    pub current_room: f64,
    pub inventory: f64,
    pub time: f64,
    pub score: f64,
    pub visited_rooms: f64,
}

impl Default for FieldWeights {
    fn default() -> Self {
        Self {
            task: 3.0,
            last_observation: 2.0,
            history: 1.0,
            current_room: 1.0,
            inventory: 1.0,
            time: 0.5,
            score: 0.5,
            visited_rooms: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct FieldTokens {
    task: BTreeSet<String>,
    last_observation: BTreeSet<String>,
    history: BTreeSet<String>,
    current_room: BTreeSet<String>,
    inventory: BTreeSet<String>,
    time: BTreeSet<String>,
    score: BTreeSet<String>,
    visited_rooms: BTreeSet<String>,
}

#[derive(Debug, Clone)]
struct StoredExample {
    example: ImitationExample,
    tokens: FieldTokens,
    /// Room and inventory lines of the stored context, used for argument
    /// re-binding.
    scene_text: String,
}

/// Deterministic nearest-context retrieval with argument remapping.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "PolicySnapshot", into = "PolicySnapshot")]
pub struct RetrievalPolicy {
    grammar: ActionGrammar,
    weights: FieldWeights,
    #[serde(skip)]
    stored: Vec<StoredExample>,
    examples: Vec<ImitationExample>,
    fingerprint: String,
}

/// Serialized form: the index is rebuilt on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PolicySnapshot {
    grammar: ActionGrammar,
    weights: FieldWeights,
    examples: Vec<ImitationExample>,
}

impl From<PolicySnapshot> for RetrievalPolicy {
    fn from(s: PolicySnapshot) -> Self {
        RetrievalPolicy::fit_with_weights(s.grammar, s.examples, s.weights)
    }
}

impl From<RetrievalPolicy> for PolicySnapshot {
    fn from(p: RetrievalPolicy) -> Self {
        PolicySnapshot {
            grammar: p.grammar,
            weights: p.weights,
            examples: p.examples,
        }
    }
}

impl RetrievalPolicy {
    pub fn fit(grammar: ActionGrammar, examples: Vec<ImitationExample>) -> Self {
        Self::fit_with_weights(grammar, examples, FieldWeights::default())
    }

    pub fn fit_with_weights(
        grammar: ActionGrammar,
        examples: Vec<ImitationExample>,
        weights: FieldWeights,
    ) -> Self {
        let mut hasher = Sha256::new();
        for e in &examples {
            hasher.update(e.context_text.as_bytes());
            hasher.update([0]);
            hasher.update(e.target.as_bytes());
            hasher.update([0]);
        }
        let fingerprint = format!("{:x}", hasher.finalize());
        let stored = examples
            .iter()
            .map(|e| {
                let fields = split_context_fields(&e.context_text);
                StoredExample {
                    tokens: tokenize_fields(&fields),
                    scene_text: format!("{}\n{}", fields.current_room, fields.inventory),
                    example: e.clone(),
                }
            })
            .collect();
        Self {
            grammar,
            weights,
            stored,
            examples,
            fingerprint,
        }
    }

    pub fn examples(&self) -> &[ImitationExample] {
        &self.examples
    }

    /// The nearest stored example for a context; ties break on the lowest
    /// example id.
    pub fn nearest(&self, ctx: &SwiftContext) -> Result<&ImitationExample, PredictError> {
        Ok(&self.nearest_stored(ctx)?.example)
    }

    fn nearest_stored(&self, ctx: &SwiftContext) -> Result<&StoredExample, PredictError> {
        if self.stored.is_empty() {
            return Err(PredictError::EmptyPolicy);
        }
        let query_fields = split_context_fields(&serialize_context(ctx));
        let query = tokenize_fields(&query_fields);
        let mut best: Option<(&StoredExample, f64)> = None;
        for stored in &self.stored {
            let score = stored.example.weight * self.similarity(&query, &stored.tokens);
            let better = match best {
                None => true,
                // Strictly-greater keeps the earliest id on ties.
                Some((_, best_score)) => score > best_score,
            };
            if better {
                best = Some((stored, score));
            }
        }
        Ok(best.expect("nonempty").0)
    }

    fn similarity(&self, a: &FieldTokens, b: &FieldTokens) -> f64 {
        let w = &self.weights;
        w.task * jaccard(&a.task, &b.task)
            + w.last_observation * jaccard(&a.last_observation, &b.last_observation)
            + w.history * jaccard(&a.history, &b.history)
            + w.current_room * jaccard(&a.current_room, &b.current_room)
            + w.inventory * jaccard(&a.inventory, &b.inventory)
            + w.time * jaccard(&a.time, &b.time)
            + w.score * jaccard(&a.score, &b.score)
            + w.visited_rooms * jaccard(&a.visited_rooms, &b.visited_rooms)
    }
}

impl FastPolicy for RetrievalPolicy {
    fn predict(&self, ctx: &SwiftContext) -> Result<Action, PredictError> {
        let stored = self.nearest_stored(ctx)?;
        let target = stored.example.target.clone();
        let action = self.grammar.parse_surface(&target).map_err(|e| {
            PredictError::UnparseableTarget {
                target: target.clone(),
                message: e.to_string(),
            }
        })?;
        let template = self
            .grammar
            .by_id(&action.template_id)
            .expect("parsed template exists");

        let scene_objects = visible_object_names(ctx);
        let scene_rooms = known_room_names(ctx);
        let current_scene = format!("{}\n{}", ctx.current_room_text, ctx.inventory_text);

        let mut used: BTreeSet<String> = BTreeSet::new();
        let mut args = Vec::with_capacity(action.args.len());
        for (kind, arg) in template.slots.clone().iter().zip(&action.args) {
            let rebound = match kind {
                SlotKind::Room => arg.clone(),
                SlotKind::Object => {
                    if scene_objects.contains(arg) {
                        arg.clone()
                    } else {
                        rebind_argument(
                            arg,
                            &stored.scene_text,
                            &current_scene,
                            &ctx.task,
                            &scene_objects,
                            &used,
                        )
                        .unwrap_or_else(|| arg.clone())
                    }
                }
            };
            let _ = &scene_rooms;
            used.insert(rebound.clone());
            args.push(rebound);
        }
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        self.grammar
            .make_action(&action.template_id, &refs)
            .map_err(|e| PredictError::UnparseableTarget {
                target,
                message: e.to_string(),
            })
    }

    fn metadata(&self) -> PolicyMetadata {
        PolicyMetadata {
            fingerprint: self.fingerprint.clone(),
            detail: format!("retrieval over {} examples", self.examples.len()),
        }
    }
}

// ---------------------------------------------------------------------------
// Context-field parsing and tokenization
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
struct ContextFields {
    task: String,
    time: String,
    score: String,
    history: String,
    current_room: String,
    inventory: String,
    visited_rooms: String,
}

fn split_context_fields(text: &str) -> ContextFields {
    let mut fields = ContextFields::default();
    for line in text.lines() {
        if let Some(v) = line.strip_prefix("Task: ") {
            fields.task = v.to_string();
        } else if let Some(v) = line.strip_prefix("Time: ") {
            fields.time = v.to_string();
        } else if let Some(v) = line.strip_prefix("Score: ") {
            fields.score = v.to_string();
        } else if let Some(v) = line.strip_prefix("Action history: ") {
            fields.history = v.to_string();
        } else if let Some(v) = line.strip_prefix("Current room: ") {
            fields.current_room = v.to_string();
        } else if let Some(v) = line.strip_prefix("Inventory: ") {
            fields.inventory = v.to_string();
        } else if let Some(v) = line.strip_prefix("Visited rooms: ") {
            fields.visited_rooms = v.to_string();
        }
    }
    fields
}

fn tokenize_fields(fields: &ContextFields) -> FieldTokens {
    let last_observation = fields
        .history
        .rsplit(" | ")
        .next()
        .and_then(|entry| entry.split(" -> ").nth(1))
        .unwrap_or("");
    FieldTokens {
        task: tokens(&fields.task),
        last_observation: tokens(last_observation),
        history: tokens(&fields.history),
        current_room: tokens(&fields.current_room),
        inventory: tokens(&fields.inventory),
        time: tokens(&fields.time),
        score: tokens(&fields.score),
        visited_rooms: tokens(&fields.visited_rooms),
    }
}

fn tokens(text: &str) -> BTreeSet<String> {
    token_list(text).into_iter().collect()
}

fn token_list(text: &str) -> Vec<String> {
    let mut padded = String::with_capacity(text.len());
    for c in text.chars() {
        if matches!(c, '(' | ')' | ';' | ':' | ',' | '.' | '|') {
            padded.push(' ');
            padded.push(c);
            padded.push(' ');
        } else {
            padded.push(c);
        }
    }
    padded
        .split_whitespace()
        .map(|t| t.to_lowercase())
        .collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    inter / union
}

// ---------------------------------------------------------------------------
// Scene parsing and argument re-binding
// ---------------------------------------------------------------------------

/// Object names visible in the context's room and inventory renderings.
pub fn visible_object_names(ctx: &SwiftContext) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    collect_listing(&ctx.current_room_text, "you see: ", &mut names);
    collect_listing(&ctx.inventory_text, "in your inventory: ", &mut names);
    names
}

/// Object names in one rendered listing (an environment or inventory line).
pub fn object_names_in_listing(text: &str, label: &str) -> BTreeSet<String> {
    let mut names = BTreeSet::new();
    collect_listing(text, label, &mut names);
    names
}

/// Rooms the context mentions: visited rooms plus exits of the current one.
pub fn known_room_names(ctx: &SwiftContext) -> BTreeSet<String> {
    let mut rooms: BTreeSet<String> = ctx.visited_rooms.iter().cloned().collect();
    if let Some(rest) = ctx.current_room_text.split("exits lead to: ").nth(1) {
        for room in rest.trim_end_matches('.').split(", ") {
            rooms.insert(room.to_string());
        }
    }
    rooms
}

fn collect_listing(text: &str, label: &str, names: &mut BTreeSet<String>) {
    let Some(rest) = text.split(label).nth(1) else {
        return;
    };
    let body = match rest.find(". exits lead to: ") {
        Some(pos) => &rest[..pos],
        None => rest.trim_end_matches('.'),
    };
    for item in body.split("; ") {
        collect_item(item, names);
    }
}

fn collect_item(item: &str, names: &mut BTreeSet<String>) {
    if let Some((head, contents)) = item.split_once(" containing ") {
        push_clean(head, names);
        for part in contents.split(" and ") {
            collect_item(part, names);
        }
    } else {
        push_clean(item, names);
    }
}

fn push_clean(item: &str, names: &mut BTreeSet<String>) {
    let mut name = item.trim();
    name = name.strip_prefix("a ").unwrap_or(name);
    if let Some(pos) = name.find(" (") {
        name = &name[..pos];
    }
    let name = name.trim();
    if !name.is_empty() {
        names.insert(name.to_string());
    }
}

/// Pick the visible object that best plays the role the stored argument
/// played in the stored scene: compare the tokens around each occurrence,
/// prefer names the task description mentions, break ties alphabetically.
fn rebind_argument(
    stored_arg: &str,
    stored_scene: &str,
    current_scene: &str,
    task: &str,
    candidates: &BTreeSet<String>,
    used: &BTreeSet<String>,
) -> Option<String> {
    let stored_tokens = token_list(stored_scene);
    let current_tokens = token_list(current_scene);
    let stored_windows = occurrence_windows(&stored_tokens, stored_arg);
    let task_lower = task.to_lowercase();

    let mut best: Option<(i32, &String)> = None;
    for candidate in candidates {
        if used.contains(candidate) {
            continue;
        }
        let candidate_windows = occurrence_windows(&current_tokens, candidate);
        let mut pattern = 0;
        for sw in &stored_windows {
            for cw in &candidate_windows {
                pattern = pattern.max(window_overlap(sw, cw));
            }
        }
        let in_task = task_lower.contains(candidate.as_str());
        let score = pattern * 2 + if in_task { 3 } else { 0 };
        if score == 0 {
            continue;
        }
        let better = match best {
            None => true,
            Some((best_score, best_name)) => {
                score > best_score || (score == best_score && candidate < best_name)
            }
        };
        if better {
            best = Some((score, candidate));
        }
    }
    best.map(|(_, name)| name.clone())
}

type TokenWindow = (Vec<String>, Vec<String>);

/// For each occurrence of `name` (as a token subsequence), the up-to-two
/// tokens before and after it.
fn occurrence_windows(tokens: &[String], name: &str) -> Vec<TokenWindow> {
    let name_tokens = token_list(name);
    if name_tokens.is_empty() {
        return Vec::new();
    }
    let mut windows = Vec::new();
    let n = name_tokens.len();
    for start in 0..tokens.len().saturating_sub(n - 1) {
        if tokens[start..start + n] == name_tokens[..] {
            let before = tokens[start.saturating_sub(2)..start].to_vec();
            let end = (start + n + 2).min(tokens.len());
            let after = tokens[start + n..end].to_vec();
            windows.push((before, after));
        }
    }
    windows
}

fn window_overlap(a: &TokenWindow, b: &TokenWindow) -> i32 {
    let mut score = 0;
    for (x, y) in a.0.iter().rev().zip(b.0.iter().rev()) {
        if x == y {
            score += 1;
        }
    }
    for (x, y) in a.1.iter().zip(b.1.iter()) {
        if x == y {
            score += 1;
        }
    }
    score
}

// ---------------------------------------------------------------------------
// External adapter: newline-delimited subprocess
// ---------------------------------------------------------------------------

/// Drives an external next-action model over a line protocol: one
/// serialized context in (newlines escaped as `\n`), one action surface
/// string out per line.
pub struct LineProtocolPolicy {
    grammar: ActionGrammar,
    command: String,
    child: Mutex<(Child, BufReader<std::process::ChildStdout>)>,
}

impl LineProtocolPolicy {
    pub fn spawn(grammar: ActionGrammar, program: &str, args: &[&str]) -> std::io::Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()?;
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self {
            grammar,
            command: format!("{program} {}", args.join(" ")),
            child: Mutex::new((child, BufReader::new(stdout))),
        })
    }
}

impl Drop for LineProtocolPolicy {
    fn drop(&mut self) {
        if let Ok(mut guard) = self.child.lock() {
            let _ = guard.0.kill();
            let _ = guard.0.wait();
        }
    }
}

impl FastPolicy for LineProtocolPolicy {
    fn predict(&self, ctx: &SwiftContext) -> Result<Action, PredictError> {
        let line = serialize_context(ctx).replace('\n', "\\n");
        let mut guard = self
            .child
            .lock()
            .map_err(|_| PredictError::External("adapter poisoned".to_string()))?;
        let stdin = guard
            .0
            .stdin
            .as_mut()
            .ok_or_else(|| PredictError::External("adapter stdin closed".to_string()))?;
        writeln!(stdin, "{line}").map_err(|e| PredictError::External(e.to_string()))?;
        stdin.flush().map_err(|e| PredictError::External(e.to_string()))?;
        let mut reply = String::new();
        guard
            .1
            .read_line(&mut reply)
            .map_err(|e| PredictError::External(e.to_string()))?;
        let reply = reply.trim();
        if reply.is_empty() {
            return Err(PredictError::External("adapter returned no action".to_string()));
        }
        self.grammar
            .parse_surface(reply)
            .map_err(|e| PredictError::UnparseableTarget {
                target: reply.to_string(),
                message: e.to_string(),
            })
    }

    fn metadata(&self) -> PolicyMetadata {
        PolicyMetadata {
            fingerprint: format!("line-protocol:{}", self.command),
            detail: "external subprocess policy".to_string(),
        }
    }
}
