//! A desk-scale dual-process agent for scored text-world tasks.
//!
//! The crate is organized around seven pieces:
//!
//! - [`world`] — a deterministic, seedable text-world simulator with
//!   declarative world/task specs, milestone scoring, and a four-field
//!   feedback loop (observation, environment, inventory, score).
//! - [`grammar`] — the action grammar: surface command strings, formal
//!   `NAME(arg, ...)` calls, and the bidirectional mapping between them.
//! - [`oracle`] — handcrafted per-task-family solvers that produce minimal
//!   gold trajectories for imitation data and reference curves.
//! - [`swift`] — the fast module: context-window serialization, a balanced
//!   imitation dataset builder, and a pluggable next-action policy whose
//!   default is deterministic nearest-context retrieval.
//! - [`sage`] — the slow module: a five-question planning prompt, a
//!   grounding prompt over the action-template catalog, and parsers that
//!   turn completions into an executable action buffer.
//! - [`controller`] — the integration loop: run in fast mode, switch to the
//!   slow module on any of four conditions, drain the action buffer, revert.
//! - [`llm`] — transport over a chat-completion endpoint with token
//!   accounting, plus a deterministic scripted stub for tests.
//! - [`eval`] — benchmark runner (optionally rayon-parallel), metrics
//!   (score, tokens-per-action, scores-per-action, length groups), and
//!   trajectory/plot-data exports.

pub mod controller;
pub mod eval;
pub mod grammar;
pub mod llm;
pub mod oracle;
pub mod sage;
pub mod swift;
pub mod world;

pub use controller::{run_episode, ControllerConfig, EpisodeResult, SwitchConfig};
pub use eval::{run_benchmark, BenchmarkConfig, MetricsReport, Strategy};
pub use grammar::{Action, ActionGrammar, FormalCall};
pub use swift::{FastPolicy, RetrievalPolicy, SwiftContext};
pub use world::{EnvState, TaskVariation, Transition, WorldSpec};
