//! Stub scripts derived from oracle trajectories.
//!
//! One script serves every strategy on a given variation: the first two
//! rules answer the two-stage prompts by their marker sentences, and the
//! indexed tail feeds one oracle action per call to the ask-every-step
//! baseline (whose prompts contain neither marker).

use crate::grammar::FormalCall;
use crate::llm::StubScript;
use crate::sage::{GROUNDING_MARKER, PLANNING_MARKER};
use crate::world::{TaskVariation, Trajectory, WorldSpec};

/// Canned planning answers: parseable, with the task as the current
/// subgoal.
pub fn planning_answers(variation: &TaskVariation) -> String {
    format!(
        "Answer 1:\nnone\nAnswer 2:\nnone\nAnswer 3:\n- {desc}\nAnswer 4:\nCurrent subgoal: {desc}\nAnswer 5:\n- retrace the gold path from the start",
        desc = variation.description
    )
}

/// The gold action sequence as formal calls, one per line.
pub fn gold_calls(world: &WorldSpec, gold: &Trajectory) -> Vec<FormalCall> {
    gold.transitions[1..]
        .iter()
        .map(|t| {
            world
                .grammar
                .surface_to_formal(&t.action.surface)
                .expect("gold actions are grammatical")
        })
        .collect()
}

pub fn oracle_stub_script(
    world: &WorldSpec,
    variation: &TaskVariation,
    gold: &Trajectory,
) -> StubScript {
    let calls = gold_calls(world, gold);
    let grounding = calls
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join("\n");
    let mut rules = vec![
        StubScript::substring(PLANNING_MARKER, planning_answers(variation)),
        StubScript::substring(GROUNDING_MARKER, grounding),
    ];
    rules.extend(
        calls
            .iter()
            .enumerate()
            .map(|(i, c)| StubScript::index(i, c.to_string())),
    );
    StubScript::new(rules)
}
