//! Acceptance suite: one test per criterion, each printing a pass line.
//!
//! Run with `cargo test -p swiftsage --test acceptance -- --nocapture` to
//! see the lines as they pass.

use std::collections::BTreeSet;
use std::time::Instant;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swiftsage::controller::{
    check_switch, execute_buffer, run_episode, AgentMode, BufferOutcome, ControllerConfig,
    SwitchCondition, SwitchConfig,
};
use swiftsage::eval::{
    export_trajectories, run_benchmark, BenchmarkConfig, Strategy,
};
use swiftsage::grammar::{Action, FormalCall};
use swiftsage::llm::{StubClient, StubScript};
use swiftsage::oracle;
use swiftsage::sage::{ActionBuffer, GROUNDING_MARKER, PLANNING_MARKER};
use swiftsage::swift::{build_dataset, BalanceConfig, RetrievalPolicy};
use swiftsage::world::{
    desk_families, desk_family, desk_world, load_family, load_world, Engine, EnvState, Predicate,
    TaskVariation, WorldSpec,
};

fn pass(criterion: usize, detail: &str) {
    println!("ACCEPTANCE {criterion} PASS: {detail}");
}

fn all_variations() -> Vec<TaskVariation> {
    desk_families()
        .iter()
        .flat_map(|f| f.variations().unwrap())
        .collect()
}

fn trained_policy() -> RetrievalPolicy {
    let world = desk_world();
    let mut trajectories = Vec::new();
    for family in desk_families() {
        for index in 0..8 {
            let v = family.variation(index).unwrap();
            trajectories.push(oracle::solve(world, &v).unwrap());
        }
    }
    let examples = build_dataset(&trajectories, &BalanceConfig::default()).unwrap();
    RetrievalPolicy::fit(world.grammar.clone(), examples)
}

// ---------------------------------------------------------------------------
// 1. Oracle completeness
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_oracle_completeness() {
    let started = Instant::now();
    let world = desk_world();
    let variations = all_variations();
    assert!(desk_families().len() >= 3, "at least three families");
    for family in desk_families() {
        let with_exception = family
            .variations()
            .unwrap()
            .iter()
            .filter(|v| v.has_exception())
            .count();
        assert!(
            with_exception >= 1,
            "family {} needs an exception variation",
            family.name()
        );
        assert!(family.variation_count() >= 10);
    }
    for variation in &variations {
        let trajectory = oracle::solve(world, variation).unwrap_or_else(|e| {
            panic!("oracle failed on {}: {e}", variation.id);
        });
        assert_eq!(
            trajectory.final_score(),
            100,
            "variation {} did not reach 100",
            variation.id
        );
        assert!(
            trajectory.transitions.iter().all(|t| t.valid),
            "gold trajectories contain no invalid steps"
        );
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 5.0,
        "oracle runtime {elapsed:?} exceeds 5 s"
    );
    pass(
        1,
        &format!(
            "{} variations across {} families solved to 100 in {elapsed:.2?}",
            variations.len(),
            desk_families().len()
        ),
    );
}

// ---------------------------------------------------------------------------
// 2. Telescoping and scoring invariants
// ---------------------------------------------------------------------------

/// Independent restatement of the milestone predicate semantics.
fn eval_predicate_reference(state: &EnvState, predicate: &Predicate) -> bool {
    match predicate {
        Predicate::At([obj, container]) => {
            state.containment.get(obj).map(String::as_str) == Some(container.as_str())
        }
        Predicate::State([obj, atom]) => state
            .object_states
            .get(obj)
            .map(|s| s.contains(atom))
            .unwrap_or(false),
        Predicate::InInventory(obj) => state.inventory.contains(obj),
        Predicate::Exists(obj) => state.containment.contains_key(obj),
        Predicate::AgentIn(room) => &state.agent_room == room,
        Predicate::Any(ps) => ps.iter().any(|p| eval_predicate_reference(state, p)),
        Predicate::All(ps) => ps.iter().all(|p| eval_predicate_reference(state, p)),
    }
}

fn random_action(world: &WorldSpec, names: &[String], rng: &mut ChaCha8Rng) -> Action {
    let templates = world.grammar.templates();
    let template = &templates[rng.gen_range(0..templates.len())];
    let args: Vec<&str> = (0..template.arity())
        .map(|_| names[rng.gen_range(0..names.len())].as_str())
        .collect();
    world.grammar.make_action(&template.id, &args).unwrap()
}

/// Fuzz one episode; returns the number of attempted steps.
fn fuzz_episode(world: &WorldSpec, variation: &TaskVariation, seed: u64, steps: usize) -> usize {
    let engine = Engine::new(world, variation);
    let (mut state, first) = engine.reset().unwrap();
    assert_eq!(first.score, 0, "episodes start at score 0");
    let mut names: Vec<String> = world.objects.iter().map(|o| o.name.clone()).collect();
    names.extend(world.rooms.iter().map(|r| r.name.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fired: BTreeSet<String> = BTreeSet::new();
    let mut reward_sum = 0i32;
    let mut attempted = 0usize;
    for _ in 0..steps {
        let action = if rng.gen_bool(0.7) {
            let valid = engine.valid_actions(&state);
            if valid.is_empty() {
                random_action(world, &names, &mut rng)
            } else {
                valid[rng.gen_range(0..valid.len())].clone()
            }
        } else {
            random_action(world, &names, &mut rng)
        };
        let (next, transition) = engine.step(&state, &action);
        attempted += 1;

        // Independent milestone accounting.
        let mut expected_reward = 0;
        if transition.valid {
            for m in &variation.milestones {
                if !fired.contains(&m.name) && eval_predicate_reference(&next, &m.when) {
                    assert!(fired.insert(m.name.clone()), "milestone fired twice");
                    expected_reward += m.points;
                }
            }
            for v in &variation.violations {
                if !fired.contains(&v.name) && eval_predicate_reference(&next, &v.when) {
                    assert!(fired.insert(v.name.clone()), "violation fired twice");
                    expected_reward += v.points;
                }
            }
        } else {
            assert_eq!(next, state, "invalid actions leave the state unchanged");
        }
        assert_eq!(
            transition.reward, expected_reward,
            "engine reward disagrees with the reference milestone evaluation"
        );
        assert_eq!(next.score, state.score + transition.reward);
        reward_sum += transition.reward;
        if !next.violated {
            assert!(
                (0..=100).contains(&next.score),
                "score {} out of range",
                next.score
            );
        }
        state = next;
        if state.violated {
            break;
        }
    }
    assert_eq!(reward_sum, state.score, "telescoping: sum of rewards = S_T - S_0");
    attempted
}

const MINI_WORLD: &str = r#"
schema = 1
name = "mini"
start_room = "left"

[[rooms]]
name = "left"
connections = ["right"]

[[rooms]]
name = "right"
connections = ["left"]

[[objects]]
name = "crate"
container = "left"
properties = ["container", "openable"]

[[objects]]
name = "marble"
container = "crate"
properties = ["portable", "pourable"]

[[objects]]
name = "sand"
container = "crate"
properties = ["portable", "pourable"]

[[objects]]
name = "lamp"
container = "right"
properties = ["device"]

[[objects]]
name = "bench"
container = "right"
properties = ["surface"]

[[objects]]
name = "bucket"
container = "right"
properties = ["portable", "container"]

[[objects]]
name = "mud"
properties = ["pourable"]

[[mixtures]]
inputs = ["marble", "sand"]
output = "mud"

[[templates]]
id = "look"
formal = "LOOK"
pattern = "look around"
slots = []
remark = "look"

[[templates]]
id = "teleport"
formal = "TELEPORT"
pattern = "teleport to {0}"
slots = ["room"]
remark = "go"

[[templates]]
id = "pick"
formal = "PICK"
pattern = "pick up {0}"
slots = ["object"]
remark = "pick"

[[templates]]
id = "open"
formal = "OPEN"
pattern = "open {0}"
slots = ["object"]
remark = "open"

[[templates]]
id = "close"
formal = "CLOSE"
pattern = "close {0}"
slots = ["object"]
remark = "close"

[[templates]]
id = "activate"
formal = "ACTIVATE"
pattern = "activate {0}"
slots = ["object"]
remark = "on"

[[templates]]
id = "deactivate"
formal = "DEACTIVATE"
pattern = "deactivate {0}"
slots = ["object"]
remark = "off"

[[templates]]
id = "examine"
formal = "EXAMINE"
pattern = "examine {0}"
slots = ["object"]
remark = "examine"

[[templates]]
id = "move"
formal = "MOVE"
pattern = "move {0} to {1}"
slots = ["object", "object"]
remark = "move"

[[templates]]
id = "pour"
formal = "POUR"
pattern = "pour {0} into {1}"
slots = ["object", "object"]
remark = "pour"

[[templates]]
id = "focus"
formal = "FOCUS"
pattern = "focus on {0}"
slots = ["object"]
remark = "focus"

[[templates]]
id = "wait"
formal = "WAIT"
pattern = "wait"
slots = []
remark = "wait"

[[templates]]
id = "mix"
formal = "MIX"
pattern = "mix {0}"
slots = ["object"]
remark = "mix"
"#;

const MINI_TASK: &str = r#"
schema = 1
family = "mini"
variation_count = 1
description_template = "make mud in the crate."

[[milestones]]
name = "crate opened"
points = 20
when = { state = ["crate", "open"] }

[[milestones]]
name = "mud exists"
points = 80
when = { exists = "mud" }
"#;

/// Brute force: every template against every tuple of known names, valid
/// iff step() succeeds.
fn brute_force_surfaces(world: &WorldSpec, engine: &Engine<'_>, state: &EnvState) -> Vec<String> {
    let mut names: Vec<String> = world.objects.iter().map(|o| o.name.clone()).collect();
    names.extend(world.rooms.iter().map(|r| r.name.clone()));
    let mut surfaces = Vec::new();
    for template in world.grammar.templates() {
        let mut tuples: Vec<Vec<&str>> = vec![Vec::new()];
        for _ in 0..template.arity() {
            tuples = tuples
                .into_iter()
                .flat_map(|prefix| {
                    names.iter().map(move |n| {
                        let mut next = prefix.clone();
                        next.push(n.as_str());
                        next
                    })
                })
                .collect();
        }
        for tuple in tuples {
            let action = world.grammar.make_action(&template.id, &tuple).unwrap();
            let (_, t) = engine.step(state, &action);
            if t.valid {
                surfaces.push(action.surface);
            }
        }
    }
    surfaces.sort();
    surfaces
}

#[test]
fn criterion_2_telescoping_and_scoring_invariants() {
    let world = desk_world();
    let mut total_steps = 0usize;
    for family in desk_families() {
        for index in [0usize, 8] {
            let variation = family.variation(index).unwrap();
            for seed in 0..30u64 {
                total_steps += fuzz_episode(world, &variation, seed, 60);
            }
        }
    }
    assert!(
        total_steps >= 10_000,
        "fuzz covered only {total_steps} steps"
    );

    // Brute-force cross-check of valid_actions on the small fixture.
    let mini_world = load_world(MINI_WORLD).unwrap();
    let mini_variation = load_family(MINI_TASK).unwrap().variation(0).unwrap();
    let engine = Engine::new(&mini_world, &mini_variation);
    let (mut state, _) = engine.reset().unwrap();
    let mut names: Vec<String> = mini_world.objects.iter().map(|o| o.name.clone()).collect();
    names.extend(mini_world.rooms.iter().map(|r| r.name.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0usize;
    for _ in 0..40 {
        let mut enumerated: Vec<String> = engine
            .valid_actions(&state)
            .into_iter()
            .map(|a| a.surface)
            .collect();
        enumerated.sort();
        assert_eq!(
            enumerated,
            brute_force_surfaces(&mini_world, &engine, &state),
            "valid_actions disagrees with brute force"
        );
        checked += 1;
        let actions = engine.valid_actions(&state);
        let action = if rng.gen_bool(0.8) && !actions.is_empty() {
            actions[rng.gen_range(0..actions.len())].clone()
        } else {
            random_action(&mini_world, &names, &mut rng)
        };
        let (next, _) = engine.step(&state, &action);
        state = next;
    }
    pass(
        2,
        &format!("{total_steps} fuzzed steps, {checked} brute-force-verified states"),
    );
}

// ---------------------------------------------------------------------------
// 3. Swift memorization and compositional re-binding
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_swift_memorization() {
    let world = desk_world();
    let policy = trained_policy();
    let config = ControllerConfig::default();

    let mut replayed = 0;
    for family in desk_families() {
        for index in 0..8 {
            let variation = family.variation(index).unwrap();
            let gold = oracle::solve(world, &variation).unwrap();
            let critical = gold
                .transitions
                .iter()
                .any(|t| config.switch.critical_templates.contains(&t.action.template_id));
            if critical {
                continue;
            }
            let result = run_episode(world, &variation, &policy, None, &config).unwrap();
            let gold_surfaces: Vec<&str> = gold
                .transitions
                .iter()
                .map(|t| t.action.surface.as_str())
                .collect();
            let got_surfaces: Vec<&str> = result
                .trajectory
                .transitions
                .iter()
                .map(|t| t.action.surface.as_str())
                .collect();
            assert_eq!(
                got_surfaces, gold_surfaces,
                "pure-fast replay diverged on {}",
                variation.id
            );
            assert_eq!(result.final_score, 100);
            replayed += 1;
        }
    }
    assert!(replayed >= 16, "expected several critical-free training variations");

    // Held-out variations of seen families score above zero.
    let mut held_out = 0;
    for family in desk_families() {
        for index in [10usize, 11] {
            let variation = family.variation(index).unwrap();
            let result = run_episode(world, &variation, &policy, None, &ControllerConfig::default())
                .unwrap();
            assert!(
                result.last_nonnegative_score > 0,
                "held-out {} scored {}",
                variation.id,
                result.last_nonnegative_score
            );
            held_out += 1;
        }
    }
    pass(
        3,
        &format!("{replayed} exact replays, {held_out} held-out variations all above zero"),
    );
}

// ---------------------------------------------------------------------------
// 4. Switch-logic conformance
// ---------------------------------------------------------------------------

/// Direct restatement of the four switch rules with their priority.
fn check_switch_reference(
    rewards: &[i32],
    critical: bool,
    have_prediction: bool,
    valid: bool,
    observation: &str,
    config: &SwitchConfig,
) -> Option<SwitchCondition> {
    if have_prediction && critical {
        Some(SwitchCondition::Critical)
    } else if !valid {
        Some(SwitchCondition::Invalid)
    } else if config
        .exception_phrases
        .iter()
        .any(|p| observation.to_lowercase().contains(&p.to_lowercase()))
    {
        Some(SwitchCondition::Unexpected)
    } else if rewards.len() >= config.stuck_window
        && rewards[rewards.len() - config.stuck_window..]
            .iter()
            .all(|r| *r == 0)
    {
        Some(SwitchCondition::Stuck)
    } else {
        None
    }
}

#[test]
fn criterion_4_switch_logic_conformance() {
    let world = desk_world();
    let config = SwitchConfig::default();
    let focus = world.grammar.parse_surface("focus on frog").unwrap();
    let wait = world.grammar.parse_surface("wait").unwrap();

    // Boundary cases pinned explicitly.
    assert_eq!(
        check_switch(&[0, 0, 0, 0], Some(&wait), true, "fine.", &config),
        None,
        "four zeros must not fire"
    );
    assert_eq!(
        check_switch(&[0, 0, 0, 0, 0], Some(&wait), true, "fine.", &config),
        Some(SwitchCondition::Stuck),
        "five zeros must fire"
    );

    let observations = [
        "all good.",
        "No known action can match that input.",
        "the stove cannot be activated.",
        "it doesn't heat up.",
    ];
    let mut runner = proptest::test_runner::TestRunner::new(proptest::test_runner::Config {
        cases: 2000,
        ..Default::default()
    });
    runner
        .run(
            &(
                proptest::collection::vec(prop_oneof![Just(0i32), 0i32..30], 0..12),
                any::<bool>(),
                any::<bool>(),
                any::<bool>(),
                0usize..observations.len(),
            ),
            |(rewards, critical, have_prediction, valid, obs_idx)| {
                let observation = observations[obs_idx];
                let action = if critical { &focus } else { &wait };
                let predicted = have_prediction.then_some(action);
                // A missing prediction is never valid.
                let valid = valid && have_prediction;
                let got = check_switch(&rewards, predicted, valid, observation, &config);
                let expected = check_switch_reference(
                    &rewards,
                    critical,
                    have_prediction,
                    valid,
                    observation,
                    &config,
                );
                prop_assert_eq!(got, expected);
                Ok(())
            },
        )
        .unwrap();

    // Two-consecutive-fault halting, against a reference scan.
    let v = desk_family("boil").unwrap().variation(0).unwrap();
    let engine = Engine::new(world, &v);
    let (state, _) = engine.reset().unwrap();
    // In the hallway, `wait` is clean and examining the absent rock faults.
    let clean = world.grammar.parse_surface("wait").unwrap();
    let faulty = world.grammar.parse_surface("examine rock").unwrap();
    let mut runner = proptest::test_runner::TestRunner::new(proptest::test_runner::Config {
        cases: 300,
        ..Default::default()
    });
    runner
        .run(
            &proptest::collection::vec(any::<bool>(), 1..12),
            |pattern| {
                let buffer = ActionBuffer {
                    actions: pattern
                        .iter()
                        .map(|ok| if *ok { clean.clone() } else { faulty.clone() })
                        .collect(),
                    origin: Vec::new(),
                    skipped: Vec::new(),
                };
                let (_, transitions, outcome) =
                    execute_buffer(&engine, &state, &buffer, &config, 1000);
                // Reference: first index where two consecutive faults end.
                let mut consecutive = 0;
                let mut halt_after = None;
                for (i, ok) in pattern.iter().enumerate() {
                    if *ok {
                        consecutive = 0;
                    } else {
                        consecutive += 1;
                        if consecutive == 2 {
                            halt_after = Some(i + 1);
                            break;
                        }
                    }
                }
                match halt_after {
                    Some(n) => {
                        prop_assert_eq!(transitions.len(), n);
                        prop_assert_eq!(outcome, BufferOutcome::HaltedDoubleFault);
                    }
                    None => {
                        prop_assert_eq!(transitions.len(), pattern.len());
                        prop_assert_eq!(outcome, BufferOutcome::Drained);
                    }
                }
                Ok(())
            },
        )
        .unwrap();

    pass(4, "2000 switch cases and 300 buffer patterns match the rule restatement");
}

// ---------------------------------------------------------------------------
// 5. End-to-end exception recovery
// ---------------------------------------------------------------------------

fn broken_stove_script() -> StubScript {
    let planning = "Answer 1:\n- metal pot: kitchen\n- water: metal pot\nAnswer 2:\nnone\nAnswer 3:\n- heat the water on a working heat source\nAnswer 4:\n- reached the kitchen\nCurrent subgoal: heat the water on the fire pit outside\nAnswer 5:\n- the stove is broken; use the fire pit outside instead";
    let grounding = "PICK(metal pot)\nTELEPORT(outside)\nMOVE(metal pot, fire pit)\nACTIVATE(fire pit)\nWAIT()\nWAIT()\nWAIT()";
    StubScript::new(vec![
        StubScript::substring(PLANNING_MARKER, planning),
        StubScript::substring(GROUNDING_MARKER, grounding),
    ])
}

#[test]
fn criterion_5_end_to_end_exception_recovery() {
    let world = desk_world();
    let variation = desk_family("boil").unwrap().variation(8).unwrap();
    assert!(variation.has_exception());
    let policy = trained_policy();
    let gold = oracle::solve(world, &variation).unwrap();

    let run = || {
        let stub = StubClient::new(broken_stove_script());
        run_episode(
            world,
            &variation,
            &policy,
            Some(&stub),
            &ControllerConfig::default(),
        )
        .unwrap()
    };
    let result = run();
    assert_eq!(result.final_score, 100, "recovery must finish the task");
    assert!(
        result.action_count() <= 2 * gold.action_count(),
        "{} actions vs oracle {}",
        result.action_count(),
        gold.action_count()
    );
    assert_eq!(result.sage_invocations, 1, "exactly one slow-module invocation");
    let fired: Vec<SwitchCondition> = result.mode_log.iter().filter_map(|m| m.condition).collect();
    assert_eq!(fired, vec![SwitchCondition::Unexpected]);
    assert_eq!(result.llm_calls.len(), 2);

    let again = run();
    assert_eq!(
        serde_json::to_vec(&result).unwrap(),
        serde_json::to_vec(&again).unwrap(),
        "episodes must replay byte-identically"
    );
    pass(
        5,
        &format!(
            "score 100 in {} actions (oracle {}), one Unexpected-triggered invocation",
            result.action_count(),
            gold.action_count()
        ),
    );
}

// ---------------------------------------------------------------------------
// 6. Cost ordering at desk scale
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_cost_ordering() {
    let world = desk_world();
    let families = desk_families();
    let bench = |strategy: Strategy| {
        let config = BenchmarkConfig {
            strategy,
            ..Default::default()
        };
        run_benchmark(world, families, &config).unwrap()
    };
    let swiftsage = bench(Strategy::Swiftsage);
    let every_step = bench(Strategy::LlmEveryStep);
    let swift_only = bench(Strategy::SwiftOnly);

    let tpa_swiftsage = swiftsage.report.overall.tokens_per_action;
    let tpa_every_step = every_step.report.overall.tokens_per_action;
    assert!(tpa_swiftsage > 0.0, "the dual agent does call the model");
    assert!(
        tpa_swiftsage < 0.5 * tpa_every_step,
        "tpa {tpa_swiftsage:.2} is not under half of {tpa_every_step:.2}"
    );
    assert_eq!(
        swift_only.report.overall.tokens_per_action, 0.0,
        "the fast-only agent uses exactly zero tokens"
    );
    assert!(swift_only.episodes.iter().all(|e| e.llm_calls.is_empty()));
    pass(
        6,
        &format!(
            "tpa: dual {tpa_swiftsage:.2} < 0.5 x every-step {tpa_every_step:.2}; fast-only 0"
        ),
    );
}

// ---------------------------------------------------------------------------
// 7. Grammar round-trip
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_grammar_round_trip() {
    let world = desk_world();
    let grammar = &world.grammar;

    // The two catalog conversions quoted in the template remarks.
    let pour = grammar.parse_formal("POUR(red paint, wood cup)").unwrap();
    assert_eq!(
        grammar.formal_to_surface(&pour).unwrap().surface,
        "pour red paint into wood cup"
    );
    let teleport = grammar.parse_formal("TELEPORT(kitchen)").unwrap();
    assert_eq!(
        grammar.formal_to_surface(&teleport).unwrap().surface,
        "teleport to kitchen"
    );

    // Arguments from a word alphabet that avoids pattern infixes.
    let word = prop_oneof![
        Just("frog"),
        Just("red paint"),
        Just("metal pot"),
        Just("glass cup"),
        Just("soap"),
        Just("fire pit"),
        Just("watering can"),
        Just("kitchen"),
        Just("left sock"),
        Just("dusty lamp"),
    ];
    let template_count = grammar.templates().len();
    let mut runner = proptest::test_runner::TestRunner::new(proptest::test_runner::Config {
        cases: 1500,
        ..Default::default()
    });
    runner
        .run(
            &(0usize..template_count, proptest::collection::vec(word, 2)),
            |(template_idx, words)| {
                let template = &grammar.templates()[template_idx];
                let args: Vec<String> = words
                    .into_iter()
                    .take(template.arity())
                    .map(str::to_string)
                    .collect();
                if args.len() < template.arity() {
                    return Ok(());
                }
                let call = FormalCall {
                    name: template.formal.clone(),
                    args: args.clone(),
                };
                let action = grammar.formal_to_surface(&call).unwrap();
                let back = grammar.surface_to_formal(&action.surface).unwrap();
                prop_assert_eq!(back, call);
                Ok(())
            },
        )
        .unwrap();
    pass(7, "1500 random conversions plus both catalog examples round-trip");
}

// ---------------------------------------------------------------------------
// 8. Determinism and replay
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_determinism_and_replay() {
    let started = Instant::now();
    let world = desk_world();
    let families = desk_families();
    let run = |strategy: Strategy| {
        let config = BenchmarkConfig {
            strategy,
            ..Default::default()
        };
        let outcome = run_benchmark(world, families, &config).unwrap();
        let report_json = serde_json::to_vec(&outcome.report).unwrap();
        let table = outcome.report.render_table();
        let mut export = Vec::new();
        export_trajectories(&outcome.episodes, &mut export).unwrap();
        (report_json, table, export)
    };
    for strategy in [Strategy::Swiftsage, Strategy::Oracle] {
        let first = run(strategy);
        let second = run(strategy);
        assert_eq!(first.0, second.0, "metrics JSON must be byte-identical");
        assert_eq!(first.1, second.1, "metrics table must be byte-identical");
        assert_eq!(first.2, second.2, "trajectory export must be byte-identical");
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs_f64() < 60.0,
        "bench runtime {elapsed:?} exceeds 60 s"
    );
    pass(
        8,
        &format!("two strategies, two runs each, byte-identical in {elapsed:.2?}"),
    );
}

// ---------------------------------------------------------------------------
// Cross-cutting: accounting and mode-log alignment
// ---------------------------------------------------------------------------

#[test]
fn llm_calls_only_happen_when_a_condition_fired() {
    let world = desk_world();
    let families = desk_families();
    let config = BenchmarkConfig {
        strategy: Strategy::Swiftsage,
        ..Default::default()
    };
    let outcome = run_benchmark(world, families, &config).unwrap();
    for episode in &outcome.episodes {
        assert_eq!(episode.mode_log.len(), episode.trajectory.transitions.len());
        let conditions = episode.mode_log.iter().filter(|m| m.condition.is_some()).count();
        assert_eq!(
            conditions, episode.sage_invocations,
            "every logged condition corresponds to one slow-module invocation"
        );
        // Two calls per invocation (three with one retry); the stub never
        // needs the retry.
        assert_eq!(episode.llm_calls.len(), 2 * episode.sage_invocations);
        if episode.sage_invocations == 0 {
            assert!(episode.llm_calls.is_empty());
            assert!(episode.mode_log.iter().all(|m| m.mode == AgentMode::Swift));
        }
        // The fast path never emits a gated template before the slow module
        // has run.
        let mut sage_seen = false;
        for (entry, transition) in episode.mode_log.iter().zip(&episode.trajectory.transitions) {
            if entry.mode == AgentMode::Sage {
                sage_seen = true;
            }
            if transition.action.template_id == "focus" && !sage_seen {
                panic!("gated action on the fast path before any slow-module run");
            }
        }
    }
}
