//! Deterministic text-world simulator with declarative specs.

mod engine;
mod spec;
mod state;

pub use engine::{
    eval_predicate, initial_state, render_environment, render_inventory, step, valid_actions,
    Engine, Trajectory, Transition, NO_MATCH_OBSERVATION,
};
pub use spec::{
    load_family, load_world, validate_variation, ExceptionKind, ExceptionSpec, Milestone,
    Mixture, ObjectProto, Predicate, Property, RoomDef, StateOverride, TaskFamily, TaskVariation,
    Violation, WorldError, WorldSpec, DEFAULT_TEMPERATURE, KNOWN_TEMPLATE_IDS, SCHEMA_VERSION,
};
pub use state::{EnvState, AGENT_CONTAINER};

use std::sync::OnceLock;

const DESK_WORLD_TOML: &str = include_str!("../assets/desk_world.toml");
const FAMILY_TOMLS: &[&str] = &[
    include_str!("../assets/tasks_boil.toml"),
    include_str!("../assets/tasks_measure.toml"),
    include_str!("../assets/tasks_find_living.toml"),
    include_str!("../assets/tasks_mix.toml"),
];

/// The bundled desk-scale world.
pub fn desk_world() -> &'static WorldSpec {
    static WORLD: OnceLock<WorldSpec> = OnceLock::new();
    WORLD.get_or_init(|| load_world(DESK_WORLD_TOML).expect("bundled world is valid"))
}

/// The bundled task families, in declaration order.
pub fn desk_families() -> &'static [TaskFamily] {
    static FAMILIES: OnceLock<Vec<TaskFamily>> = OnceLock::new();
    FAMILIES.get_or_init(|| {
        FAMILY_TOMLS
            .iter()
            .map(|doc| load_family(doc).expect("bundled family is valid"))
            .collect()
    })
}

/// Look up a bundled family by name.
pub fn desk_family(name: &str) -> Option<&'static TaskFamily> {
    desk_families().iter().find(|f| f.name() == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::Action;

    fn variation(family: &str, index: usize) -> TaskVariation {
        desk_family(family).unwrap().variation(index).unwrap()
    }

    fn action(surface: &str) -> Action {
        desk_world().grammar.parse_surface(surface).unwrap()
    }

    #[test]
    fn desk_world_is_desk_scale() {
        let world = desk_world();
        assert!(world.rooms.len() >= 4, "need at least 4 rooms");
        assert!(
            world.grammar.templates().len() >= 8,
            "need at least 8 templates"
        );
        for formal in [
            "TELEPORT",
            "PICK",
            "OPEN",
            "ACTIVATE",
            "DEACTIVATE",
            "EXAMINE",
            "MOVE",
            "POUR",
            "FOCUS",
            "WAIT",
        ] {
            assert!(
                world.grammar.by_formal(formal).is_some(),
                "missing template {formal}"
            );
        }
    }

    #[test]
    fn reset_is_deterministic() {
        let world = desk_world();
        let v = variation("boil", 0);
        let engine = Engine::new(world, &v);
        let (s1, t1) = engine.reset().unwrap();
        let (s2, t2) = engine.reset().unwrap();
        assert_eq!(s1, s2);
        assert_eq!(t1, t2);
        assert_eq!(
            serde_json::to_vec(&s1).unwrap(),
            serde_json::to_vec(&s2).unwrap()
        );
    }

    #[test]
    fn reset_with_no_overrides_matches_world_defaults() {
        let world = desk_world();
        // Hand-built variation with nothing overridden.
        let v = TaskVariation {
            id: "blank-00".to_string(),
            family: "blank".to_string(),
            description: "do nothing".to_string(),
            params: Default::default(),
            overrides: Vec::new(),
            milestones: vec![Milestone {
                name: "impossible".to_string(),
                points: 100,
                when: Predicate::AgentIn("nowhere?".to_string()),
            }],
            violations: Vec::new(),
            exceptions: Vec::new(),
            seed: 0,
        };
        // The milestone references an unknown room, so validation rejects it.
        assert!(Engine::new(world, &v).reset().is_err());

        let v = TaskVariation {
            milestones: vec![Milestone {
                name: "reach outside".to_string(),
                points: 100,
                when: Predicate::AgentIn("outside".to_string()),
            }],
            ..v
        };
        let (state, _) = Engine::new(world, &v).reset().unwrap();
        for proto in &world.objects {
            match &proto.container {
                Some(c) => assert_eq!(state.containment.get(&proto.name), Some(c)),
                None => assert!(!state.exists(&proto.name)),
            }
        }
    }

    #[test]
    fn broken_stove_exception_sets_state_and_rejects_activation() {
        let world = desk_world();
        let family = desk_family("boil").unwrap();
        // Indices 8 and 9 carry the disabled-device exception.
        let v = family.variation(8).unwrap();
        assert!(v.has_exception());
        let engine = Engine::new(world, &v);
        let (state, _) = engine.reset().unwrap();
        assert!(state.has_state("stove", "broken"));

        let mut state = state;
        let (next, t) = engine.step(&state, &action("teleport to kitchen"));
        assert!(t.valid);
        state = next;
        let (next, t) = engine.step(&state, &action("activate stove"));
        assert!(!t.valid);
        assert!(t.observation.contains("cannot"), "got: {}", t.observation);
        assert_eq!(t.reward, 0);
        assert_eq!(next, state, "invalid actions leave the state unchanged");
    }

    #[test]
    fn thermometer_reports_temperature() {
        // A small bespoke world so the command can reference a generic
        // `substance` sitting in a pot at a known temperature.
        let doc = r#"
schema = 1
name = "thermo test"
start_room = "kitchen"

[[rooms]]
name = "kitchen"
connections = []

[[objects]]
name = "metal pot"
container = "kitchen"
properties = ["portable", "container"]

[[objects]]
name = "substance"
container = "metal pot"
properties = ["pourable"]
temperature = 80

[[objects]]
name = "thermometer"
container = "kitchen"
properties = ["portable", "measuring"]

[[templates]]
id = "look"
formal = "LOOK"
pattern = "look around"
slots = []
remark = "look around"

[[templates]]
id = "pick"
formal = "PICK"
pattern = "pick up {0}"
slots = ["object"]
remark = "pick up an object"

[[templates]]
id = "use"
formal = "USE"
pattern = "use {0} on {1}"
slots = ["object", "object"]
remark = "use one object on another"
"#;
        let world = load_world(doc).unwrap();
        let v = TaskVariation {
            id: "thermo-00".to_string(),
            family: "thermo".to_string(),
            description: "measure".to_string(),
            params: Default::default(),
            overrides: Vec::new(),
            milestones: vec![Milestone {
                name: "measured".to_string(),
                points: 100,
                when: Predicate::State(["substance".to_string(), "measured".to_string()]),
            }],
            violations: Vec::new(),
            exceptions: Vec::new(),
            seed: 0,
        };
        let engine = Engine::new(&world, &v);
        let (state, _) = engine.reset().unwrap();
        let (state, t) = engine.step(&state, &world.grammar.parse_surface("pick up thermometer").unwrap());
        assert!(t.valid);
        let act = world
            .grammar
            .parse_surface("use thermometer on the substance in metal pot")
            .unwrap();
        let (next, t) = engine.step(&state, &act);
        assert!(t.valid);
        assert!(
            t.observation.contains("the temperature is 80F"),
            "got: {}",
            t.observation
        );
        assert_eq!(t.action.args, vec!["thermometer", "substance"]);
        assert_eq!(next.score, 100);
    }

    #[test]
    fn milestones_fire_once_and_rewards_telescope() {
        let world = desk_world();
        let v = variation("boil", 0);
        let engine = Engine::new(world, &v);
        let (mut state, first) = engine.reset().unwrap();
        let mut transitions = vec![first];
        for cmd in [
            "teleport to kitchen",
            "move metal pot to stove",
            "activate stove",
            "move metal pot to stove", // no-op repeat: milestone must not re-fire
            "wait",
            "wait",
            "wait",
            "wait",
        ] {
            let (next, t) = engine.step(&state, &action(cmd));
            state = next;
            transitions.push(t);
        }
        assert_eq!(state.score, 100);
        let repeat = &transitions[4];
        assert_eq!(repeat.reward, 0, "re-satisfying a milestone scores nothing");
        let sum: i32 = transitions.iter().map(|t| t.reward).sum();
        assert_eq!(sum, state.score);
    }

    #[test]
    fn closed_fridge_contents_are_not_rendered_or_actionable() {
        let world = desk_world();
        let v = variation("boil", 0);
        let engine = Engine::new(world, &v);
        let (state, _) = engine.reset().unwrap();
        let (state, _) = engine.step(&state, &action("teleport to kitchen"));
        let env = render_environment(world, &state);
        assert!(env.contains("a fridge (closed)"));
        assert!(!env.contains("milk"));
        let actions = engine.valid_actions(&state);
        assert!(
            actions.iter().all(|a| !a.args.contains(&"milk".to_string())),
            "no action may reference objects inside a closed fridge"
        );
        let (state, _) = engine.step(&state, &action("open fridge"));
        let env = render_environment(world, &state);
        assert!(env.contains("milk"));
    }

    #[test]
    fn render_is_deterministic() {
        let world = desk_world();
        let v = variation("measure", 2);
        let (state, _) = Engine::new(world, &v).reset().unwrap();
        assert_eq!(
            render_environment(world, &state),
            render_environment(world, &state)
        );
    }

    #[test]
    fn empty_handed_in_sparse_room_yields_navigation_and_look_only() {
        let doc = r#"
schema = 1
name = "sparse"
start_room = "north"

[[rooms]]
name = "north"
connections = ["south"]

[[rooms]]
name = "south"
connections = ["north"]

[[templates]]
id = "look"
formal = "LOOK"
pattern = "look around"
slots = []
remark = "look"

[[templates]]
id = "wait"
formal = "WAIT"
pattern = "wait"
slots = []
remark = "wait"

[[templates]]
id = "teleport"
formal = "TELEPORT"
pattern = "teleport to {0}"
slots = ["room"]
remark = "go to a room"

[[templates]]
id = "pick"
formal = "PICK"
pattern = "pick up {0}"
slots = ["object"]
remark = "pick up"
"#;
        let world = load_world(doc).unwrap();
        let v = TaskVariation {
            id: "sparse-00".to_string(),
            family: "sparse".to_string(),
            description: "walk".to_string(),
            params: Default::default(),
            overrides: Vec::new(),
            milestones: vec![Milestone {
                name: "south reached".to_string(),
                points: 100,
                when: Predicate::AgentIn("south".to_string()),
            }],
            violations: Vec::new(),
            exceptions: Vec::new(),
            seed: 0,
        };
        let (state, _) = Engine::new(&world, &v).reset().unwrap();
        let actions = valid_actions(&world, &state);
        let surfaces: Vec<&str> = actions.iter().map(|a| a.surface.as_str()).collect();
        assert_eq!(surfaces, vec!["look around", "wait", "teleport to south"]);
    }

    #[test]
    fn valid_actions_matches_brute_force_on_two_room_fixture() {
        // Independent enumerator: every template applied to every tuple of
        // known names (objects and rooms alike), succeeding iff step() says
        // so. The engine's own enumeration must match exactly.
        let world = desk_world();
        let v = variation("mix", 0);
        let engine = Engine::new(world, &v);
        let (mut state, _) = engine.reset().unwrap();
        for cmd in ["teleport to art studio", "pour red paint into glass cup"] {
            let (next, t) = engine.step(&state, &action(cmd));
            assert!(t.valid);
            state = next;
        }

        let mut names: Vec<String> = world.objects.iter().map(|o| o.name.clone()).collect();
        names.extend(world.rooms.iter().map(|r| r.name.clone()));
        let mut expected: Vec<String> = Vec::new();
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
                let candidate = world.grammar.make_action(&template.id, &tuple).unwrap();
                let (_, t) = engine.step(&state, &candidate);
                if t.valid {
                    expected.push(candidate.surface.clone());
                }
            }
        }
        expected.sort();
        let mut got: Vec<String> = engine
            .valid_actions(&state)
            .into_iter()
            .map(|a| a.surface)
            .collect();
        got.sort();
        assert_eq!(got, expected);
    }

    #[test]
    fn focusing_the_decoy_is_a_terminal_violation() {
        let world = desk_world();
        let v = variation("find-living", 0);
        let engine = Engine::new(world, &v);
        let (state, _) = engine.reset().unwrap();
        let target = v.params.get("target").unwrap().clone();
        let (state, _) = engine.step(&state, &action("teleport to greenhouse"));
        let (state, t) = engine.step(&state, &action(&format!("focus on {target}")));
        assert_eq!(t.reward, 50);
        let (state, _) = engine.step(&state, &action("teleport to workshop"));
        let (state, t) = engine.step(&state, &action("focus on rock"));
        assert!(state.violated);
        assert_eq!(t.reward, -100);
        assert_eq!(state.score, -50);
    }

    #[test]
    fn mixing_paints_creates_the_product() {
        let world = desk_world();
        let v = variation("mix", 0);
        let output = v.params.get("output").unwrap().clone();
        let in1 = v.params.get("in1").unwrap().clone();
        let in2 = v.params.get("in2").unwrap().clone();
        let engine = Engine::new(world, &v);
        let (mut state, _) = engine.reset().unwrap();
        for cmd in [
            "teleport to art studio".to_string(),
            format!("pour {in1} into glass cup"),
            format!("pour {in2} into glass cup"),
            "mix glass cup".to_string(),
        ] {
            let (next, t) = engine.step(&state, &action(&cmd));
            assert!(t.valid, "{cmd}: {}", t.observation);
            state = next;
        }
        assert!(state.exists(&output));
        assert!(!state.exists(&in1));
        assert_eq!(state.score, 100);
    }
}
