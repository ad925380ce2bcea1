//! Handcrafted per-task-family solvers.
//!
//! Each family has a script: an ordered subgoal plan whose commands are
//! bound to the concrete variation by a binder (target names, temperatures,
//! injected exceptions). Executing the bound plan against the engine yields
//! the gold trajectory: minimal, always valid, ending at score 100. These
//! trajectories feed the imitation dataset and serve as the efficiency
//! reference curve.

use thiserror::Error;

use crate::world::{
    Engine, ExceptionKind, TaskVariation, Trajectory, WorldError, WorldSpec,
};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("no oracle script for task family `{0}`")]
    UnsupportedFamily(String),
    #[error("binder failed for `{variation}`: {message}")]
    Binder { variation: String, message: String },
    #[error("script failed at subgoal `{subgoal}`, command `{command}`: {observation}")]
    ScriptFailure {
        subgoal: String,
        command: String,
        observation: String,
    },
    #[error("script for `{variation}` ended at score {score}, expected 100")]
    Incomplete { variation: String, score: i32 },
    #[error(transparent)]
    World(#[from] WorldError),
}

/// One named step group of a bound plan.
#[derive(Debug, Clone)]
pub struct Subgoal {
    pub name: String,
    pub commands: Vec<String>,
}

/// A plan bound to a concrete variation: surface commands, in order.
#[derive(Debug, Clone)]
pub struct BoundPlan {
    pub subgoals: Vec<Subgoal>,
}

impl BoundPlan {
    pub fn commands(&self) -> impl Iterator<Item = (&str, &str)> {
        self.subgoals
            .iter()
            .flat_map(|s| s.commands.iter().map(move |c| (s.name.as_str(), c.as_str())))
    }
}

/// A family script: a parameterized plan plus the binder that instantiates
/// it for one variation.
pub struct OracleScript {
    pub family: &'static str,
    bind: fn(&WorldSpec, &TaskVariation) -> Result<BoundPlan, OracleError>,
}

impl OracleScript {
    pub fn bind(&self, world: &WorldSpec, variation: &TaskVariation) -> Result<BoundPlan, OracleError> {
        (self.bind)(world, variation)
    }
}

const SCRIPTS: &[OracleScript] = &[
    OracleScript {
        family: "boil",
        bind: bind_boil,
    },
    OracleScript {
        family: "measure",
        bind: bind_measure,
    },
    OracleScript {
        family: "find-living",
        bind: bind_find_living,
    },
    OracleScript {
        family: "mix",
        bind: bind_mix,
    },
];

pub fn script_for(family: &str) -> Option<&'static OracleScript> {
    SCRIPTS.iter().find(|s| s.family == family)
}

/// Solve a variation to score 100 with the family script.
pub fn solve(world: &WorldSpec, variation: &TaskVariation) -> Result<Trajectory, OracleError> {
    let script = script_for(&variation.family)
        .ok_or_else(|| OracleError::UnsupportedFamily(variation.family.clone()))?;
    let plan = script.bind(world, variation)?;
    let engine = Engine::new(world, variation);
    let (mut state, first) = engine.reset()?;
    let mut trajectory = Trajectory::new(variation);
    trajectory.transitions.push(first);
    for (subgoal, command) in plan.commands() {
        let action = world.grammar.parse_surface(command).map_err(|e| {
            OracleError::ScriptFailure {
                subgoal: subgoal.to_string(),
                command: command.to_string(),
                observation: e.to_string(),
            }
        })?;
        let (next, transition) = engine.step(&state, &action);
        if !transition.valid {
            return Err(OracleError::ScriptFailure {
                subgoal: subgoal.to_string(),
                command: command.to_string(),
                observation: transition.observation,
            });
        }
        state = next;
        trajectory.transitions.push(transition);
    }
    if state.score != 100 {
        return Err(OracleError::Incomplete {
            variation: variation.id.clone(),
            score: state.score,
        });
    }
    Ok(trajectory)
}

fn param<'v>(variation: &'v TaskVariation, key: &str) -> Result<&'v str, OracleError> {
    variation
        .params
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| OracleError::Binder {
            variation: variation.id.clone(),
            message: format!("missing param `{key}`"),
        })
}

fn has_exception(variation: &TaskVariation, kind: ExceptionKind, target: &str) -> bool {
    variation
        .exceptions
        .iter()
        .any(|e| e.kind == kind && e.target == target)
}

// ---------------------------------------------------------------------------
// Family binders
// ---------------------------------------------------------------------------

fn bind_boil(world: &WorldSpec, variation: &TaskVariation) -> Result<BoundPlan, OracleError> {
    let start_temp: i32 = param(variation, "start_temp")?.parse().map_err(|_| {
        OracleError::Binder {
            variation: variation.id.clone(),
            message: "start_temp is not an integer".to_string(),
        }
    })?;
    let heat = world
        .proto("stove")
        .map(|p| p.heat_output)
        .filter(|h| *h > 0)
        .unwrap_or(50);
    let boil_point = world
        .proto("water")
        .and_then(|p| p.boil_point)
        .unwrap_or(212);
    // The activation step already heats once; each wait adds `heat` more.
    let deficit = boil_point - start_temp - heat;
    let waits = if deficit <= 0 {
        0
    } else {
        (deficit + heat - 1) / heat
    } as usize;

    let broken_stove = has_exception(variation, ExceptionKind::DisabledDevice, "stove");
    let mut subgoals = vec![Subgoal {
        name: "reach the kitchen".to_string(),
        commands: vec!["teleport to kitchen".to_string()],
    }];
    let heat_source = if broken_stove {
        subgoals.push(Subgoal {
            name: "carry the pot to the fire pit".to_string(),
            commands: vec![
                "pick up metal pot".to_string(),
                "teleport to outside".to_string(),
                "move metal pot to fire pit".to_string(),
            ],
        });
        "fire pit"
    } else {
        subgoals.push(Subgoal {
            name: "put the pot on the stove".to_string(),
            commands: vec!["move metal pot to stove".to_string()],
        });
        "stove"
    };
    let mut heat_commands = vec![format!("activate {heat_source}")];
    heat_commands.extend(std::iter::repeat("wait".to_string()).take(waits));
    subgoals.push(Subgoal {
        name: "heat the water until it boils".to_string(),
        commands: heat_commands,
    });
    Ok(BoundPlan { subgoals })
}

fn bind_measure(_world: &WorldSpec, variation: &TaskVariation) -> Result<BoundPlan, OracleError> {
    let substance = param(variation, "substance")?;
    let displaced = has_exception(variation, ExceptionKind::MissingObject, "thermometer");
    let mut subgoals = Vec::new();
    if displaced {
        subgoals.push(Subgoal {
            name: "get the thermometer".to_string(),
            commands: vec![
                "teleport to living room".to_string(),
                "pick up thermometer".to_string(),
                "teleport to kitchen".to_string(),
            ],
        });
    } else {
        subgoals.push(Subgoal {
            name: "get the thermometer".to_string(),
            commands: vec![
                "teleport to kitchen".to_string(),
                "pick up thermometer".to_string(),
            ],
        });
    }
    subgoals.push(Subgoal {
        name: format!("measure the {substance}"),
        commands: vec![format!("use thermometer on {substance}")],
    });
    Ok(BoundPlan { subgoals })
}

fn bind_find_living(_world: &WorldSpec, variation: &TaskVariation) -> Result<BoundPlan, OracleError> {
    let target = param(variation, "target")?;
    let hidden = has_exception(variation, ExceptionKind::MissingObject, target);
    let habitat = if hidden { "living room" } else { "greenhouse" };
    Ok(BoundPlan {
        subgoals: vec![
            Subgoal {
                name: format!("find the {target}"),
                commands: vec![format!("teleport to {habitat}")],
            },
            Subgoal {
                name: format!("focus on the {target}"),
                commands: vec![format!("focus on {target}")],
            },
            Subgoal {
                name: "box it up in the workshop".to_string(),
                commands: vec![
                    format!("pick up {target}"),
                    "teleport to workshop".to_string(),
                    format!("move {target} to red box"),
                ],
            },
        ],
    })
}

fn bind_mix(_world: &WorldSpec, variation: &TaskVariation) -> Result<BoundPlan, OracleError> {
    let in1 = param(variation, "in1")?;
    let in2 = param(variation, "in2")?;
    let displaced = has_exception(variation, ExceptionKind::MissingObject, in1);
    let mut subgoals = Vec::new();
    if displaced {
        subgoals.push(Subgoal {
            name: format!("fetch the {in1}"),
            commands: vec![
                "teleport to workshop".to_string(),
                format!("pick up {in1}"),
                "teleport to art studio".to_string(),
            ],
        });
    } else {
        subgoals.push(Subgoal {
            name: "reach the art studio".to_string(),
            commands: vec!["teleport to art studio".to_string()],
        });
    }
    subgoals.push(Subgoal {
        name: "fill the glass cup".to_string(),
        commands: vec![
            format!("pour {in1} into glass cup"),
            format!("pour {in2} into glass cup"),
        ],
    });
    subgoals.push(Subgoal {
        name: "mix the paints".to_string(),
        commands: vec!["mix glass cup".to_string()],
    });
    Ok(BoundPlan { subgoals })
}
