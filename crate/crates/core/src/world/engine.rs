//! The simulator: reset, step, action validity, and text rendering.
//!
//! `step` is a pure transition: it takes a state by reference and returns a
//! new state plus a [`Transition`] record. Inapplicable actions are data,
//! not errors — they leave the state untouched (including the step index)
//! and come back as `valid = false` with an exception-style observation.
//! Every rejection message contains `cannot` or the `no known action can
//! match` phrase, so downstream exception detection has a fixed surface to
//! match against.

use serde::{Deserialize, Serialize};

use crate::grammar::{Action, SlotKind};

use super::spec::{
    validate_variation, Predicate, Property, TaskVariation, WorldError, WorldSpec,
};
use super::state::{EnvState, AGENT_CONTAINER};

pub const NO_MATCH_OBSERVATION: &str = "no known action can match that input.";

/// One step's full feedback record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub action: Action,
    /// Direct feedback on the action.
    pub observation: String,
    /// Rendering of the room after the step.
    pub env_text: String,
    /// Rendering of the inventory after the step.
    pub inventory_text: String,
    /// Room the agent is in after the step.
    pub room: String,
    /// Cumulative score after the step.
    pub score: i32,
    /// Score delta produced by this step.
    pub reward: i32,
    pub valid: bool,
}

/// An ordered step log plus the task metadata it was produced under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub family: String,
    pub variation_id: String,
    pub description: String,
    pub transitions: Vec<Transition>,
}

impl Trajectory {
    pub fn new(variation: &TaskVariation) -> Self {
        Self {
            family: variation.family.clone(),
            variation_id: variation.id.clone(),
            description: variation.description.clone(),
            transitions: Vec::new(),
        }
    }

    /// Actions executed after the implicit initial look.
    pub fn action_count(&self) -> usize {
        self.transitions.len().saturating_sub(1)
    }

    pub fn final_score(&self) -> i32 {
        self.transitions.last().map(|t| t.score).unwrap_or(0)
    }

    /// Score at the last step where it was still non-negative.
    pub fn last_nonnegative_score(&self) -> i32 {
        self.transitions
            .iter()
            .rev()
            .map(|t| t.score)
            .find(|s| *s >= 0)
            .unwrap_or(0)
    }
}

/// World + variation bundle with the simulator entry points.
#[derive(Debug, Clone, Copy)]
pub struct Engine<'a> {
    pub world: &'a WorldSpec,
    pub variation: &'a TaskVariation,
}

impl<'a> Engine<'a> {
    pub fn new(world: &'a WorldSpec, variation: &'a TaskVariation) -> Self {
        Self { world, variation }
    }

    /// Build the t=0 state (overrides and exceptions applied) and perform
    /// the implicit `look around`, which does not consume a step.
    pub fn reset(&self) -> Result<(EnvState, Transition), WorldError> {
        let state = initial_state(self.world, self.variation)?;
        let look = self.world.grammar.make_action("look", &[]).map_err(|_| {
            WorldError::Schema {
                field: "templates".to_string(),
                message: "world declares no `look` template".to_string(),
            }
        })?;
        let env = render_environment(self.world, &state);
        let transition = Transition {
            action: look,
            observation: env.clone(),
            env_text: env,
            inventory_text: render_inventory(self.world, &state),
            room: state.agent_room.clone(),
            score: state.score,
            reward: 0,
            valid: true,
        };
        Ok((state, transition))
    }

    pub fn step(&self, state: &EnvState, action: &Action) -> (EnvState, Transition) {
        step(self.world, self.variation, state, action)
    }

    pub fn valid_actions(&self, state: &EnvState) -> Vec<Action> {
        valid_actions(self.world, state)
    }

    pub fn render_environment(&self, state: &EnvState) -> String {
        render_environment(self.world, state)
    }
}

/// Build the t=0 state: prototypes placed, then overrides applied in order.
pub fn initial_state(
    world: &WorldSpec,
    variation: &TaskVariation,
) -> Result<EnvState, WorldError> {
    validate_variation(world, variation)?;
    let mut state = EnvState {
        time: 0,
        agent_room: world.start_room.clone(),
        containment: Default::default(),
        object_states: Default::default(),
        temperatures: Default::default(),
        inventory: Vec::new(),
        score: 0,
        achieved_milestones: Default::default(),
        violated: false,
    };
    for proto in &world.objects {
        if let Some(container) = &proto.container {
            state
                .containment
                .insert(proto.name.clone(), container.clone());
            state
                .object_states
                .insert(proto.name.clone(), proto.states.iter().cloned().collect());
            state.temperatures.insert(proto.name.clone(), proto.temperature);
            if container == AGENT_CONTAINER {
                state.inventory.push(proto.name.clone());
            }
        }
    }
    for o in &variation.overrides {
        if let Some(container) = &o.container {
            if !state.exists(&o.object) {
                // Placing a latent prototype.
                let proto = world.proto(&o.object).expect("validated");
                state
                    .object_states
                    .insert(o.object.clone(), proto.states.iter().cloned().collect());
                state.temperatures.insert(o.object.clone(), proto.temperature);
            }
            reparent(&mut state, &o.object, container);
        } else if !state.exists(&o.object) {
            return Err(WorldError::VariationMismatch {
                variation: variation.id.clone(),
                message: format!("override adjusts `{}`, which is not placed", o.object),
            });
        }
        if let Some(states) = &o.states {
            state
                .object_states
                .insert(o.object.clone(), states.iter().cloned().collect());
        }
        for atom in &o.add_states {
            state.add_state(&o.object, atom);
        }
        if let Some(temp) = o.temperature {
            state.temperatures.insert(o.object.clone(), temp);
        }
    }
    Ok(state)
}

// ---------------------------------------------------------------------------
// Stepping
// ---------------------------------------------------------------------------

pub fn step(
    world: &WorldSpec,
    variation: &TaskVariation,
    state: &EnvState,
    action: &Action,
) -> (EnvState, Transition) {
    match prepare(world, state, action) {
        Err(message) => {
            let next = state.clone();
            let transition = Transition {
                action: action.clone(),
                observation: message,
                env_text: render_environment(world, &next),
                inventory_text: render_inventory(world, &next),
                room: next.agent_room.clone(),
                score: next.score,
                reward: 0,
                valid: false,
            };
            (next, transition)
        }
        Ok(args) => {
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            let canonical = world
                .grammar
                .make_action(&action.template_id, &refs)
                .expect("prepared action is grammatical");
            let mut next = state.clone();
            next.time += 1;
            let observation = apply_effects(world, &mut next, &action.template_id, &args);
            heating_tick(world, &mut next);
            let reward = fire_milestones(variation, &mut next);
            let transition = Transition {
                action: canonical,
                observation,
                env_text: render_environment(world, &next),
                inventory_text: render_inventory(world, &next),
                room: next.agent_room.clone(),
                score: next.score,
                reward,
                valid: true,
            };
            (next, transition)
        }
    }
}

/// Resolve argument references and check applicability. The error holds the
/// exception-style observation for the invalid transition.
fn prepare(world: &WorldSpec, state: &EnvState, action: &Action) -> Result<Vec<String>, String> {
    let template = world
        .grammar
        .by_id(&action.template_id)
        .ok_or_else(|| NO_MATCH_OBSERVATION.to_string())?;
    if action.args.len() != template.arity() {
        return Err(NO_MATCH_OBSERVATION.to_string());
    }
    let mut args = Vec::with_capacity(action.args.len());
    for (kind, raw) in template.slots.clone().iter().zip(&action.args) {
        let resolved = match kind {
            SlotKind::Room => {
                if world.is_room(raw) {
                    raw.clone()
                } else {
                    return Err(NO_MATCH_OBSERVATION.to_string());
                }
            }
            SlotKind::Object => resolve_object(state, raw).ok_or(NO_MATCH_OBSERVATION)?,
        };
        args.push(resolved);
    }
    let visible = state.visible_objects(world);
    check_applicability(world, state, &template.id, &args, &visible)?;
    Ok(args)
}

/// Resolve an object reference: an exact name, or `NAME in CONTAINER`.
fn resolve_object(state: &EnvState, reference: &str) -> Option<String> {
    if state.exists(reference) {
        return Some(reference.to_string());
    }
    let (name, container) = reference.split_once(" in ")?;
    if state.containment.get(name).map(String::as_str) == Some(container) {
        Some(name.to_string())
    } else {
        None
    }
}

fn check_applicability(
    world: &WorldSpec,
    state: &EnvState,
    template_id: &str,
    args: &[String],
    visible: &std::collections::BTreeSet<String>,
) -> Result<(), String> {
    let see = |name: &str| -> Result<(), String> {
        if visible.contains(name) {
            Ok(())
        } else {
            Err(format!("the {name} cannot be found here."))
        }
    };
    let proto = |name: &str| world.proto(name).expect("resolved object has a prototype");

    match template_id {
        "look" | "wait" => Ok(()),
        "teleport" => {
            if args[0] == state.agent_room {
                Err(format!(
                    "you cannot teleport to the {}; you are already there.",
                    args[0]
                ))
            } else {
                Ok(())
            }
        }
        "pick" => {
            let obj = &args[0];
            see(obj)?;
            if !proto(obj).has(Property::Portable) {
                return Err(format!("the {obj} cannot be picked up."));
            }
            if state.in_inventory(obj) {
                return Err(format!(
                    "the {obj} cannot be picked up; it is already in your inventory."
                ));
            }
            Ok(())
        }
        "open" => {
            let obj = &args[0];
            see(obj)?;
            if !proto(obj).has(Property::Openable) {
                return Err(format!("the {obj} cannot be opened."));
            }
            if state.has_state(obj, "open") {
                return Err(format!("the {obj} cannot be opened; it is already open."));
            }
            Ok(())
        }
        "close" => {
            let obj = &args[0];
            see(obj)?;
            if !proto(obj).has(Property::Openable) {
                return Err(format!("the {obj} cannot be closed."));
            }
            if !state.has_state(obj, "open") {
                return Err(format!("the {obj} cannot be closed; it is already closed."));
            }
            Ok(())
        }
        "activate" => {
            let obj = &args[0];
            see(obj)?;
            if !proto(obj).has(Property::Device) {
                return Err(format!("the {obj} cannot be activated."));
            }
            if state.has_state(obj, "broken") {
                return Err(format!("the {obj} cannot be activated; it is broken."));
            }
            if state.has_state(obj, "activated") {
                return Err(format!(
                    "the {obj} cannot be activated; it is already activated."
                ));
            }
            Ok(())
        }
        "deactivate" => {
            let obj = &args[0];
            see(obj)?;
            if !proto(obj).has(Property::Device) {
                return Err(format!("the {obj} cannot be deactivated."));
            }
            if !state.has_state(obj, "activated") {
                return Err(format!(
                    "the {obj} cannot be deactivated; it is not activated."
                ));
            }
            Ok(())
        }
        "examine" | "focus" => see(&args[0]),
        "move" => {
            let (obj, dest) = (&args[0], &args[1]);
            see(obj)?;
            if !proto(obj).has(Property::Portable) {
                return Err(format!("the {obj} cannot be moved."));
            }
            see(dest)?;
            let d = proto(dest);
            if !d.has(Property::Container) && !d.has(Property::Surface) {
                return Err(format!("things cannot be placed on the {dest}."));
            }
            if d.has(Property::Openable) && !state.has_state(dest, "open") {
                return Err(format!("the {dest} cannot hold anything; it is closed."));
            }
            if obj == dest || state.is_ancestor(obj, dest) {
                return Err(format!("the {obj} cannot be placed into the {dest}."));
            }
            Ok(())
        }
        "pour" => {
            let (obj, dest) = (&args[0], &args[1]);
            see(obj)?;
            if !proto(obj).has(Property::Pourable) {
                return Err(format!("the {obj} cannot be poured."));
            }
            see(dest)?;
            if !proto(dest).has(Property::Container) {
                return Err(format!("the {obj} cannot be poured into the {dest}."));
            }
            if proto(dest).has(Property::Openable) && !state.has_state(dest, "open") {
                return Err(format!("the {dest} cannot hold anything; it is closed."));
            }
            if state.containment.get(obj) == Some(dest) {
                return Err(format!(
                    "the {obj} cannot be poured; it is already in the {dest}."
                ));
            }
            if obj == dest || state.is_ancestor(obj, dest) {
                return Err(format!("the {obj} cannot be poured into the {dest}."));
            }
            Ok(())
        }
        "use" => {
            let (tool, target) = (&args[0], &args[1]);
            if !state.in_inventory(tool) {
                return Err(format!(
                    "the {tool} cannot be used; it is not in your inventory."
                ));
            }
            if !proto(tool).has(Property::Measuring) {
                return Err(format!("the {tool} cannot be used that way."));
            }
            see(target)
        }
        "mix" => {
            let cup = &args[0];
            see(cup)?;
            if !proto(cup).has(Property::Container) {
                return Err(format!("the contents of the {cup} cannot be mixed."));
            }
            if proto(cup).has(Property::Openable) && !state.has_state(cup, "open") {
                return Err(format!("the {cup} cannot hold anything; it is closed."));
            }
            let contents: Vec<String> = state.contents(cup).iter().map(|s| s.to_string()).collect();
            if contents.len() < 2
                || contents.iter().any(|c| !proto(c).has(Property::Pourable))
            {
                return Err(format!("the contents of the {cup} cannot be mixed."));
            }
            if find_mixture(world, &contents).is_none() {
                return Err(format!(
                    "the contents of the {cup} cannot be mixed into anything."
                ));
            }
            Ok(())
        }
        other => Err(format!("the action {other} cannot be performed.")),
    }
}

fn find_mixture<'w>(world: &'w WorldSpec, contents: &[String]) -> Option<&'w super::spec::Mixture> {
    world.mixtures.iter().find(|m| {
        m.inputs.len() == contents.len()
            && m.inputs.iter().all(|i| contents.contains(i))
    })
}

fn reparent(state: &mut EnvState, object: &str, dest: &str) {
    if state.in_inventory(object) {
        state.inventory.retain(|o| o != object);
    }
    state.containment.insert(object.to_string(), dest.to_string());
    if dest == AGENT_CONTAINER {
        state.inventory.push(object.to_string());
    }
}

fn apply_effects(
    world: &WorldSpec,
    state: &mut EnvState,
    template_id: &str,
    args: &[String],
) -> String {
    match template_id {
        "look" => render_environment(world, state),
        "wait" => "time passes.".to_string(),
        "teleport" => {
            state.agent_room = args[0].clone();
            format!("you teleport to the {}.", args[0])
        }
        "pick" => {
            reparent(state, &args[0], AGENT_CONTAINER);
            format!("you move the {} to the inventory.", args[0])
        }
        "open" => {
            state.add_state(&args[0], "open");
            format!("the {} is now open.", args[0])
        }
        "close" => {
            state.remove_state(&args[0], "open");
            format!("the {} is now closed.", args[0])
        }
        "activate" => {
            state.add_state(&args[0], "activated");
            format!("the {} is now activated.", args[0])
        }
        "deactivate" => {
            state.remove_state(&args[0], "activated");
            format!("the {} is now deactivated.", args[0])
        }
        "examine" => describe_object(world, state, &args[0]),
        "move" => {
            let (obj, dest) = (&args[0], &args[1]);
            reparent(state, obj, dest);
            let mut obs = format!("you move the {obj} to the {dest}.");
            if state.has_state(dest, "broken") {
                obs.push_str(&format!(" the {dest} is broken and cannot be used."));
            }
            obs
        }
        "pour" => {
            reparent(state, &args[0], &args[1]);
            format!("you pour the {} into the {}.", args[0], args[1])
        }
        "use" => {
            let target = &args[1];
            state.add_state(target, "measured");
            let temp = state.temperatures.get(target).copied().unwrap_or(0);
            format!(
                "the {} measures the {target}. the temperature is {temp}F.",
                args[0]
            )
        }
        "focus" => {
            state.add_state(&args[0], "focused");
            format!("you focus on the {}.", args[0])
        }
        "mix" => {
            let cup = &args[0];
            let contents: Vec<String> =
                state.contents(cup).iter().map(|s| s.to_string()).collect();
            let mixture = find_mixture(world, &contents)
                .expect("applicability checked")
                .clone();
            for input in &mixture.inputs {
                state.containment.remove(input);
                state.object_states.remove(input);
                state.temperatures.remove(input);
                state.inventory.retain(|o| o != input);
            }
            let proto = world.proto(&mixture.output).expect("validated output");
            state
                .containment
                .insert(mixture.output.clone(), cup.clone());
            state
                .object_states
                .insert(mixture.output.clone(), proto.states.iter().cloned().collect());
            state
                .temperatures
                .insert(mixture.output.clone(), proto.temperature);
            format!(
                "you mix the contents of the {cup}. the {} mix to form {}.",
                mixture.inputs.join(" and the "),
                mixture.output
            )
        }
        _ => unreachable!("applicability rejects unknown templates"),
    }
}

/// Active heat sources warm everything resting on or inside them; objects
/// past their boil point turn to gas.
fn heating_tick(world: &WorldSpec, state: &mut EnvState) {
    let sources: Vec<(String, i32)> = world
        .objects
        .iter()
        .filter(|p| p.heat_output > 0 && state.has_state(&p.name, "activated"))
        .map(|p| (p.name.clone(), p.heat_output))
        .collect();
    for (source, output) in sources {
        let heated: Vec<String> = state
            .containment
            .keys()
            .filter(|o| state.is_ancestor(&source, o))
            .cloned()
            .collect();
        for obj in heated {
            *state.temperatures.entry(obj).or_insert(0) += output;
        }
    }
    let boiled: Vec<String> = state
        .containment
        .keys()
        .filter(|o| {
            world
                .proto(o)
                .and_then(|p| p.boil_point)
                .map(|bp| state.temperatures.get(*o).copied().unwrap_or(0) >= bp)
                .unwrap_or(false)
                && !state.has_state(o, "gas")
        })
        .cloned()
        .collect();
    for obj in boiled {
        state.add_state(&obj, "gas");
    }
}

pub fn eval_predicate(state: &EnvState, predicate: &Predicate) -> bool {
    match predicate {
        Predicate::At([obj, container]) => {
            state.containment.get(obj) == Some(container)
        }
        Predicate::State([obj, atom]) => state.has_state(obj, atom),
        Predicate::InInventory(obj) => state.in_inventory(obj),
        Predicate::Exists(obj) => state.exists(obj),
        Predicate::AgentIn(room) => &state.agent_room == room,
        Predicate::Any(ps) => ps.iter().any(|p| eval_predicate(state, p)),
        Predicate::All(ps) => ps.iter().all(|p| eval_predicate(state, p)),
    }
}

/// Fire newly satisfied milestones (each at most once), then violations.
/// Returns the summed score delta.
fn fire_milestones(variation: &TaskVariation, state: &mut EnvState) -> i32 {
    let mut reward = 0;
    for milestone in &variation.milestones {
        if !state.achieved_milestones.contains(&milestone.name)
            && eval_predicate(state, &milestone.when)
        {
            state.achieved_milestones.insert(milestone.name.clone());
            state.score += milestone.points;
            reward += milestone.points;
        }
    }
    for violation in &variation.violations {
        if !state.achieved_milestones.contains(&violation.name)
            && eval_predicate(state, &violation.when)
        {
            state.achieved_milestones.insert(violation.name.clone());
            state.score += violation.points;
            reward += violation.points;
            state.violated = true;
        }
    }
    reward
}

// ---------------------------------------------------------------------------
// Valid-action enumeration
// ---------------------------------------------------------------------------

/// Exactly the set of actions that would succeed in `state`, sorted by
/// template declaration order and then argument order.
pub fn valid_actions(world: &WorldSpec, state: &EnvState) -> Vec<Action> {
    let visible_set = state.visible_objects(world);
    let visible: Vec<String> = visible_set.iter().cloned().collect();
    let rooms: Vec<String> = world.rooms.iter().map(|r| r.name.clone()).collect();
    let mut out = Vec::new();
    for template in world.grammar.templates() {
        let pools: Vec<&[String]> = template
            .slots
            .iter()
            .map(|kind| match kind {
                SlotKind::Room => rooms.as_slice(),
                SlotKind::Object => visible.as_slice(),
            })
            .collect();
        let mut tuples: Vec<Vec<String>> = vec![Vec::new()];
        for pool in pools {
            tuples = tuples
                .into_iter()
                .flat_map(|prefix| {
                    pool.iter().map(move |arg| {
                        let mut next = prefix.clone();
                        next.push(arg.clone());
                        next
                    })
                })
                .collect();
        }
        for tuple in tuples {
            if check_applicability(world, state, &template.id, &tuple, &visible_set).is_ok() {
                let refs: Vec<&str> = tuple.iter().map(String::as_str).collect();
                out.push(
                    world
                        .grammar
                        .make_action(&template.id, &refs)
                        .expect("enumerated action is grammatical"),
                );
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// Deterministic description of the agent's room. Visibility honors
/// container open/closed states; contained objects are listed recursively
/// under their container.
pub fn render_environment(world: &WorldSpec, state: &EnvState) -> String {
    let items: Vec<String> = state
        .contents(&state.agent_room)
        .iter()
        .map(|o| render_item(world, state, o))
        .collect();
    let listing = if items.is_empty() {
        "there is nothing here.".to_string()
    } else {
        format!("you see: {}.", items.join("; "))
    };
    let exits = world
        .room(&state.agent_room)
        .map(|r| r.connections.join(", "))
        .unwrap_or_default();
    if exits.is_empty() {
        format!("this room is the {}. {listing}", state.agent_room)
    } else {
        format!(
            "this room is the {}. {listing} exits lead to: {exits}.",
            state.agent_room
        )
    }
}

pub fn render_inventory(world: &WorldSpec, state: &EnvState) -> String {
    if state.inventory.is_empty() {
        "your inventory is empty.".to_string()
    } else {
        let items: Vec<String> = state
            .inventory
            .iter()
            .map(|o| render_item(world, state, o))
            .collect();
        format!("in your inventory: {}.", items.join("; "))
    }
}

fn render_item(world: &WorldSpec, state: &EnvState, object: &str) -> String {
    let mut tags: Vec<String> = Vec::new();
    if let Some(proto) = world.proto(object) {
        if proto.has(Property::Openable) {
            tags.push(if state.has_state(object, "open") {
                "open".to_string()
            } else {
                "closed".to_string()
            });
        }
        if proto.has(Property::Device) {
            tags.push(if state.has_state(object, "activated") {
                "activated".to_string()
            } else {
                "off".to_string()
            });
        }
    }
    for atom in ["broken", "gas", "focused", "measured"] {
        if state.has_state(object, atom) {
            tags.push(atom.to_string());
        }
    }
    tags.sort();
    let contents: Vec<String> = if state.contents_visible(world, object) {
        state
            .contents(object)
            .iter()
            .map(|o| render_item(world, state, o))
            .collect()
    } else {
        Vec::new()
    };
    if state.contents_visible(world, object) && contents.is_empty() {
        tags.push("empty".to_string());
        tags.sort();
    }
    let mut text = format!("a {object}");
    if !tags.is_empty() {
        text.push_str(&format!(" ({})", tags.join(", ")));
    }
    if !contents.is_empty() {
        text.push_str(&format!(" containing {}", contents.join(" and ")));
    }
    text
}

fn describe_object(world: &WorldSpec, state: &EnvState, object: &str) -> String {
    let mut text = format!("{}.", render_item(world, state, object));
    if state.has_state(object, "broken") {
        text.push_str(" it is broken and cannot be used.");
    }
    text
}
