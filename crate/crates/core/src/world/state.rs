//! Environment state: containment, object states, inventory, score.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::spec::{Property, WorldSpec};

/// Container name used for objects the agent carries.
pub const AGENT_CONTAINER: &str = "agent";

/// The full simulator state. A value type: `step` returns a new state and
/// never mutates its input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvState {
    /// Step index `t`, counting valid actions since reset.
    pub time: u32,
    pub agent_room: String,
    /// object -> container (a room, another object, or [`AGENT_CONTAINER`]).
    /// Objects absent from this map do not exist.
    pub containment: BTreeMap<String, String>,
    /// object -> state atoms (`open`, `activated`, `broken`, `gas`, ...).
    pub object_states: BTreeMap<String, BTreeSet<String>>,
    /// object -> degrees Fahrenheit.
    pub temperatures: BTreeMap<String, i32>,
    /// Pickup-ordered inventory; every entry has container == agent.
    pub inventory: Vec<String>,
    pub score: i32,
    /// Names of milestones (and violations) that already fired.
    pub achieved_milestones: BTreeSet<String>,
    /// Set when a violation fired; the episode is over.
    pub violated: bool,
}

impl EnvState {
    pub fn exists(&self, object: &str) -> bool {
        self.containment.contains_key(object)
    }

    pub fn has_state(&self, object: &str, atom: &str) -> bool {
        self.object_states
            .get(object)
            .map(|s| s.contains(atom))
            .unwrap_or(false)
    }

    pub fn add_state(&mut self, object: &str, atom: &str) {
        self.object_states
            .entry(object.to_string())
            .or_default()
            .insert(atom.to_string());
    }

    pub fn remove_state(&mut self, object: &str, atom: &str) {
        if let Some(states) = self.object_states.get_mut(object) {
            states.remove(atom);
        }
    }

    pub fn in_inventory(&self, object: &str) -> bool {
        self.containment.get(object).map(String::as_str) == Some(AGENT_CONTAINER)
    }

    /// Objects directly inside `container`, in name order.
    pub fn contents(&self, container: &str) -> Vec<&str> {
        self.containment
            .iter()
            .filter(|(_, c)| c.as_str() == container)
            .map(|(o, _)| o.as_str())
            .collect()
    }

    /// Whether `ancestor` appears on the containment path above `object`.
    pub fn is_ancestor(&self, ancestor: &str, object: &str) -> bool {
        let mut current = self.containment.get(object);
        let mut hops = 0;
        while let Some(c) = current {
            if c == ancestor {
                return true;
            }
            hops += 1;
            if hops > self.containment.len() {
                return false;
            }
            current = self.containment.get(c);
        }
        false
    }

    /// Whether the contents of `container` can be seen: things on a surface
    /// are in plain sight, containers that are not openable are always open
    /// to view, openable ones require `open`.
    pub fn contents_visible(&self, world: &WorldSpec, container: &str) -> bool {
        match world.proto(container) {
            Some(proto) => {
                proto.has(Property::Surface)
                    || (proto.has(Property::Container)
                        && (!proto.has(Property::Openable) || self.has_state(container, "open")))
            }
            None => false,
        }
    }

    /// Every object the agent can currently see or touch: objects in the
    /// current room (recursing through open containers) plus the inventory
    /// and its open containers.
    pub fn visible_objects(&self, world: &WorldSpec) -> BTreeSet<String> {
        let mut visible = BTreeSet::new();
        let mut stack: Vec<String> = self
            .contents(&self.agent_room)
            .into_iter()
            .map(str::to_string)
            .collect();
        stack.extend(self.inventory.iter().cloned());
        while let Some(name) = stack.pop() {
            if !visible.insert(name.clone()) {
                continue;
            }
            if self.contents_visible(world, &name) {
                stack.extend(self.contents(&name).into_iter().map(str::to_string));
            }
        }
        visible
    }
}
