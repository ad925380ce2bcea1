//! Declarative world and task specs.
//!
//! Worlds and task families are plain structured-text (TOML) documents with
//! a versioned `schema` field. A world declares rooms, object prototypes,
//! mixing rules, and the action grammar. A task family declares a
//! description template, parameter combos, initial-state overrides,
//! milestones, optional violations, and an optional exception; concrete
//! [`TaskVariation`]s are generated from the family by seed-driven
//! substitution.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::{ActionGrammar, ActionTemplate, SlotKind};

pub const SCHEMA_VERSION: u32 = 1;

/// Template ids the engine knows how to execute.
pub const KNOWN_TEMPLATE_IDS: &[&str] = &[
    "look",
    "teleport",
    "pick",
    "open",
    "close",
    "activate",
    "deactivate",
    "examine",
    "move",
    "pour",
    "use",
    "focus",
    "wait",
    "mix",
];

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("spec parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("schema violation in `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("variation `{variation}` does not match world: {message}")]
    VariationMismatch { variation: String, message: String },
}

fn schema_err(field: &str, message: impl Into<String>) -> WorldError {
    WorldError::Schema {
        field: field.to_string(),
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// World spec
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomDef {
    pub name: String,
    pub connections: Vec<String>,
}

/// Boolean capabilities an object prototype may carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    /// Can be picked up and moved.
    Portable,
    /// Can hold other objects.
    Container,
    /// Has an open/closed state; contents are hidden while closed.
    Openable,
    /// Can be activated and deactivated.
    Device,
    /// Things can be placed on it (a valid `move` destination).
    Surface,
    /// Can be poured into a container.
    Pourable,
    /// Reports the temperature of whatever it is used on.
    Measuring,
    /// A living thing (classification tasks).
    Living,
}

impl Property {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "portable" => Some(Self::Portable),
            "container" => Some(Self::Container),
            "openable" => Some(Self::Openable),
            "device" => Some(Self::Device),
            "surface" => Some(Self::Surface),
            "pourable" => Some(Self::Pourable),
            "measuring" => Some(Self::Measuring),
            "living" => Some(Self::Living),
            _ => None,
        }
    }
}

pub const DEFAULT_TEMPERATURE: i32 = 70;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectProto {
    pub name: String,
    /// Initial container (a room or another object). `None` means the
    /// object is latent: it does not exist at reset and can only be created
    /// later, e.g. as a mixture output.
    pub container: Option<String>,
    pub properties: Vec<Property>,
    /// Initial state atoms, e.g. `open`, `broken`.
    pub states: Vec<String>,
    pub temperature: i32,
    /// Degrees added per step to everything resting on this object while it
    /// is activated. Zero means not a heat source.
    pub heat_output: i32,
    /// Temperature at which the object turns to gas, if any.
    pub boil_point: Option<i32>,
}

impl ObjectProto {
    pub fn has(&self, p: Property) -> bool {
        self.properties.contains(&p)
    }
}

/// A mixing rule: when a container holds exactly `inputs`, `mix` replaces
/// them with `output`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mixture {
    pub inputs: Vec<String>,
    pub output: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorldSpec {
    pub schema: u32,
    pub name: String,
    pub start_room: String,
    pub rooms: Vec<RoomDef>,
    pub objects: Vec<ObjectProto>,
    pub mixtures: Vec<Mixture>,
    pub grammar: ActionGrammar,
}

impl WorldSpec {
    pub fn room(&self, name: &str) -> Option<&RoomDef> {
        self.rooms.iter().find(|r| r.name == name)
    }

    pub fn proto(&self, name: &str) -> Option<&ObjectProto> {
        self.objects.iter().find(|o| o.name == name)
    }

    pub fn is_room(&self, name: &str) -> bool {
        self.room(name).is_some()
    }
}

// ---------------------------------------------------------------------------
// Raw TOML forms
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
struct RawWorld {
    schema: u32,
    name: String,
    start_room: String,
    #[serde(default)]
    rooms: Vec<RoomDef>,
    #[serde(default)]
    objects: Vec<RawObject>,
    #[serde(default)]
    mixtures: Vec<Mixture>,
    #[serde(default)]
    templates: Vec<RawTemplate>,
}

#[derive(Debug, Deserialize)]
struct RawObject {
    name: String,
    #[serde(default)]
    container: Option<String>,
    #[serde(default)]
    properties: Vec<String>,
    #[serde(default)]
    states: Vec<String>,
    #[serde(default)]
    temperature: Option<i32>,
    #[serde(default)]
    heat_output: i32,
    #[serde(default)]
    boil_point: Option<i32>,
}

#[derive(Debug, Deserialize)]
struct RawTemplate {
    id: String,
    formal: String,
    pattern: String,
    #[serde(default)]
    slots: Vec<String>,
    #[serde(default)]
    remark: String,
    #[serde(default)]
    example: String,
}

/// Parse and validate a world document.
pub fn load_world(document: &str) -> Result<WorldSpec, WorldError> {
    let raw: RawWorld = toml::from_str(document)?;
    if raw.schema != SCHEMA_VERSION {
        return Err(schema_err(
            "schema",
            format!("unsupported schema version {}", raw.schema),
        ));
    }
    if raw.rooms.is_empty() {
        return Err(schema_err("rooms", "at least one room is required"));
    }

    // Rooms: unique names, undirected connected graph.
    let mut room_names = BTreeSet::new();
    for room in &raw.rooms {
        if !room_names.insert(room.name.clone()) {
            return Err(schema_err("rooms", format!("duplicate room `{}`", room.name)));
        }
    }
    for room in &raw.rooms {
        for conn in &room.connections {
            if !room_names.contains(conn) {
                return Err(schema_err(
                    "rooms.connections",
                    format!("room `{}` connects to undeclared room `{}`", room.name, conn),
                ));
            }
            let back = raw.rooms.iter().find(|r| &r.name == conn).unwrap();
            if !back.connections.contains(&room.name) {
                return Err(schema_err(
                    "rooms.connections",
                    format!("connection `{}` -> `{}` is not undirected", room.name, conn),
                ));
            }
        }
    }
    if raw.rooms.len() > 1 {
        let mut seen = BTreeSet::new();
        let mut stack = vec![raw.rooms[0].name.clone()];
        while let Some(r) = stack.pop() {
            if !seen.insert(r.clone()) {
                continue;
            }
            let def = raw.rooms.iter().find(|d| d.name == r).unwrap();
            stack.extend(def.connections.iter().cloned());
        }
        if seen.len() != raw.rooms.len() {
            return Err(schema_err("rooms", "room connection graph is not connected"));
        }
    }
    if !room_names.contains(&raw.start_room) {
        return Err(schema_err(
            "start_room",
            format!("start room `{}` is not declared", raw.start_room),
        ));
    }

    // Objects: unique names disjoint from rooms, known properties, placed
    // containers must exist.
    let mut object_names = BTreeSet::new();
    let mut objects = Vec::with_capacity(raw.objects.len());
    for obj in &raw.objects {
        if room_names.contains(&obj.name) {
            return Err(schema_err(
                "objects.name",
                format!("object `{}` shares a name with a room", obj.name),
            ));
        }
        if !object_names.insert(obj.name.clone()) {
            return Err(schema_err(
                "objects.name",
                format!("duplicate object `{}`", obj.name),
            ));
        }
        let mut properties = Vec::new();
        for p in &obj.properties {
            let parsed = Property::parse(p).ok_or_else(|| {
                schema_err(
                    "objects.properties",
                    format!("object `{}` has unknown property `{}`", obj.name, p),
                )
            })?;
            properties.push(parsed);
        }
        objects.push(ObjectProto {
            name: obj.name.clone(),
            container: obj.container.clone(),
            properties,
            states: obj.states.clone(),
            temperature: obj.temperature.unwrap_or(DEFAULT_TEMPERATURE),
            heat_output: obj.heat_output,
            boil_point: obj.boil_point,
        });
    }
    for obj in &objects {
        if let Some(container) = &obj.container {
            if !room_names.contains(container) && !object_names.contains(container) {
                return Err(schema_err(
                    "objects.container",
                    format!(
                        "object `{}` starts in `{}`, which is neither a room nor an object",
                        obj.name, container
                    ),
                ));
            }
        }
    }
    // Initial containment must be acyclic.
    for obj in &objects {
        let mut current = obj.container.clone();
        let mut hops = 0;
        while let Some(c) = current {
            if c == obj.name {
                return Err(schema_err(
                    "objects.container",
                    format!("containment cycle through `{}`", obj.name),
                ));
            }
            hops += 1;
            if hops > objects.len() {
                return Err(schema_err("objects.container", "containment cycle detected"));
            }
            current = objects.iter().find(|o| o.name == c).and_then(|o| o.container.clone());
        }
    }

    for mixture in &raw.mixtures {
        for name in mixture.inputs.iter().chain(std::iter::once(&mixture.output)) {
            if !object_names.contains(name) {
                return Err(schema_err(
                    "mixtures",
                    format!("mixture references undeclared object `{}`", name),
                ));
            }
        }
        if mixture.inputs.len() < 2 {
            return Err(schema_err("mixtures.inputs", "a mixture needs at least two inputs"));
        }
    }

    // Templates.
    if raw.templates.is_empty() {
        return Err(schema_err("templates", "at least one action template is required"));
    }
    let mut ids = BTreeSet::new();
    let mut formals = BTreeSet::new();
    let mut templates = Vec::with_capacity(raw.templates.len());
    for t in &raw.templates {
        if !KNOWN_TEMPLATE_IDS.contains(&t.id.as_str()) {
            return Err(schema_err(
                "templates.id",
                format!("template id `{}` has no engine semantics", t.id),
            ));
        }
        if !ids.insert(t.id.clone()) {
            return Err(schema_err("templates.id", format!("duplicate template id `{}`", t.id)));
        }
        if !formals.insert(t.formal.clone()) {
            return Err(schema_err(
                "templates.formal",
                format!("duplicate formal name `{}`", t.formal),
            ));
        }
        let mut slots = Vec::new();
        for s in &t.slots {
            let kind = match s.as_str() {
                "object" => SlotKind::Object,
                "room" => SlotKind::Room,
                other => {
                    return Err(schema_err(
                        "templates.slots",
                        format!("template `{}` has unknown slot kind `{}`", t.id, other),
                    ))
                }
            };
            slots.push(kind);
        }
        let template = ActionTemplate {
            id: t.id.clone(),
            formal: t.formal.clone(),
            pattern: t.pattern.clone(),
            slots,
            remark: t.remark.clone(),
            example: t.example.clone(),
        };
        if template.pattern_slot_count() != template.arity() {
            return Err(schema_err(
                "templates.pattern",
                format!(
                    "template `{}` declares {} slot(s) but its pattern has {}",
                    t.id,
                    template.arity(),
                    template.pattern_slot_count()
                ),
            ));
        }
        templates.push(template);
    }

    Ok(WorldSpec {
        schema: raw.schema,
        name: raw.name,
        start_room: raw.start_room,
        rooms: raw.rooms,
        objects,
        mixtures: raw.mixtures,
        grammar: ActionGrammar::new(templates),
    })
}

// ---------------------------------------------------------------------------
// Task families and variations
// ---------------------------------------------------------------------------

/// A state predicate over [`crate::world::EnvState`], used by milestones
/// and violations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    /// Object sits directly in the given container (room or object).
    At([String; 2]),
    /// Object currently carries the given state atom.
    State([String; 2]),
    /// Object is in the agent's inventory.
    InInventory(String),
    /// Object exists in the world.
    Exists(String),
    /// Agent is in the given room.
    AgentIn(String),
    Any(Vec<Predicate>),
    All(Vec<Predicate>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Milestone {
    pub name: String,
    pub points: i32,
    pub when: Predicate,
}

/// A terminal violation: firing it adds (negative) points and ends the
/// episode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub name: String,
    pub points: i32,
    pub when: Predicate,
}

/// One initial-state override applied at reset, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateOverride {
    pub object: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub container: Option<String>,
    /// Replaces the object's state set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<String>>,
    /// Adds atoms to the object's state set.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub add_states: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExceptionKind {
    DisabledDevice,
    MissingObject,
}

/// An injected obstacle plus a description of the workaround path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExceptionSpec {
    pub kind: ExceptionKind,
    pub target: String,
    pub alternative: String,
}

/// A concrete, fully substituted task variation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskVariation {
    pub id: String,
    pub family: String,
    pub description: String,
    pub params: BTreeMap<String, String>,
    pub overrides: Vec<StateOverride>,
    pub milestones: Vec<Milestone>,
    pub violations: Vec<Violation>,
    pub exceptions: Vec<ExceptionSpec>,
    pub seed: u64,
}

impl TaskVariation {
    pub fn has_exception(&self) -> bool {
        !self.exceptions.is_empty()
    }
}

/// Raw override as written in a family file. `temperature` may be a plain
/// integer or a `{param}`-templated string.
#[derive(Debug, Clone, Deserialize)]
struct RawOverride {
    object: String,
    #[serde(default)]
    container: Option<String>,
    #[serde(default)]
    states: Option<Vec<String>>,
    #[serde(default)]
    add_states: Vec<String>,
    #[serde(default)]
    temperature: Option<toml::Value>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawException {
    kind: ExceptionKind,
    target: String,
    alternative: String,
    #[serde(default)]
    overrides: Vec<RawOverride>,
}

#[derive(Debug, Clone, Deserialize)]
struct RawFamily {
    schema: u32,
    family: String,
    description_template: String,
    #[serde(default)]
    base_seed: u64,
    variation_count: usize,
    #[serde(default)]
    exception_indices: Vec<usize>,
    #[serde(default)]
    combos: Vec<BTreeMap<String, String>>,
    #[serde(default)]
    overrides: Vec<RawOverride>,
    milestones: Vec<Milestone>,
    #[serde(default)]
    violations: Vec<Violation>,
    #[serde(default)]
    exception: Option<RawException>,
}

/// A task family: a template from which variations are generated.
#[derive(Debug, Clone)]
pub struct TaskFamily {
    raw: RawFamily,
}

impl TaskFamily {
    pub fn name(&self) -> &str {
        &self.raw.family
    }

    pub fn variation_count(&self) -> usize {
        self.raw.variation_count
    }

    /// Generate the concrete variation at `index`.
    ///
    /// The variation seed is `base_seed + index`; the seed selects the
    /// parameter combo and drives every substitution, so regeneration is
    /// fully deterministic.
    pub fn variation(&self, index: usize) -> Result<TaskVariation, WorldError> {
        if index >= self.raw.variation_count {
            return Err(schema_err(
                "variation",
                format!(
                    "family `{}` has {} variations, index {} is out of range",
                    self.raw.family, self.raw.variation_count, index
                ),
            ));
        }
        let seed = self.raw.base_seed + index as u64;
        let params = if self.raw.combos.is_empty() {
            BTreeMap::new()
        } else {
            self.raw.combos[(seed % self.raw.combos.len() as u64) as usize].clone()
        };
        let sub = |s: &str| substitute(s, &params);

        let mut overrides = Vec::with_capacity(self.raw.overrides.len());
        for o in &self.raw.overrides {
            overrides.push(substitute_override(&self.raw.family, o, &params)?);
        }
        let mut exceptions = Vec::new();
        if self.raw.exception_indices.contains(&index) {
            if let Some(exc) = &self.raw.exception {
                for o in &exc.overrides {
                    overrides.push(substitute_override(&self.raw.family, o, &params)?);
                }
                exceptions.push(ExceptionSpec {
                    kind: exc.kind,
                    target: sub(&exc.target),
                    alternative: sub(&exc.alternative),
                });
            }
        }

        let milestones: Vec<Milestone> = self
            .raw
            .milestones
            .iter()
            .map(|m| Milestone {
                name: sub(&m.name),
                points: m.points,
                when: substitute_predicate(&m.when, &params),
            })
            .collect();
        let violations: Vec<Violation> = self
            .raw
            .violations
            .iter()
            .map(|v| Violation {
                name: sub(&v.name),
                points: v.points,
                when: substitute_predicate(&v.when, &params),
            })
            .collect();

        let total: i32 = milestones.iter().map(|m| m.points).sum();
        if total != 100 || milestones.iter().any(|m| m.points <= 0) {
            return Err(schema_err(
                "milestones",
                format!(
                    "family `{}` milestones must be positive and sum to 100 (got {})",
                    self.raw.family, total
                ),
            ));
        }

        Ok(TaskVariation {
            id: format!("{}-{:02}", self.raw.family, index),
            family: self.raw.family.clone(),
            description: sub(&self.raw.description_template),
            params,
            overrides,
            milestones,
            violations,
            exceptions,
            seed,
        })
    }

    /// All variations of the family, in index order.
    pub fn variations(&self) -> Result<Vec<TaskVariation>, WorldError> {
        (0..self.raw.variation_count).map(|i| self.variation(i)).collect()
    }
}

/// Parse and validate a task-family document.
pub fn load_family(document: &str) -> Result<TaskFamily, WorldError> {
    let raw: RawFamily = toml::from_str(document)?;
    if raw.schema != SCHEMA_VERSION {
        return Err(schema_err(
            "schema",
            format!("unsupported schema version {}", raw.schema),
        ));
    }
    if raw.variation_count == 0 {
        return Err(schema_err("variation_count", "must be at least 1"));
    }
    if let Some(i) = raw.exception_indices.iter().find(|i| **i >= raw.variation_count) {
        return Err(schema_err(
            "exception_indices",
            format!("index {} is out of range", i),
        ));
    }
    if !raw.exception_indices.is_empty() && raw.exception.is_none() {
        return Err(schema_err(
            "exception",
            "exception_indices given but no [exception] block",
        ));
    }
    let family = TaskFamily { raw };
    // Force generation once so malformed milestone sums fail at load time.
    family.variations()?;
    Ok(family)
}

/// Check that a variation only references rooms and objects the world
/// declares. Called by `reset`.
pub fn validate_variation(world: &WorldSpec, variation: &TaskVariation) -> Result<(), WorldError> {
    let mismatch = |message: String| WorldError::VariationMismatch {
        variation: variation.id.clone(),
        message,
    };
    let known = |name: &str| world.is_room(name) || world.proto(name).is_some();
    for o in &variation.overrides {
        if world.proto(&o.object).is_none() {
            return Err(mismatch(format!("override targets unknown object `{}`", o.object)));
        }
        if let Some(c) = &o.container {
            if !known(c) {
                return Err(mismatch(format!("override moves `{}` into unknown `{}`", o.object, c)));
            }
        }
    }
    let mut predicates: Vec<&Predicate> = variation.milestones.iter().map(|m| &m.when).collect();
    predicates.extend(variation.violations.iter().map(|v| &v.when));
    let mut stack = predicates;
    while let Some(p) = stack.pop() {
        match p {
            Predicate::At([obj, cont]) => {
                if world.proto(obj).is_none() {
                    return Err(mismatch(format!("predicate references unknown object `{obj}`")));
                }
                if !known(cont) {
                    return Err(mismatch(format!("predicate references unknown container `{cont}`")));
                }
            }
            Predicate::State([obj, _]) | Predicate::InInventory(obj) | Predicate::Exists(obj) => {
                if world.proto(obj).is_none() {
                    return Err(mismatch(format!("predicate references unknown object `{obj}`")));
                }
            }
            Predicate::AgentIn(room) => {
                if !world.is_room(room) {
                    return Err(mismatch(format!("predicate references unknown room `{room}`")));
                }
            }
            Predicate::Any(ps) | Predicate::All(ps) => stack.extend(ps.iter()),
        }
    }
    Ok(())
}

fn substitute(text: &str, params: &BTreeMap<String, String>) -> String {
    let mut out = text.to_string();
    for (key, value) in params {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

fn substitute_override(
    family: &str,
    o: &RawOverride,
    params: &BTreeMap<String, String>,
) -> Result<StateOverride, WorldError> {
    let temperature = match &o.temperature {
        None => None,
        Some(toml::Value::Integer(i)) => Some(*i as i32),
        Some(toml::Value::String(s)) => {
            let substituted = substitute(s, params);
            Some(substituted.parse::<i32>().map_err(|_| {
                schema_err(
                    "overrides.temperature",
                    format!("family `{family}`: `{substituted}` is not an integer"),
                )
            })?)
        }
        Some(other) => {
            return Err(schema_err(
                "overrides.temperature",
                format!("family `{family}`: unsupported value {other}"),
            ))
        }
    };
    Ok(StateOverride {
        object: substitute(&o.object, params),
        container: o.container.as_ref().map(|c| substitute(c, params)),
        states: o.states.clone(),
        add_states: o.add_states.iter().map(|s| substitute(s, params)).collect(),
        temperature,
    })
}

fn substitute_predicate(p: &Predicate, params: &BTreeMap<String, String>) -> Predicate {
    match p {
        Predicate::At([a, b]) => Predicate::At([substitute(a, params), substitute(b, params)]),
        Predicate::State([a, b]) => Predicate::State([substitute(a, params), substitute(b, params)]),
        Predicate::InInventory(a) => Predicate::InInventory(substitute(a, params)),
        Predicate::Exists(a) => Predicate::Exists(substitute(a, params)),
        Predicate::AgentIn(a) => Predicate::AgentIn(substitute(a, params)),
        Predicate::Any(ps) => Predicate::Any(ps.iter().map(|q| substitute_predicate(q, params)).collect()),
        Predicate::All(ps) => Predicate::All(ps.iter().map(|q| substitute_predicate(q, params)).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema = 1
name = "one room"
start_room = "cell"

[[rooms]]
name = "cell"
connections = []

[[objects]]
name = "pebble"
container = "cell"
properties = ["portable"]

[[templates]]
id = "look"
formal = "LOOK"
pattern = "look around"
slots = []
remark = "look"
"#;

    #[test]
    fn minimal_world_loads() {
        let world = load_world(MINIMAL).unwrap();
        assert_eq!(world.rooms.len(), 1);
        assert_eq!(world.objects.len(), 1);
    }

    #[test]
    fn undeclared_connection_is_rejected() {
        let doc = MINIMAL.replace("connections = []", "connections = [\"attic\"]");
        let err = load_world(&doc).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("rooms.connections"), "got: {msg}");
        assert!(msg.contains("attic"), "got: {msg}");
    }

    #[test]
    fn unknown_property_is_rejected() {
        let doc = MINIMAL.replace("[\"portable\"]", "[\"haunted\"]");
        let err = load_world(&doc).unwrap_err();
        assert!(err.to_string().contains("haunted"));
    }

    #[test]
    fn pattern_slot_mismatch_is_rejected() {
        let doc = MINIMAL.replace("slots = []", "slots = [\"object\"]");
        let err = load_world(&doc).unwrap_err();
        assert!(err.to_string().contains("templates.pattern"));
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let doc = MINIMAL.replace("schema = 1", "schema = 9");
        assert!(load_world(&doc).is_err());
    }

    #[test]
    fn variation_generation_is_deterministic() {
        let family = crate::world::desk_families()[0].clone();
        let a = family.variation(3).unwrap();
        let b = family.variation(3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seed, family.variation(0).unwrap().seed + 3);
    }

    #[test]
    fn milestones_sum_to_100_for_all_bundled_variations() {
        for family in crate::world::desk_families() {
            for variation in family.variations().unwrap() {
                let total: i32 = variation.milestones.iter().map(|m| m.points).sum();
                assert_eq!(total, 100, "variation {}", variation.id);
            }
        }
    }
}
