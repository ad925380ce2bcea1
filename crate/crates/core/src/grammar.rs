//! Action grammar: templates, surface commands, and formal calls.
//!
//! Every action the engine accepts is an instance of a declared template.
//! A template owns three renderings of the same action:
//!
//! - the *surface* command the simulator speaks, e.g. `pour red paint into
//!   wood cup`;
//! - the *formal* call used when prompting a language model, e.g.
//!   `POUR(red paint, wood cup)`;
//! - the structured [`Action`] value `(template_id, args)`.
//!
//! The mapping is bidirectional and canonical: `formal -> surface -> formal`
//! is the identity for every cataloged template and argument tuple. Parsing
//! is whitespace-insensitive and tolerates a leading `the ` on arguments;
//! output is always the canonical lowercase form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// What a template slot binds to. Used by policies when re-binding
/// arguments to the current scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Object,
    Room,
}

/// One declared action template.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionTemplate {
    /// Stable lowercase identifier, e.g. `pour`. Selects the engine
    /// semantics for this template.
    pub id: String,
    /// Formal name used in grounding prompts, e.g. `POUR`.
    pub formal: String,
    /// Surface pattern with `{0}`, `{1}` argument slots, e.g.
    /// `pour {0} into {1}`.
    pub pattern: String,
    /// Slot kinds, one per argument.
    pub slots: Vec<SlotKind>,
    /// One-line remark shown in the grounding catalog.
    pub remark: String,
    /// Example call shown in the grounding catalog.
    #[serde(default)]
    pub example: String,
}

impl ActionTemplate {
    pub fn arity(&self) -> usize {
        self.slots.len()
    }

    /// Split the pattern into the literal pieces around the slots.
    /// `pour {0} into {1}` yields `["pour ", " into ", ""]`.
    fn literal_pieces(&self) -> Vec<&str> {
        let mut pieces = Vec::new();
        let mut rest = self.pattern.as_str();
        for i in 0..self.arity() {
            let slot = format!("{{{i}}}");
            match rest.find(&slot) {
                Some(pos) => {
                    pieces.push(&rest[..pos]);
                    rest = &rest[pos + slot.len()..];
                }
                None => break,
            }
        }
        pieces.push(rest);
        pieces
    }

    /// Number of `{i}` slots actually present in the pattern.
    pub fn pattern_slot_count(&self) -> usize {
        (0..9)
            .take_while(|i| self.pattern.contains(&format!("{{{i}}}")))
            .count()
    }
}

/// A concrete action: a template instance with bound arguments and its
/// canonical surface string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub template_id: String,
    pub args: Vec<String>,
    pub surface: String,
}

/// A formal call as emitted by the grounding stage, e.g. `POUR(x, y)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormalCall {
    pub name: String,
    pub args: Vec<String>,
}

impl std::fmt::Display for FormalCall {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}({})", self.name, self.args.join(", "))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GrammarError {
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("template `{name}` expects {expected} argument(s), got {got}")]
    WrongArity {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("no template matches surface `{0}`")]
    NoSurfaceMatch(String),
    #[error("malformed formal call `{0}`")]
    MalformedCall(String),
}

/// The full set of templates for a world, in declaration order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionGrammar {
    templates: Vec<ActionTemplate>,
}

impl ActionGrammar {
    pub fn new(templates: Vec<ActionTemplate>) -> Self {
        Self { templates }
    }

    pub fn templates(&self) -> &[ActionTemplate] {
        &self.templates
    }

    pub fn by_id(&self, id: &str) -> Option<&ActionTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }

    pub fn by_formal(&self, formal: &str) -> Option<&ActionTemplate> {
        self.templates.iter().find(|t| t.formal == formal)
    }

    /// Build an [`Action`] from a template id and arguments. Arguments are
    /// lowercased and whitespace-normalized.
    pub fn make_action(&self, id: &str, args: &[&str]) -> Result<Action, GrammarError> {
        let template = self
            .by_id(id)
            .ok_or_else(|| GrammarError::UnknownTemplate(id.to_string()))?;
        if args.len() != template.arity() {
            return Err(GrammarError::WrongArity {
                name: template.id.clone(),
                expected: template.arity(),
                got: args.len(),
            });
        }
        let args: Vec<String> = args.iter().map(|a| normalize_arg(a)).collect();
        let surface = render_surface(template, &args);
        Ok(Action {
            template_id: template.id.clone(),
            args,
            surface,
        })
    }

    /// Parse a surface command into an [`Action`].
    ///
    /// Templates are tried in declaration order. For each template the
    /// literal pieces of the pattern must appear in order; the first
    /// occurrence of each inner piece splits the arguments. Arguments are
    /// normalized (lowercase, collapsed whitespace, leading `the ` dropped),
    /// so the returned action carries the canonical surface, which may
    /// differ from the input text.
    pub fn parse_surface(&self, input: &str) -> Result<Action, GrammarError> {
        let text = normalize_arg(input);
        for template in &self.templates {
            if let Some(args) = match_pattern(template, &text) {
                let args: Vec<String> = args.iter().map(|a| normalize_arg(a)).collect();
                if args.iter().any(|a| a.is_empty()) && template.arity() > 0 {
                    continue;
                }
                let surface = render_surface(template, &args);
                return Ok(Action {
                    template_id: template.id.clone(),
                    args,
                    surface,
                });
            }
        }
        Err(GrammarError::NoSurfaceMatch(input.to_string()))
    }

    /// Parse one `NAME(arg, ...)` line into a [`FormalCall`]. Tolerates a
    /// leading list marker such as `- ` or `3. `.
    pub fn parse_formal(&self, line: &str) -> Result<FormalCall, GrammarError> {
        let trimmed = strip_list_marker(line.trim());
        let open = trimmed
            .find('(')
            .ok_or_else(|| GrammarError::MalformedCall(line.to_string()))?;
        if !trimmed.ends_with(')') {
            return Err(GrammarError::MalformedCall(line.to_string()));
        }
        let name = trimmed[..open].trim();
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphabetic() || c == '_') {
            return Err(GrammarError::MalformedCall(line.to_string()));
        }
        let inner = &trimmed[open + 1..trimmed.len() - 1];
        let args: Vec<String> = if inner.trim().is_empty() {
            Vec::new()
        } else {
            inner.split(',').map(normalize_arg).collect()
        };
        if args.iter().any(|a| a.is_empty()) {
            return Err(GrammarError::MalformedCall(line.to_string()));
        }
        Ok(FormalCall {
            name: name.to_uppercase(),
            args,
        })
    }

    /// Convert a formal call into the canonical surface action.
    pub fn formal_to_surface(&self, call: &FormalCall) -> Result<Action, GrammarError> {
        let template = self
            .by_formal(&call.name)
            .ok_or_else(|| GrammarError::UnknownTemplate(call.name.clone()))?;
        if call.args.len() != template.arity() {
            return Err(GrammarError::WrongArity {
                name: call.name.clone(),
                expected: template.arity(),
                got: call.args.len(),
            });
        }
        let refs: Vec<&str> = call.args.iter().map(String::as_str).collect();
        self.make_action(&template.id.clone(), &refs)
    }

    /// Convert a surface command back into its formal call.
    pub fn surface_to_formal(&self, surface: &str) -> Result<FormalCall, GrammarError> {
        let action = self.parse_surface(surface)?;
        let template = self.by_id(&action.template_id).expect("parsed template");
        Ok(FormalCall {
            name: template.formal.clone(),
            args: action.args,
        })
    }

    /// Catalog lines for the grounding prompt: one
    /// `NAME(x, y) : remark, e.g. example` entry per template.
    pub fn catalog_lines(&self) -> Vec<String> {
        self.templates
            .iter()
            .map(|t| {
                let slots: Vec<String> = t
                    .slots
                    .iter()
                    .enumerate()
                    .map(|(i, kind)| match kind {
                        SlotKind::Room => "room".to_string(),
                        SlotKind::Object => {
                            if t.arity() == 1 {
                                "object".to_string()
                            } else {
                                format!("object {}", (b'A' + i as u8) as char)
                            }
                        }
                    })
                    .collect();
                let head = format!("{}({})", t.formal, slots.join(", "));
                if t.example.is_empty() {
                    format!("{head} : {}", t.remark)
                } else {
                    format!("{head} : {}, e.g. {}", t.remark, t.example)
                }
            })
            .collect()
    }
}

/// Lowercase, collapse internal whitespace, trim, and drop a leading
/// `the `.
fn normalize_arg(raw: &str) -> String {
    let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    let lower = collapsed.to_lowercase();
    match lower.strip_prefix("the ") {
        Some(rest) => rest.to_string(),
        None => lower,
    }
}

fn render_surface(template: &ActionTemplate, args: &[String]) -> String {
    let mut out = template.pattern.clone();
    for (i, arg) in args.iter().enumerate() {
        out = out.replace(&format!("{{{i}}}"), arg);
    }
    out
}

/// Try to match `text` against a template pattern, extracting raw argument
/// substrings. Inner literals split at their first occurrence.
fn match_pattern(template: &ActionTemplate, text: &str) -> Option<Vec<String>> {
    let pieces = template.literal_pieces();
    let arity = template.arity();
    if arity == 0 {
        return if text == template.pattern.trim() {
            Some(Vec::new())
        } else {
            None
        };
    }
    let mut rest = text.strip_prefix(pieces[0].trim_end())?.trim_start();
    let mut args = Vec::with_capacity(arity);
    for piece in pieces.iter().take(arity).skip(1) {
        let needle = piece.trim();
        let pos = rest.find(&format!(" {needle} "))?;
        args.push(rest[..pos].to_string());
        rest = rest[pos + needle.len() + 2..].trim_start();
    }
    // Last piece must be a suffix (usually empty).
    let tail = pieces[arity].trim();
    if tail.is_empty() {
        if rest.is_empty() {
            return None;
        }
        args.push(rest.to_string());
    } else {
        let stripped = rest.strip_suffix(tail)?.trim_end();
        if stripped.is_empty() {
            return None;
        }
        args.push(stripped.to_string());
    }
    Some(args)
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.strip_prefix("- ").unwrap_or(line);
    // Numbered markers: "3. " or "3) ".
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(r) = rest.strip_prefix(". ") {
            return r;
        }
        if let Some(r) = rest.strip_prefix(") ") {
            return r;
        }
    }
    line
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::desk_world;

    fn grammar() -> ActionGrammar {
        desk_world().grammar.clone()
    }

    #[test]
    fn pour_formal_to_surface_matches_catalog_example() {
        let g = grammar();
        let call = g.parse_formal("POUR(red paint, wood cup)").unwrap();
        let action = g.formal_to_surface(&call).unwrap();
        assert_eq!(action.surface, "pour red paint into wood cup");
    }

    #[test]
    fn teleport_formal_to_surface() {
        let g = grammar();
        let call = g.parse_formal("TELEPORT(kitchen)").unwrap();
        let action = g.formal_to_surface(&call).unwrap();
        assert_eq!(action.surface, "teleport to kitchen");
    }

    #[test]
    fn move_and_open_conversions() {
        let g = grammar();
        let action = g
            .formal_to_surface(&g.parse_formal("MOVE(seed, pot)").unwrap())
            .unwrap();
        assert_eq!(action.surface, "move seed to pot");
        let action = g
            .formal_to_surface(&g.parse_formal("OPEN(freezer)").unwrap())
            .unwrap();
        assert_eq!(action.surface, "open freezer");
    }

    #[test]
    fn surface_round_trip() {
        let g = grammar();
        let call = g.surface_to_formal("pour red paint into wood cup").unwrap();
        assert_eq!(call.to_string(), "POUR(red paint, wood cup)");
    }

    #[test]
    fn parse_surface_strips_articles_and_whitespace() {
        let g = grammar();
        let action = g
            .parse_surface("use  thermometer on the substance in metal pot")
            .unwrap();
        assert_eq!(action.template_id, "use");
        assert_eq!(action.args, vec!["thermometer", "substance in metal pot"]);
        assert_eq!(action.surface, "use thermometer on substance in metal pot");
    }

    #[test]
    fn zero_arity_templates() {
        let g = grammar();
        let action = g.parse_surface("look around").unwrap();
        assert_eq!(action.template_id, "look");
        assert!(action.args.is_empty());
        let call = g.parse_formal("WAIT()").unwrap();
        assert_eq!(g.formal_to_surface(&call).unwrap().surface, "wait");
    }

    #[test]
    fn unknown_template_and_wrong_arity_fail() {
        let g = grammar();
        let fly = g.parse_formal("FLY(moon)").unwrap();
        assert_eq!(
            g.formal_to_surface(&fly),
            Err(GrammarError::UnknownTemplate("FLY".to_string()))
        );
        let bad = g.parse_formal("POUR(water)").unwrap();
        assert!(matches!(
            g.formal_to_surface(&bad),
            Err(GrammarError::WrongArity { .. })
        ));
    }

    #[test]
    fn list_markers_tolerated() {
        let g = grammar();
        assert!(g.parse_formal("- PICK(frog)").is_ok());
        assert!(g.parse_formal("2. PICK(frog)").is_ok());
        assert!(g.parse_formal("2) PICK(frog)").is_ok());
        assert!(g.parse_formal("just prose, no call").is_err());
    }
}
