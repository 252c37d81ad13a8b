//! The constrained natural-language grammar for design requirements.
//!
//! A prompt has up to three segments, in order: room counts (`2_bedroom`),
//! room areas (`bedroom1_space_17`), and connections
//! (`bedroom_1 connect bathroom`), wrapped as
//! `<p>The room has ... .</p>`. Any subset of the segments may be present.
//! The emitter writes one canonical spelling; the parser is tolerant of
//! whitespace and of both `bedroom1_space_17` and `bedroom_1_space_17`
//! identifier forms.

mod compliance;
mod parse;

pub use compliance::{
    check_compliance, ComplianceConfig, ComplianceReport, DesignRule, NormRule, RuleResult,
    RuleStatus, Violation,
};
pub use parse::parse_prompt;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::KnowledgeGraph;
use crate::raster::RoomClass;

/// A room reference: class plus an optional 1-based instance index.
///
/// Singleton classes are referenced without an index (`bathroom`);
/// multi-instance classes carry one (`bedroom_1`).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct RoomRef {
    pub class: RoomClass,
    pub index: Option<u32>,
}

impl RoomRef {
    pub fn new(class: RoomClass, index: Option<u32>) -> RoomRef {
        RoomRef { class, index }
    }

    /// Canonical connection-clause spelling (`bedroom_1`, `bathroom`).
    pub fn display_ref(&self) -> String {
        match self.index {
            Some(i) => format!("{}_{}", self.class.name(), i),
            None => self.class.name().to_string(),
        }
    }

    /// Area-token spelling with the index glued to the class (`bedroom1`).
    pub fn display_glued(&self) -> String {
        match self.index {
            Some(i) => format!("{}{}", self.class.name(), i),
            None => self.class.name().to_string(),
        }
    }
}

impl std::fmt::Display for RoomRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.display_ref())
    }
}

/// An unordered pair of room references, stored with sorted endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Connection(RoomRef, RoomRef);

impl Connection {
    pub fn new(a: RoomRef, b: RoomRef) -> Connection {
        if a <= b {
            Connection(a, b)
        } else {
            Connection(b, a)
        }
    }

    pub fn first(&self) -> RoomRef {
        self.0
    }

    pub fn second(&self) -> RoomRef {
        self.1
    }
}

/// One `class{i}_space_{tokens}` entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaEntry {
    pub room: RoomRef,
    pub tokens: u64,
}

/// A parsed prompt: any of the three segments may be absent, which in
/// compliance checking renders the corresponding rule not applicable.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSet {
    /// Declared room counts, in declaration order.
    pub counts: Option<Vec<(RoomClass, u32)>>,
    /// Area tokens, in declaration order.
    pub areas: Option<Vec<AreaEntry>>,
    /// Connection clauses, in declaration order, endpoints normalized.
    pub connections: Option<Vec<Connection>>,
}

impl ConstraintSet {
    pub fn empty() -> ConstraintSet {
        ConstraintSet::default()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_none() && self.areas.is_none() && self.connections.is_none()
    }

    /// First declared count for the class, if any.
    pub fn count_of(&self, class: RoomClass) -> Option<u32> {
        self.counts
            .as_ref()?
            .iter()
            .find(|(c, _)| *c == class)
            .map(|(_, k)| *k)
    }

    /// Every class referenced by a positive count, an area entry, or a
    /// connection endpoint.
    pub fn named_classes(&self) -> BTreeSet<RoomClass> {
        let mut set = BTreeSet::new();
        if let Some(counts) = &self.counts {
            for (class, k) in counts {
                if *k >= 1 {
                    set.insert(*class);
                }
            }
        }
        if let Some(areas) = &self.areas {
            for e in areas {
                set.insert(e.room.class);
            }
        }
        if let Some(conns) = &self.connections {
            for c in conns {
                set.insert(c.first().class);
                set.insert(c.second().class);
            }
        }
        set
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("cannot emit a prompt for a graph with no rooms")]
    EmptyGraph,
    #[error("the selected sections produce no tokens")]
    EmptyPrompt,
    #[error("area divisor must be positive")]
    InvalidAreaDivisor,
    #[error("parse error at byte {position}: expected {expected}")]
    Parse { position: usize, expected: String },
    #[error("area constraints present but no area divisor configured")]
    MissingAreaDivisor,
}

impl PromptError {
    pub fn code(&self) -> &'static str {
        match self {
            PromptError::EmptyGraph => "EmptyGraph",
            PromptError::EmptyPrompt => "EmptyPrompt",
            PromptError::InvalidAreaDivisor => "InvalidAreaDivisor",
            PromptError::Parse { .. } => "ParseError",
            PromptError::MissingAreaDivisor => "MissingAreaDivisor",
        }
    }
}

/// Which prompt segments to emit. All three by default.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptSections {
    pub counts: bool,
    pub areas: bool,
    pub connections: bool,
}

impl Default for PromptSections {
    fn default() -> Self {
        PromptSections {
            counts: true,
            areas: true,
            connections: true,
        }
    }
}

/// Converts a pixel area to its prompt token value.
///
/// Tokens are `round(pixel_area / area_divisor)`, clamped up to 1 because
/// the grammar only admits positive area tokens.
pub fn area_token(pixel_area: u64, area_divisor: f64) -> u64 {
    let token = (pixel_area as f64 / area_divisor).round() as u64;
    token.max(1)
}

fn node_ref(kg: &KnowledgeGraph, node_pos: usize) -> RoomRef {
    let node = &kg.nodes[node_pos];
    let multi = kg.class_count(node.class) >= 2;
    RoomRef::new(node.class, multi.then_some(node.index))
}

/// Emits the prompt text for a graph.
///
/// Counts follow the first appearance of each class in node order, area
/// tokens follow node order, connection clauses follow edge order. Omitted
/// sections are simply absent from the text.
pub fn emit_prompt(
    kg: &KnowledgeGraph,
    area_divisor: f64,
    sections: PromptSections,
) -> Result<String, PromptError> {
    if kg.nodes.is_empty() {
        return Err(PromptError::EmptyGraph);
    }
    if !area_divisor.is_finite() || area_divisor <= 0.0 {
        return Err(PromptError::InvalidAreaDivisor);
    }
    let mut tokens: Vec<String> = Vec::new();
    if sections.counts {
        let mut seen = Vec::new();
        for node in &kg.nodes {
            if !seen.contains(&node.class) {
                seen.push(node.class);
                tokens.push(format!(
                    "{}_{}",
                    kg.class_count(node.class),
                    node.class.name()
                ));
            }
        }
    }
    if sections.areas {
        for pos in 0..kg.nodes.len() {
            let r = node_ref(kg, pos);
            tokens.push(format!(
                "{}_space_{}",
                r.display_glued(),
                area_token(kg.nodes[pos].area, area_divisor)
            ));
        }
    }
    if sections.connections {
        let pos_of = |id: usize| kg.nodes.iter().position(|n| n.id == id).unwrap();
        for &(u, v) in &kg.edges {
            tokens.push(format!(
                "{} connect {}",
                node_ref(kg, pos_of(u)).display_ref(),
                node_ref(kg, pos_of(v)).display_ref()
            ));
        }
    }
    if tokens.is_empty() {
        return Err(PromptError::EmptyPrompt);
    }
    Ok(format!("<p>The room has {}.</p>", tokens.join(", ")))
}

/// The constraint set a full prompt for this graph expresses; round-trips
/// exactly through `parse_prompt(emit_prompt(kg))`.
///
/// Sections that would emit no tokens (no nodes, no edges) come back absent,
/// mirroring what the grammar can express.
pub fn kg_to_constraints(kg: &KnowledgeGraph, area_divisor: f64) -> ConstraintSet {
    debug_assert!(area_divisor > 0.0);
    if kg.nodes.is_empty() {
        return ConstraintSet::empty();
    }
    let mut counts = Vec::new();
    for node in &kg.nodes {
        if !counts.iter().any(|(c, _)| *c == node.class) {
            counts.push((node.class, kg.class_count(node.class) as u32));
        }
    }
    let areas = (0..kg.nodes.len())
        .map(|pos| AreaEntry {
            room: node_ref(kg, pos),
            tokens: area_token(kg.nodes[pos].area, area_divisor),
        })
        .collect::<Vec<_>>();
    let pos_of = |id: usize| kg.nodes.iter().position(|n| n.id == id).unwrap();
    let connections = kg
        .edges
        .iter()
        .map(|&(u, v)| Connection::new(node_ref(kg, pos_of(u)), node_ref(kg, pos_of(v))))
        .collect::<Vec<_>>();
    ConstraintSet {
        counts: Some(counts),
        areas: Some(areas),
        connections: if connections.is_empty() {
            None
        } else {
            Some(connections)
        },
    }
}

/// A soft inconsistency in a constraint set. Parsing never fails on these.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsistencyWarning {
    /// A reference's index exceeds the declared count of its class.
    IndexExceedsCount {
        class: RoomClass,
        index: u32,
        count: u32,
    },
    DuplicateCount(RoomClass),
    DuplicateArea(RoomRef),
    DuplicateConnection(Connection),
}

impl std::fmt::Display for ConsistencyWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConsistencyWarning::IndexExceedsCount { class, index, count } => write!(
                f,
                "IndexExceedsCount: {class}_{index} referenced but only {count} declared"
            ),
            ConsistencyWarning::DuplicateCount(class) => {
                write!(f, "DuplicateCount: {class} declared more than once")
            }
            ConsistencyWarning::DuplicateArea(room) => {
                write!(f, "DuplicateArea: {room} has more than one area entry")
            }
            ConsistencyWarning::DuplicateConnection(c) => write!(
                f,
                "DuplicateConnection: {} connect {} repeated",
                c.first(),
                c.second()
            ),
        }
    }
}

/// Flags internal inconsistencies: references whose index exceeds the
/// declared count, duplicated count declarations, duplicated area entries,
/// and duplicated connection clauses.
pub fn check_consistency(cs: &ConstraintSet) -> Vec<ConsistencyWarning> {
    let mut warnings = Vec::new();
    if let Some(counts) = &cs.counts {
        let mut seen = Vec::new();
        for (class, _) in counts {
            if seen.contains(class) {
                if !warnings.contains(&ConsistencyWarning::DuplicateCount(*class)) {
                    warnings.push(ConsistencyWarning::DuplicateCount(*class));
                }
            } else {
                seen.push(*class);
            }
        }
        // Index-vs-count checks only make sense against a declared count.
        let mut refs: Vec<RoomRef> = Vec::new();
        if let Some(areas) = &cs.areas {
            refs.extend(areas.iter().map(|e| e.room));
        }
        if let Some(conns) = &cs.connections {
            for c in conns {
                refs.push(c.first());
                refs.push(c.second());
            }
        }
        let mut flagged = BTreeSet::new();
        for r in refs {
            let implied = r.index.unwrap_or(1);
            let declared = cs.count_of(r.class).unwrap_or(0);
            if implied > declared && flagged.insert((r.class, implied)) {
                warnings.push(ConsistencyWarning::IndexExceedsCount {
                    class: r.class,
                    index: implied,
                    count: declared,
                });
            }
        }
    }
    if let Some(areas) = &cs.areas {
        let mut seen = BTreeSet::new();
        let mut flagged = BTreeSet::new();
        for e in areas {
            if !seen.insert(e.room) && flagged.insert(e.room) {
                warnings.push(ConsistencyWarning::DuplicateArea(e.room));
            }
        }
    }
    if let Some(conns) = &cs.connections {
        let mut seen = BTreeSet::new();
        let mut flagged = BTreeSet::new();
        for c in conns {
            if !seen.insert(*c) && flagged.insert(*c) {
                warnings.push(ConsistencyWarning::DuplicateConnection(*c));
            }
        }
    }
    warnings
}
