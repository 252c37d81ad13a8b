//! Design-rule compliance checking.
//!
//! Verdicts follow the seven-rule taxonomy: (a) counts, (b) areas,
//! (c) existence, (d) connectivity, (e) circulation, (f) compactness,
//! (g) design norms. Rules (a)-(c) are preference rules tied to constraint
//! sections and report `NotApplicable` when their section is absent; rules
//! (d)-(g) are quality rules evaluated from the graph itself, with (d)
//! additionally checking any constrained connections. Circulation and
//! compactness are report-only by default.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::KnowledgeGraph;
use crate::prompt::{area_token, ConstraintSet, PromptError, RoomRef};
use crate::raster::RoomClass;

/// An adjacency norm: rooms of `a` should touch rooms of `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormRule {
    pub a: RoomClass,
    pub b: RoomClass,
}

/// Tolerances and rule configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplianceConfig {
    /// Pixel area per token; required when area constraints are present.
    pub area_divisor: Option<f64>,
    /// Relative tolerance for area tokens.
    pub area_rel_tol: f64,
    /// Minimum compactness ratio; `None` makes rule (f) report-only.
    pub compactness_threshold: Option<f64>,
    /// Interior-mask pixel count of the source plan, the compactness
    /// denominator. Unknown when checking a bare graph document.
    pub interior_pixels: Option<u64>,
    /// Adjacency norms for rule (g).
    pub norm_rules: Vec<NormRule>,
}

impl Default for ComplianceConfig {
    fn default() -> Self {
        ComplianceConfig {
            area_divisor: Some(100.0),
            area_rel_tol: 0.15,
            compactness_threshold: None,
            interior_pixels: None,
            norm_rules: vec![NormRule {
                a: RoomClass::Living,
                b: RoomClass::Kitchen,
            }],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignRule {
    Counts,
    Areas,
    Existence,
    Connectivity,
    Circulation,
    Compactness,
    DesignNorms,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleResult {
    pub status: RuleStatus,
    pub details: String,
}

impl RuleResult {
    fn pass(details: impl Into<String>) -> RuleResult {
        RuleResult { status: RuleStatus::Pass, details: details.into() }
    }

    fn fail(details: impl Into<String>) -> RuleResult {
        RuleResult { status: RuleStatus::Fail, details: details.into() }
    }

    fn not_applicable(details: impl Into<String>) -> RuleResult {
        RuleResult { status: RuleStatus::NotApplicable, details: details.into() }
    }
}

/// One concrete rule violation, with the rooms involved when known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: DesignRule,
    pub rooms: Vec<String>,
    pub message: String,
}

/// Per-rule verdicts plus the collected violations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub counts: RuleResult,
    pub areas: RuleResult,
    pub existence: RuleResult,
    pub connectivity: RuleResult,
    pub circulation: RuleResult,
    pub compactness: RuleResult,
    pub design_norms: RuleResult,
    pub violations: Vec<Violation>,
}

impl ComplianceReport {
    pub fn rule(&self, rule: DesignRule) -> &RuleResult {
        match rule {
            DesignRule::Counts => &self.counts,
            DesignRule::Areas => &self.areas,
            DesignRule::Existence => &self.existence,
            DesignRule::Connectivity => &self.connectivity,
            DesignRule::Circulation => &self.circulation,
            DesignRule::Compactness => &self.compactness,
            DesignRule::DesignNorms => &self.design_norms,
        }
    }

    /// True when no rule failed.
    pub fn passed(&self) -> bool {
        [
            &self.counts,
            &self.areas,
            &self.existence,
            &self.connectivity,
            &self.circulation,
            &self.compactness,
            &self.design_norms,
        ]
        .iter()
        .all(|r| r.status != RuleStatus::Fail)
    }
}

/// Maps `(class, canonical index)` to node positions. Ranks are recomputed
/// from the graph by descending area with `(y0, x0)` tie-breaks, the same
/// convention the prompt emitter uses, so references resolve identically on
/// both sides.
fn canonical_ranks(kg: &KnowledgeGraph) -> BTreeMap<(RoomClass, u32), usize> {
    let mut per_class: BTreeMap<RoomClass, Vec<usize>> = BTreeMap::new();
    for (pos, node) in kg.nodes.iter().enumerate() {
        per_class.entry(node.class).or_default().push(pos);
    }
    let mut ranks = BTreeMap::new();
    for (class, mut positions) in per_class {
        positions.sort_by(|&a, &b| {
            let (na, nb) = (&kg.nodes[a], &kg.nodes[b]);
            nb.area
                .cmp(&na.area)
                .then(na.bbox.y0.cmp(&nb.bbox.y0))
                .then(na.bbox.x0.cmp(&nb.bbox.x0))
        });
        for (i, pos) in positions.into_iter().enumerate() {
            ranks.insert((class, (i + 1) as u32), pos);
        }
    }
    ranks
}

fn resolve(ranks: &BTreeMap<(RoomClass, u32), usize>, r: RoomRef) -> Option<usize> {
    ranks.get(&(r.class, r.index.unwrap_or(1))).copied()
}

/// Checks a graph against a constraint set under the rule taxonomy.
///
/// References are matched to nodes by class and canonical descending-area
/// index. References that do not resolve to a node are skipped by rules (b)
/// and (d) — the missing instances already surface through rules (a) and
/// (c) — so a single defect flips a single rule.
pub fn check_compliance(
    kg: &KnowledgeGraph,
    cs: &ConstraintSet,
    cfg: &ComplianceConfig,
) -> Result<ComplianceReport, PromptError> {
    let ranks = canonical_ranks(kg);
    let mut violations = Vec::new();

    // (a) counts
    let counts = match &cs.counts {
        None => RuleResult::not_applicable("no count constraints"),
        Some(declared) => {
            let mut mismatches = Vec::new();
            let mut seen = Vec::new();
            for (class, want) in declared {
                if seen.contains(class) {
                    continue;
                }
                seen.push(*class);
                let have = kg.class_count(*class) as u32;
                if have != *want {
                    mismatches.push(format!("{class}: declared {want}, found {have}"));
                    violations.push(Violation {
                        rule: DesignRule::Counts,
                        rooms: vec![class.name().to_string()],
                        message: format!("expected {want} {class}, found {have}"),
                    });
                }
            }
            if mismatches.is_empty() {
                RuleResult::pass(format!("{} class counts match", seen.len()))
            } else {
                RuleResult::fail(mismatches.join("; "))
            }
        }
    };

    // (b) areas
    let areas = match &cs.areas {
        None => RuleResult::not_applicable("no area constraints"),
        Some(entries) => {
            let divisor = cfg.area_divisor.ok_or(PromptError::MissingAreaDivisor)?;
            if !divisor.is_finite() || divisor <= 0.0 {
                return Err(PromptError::InvalidAreaDivisor);
            }
            let mut failures = Vec::new();
            let mut skipped = 0usize;
            for entry in entries {
                let Some(pos) = resolve(&ranks, entry.room) else {
                    skipped += 1;
                    continue;
                };
                let actual = area_token(kg.nodes[pos].area, divisor);
                let diff = entry.tokens.abs_diff(actual);
                if diff as f64 > cfg.area_rel_tol * actual as f64 {
                    failures.push(format!(
                        "{}: constrained {} vs actual {}",
                        entry.room, entry.tokens, actual
                    ));
                    violations.push(Violation {
                        rule: DesignRule::Areas,
                        rooms: vec![entry.room.display_ref()],
                        message: format!(
                            "area token {} outside {:.0}% of actual {}",
                            entry.tokens,
                            cfg.area_rel_tol * 100.0,
                            actual
                        ),
                    });
                }
            }
            let note = if skipped > 0 {
                format!(" ({skipped} unresolved references skipped)")
            } else {
                String::new()
            };
            if failures.is_empty() {
                RuleResult::pass(format!(
                    "{} area constraints within tolerance{note}",
                    entries.len() - skipped
                ))
            } else {
                RuleResult::fail(failures.join("; ") + &note)
            }
        }
    };

    // (c) existence
    let named = cs.named_classes();
    let existence = if named.is_empty() {
        RuleResult::not_applicable("no classes named")
    } else {
        let missing: Vec<_> = named
            .iter()
            .filter(|c| kg.class_count(**c) == 0)
            .collect();
        if missing.is_empty() {
            RuleResult::pass(format!("all {} named classes present", named.len()))
        } else {
            for class in &missing {
                violations.push(Violation {
                    rule: DesignRule::Existence,
                    rooms: vec![class.name().to_string()],
                    message: format!("no {class} in the layout"),
                });
            }
            RuleResult::fail(format!(
                "missing classes: {}",
                missing
                    .iter()
                    .map(|c| c.name())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        }
    };

    // (d) connectivity: no isolated rooms + all constrained connections.
    let connectivity = if kg.nodes.is_empty() {
        RuleResult::not_applicable("no rooms")
    } else {
        let mut problems = Vec::new();
        if kg.nodes.len() >= 2 {
            let adj = kg.adjacency();
            for (pos, node) in kg.nodes.iter().enumerate() {
                if adj[pos].is_empty() {
                    problems.push(format!("{}_{} is isolated", node.class, node.index));
                    violations.push(Violation {
                        rule: DesignRule::Connectivity,
                        rooms: vec![format!("{}_{}", node.class, node.index)],
                        message: "isolated room".to_string(),
                    });
                }
            }
            if problems.is_empty() && !kg.is_connected() {
                problems.push("layout splits into disconnected groups".to_string());
                violations.push(Violation {
                    rule: DesignRule::Connectivity,
                    rooms: vec![],
                    message: "rooms form more than one connected group".to_string(),
                });
            }
        }
        let mut skipped = 0usize;
        if let Some(conns) = &cs.connections {
            for c in conns {
                let (Some(u), Some(v)) = (resolve(&ranks, c.first()), resolve(&ranks, c.second()))
                else {
                    skipped += 1;
                    continue;
                };
                if !kg.has_edge(kg.nodes[u].id, kg.nodes[v].id) {
                    problems.push(format!("{} connect {} missing", c.first(), c.second()));
                    violations.push(Violation {
                        rule: DesignRule::Connectivity,
                        rooms: vec![c.first().display_ref(), c.second().display_ref()],
                        message: "constrained connection missing".to_string(),
                    });
                }
            }
        }
        let note = if skipped > 0 {
            format!(" ({skipped} unresolved references skipped)")
        } else {
            String::new()
        };
        if problems.is_empty() {
            RuleResult::pass(format!("well-connected{note}"))
        } else {
            RuleResult::fail(problems.join("; ") + &note)
        }
    };

    // (e) circulation: report-only path lengths from the living room.
    let living_positions: Vec<usize> = kg
        .nodes
        .iter()
        .enumerate()
        .filter(|(_, n)| n.class == RoomClass::Living)
        .map(|(pos, _)| pos)
        .collect();
    let circulation = if living_positions.is_empty() {
        RuleResult::not_applicable("no living room to anchor circulation")
    } else {
        let dist = kg.bfs_distances(&living_positions);
        let mut parts = Vec::new();
        let mut max_len = 0u32;
        for (pos, node) in kg.nodes.iter().enumerate() {
            match dist[pos] {
                Some(d) => {
                    max_len = max_len.max(d);
                    parts.push(format!("{}_{}:{}", node.class, node.index, d));
                }
                None => parts.push(format!("{}_{}:unreachable", node.class, node.index)),
            }
        }
        RuleResult::pass(format!(
            "max path length {max_len} from living room; {}",
            parts.join(" ")
        ))
    };

    // (f) compactness: summed room area over interior area.
    let compactness = match cfg.interior_pixels {
        None => RuleResult::not_applicable("interior pixel count not provided"),
        Some(0) => RuleResult::not_applicable("empty interior mask"),
        Some(interior) => {
            let used: u64 = kg.nodes.iter().map(|n| n.area).sum();
            let ratio = used as f64 / interior as f64;
            match cfg.compactness_threshold {
                Some(threshold) if ratio < threshold => {
                    violations.push(Violation {
                        rule: DesignRule::Compactness,
                        rooms: vec![],
                        message: format!("compactness {ratio:.3} below {threshold:.3}"),
                    });
                    RuleResult::fail(format!("compactness {ratio:.3} < {threshold:.3}"))
                }
                Some(threshold) => {
                    RuleResult::pass(format!("compactness {ratio:.3} >= {threshold:.3}"))
                }
                None => RuleResult::pass(format!("compactness {ratio:.3} (report-only)")),
            }
        }
    };

    // (g) design norms: configured class adjacencies.
    let design_norms = if cfg.norm_rules.is_empty() {
        RuleResult::not_applicable("no norm rules configured")
    } else {
        let mut failures = Vec::new();
        let mut applicable = 0usize;
        for rule in &cfg.norm_rules {
            if kg.class_count(rule.a) == 0 || kg.class_count(rule.b) == 0 {
                continue;
            }
            applicable += 1;
            let satisfied = kg.edges.iter().any(|&(u, v)| {
                let (cu, cv) = (
                    kg.node_by_id(u).map(|n| n.class),
                    kg.node_by_id(v).map(|n| n.class),
                );
                (cu == Some(rule.a) && cv == Some(rule.b))
                    || (cu == Some(rule.b) && cv == Some(rule.a))
            });
            if !satisfied {
                failures.push(format!("{} not adjacent to {}", rule.a, rule.b));
                violations.push(Violation {
                    rule: DesignRule::DesignNorms,
                    rooms: vec![rule.a.name().to_string(), rule.b.name().to_string()],
                    message: "norm adjacency missing".to_string(),
                });
            }
        }
        if applicable == 0 {
            RuleResult::not_applicable("no norm rule applies to the present classes")
        } else if failures.is_empty() {
            RuleResult::pass(format!("{applicable} norm rules satisfied"))
        } else {
            RuleResult::fail(failures.join("; "))
        }
    };

    Ok(ComplianceReport {
        counts,
        areas,
        existence,
        connectivity,
        circulation,
        compactness,
        design_norms,
        violations,
    })
}
