//! Influence-diagram representation, parsing, and structural validation.
//!
//! A diagram has exactly one decision node (the answer chosen by the model)
//! and one or more chance nodes; the utility node is implicit: every chance
//! node's factor contributes one term to a multiplicative utility. Diagrams
//! are classified into one of three evaluation regimes, see
//! [`classify_tractability`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Node identifier as written in the spec file.
pub type NodeId = String;

#[derive(Debug, Error)]
pub enum DiagramError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown node kind: {0}")]
    UnknownKind(String),
    #[error("unknown node domain: {0}")]
    UnknownDomain(String),
    #[error("dangling edge reference: {0}")]
    DanglingEdge(NodeId),
    #[error("labels/scores mismatch on node {node}: {labels} labels, {scores} scores")]
    LabelScoreMismatch {
        node: NodeId,
        labels: usize,
        scores: usize,
    },
    #[error("duplicate node id: {0}")]
    DuplicateNode(NodeId),
    #[error("invalid diagram: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Decision,
    Chance,
}

/// Value domain of a chance node.
///
/// Categorical domains carry an explicit numeric score per label because the
/// expected score is used arithmetically in the objective; the label-to-number
/// map must therefore be part of the diagram, not left to the reader.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Binary,
    Categorical(Vec<CategoryLabel>),
    /// The node's expected factor value is elicited directly as one scalar.
    ScalarExpectation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryLabel {
    pub label: String,
    pub score: f64,
}

/// Per-node factor contributing one term to the multiplicative utility.
#[derive(Debug, Clone, PartialEq)]
pub enum FactorSpec {
    /// Binary: f(0) = 0, f(1) = 1. Categorical: f(label) = the domain score.
    /// ScalarExpectation: the elicited scalar is already E[f].
    Identity,
    /// Explicit label-to-value map; permitted only on categorical leaf nodes.
    ScoreMap(BTreeMap<String, f64>),
    /// f == 1 regardless of outcome; the node carries no utility weight.
    ConstantOne,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub kind: NodeKind,
    /// `None` only for the decision node, whose "domain" is the answer space.
    pub domain: Option<Domain>,
    pub description: String,
    pub factor: FactorSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceDiagram {
    pub task: String,
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StructureTag {
    /// Every chance node's only parent is the decision node (Eq.-1 regime).
    ConditionallyIndependent,
    /// Every internal chance node is binary with identity factor and at
    /// least one chance node has a chance-node parent (gated regime).
    BinaryGated,
    Intractable,
}

impl fmt::Display for StructureTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StructureTag::ConditionallyIndependent => write!(f, "ConditionallyIndependent"),
            StructureTag::BinaryGated => write!(f, "BinaryGated"),
            StructureTag::Intractable => write!(f, "Intractable"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureClass {
    pub tag: StructureTag,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub rule: &'static str,
    pub message: String,
    /// Ids of the offending nodes or edge endpoints.
    pub subjects: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn from_violations(violations: Vec<Violation>) -> Self {
        ValidationReport {
            ok: violations.is_empty(),
            violations,
        }
    }
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiagramFile {
    task: String,
    nodes: Vec<NodeFile>,
    edges: Vec<(String, String)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    id: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<Vec<f64>>,
    #[serde(default)]
    description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    factor: Option<FactorFile>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum FactorFile {
    Identity,
    ConstantOne,
    ScoreMap(BTreeMap<String, f64>),
}

/// Parse a diagram spec document (canonical JSON encoding).
///
/// Unknown keys are rejected; edges must reference declared node ids.
pub fn parse_diagram_spec(text: &str) -> Result<InfluenceDiagram, DiagramError> {
    let file: DiagramFile = serde_json::from_str(text).map_err(|e| {
        let msg = e.to_string();
        if msg.contains("unknown field") || msg.contains("unknown variant") {
            DiagramError::Syntax(msg)
        } else {
            DiagramError::Syntax(format!("line {}, column {}: {}", e.line(), e.column(), e))
        }
    })?;

    let mut nodes = Vec::with_capacity(file.nodes.len());
    let mut seen = BTreeSet::new();
    for n in &file.nodes {
        if !seen.insert(n.id.clone()) {
            return Err(DiagramError::DuplicateNode(n.id.clone()));
        }
        let kind = match n.kind.as_str() {
            "decision" => NodeKind::Decision,
            "chance" => NodeKind::Chance,
            other => return Err(DiagramError::UnknownKind(other.to_string())),
        };
        let domain = match n.domain.as_deref() {
            None => None,
            Some("binary") => Some(Domain::Binary),
            Some("scalar_expectation") => Some(Domain::ScalarExpectation),
            Some("categorical") => {
                let labels = n.labels.clone().unwrap_or_default();
                let scores = n.scores.clone().unwrap_or_default();
                if labels.len() != scores.len() {
                    return Err(DiagramError::LabelScoreMismatch {
                        node: n.id.clone(),
                        labels: labels.len(),
                        scores: scores.len(),
                    });
                }
                Some(Domain::Categorical(
                    labels
                        .into_iter()
                        .zip(scores)
                        .map(|(label, score)| CategoryLabel { label, score })
                        .collect(),
                ))
            }
            Some(other) => return Err(DiagramError::UnknownDomain(other.to_string())),
        };
        let factor = match &n.factor {
            None => FactorSpec::Identity,
            Some(FactorFile::Identity) => FactorSpec::Identity,
            Some(FactorFile::ConstantOne) => FactorSpec::ConstantOne,
            Some(FactorFile::ScoreMap(m)) => FactorSpec::ScoreMap(m.clone()),
        };
        nodes.push(NodeSpec {
            id: n.id.clone(),
            kind,
            domain,
            description: n.description.clone(),
            factor,
        });
    }

    let ids: BTreeSet<&str> = nodes.iter().map(|n| n.id.as_str()).collect();
    for (parent, child) in &file.edges {
        for end in [parent, child] {
            if !ids.contains(end.as_str()) {
                return Err(DiagramError::DanglingEdge(end.clone()));
            }
        }
    }

    Ok(InfluenceDiagram {
        task: file.task,
        nodes,
        edges: file.edges,
    })
}

/// Serialize back to the canonical on-disk form. `parse(serialize(d))`
/// round-trips to a structurally equal diagram.
pub fn serialize_diagram_spec(d: &InfluenceDiagram) -> String {
    let nodes = d
        .nodes
        .iter()
        .map(|n| {
            let (domain, labels, scores) = match &n.domain {
                None => (None, None, None),
                Some(Domain::Binary) => (Some("binary".to_string()), None, None),
                Some(Domain::ScalarExpectation) => {
                    (Some("scalar_expectation".to_string()), None, None)
                }
                Some(Domain::Categorical(ls)) => (
                    Some("categorical".to_string()),
                    Some(ls.iter().map(|l| l.label.clone()).collect()),
                    Some(ls.iter().map(|l| l.score).collect()),
                ),
            };
            NodeFile {
                id: n.id.clone(),
                kind: match n.kind {
                    NodeKind::Decision => "decision".to_string(),
                    NodeKind::Chance => "chance".to_string(),
                },
                domain,
                labels,
                scores,
                description: n.description.clone(),
                factor: Some(match &n.factor {
                    FactorSpec::Identity => FactorFile::Identity,
                    FactorSpec::ConstantOne => FactorFile::ConstantOne,
                    FactorSpec::ScoreMap(m) => FactorFile::ScoreMap(m.clone()),
                }),
            }
        })
        .collect();
    let file = DiagramFile {
        task: d.task.clone(),
        nodes,
        edges: d.edges.clone(),
    };
    serde_json::to_string_pretty(&file).expect("diagram serialization cannot fail")
}

// ---------------------------------------------------------------------------
// Structure queries
// ---------------------------------------------------------------------------

impl InfluenceDiagram {
    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn decision_node(&self) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.kind == NodeKind::Decision)
    }

    pub fn chance_nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.iter().filter(|n| n.kind == NodeKind::Chance)
    }

    /// All parents of `id`, including the decision node.
    pub fn parents(&self, id: &str) -> Vec<&str> {
        let mut ps: Vec<&str> = self
            .edges
            .iter()
            .filter(|(_, c)| c == id)
            .map(|(p, _)| p.as_str())
            .collect();
        ps.sort_unstable();
        ps
    }

    /// Chance-node parents of `id` (the decision node excluded).
    pub fn chance_parents(&self, id: &str) -> Vec<&str> {
        self.parents(id)
            .into_iter()
            .filter(|p| self.node(p).map_or(false, |n| n.kind == NodeKind::Chance))
            .collect()
    }

    pub fn children(&self, id: &str) -> Vec<&str> {
        let mut cs: Vec<&str> = self
            .edges
            .iter()
            .filter(|(p, _)| p == id)
            .map(|(_, c)| c.as_str())
            .collect();
        cs.sort_unstable();
        cs
    }

    /// A chance node is internal when it has at least one chance-node child.
    pub fn is_internal(&self, id: &str) -> bool {
        self.children(id)
            .iter()
            .any(|c| self.node(c).map_or(false, |n| n.kind == NodeKind::Chance))
    }
}

/// Check every structural invariant; failures are reported, not thrown.
pub fn validate_structure(d: &InfluenceDiagram) -> ValidationReport {
    let mut out = Vec::new();

    let decisions: Vec<&NodeSpec> = d
        .nodes
        .iter()
        .filter(|n| n.kind == NodeKind::Decision)
        .collect();
    if decisions.len() != 1 {
        out.push(Violation {
            rule: "singular-decision-root",
            message: format!("expected exactly one decision node, found {}", decisions.len()),
            subjects: decisions.iter().map(|n| n.id.clone()).collect(),
        });
    }
    if d.chance_nodes().count() == 0 {
        out.push(Violation {
            rule: "chance-node-count",
            message: "a diagram needs at least one chance node".to_string(),
            subjects: vec![],
        });
    }

    let ids: BTreeSet<&str> = d.nodes.iter().map(|n| n.id.as_str()).collect();
    let mut seen_edges = BTreeSet::new();
    for (p, c) in &d.edges {
        if !ids.contains(p.as_str()) || !ids.contains(c.as_str()) {
            out.push(Violation {
                rule: "edge-endpoints",
                message: format!("edge ({p}, {c}) references an undeclared node"),
                subjects: vec![p.clone(), c.clone()],
            });
            continue;
        }
        if p == c {
            out.push(Violation {
                rule: "self-edge",
                message: format!("self-edge on {p}"),
                subjects: vec![p.clone()],
            });
        }
        if !seen_edges.insert((p.clone(), c.clone())) {
            out.push(Violation {
                rule: "duplicate-edge",
                message: format!("duplicate edge ({p}, {c})"),
                subjects: vec![p.clone(), c.clone()],
            });
        }
    }

    for n in d.chance_nodes() {
        match &n.domain {
            None => out.push(Violation {
                rule: "chance-domain",
                message: format!("chance node {} declares no domain", n.id),
                subjects: vec![n.id.clone()],
            }),
            Some(Domain::Categorical(labels)) => {
                let distinct_labels: BTreeSet<&str> =
                    labels.iter().map(|l| l.label.as_str()).collect();
                let mut scores: Vec<f64> = labels.iter().map(|l| l.score).collect();
                scores.sort_by(|a, b| a.total_cmp(b));
                let distinct_scores = scores.windows(2).all(|w| w[0] != w[1]);
                if labels.len() < 2 || distinct_labels.len() != labels.len() || !distinct_scores {
                    out.push(Violation {
                        rule: "categorical-labels",
                        message: format!(
                            "categorical node {} needs >= 2 distinct labels with distinct scores",
                            n.id
                        ),
                        subjects: vec![n.id.clone()],
                    });
                }
            }
            _ => {}
        }
        if n.description.trim().is_empty() {
            out.push(Violation {
                rule: "chance-description",
                message: format!("chance node {} has an empty description", n.id),
                subjects: vec![n.id.clone()],
            });
        }
        if let FactorSpec::ScoreMap(map) = &n.factor {
            if d.is_internal(&n.id) {
                out.push(Violation {
                    rule: "score-map-on-internal",
                    message: format!("score-map factor on internal node {}", n.id),
                    subjects: vec![n.id.clone()],
                });
            }
            match &n.domain {
                Some(Domain::Categorical(labels)) => {
                    let declared: BTreeSet<&str> = labels.iter().map(|l| l.label.as_str()).collect();
                    let mapped: BTreeSet<&str> = map.keys().map(|k| k.as_str()).collect();
                    if declared != mapped {
                        out.push(Violation {
                            rule: "score-map-labels",
                            message: format!(
                                "score map on {} must cover exactly the categorical labels",
                                n.id
                            ),
                            subjects: vec![n.id.clone()],
                        });
                    }
                }
                _ => out.push(Violation {
                    rule: "score-map-domain",
                    message: format!("score-map factor on non-categorical node {}", n.id),
                    subjects: vec![n.id.clone()],
                }),
            }
        }
        if d.is_internal(&n.id)
            && n.domain == Some(Domain::Binary)
            && n.factor != FactorSpec::Identity
        {
            out.push(Violation {
                rule: "internal-binary-identity",
                message: format!(
                    "internal binary node {} must use the identity factor",
                    n.id
                ),
                subjects: vec![n.id.clone()],
            });
        }
    }

    if let Some(decision) = decisions.first() {
        if !d.parents(&decision.id).is_empty() {
            out.push(Violation {
                rule: "decision-root",
                message: format!("decision node {} must have no parents", decision.id),
                subjects: vec![decision.id.clone()],
            });
        }
    }

    if kahn_order(d).is_none() {
        out.push(Violation {
            rule: "acyclicity",
            message: "the graph contains a cycle".to_string(),
            subjects: vec![],
        });
    } else if let Some(decision) = decisions.first() {
        // Reachability only makes sense on an acyclic graph with a root.
        let mut reachable = BTreeSet::new();
        let mut stack = vec![decision.id.as_str()];
        while let Some(id) = stack.pop() {
            if reachable.insert(id) {
                stack.extend(d.children(id));
            }
        }
        for n in d.chance_nodes() {
            if !reachable.contains(n.id.as_str()) {
                out.push(Violation {
                    rule: "reachable-from-decision",
                    message: format!("chance node {} is not reachable from the decision node", n.id),
                    subjects: vec![n.id.clone()],
                });
            }
        }
    }

    ValidationReport::from_violations(out)
}

/// Kahn's algorithm with a lexicographic frontier; `None` on a cycle.
fn kahn_order(d: &InfluenceDiagram) -> Option<Vec<NodeId>> {
    let mut indegree: BTreeMap<&str, usize> =
        d.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
    let mut dedup = BTreeSet::new();
    for (p, c) in &d.edges {
        if !indegree.contains_key(p.as_str()) || !indegree.contains_key(c.as_str()) {
            continue;
        }
        if dedup.insert((p.as_str(), c.as_str())) {
            *indegree.get_mut(c.as_str()).unwrap() += 1;
        }
    }
    // BTreeSet frontier gives the lexicographically smallest ready node.
    let mut frontier: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, deg)| **deg == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut order = Vec::with_capacity(d.nodes.len());
    while let Some(&next) = frontier.iter().next() {
        frontier.remove(next);
        order.push(next.to_string());
        for child in d.children(next) {
            let deg = indegree.get_mut(child).unwrap();
            *deg -= 1;
            if *deg == 0 {
                frontier.insert(child);
            }
        }
    }
    (order.len() == d.nodes.len()).then_some(order)
}

/// Deterministic topological order: decision node first, parents before
/// children, ties broken by lexicographic node id.
pub fn topological_order(d: &InfluenceDiagram) -> Result<Vec<NodeId>, DiagramError> {
    let report = validate_structure(d);
    if !report.ok {
        return Err(DiagramError::Invalid(
            report
                .violations
                .iter()
                .map(|v| v.rule)
                .collect::<Vec<_>>()
                .join(", "),
        ));
    }
    // Valid diagrams have the decision node as the unique source, so Kahn's
    // algorithm emits it first.
    Ok(kahn_order(d).expect("validated diagram is acyclic"))
}

/// Assign the diagram to its evaluation regime.
pub fn classify_tractability(d: &InfluenceDiagram) -> Result<StructureClass, DiagramError> {
    let report = validate_structure(d);
    if !report.ok {
        return Err(DiagramError::Invalid(
            report
                .violations
                .iter()
                .map(|v| v.rule)
                .collect::<Vec<_>>()
                .join(", "),
        ));
    }
    let decision_id = d.decision_node().expect("validated").id.clone();

    let mut chance_ids: Vec<&str> = d.chance_nodes().map(|n| n.id.as_str()).collect();
    chance_ids.sort_unstable();

    let all_parents_decision_only = chance_ids
        .iter()
        .all(|id| d.parents(id) == vec![decision_id.as_str()]);
    if all_parents_decision_only {
        return Ok(StructureClass {
            tag: StructureTag::ConditionallyIndependent,
            detail: "every chance node depends only on the decision node".to_string(),
        });
    }

    for id in &chance_ids {
        if !d.is_internal(id) {
            continue;
        }
        let node = d.node(id).expect("validated");
        if node.domain != Some(Domain::Binary) {
            return Ok(StructureClass {
                tag: StructureTag::Intractable,
                detail: format!("internal node {id} is not binary"),
            });
        }
        if node.factor != FactorSpec::Identity {
            return Ok(StructureClass {
                tag: StructureTag::Intractable,
                detail: format!("internal node {id} does not use the identity factor"),
            });
        }
    }

    let has_chance_edge = chance_ids.iter().any(|id| !d.chance_parents(id).is_empty());
    if has_chance_edge {
        Ok(StructureClass {
            tag: StructureTag::BinaryGated,
            detail: "all internal nodes are binary with identity factors".to_string(),
        })
    } else {
        // No chance-to-chance edge and yet not conditionally independent can
        // only mean a chance node missing the direct decision edge; it is
        // still the Eq.-2 regime with an empty gate set.
        Ok(StructureClass {
            tag: StructureTag::BinaryGated,
            detail: "no chance-to-chance edges but parent sets differ from the independent form"
                .to_string(),
        })
    }
}

/// Content hash of the canonical serialized form, hex-encoded SHA-256.
pub fn diagram_fingerprint(d: &InfluenceDiagram) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(serialize_diagram_spec(d).as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_binary() -> InfluenceDiagram {
        parse_diagram_spec(
            r#"{
              "task": "toy",
              "nodes": [
                {"id": "A", "kind": "decision"},
                {"id": "X1", "kind": "chance", "domain": "binary", "description": "first outcome"},
                {"id": "X2", "kind": "chance", "domain": "binary", "description": "second outcome"}
              ],
              "edges": [["A", "X1"], ["A", "X2"]]
            }"#,
        )
        .unwrap()
    }

    pub(crate) fn movie_diagram() -> InfluenceDiagram {
        parse_diagram_spec(
            r#"{
              "task": "movie recommendation",
              "nodes": [
                {"id": "A", "kind": "decision"},
                {"id": "S", "kind": "chance", "domain": "categorical",
                 "labels": ["1", "2", "3", "4", "5"], "scores": [1, 2, 3, 4, 5],
                 "description": "the score the user would give the movie"},
                {"id": "G1", "kind": "chance", "domain": "binary",
                 "description": "the movie belongs to the comedy genre"},
                {"id": "G2", "kind": "chance", "domain": "binary",
                 "description": "the movie belongs to the romance genre"}
              ],
              "edges": [["A", "S"], ["A", "G1"], ["A", "G2"]]
            }"#,
        )
        .unwrap()
    }

    fn gated_chain() -> InfluenceDiagram {
        parse_diagram_spec(
            r#"{
              "task": "chain",
              "nodes": [
                {"id": "A", "kind": "decision"},
                {"id": "X1", "kind": "chance", "domain": "binary", "description": "gate"},
                {"id": "X2", "kind": "chance", "domain": "binary", "description": "outcome"}
              ],
              "edges": [["A", "X1"], ["X1", "X2"]]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn parse_echoes_structure() {
        let d = two_binary();
        assert_eq!(d.nodes.len(), 3);
        assert_eq!(d.edges.len(), 2);
        assert_eq!(d.decision_node().unwrap().id, "A");
    }

    #[test]
    fn parse_rejects_dangling_edge() {
        let err = parse_diagram_spec(
            r#"{
              "task": "bad",
              "nodes": [
                {"id": "A", "kind": "decision"},
                {"id": "X1", "kind": "chance", "domain": "binary", "description": "x"}
              ],
              "edges": [["A", "X9"]]
            }"#,
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "dangling edge reference: X9");
    }

    #[test]
    fn parse_rejects_unknown_keys() {
        let err = parse_diagram_spec(r#"{"task": "t", "nodes": [], "edges": [], "extra": 1}"#)
            .unwrap_err();
        assert!(err.to_string().contains("unknown field"));
    }

    #[test]
    fn parse_rejects_unknown_kind_and_domain() {
        let err = parse_diagram_spec(
            r#"{"task":"t","nodes":[{"id":"A","kind":"utility"}],"edges":[]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, DiagramError::UnknownKind(_)));
        let err = parse_diagram_spec(
            r#"{"task":"t","nodes":[{"id":"A","kind":"chance","domain":"gaussian","description":"x"}],"edges":[]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, DiagramError::UnknownDomain(_)));
    }

    #[test]
    fn movie_diagram_parses_and_validates() {
        let d = movie_diagram();
        assert_eq!(d.nodes.len(), 4);
        assert!(validate_structure(&d).ok);
        assert_eq!(
            classify_tractability(&d).unwrap().tag,
            StructureTag::ConditionallyIndependent
        );
    }

    #[test]
    fn validate_flags_cycle() {
        let mut d = two_binary();
        d.edges.push(("X1".into(), "X2".into()));
        d.edges.push(("X2".into(), "X1".into()));
        let report = validate_structure(&d);
        assert!(!report.ok);
        assert!(report.violations.iter().any(|v| v.rule == "acyclicity"));
    }

    #[test]
    fn validate_flags_two_decisions() {
        let mut d = two_binary();
        d.nodes.push(NodeSpec {
            id: "B".into(),
            kind: NodeKind::Decision,
            domain: None,
            description: String::new(),
            factor: FactorSpec::Identity,
        });
        let report = validate_structure(&d);
        assert!(report
            .violations
            .iter()
            .any(|v| v.rule == "singular-decision-root"));
    }

    #[test]
    fn validate_flags_unreachable_and_parented_decision() {
        let mut d = two_binary();
        d.edges.retain(|(_, c)| c != "X2");
        let report = validate_structure(&d);
        assert!(report
            .violations
            .iter()
            .any(|v| v.rule == "reachable-from-decision" && v.subjects == vec!["X2".to_string()]));

        let mut d = two_binary();
        d.edges.push(("X1".into(), "A".into()));
        let report = validate_structure(&d);
        // X1 -> A also creates a cycle through A -> X1; both rules may fire,
        // the root rule must be among them.
        assert!(report.violations.iter().any(|v| v.rule == "decision-root"));
    }

    #[test]
    fn validate_flags_empty_description_and_bad_categorical() {
        let mut d = two_binary();
        d.nodes[1].description = String::new();
        assert!(validate_structure(&d)
            .violations
            .iter()
            .any(|v| v.rule == "chance-description"));

        let mut d = two_binary();
        d.nodes[1].domain = Some(Domain::Categorical(vec![
            CategoryLabel { label: "a".into(), score: 1.0 },
            CategoryLabel { label: "b".into(), score: 1.0 },
        ]));
        assert!(validate_structure(&d)
            .violations
            .iter()
            .any(|v| v.rule == "categorical-labels"));
    }

    #[test]
    fn validate_flags_internal_factor_rules() {
        let mut d = gated_chain();
        d.nodes[1].factor = FactorSpec::ConstantOne;
        assert!(validate_structure(&d)
            .violations
            .iter()
            .any(|v| v.rule == "internal-binary-identity"));

        let mut d = gated_chain();
        d.nodes[1].factor = FactorSpec::ScoreMap(BTreeMap::from([("1".to_string(), 1.0)]));
        let report = validate_structure(&d);
        assert!(report.violations.iter().any(|v| v.rule == "score-map-on-internal"));
    }

    #[test]
    fn classify_gated_chain() {
        let c = classify_tractability(&gated_chain()).unwrap();
        assert_eq!(c.tag, StructureTag::BinaryGated);
    }

    #[test]
    fn classify_intractable_names_offender() {
        let mut d = gated_chain();
        d.nodes[1].domain = Some(Domain::Categorical(vec![
            CategoryLabel { label: "lo".into(), score: 0.0 },
            CategoryLabel { label: "hi".into(), score: 1.0 },
        ]));
        let c = classify_tractability(&d).unwrap();
        assert_eq!(c.tag, StructureTag::Intractable);
        assert!(c.detail.contains("X1"));
    }

    #[test]
    fn classify_rejects_invalid_diagram() {
        let mut d = two_binary();
        d.edges.push(("X1".into(), "X1".into()));
        assert!(classify_tractability(&d).is_err());
    }

    #[test]
    fn topo_order_examples() {
        assert_eq!(topological_order(&two_binary()).unwrap(), ["A", "X1", "X2"]);

        let d = parse_diagram_spec(
            r#"{
              "task": "t",
              "nodes": [
                {"id": "A", "kind": "decision"},
                {"id": "X1", "kind": "chance", "domain": "binary", "description": "x"},
                {"id": "X2", "kind": "chance", "domain": "binary", "description": "y"}
              ],
              "edges": [["A", "X2"], ["X2", "X1"]]
            }"#,
        )
        .unwrap();
        assert_eq!(topological_order(&d).unwrap(), ["A", "X2", "X1"]);
    }

    #[test]
    fn decision_only_diagram_rejected() {
        let d = parse_diagram_spec(
            r#"{"task":"t","nodes":[{"id":"A","kind":"decision"}],"edges":[]}"#,
        )
        .unwrap();
        let report = validate_structure(&d);
        assert!(report
            .violations
            .iter()
            .any(|v| v.rule == "chance-node-count"));
        assert!(topological_order(&d).is_err());
    }

    #[test]
    fn roundtrip_structural_equality() {
        for d in [two_binary(), movie_diagram(), gated_chain()] {
            let text = serialize_diagram_spec(&d);
            let back = parse_diagram_spec(&text).unwrap();
            assert_eq!(d, back);
        }
    }

    #[test]
    fn chance_edge_breaks_conditional_independence() {
        let mut d = movie_diagram();
        d.edges.push(("G1".into(), "G2".into()));
        let c = classify_tractability(&d).unwrap();
        assert_ne!(c.tag, StructureTag::ConditionallyIndependent);
    }

    #[test]
    fn fingerprint_is_stable_and_content_sensitive() {
        let d = movie_diagram();
        assert_eq!(diagram_fingerprint(&d), diagram_fingerprint(&d));
        let mut d2 = d.clone();
        d2.task.push('!');
        assert_ne!(diagram_fingerprint(&d), diagram_fingerprint(&d2));
    }
}
