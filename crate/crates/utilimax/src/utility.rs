//! Expected-utility evaluation for candidate answers.
//!
//! Three factorized evaluation paths cover the tractable regimes
//! (conditionally independent, binary gated, and the all-binary special
//! case), and [`brute_force_eu`] provides an independent oracle that
//! enumerates the full joint distribution built by
//! [`derive_joint_from_estimates`]. The factorized and enumerated paths must
//! agree to 1e-12 on every valid input; the test suites assert exactly that.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::diagram::{
    classify_tractability, topological_order, Domain, FactorSpec, InfluenceDiagram, NodeId,
    NodeKind, StructureTag,
};

/// Tolerance for a categorical distribution summing to one.
pub const DIST_SUM_TOLERANCE: f64 = 1e-6;
/// Tolerance for CPT rows in a joint model summing to one.
pub const CPT_ROW_TOLERANCE: f64 = 1e-12;
/// Upper bound on the number of assignments [`brute_force_eu`] will enumerate.
pub const MAX_JOINT_ASSIGNMENTS: u64 = 1 << 20;

#[derive(Debug, Error)]
pub enum UtilityError {
    #[error("diagram is not in the required regime: expected {expected}, got {actual}")]
    WrongRegime { expected: String, actual: String },
    #[error("missing estimate for node {0}")]
    MissingEstimate(NodeId),
    #[error("estimate for unknown node {0}")]
    UnknownNode(NodeId),
    #[error("estimate kind mismatched to node {node}: {detail}")]
    KindMismatch { node: NodeId, detail: String },
    #[error("probability out of range: {node} = {value}")]
    ProbabilityOutOfRange { node: NodeId, value: f64 },
    #[error("categorical distribution on {node} sums to {sum}, not 1")]
    DistributionNotNormalized { node: NodeId, sum: f64 },
    #[error("categorical distribution on {node} uses unknown label {label}")]
    UnknownLabel { node: NodeId, label: String },
    #[error("scalar estimate for {node} = {value} outside the label score range [{lo}, {hi}]")]
    ScalarOutOfScoreRange {
        node: NodeId,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("estimate for {0} is not finite")]
    NotFinite(NodeId),
    #[error("non-binary node present: {0}")]
    NonBinaryNode(NodeId),
    #[error("internal node {0} requires a probability estimate")]
    InternalNotProbability(NodeId),
    #[error("candidate {candidate}: objective not computed")]
    ObjectiveMissing { candidate: String },
    #[error("empty candidate list")]
    EmptyCandidates,
    #[error("joint too large: {assignments} assignments exceed the {max} limit")]
    JointTooLarge { assignments: u64, max: u64 },
    #[error("CPT row missing for node {node} under parent assignment {assignment:?}")]
    CptRowMissing {
        node: NodeId,
        assignment: Vec<usize>,
    },
    #[error("CPT row for node {node} sums to {sum}, not 1")]
    CptRowNotNormalized { node: NodeId, sum: f64 },
    #[error("diagram error: {0}")]
    Diagram(#[from] crate::diagram::DiagramError),
}

/// One elicited estimate for a chance node, conditioned on the candidate
/// answer (and, in the gated regime, on all parents being active).
#[derive(Debug, Clone, PartialEq)]
pub enum EstimateEntry {
    Probability(f64),
    CategoricalDist(BTreeMap<String, f64>),
    ScalarExpectation(f64),
}

/// A candidate answer together with its per-node estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEstimates {
    pub candidate_id: String,
    pub answer_text: String,
    pub per_node: BTreeMap<NodeId, EstimateEntry>,
    pub objective: Option<f64>,
}

impl CandidateEstimates {
    pub fn new(candidate_id: impl Into<String>) -> Self {
        CandidateEstimates {
            candidate_id: candidate_id.into(),
            answer_text: String::new(),
            per_node: BTreeMap::new(),
            objective: None,
        }
    }

    pub fn with_entry(mut self, node: impl Into<String>, entry: EstimateEntry) -> Self {
        self.per_node.insert(node.into(), entry);
        self
    }
}

/// Ranking of evaluated candidates, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub best_candidate_id: String,
    pub ranked: Vec<(String, f64)>,
    pub tie_note: Option<String>,
}

// ---------------------------------------------------------------------------
// Estimate validation and per-node expectations
// ---------------------------------------------------------------------------

fn check_estimate_coverage(
    d: &InfluenceDiagram,
    est: &CandidateEstimates,
) -> Result<(), UtilityError> {
    for n in d.chance_nodes() {
        if !est.per_node.contains_key(&n.id) {
            return Err(UtilityError::MissingEstimate(n.id.clone()));
        }
    }
    for id in est.per_node.keys() {
        match d.node(id) {
            Some(n) if n.kind == NodeKind::Chance => {}
            _ => return Err(UtilityError::UnknownNode(id.clone())),
        }
    }
    Ok(())
}

fn factor_scores(domain: &Domain, factor: &FactorSpec, node: &str) -> Result<BTreeMap<String, f64>, UtilityError> {
    match (domain, factor) {
        (Domain::Categorical(labels), FactorSpec::Identity) => {
            Ok(labels.iter().map(|l| (l.label.clone(), l.score)).collect())
        }
        (Domain::Categorical(labels), FactorSpec::ConstantOne) => {
            Ok(labels.iter().map(|l| (l.label.clone(), 1.0)).collect())
        }
        (Domain::Categorical(_), FactorSpec::ScoreMap(map)) => Ok(map.clone()),
        _ => Err(UtilityError::KindMismatch {
            node: node.to_string(),
            detail: "factor scores are only defined for categorical nodes".to_string(),
        }),
    }
}

/// E[f(X)] for one node given its estimate. In the conditionally independent
/// regime the conditioning set is the answer alone; in the gated regime the
/// estimate is read as conditioned on all parents being active, which leaves
/// the arithmetic unchanged.
pub fn node_expectation(
    d: &InfluenceDiagram,
    node_id: &str,
    entry: &EstimateEntry,
) -> Result<f64, UtilityError> {
    let node = d
        .node(node_id)
        .ok_or_else(|| UtilityError::UnknownNode(node_id.to_string()))?;
    let domain = node
        .domain
        .as_ref()
        .ok_or_else(|| UtilityError::UnknownNode(node_id.to_string()))?;

    match (domain, entry) {
        (Domain::Binary, EstimateEntry::Probability(p)) => {
            if !p.is_finite() {
                return Err(UtilityError::NotFinite(node_id.to_string()));
            }
            if !(0.0..=1.0).contains(p) {
                return Err(UtilityError::ProbabilityOutOfRange {
                    node: node_id.to_string(),
                    value: *p,
                });
            }
            Ok(match node.factor {
                FactorSpec::ConstantOne => 1.0,
                _ => *p,
            })
        }
        (Domain::Categorical(labels), EstimateEntry::CategoricalDist(dist)) => {
            let declared: BTreeMap<&str, ()> =
                labels.iter().map(|l| (l.label.as_str(), ())).collect();
            let mut sum = 0.0;
            for (label, p) in dist {
                if !declared.contains_key(label.as_str()) {
                    return Err(UtilityError::UnknownLabel {
                        node: node_id.to_string(),
                        label: label.clone(),
                    });
                }
                if !p.is_finite() {
                    return Err(UtilityError::NotFinite(node_id.to_string()));
                }
                if !(0.0..=1.0).contains(p) {
                    return Err(UtilityError::ProbabilityOutOfRange {
                        node: node_id.to_string(),
                        value: *p,
                    });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > DIST_SUM_TOLERANCE {
                return Err(UtilityError::DistributionNotNormalized {
                    node: node_id.to_string(),
                    sum,
                });
            }
            let scores = factor_scores(domain, &node.factor, node_id)?;
            Ok(dist
                .iter()
                .map(|(label, p)| p * scores.get(label).copied().unwrap_or(0.0))
                .sum())
        }
        (Domain::Categorical(_), EstimateEntry::ScalarExpectation(v)) => {
            // The expected factor value elicited directly as one scalar.
            if !v.is_finite() {
                return Err(UtilityError::NotFinite(node_id.to_string()));
            }
            if node.factor == FactorSpec::ConstantOne {
                return Ok(1.0);
            }
            let scores = factor_scores(domain, &node.factor, node_id)?;
            let lo = scores.values().copied().fold(f64::INFINITY, f64::min);
            let hi = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
            if *v < lo || *v > hi {
                return Err(UtilityError::ScalarOutOfScoreRange {
                    node: node_id.to_string(),
                    value: *v,
                    lo,
                    hi,
                });
            }
            Ok(*v)
        }
        (Domain::ScalarExpectation, EstimateEntry::ScalarExpectation(v)) => {
            if !v.is_finite() {
                return Err(UtilityError::NotFinite(node_id.to_string()));
            }
            Ok(match node.factor {
                FactorSpec::ConstantOne => 1.0,
                _ => *v,
            })
        }
        (_, entry) => Err(UtilityError::KindMismatch {
            node: node_id.to_string(),
            detail: format!("{entry:?} does not fit the node domain"),
        }),
    }
}

// ---------------------------------------------------------------------------
// Factorized evaluation paths
// ---------------------------------------------------------------------------

fn require_regime(
    d: &InfluenceDiagram,
    wanted: &[StructureTag],
) -> Result<StructureTag, UtilityError> {
    let class = classify_tractability(d)?;
    if wanted.contains(&class.tag) {
        Ok(class.tag)
    } else {
        Err(UtilityError::WrongRegime {
            expected: wanted
                .iter()
                .map(|t| t.to_string())
                .collect::<Vec<_>>()
                .join(" or "),
            actual: class.tag.to_string(),
        })
    }
}

/// Expected utility under conditional independence: the product of per-node
/// expectations conditioned on the answer.
pub fn expected_utility_ci(
    d: &InfluenceDiagram,
    est: &CandidateEstimates,
) -> Result<f64, UtilityError> {
    require_regime(d, &[StructureTag::ConditionallyIndependent])?;
    check_estimate_coverage(d, est)?;
    let mut product = 1.0;
    for n in d.chance_nodes() {
        product *= node_expectation(d, &n.id, &est.per_node[&n.id])?;
    }
    Ok(product)
}

/// Expected utility under binary gating: internal nodes contribute their
/// activation probability given active parents, leaves their conditional
/// expected factor value.
pub fn expected_utility_gated(
    d: &InfluenceDiagram,
    est: &CandidateEstimates,
) -> Result<f64, UtilityError> {
    require_regime(d, &[StructureTag::BinaryGated])?;
    check_estimate_coverage(d, est)?;
    let mut product = 1.0;
    for n in d.chance_nodes() {
        let entry = &est.per_node[&n.id];
        if d.is_internal(&n.id) && !matches!(entry, EstimateEntry::Probability(_)) {
            return Err(UtilityError::InternalNotProbability(n.id.clone()));
        }
        product *= node_expectation(d, &n.id, entry)?;
    }
    Ok(product)
}

/// The all-binary special case: the plain product of activation
/// probabilities. Valid on both tractable regimes.
pub fn expected_utility_all_binary(
    d: &InfluenceDiagram,
    est: &CandidateEstimates,
) -> Result<f64, UtilityError> {
    require_regime(
        d,
        &[
            StructureTag::ConditionallyIndependent,
            StructureTag::BinaryGated,
        ],
    )?;
    for n in d.chance_nodes() {
        if n.domain != Some(Domain::Binary) || n.factor != FactorSpec::Identity {
            return Err(UtilityError::NonBinaryNode(n.id.clone()));
        }
    }
    check_estimate_coverage(d, est)?;
    let mut product = 1.0;
    for n in d.chance_nodes() {
        match &est.per_node[&n.id] {
            EstimateEntry::Probability(p) => {
                if !(0.0..=1.0).contains(p) {
                    return Err(UtilityError::ProbabilityOutOfRange {
                        node: n.id.clone(),
                        value: *p,
                    });
                }
                product *= p;
            }
            _ => {
                return Err(UtilityError::KindMismatch {
                    node: n.id.clone(),
                    detail: "all-binary evaluation takes probability estimates".to_string(),
                })
            }
        }
    }
    Ok(product)
}

/// Evaluate with the regime-appropriate factorized path.
pub fn expected_utility(
    d: &InfluenceDiagram,
    est: &CandidateEstimates,
) -> Result<f64, UtilityError> {
    match classify_tractability(d)?.tag {
        StructureTag::ConditionallyIndependent => expected_utility_ci(d, est),
        StructureTag::BinaryGated => expected_utility_gated(d, est),
        StructureTag::Intractable => Err(UtilityError::WrongRegime {
            expected: "ConditionallyIndependent or BinaryGated".to_string(),
            actual: "Intractable".to_string(),
        }),
    }
}

// ---------------------------------------------------------------------------
// Joint model and the enumeration oracle
// ---------------------------------------------------------------------------

/// One outcome a node can take in the joint model.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// The factor value f(x) this outcome contributes to the utility product.
    pub factor_value: f64,
    /// False for the gated-off outcome.
    pub active: bool,
}

/// A chance node's full conditional probability table, decision value fixed
/// to one candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct JointNode {
    pub node_id: NodeId,
    /// Chance-node parents, sorted by id; CPT keys align with this order.
    pub chance_parents: Vec<NodeId>,
    /// Outcome 0 is the inactive outcome whenever the node has chance parents.
    pub outcomes: Vec<Outcome>,
    /// Parent outcome indices -> distribution over this node's outcomes.
    pub cpt: BTreeMap<Vec<usize>, Vec<f64>>,
}

/// Explicit joint distribution over all chance nodes, in topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub nodes: Vec<JointNode>,
}

impl JointModel {
    pub fn assignment_count(&self) -> u64 {
        self.nodes
            .iter()
            .map(|n| n.outcomes.len() as u64)
            .try_fold(1u64, u64::checked_mul)
            .unwrap_or(u64::MAX)
    }

    /// Check the row-sum and gating invariants.
    pub fn validate(&self) -> Result<(), UtilityError> {
        let index: BTreeMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.node_id.as_str(), i))
            .collect();
        for node in &self.nodes {
            for (key, row) in &node.cpt {
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > CPT_ROW_TOLERANCE {
                    return Err(UtilityError::CptRowNotNormalized {
                        node: node.node_id.clone(),
                        sum,
                    });
                }
                let any_parent_off = key.iter().zip(&node.chance_parents).any(|(oi, pid)| {
                    let parent = &self.nodes[index[pid.as_str()]];
                    !parent.outcomes[*oi].active
                });
                if any_parent_off && (row[0] - 1.0).abs() > CPT_ROW_TOLERANCE {
                    return Err(UtilityError::CptRowNotNormalized {
                        node: node.node_id.clone(),
                        sum: row[0],
                    });
                }
            }
        }
        Ok(())
    }
}

/// Exact expected utility by enumerating every full assignment.
///
/// This is the independent oracle for the factorized paths: it never touches
/// the per-node expectation arithmetic, only CPT lookups and the raw utility
/// product.
pub fn brute_force_eu(d: &InfluenceDiagram, jm: &JointModel) -> Result<f64, UtilityError> {
    let total = jm.assignment_count();
    if total > MAX_JOINT_ASSIGNMENTS {
        return Err(UtilityError::JointTooLarge {
            assignments: total,
            max: MAX_JOINT_ASSIGNMENTS,
        });
    }
    let order = topological_order(d)?;
    let position: BTreeMap<&str, usize> = jm
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.node_id.as_str(), i))
        .collect();
    // Nodes must enumerate parents-first.
    let node_order: Vec<usize> = order
        .iter()
        .filter_map(|id| position.get(id.as_str()).copied())
        .collect();
    debug_assert_eq!(node_order.len(), jm.nodes.len());

    let mut assignment = vec![0usize; jm.nodes.len()];
    let mut expected = 0.0;
    loop {
        let mut prob = 1.0;
        let mut utility = 1.0;
        for &ni in &node_order {
            let node = &jm.nodes[ni];
            let key: Vec<usize> = node
                .chance_parents
                .iter()
                .map(|pid| assignment[position[pid.as_str()]])
                .collect();
            let row = node
                .cpt
                .get(&key)
                .ok_or_else(|| UtilityError::CptRowMissing {
                    node: node.node_id.clone(),
                    assignment: key.clone(),
                })?;
            let outcome_idx = assignment[ni];
            prob *= row[outcome_idx];
            utility *= node.outcomes[outcome_idx].factor_value;
            if prob == 0.0 {
                break;
            }
        }
        expected += prob * utility;

        // Mixed-radix increment over outcome indices.
        let mut i = 0;
        loop {
            if i == assignment.len() {
                return Ok(expected);
            }
            assignment[i] += 1;
            if assignment[i] < jm.nodes[i].outcomes.len() {
                break;
            }
            assignment[i] = 0;
            i += 1;
        }
    }
}

/// Build the explicit joint distribution implied by a candidate's estimates,
/// so the factorized and brute-force paths consume identical inputs.
///
/// Scalar-expectation leaves become two-point distributions {f = 0, f = v}
/// with all conditional mass on v, which reproduces the elicited expectation;
/// categorical nodes elicited as a scalar become a two-point mixture over the
/// lowest- and highest-scoring labels with the same mean.
pub fn derive_joint_from_estimates(
    d: &InfluenceDiagram,
    est: &CandidateEstimates,
) -> Result<JointModel, UtilityError> {
    require_regime(
        d,
        &[
            StructureTag::ConditionallyIndependent,
            StructureTag::BinaryGated,
        ],
    )?;
    check_estimate_coverage(d, est)?;

    let order = topological_order(d)?;
    let mut nodes = Vec::new();
    for id in order.iter().filter(|id| {
        d.node(id)
            .map_or(false, |n| n.kind == NodeKind::Chance)
    }) {
        let node = d.node(id).expect("listed");
        let entry = &est.per_node[id];
        if d.is_internal(id) && !matches!(entry, EstimateEntry::Probability(_)) {
            return Err(UtilityError::InternalNotProbability(id.clone()));
        }
        // Validates ranges and kind compatibility as a side effect.
        node_expectation(d, id, entry)?;

        let chance_parents: Vec<NodeId> =
            d.chance_parents(id).iter().map(|s| s.to_string()).collect();
        let gated = !chance_parents.is_empty();

        let (outcomes, on_row) = match (node.domain.as_ref().expect("validated"), entry) {
            (Domain::Binary, EstimateEntry::Probability(p)) => {
                let f = |x: f64| match &node.factor {
                    FactorSpec::ConstantOne => 1.0,
                    _ => x,
                };
                (
                    vec![
                        Outcome { factor_value: f(0.0), active: false },
                        Outcome { factor_value: f(1.0), active: true },
                    ],
                    vec![1.0 - p, *p],
                )
            }
            (Domain::Categorical(labels), EstimateEntry::CategoricalDist(dist)) => {
                let scores = factor_scores(
                    node.domain.as_ref().unwrap(),
                    &node.factor,
                    id,
                )?;
                let mut outcomes = Vec::new();
                let mut row = Vec::new();
                for l in labels {
                    outcomes.push(Outcome {
                        factor_value: scores[&l.label],
                        active: true,
                    });
                    row.push(dist.get(&l.label).copied().unwrap_or(0.0));
                }
                (outcomes, row)
            }
            (Domain::Categorical(_), EstimateEntry::ScalarExpectation(_)) => {
                let scores = factor_scores(
                    node.domain.as_ref().unwrap(),
                    &node.factor,
                    id,
                )?;
                let lo = scores.values().copied().fold(f64::INFINITY, f64::min);
                let hi = scores.values().copied().fold(f64::NEG_INFINITY, f64::max);
                let v = node_expectation(d, id, entry)?;
                if hi == lo {
                    // Constant factor: one outcome carries all the mass.
                    (vec![Outcome { factor_value: lo, active: true }], vec![1.0])
                } else {
                    // Two-point mixture with mean v.
                    let p_hi = (v - lo) / (hi - lo);
                    (
                        vec![
                            Outcome { factor_value: lo, active: true },
                            Outcome { factor_value: hi, active: true },
                        ],
                        vec![1.0 - p_hi, p_hi],
                    )
                }
            }
            (Domain::ScalarExpectation, EstimateEntry::ScalarExpectation(v)) => {
                let value = match &node.factor {
                    FactorSpec::ConstantOne => 1.0,
                    _ => *v,
                };
                (
                    vec![
                        Outcome { factor_value: 0.0, active: false },
                        Outcome { factor_value: value, active: true },
                    ],
                    vec![0.0, 1.0],
                )
            }
            (_, entry) => {
                return Err(UtilityError::KindMismatch {
                    node: id.clone(),
                    detail: format!("{entry:?} does not fit the node domain"),
                })
            }
        };

        let (outcomes, on_row) = if gated && outcomes.iter().all(|o| o.active) {
            // Prepend the inactive outcome so the gated-off rows have a
            // zero-factor target.
            let mut full = vec![Outcome { factor_value: 0.0, active: false }];
            full.extend(outcomes);
            let mut row = vec![0.0];
            row.extend(on_row);
            (full, row)
        } else {
            (outcomes, on_row)
        };

        let mut cpt = BTreeMap::new();
        if chance_parents.is_empty() {
            cpt.insert(Vec::new(), on_row);
        } else {
            let parent_sizes: Vec<usize> = chance_parents
                .iter()
                .map(|pid| {
                    nodes
                        .iter()
                        .find(|jn: &&JointNode| jn.node_id == *pid)
                        .expect("parents precede children in topological order")
                        .outcomes
                        .len()
                })
                .collect();
            let parent_active: Vec<Vec<bool>> = chance_parents
                .iter()
                .map(|pid| {
                    nodes
                        .iter()
                        .find(|jn: &&JointNode| jn.node_id == *pid)
                        .unwrap()
                        .outcomes
                        .iter()
                        .map(|o| o.active)
                        .collect()
                })
                .collect();
            let mut key = vec![0usize; chance_parents.len()];
            loop {
                let all_active = key
                    .iter()
                    .enumerate()
                    .all(|(pi, oi)| parent_active[pi][*oi]);
                let row = if all_active {
                    on_row.clone()
                } else {
                    let mut off = vec![0.0; outcomes.len()];
                    off[0] = 1.0;
                    off
                };
                cpt.insert(key.clone(), row);

                let mut i = 0;
                loop {
                    if i == key.len() {
                        break;
                    }
                    key[i] += 1;
                    if key[i] < parent_sizes[i] {
                        break;
                    }
                    key[i] = 0;
                    i += 1;
                }
                if i == key.len() {
                    break;
                }
            }
        }

        nodes.push(JointNode {
            node_id: id.clone(),
            chance_parents,
            outcomes,
            cpt,
        });
    }

    Ok(JointModel { nodes })
}

// ---------------------------------------------------------------------------
// Candidate selection
// ---------------------------------------------------------------------------

/// Rank candidates by objective, best first. Exact ties break by ascending
/// candidate id and are recorded so reports can surface them.
pub fn select_optimal(results: &[CandidateEstimates]) -> Result<SelectionResult, UtilityError> {
    if results.is_empty() {
        return Err(UtilityError::EmptyCandidates);
    }
    let mut ranked = Vec::with_capacity(results.len());
    for c in results {
        let objective = c.objective.ok_or_else(|| UtilityError::ObjectiveMissing {
            candidate: c.candidate_id.clone(),
        })?;
        ranked.push((c.candidate_id.clone(), objective));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut tied = Vec::new();
    for pair in ranked.windows(2) {
        if pair[0].1 == pair[1].1 {
            tied.push(format!("{} = {}", pair[0].0, pair[1].0));
        }
    }
    Ok(SelectionResult {
        best_candidate_id: ranked[0].0.clone(),
        ranked,
        tie_note: (!tied.is_empty()).then(|| format!("exact ties: {}", tied.join(", "))),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagram::parse_diagram_spec;

    fn ci_two_binary() -> InfluenceDiagram {
        parse_diagram_spec(
            r#"{
              "task": "toy",
              "nodes": [
                {"id": "A", "kind": "decision"},
                {"id": "X1", "kind": "chance", "domain": "binary", "description": "first"},
                {"id": "X2", "kind": "chance", "domain": "binary", "description": "second"}
              ],
              "edges": [["A", "X1"], ["A", "X2"]]
            }"#,
        )
        .unwrap()
    }

    fn movie() -> InfluenceDiagram {
        parse_diagram_spec(
            r#"{
              "task": "movies",
              "nodes": [
                {"id": "A", "kind": "decision"},
                {"id": "S", "kind": "chance", "domain": "categorical",
                 "labels": ["1","2","3","4","5"], "scores": [1,2,3,4,5],
                 "description": "predicted score"},
                {"id": "G1", "kind": "chance", "domain": "binary", "description": "comedy"},
                {"id": "G2", "kind": "chance", "domain": "binary", "description": "romance"}
              ],
              "edges": [["A","S"],["A","G1"],["A","G2"]]
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
              "edges": [["A","X1"],["X1","X2"]]
            }"#,
        )
        .unwrap()
    }

    fn scalar_leaf_chain() -> InfluenceDiagram {
        parse_diagram_spec(
            r#"{
              "task": "chain",
              "nodes": [
                {"id": "A", "kind": "decision"},
                {"id": "X1", "kind": "chance", "domain": "binary", "description": "gate"},
                {"id": "X2", "kind": "chance", "domain": "scalar_expectation", "description": "payoff"}
              ],
              "edges": [["A","X1"],["X1","X2"]]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn ci_product_of_halves() {
        let d = ci_two_binary();
        let est = CandidateEstimates::new("c")
            .with_entry("X1", EstimateEntry::Probability(0.5))
            .with_entry("X2", EstimateEntry::Probability(0.5));
        assert_eq!(expected_utility_ci(&d, &est).unwrap(), 0.25);
    }

    #[test]
    fn movie_objective_example() {
        let d = movie();
        let est = CandidateEstimates::new("m1")
            .with_entry("S", EstimateEntry::ScalarExpectation(4.2))
            .with_entry("G1", EstimateEntry::Probability(0.9))
            .with_entry("G2", EstimateEntry::Probability(0.7));
        let eu = expected_utility_ci(&d, &est).unwrap();
        assert!((eu - 2.646).abs() < 1e-12);
    }

    #[test]
    fn categorical_dist_expectation() {
        let d = movie();
        let est = CandidateEstimates::new("m1")
            .with_entry(
                "S",
                EstimateEntry::CategoricalDist(BTreeMap::from([
                    ("5".to_string(), 0.5),
                    ("3".to_string(), 0.5),
                ])),
            )
            .with_entry("G1", EstimateEntry::Probability(1.0))
            .with_entry("G2", EstimateEntry::Probability(1.0));
        assert_eq!(expected_utility_ci(&d, &est).unwrap(), 4.0);
    }

    #[test]
    fn gated_chain_product() {
        let d = gated_chain();
        let est = CandidateEstimates::new("c")
            .with_entry("X1", EstimateEntry::Probability(0.8))
            .with_entry("X2", EstimateEntry::Probability(0.5));
        let eu = expected_utility_gated(&d, &est).unwrap();
        assert!((eu - 0.4).abs() < 1e-15);
        assert_eq!(
            expected_utility_all_binary(&d, &est).unwrap(),
            expected_utility_gated(&d, &est).unwrap()
        );
    }

    #[test]
    fn gated_scalar_leaf() {
        let d = scalar_leaf_chain();
        let est = CandidateEstimates::new("c")
            .with_entry("X1", EstimateEntry::Probability(0.8))
            .with_entry("X2", EstimateEntry::ScalarExpectation(2.5));
        let eu = expected_utility_gated(&d, &est).unwrap();
        assert!((eu - 2.0).abs() < 1e-15);

        let jm = derive_joint_from_estimates(&d, &est).unwrap();
        jm.validate().unwrap();
        let brute = brute_force_eu(&d, &jm).unwrap();
        assert!((brute - 2.0).abs() < 1e-15);
    }

    #[test]
    fn brute_force_matches_ci() {
        let d = ci_two_binary();
        let est = CandidateEstimates::new("c")
            .with_entry("X1", EstimateEntry::Probability(0.5))
            .with_entry("X2", EstimateEntry::Probability(0.5));
        let jm = derive_joint_from_estimates(&d, &est).unwrap();
        jm.validate().unwrap();
        assert_eq!(brute_force_eu(&d, &jm).unwrap(), 0.25);
    }

    #[test]
    fn brute_force_single_bernoulli() {
        let d = parse_diagram_spec(
            r#"{
              "task": "one",
              "nodes": [
                {"id": "A", "kind": "decision"},
                {"id": "X", "kind": "chance", "domain": "binary", "description": "event"}
              ],
              "edges": [["A","X"]]
            }"#,
        )
        .unwrap();
        let est = CandidateEstimates::new("c").with_entry("X", EstimateEntry::Probability(0.3));
        let jm = derive_joint_from_estimates(&d, &est).unwrap();
        assert!((brute_force_eu(&d, &jm).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn gated_cpt_has_forced_zero_row() {
        let d = gated_chain();
        let est = CandidateEstimates::new("c")
            .with_entry("X1", EstimateEntry::Probability(0.8))
            .with_entry("X2", EstimateEntry::Probability(0.5));
        let jm = derive_joint_from_estimates(&d, &est).unwrap();
        let x2 = jm.nodes.iter().find(|n| n.node_id == "X2").unwrap();
        assert_eq!(x2.cpt[&vec![0usize]], vec![1.0, 0.0]);
        assert_eq!(x2.cpt[&vec![1usize]], vec![0.5, 0.5]);
    }

    #[test]
    fn joint_too_large_guard() {
        let mut nodes = vec![r#"{"id": "A", "kind": "decision"}"#.to_string()];
        let mut edges = Vec::new();
        for i in 0..25 {
            nodes.push(format!(
                r#"{{"id": "X{i:02}", "kind": "chance", "domain": "binary", "description": "n{i}"}}"#
            ));
            edges.push(format!(r#"["A", "X{i:02}"]"#));
        }
        let text = format!(
            r#"{{"task": "big", "nodes": [{}], "edges": [{}]}}"#,
            nodes.join(","),
            edges.join(",")
        );
        let d = parse_diagram_spec(&text).unwrap();
        let mut est = CandidateEstimates::new("c");
        for i in 0..25 {
            est = est.with_entry(format!("X{i:02}"), EstimateEntry::Probability(0.5));
        }
        let jm = derive_joint_from_estimates(&d, &est).unwrap();
        assert!(matches!(
            brute_force_eu(&d, &jm),
            Err(UtilityError::JointTooLarge { .. })
        ));
    }

    #[test]
    fn estimate_validation_errors() {
        let d = ci_two_binary();
        let missing = CandidateEstimates::new("c").with_entry("X1", EstimateEntry::Probability(0.5));
        assert!(matches!(
            expected_utility_ci(&d, &missing),
            Err(UtilityError::MissingEstimate(id)) if id == "X2"
        ));

        let out_of_range = CandidateEstimates::new("c")
            .with_entry("X1", EstimateEntry::Probability(1.3))
            .with_entry("X2", EstimateEntry::Probability(0.5));
        assert!(matches!(
            expected_utility_ci(&d, &out_of_range),
            Err(UtilityError::ProbabilityOutOfRange { .. })
        ));

        let mismatched = CandidateEstimates::new("c")
            .with_entry("X1", EstimateEntry::ScalarExpectation(0.4))
            .with_entry("X2", EstimateEntry::Probability(0.5));
        assert!(matches!(
            expected_utility_ci(&d, &mismatched),
            Err(UtilityError::KindMismatch { .. })
        ));

        let unknown = CandidateEstimates::new("c")
            .with_entry("X1", EstimateEntry::Probability(0.5))
            .with_entry("X2", EstimateEntry::Probability(0.5))
            .with_entry("X9", EstimateEntry::Probability(0.5));
        assert!(matches!(
            expected_utility_ci(&d, &unknown),
            Err(UtilityError::UnknownNode(id)) if id == "X9"
        ));
    }

    #[test]
    fn all_binary_identity_and_annihilator() {
        let d = ci_two_binary();
        let ones = CandidateEstimates::new("c")
            .with_entry("X1", EstimateEntry::Probability(1.0))
            .with_entry("X2", EstimateEntry::Probability(1.0));
        assert_eq!(expected_utility_all_binary(&d, &ones).unwrap(), 1.0);

        let zero = CandidateEstimates::new("c")
            .with_entry("X1", EstimateEntry::Probability(0.0))
            .with_entry("X2", EstimateEntry::Probability(0.9));
        assert_eq!(expected_utility_all_binary(&d, &zero).unwrap(), 0.0);
        assert_eq!(expected_utility_ci(&d, &zero).unwrap(), 0.0);
    }

    #[test]
    fn all_binary_rejects_non_binary() {
        let d = movie();
        let est = CandidateEstimates::new("c")
            .with_entry("S", EstimateEntry::ScalarExpectation(4.0))
            .with_entry("G1", EstimateEntry::Probability(0.9))
            .with_entry("G2", EstimateEntry::Probability(0.9));
        assert!(matches!(
            expected_utility_all_binary(&d, &est),
            Err(UtilityError::NonBinaryNode(id)) if id == "S"
        ));
    }

    #[test]
    fn select_optimal_ordering_and_ties() {
        let mut a = CandidateEstimates::new("m1");
        a.objective = Some(2.646);
        let mut b = CandidateEstimates::new("m2");
        b.objective = Some(1.9);
        let sel = select_optimal(&[b.clone(), a.clone()]).unwrap();
        assert_eq!(sel.best_candidate_id, "m1");
        assert_eq!(sel.ranked[0], ("m1".to_string(), 2.646));
        assert!(sel.tie_note.is_none());

        let mut t1 = CandidateEstimates::new("b");
        t1.objective = Some(0.4);
        let mut t2 = CandidateEstimates::new("a");
        t2.objective = Some(0.4);
        let sel = select_optimal(&[t1, t2]).unwrap();
        assert_eq!(sel.best_candidate_id, "a");
        assert!(sel.tie_note.is_some());

        let mut single = CandidateEstimates::new("only");
        single.objective = Some(1.0);
        let sel = select_optimal(&[single]).unwrap();
        assert_eq!(sel.ranked.len(), 1);

        assert!(matches!(
            select_optimal(&[]),
            Err(UtilityError::EmptyCandidates)
        ));
    }

    #[test]
    fn categorical_scalar_elicitation_out_of_range() {
        let d = movie();
        let est = CandidateEstimates::new("c")
            .with_entry("S", EstimateEntry::ScalarExpectation(5.5))
            .with_entry("G1", EstimateEntry::Probability(0.9))
            .with_entry("G2", EstimateEntry::Probability(0.9));
        assert!(matches!(
            expected_utility_ci(&d, &est),
            Err(UtilityError::ScalarOutOfScoreRange { .. })
        ));
    }

    #[test]
    fn dist_normalization_enforced() {
        let d = movie();
        let est = CandidateEstimates::new("c")
            .with_entry(
                "S",
                EstimateEntry::CategoricalDist(BTreeMap::from([
                    ("5".to_string(), 0.6),
                    ("3".to_string(), 0.6),
                ])),
            )
            .with_entry("G1", EstimateEntry::Probability(1.0))
            .with_entry("G2", EstimateEntry::Probability(1.0));
        assert!(matches!(
            expected_utility_ci(&d, &est),
            Err(UtilityError::DistributionNotNormalized { .. })
        ));
    }
}
