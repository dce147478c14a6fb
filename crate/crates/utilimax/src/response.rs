//! Extraction and auditing of model responses.
//!
//! Responses carry a fenced `utilimax-json` block (the last one wins, since
//! drafts often precede the final answer). The parser validates every
//! estimate against the diagram, and [`audit_consistency`] recomputes each
//! objective with the regime-appropriate evaluation path: recomputation is
//! authoritative, so a model that misreports its own arithmetic or violates
//! its own argmax is flagged rather than trusted.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagram::{Domain, InfluenceDiagram, NodeKind};
use crate::prompt::PromptVariant;
use crate::utility::{expected_utility, CandidateEstimates, EstimateEntry, UtilityError};

/// Relative tolerance when comparing the model's reported objective with the
/// recomputed one; models round to a few significant digits.
pub const ARITHMETIC_DRIFT_TOLERANCE: f64 = 1e-3;

const BLOCK_TAG: &str = "```utilimax-json";

#[derive(Debug, Error, PartialEq)]
pub enum ResponseError {
    #[error("no utilimax-json block found")]
    NoBlock,
    #[error("malformed utilimax-json block: {0}")]
    MalformedBlock(String),
    #[error("probability out of range: {node} = {value}")]
    ProbabilityOutOfRange { node: String, value: f64 },
    #[error("estimate out of range: {node} = {value}")]
    EstimateOutOfRange { node: String, value: f64 },
    #[error("unknown node id: {0}")]
    UnknownNode(String),
    #[error("missing estimate for node {node} on candidate {candidate}")]
    MissingEstimate { candidate: String, node: String },
    #[error("duplicate candidate id: {0}")]
    DuplicateCandidate(String),
    #[error("answer references unknown candidate id: {0}")]
    AnswerNotAmongCandidates(String),
    #[error("baseline response must not carry candidate estimates")]
    UnexpectedCandidates,
    #[error("empty answer list")]
    EmptyAnswer,
    #[error("utilimax response must evaluate at least one candidate")]
    NoCandidates,
}

/// The decoded machine-readable portion of one model response.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedResponse {
    pub candidates: Vec<CandidateEstimates>,
    pub declared_answer: Vec<String>,
    pub raw_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConsistencyVerdict {
    Consistent,
    ArithmeticDrift,
    RankingMismatch,
    Unparseable,
}

impl std::fmt::Display for ConsistencyVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ConsistencyVerdict::Consistent => "Consistent",
            ConsistencyVerdict::ArithmeticDrift => "ArithmeticDrift",
            ConsistencyVerdict::RankingMismatch => "RankingMismatch",
            ConsistencyVerdict::Unparseable => "Unparseable",
        };
        write!(f, "{s}")
    }
}

/// Outcome of auditing a parsed response against the diagram.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub recomputed: BTreeMap<String, f64>,
    pub declared_matches_recomputed_ranking: bool,
    /// (candidate id, model value, recomputed value) beyond tolerance.
    pub arithmetic_deviations: Vec<(String, f64, f64)>,
    pub verdict: ConsistencyVerdict,
}

impl ConsistencyReport {
    /// Report for a response that never parsed.
    pub fn unparseable() -> Self {
        ConsistencyReport {
            recomputed: BTreeMap::new(),
            declared_matches_recomputed_ranking: false,
            arithmetic_deviations: Vec::new(),
            verdict: ConsistencyVerdict::Unparseable,
        }
    }
}

// ---------------------------------------------------------------------------
// Wire format
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct BlockFile {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    candidates: Vec<BlockCandidate>,
    answer: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockCandidate {
    id: String,
    estimates: BTreeMap<String, f64>,
    objective: f64,
}

/// Locate the last fenced `utilimax-json` block in a raw response.
fn extract_block(text: &str) -> Option<&str> {
    let start = text.rfind(BLOCK_TAG)?;
    let after_tag = &text[start + BLOCK_TAG.len()..];
    let body_start = after_tag.find('\n')? + 1;
    let body = &after_tag[body_start..];
    let end = body.find("```")?;
    Some(body[..end].trim())
}

/// Parse a raw model response for the given prompt variant, validating every
/// estimate against the diagram.
pub fn parse_response(
    text: &str,
    d: &InfluenceDiagram,
    variant: PromptVariant,
) -> Result<ParsedResponse, ResponseError> {
    let block = extract_block(text).ok_or(ResponseError::NoBlock)?;
    let file: BlockFile =
        serde_json::from_str(block).map_err(|e| ResponseError::MalformedBlock(e.to_string()))?;

    if file.answer.is_empty() {
        return Err(ResponseError::EmptyAnswer);
    }

    if variant != PromptVariant::UtilityMax {
        if !file.candidates.is_empty() {
            return Err(ResponseError::UnexpectedCandidates);
        }
        return Ok(ParsedResponse {
            candidates: Vec::new(),
            declared_answer: file.answer,
            raw_text: text.to_string(),
        });
    }

    if file.candidates.is_empty() {
        return Err(ResponseError::NoCandidates);
    }

    let chance_nodes: Vec<_> = d.chance_nodes().collect();
    let mut seen = BTreeSet::new();
    let mut candidates = Vec::with_capacity(file.candidates.len());
    for c in &file.candidates {
        if !seen.insert(c.id.clone()) {
            return Err(ResponseError::DuplicateCandidate(c.id.clone()));
        }
        let mut per_node = BTreeMap::new();
        for node in &chance_nodes {
            let value = *c.estimates.get(&node.id).ok_or_else(|| {
                ResponseError::MissingEstimate {
                    candidate: c.id.clone(),
                    node: node.id.clone(),
                }
            })?;
            if !value.is_finite() {
                return Err(ResponseError::EstimateOutOfRange {
                    node: node.id.clone(),
                    value,
                });
            }
            let entry = match node.domain.as_ref() {
                Some(Domain::Binary) => {
                    if !(0.0..=1.0).contains(&value) {
                        return Err(ResponseError::ProbabilityOutOfRange {
                            node: node.id.clone(),
                            value,
                        });
                    }
                    EstimateEntry::Probability(value)
                }
                _ => EstimateEntry::ScalarExpectation(value),
            };
            per_node.insert(node.id.clone(), entry);
        }
        for key in c.estimates.keys() {
            match d.node(key) {
                Some(n) if n.kind == NodeKind::Chance => {}
                _ => return Err(ResponseError::UnknownNode(key.clone())),
            }
        }
        candidates.push(CandidateEstimates {
            candidate_id: c.id.clone(),
            answer_text: String::new(),
            per_node,
            objective: Some(c.objective),
        });
    }

    let ids: BTreeSet<&str> = candidates.iter().map(|c| c.candidate_id.as_str()).collect();
    for a in &file.answer {
        if !ids.contains(a.as_str()) {
            return Err(ResponseError::AnswerNotAmongCandidates(a.clone()));
        }
    }

    Ok(ParsedResponse {
        candidates,
        declared_answer: file.answer,
        raw_text: text.to_string(),
    })
}

/// Render a parsed response back to a fenced block. `parse_response` of the
/// result reproduces the candidates and declared answer.
pub fn serialize_response(p: &ParsedResponse) -> String {
    let candidates = p
        .candidates
        .iter()
        .map(|c| BlockCandidate {
            id: c.candidate_id.clone(),
            estimates: c
                .per_node
                .iter()
                .map(|(id, entry)| {
                    let value = match entry {
                        EstimateEntry::Probability(v) => *v,
                        EstimateEntry::ScalarExpectation(v) => *v,
                        EstimateEntry::CategoricalDist(_) => {
                            // The wire format carries scalars only; a full
                            // distribution cannot appear in a block.
                            f64::NAN
                        }
                    };
                    (id.clone(), value)
                })
                .collect(),
            objective: c.objective.unwrap_or(f64::NAN),
        })
        .collect();
    let file = BlockFile {
        candidates,
        answer: p.declared_answer.clone(),
    };
    format!(
        "```utilimax-json\n{}\n```",
        serde_json::to_string(&file).expect("block serialization cannot fail")
    )
}

/// Ranking of candidates by recomputed objective, descending, exact ties by
/// ascending candidate id.
fn recomputed_ranking(recomputed: &BTreeMap<String, f64>) -> Vec<String> {
    let mut ranked: Vec<(&String, &f64)> = recomputed.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(a.1).then_with(|| a.0.cmp(b.0)));
    ranked.into_iter().map(|(id, _)| id.clone()).collect()
}

/// Recompute every candidate objective and compare against the model's
/// declared arithmetic and ranking. Candidate order in the block is
/// irrelevant; only the declared answer order is compared.
pub fn audit_consistency(
    p: &ParsedResponse,
    d: &InfluenceDiagram,
) -> Result<ConsistencyReport, UtilityError> {
    let mut recomputed = BTreeMap::new();
    let mut deviations = Vec::new();
    for c in &p.candidates {
        let value = expected_utility(d, c)?;
        recomputed.insert(c.candidate_id.clone(), value);
        if let Some(reported) = c.objective {
            let tolerance = ARITHMETIC_DRIFT_TOLERANCE * value.abs().max(1.0);
            if (reported - value).abs() > tolerance {
                deviations.push((c.candidate_id.clone(), reported, value));
            }
        }
    }

    let full_ranking = recomputed_ranking(&recomputed);
    let expected_prefix: Vec<String> = full_ranking
        .iter()
        .take(p.declared_answer.len())
        .cloned()
        .collect();
    let matches = p.declared_answer == expected_prefix;

    let verdict = if !matches {
        ConsistencyVerdict::RankingMismatch
    } else if !deviations.is_empty() {
        ConsistencyVerdict::ArithmeticDrift
    } else {
        ConsistencyVerdict::Consistent
    };

    Ok(ConsistencyReport {
        recomputed,
        declared_matches_recomputed_ranking: matches,
        arithmetic_deviations: deviations,
        verdict,
    })
}
