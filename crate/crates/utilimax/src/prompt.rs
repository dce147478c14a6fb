//! Prompt compilation.
//!
//! [`compile_utilitymax_prompt`] turns a validated influence diagram plus a
//! task description into the formal expected-utility prompt, generalized to
//! any number of chance nodes and both tractable regimes.
//! [`compile_baseline_prompt`] produces the Basic and Harsh natural-language
//! baselines, sharing every section with the formal prompt except the
//! objective specification so comparisons isolate the objective itself.
//!
//! Authoring note: variable definitions work best when they describe an
//! observable event whose outcome can be measured. "At least one person
//! contacts me within two weeks about running a joint experiment" gives the
//! model a concrete target; "collaboration occurs" leaves it interpreting
//! natural language again. Prefer the former unless the concept is inherently
//! subjective and the looseness is intentional.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagram::{
    classify_tractability, diagram_fingerprint, validate_structure, Domain, InfluenceDiagram,
    NodeKind, NodeSpec, StructureTag,
};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("diagram failed validation: {0}")]
    InvalidDiagram(String),
    #[error("intractable diagram: {0}")]
    Intractable(String),
    #[error("empty task description")]
    EmptyDescription,
    #[error("baseline compilation requires the basic or harsh variant")]
    NotABaselineVariant,
    #[error("task file error: {0}")]
    TaskFile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptVariant {
    UtilityMax,
    Basic,
    Harsh,
}

impl PromptVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            PromptVariant::UtilityMax => "utilitymax",
            PromptVariant::Basic => "basic",
            PromptVariant::Harsh => "harsh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "utilitymax" => Some(PromptVariant::UtilityMax),
            "basic" => Some(PromptVariant::Basic),
            "harsh" => Some(PromptVariant::Harsh),
            _ => None,
        }
    }
}

/// Task description handed to the compiler alongside the diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    /// The task statement slot.
    pub description: String,
    /// External knowledge injected into the prompt (history, candidate pool).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    /// Describes the candidate answer space; may be empty.
    #[serde(default)]
    pub candidate_instruction: String,
    /// Noun phrase for the baseline preference paragraphs,
    /// e.g. "comedy and romance movies".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preference: Option<String>,
    /// When set, the prompt asks for the top K answers instead of a single
    /// best answer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
}

impl TaskSpec {
    pub fn new(description: impl Into<String>) -> Self {
        TaskSpec {
            description: description.into(),
            context: None,
            candidate_instruction: String::new(),
            preference: None,
            top_k: None,
        }
    }
}

/// Parse a task file (canonical JSON encoding, unknown keys rejected).
pub fn parse_task_spec(text: &str) -> Result<TaskSpec, PromptError> {
    let task: TaskSpec =
        serde_json::from_str(text).map_err(|e| PromptError::TaskFile(e.to_string()))?;
    if task.description.trim().is_empty() {
        return Err(PromptError::EmptyDescription);
    }
    Ok(task)
}

/// A compiled prompt plus the provenance needed to audit responses against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptArtifact {
    pub variant: PromptVariant,
    pub text: String,
    /// Content hash of the diagram spec; empty for baselines.
    pub diagram_fingerprint: String,
    /// The objective formula exactly as shown to the model; empty for
    /// baselines.
    pub objective_rendering: String,
}

/// Content hash of the exact prompt text, hex-encoded SHA-256. Used as the
/// key for mock-provider fixtures and query records.
pub fn prompt_fingerprint(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Rendering helpers
// ---------------------------------------------------------------------------

/// Topological order of chance nodes with ties broken by declaration order,
/// so the compiled objective follows the order the diagram author wrote.
fn presentation_order<'a>(d: &'a InfluenceDiagram) -> Vec<&'a NodeSpec> {
    let declared: BTreeMap<&str, usize> = d
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| (n.id.as_str(), i))
        .collect();
    let mut indegree: BTreeMap<&str, usize> =
        d.nodes.iter().map(|n| (n.id.as_str(), 0)).collect();
    for (_, c) in &d.edges {
        *indegree.get_mut(c.as_str()).unwrap() += 1;
    }
    let mut ready: Vec<&str> = indegree
        .iter()
        .filter(|(_, deg)| **deg == 0)
        .map(|(id, _)| *id)
        .collect();
    let mut order = Vec::new();
    while !ready.is_empty() {
        ready.sort_by_key(|id| declared[id]);
        let next = ready.remove(0);
        order.push(next);
        for child in d.children(next) {
            let deg = indegree.get_mut(child).unwrap();
            *deg -= 1;
            if *deg == 0 {
                ready.push(child);
            }
        }
    }
    order
        .into_iter()
        .filter_map(|id| d.node(id))
        .filter(|n| n.kind == NodeKind::Chance)
        .collect()
}

fn format_score(s: f64) -> String {
    if s == s.trunc() && s.abs() < 1e15 {
        format!("{}", s as i64)
    } else {
        format!("{s}")
    }
}

fn conditioning(d: &InfluenceDiagram, node: &NodeSpec) -> String {
    let gates = d.chance_parents(&node.id);
    if gates.is_empty() {
        "A=a".to_string()
    } else {
        let mut parts: Vec<String> = gates.iter().map(|g| format!("{g}=1")).collect();
        parts.push("A=a".to_string());
        parts.join(", ")
    }
}

/// The objective term for one chance node: activation probability for binary
/// nodes, expected value otherwise.
fn objective_term(d: &InfluenceDiagram, node: &NodeSpec) -> String {
    let cond = conditioning(d, node);
    match node.domain {
        Some(Domain::Binary) => format!("P({}=1 | {})", node.id, cond),
        _ => format!("E[{} | {}]", node.id, cond),
    }
}

/// One paragraph defining a chance node for the model: the variable, its
/// conditioning set, and its description.
pub fn render_variable_block(d: &InfluenceDiagram, node: &NodeSpec) -> String {
    let cond = conditioning(d, node);
    let gates = d.chance_parents(&node.id);
    let gate_clause = if gates.is_empty() {
        String::new()
    } else {
        let listed: Vec<String> = gates.iter().map(|g| format!("{g} = 1")).collect();
        format!(" and given that {}", listed.join(" and "))
    };
    match &node.domain {
        Some(Domain::Binary) => format!(
            "Let {} | {} be a random variable representing whether {} given answer a{}.",
            node.id, cond, node.description, gate_clause
        ),
        Some(Domain::Categorical(labels)) => {
            let names: Vec<&str> = labels.iter().map(|l| l.label.as_str()).collect();
            let scores: Vec<String> = labels.iter().map(|l| format_score(l.score)).collect();
            format!(
                "Let {} | {} be a categorical random variable representing {} given answer a{}, taking the values {} with scores {}.",
                node.id,
                cond,
                node.description,
                gate_clause,
                names.join(", "),
                scores.join(", ")
            )
        }
        _ => format!(
            "Let {} | {} be a random variable representing {} given answer a{}.",
            node.id, cond, node.description, gate_clause
        ),
    }
}

fn join_terms(terms: &[String]) -> String {
    match terms.len() {
        0 => String::new(),
        1 => terms[0].clone(),
        2 => format!("{} and {}", terms[0], terms[1]),
        _ => {
            let head = terms[..terms.len() - 1].join(", ");
            format!("{}, and {}", head, terms[terms.len() - 1])
        }
    }
}

fn task_statement(task: &TaskSpec) -> String {
    let trimmed = task.description.trim().trim_end_matches('.');
    format!("I want you to solve the following task: {trimmed}.")
}

fn shared_preamble(task: &TaskSpec) -> Vec<String> {
    let mut sections = vec![task_statement(task)];
    if !task.candidate_instruction.trim().is_empty() {
        sections.push(task.candidate_instruction.trim().to_string());
    }
    if let Some(context) = &task.context {
        if !context.trim().is_empty() {
            sections.push(context.trim_end().to_string());
        }
    }
    sections
}

fn response_format_instruction(
    variant: PromptVariant,
    node_ids: &[&str],
    top_k: Option<usize>,
) -> String {
    let answer_hint = match top_k {
        Some(k) => format!("the candidate ids of your {k} returned answers"),
        None => "the candidate ids of your returned answers".to_string(),
    };
    match variant {
        PromptVariant::UtilityMax => {
            let estimates: Vec<String> =
                node_ids.iter().map(|id| format!("\"{id}\": 0.0")).collect();
            format!(
                "When you have finished, output your final answer as one fenced code block tagged utilimax-json, in exactly this JSON shape:\n\n```utilimax-json\n{{\"candidates\": [{{\"id\": \"<candidate id>\", \"estimates\": {{{}}}, \"objective\": 0.0}}], \"answer\": [\"<candidate id>\"]}}\n```\n\nInclude one candidates entry per candidate answer you evaluated, with one numeric estimate per variable and the computed O(a) as objective. List in answer {answer_hint} in descending O(a) order.",
                estimates.join(", ")
            )
        }
        _ => format!(
            "When you have finished, output your final answer as one fenced code block tagged utilimax-json, in exactly this JSON shape:\n\n```utilimax-json\n{{\"answer\": [\"<candidate id>\"]}}\n```\n\nList in answer {answer_hint}, best first."
        ),
    }
}

// ---------------------------------------------------------------------------
// Compilation
// ---------------------------------------------------------------------------

/// Compile the formal expected-utility prompt for a tractable diagram.
pub fn compile_utilitymax_prompt(
    task: &TaskSpec,
    d: &InfluenceDiagram,
) -> Result<PromptArtifact, PromptError> {
    if task.description.trim().is_empty() {
        return Err(PromptError::EmptyDescription);
    }
    let report = validate_structure(d);
    if !report.ok {
        return Err(PromptError::InvalidDiagram(
            report
                .violations
                .iter()
                .map(|v| v.message.as_str())
                .collect::<Vec<_>>()
                .join("; "),
        ));
    }
    let class = classify_tractability(d).map_err(|e| PromptError::InvalidDiagram(e.to_string()))?;
    if class.tag == StructureTag::Intractable {
        return Err(PromptError::Intractable(class.detail));
    }

    let nodes = presentation_order(d);
    let node_ids: Vec<&str> = nodes.iter().map(|n| n.id.as_str()).collect();
    let terms: Vec<String> = nodes.iter().map(|n| objective_term(d, n)).collect();
    let objective_rendering = format!("O(a) = {}", terms.join(" x "));

    let mut sections = shared_preamble(task);
    sections.push(
        "Formally, let K represent your knowledge. This includes all your internal knowledge stored through your parameters as well as any external knowledge provided in this prompt or chat history."
            .to_string(),
    );
    sections.push(
        "Let P(A | K) represent your probability distribution over answers given K. Let a be an answer in A."
            .to_string(),
    );
    for n in &nodes {
        sections.push(render_variable_block(d, n));
    }

    let step_three = match task.top_k {
        Some(k) => format!("3. Return the {k} candidate answers with the highest O(a) in descending order."),
        None => "3. Return the answer a* that maximises O.".to_string(),
    };
    sections.push(format!(
        "Your task is to use your domain expertise to find the optimal answer a* that maximises {objective_rendering}. To do this you must:\n\n1. Generate a set of candidate answers.\n2. For each candidate answer, estimate {} individually using your internal knowledge then compute O(a) for that candidate.\n{step_three}",
        join_terms(&terms)
    ));

    sections.push(response_format_instruction(
        PromptVariant::UtilityMax,
        &node_ids,
        task.top_k,
    ));

    Ok(PromptArtifact {
        variant: PromptVariant::UtilityMax,
        text: sections.join("\n\n"),
        diagram_fingerprint: diagram_fingerprint(d),
        objective_rendering,
    })
}

/// Compile a natural-language baseline prompt. Basic states the preference;
/// Harsh adds the exclusive-interest constraint and the prohibition sentence.
pub fn compile_baseline_prompt(
    task: &TaskSpec,
    variant: PromptVariant,
) -> Result<PromptArtifact, PromptError> {
    if variant == PromptVariant::UtilityMax {
        return Err(PromptError::NotABaselineVariant);
    }
    if task.description.trim().is_empty() {
        return Err(PromptError::EmptyDescription);
    }
    let mut sections = shared_preamble(task);
    if let Some(preference) = &task.preference {
        let paragraph = match variant {
            PromptVariant::Basic => format!("The user is in the mood for {preference}."),
            PromptVariant::Harsh => format!(
                "The user is only interested in {preference}. You should not suggest anything outside of these."
            ),
            PromptVariant::UtilityMax => unreachable!(),
        };
        sections.push(paragraph);
    }
    sections.push(response_format_instruction(variant, &[], task.top_k));

    Ok(PromptArtifact {
        variant,
        text: sections.join("\n\n"),
        diagram_fingerprint: String::new(),
        objective_rendering: String::new(),
    })
}

/// Compile whichever variant is requested; the diagram is only consulted for
/// the formal variant.
pub fn compile_prompt(
    task: &TaskSpec,
    d: &InfluenceDiagram,
    variant: PromptVariant,
) -> Result<PromptArtifact, PromptError> {
    match variant {
        PromptVariant::UtilityMax => compile_utilitymax_prompt(task, d),
        _ => compile_baseline_prompt(task, variant),
    }
}
