//! Mini question-answering benchmark over the local wiki corpus: claim
//! verification items and two-hop bridge questions, each solved by a golden
//! plan driven by a strict scripted backend.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentDecision, ScriptEntry, ScriptedBackend};
use crate::dsl::{self, ParseError};
use crate::env::wiki::{wiki_tools, WikiCorpus, WikiSession};
use crate::executor::{run_plan, ExecutionTrace, HaltPolicy, HaltReason, SetupError};
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "SUPPORTS")]
    Supports,
    #[serde(rename = "REFUTES")]
    Refutes,
    #[serde(rename = "NOT ENOUGH INFO")]
    NotEnoughInfo,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Supports => "SUPPORTS",
            Label::Refutes => "REFUTES",
            Label::NotEnoughInfo => "NOT ENOUGH INFO",
        }
    }
}

/// A claim to verify against one page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClaimItem {
    pub id: String,
    pub claim: String,
    pub entity: String,
    pub keyword: String,
    pub label: Label,
    /// Text the evidence observation must contain.
    pub evidence: String,
}

/// A question answered through an intermediate (bridge) entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BridgeItem {
    pub id: String,
    pub question: String,
    pub entity: String,
    pub bridge: String,
    pub keyword: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub fever: Vec<ClaimItem>,
    pub hotpot: Vec<BridgeItem>,
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported manifest format_version {0}")]
    UnsupportedVersion(u32),
    #[error("item {id}: golden plan does not parse: {source}")]
    Plan {
        id: String,
        #[source]
        source: ParseError,
    },
    #[error("item {id}: {source}")]
    Setup {
        id: String,
        #[source]
        source: SetupError,
    },
}

impl Manifest {
    pub fn from_json(text: &str) -> Result<Self, BenchError> {
        let m: Manifest = serde_json::from_str(text)?;
        if m.format_version != 1 {
            return Err(BenchError::UnsupportedVersion(m.format_version));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

fn lit(s: &str) -> String {
    dsl::print_literal(&Value::from(s))
}

/// Search the entity; look up the keyword only if the page exists, else
/// carry the not-found message forward as evidence; then judge.
pub fn claim_plan(item: &ClaimItem) -> String {
    format!(
        "\
Type: conditional
Max iterations: 1
Query: Verify the claim: {claim}

STEP 1:
  CONTEXT: wiki
  OBJECTIVE: Find the page about {entity}
  INPUTS: []
  OUTPUTS: [page]
  LOGIC: {{
    EXECUTE search(entity={entity_lit}) -> page
  }}

STEP 2:
  CONTEXT: wiki
  OBJECTIVE: Collect evidence mentioning {keyword}
  INPUTS: [page]
  OUTPUTS: [evidence]
  LOGIC: {{
    IF EXISTS(page.title) {{
      EXECUTE lookup(keyword={keyword_lit}) -> evidence
    }} ELSE {{
      DATA-FLOW page -> evidence
    }}
  }}

STEP 3:
  CONTEXT: reasoning
  OBJECTIVE: Label the claim SUPPORTS, REFUTES or NOT ENOUGH INFO using only the evidence
  INPUTS: [evidence]
  OUTPUTS: [label]
  LOGIC: {{
    EXECUTE judge(claim={claim_lit}, evidence=evidence) -> label
  }}
",
        claim = item.claim,
        entity = item.entity,
        keyword = item.keyword,
        entity_lit = lit(&item.entity),
        keyword_lit = lit(&item.keyword),
        claim_lit = lit(&item.claim),
    )
}

/// Search the entity, extract the bridge entity from its summary, search the
/// bridge, look up the keyword there and extract the answer.
pub fn bridge_plan(item: &BridgeItem) -> String {
    format!(
        "\
Type: conditional
Max iterations: 1
Query: {question}

STEP 1:
  CONTEXT: wiki
  OBJECTIVE: Find the page about {entity}
  INPUTS: []
  OUTPUTS: [first_page]
  LOGIC: {{
    EXECUTE search(entity={entity_lit}) -> first_page
  }}

STEP 2:
  CONTEXT: reasoning
  OBJECTIVE: Name the person the question is about, as given on the page
  INPUTS: [first_page]
  OUTPUTS: [bridge]
  LOGIC: {{
    IF EXISTS(first_page.title) {{
      EXECUTE extract(text=first_page.summary, want='bridge entity') -> bridge
    }} ELSE {{
      ABORT({abort_lit})
    }}
  }}

STEP 3:
  CONTEXT: wiki
  OBJECTIVE: Find the page about the bridge entity
  INPUTS: [bridge]
  OUTPUTS: [bridge_page]
  LOGIC: {{
    EXECUTE search(entity=bridge) -> bridge_page
  }}

STEP 4:
  CONTEXT: wiki
  OBJECTIVE: Collect evidence mentioning {keyword}
  INPUTS: [bridge_page]
  OUTPUTS: [evidence]
  LOGIC: {{
    IF EXISTS(bridge_page.title) {{
      EXECUTE lookup(keyword={keyword_lit}) -> evidence
    }} ELSE {{
      DATA-FLOW bridge_page -> evidence
    }}
  }}

STEP 5:
  CONTEXT: reasoning
  OBJECTIVE: Answer the question from the evidence
  INPUTS: [evidence]
  OUTPUTS: [answer]
  LOGIC: {{
    EXECUTE extract(text=evidence, want='year') -> answer
  }}
",
        question = item.question,
        entity = item.entity,
        abort_lit = lit(&format!("no page for {}", item.entity)),
        entity_lit = lit(&item.entity),
        keyword = item.keyword,
        keyword_lit = lit(&item.keyword),
    )
}

fn search(entity: &str) -> AgentDecision {
    AgentDecision::call("search", [("entity", Value::from(entity))])
}

fn lookup(keyword: &str) -> AgentDecision {
    AgentDecision::call("lookup", [("keyword", Value::from(keyword))])
}

/// Strict script for a claim. The lookup entry is present only when the
/// page exists in `corpus`.
pub fn claim_script(item: &ClaimItem, corpus: &WikiCorpus) -> ScriptedBackend {
    let mut entries = vec![ScriptEntry::at(1, 0, search(&item.entity))];
    if corpus.find(&item.entity).is_some() {
        entries.push(ScriptEntry::at(2, 0, lookup(&item.keyword)));
    }
    entries.push(ScriptEntry::at(
        3,
        0,
        AgentDecision::Finish(Value::from(item.label.as_str())),
    ));
    ScriptedBackend::new(entries, true)
}

pub fn bridge_script(item: &BridgeItem) -> ScriptedBackend {
    ScriptedBackend::new(
        vec![
            ScriptEntry::at(1, 0, search(&item.entity)),
            ScriptEntry::at(2, 0, AgentDecision::Finish(Value::from(item.bridge.as_str()))),
            ScriptEntry::at(3, 0, search(&item.bridge)),
            ScriptEntry::at(4, 0, lookup(&item.keyword)),
            ScriptEntry::at(5, 0, AgentDecision::Finish(Value::from(item.answer.as_str()))),
        ],
        true,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemResult {
    pub id: String,
    pub expected: String,
    pub predicted: Option<Value>,
    /// Observation of the evidence call.
    pub evidence: Option<Value>,
    pub correct: bool,
    /// Tool calls issued after the evidence call; zero when the plan stops
    /// exploring once it has what it needs.
    pub calls_after_evidence: usize,
    pub halt_reason: HaltReason,
    #[serde(skip)]
    pub trace: ExecutionTrace,
}

/// Position of the evidence call: the first `lookup`, or failing that the
/// first `search` that reported a missing page.
pub fn evidence_call(trace: &ExecutionTrace) -> Option<(usize, Value)> {
    let calls: Vec<(&str, Option<&Value>)> = trace
        .records
        .iter()
        .flat_map(|r| {
            r.tool_calls
                .iter()
                .enumerate()
                .map(move |(i, c)| (c.tool.as_str(), r.observations.get(i)))
        })
        .collect();
    let lookup = calls.iter().position(|(t, _)| *t == "lookup");
    let missing = || {
        calls.iter().position(|(t, obs)| {
            *t == "search"
                && obs
                    .and_then(|o| o.as_str())
                    .is_some_and(|s| s.starts_with("Could not find"))
        })
    };
    let idx = lookup.or_else(missing)?;
    Some((calls.len() - idx - 1, calls[idx].1.cloned()?))
}

fn run_item(
    id: &str,
    plan_text: &str,
    backend: &ScriptedBackend,
    corpus: &Arc<WikiCorpus>,
    output: &str,
) -> Result<(ExecutionTrace, Option<Value>), BenchError> {
    let plan = dsl::parse_plan(plan_text).map_err(|source| BenchError::Plan { id: id.into(), source })?;
    let tools = wiki_tools(Arc::new(WikiSession::new(corpus.clone())));
    let outcome = run_plan(&plan, &tools, backend, Default::default(), &HaltPolicy::default())
        .map_err(|source| BenchError::Setup { id: id.into(), source })?;
    let answer = outcome.memory.get(output).cloned();
    Ok((outcome.trace, answer))
}

pub fn run_claim(item: &ClaimItem, corpus: &Arc<WikiCorpus>) -> Result<ItemResult, BenchError> {
    let backend = claim_script(item, corpus);
    let (trace, predicted) = run_item(&item.id, &claim_plan(item), &backend, corpus, "label")?;
    Ok(score(&item.id, item.label.as_str(), &item.evidence, trace, predicted))
}

pub fn run_bridge(item: &BridgeItem, corpus: &Arc<WikiCorpus>) -> Result<ItemResult, BenchError> {
    let backend = bridge_script(item);
    let (trace, predicted) = run_item(&item.id, &bridge_plan(item), &backend, corpus, "answer")?;
    Ok(score(&item.id, &item.answer, &item.answer, trace, predicted))
}

fn score(id: &str, expected: &str, evidence_text: &str, trace: ExecutionTrace, predicted: Option<Value>) -> ItemResult {
    let found = evidence_call(&trace);
    let evidence = found.as_ref().map(|(_, v)| v.clone());
    let evidence_ok = evidence
        .as_ref()
        .and_then(Value::as_str)
        .is_some_and(|s| s.contains(evidence_text));
    let halt_reason = trace.summary.halt_reason;
    ItemResult {
        id: id.to_string(),
        expected: expected.to_string(),
        correct: halt_reason.is_success()
            && evidence_ok
            && predicted.as_ref().and_then(Value::as_str) == Some(expected),
        predicted,
        evidence,
        calls_after_evidence: found.map_or(0, |(after, _)| after),
        halt_reason,
        trace,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub fever: Vec<ItemResult>,
    pub hotpot: Vec<ItemResult>,
}

impl BenchReport {
    pub fn fever_correct(&self) -> usize {
        self.fever.iter().filter(|r| r.correct).count()
    }

    pub fn hotpot_correct(&self) -> usize {
        self.hotpot.iter().filter(|r| r.correct).count()
    }

    pub fn calls_after_evidence(&self) -> usize {
        self.fever
            .iter()
            .chain(&self.hotpot)
            .map(|r| r.calls_after_evidence)
            .sum()
    }
}

pub fn run_benchmark(manifest: &Manifest, corpus: &Arc<WikiCorpus>) -> Result<BenchReport, BenchError> {
    Ok(BenchReport {
        fever: manifest
            .fever
            .iter()
            .map(|i| run_claim(i, corpus))
            .collect::<Result<_, _>>()?,
        hotpot: manifest
            .hotpot
            .iter()
            .map(|i| run_bridge(i, corpus))
            .collect::<Result<_, _>>()?,
    })
}
