//! Step dependency graph induced by the plan's input and output declarations.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::condition::Scope;
use crate::plan::{Plan, StepId};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    pub producer: StepId,
    pub consumer: StepId,
    pub var: String,
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {} [{}]", self.producer, self.consumer, self.var)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("step {consumer} consumes `{var}`, which is only produced by later step {producer}")]
    BackwardDependency {
        consumer: StepId,
        producer: StepId,
        var: String,
    },
    #[error("unknown step {0}")]
    UnknownStep(StepId),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    nodes: Vec<StepId>,
    /// Sorted by consumer, then variable name.
    edges: Vec<Edge>,
    inbound: BTreeMap<StepId, Vec<usize>>,
    outbound: BTreeMap<StepId, Vec<usize>>,
}

impl DependencyGraph {
    pub fn nodes(&self) -> &[StepId] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn inbound(&self, step: StepId) -> Result<impl Iterator<Item = &Edge>, GraphError> {
        let idx = self.inbound.get(&step).ok_or(GraphError::UnknownStep(step))?;
        Ok(idx.iter().map(|&i| &self.edges[i]))
    }

    pub fn outbound(&self, step: StepId) -> Result<impl Iterator<Item = &Edge>, GraphError> {
        let idx = self.outbound.get(&step).ok_or(GraphError::UnknownStep(step))?;
        Ok(idx.iter().map(|&i| &self.edges[i]))
    }

    /// One `producer -> consumer [var]` line per edge.
    pub fn to_edge_list(&self) -> String {
        self.edges.iter().map(|e| format!("{e}\n")).collect()
    }
}

pub fn build_graph(plan: &Plan) -> Result<DependencyGraph, GraphError> {
    let mut edges = Vec::new();
    for (pos, consumer) in plan.steps.iter().enumerate() {
        for var in &consumer.inputs {
            let earlier = plan.steps[..pos].iter().filter(|s| s.outputs.contains(var));
            let mut found = false;
            for producer in earlier {
                found = true;
                edges.push(Edge {
                    producer: producer.id,
                    consumer: consumer.id,
                    var: var.clone(),
                });
            }
            if found {
                continue;
            }
            if let Some(later) = plan.steps[pos + 1..].iter().find(|s| s.outputs.contains(var)) {
                return Err(GraphError::BackwardDependency {
                    consumer: consumer.id,
                    producer: later.id,
                    var: var.clone(),
                });
            }
        }
    }
    edges.sort_by(|a, b| (a.consumer, &a.var, a.producer).cmp(&(b.consumer, &b.var, b.producer)));
    edges.dedup();

    let nodes: Vec<StepId> = plan.steps.iter().map(|s| s.id).collect();
    let mut inbound: BTreeMap<StepId, Vec<usize>> = nodes.iter().map(|&n| (n, Vec::new())).collect();
    let mut outbound = inbound.clone();
    for (i, e) in edges.iter().enumerate() {
        inbound.entry(e.consumer).or_default().push(i);
        outbound.entry(e.producer).or_default().push(i);
    }
    Ok(DependencyGraph {
        nodes,
        edges,
        inbound,
        outbound,
    })
}

/// Whether every variable on an inbound edge of `step` is bound.
pub fn is_ready<S: Scope + ?Sized>(graph: &DependencyGraph, step: StepId, memory: &S) -> Result<bool, GraphError> {
    Ok(graph.inbound(step)?.all(|e| memory.lookup(&e.var).is_some()))
}
