//! Grid case files: network topology, loads, generators and the linear
//! voltage model.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_LOSS_FACTOR: f64 = 0.018;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: u32,
    pub base_kv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub id: u32,
    pub from: u32,
    pub to: u32,
    pub capacity_mw: f64,
    #[serde(default = "default_true")]
    pub in_service: bool,
    /// Per-unit series reactance used by the DC flow.
    #[serde(default = "default_reactance")]
    pub reactance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Load {
    pub id: u32,
    pub bus: u32,
    pub p_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gen {
    pub id: u32,
    pub bus: u32,
    pub capacity_mw: f64,
    pub dispatch_mw: f64,
    #[serde(default)]
    pub cost_per_mwh: f64,
    /// Absorbs the power imbalance in the DC flow. Defaults to the first
    /// generator when none is marked.
    #[serde(default)]
    pub slack: bool,
}

/// `alpha[bus][load_bus]`: pu voltage drop at `bus` per MW of load at `load_bus`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sensitivity {
    pub bus: u32,
    pub load_bus: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoltageModel {
    /// No-load voltage per bus in pu; unlisted buses sit at 1.0.
    #[serde(default)]
    pub v0: BTreeMap<u32, f64>,
    #[serde(default)]
    pub alpha: Vec<Sensitivity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpfConfig {
    #[serde(default = "default_loss_factor")]
    pub loss_factor: f64,
}

impl Default for OpfConfig {
    fn default() -> Self {
        Self {
            loss_factor: DEFAULT_LOSS_FACTOR,
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_reactance() -> f64 {
    1.0
}

fn default_loss_factor() -> f64 {
    DEFAULT_LOSS_FACTOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCase {
    pub format_version: u32,
    #[serde(default)]
    pub name: String,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub loads: Vec<Load>,
    pub gens: Vec<Gen>,
    pub voltage_model: VoltageModel,
    #[serde(default)]
    pub opf: OpfConfig,
}

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("cannot read grid case {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed grid case: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format_version {0}")]
    UnsupportedVersion(u32),
    #[error("invalid grid case: {0}")]
    Invalid(String),
}

impl GridCase {
    pub fn from_json(text: &str) -> Result<Self, CaseError> {
        let case: GridCase = serde_json::from_str(text)?;
        case.validate()?;
        Ok(case)
    }

    pub fn load(path: &Path) -> Result<Self, CaseError> {
        let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// References resolve, ids are unique, capacities are positive and
    /// sensitivities non-negative.
    pub fn validate(&self) -> Result<(), CaseError> {
        let bad = |msg: String| Err(CaseError::Invalid(msg));
        if self.format_version != 1 {
            return Err(CaseError::UnsupportedVersion(self.format_version));
        }
        let buses = unique_ids("bus", self.buses.iter().map(|b| b.id))?;
        unique_ids("line", self.lines.iter().map(|l| l.id))?;
        unique_ids("load", self.loads.iter().map(|l| l.id))?;
        unique_ids("gen", self.gens.iter().map(|g| g.id))?;
        let known = |what: &str, id: u32, bus: u32| {
            if buses.contains(&bus) {
                Ok(())
            } else {
                Err(CaseError::Invalid(format!("{what} {id} references unknown bus {bus}")))
            }
        };
        for l in &self.lines {
            known("line", l.id, l.from)?;
            known("line", l.id, l.to)?;
            if l.from == l.to {
                return bad(format!("line {} connects bus {} to itself", l.id, l.from));
            }
            if l.capacity_mw.is_nan() || l.capacity_mw <= 0.0 {
                return bad(format!("line {} capacity must be positive", l.id));
            }
            if l.reactance.is_nan() || l.reactance <= 0.0 {
                return bad(format!("line {} reactance must be positive", l.id));
            }
        }
        for l in &self.loads {
            known("load", l.id, l.bus)?;
            if !l.p_mw.is_finite() || l.p_mw < 0.0 {
                return bad(format!("load {} power must be finite and non-negative", l.id));
            }
        }
        for g in &self.gens {
            known("gen", g.id, g.bus)?;
            if !g.capacity_mw.is_finite() || g.capacity_mw <= 0.0 {
                return bad(format!("gen {} capacity must be positive", g.id));
            }
            if !(0.0..=g.capacity_mw).contains(&g.dispatch_mw) {
                return bad(format!("gen {} dispatch must lie within [0, capacity]", g.id));
            }
        }
        if self.gens.iter().filter(|g| g.slack).count() > 1 {
            return bad("more than one slack generator".into());
        }
        for bus in self.voltage_model.v0.keys() {
            if !buses.contains(bus) {
                return bad(format!("v0 references unknown bus {bus}"));
            }
        }
        for s in &self.voltage_model.alpha {
            if !buses.contains(&s.bus) || !buses.contains(&s.load_bus) {
                return bad(format!(
                    "alpha entry ({}, {}) references an unknown bus",
                    s.bus, s.load_bus
                ));
            }
            if !s.value.is_finite() || s.value < 0.0 {
                return bad(format!("alpha entry ({}, {}) must be non-negative", s.bus, s.load_bus));
            }
        }
        if !self.opf.loss_factor.is_finite() || self.opf.loss_factor < 0.0 {
            return bad("loss_factor must be non-negative".into());
        }
        Ok(())
    }

    pub fn slack(&self) -> Option<&Gen> {
        self.gens.iter().find(|g| g.slack).or_else(|| self.gens.first())
    }

    pub fn v0(&self, bus: u32) -> f64 {
        self.voltage_model.v0.get(&bus).copied().unwrap_or(1.0)
    }

    pub fn total_load(&self) -> f64 {
        self.loads.iter().map(|l| l.p_mw).sum()
    }

    /// Total load per bus; buses without loads are absent.
    pub fn bus_loads(&self) -> BTreeMap<u32, f64> {
        let mut out = BTreeMap::new();
        for l in &self.loads {
            *out.entry(l.bus).or_insert(0.0) += l.p_mw;
        }
        out
    }
}

fn unique_ids(what: &str, ids: impl Iterator<Item = u32>) -> Result<BTreeSet<u32>, CaseError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(CaseError::Invalid(format!("duplicate {what} id {id}")));
        }
    }
    Ok(seen)
}
