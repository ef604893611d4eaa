use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::case::{CaseError, GridCase};
use crate::value::Value;

pub const TABLES: [&str; 4] = ["bus", "line", "load", "gen"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("unknown table `{0}` (expected bus, line, load or gen)")]
    UnknownTable(String),
    #[error("table `{table}` has no field `{key}`")]
    UnknownFilterKey { table: String, key: String },
    #[error("unknown load index {0}")]
    UnknownLoadIndex(u32),
    #[error("load index must be a non-negative integer or a record with an `id`, got {0}")]
    MalformedLoadIndex(String),
    #[error("scale factor must be positive, got {0}")]
    NonPositiveFactor(f64),
    #[error("bus {0} has no in-service path to the slack generator")]
    IslandedBus(u32),
    #[error("unknown line {0}")]
    UnknownLine(u32),
    #[error("unknown generator {0}")]
    UnknownGenerator(u32),
    #[error("capacity {capacity} MW of generator {gen} is below its dispatch of {dispatch} MW")]
    CapacityBelowDispatch { gen: u32, capacity: f64, dispatch: f64 },
    #[error("demand {demand} MW exceeds total generation capacity {capacity} MW")]
    InfeasibleDispatch { demand: f64, capacity: f64 },
    #[error("unknown OPF method `{0}` (expected ac or dc)")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpfMethod {
    Ac,
    Dc,
}

impl std::str::FromStr for OpfMethod {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, GridError> {
        match s.to_ascii_lowercase().as_str() {
            "ac" => Ok(OpfMethod::Ac),
            "dc" => Ok(OpfMethod::Dc),
            _ => Err(GridError::UnknownMethod(s.to_string())),
        }
    }
}

/// A committed change to the session state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mutation {
    ScaleLoad { loads: Vec<u32>, factor: f64 },
    SetLineStatus { line: u32, in_service: bool },
    SetGenCapacity { gen: u32, capacity_mw: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlow {
    pub voltages: BTreeMap<u32, f64>,
    /// Signed MW flow from `from` to `to`; zero for lines out of service.
    pub flows: BTreeMap<u32, f64>,
    /// |flow| / capacity × 100.
    pub loadings: BTreeMap<u32, f64>,
}

impl PowerFlow {
    pub fn min_voltage(&self) -> f64 {
        self.voltages.values().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_loading(&self) -> f64 {
        self.loadings.values().copied().fold(0.0, f64::max)
    }

    /// `{voltages: {bus_N}, loadings: {line_N}, min_voltage, max_loading}`.
    pub fn to_value(&self) -> Value {
        let keyed = |prefix: &str, m: &BTreeMap<u32, f64>| {
            Value::record(m.iter().map(|(id, v)| (format!("{prefix}_{id}"), Value::Number(*v))))
        };
        Value::record([
            ("voltages", keyed("bus", &self.voltages)),
            ("loadings", keyed("line", &self.loadings)),
            ("min_voltage", Value::Number(self.min_voltage())),
            ("max_loading", Value::Number(self.max_loading())),
        ])
    }
}

/// A session's mutable copy of a grid case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridState {
    pub session: String,
    pub case: GridCase,
    #[serde(default)]
    pub mutations: Vec<Mutation>,
}

impl GridState {
    pub fn new(session: impl Into<String>, case: GridCase) -> Self {
        Self {
            session: session.into(),
            case,
            mutations: Vec::new(),
        }
    }

    /// SHA-256 over the canonical JSON of the current case values.
    pub fn snapshot_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.case).expect("grid case serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), CaseError> {
        let io = |source| CaseError::Io {
            path: path.display().to_string(),
            source,
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self, CaseError> {
        let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let state: GridState = serde_json::from_str(&text)?;
        state.case.validate()?;
        Ok(state)
    }

    /// Records of `table` whose fields equal every entry of `filter`.
    pub fn retrieve(&self, table: &str, filter: &BTreeMap<String, Value>) -> Result<Vec<Value>, GridError> {
        let records: Vec<Value> = match table {
            "bus" => self.case.buses.iter().map(to_record).collect(),
            "line" => self.case.lines.iter().map(to_record).collect(),
            "load" => self.case.loads.iter().map(to_record).collect(),
            "gen" => self.case.gens.iter().map(to_record).collect(),
            _ => return Err(GridError::UnknownTable(table.to_string())),
        };
        let fields = table_fields(table);
        if let Some(key) = filter.keys().find(|k| !fields.contains(&k.as_str())) {
            return Err(GridError::UnknownFilterKey {
                table: table.to_string(),
                key: key.clone(),
            });
        }
        Ok(records
            .into_iter()
            .filter(|r| filter.iter().all(|(k, v)| r.field(k) == Some(v)))
            .collect())
    }

    /// Multiplies each listed load by `factor` and returns their new total.
    /// Repeated indices are scaled once. Nothing changes on error.
    pub fn scale_load(&mut self, indices: &[u32], factor: f64) -> Result<f64, GridError> {
        if !factor.is_finite() || factor <= 0.0 {
            return Err(GridError::NonPositiveFactor(factor));
        }
        let ids: BTreeSet<u32> = indices.iter().copied().collect();
        if let Some(&missing) = ids.iter().find(|id| !self.case.loads.iter().any(|l| l.id == **id)) {
            return Err(GridError::UnknownLoadIndex(missing));
        }
        let mut total = 0.0;
        for load in self.case.loads.iter_mut().filter(|l| ids.contains(&l.id)) {
            load.p_mw *= factor;
            total += load.p_mw;
        }
        if !ids.is_empty() {
            self.mutations.push(Mutation::ScaleLoad {
                loads: ids.into_iter().collect(),
                factor,
            });
        }
        Ok(total)
    }

    pub fn set_line_status(&mut self, line: u32, in_service: bool) -> Result<String, GridError> {
        let l = self
            .case
            .lines
            .iter_mut()
            .find(|l| l.id == line)
            .ok_or(GridError::UnknownLine(line))?;
        l.in_service = in_service;
        self.mutations.push(Mutation::SetLineStatus { line, in_service });
        Ok(format!(
            "line {line} {}",
            if in_service { "in service" } else { "out of service" }
        ))
    }

    pub fn set_gen_capacity(&mut self, gen: u32, capacity_mw: f64) -> Result<String, GridError> {
        let g = self
            .case
            .gens
            .iter_mut()
            .find(|g| g.id == gen)
            .ok_or(GridError::UnknownGenerator(gen))?;
        if !capacity_mw.is_finite() || capacity_mw < g.dispatch_mw || capacity_mw <= 0.0 {
            return Err(GridError::CapacityBelowDispatch {
                gen,
                capacity: capacity_mw,
                dispatch: g.dispatch_mw,
            });
        }
        g.capacity_mw = capacity_mw;
        self.mutations.push(Mutation::SetGenCapacity { gen, capacity_mw });
        Ok(format!("generator {gen} capacity set to {capacity_mw} MW"))
    }

    /// Linear voltage model plus a DC power flow over in-service lines.
    ///
    /// Voltages: `v_b = v0_b - sum_j alpha[b][j] * P_j` with `P_j` the load at
    /// bus `j`. Flows: bus injections are dispatch minus load, with the slack
    /// generator taking up the imbalance; `B theta = P` is solved with the
    /// slack bus angle fixed at zero and each line carries
    /// `(theta_from - theta_to) / x`.
    pub fn power_flow(&self) -> Result<PowerFlow, GridError> {
        let case = &self.case;
        let loads = case.bus_loads();
        let mut voltages: BTreeMap<u32, f64> = case.buses.iter().map(|b| (b.id, case.v0(b.id))).collect();
        for s in &case.voltage_model.alpha {
            if let Some(p) = loads.get(&s.load_bus) {
                *voltages.get_mut(&s.bus).expect("validated bus") -= s.value * p;
            }
        }

        let Some(slack) = case.slack() else {
            let first = case.buses.iter().map(|b| b.id).min();
            return match first {
                Some(bus) => Err(GridError::IslandedBus(bus)),
                None => Ok(PowerFlow {
                    voltages,
                    flows: BTreeMap::new(),
                    loadings: BTreeMap::new(),
                }),
            };
        };
        let index: BTreeMap<u32, usize> = case.buses.iter().enumerate().map(|(i, b)| (b.id, i)).collect();
        let n = case.buses.len();
        let live: Vec<_> = case.lines.iter().filter(|l| l.in_service).collect();

        let mut adjacent = vec![Vec::new(); n];
        for l in &live {
            adjacent[index[&l.from]].push(index[&l.to]);
            adjacent[index[&l.to]].push(index[&l.from]);
        }
        let root = index[&slack.bus];
        let mut reached = vec![false; n];
        reached[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(i) = queue.pop_front() {
            for &j in &adjacent[i] {
                if !reached[j] {
                    reached[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if let Some(bus) = case.buses.iter().filter(|b| !reached[index[&b.id]]).map(|b| b.id).min() {
            return Err(GridError::IslandedBus(bus));
        }

        let mut injection = DVector::<f64>::zeros(n);
        for (bus, p) in &loads {
            injection[index[bus]] -= p;
        }
        for g in case.gens.iter().filter(|g| g.id != slack.id) {
            injection[index[&g.bus]] += g.dispatch_mw;
        }
        injection[root] -= injection.sum();

        let mut b = DMatrix::<f64>::zeros(n, n);
        for l in &live {
            let (i, j, y) = (index[&l.from], index[&l.to], 1.0 / l.reactance);
            b[(i, i)] += y;
            b[(j, j)] += y;
            b[(i, j)] -= y;
            b[(j, i)] -= y;
        }
        let reduced = b.remove_row(root).remove_column(root);
        let rhs = injection.remove_row(root);
        let theta_r = reduced
            .lu()
            .solve(&rhs)
            .expect("connected network has a nonsingular reduced susceptance matrix");
        let mut theta = DVector::<f64>::zeros(n);
        for (k, i) in (0..n).filter(|&i| i != root).enumerate() {
            theta[i] = theta_r[k];
        }

        let mut flows = BTreeMap::new();
        let mut loadings = BTreeMap::new();
        for l in &case.lines {
            let f = if l.in_service {
                (theta[index[&l.from]] - theta[index[&l.to]]) / l.reactance
            } else {
                0.0
            };
            flows.insert(l.id, f);
            loadings.insert(l.id, f.abs() / l.capacity_mw * 100.0);
        }
        Ok(PowerFlow {
            voltages,
            flows,
            loadings,
        })
    }

    /// Merit-order dispatch cost over linear cost curves; the AC figure adds
    /// the case's loss factor on top.
    pub fn opf_cost(&self, method: OpfMethod) -> Result<f64, GridError> {
        let demand = self.case.total_load();
        let capacity: f64 = self.case.gens.iter().map(|g| g.capacity_mw).sum();
        if demand > capacity {
            return Err(GridError::InfeasibleDispatch { demand, capacity });
        }
        let mut order: Vec<_> = self.case.gens.iter().collect();
        order.sort_by(|a, b| a.cost_per_mwh.total_cmp(&b.cost_per_mwh).then(a.id.cmp(&b.id)));
        let mut remaining = demand;
        let mut cost = 0.0;
        for g in order {
            let p = remaining.min(g.capacity_mw);
            cost += p * g.cost_per_mwh;
            remaining -= p;
            if remaining <= 0.0 {
                break;
            }
        }
        Ok(match method {
            OpfMethod::Dc => cost,
            OpfMethod::Ac => cost * (1.0 + self.case.opf.loss_factor),
        })
    }
}

fn table_fields(table: &str) -> &'static [&'static str] {
    match table {
        "bus" => &["id", "base_kv"],
        "line" => &["id", "from", "to", "capacity_mw", "in_service", "reactance"],
        "load" => &["id", "bus", "p_mw"],
        "gen" => &["id", "bus", "capacity_mw", "dispatch_mw", "cost_per_mwh", "slack"],
        _ => &[],
    }
}

fn to_record<T: Serialize>(item: &T) -> Value {
    Value::from_json(serde_json::to_value(item).expect("grid records serialize")).expect("grid records are finite")
}

/// A grid state shared by every run that names the same session.
#[derive(Debug, Clone)]
pub struct GridSession(Arc<Mutex<GridState>>);

impl GridSession {
    pub fn new(state: GridState) -> Self {
        Self(Arc::new(Mutex::new(state)))
    }

    pub fn from_case(session: impl Into<String>, case: GridCase) -> Self {
        Self::new(GridState::new(session, case))
    }

    pub fn lock(&self) -> MutexGuard<'_, GridState> {
        self.0.lock().expect("grid session poisoned")
    }

    pub fn snapshot(&self) -> GridState {
        self.lock().clone()
    }
}
