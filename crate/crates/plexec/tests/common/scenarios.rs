//! The five grid scenarios, each returning `Err` with the first failed
//! expectation.

use std::collections::BTreeMap;

use plexec::agents::RuleBackend;
use plexec::dsl::parse_plan;
use plexec::env::grid::{grid_tools, GridCase, GridSession, Mutation};
use plexec::executor::{run_plan, HaltPolicy, HaltReason, RunOutcome, DEFAULT_INVARIANCE_WINDOW};
use plexec::value::Value;

use super::fixture;

pub const VOLTAGE_LIMIT: f64 = 0.95;
pub const S1_EXPECTED_PASSES: u32 = 7;
pub const S4_LEVEL: f64 = 0.729;
pub const S4_TOLERANCE: f64 = 1e-12;
pub const S3_TOLERANCE: f64 = 1e-9;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn case(name: &str) -> GridCase {
    GridCase::load(&fixture(&format!("grid/{name}"))).expect("fixture case loads")
}

pub fn run_on(session: &GridSession, plan_file: &str) -> RunOutcome {
    let text = std::fs::read_to_string(fixture(&format!("plans/{plan_file}"))).expect("fixture plan");
    let plan = parse_plan(&text).expect("fixture plan parses");
    run_plan(
        &plan,
        &grid_tools(session),
        &RuleBackend,
        BTreeMap::new(),
        &HaltPolicy::default(),
    )
    .expect("fixture plan validates")
}

/// Observations of every call to `tool`, in order.
pub fn observations(outcome: &RunOutcome, tool: &str) -> Vec<Value> {
    outcome
        .trace
        .records
        .iter()
        .flat_map(|r| r.tool_calls.iter().zip(&r.observations))
        .filter(|(c, _)| c.tool == tool)
        .map(|(_, o)| o.clone())
        .collect()
}

/// Minimum bus voltage after `k` scalings of the bus-11 loads by 1.15,
/// evaluated straight from the fixture file.
pub fn s1_oracle_voltage(k: i32) -> f64 {
    let raw: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("grid/twelve_bus.json")).unwrap()).unwrap();
    let mut bus_load: BTreeMap<u64, f64> = BTreeMap::new();
    for load in raw["loads"].as_array().unwrap() {
        let bus = load["bus"].as_u64().unwrap();
        let mut p = load["p_mw"].as_f64().unwrap();
        if bus == 11 {
            p *= 1.15f64.powi(k);
        }
        *bus_load.entry(bus).or_default() += p;
    }
    let model = &raw["voltage_model"];
    raw["buses"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| {
            let id = b["id"].as_u64().unwrap();
            let v0 = model["v0"].get(id.to_string()).and_then(|v| v.as_f64()).unwrap_or(1.0);
            let drop: f64 = model["alpha"]
                .as_array()
                .unwrap()
                .iter()
                .filter(|s| s["bus"].as_u64() == Some(id))
                .map(|s| s["value"].as_f64().unwrap() * bus_load.get(&s["load_bus"].as_u64().unwrap()).unwrap_or(&0.0))
                .sum();
            v0 - drop
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn s1_oracle_passes() -> u32 {
    (1..=50)
        .find(|&k| s1_oracle_voltage(k) < VOLTAGE_LIMIT)
        .expect("fixture crosses the limit") as u32
}

pub fn s1() -> Result<String, String> {
    let session = GridSession::from_case("s1", case("twelve_bus.json"));
    let out = run_on(&session, "s1_voltage_collapse.plan");
    ensure(out.halt_reason() == HaltReason::TerminationCriterionMet, || {
        format!("halted with {}", out.halt_reason())
    })?;
    let passes = super::passes_used(&out.trace);
    let expected = s1_oracle_passes();
    ensure(expected == S1_EXPECTED_PASSES, || {
        format!("fixture oracle says {expected} passes")
    })?;
    ensure(passes == expected, || format!("{passes} passes, oracle {expected}"))?;
    let volts: Vec<f64> = observations(&out, "PowerFlow")
        .iter()
        .map(|v| v.field("min_voltage").and_then(Value::as_f64).unwrap())
        .collect();
    ensure(volts.len() == passes as usize + 1, || {
        format!("{} power flows", volts.len())
    })?;
    for (k, v) in volts.iter().enumerate() {
        let want = s1_oracle_voltage(k as i32);
        ensure((v - want).abs() < 1e-12, || {
            format!("pass {k}: voltage {v}, oracle {want}")
        })?;
    }
    ensure(volts.windows(2).all(|w| w[1] < w[0]), || {
        format!("voltages not strictly decreasing: {volts:?}")
    })?;
    for name in ["final_load_level", "voltage_profile"] {
        ensure(out.memory.contains(name), || format!("{name} unbound"))?;
    }
    Ok(format!(
        "{passes} passes, min voltage {:.4} -> {:.4}",
        volts[0], volts[passes as usize]
    ))
}

pub fn s2() -> Result<String, String> {
    let session = GridSession::from_case("s2", case("twelve_bus.json"));
    let before = session.snapshot().snapshot_hash();
    let out = run_on(&session, "s2_missing_loads.plan");
    ensure(out.halt_reason() == HaltReason::Aborted, || {
        format!("halted with {}", out.halt_reason())
    })?;
    let detail = out.trace.summary.detail.clone().unwrap_or_default();
    ensure(detail.contains("bus 5"), || format!("abort reason `{detail}`"))?;
    ensure(observations(&out, "ScaleLoad").is_empty(), || {
        "ScaleLoad was called".into()
    })?;
    let state = session.snapshot();
    ensure(state.mutations.is_empty(), || {
        format!("{} mutations", state.mutations.len())
    })?;
    ensure(state.snapshot_hash() == before, || "state changed".into())?;
    Ok(format!("aborted: {detail}"))
}

pub fn s3() -> Result<String, String> {
    let a = GridSession::from_case("s3-a", case("twelve_bus_loss_018.json"));
    let b = GridSession::from_case("s3-b", case("twelve_bus_loss_015.json"));
    let b_before = b.snapshot().snapshot_hash();
    let mut ratios = Vec::new();
    for (session, want) in [(&a, 1.018), (&b, 1.015)] {
        let out = run_on(session, "s3_opf_costs.plan");
        ensure(out.halt_reason() == HaltReason::Completed, || {
            format!("halted with {}", out.halt_reason())
        })?;
        let cost = |name: &str| out.memory.get(name).and_then(Value::as_f64).unwrap();
        let ratio = cost("ac_cost") / cost("dc_cost");
        ensure((ratio - want).abs() <= S3_TOLERANCE, || {
            format!("ratio {ratio}, configured {want}")
        })?;
        ratios.push(ratio);
    }
    // Isolation: a mutation in one session is invisible in the other.
    a.lock().scale_load(&[3], 2.0).map_err(|e| e.to_string())?;
    ensure(b.snapshot().snapshot_hash() == b_before, || "session b changed".into())?;
    ensure(b.snapshot().mutations.is_empty(), || {
        "session b recorded a mutation".into()
    })?;
    Ok(format!("ac/dc ratios {:.12} and {:.12}", ratios[0], ratios[1]))
}

pub fn s4() -> Result<String, String> {
    let session = GridSession::from_case("s4", case("twelve_bus.json"));
    let initial: f64 = session
        .lock()
        .case
        .loads
        .iter()
        .filter(|l| l.bus == 11)
        .map(|l| l.p_mw)
        .sum();
    let out = run_on(&session, "s4_mitigation.plan");
    ensure(out.halt_reason().is_success(), || {
        format!("mitigation halted with {}", out.halt_reason())
    })?;
    let levels: Vec<f64> = observations(&out, "ScaleLoad")
        .iter()
        .map(|v| v.as_f64().unwrap() / initial)
        .collect();
    ensure(levels.len() == 3, || format!("{} reductions", levels.len()))?;
    let last = levels[2];
    ensure((last - S4_LEVEL).abs() <= S4_TOLERANCE, || {
        format!("relative level {last}")
    })?;
    let state = session.snapshot();
    let line_out = state.mutations.iter().any(|m| {
        matches!(
            m,
            Mutation::SetLineStatus {
                line: 21,
                in_service: false
            }
        )
    });
    ensure(line_out, || "line 21 outage not recorded".into())?;

    let eval = run_on(&session, "s4_evaluation.plan");
    ensure(eval.halt_reason() == HaltReason::Completed, || {
        format!("evaluation halted with {}", eval.halt_reason())
    })?;
    let loads = eval.memory.get("bus11_loads").and_then(Value::as_list).unwrap();
    let total: f64 = loads
        .iter()
        .map(|l| l.field("p_mw").and_then(Value::as_f64).unwrap())
        .sum();
    ensure((total / initial - S4_LEVEL).abs() <= S4_TOLERANCE, || {
        format!("evaluation sees {total} MW")
    })?;
    let line = &eval.memory.get("line21").and_then(Value::as_list).unwrap()[0];
    ensure(line.field("in_service") == Some(&Value::Bool(false)), || {
        "evaluation sees line 21 in service".into()
    })?;
    Ok(format!(
        "levels {}",
        levels
            .iter()
            .map(|l| format!("{l:.3}"))
            .collect::<Vec<_>>()
            .join(" -> ")
    ))
}

pub fn s5() -> Result<String, String> {
    let session = GridSession::from_case("s5", case("twelve_bus.json"));
    let out = run_on(&session, "s5_capacity_invariance.plan");
    ensure(out.halt_reason() == HaltReason::InvarianceDetected, || {
        format!("halted with {}", out.halt_reason())
    })?;
    let passes = super::passes_used(&out.trace);
    ensure(passes <= DEFAULT_INVARIANCE_WINDOW + 1, || format!("{passes} passes"))?;
    let flows: Vec<String> = observations(&out, "PowerFlow")
        .iter()
        .map(|v| serde_json::to_string(&v.field("loadings").unwrap().to_json()).unwrap())
        .collect();
    ensure(flows.len() >= 2 && flows.iter().all(|f| *f == flows[0]), || {
        "line loadings changed across passes".into()
    })?;
    let cap = session
        .snapshot()
        .case
        .gens
        .iter()
        .find(|g| g.id == 0)
        .unwrap()
        .capacity_mw;
    let want = 200.0 + 50.0 * f64::from(passes - 1);
    ensure(cap == want, || format!("generator 0 capacity {cap}, expected {want}"))?;
    let line5 = out.memory.get("line5_loading").and_then(Value::as_f64).unwrap();
    Ok(format!("halted after {passes} passes, line 5 loading {line5:.2}%"))
}

pub type Scenario = fn() -> Result<String, String>;

pub const ALL: [(&str, Scenario); 5] = [("S1", s1), ("S2", s2), ("S3", s3), ("S4", s4), ("S5", s5)];
