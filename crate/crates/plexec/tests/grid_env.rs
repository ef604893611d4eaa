mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;
use serde_json::json;

use plexec::env::grid::{grid_tools, GridCase, GridError, GridSession, GridState, OpfMethod};
use plexec::value::Value;

/// A connected random network: a spanning tree plus extra lines, loads on
/// non-slack buses, a slack generator at bus 1 and one dispatched unit.
fn random_case() -> impl Strategy<Value = GridCase> {
    (3u32..9)
        .prop_flat_map(|n| {
            (
                Just(n),
                prop::collection::vec((any::<prop::sample::Index>(), 0.2f64..3.0), (n - 1) as usize),
                prop::collection::vec((1..=n, 1..=n, 0.2f64..3.0), 0..4),
                prop::collection::vec((2..=n, 0.0f64..80.0), 1..6),
                prop::collection::vec((1..=n, 1..=n, 0.0f64..0.001), 0..10),
                (2..=n, 0.0f64..40.0),
            )
        })
        .prop_map(|(n, tree, extra, loads, alpha, (gen_bus, dispatch))| {
            let mut lines = Vec::new();
            for (k, (parent, x)) in tree.into_iter().enumerate() {
                let child = k as u32 + 2;
                let parent = parent.index(child as usize - 1) as u32 + 1;
                lines.push(
                    json!({"id": lines.len() + 1, "from": parent, "to": child, "capacity_mw": 100.0, "reactance": x}),
                );
            }
            for (a, b, x) in extra.into_iter().filter(|(a, b, _)| a != b) {
                lines.push(json!({"id": lines.len() + 1, "from": a, "to": b, "capacity_mw": 50.0, "reactance": x}));
            }
            let loads: Vec<_> = loads
                .into_iter()
                .enumerate()
                .map(|(i, (bus, p))| json!({"id": i + 1, "bus": bus, "p_mw": p}))
                .collect();
            let alpha: Vec<_> = alpha
                .into_iter()
                .map(|(bus, load_bus, value)| json!({"bus": bus, "load_bus": load_bus, "value": value}))
                .collect();
            let case = json!({
                "format_version": 1,
                "name": "random",
                "buses": (1..=n).map(|id| json!({"id": id, "base_kv": 138.0})).collect::<Vec<_>>(),
                "lines": lines,
                "loads": loads,
                "gens": [
                    {"id": 0, "bus": 1, "capacity_mw": 2000.0, "dispatch_mw": 0.0, "cost_per_mwh": 20.0, "slack": true},
                    {"id": 1, "bus": gen_bus, "capacity_mw": 100.0, "dispatch_mw": dispatch, "cost_per_mwh": 30.0}
                ],
                "voltage_model": {"v0": {}, "alpha": alpha},
            });
            GridCase::from_json(&case.to_string()).expect("generated case is valid")
        })
}

/// Net power leaving each bus over its lines.
fn net_outflow(case: &GridCase, flows: &BTreeMap<u32, f64>) -> BTreeMap<u32, f64> {
    let mut out: BTreeMap<u32, f64> = case.buses.iter().map(|b| (b.id, 0.0)).collect();
    for l in &case.lines {
        *out.get_mut(&l.from).unwrap() += flows[&l.id];
        *out.get_mut(&l.to).unwrap() -= flows[&l.id];
    }
    out
}

proptest! {
    #[test]
    fn flows_conserve_power_at_every_bus(case in random_case()) {
        let state = GridState::new("p", case.clone());
        let pf = state.power_flow().unwrap();
        let out = net_outflow(&case, &pf.flows);
        for bus in &case.buses {
            let load: f64 = case.loads.iter().filter(|l| l.bus == bus.id).map(|l| l.p_mw).sum();
            let gen: f64 = case.gens.iter().filter(|g| g.bus == bus.id && !g.slack).map(|g| g.dispatch_mw).sum();
            if bus.id != 1 {
                prop_assert!((out[&bus.id] - (gen - load)).abs() < 1e-6, "bus {}: {} vs {}", bus.id, out[&bus.id], gen - load);
            }
        }
        let total: f64 = out.values().sum();
        prop_assert!(total.abs() < 1e-6);
    }

    #[test]
    fn raising_load_never_raises_a_voltage(case in random_case(), factor in 1.0f64..3.0) {
        let mut state = GridState::new("p", case.clone());
        let before = state.power_flow().unwrap();
        let ids: Vec<u32> = case.loads.iter().map(|l| l.id).collect();
        state.scale_load(&ids, factor).unwrap();
        let after = state.power_flow().unwrap();
        for (bus, v) in &after.voltages {
            prop_assert!(*v <= before.voltages[bus] + 1e-15);
        }
        prop_assert!(after.min_voltage() <= before.min_voltage() + 1e-15);
    }

    #[test]
    fn generator_capacity_never_moves_the_flow(case in random_case(), cap in 100.0f64..5000.0) {
        let mut state = GridState::new("p", case);
        let before = serde_json::to_string(&state.power_flow().unwrap().to_value().to_json()).unwrap();
        state.set_gen_capacity(1, cap).unwrap();
        state.set_gen_capacity(0, cap).unwrap();
        let after = serde_json::to_string(&state.power_flow().unwrap().to_value().to_json()).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn scaling_composes_multiplicatively(case in random_case(), a in 0.5f64..1.5, b in 0.5f64..1.5) {
        let mut state = GridState::new("p", case.clone());
        let ids: Vec<u32> = case.loads.iter().map(|l| l.id).collect();
        let start: f64 = case.loads.iter().map(|l| l.p_mw).sum();
        state.scale_load(&ids, a).unwrap();
        let total = state.scale_load(&ids, b).unwrap();
        prop_assert!((total - start * a * b).abs() <= 1e-9 * start.max(1.0));
    }
}

#[test]
fn three_tenths_reductions_reach_0_729() {
    let mut state = GridState::new("t", common::scenarios::case("twelve_bus.json"));
    let mut level = 0.0;
    for _ in 0..3 {
        level = state.scale_load(&[3, 4], 0.9).unwrap();
    }
    assert!((level / 100.0 - 0.729).abs() <= 1e-12, "{level}");
}

#[test]
fn bus_filters_match_the_fixture_file() {
    let raw: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(common::fixture("grid/twelve_bus.json")).unwrap()).unwrap();
    let state = GridState::new("t", common::scenarios::case("twelve_bus.json"));
    for bus in 1..=12u64 {
        let want: Vec<u64> = raw["loads"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|l| l["bus"].as_u64() == Some(bus))
            .map(|l| l["id"].as_u64().unwrap())
            .collect();
        let filter = BTreeMap::from([("bus".to_string(), Value::Number(bus as f64))]);
        let got: Vec<u64> = state
            .retrieve("load", &filter)
            .unwrap()
            .iter()
            .map(|r| r.field("id").and_then(Value::as_f64).unwrap() as u64)
            .collect();
        assert_eq!(got, want, "bus {bus}");
    }
    assert_eq!(
        state
            .retrieve("load", &BTreeMap::from([("bus".to_string(), Value::Number(11.0))]))
            .unwrap()
            .len(),
        2
    );
}

#[test]
fn line_21_outage_shifts_its_flow_to_the_parallel_circuit() {
    let mut state = GridState::new("t", common::scenarios::case("twelve_bus.json"));
    let before = state.power_flow().unwrap();
    state.set_line_status(21, false).unwrap();
    let after = state.power_flow().unwrap();
    assert_eq!(after.flows[&21], 0.0);
    assert!(after.loadings[&11] > 100.0 && before.loadings[&11] < 100.0);
    // Parallel identical circuits split evenly before the outage.
    assert!((before.flows[&11] - before.flows[&21]).abs() < 1e-9);
    let out = net_outflow(&state.case, &after.flows);
    assert!((out[&11] + 100.0).abs() < 1e-9, "bus 11 draws its 100 MW: {}", out[&11]);
}

#[test]
fn opf_ratio_equals_the_loss_factor() {
    for (file, lf) in [("twelve_bus_loss_018.json", 0.018), ("twelve_bus_loss_015.json", 0.015)] {
        let state = GridState::new("t", common::scenarios::case(file));
        let ac = state.opf_cost(OpfMethod::Ac).unwrap();
        let dc = state.opf_cost(OpfMethod::Dc).unwrap();
        assert!((ac / dc - (1.0 + lf)).abs() <= 1e-9);
        // Merit order by hand over the 300 MW of demand, cheapest units first.
        let demand: f64 = state.case.loads.iter().map(|l| l.p_mw).sum();
        assert_eq!(demand, 300.0);
        let mut rest = demand;
        let mut cost = 0.0;
        let mut gens: Vec<_> = state.case.gens.iter().collect();
        gens.sort_by(|a, b| a.cost_per_mwh.total_cmp(&b.cost_per_mwh));
        for g in gens {
            let take = rest.min(g.capacity_mw);
            cost += take * g.cost_per_mwh;
            rest -= take;
        }
        assert!((dc - cost).abs() < 1e-9, "{dc} vs {cost}");
    }
}

#[test]
fn islanding_is_reported() {
    let mut state = GridState::new("t", common::scenarios::case("twelve_bus.json"));
    let pf = state.power_flow().unwrap();
    let ids: Vec<u32> = state
        .case
        .lines
        .iter()
        .filter(|l| l.from == 12 || l.to == 12)
        .map(|l| l.id)
        .collect();
    for id in ids {
        state.set_line_status(id, false).unwrap();
    }
    assert_eq!(state.power_flow().unwrap_err(), GridError::IslandedBus(12));
    assert!(pf.max_loading() > 0.0);
}

#[test]
fn sessions_persist_through_files_and_stay_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("shared.json");
    let first = GridSession::from_case("shared", common::scenarios::case("twelve_bus.json"));
    grid_tools(&first)
        .call(
            "ScaleLoad",
            &[
                ("indices".to_string(), Value::List(vec![Value::Number(3.0)])),
                ("factor".to_string(), Value::Number(0.5)),
            ]
            .into_iter()
            .collect(),
        )
        .unwrap();
    first.snapshot().save(&path).unwrap();

    let second = GridSession::new(GridState::load(&path).unwrap());
    assert_eq!(second.snapshot().snapshot_hash(), first.snapshot().snapshot_hash());
    assert_eq!(second.lock().case.loads.iter().find(|l| l.id == 3).unwrap().p_mw, 30.0);

    let other = GridSession::from_case("other", common::scenarios::case("twelve_bus.json"));
    assert_eq!(other.lock().case.loads.iter().find(|l| l.id == 3).unwrap().p_mw, 60.0);
    assert!(other.snapshot().mutations.is_empty());
}
