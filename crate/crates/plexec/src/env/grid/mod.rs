//! Toy power-grid environment: a linear voltage model, a DC power flow and
//! a merit-order OPF over a small case file.

mod case;
mod state;

pub use case::{Bus, CaseError, Gen, GridCase, Line, Load, OpfConfig, Sensitivity, VoltageModel, DEFAULT_LOSS_FACTOR};
pub use state::{GridError, GridSession, GridState, Mutation, OpfMethod, PowerFlow, TABLES};

use super::registry::{arg_f64, arg_id, arg_str, ArgSpec, Args, ToolRegistry, ToolSpec};
use crate::value::{Value, ValueKind};

/// Default number of lines reported by `RankLines`.
pub const DEFAULT_RANK: usize = 5;

fn load_ids(items: &[Value]) -> Result<Vec<u32>, GridError> {
    items
        .iter()
        .map(|v| {
            let n = match v {
                Value::Record(_) => v.field("id").and_then(Value::as_f64),
                other => other.as_f64(),
            };
            match n {
                Some(n) if n >= 0.0 && n.fract() == 0.0 && n <= u32::MAX as f64 => Ok(n as u32),
                _ => Err(GridError::MalformedLoadIndex(v.to_string())),
            }
        })
        .collect()
}

type Handler = Box<dyn Fn(&GridSession, &Args) -> Result<Value, GridError> + Send + Sync>;

/// Registers `RetrieveTool`, `ScaleLoad`, `PowerFlow`, `SetLineStatus`,
/// `SetGenCapacity`, `OpfCost` and `RankLines` against one session.
pub fn grid_tools(session: &GridSession) -> ToolRegistry {
    let mut r = ToolRegistry::new();
    let mut add = |spec: ToolSpec, f: Handler| {
        let s = session.clone();
        r.register(spec, move |args| f(&s, args).map_err(|e| e.to_string()))
            .expect("grid tool names are distinct");
    };

    add(
        ToolSpec::new(
            "RetrieveTool",
            "Records of a grid table (bus, line, load, gen) matching a field filter",
            ValueKind::List,
        )
        .arg(ArgSpec::required("table", ValueKind::String))
        .arg(ArgSpec::optional("filter", ValueKind::Record)),
        Box::new(|s, args| {
            let table = arg_str(args, "table").unwrap_or_default();
            let empty = Default::default();
            let filter = args.get("filter").and_then(Value::as_record).unwrap_or(&empty);
            s.lock().retrieve(table, filter).map(Value::List)
        }),
    );
    add(
        ToolSpec::new(
            "ScaleLoad",
            "Multiply the listed loads by a factor; returns their new total MW",
            ValueKind::Number,
        )
        .arg(ArgSpec::required("indices", ValueKind::List))
        .arg(ArgSpec::required("factor", ValueKind::Number))
        .mutating(),
        Box::new(|s, args| {
            let ids = load_ids(args.get("indices").and_then(Value::as_list).unwrap_or_default())?;
            let factor = args.get("factor").and_then(Value::as_f64).unwrap_or(f64::NAN);
            s.lock().scale_load(&ids, factor).map(Value::Number)
        }),
    );
    add(
        ToolSpec::new(
            "PowerFlow",
            "Bus voltages (pu) and line loadings (%) for the current state",
            ValueKind::Record,
        ),
        Box::new(|s, _| s.lock().power_flow().map(|pf| pf.to_value())),
    );
    add(
        ToolSpec::new("SetLineStatus", "Put a line in or out of service", ValueKind::String)
            .arg(ArgSpec::required("line", ValueKind::Number))
            .arg(ArgSpec::required("in_service", ValueKind::Bool))
            .mutating(),
        Box::new(|s, args| {
            let line = arg_id(args, "line").map_err(|_| GridError::UnknownLine(u32::MAX))?;
            let on = matches!(args.get("in_service"), Some(Value::Bool(true)));
            s.lock().set_line_status(line, on).map(Value::String)
        }),
    );
    add(
        ToolSpec::new(
            "SetGenCapacity",
            "Change a generator's capacity; dispatch is unchanged",
            ValueKind::String,
        )
        .arg(ArgSpec::required("gen", ValueKind::Number))
        .arg(ArgSpec::required("capacity_mw", ValueKind::Number))
        .mutating(),
        Box::new(|s, args| {
            let gen = arg_id(args, "gen").map_err(|_| GridError::UnknownGenerator(u32::MAX))?;
            let cap = arg_f64(args, "capacity_mw").unwrap_or(f64::NAN);
            s.lock().set_gen_capacity(gen, cap).map(Value::String)
        }),
    );
    add(
        ToolSpec::new(
            "OpfCost",
            "Total generation cost by merit order, method 'ac' or 'dc'",
            ValueKind::Number,
        )
        .arg(ArgSpec::required("method", ValueKind::String)),
        Box::new(|s, args| {
            let method: OpfMethod = arg_str(args, "method").unwrap_or_default().parse()?;
            s.lock().opf_cost(method).map(Value::Number)
        }),
    );
    add(
        ToolSpec::new(
            "RankLines",
            "The n most loaded lines as {line, loading} records",
            ValueKind::List,
        )
        .arg(ArgSpec::optional("n", ValueKind::Number)),
        Box::new(|s, args| {
            let n = arg_id(args, "n").map(|n| n as usize).unwrap_or(DEFAULT_RANK);
            let pf = s.lock().power_flow()?;
            let mut lines: Vec<(u32, f64)> = pf.loadings.into_iter().collect();
            lines.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            Ok(Value::List(
                lines
                    .into_iter()
                    .take(n)
                    .map(|(id, l)| Value::record([("line", Value::Number(id as f64)), ("loading", Value::Number(l))]))
                    .collect(),
            ))
        }),
    );
    r
}
