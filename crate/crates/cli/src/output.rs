use std::io::Write;
use std::path::Path;

use anyhow::Context;
use radflow::network::RadialNetwork;
use radflow::solvers::IterRecord;
use serde::Serialize;

use crate::methods::Outcome;

pub const TRAJECTORY_HEADER: [&str; 6] = ["iter", "f", "grad_norm", "max_dv", "step", "time_ms"];

#[derive(Serialize)]
struct TrajectoryRow {
    iter: usize,
    f: f64,
    grad_norm: f64,
    max_dv: f64,
    step: f64,
    time_ms: f64,
}

impl From<&IterRecord> for TrajectoryRow {
    fn from(r: &IterRecord) -> Self {
        Self {
            iter: r.iter,
            f: r.f,
            grad_norm: r.grad_norm,
            max_dv: r.max_dv,
            step: r.step,
            time_ms: r.time_ms,
        }
    }
}

/// Shortest round-trip text for `x`, in scientific notation when plain
/// decimals would be long.
pub fn fmt_num(x: f64) -> String {
    let a = x.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !a.is_finite() {
        x.to_string()
    } else {
        format!("{x:e}")
    }
}

pub fn trajectory_csv(records: &[IterRecord]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    // written explicitly so an empty trajectory still carries the header
    w.write_record(TRAJECTORY_HEADER)?;
    for r in records {
        w.write_record([
            r.iter.to_string(),
            fmt_num(r.f),
            fmt_num(r.grad_norm),
            fmt_num(r.max_dv),
            fmt_num(r.step),
            fmt_num(r.time_ms),
        ])?;
    }
    Ok(w.into_inner()?)
}

pub fn trajectory_json(records: &[IterRecord]) -> anyhow::Result<Vec<u8>> {
    let rows: Vec<TrajectoryRow> = records.iter().map(TrajectoryRow::from).collect();
    Ok(serde_json::to_vec_pretty(&rows)?)
}

#[derive(Serialize)]
struct NodeOut {
    id: i64,
    vm: f64,
    va: f64,
}

#[derive(Serialize)]
struct LineOut {
    id: usize,
    p: f64,
    q: f64,
    l: f64,
}

#[derive(Serialize)]
struct SolutionOut {
    converged: bool,
    iterations: usize,
    nodes: Vec<NodeOut>,
    lines: Vec<LineOut>,
}

/// Per-node magnitudes and angles (slack first) and per-line flows. Line
/// `id` is 1-based and line `k` feeds the `k`-th non-slack node.
pub fn solution_json(net: &RadialNetwork, run: &Outcome) -> anyhow::Result<Vec<u8>> {
    let u = &run.solution;
    let mut vm = vec![net.v0().sqrt()];
    vm.extend(u.voltage().iter().map(|v| v.sqrt()));
    let nodes = net
        .node_ids()
        .iter()
        .zip(vm)
        .zip(&run.angles)
        .map(|((&id, vm), &va)| NodeOut { id, vm, va })
        .collect();
    let lines = (0..net.j())
        .map(|k| LineOut {
            id: k + 1,
            p: u.flow_p()[k],
            q: u.flow_q()[k],
            l: u.current()[k],
        })
        .collect();
    let out = SolutionOut {
        converged: run.converged,
        iterations: run.iterations,
        nodes,
        lines,
    };
    Ok(serde_json::to_vec_pretty(&out)?)
}

/// Write `bytes` to `dir/name` through a temporary file in the same
/// directory, so readers never see a partial file.
pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(&target)
        .with_context(|| format!("cannot write {}", target.display()))?;
    Ok(())
}
