//! Wait and offload graph snapshots in Graphviz DOT.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::trace::record::StepRecord;
use crate::trace::table::format_float;

/// One node per rank. Wait edges (red) carry seconds, offload edges
/// (black) carry `sent/allowed`. The critical rank and the optimal victim
/// get `critical="true"` / `victim="true"` attributes and are filled red
/// and green.
pub fn wait_graph_dot(record: &StepRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph step_{} {{", record.step);
    let _ = writeln!(out, "  node [shape=circle];");
    for r in &record.per_rank {
        let mut attrs = vec![format!("label=\"{}\"", r.rank)];
        if record.critical == Some(r.rank) {
            attrs.push("critical=\"true\"".into());
            attrs.push("style=filled".into());
            attrs.push("fillcolor=red".into());
        } else if record.victim == Some(r.rank) {
            attrs.push("victim=\"true\"".into());
            attrs.push("style=filled".into());
            attrs.push("fillcolor=green".into());
        }
        let _ = writeln!(out, "  r{} [{}];", r.rank, attrs.join(", "));
    }
    for &(i, j, w) in &record.wait_edges {
        let _ = writeln!(
            out,
            "  r{i} -> r{j} [kind=wait, color=red, label=\"{}s\"];",
            format_float(w)
        );
    }
    for r in &record.per_rank {
        let mut pairs: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for (&j, &n) in &r.tasks_allowed_to {
            pairs.entry(j).or_default().1 = n;
        }
        for (&j, &n) in &r.tasks_offloaded_to {
            pairs.entry(j).or_default().0 = n;
        }
        for (j, (sent, allowed)) in pairs {
            let _ = writeln!(
                out,
                "  r{} -> r{j} [kind=offload, color=black, label=\"{sent}/{allowed}\"];",
                r.rank
            );
        }
    }
    out.push_str("}\n");
    out
}
