//! Flat CSV export, one row per (step, rank).

use std::io::{Read, Write};

use crate::balancer::quota::QuotaRow;
use crate::error::{Error, Result};
use crate::trace::record::{EventLog, RankStepRecord, StepRecord};

/// Column order of the export. Step level fields repeat on every row of
/// the step. Maps are written as `rank:value` pairs joined by `;`.
pub const CSV_HEADER: [&str; 19] = [
    "step",
    "rank",
    "start_time",
    "makespan",
    "time_in_step",
    "tasks_spawned",
    "tasks_executed",
    "tasks_hosted",
    "tasks_offloaded",
    "offloaded_to",
    "allowed_to",
    "recomputes",
    "wasted_returns",
    "emergencies",
    "omega_diff",
    "blacklist_weight",
    "wait_out",
    "critical",
    "victim",
];

/// Nine significant digits in scientific notation.
pub fn format_float(x: f64) -> String {
    format!("{x:.8e}")
}

fn format_row(row: &QuotaRow) -> String {
    row.iter()
        .map(|(r, n)| format!("{r}:{n}"))
        .collect::<Vec<_>>()
        .join(";")
}

fn format_waits(edges: &[(usize, usize, f64)], from: usize) -> String {
    edges
        .iter()
        .filter(|e| e.0 == from)
        .map(|&(_, j, w)| format!("{j}:{}", format_float(w)))
        .collect::<Vec<_>>()
        .join(";")
}

fn format_opt(x: Option<usize>) -> String {
    x.map(|r| r.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidInput(format!("csv: {other:?}")),
    }
}

pub fn write_csv<W: Write>(log: &EventLog, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for step in &log.steps {
        for r in &step.per_rank {
            w.write_record([
                step.step.to_string(),
                r.rank.to_string(),
                format_float(step.start_time),
                format_float(step.makespan),
                format_float(r.time_in_step),
                r.tasks_spawned.to_string(),
                r.tasks_executed.to_string(),
                r.tasks_hosted.to_string(),
                r.tasks_offloaded().to_string(),
                format_row(&r.tasks_offloaded_to),
                format_row(&r.tasks_allowed_to),
                r.recomputes.to_string(),
                r.wasted_returns.to_string(),
                r.emergencies.to_string(),
                format_float(r.omega_diff),
                format_float(r.blacklist_weight),
                format_waits(&step.wait_edges, r.rank),
                format_opt(step.critical),
                format_opt(step.victim),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(log: &EventLog) -> String {
    let mut buf = Vec::new();
    write_csv(log, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

fn bad(row: usize, what: &str, value: &str) -> Error {
    Error::InvalidInput(format!("csv row {row}: bad {what} {value:?}"))
}

fn num<T: std::str::FromStr>(row: usize, what: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(row, what, value))
}

fn pairs<T: std::str::FromStr>(row: usize, what: &str, value: &str) -> Result<Vec<(usize, T)>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(';')
        .map(|item| {
            let (k, v) = item.split_once(':').ok_or_else(|| bad(row, what, value))?;
            Ok((num(row, what, k)?, num(row, what, v)?))
        })
        .collect()
}

fn opt(row: usize, what: &str, value: &str) -> Result<Option<usize>> {
    if value.is_empty() {
        Ok(None)
    } else {
        num(row, what, value).map(Some)
    }
}

/// Rebuilds the step records from an export. Counts that the CSV derives
/// (`tasks_offloaded`) are checked against the map they summarize.
pub fn read_csv<R: Read>(input: R) -> Result<Vec<StepRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::InvalidInput(format!("unexpected csv header {header:?}")));
    }
    let mut steps: Vec<StepRecord> = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = idx + 2;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let step_no: usize = num(row, "step", f(0))?;
        let rank: usize = num(row, "rank", f(1))?;
        if steps.last().map(|s| s.step) != Some(step_no) {
            steps.push(StepRecord {
                step: step_no,
                start_time: num(row, "start_time", f(2))?,
                makespan: num(row, "makespan", f(3))?,
                per_rank: Vec::new(),
                wait_edges: Vec::new(),
                critical: opt(row, "critical", f(17))?,
                victim: opt(row, "victim", f(18))?,
            });
        }
        let step = steps.last_mut().expect("pushed above");
        let record = RankStepRecord {
            rank,
            time_in_step: num(row, "time_in_step", f(4))?,
            tasks_spawned: num(row, "tasks_spawned", f(5))?,
            tasks_executed: num(row, "tasks_executed", f(6))?,
            tasks_hosted: num(row, "tasks_hosted", f(7))?,
            tasks_offloaded_to: pairs(row, "offloaded_to", f(9))?.into_iter().collect(),
            tasks_allowed_to: pairs(row, "allowed_to", f(10))?.into_iter().collect(),
            recomputes: num(row, "recomputes", f(11))?,
            wasted_returns: num(row, "wasted_returns", f(12))?,
            emergencies: num(row, "emergencies", f(13))?,
            omega_diff: num(row, "omega_diff", f(14))?,
            blacklist_weight: num(row, "blacklist_weight", f(15))?,
        };
        let offloaded: usize = num(row, "tasks_offloaded", f(8))?;
        if offloaded != record.tasks_offloaded() {
            return Err(bad(row, "tasks_offloaded", f(8)));
        }
        for (j, w) in pairs::<f64>(row, "wait_out", f(16))? {
            step.wait_edges.push((rank, j, w));
        }
        step.per_rank.push(record);
    }
    Ok(steps)
}
