//! Plain-text iteration traces, one record per outer iteration.

use std::io::{BufRead, Write};

use crate::pipeline::IterationTrace;

pub const TRACE_HEADER: &str = "# k data convective isotropic total step_norm cg_iters";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub k: usize,
    pub data: f64,
    pub convective: f64,
    pub isotropic: f64,
    pub total: f64,
    pub step_norm: f64,
    pub cg_iters: usize,
}

pub fn trace_records(trace: &IterationTrace) -> Vec<TraceRecord> {
    trace
        .iterations
        .iter()
        .map(|it| TraceRecord {
            k: it.k,
            data: it.energy.data,
            convective: it.energy.convective,
            isotropic: it.energy.isotropic,
            total: it.energy.total,
            step_norm: it.step_norm,
            cg_iters: it.solve.iterations,
        })
        .collect()
}

pub fn write_trace<W: Write>(mut out: W, records: &[TraceRecord]) -> std::io::Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{} {:.12e} {:.12e} {:.12e} {:.12e} {:.12e} {}",
            r.k, r.data, r.convective, r.isotropic, r.total, r.step_norm, r.cg_iters
        )?;
    }
    Ok(())
}

/// Parses a trace; lines starting with `#` and blank lines are skipped.
pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<TraceRecord>, String> {
    let mut records = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 7 {
            return Err(format!("line {}: expected 7 fields, found {}", n + 1, fields.len()));
        }
        let real = |i: usize| fields[i].parse::<f64>().map_err(|e| format!("line {}: {e}", n + 1));
        let int = |i: usize| fields[i].parse::<usize>().map_err(|e| format!("line {}: {e}", n + 1));
        records.push(TraceRecord {
            k: int(0)?,
            data: real(1)?,
            convective: real(2)?,
            isotropic: real(3)?,
            total: real(4)?,
            step_norm: real(5)?,
            cg_iters: int(6)?,
        });
    }
    Ok(records)
}
