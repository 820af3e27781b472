//! Trace CSV format: header `t,x1,...,xn,mode`, one row per sample,
//! floats printed with 17 significant digits (exact f64 round trip),
//! UTF-8 with LF line endings.

use std::io::{BufRead, Write};

use nalgebra::DVector;

use super::{HybridTrace, SimError};

pub fn write_trace_csv<W: Write>(trace: &HybridTrace, mut out: W) -> Result<(), SimError> {
    let dim = trace.samples.first().map_or(0, |s| s.x.len());
    let mut header = String::from("t");
    for i in 1..=dim {
        header.push_str(&format!(",x{i}"));
    }
    header.push_str(",mode\n");
    out.write_all(header.as_bytes())?;
    for s in &trace.samples {
        let mut line = format!("{:.16e}", s.t);
        for v in s.x.iter() {
            line.push_str(&format!(",{v:.16e}"));
        }
        line.push(',');
        line.push_str(&s.mode);
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    Ok(())
}

/// Raw rows of a trace CSV: `(t, x)` pairs. A trailing `mode` column is
/// tolerated and ignored (ingestion re-derives labels); a file without one
/// is accepted too.
pub fn read_trace_rows<R: BufRead>(input: R) -> Result<Vec<(f64, DVector<f64>)>, SimError> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| SimError::TraceFormat("empty trace file".into()))??;
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.first() != Some(&"t") {
        return Err(SimError::TraceFormat(format!(
            "expected header starting with `t`, got `{header}`"
        )));
    }
    let has_mode = cols.last() == Some(&"mode");
    let state_cols = cols.len() - 1 - usize::from(has_mode);
    if state_cols == 0 {
        return Err(SimError::TraceFormat("header has no state columns".into()));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim_end().split(',').collect();
        if fields.len() != cols.len() {
            return Err(SimError::TraceFormat(format!(
                "row {} has {} fields, header has {}",
                lineno + 2,
                fields.len(),
                cols.len()
            )));
        }
        let parse = |s: &str| -> Result<f64, SimError> {
            s.parse::<f64>()
                .map_err(|e| SimError::TraceFormat(format!("row {}: `{s}`: {e}", lineno + 2)))
        };
        let t = parse(fields[0])?;
        let xs = fields[1..=state_cols]
            .iter()
            .map(|s| parse(s))
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push((t, DVector::from_row_slice(&xs)));
    }
    Ok(rows)
}
