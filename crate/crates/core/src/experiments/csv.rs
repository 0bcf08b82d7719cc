//! Trace files: `#`-prefixed metadata lines, a header, then one row per
//! recorded iteration. Floats carry 17 significant digits so values survive a
//! round trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::algorithm::{RunTrace, TraceRow};
use crate::error::{Error, Result};

pub const HEADER: &str = "k,rel_error,lyapunov,grad_evals,comm_rounds,kkt_stat,kkt_feas";

fn float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Renders a trace; multi-line metadata values become one comment line each.
pub fn format_trace(trace: &RunTrace) -> String {
    let mut out = String::new();
    for (key, value) in &trace.metadata {
        for line in value.lines() {
            let _ = writeln!(out, "# {key}: {line}");
        }
    }
    out.push_str(HEADER);
    out.push('\n');
    for r in &trace.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.k,
            float(r.rel_error),
            float(r.lyapunov),
            r.grad_evals,
            r.comm_rounds,
            float(r.kkt_stat),
            float(r.kkt_feas)
        );
    }
    out
}

pub fn emit_csv(trace: &RunTrace, path: &Path) -> Result<()> {
    std::fs::write(path, format_trace(trace))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTrace {
    pub metadata: Vec<(String, String)>,
    pub rows: Vec<TraceRow>,
}

pub fn parse_trace(text: &str) -> Result<ParsedTrace> {
    let mut metadata = Vec::new();
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let err = |msg: String| Error::Parse { line: line_no, msg };
        if let Some(rest) = line.strip_prefix("# ") {
            let (k, v) = rest.split_once(": ").ok_or_else(|| err("metadata line lacks ': '".into()))?;
            metadata.push((k.to_string(), v.to_string()));
            continue;
        }
        if !seen_header {
            if line != HEADER {
                return Err(err(format!("expected header '{HEADER}'")));
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(err(format!("expected 7 fields, found {}", fields.len())));
        }
        let f = |i: usize| fields[i].parse::<f64>().map_err(|e| err(format!("field {i}: {e}")));
        let u = |i: usize| fields[i].parse::<u64>().map_err(|e| err(format!("field {i}: {e}")));
        rows.push(TraceRow {
            k: u(0)? as usize,
            rel_error: f(1)?,
            lyapunov: f(2)?,
            grad_evals: u(3)?,
            comm_rounds: u(4)?,
            kkt_stat: f(5)?,
            kkt_feas: f(6)?,
        });
    }
    if !seen_header {
        return Err(Error::Parse { line: 0, msg: "missing header".into() });
    }
    Ok(ParsedTrace { metadata, rows })
}

pub fn read_trace(path: &Path) -> Result<ParsedTrace> {
    parse_trace(&std::fs::read_to_string(path)?)
}

/// File-system friendly name such as `FlexPD-C_T2_seed3.csv`.
pub fn trace_file_name(method: &str, t: usize, seed: u64) -> String {
    let base: String = method
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("{base}_T{t}_seed{seed}.csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithm::AlgorithmState;
    use nalgebra::DMatrix;

    fn sample() -> RunTrace {
        let row = |k: usize, e: f64| TraceRow {
            k,
            rel_error: e,
            lyapunov: 0.1 / 3.0 * e,
            grad_evals: 10 * k as u64,
            comm_rounds: 2 * k as u64,
            kkt_stat: std::f64::consts::PI * e,
            kkt_feas: f64::NAN,
        };
        RunTrace {
            metadata: vec![("method".into(), "FlexPD-C(T=2)".into()), ("cert".into(), "alpha = 1e-3\nbeta = 2".into())],
            rows: vec![row(0, 1.0), row(1, 0.123456789012345678)],
            converged_at: None,
            final_state: AlgorithmState::new(DMatrix::zeros(2, 1), 1),
        }
    }

    #[test]
    fn two_rows_give_header_metadata_and_two_lines() {
        let text = format_trace(&sample());
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.iter().filter(|l| l.starts_with('#')).count(), 3);
        assert_eq!(lines.iter().filter(|l| **l == HEADER).count(), 1);
        assert_eq!(lines.len(), 3 + 1 + 2);
    }

    #[test]
    fn round_trip_is_exact() {
        let tr = sample();
        let parsed = parse_trace(&format_trace(&tr)).unwrap();
        assert_eq!(parsed.rows.len(), 2);
        for (a, b) in parsed.rows.iter().zip(&tr.rows) {
            assert_eq!(a.rel_error.to_bits(), b.rel_error.to_bits());
            assert_eq!(a.lyapunov.to_bits(), b.lyapunov.to_bits());
            assert_eq!(a.kkt_stat.to_bits(), b.kkt_stat.to_bits());
            assert!(a.kkt_feas.is_nan());
            assert_eq!((a.k, a.grad_evals, a.comm_rounds), (b.k, b.grad_evals, b.comm_rounds));
        }
        assert_eq!(parsed.metadata[2], ("cert".to_string(), "beta = 2".to_string()));
    }

    #[test]
    fn malformed_input_reports_line() {
        let bad = format!("{HEADER}\n1,2,3\n");
        assert!(matches!(parse_trace(&bad), Err(Error::Parse { line: 2, .. })));
        assert!(parse_trace("k,x\n").is_err());
    }

    #[test]
    fn file_names() {
        assert_eq!(trace_file_name("FlexPD-C", 2, 3), "FlexPD-C_T2_seed3.csv");
        assert_eq!(trace_file_name("a b", 1, 0), "a_b_T1_seed0.csv");
    }
}
