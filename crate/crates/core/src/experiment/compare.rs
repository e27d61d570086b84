use std::path::Path;

use serde::Serialize;

use super::ExperimentError;
use crate::rl::TraceRow;

/// Column order of a learning trace.
pub const TRACE_COLUMNS: [&str; 8] = [
    "step",
    "theta1",
    "theta2",
    "tau",
    "J",
    "J_se",
    "grad_norm",
    "critic_residual",
];

/// Parameter-step threshold and window length of the convergence test.
pub const CONVERGENCE_TOL: f64 = 1e-3;
pub const CONVERGENCE_WINDOW: usize = 20;

pub(crate) fn trace_record(r: &TraceRow) -> [String; 8] {
    [
        r.step.to_string(),
        format!("{}", r.theta1),
        format!("{}", r.theta2),
        format!("{}", r.tau),
        format!("{}", r.j),
        format!("{}", r.j_se),
        format!("{}", r.grad_norm),
        format!("{}", r.critic_residual),
    ]
}

fn schema(path: &Path, message: String) -> ExperimentError {
    ExperimentError::Schema {
        path: path.display().to_string(),
        message,
    }
}

/// Reads a learning trace, checking the header against [`TRACE_COLUMNS`].
pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, ExperimentError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| schema(path, e.to_string()))?;
    let header = rdr.headers().map_err(|e| schema(path, e.to_string()))?.clone();
    let got: Vec<&str> = header.iter().collect();
    for want in TRACE_COLUMNS {
        if !got.contains(&want) {
            return Err(schema(path, format!("missing column `{want}`")));
        }
    }
    for g in &got {
        if !TRACE_COLUMNS.contains(g) {
            return Err(schema(path, format!("unexpected column `{g}`")));
        }
    }
    if got != TRACE_COLUMNS {
        return Err(schema(
            path,
            format!("columns out of order: expected {}", TRACE_COLUMNS.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| schema(path, e.to_string()))?;
        let num = |k: usize| -> Result<f64, ExperimentError> {
            rec[k].parse::<f64>().map_err(|_| {
                schema(
                    path,
                    format!("row {}: column `{}` is not a number: {:?}", i + 1, TRACE_COLUMNS[k], &rec[k]),
                )
            })
        };
        let step = rec[0].parse::<usize>().map_err(|_| {
            schema(path, format!("row {}: column `step` is not an integer: {:?}", i + 1, &rec[0]))
        })?;
        rows.push(TraceRow {
            step,
            theta1: num(1)?,
            theta2: num(2)?,
            tau: num(3)?,
            j: num(4)?,
            j_se: num(5)?,
            grad_norm: num(6)?,
            critic_residual: num(7)?,
        });
    }
    Ok(rows)
}

/// First step `k` such that the next `window` parameter updates all have
/// norm below `tol`.
pub fn steps_to_convergence(rows: &[TraceRow], tol: f64, window: usize) -> Option<usize> {
    let mut run = 0;
    for k in 1..rows.len() {
        let d = (rows[k].theta1 - rows[k - 1].theta1).hypot(rows[k].theta2 - rows[k - 1].theta2);
        if d < tol {
            run += 1;
            if run == window {
                return Some(rows[k - window].step);
            }
        } else {
            run = 0;
        }
    }
    None
}

/// Sum of the logged performance over all steps.
pub fn area_under_j(rows: &[TraceRow]) -> f64 {
    rows.iter().map(|r| r.j).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub path: String,
    pub steps: usize,
    pub steps_to_convergence: Option<usize>,
    pub area_under_j: f64,
    pub final_theta: [f64; 2],
}

impl TraceSummary {
    pub fn new(path: String, rows: &[TraceRow]) -> Self {
        Self {
            path,
            steps: rows.len(),
            steps_to_convergence: steps_to_convergence(rows, CONVERGENCE_TOL, CONVERGENCE_WINDOW),
            area_under_j: area_under_j(rows),
            final_theta: rows.last().map_or([f64::NAN; 2], |r| [r.theta1, r.theta2]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub a: TraceSummary,
    pub b: TraceSummary,
    /// `J_a - J_b` over the common steps.
    pub j_difference: Vec<f64>,
    pub max_abs_j_difference: f64,
    /// `area_a - area_b`
    pub area_difference: f64,
}

pub fn compare_rows(a: (&str, &[TraceRow]), b: (&str, &[TraceRow])) -> Comparison {
    let j_difference: Vec<f64> = a.1.iter().zip(b.1).map(|(x, y)| x.j - y.j).collect();
    let max_abs = j_difference.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
    let sa = TraceSummary::new(a.0.to_string(), a.1);
    let sb = TraceSummary::new(b.0.to_string(), b.1);
    Comparison {
        area_difference: sa.area_under_j - sb.area_under_j,
        a: sa,
        b: sb,
        j_difference,
        max_abs_j_difference: max_abs,
    }
}

/// Compares two learning-trace CSV files.
pub fn compare(a: &Path, b: &Path) -> Result<Comparison, ExperimentError> {
    let ra = read_trace(a)?;
    let rb = read_trace(b)?;
    Ok(compare_rows(
        (&a.display().to_string(), &ra),
        (&b.display().to_string(), &rb),
    ))
}
