use std::path::Path;

use crate::error::{CliError, Result};
use crate::run::COLUMNS;

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub sweep_param: String,
    pub value: f64,
    /// fidelity, contrast, efficiency
    pub metrics: [f64; 3],
    pub corrected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowDelta {
    pub sweep_param: String,
    pub value: f64,
    /// `b - a` per metric.
    pub absolute: [f64; 3],
    /// `(b - a) / |a|`, zero when both vanish.
    pub relative: [f64; 3],
}

impl RowDelta {
    pub fn max_abs(&self) -> f64 {
        self.absolute.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

fn parse_f64(path: &Path, line: usize, field: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| CliError::Schema(format!("{}: record {line}: `{field}` is not a number: {s:?}", path.display())))
}

pub fn read_results(path: &Path) -> Result<Vec<Row>> {
    let csv_err = |e| CliError::Csv {
        path: path.display().to_string(),
        source: e,
    };
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != COLUMNS {
        return Err(CliError::Schema(format!(
            "{}: expected columns {}, found {}",
            path.display(),
            COLUMNS.join(","),
            header.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = i + 1;
        let corrected = match &rec[5] {
            "true" => true,
            "false" => false,
            other => return Err(CliError::Schema(format!("{}: record {line}: bad `corrected` value {other:?}", path.display()))),
        };
        rows.push(Row {
            sweep_param: rec[0].to_string(),
            value: parse_f64(path, line, "value", &rec[1])?,
            metrics: [
                parse_f64(path, line, "fidelity", &rec[2])?,
                parse_f64(path, line, "contrast", &rec[3])?,
                parse_f64(path, line, "efficiency", &rec[4])?,
            ],
            corrected,
        });
    }
    Ok(rows)
}

/// Row-by-row deltas of `b` against `a`. Rows must share sweep parameter and value.
pub fn compare(a: &[Row], b: &[Row]) -> Result<Vec<RowDelta>> {
    if a.len() != b.len() {
        return Err(CliError::Schema(format!("row counts differ: {} vs {}", a.len(), b.len())));
    }
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| {
            if x.sweep_param != y.sweep_param || x.value != y.value {
                return Err(CliError::Schema(format!(
                    "row {}: ({}, {}) vs ({}, {})",
                    i + 1,
                    x.sweep_param,
                    x.value,
                    y.sweep_param,
                    y.value
                )));
            }
            let absolute = [0, 1, 2].map(|k| y.metrics[k] - x.metrics[k]);
            let relative = [0, 1, 2].map(|k| {
                let d = absolute[k];
                if d == 0.0 {
                    0.0
                } else {
                    d / x.metrics[k].abs()
                }
            });
            Ok(RowDelta {
                sweep_param: x.sweep_param.clone(),
                value: x.value,
                absolute,
                relative,
            })
        })
        .collect()
}

pub fn report(deltas: &[RowDelta]) -> String {
    let mut out = String::from("sweep_param,value,d_fidelity,d_contrast,d_efficiency,rel_fidelity,rel_contrast,rel_efficiency\n");
    for d in deltas {
        out.push_str(&format!("{},{:.16e}", d.sweep_param, d.value));
        for x in d.absolute.iter().chain(&d.relative) {
            out.push_str(&format!(",{x:.6e}"));
        }
        out.push('\n');
    }
    out
}

/// Prints the report and fails if any absolute delta exceeds `tol`.
pub fn compare_files(a: &Path, b: &Path, tol: f64) -> Result<Vec<RowDelta>> {
    let deltas = compare(&read_results(a)?, &read_results(b)?)?;
    print!("{}", report(&deltas));
    let count = deltas.iter().filter(|d| !(d.max_abs() <= tol)).count();
    if count > 0 {
        return Err(CliError::OutOfTolerance { count, tol });
    }
    Ok(deltas)
}
