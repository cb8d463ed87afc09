//! Tabulated sweep output shared by the spectrum, dynamics and axial runs.

use std::fmt::Write as _;

use crate::error::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub values: Vec<f64>,
    /// Diagnostic for rows whose numbers are only best estimates.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub columns: Vec<String>,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, values: Vec<f64>, error: Option<String>) {
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push(SweepRow { values, error });
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.values[idx]).collect())
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    /// CSV with a trailing `error` column. Numbers use the shortest decimal
    /// form that round-trips.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push_str(",error\n");
        for row in &self.rows {
            for v in &row.values {
                if *v != 0.0 && v.is_finite() && !(1e-3..1e7).contains(&v.abs()) {
                    let _ = write!(out, "{v:e},");
                } else {
                    let _ = write!(out, "{v},");
                }
            }
            if let Some(e) = &row.error {
                out.push_str(&e.replace([',', '\n'], ";"));
            }
            out.push('\n');
        }
        out
    }
}

/// Best available value of a failed computation plus its message.
pub(crate) fn salvage(err: &Error) -> (f64, f64, String) {
    match err {
        Error::Convergence { best } => (best.value, best.error_estimate, err.to_string()),
        _ => (f64::NAN, f64::NAN, err.to_string()),
    }
}
