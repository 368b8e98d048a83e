//! CSV emission. Floats carry 17 significant digits so every value reads
//! back to the same `f64`.

use std::path::{Path, PathBuf};

use modeconn::analysis::{average_accuracy, forgetting_at, EvalMatrix};

use crate::error::CliError;

/// Scientific notation with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    if x == 0.0 {
        // Keeps -0.0 and 0.0 apart without a sign-dependent exponent.
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return x.to_string();
    }
    format!("{x:.16e}")
}

/// Collects rows and writes them with a fixed header.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_header(header: Vec<String>) -> Self {
        Table { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<PathBuf, CliError> {
        let err = |e: csv::Error| CliError::Output(format!("{}: {e}", path.display()));
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(&self.header).map_err(err)?;
        for r in &self.rows {
            w.write_record(r).map_err(err)?;
        }
        w.flush()
            .map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
        Ok(path.to_path_buf())
    }
}

pub fn eval_table(m: &EvalMatrix) -> Table {
    let mut t = Table::new(&["t", "i", "accuracy"]);
    for (row, col, acc) in m.entries() {
        t.push(vec![row.to_string(), col.to_string(), fmt_float(acc)]);
    }
    t
}

/// `t, average_accuracy, forgetting_so_far` for every completed row. The
/// forgetting column is empty at `t = 1`, where nothing can be forgotten yet.
pub fn metrics_table(m: &EvalMatrix) -> Result<Table, CliError> {
    let mut t = Table::new(&["t", "average_accuracy", "forgetting_so_far"]);
    for row in 1..=m.complete_rows() {
        let f = if row >= 2 { fmt_float(forgetting_at(m, row)?) } else { String::new() };
        t.push(vec![row.to_string(), fmt_float(average_accuracy(m, row)?), f]);
    }
    Ok(t)
}

/// Rebuilds an accuracy matrix from `t,i,accuracy` rows.
pub fn read_eval_matrix(path: &Path) -> Result<EvalMatrix, CliError> {
    let bad = |m: String| CliError::Data(format!("{}: {m}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["t", "i", "accuracy"] {
        return Err(bad("expected header t,i,accuracy".into()));
    }
    let mut entries = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let line = n + 2;
        let parse_err = |what: &str| bad(format!("line {line}: bad {what}"));
        let t: usize = rec[0].parse().map_err(|_| parse_err("t"))?;
        let i: usize = rec[1].parse().map_err(|_| parse_err("i"))?;
        let a: f64 = rec[2].parse().map_err(|_| parse_err("accuracy"))?;
        entries.push((t, i, a, line));
    }
    let size = entries.iter().map(|e| e.0).max().unwrap_or(0);
    let mut m = EvalMatrix::new(size);
    for (t, i, a, line) in entries {
        m.set(t, i, a).map_err(|e| bad(format!("line {line}: {e}")))?;
    }
    Ok(m)
}
