//! Result tables and their CSV, JSON and .dat renderings.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Value};

use crate::config::{Dyadic, RunConfig};

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Num(f64),
    /// Printed as `2^e` where exact.
    Dy(f64),
    Text(String),
    Pass(bool),
    /// Row reported but not held to the bound.
    Exempt,
    Empty,
}

impl Cell {
    fn plot_value(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) | Cell::Dy(v) => v.to_string(),
            Cell::Text(s) => format!("\"{s}\""),
            Cell::Pass(b) => u8::from(*b).to_string(),
            Cell::Exempt | Cell::Empty => "nan".to_string(),
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Num(v) => write!(f, "{v}"),
            Cell::Dy(v) => write!(f, "{}", Dyadic(*v)),
            Cell::Text(s) => f.write_str(s),
            Cell::Pass(true) => f.write_str("pass"),
            Cell::Pass(false) => f.write_str("FAIL"),
            Cell::Exempt => f.write_str("exempt"),
            Cell::Empty => Ok(()),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<u32> for Cell {
    fn from(v: u32) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}
impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Pass(v)
    }
}
impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

#[macro_export]
macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$($crate::table::Cell::from($x)),*] };
}

#[derive(Clone, Debug)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Run-level checks that are not tied to one row.
    pub checks: Vec<(String, bool)>,
    /// Full module reports, written to the JSON sidecar only.
    pub details: Value,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            checks: Vec::new(),
            details: Value::Null,
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn check(&mut self, name: impl Into<String>, ok: bool) {
        self.checks.push((name.into(), ok));
    }

    pub fn detail(&mut self, v: Value) {
        match &mut self.details {
            Value::Array(a) => a.push(v),
            d => *d = Value::Array(vec![v]),
        }
    }

    pub fn violations(&self) -> usize {
        let rows = self.rows.iter().filter(|r| r.iter().any(|c| *c == Cell::Pass(false))).count();
        rows + self.checks.iter().filter(|c| !c.1).count()
    }

    pub fn pass(&self) -> bool {
        self.violations() == 0
    }

    /// Appends the rows, checks and details of `o`; headers must agree.
    pub fn extend(&mut self, o: Table) {
        assert_eq!(self.header, o.header, "mismatched tables");
        self.rows.extend(o.rows);
        self.checks.extend(o.checks);
        if !o.details.is_null() {
            self.detail(o.details);
        }
    }

    pub fn csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|c| c.to_string()))?;
        }
        Ok(w.into_inner().context("flushing csv")?)
    }

    pub fn dat(&self) -> String {
        let mut s = format!("# {}\n", self.header.join(" "));
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(Cell::plot_value).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

pub struct Written {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub dat: Option<PathBuf>,
}

/// Writes `<out>/<name>.csv`, the JSON sidecar and optionally `<name>.dat`.
pub fn write_outputs(t: &Table, cfg: &RunConfig, started: u64, elapsed: f64, out: &Path) -> Result<Written> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let csv = out.join(format!("{}.csv", t.name));
    fs::write(&csv, t.csv()?).with_context(|| format!("writing {}", csv.display()))?;
    let config: serde_json::Map<String, Value> = RunConfig::KEYS
        .iter()
        .map(|k| (k.to_string(), Value::String(cfg.get(k).unwrap_or_default())))
        .collect();
    let side = json!({
        "command": cfg.command.name(),
        "table": t.name,
        "started_unix": started,
        "elapsed_s": elapsed,
        "seed": cfg.seed,
        "config": config,
        "violations": t.violations(),
        "pass": t.pass(),
        "checks": t.checks.iter().map(|(n, ok)| json!({"name": n, "pass": ok})).collect::<Vec<_>>(),
        "details": t.details,
    });
    let json = out.join(format!("{}.json", t.name));
    let mut f = fs::File::create(&json).with_context(|| format!("writing {}", json.display()))?;
    serde_json::to_writer_pretty(&mut f, &side)?;
    writeln!(f)?;
    let dat = if cfg.emit_plot {
        let p = out.join(format!("{}.dat", t.name));
        fs::write(&p, t.dat()).with_context(|| format!("writing {}", p.display()))?;
        Some(p)
    } else {
        None
    };
    Ok(Written { csv, json, dat })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn violations_count_failed_rows_and_checks() {
        let mut t = Table::new("t", &["a", "pass"]);
        t.push(row![1usize, true]);
        t.push(row![2usize, false]);
        t.push(vec![Cell::Int(3), Cell::Exempt]);
        assert_eq!(t.violations(), 1);
        t.check("slope", false);
        assert_eq!(t.violations(), 2);
        let body = String::from_utf8(t.csv().unwrap()).unwrap();
        assert_eq!(body, "a,pass\n1,pass\n2,FAIL\n3,exempt\n");
        assert!(t.dat().ends_with("3 nan\n"));
    }

    #[test]
    fn dyadic_cells_print_exactly() {
        assert_eq!(Cell::Dy(1.0 / 256.0).to_string(), "2^-8");
        assert_eq!(Cell::from(None::<f64>).to_string(), "");
    }
}
