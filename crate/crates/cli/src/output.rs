//! Report bundles: CSV tables, one JSON document, a plain-text summary
//! and optional SVG charts.

use std::path::{Path, PathBuf};

use achopf_core::linalg::C64;
use serde_json::{json, Map, Value};

use crate::svg::Chart;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    F(f64),
    I(i64),
    S(String),
    /// Written as two CSV columns `<name>_re`, `<name>_im` and a JSON pair.
    C(C64),
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<u32> for Cell {
    fn from(x: u32) -> Self {
        Cell::I(x as i64)
    }
}

impl From<i32> for Cell {
    fn from(x: i32) -> Self {
        Cell::I(x as i64)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x as i64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::S(x.to_string())
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::S(x.to_string())
    }
}

impl From<String> for Cell {
    fn from(x: String) -> Self {
        Cell::S(x)
    }
}

impl From<C64> for Cell {
    fn from(z: C64) -> Self {
        Cell::C(z)
    }
}

/// Full precision: 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn json_f64(x: f64) -> Value {
    // JSON has no non-finite numbers; they become strings.
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

impl Cell {
    fn csv_fields(&self) -> Vec<String> {
        match self {
            Cell::F(x) => vec![fmt_f64(*x)],
            Cell::I(i) => vec![i.to_string()],
            Cell::S(s) => vec![s.clone()],
            Cell::C(z) => vec![fmt_f64(z.re), fmt_f64(z.im)],
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::F(x) => json_f64(*x),
            Cell::I(i) => json!(i),
            Cell::S(s) => json!(s),
            Cell::C(z) => json!([json_f64(z.re), json_f64(z.im)]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width of table {}", self.name);
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = Vec::new();
        for (i, c) in self.columns.iter().enumerate() {
            match self.rows.first().map(|r| &r[i]) {
                Some(Cell::C(_)) => {
                    header.push(format!("{c}_re"));
                    header.push(format!("{c}_im"));
                }
                _ => header.push(c.clone()),
            }
        }
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let fields: Vec<String> = r.iter().flat_map(Cell::csv_fields).collect();
            w.write_record(&fields).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn to_json(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let mut m = Map::new();
                for (c, v) in self.columns.iter().zip(r) {
                    m.insert(c.clone(), v.json());
                }
                Value::Object(m)
            })
            .collect();
        Value::Array(rows)
    }
}

/// One named pass/fail check with the measured value and its limit.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub limit: f64,
    pub detail: String,
}

impl Check {
    /// Passes when `value <= limit`.
    pub fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.to_string(),
            passed: value <= limit,
            value,
            limit,
            detail: format!("{} <= {}", short(value), short(limit)),
        }
    }

    /// Passes when `value >= limit`.
    pub fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.to_string(),
            passed: value >= limit,
            value,
            limit,
            detail: format!("{} >= {}", short(value), short(limit)),
        }
    }

    pub fn flag(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            value: if passed { 1.0 } else { 0.0 },
            limit: 1.0,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

/// Compact rendering for summaries; CSV and JSON carry full precision.
pub fn short(x: f64) -> String {
    if x == 0.0 || (1e-3..1e4).contains(&x.abs()) {
        format!("{x:.4}")
    } else {
        format!("{x:.3e}")
    }
}

/// Results of one section of work: tables, checks and extra JSON data.
#[derive(Debug, Clone, Default)]
pub struct Section {
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    pub charts: Vec<Chart>,
    pub data: Map<String, Value>,
    pub warnings: Vec<String>,
}

impl Section {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn merge(&mut self, other: Section) {
        self.tables.extend(other.tables);
        self.checks.extend(other.checks);
        self.charts.extend(other.charts);
        self.data.extend(other.data);
        self.warnings.extend(other.warnings);
    }
}

#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub command: String,
    pub config: Value,
    pub body: Section,
}

impl ReportBundle {
    pub fn passed(&self) -> bool {
        self.body.passed()
    }

    pub fn checks_table(&self) -> Table {
        let mut t = Table::new(&format!("{}_checks", self.command), &["check", "passed", "value", "limit"]);
        for c in &self.body.checks {
            t.push(vec![c.name.as_str().into(), c.passed.into(), c.value.into(), c.limit.into()]);
        }
        t
    }

    pub fn to_json(&self) -> String {
        let mut tables = Map::new();
        for t in &self.body.tables {
            tables.insert(t.name.clone(), t.to_json());
        }
        let checks: Vec<Value> = self
            .body
            .checks
            .iter()
            .map(|c| {
                json!({
                    "name": c.name,
                    "passed": c.passed,
                    "value": json_f64(c.value),
                    "limit": json_f64(c.limit),
                    "detail": c.detail,
                })
            })
            .collect();
        let v = json!({
            "command": self.command,
            "config": self.config,
            "passed": self.passed(),
            "checks": checks,
            "tables": tables,
            "data": self.body.data,
        });
        let mut s = serde_json::to_string_pretty(&v).expect("serializable report");
        s.push('\n');
        s
    }

    pub fn summary(&self) -> String {
        let mut s = format!("achopf {}\n", self.command);
        for w in &self.body.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
        for c in &self.body.checks {
            s.push_str(&c.line());
            s.push('\n');
        }
        let failed = self.body.checks.iter().filter(|c| !c.passed).count();
        s.push_str(&format!(
            "{} of {} checks passed\n",
            self.body.checks.len() - failed,
            self.body.checks.len()
        ));
        s
    }

    /// Every file of the bundle as (file name, contents), in write order.
    pub fn files(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for t in self.body.tables.iter().chain(std::iter::once(&self.checks_table())) {
            out.push((format!("{}.csv", t.name), t.to_csv()));
        }
        out.push((format!("{}.json", self.command), self.to_json()));
        out.push((format!("{}_summary.txt", self.command), self.summary()));
        for c in &self.body.charts {
            out.push((format!("{}.svg", c.name), c.render()));
        }
        out
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (name, contents) in self.files() {
            let p = dir.join(name);
            std::fs::write(&p, contents)?;
            paths.push(p);
        }
        Ok(paths)
    }
}
