//! CSV files consumed by the plotting scripts.
//!
//! Every file starts with a metadata block of `# key = value` lines (the
//! full configuration, seeds, arm and metric), followed by a header row and
//! one row per time step. Reals are written with 17 significant digits so
//! they read back bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{DbarError, Result};
use crate::harness::metrics::MetricSeries;
use crate::harness::sweep::Aggregate;
use crate::domain::EpisodeLog;

pub const AGGREGATE_COLUMNS: [&str; 5] = ["t", "mean", "se", "lo95", "hi95"];
pub const RAW_COLUMNS: [&str; 8] = [
    "t",
    "batch",
    "controller",
    "state_norm",
    "cost",
    "running_average",
    "regret",
    "switches",
];

pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn header(metadata: &[(String, String)], columns: &[&str]) -> String {
    let mut s = String::new();
    for (k, v) in metadata {
        let _ = writeln!(s, "# {k} = {v}");
    }
    s.push_str(&columns.join(","));
    s.push('\n');
    s
}

pub fn aggregate_csv(metadata: &[(String, String)], agg: &Aggregate) -> String {
    let mut s = header(metadata, &AGGREGATE_COLUMNS);
    for t in 0..agg.mean.len() {
        let _ = writeln!(
            s,
            "{t},{},{},{},{}",
            fmt_real(agg.mean[t]),
            fmt_real(agg.se[t]),
            fmt_real(agg.lo95[t]),
            fmt_real(agg.hi95[t])
        );
    }
    s
}

/// Per-step trace of one seed.
pub fn raw_csv(metadata: &[(String, String)], log: &EpisodeLog, metrics: Option<&MetricSeries>) -> String {
    let mut s = header(metadata, &RAW_COLUMNS);
    for (i, step) in log.steps.iter().enumerate() {
        let (ra, rg, sw) = match metrics {
            Some(m) => (
                fmt_real(m.running_average[i]),
                m.regret.as_ref().map(|r| fmt_real(r[i])).unwrap_or_default(),
                m.switches[i].to_string(),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{ra},{rg},{sw}",
            step.t,
            step.batch,
            step.controller,
            fmt_real(step.state_norm),
            fmt_real(step.cost)
        );
    }
    s
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| DbarError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| DbarError::io(path, e))
}

/// Parsed CSV: metadata pairs, column names and numeric rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Reads a file written by this module. Empty cells read as NaN.
pub fn parse_csv(text: &str) -> Result<CsvTable> {
    let mut metadata = Vec::new();
    let mut lines = text.lines();
    let columns = loop {
        let line = lines
            .next()
            .ok_or_else(|| DbarError::Config("CSV has no header row".into()))?;
        if let Some(rest) = line.strip_prefix("# ") {
            let (k, v) = rest
                .split_once(" = ")
                .ok_or_else(|| DbarError::Config(format!("bad metadata line `{line}`")))?;
            metadata.push((k.to_string(), v.to_string()));
        } else {
            break line.split(',').map(str::to_string).collect::<Vec<_>>();
        }
    };
    let mut rows = Vec::new();
    for line in lines.filter(|l| !l.is_empty()) {
        let row = line
            .split(',')
            .map(|c| {
                if c.is_empty() {
                    Ok(f64::NAN)
                } else {
                    c.parse::<f64>().map_err(|e| DbarError::Config(format!("bad cell `{c}`: {e}")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != columns.len() {
            return Err(DbarError::Config(format!(
                "row has {} cells, header has {}",
                row.len(),
                columns.len()
            )));
        }
        rows.push(row);
    }
    Ok(CsvTable {
        metadata,
        columns,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::sweep::aggregate;

    #[test]
    fn aggregate_round_trip_is_exact() {
        let a = [0.1, 1.0 / 3.0, 2.5e-300];
        let b = [0.2, std::f64::consts::PI, 7.0];
        let g = aggregate(&[&a, &b]).unwrap();
        let meta = vec![("metric".to_string(), "running_average".to_string())];
        let t = parse_csv(&aggregate_csv(&meta, &g)).unwrap();
        assert_eq!(t.meta("metric"), Some("running_average"));
        assert_eq!(t.columns, AGGREGATE_COLUMNS);
        assert_eq!(t.column("mean").unwrap(), g.mean);
        assert_eq!(t.column("se").unwrap(), g.se);
        assert_eq!(t.column("hi95").unwrap(), g.hi95);
    }

    #[test]
    fn real_format_has_17_digits() {
        assert_eq!(fmt_real(0.1), "1.0000000000000001e-1");
        for v in [0.1, 1e-310, 123456.789, -2.0 / 3.0] {
            assert_eq!(fmt_real(v).parse::<f64>().unwrap(), v);
        }
    }
}
