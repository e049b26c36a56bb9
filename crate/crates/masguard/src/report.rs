//! Aggregates campaign outputs into one row per (topology, method) with a
//! monitor/answer accuracy column pair per attack kind.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::campaign::{summarize, CampaignReport, Outcome, Summary};
use crate::contribution::Method;
use crate::sim::AttackKind;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no input files given")]
    NoInputs,
    #[error("{path}: {msg}")]
    InputUnreadable { path: PathBuf, msg: String },
}

pub fn load_outcomes(paths: &[PathBuf]) -> Result<Vec<Outcome>, ReportError> {
    if paths.is_empty() {
        return Err(ReportError::NoInputs);
    }
    let mut all = Vec::new();
    for path in paths {
        let unreadable = |msg: String| ReportError::InputUnreadable { path: path.clone(), msg };
        let text = std::fs::read_to_string(path).map_err(|e| unreadable(e.to_string()))?;
        if path.extension().is_some_and(|e| e == "json") {
            let report: CampaignReport = serde_json::from_str(&text).map_err(|e| unreadable(e.to_string()))?;
            all.extend(report.outcomes());
        } else {
            let mut r = csv::Reader::from_reader(text.as_bytes());
            for row in r.deserialize() {
                all.push(row.map_err(|e| unreadable(e.to_string()))?);
            }
        }
    }
    Ok(all)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub kinds: Vec<AttackKind>,
    pub rows: Vec<((String, Method), BTreeMap<AttackKind, Summary>)>,
}

pub fn aggregate(outcomes: &[Outcome]) -> Table {
    let kinds: BTreeSet<AttackKind> = outcomes.iter().map(|o| o.attack).collect();
    let mut groups: BTreeMap<(String, Method), BTreeMap<AttackKind, Vec<&Outcome>>> = BTreeMap::new();
    for o in outcomes {
        groups.entry((o.topology.clone(), o.method)).or_default().entry(o.attack).or_default().push(o);
    }
    Table {
        kinds: kinds.into_iter().collect(),
        rows: groups
            .into_iter()
            .map(|(k, per)| (k, per.into_iter().map(|(kind, os)| (kind, summarize(os))).collect()))
            .collect(),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

impl Table {
    fn header(&self) -> Vec<String> {
        let mut h = vec!["topology".to_string(), "method".to_string()];
        for k in &self.kinds {
            h.push(format!("{}_monitor", k.as_str()));
            h.push(format!("{}_answer", k.as_str()));
        }
        h
    }

    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|((topo, method), per)| {
                let mut row = vec![topo.clone(), method.as_str().to_string()];
                for k in &self.kinds {
                    let s = per.get(k);
                    row.push(cell(s.and_then(|s| s.monitor_accuracy)));
                    row.push(cell(s.and_then(|s| s.answer_accuracy)));
                }
                row
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory write");
        for row in self.cells() {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
    }

    pub fn to_text(&self) -> String {
        let header = self.header();
        let rows = self.cells();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let line = |cells: &[String], out: &mut String| {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&header, &mut out);
        for r in &rows {
            line(r, &mut out);
        }
        out
    }
}

pub fn write_table(table: &Table, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("summary.csv"), table.to_csv())?;
    std::fs::write(dir.join("summary.txt"), table.to_text())
}
