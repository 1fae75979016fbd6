//! Evaluation reports and their tab-separated table form.
//!
//! A table has a header row (label column names followed by one column per
//! method) and one row per metric. Values are written in shortest round-trip
//! form; `-` marks a cell with no value.

use std::fmt::Write as _;
use std::path::Path;

use super::ratio::{relative_gain, AreResult};
use crate::error::{read_to_string, write_string, Error, Result};

pub const PART_NAMES: [&str; 6] = ["Left Eye", "Right Eye", "Nose", "Mouth", "Left Cheek", "Right Cheek"];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub are: AreResult,
    pub nme: f64,
    pub rmse_holistic: f64,
    pub rmse_parts: [f64; 6],
    pub pred_id: String,
    pub ref_id: String,
}

impl EvalReport {
    /// Element-wise arithmetic mean of several reports.
    pub fn mean_of(reports: &[EvalReport], pred_id: &str, ref_id: &str) -> Result<EvalReport> {
        if reports.is_empty() {
            return Err(Error::Missing("no reports to aggregate".into()));
        }
        let k = reports.len() as f64;
        let avg = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        let mut parts = [0.0; 6];
        for (i, p) in parts.iter_mut().enumerate() {
            *p = avg(&|r| r.rmse_parts[i]);
        }
        Ok(EvalReport {
            are: AreResult::from_parts(
                avg(&|r| r.are.er),
                avg(&|r| r.are.fr),
                avg(&|r| r.are.mr),
                avg(&|r| r.are.cr),
            ),
            nme: avg(&|r| r.nme),
            rmse_holistic: avg(&|r| r.rmse_holistic),
            rmse_parts: parts,
            pred_id: pred_id.into(),
            ref_id: ref_id.into(),
        })
    }

    /// `(metric, value)` pairs in table order.
    pub fn metric_rows(&self) -> Vec<(&'static str, f64)> {
        let mut rows = vec![
            ("ER", self.are.er),
            ("FR", self.are.fr),
            ("MR", self.are.mr),
            ("CR", self.are.cr),
            ("Mean", self.are.mean),
            ("NME", self.nme),
            ("RMSE", self.rmse_holistic),
        ];
        rows.extend(PART_NAMES.iter().copied().zip(self.rmse_parts));
        rows
    }

    pub fn is_valid(&self) -> bool {
        self.metric_rows().iter().all(|(_, v)| *v >= 0.0 && v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub labels: Vec<String>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub label_headers: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    pub fn new(label_headers: &[&str], columns: &[&str]) -> Self {
        Self {
            label_headers: label_headers.iter().map(|s| s.to_string()).collect(),
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, labels: &[&str], values: Vec<f64>) {
        debug_assert_eq!(labels.len(), self.label_headers.len());
        debug_assert_eq!(values.len(), self.columns.len());
        self.rows.push(ReportRow {
            labels: labels.iter().map(|s| s.to_string()).collect(),
            values,
        });
    }

    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.labels.first().map(String::as_str) == Some(label))
    }

    pub fn value(&self, label: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.row(label).map(|r| r.values[c])
    }

    /// Ratio-error layout: ER, FR, MR, CR, Mean, and a Gain row relative to
    /// the column at `baseline` (columns before it show `-`).
    pub fn are(columns: &[(&str, AreResult)], baseline: Option<usize>) -> Result<Self> {
        let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
        let mut t = Self::new(&["ARE"], &names);
        let col = |f: fn(&AreResult) -> f64| columns.iter().map(|c| f(&c.1)).collect::<Vec<_>>();
        t.push(&["ER"], col(|a| a.er));
        t.push(&["FR"], col(|a| a.fr));
        t.push(&["MR"], col(|a| a.mr));
        t.push(&["CR"], col(|a| a.cr));
        t.push(&["Mean"], col(|a| a.mean));
        if let Some(b) = baseline {
            let base = columns
                .get(b)
                .ok_or_else(|| Error::InvalidArgument(format!("baseline column {b} out of range")))?
                .1
                .mean;
            let gains = columns
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i < b {
                        Ok(f64::NAN)
                    } else {
                        relative_gain(c.1.mean, base)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            t.push(&["Gain"], gains);
        }
        Ok(t)
    }

    pub fn nme(columns: &[(&str, f64)]) -> Self {
        Self::single_row("Landmark Alignment", "NME", columns)
    }

    pub fn holistic_rmse(columns: &[(&str, f64)]) -> Self {
        Self::single_row("Holistic Registration", "RMSE", columns)
    }

    fn single_row(header: &str, label: &str, columns: &[(&str, f64)]) -> Self {
        let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
        let mut t = Self::new(&[header], &names);
        t.push(&[label], columns.iter().map(|c| c.1).collect());
        t
    }

    pub fn parts(columns: &[(&str, [f64; 6])]) -> Self {
        let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
        let mut t = Self::new(&["Part Registration"], &names);
        for (i, part) in PART_NAMES.iter().enumerate() {
            t.push(&[part], columns.iter().map(|c| c.1[i]).collect());
        }
        t
    }

    /// Oracle comparison layout: rows `(Mean ARE, line)`, `(NME, point)`,
    /// `(RMSE, region)`; each column is `(name, mean ARE, NME, RMSE)`.
    pub fn oracles(columns: &[(&str, f64, f64, f64)]) -> Self {
        let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
        let mut t = Self::new(&["Metrics", "Type"], &names);
        t.push(&["Mean ARE", "line"], columns.iter().map(|c| c.1).collect());
        t.push(&["NME", "point"], columns.iter().map(|c| c.2).collect());
        t.push(&["RMSE", "region"], columns.iter().map(|c| c.3).collect());
        t
    }

    /// Every metric of each report, in `EvalReport::metric_rows` order.
    pub fn full(columns: &[(&str, &EvalReport)]) -> Self {
        let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
        let mut t = Self::new(&["metric"], &names);
        let per_col: Vec<Vec<(&str, f64)>> = columns.iter().map(|c| c.1.metric_rows()).collect();
        if let Some(first) = per_col.first() {
            for (k, (label, _)) in first.iter().enumerate() {
                t.push(&[label], per_col.iter().map(|rows| rows[k].1).collect());
            }
        }
        t
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let header: Vec<&str> = self
            .label_headers
            .iter()
            .chain(&self.columns)
            .map(String::as_str)
            .collect();
        s.push_str(&header.join("\t"));
        s.push('\n');
        for r in &self.rows {
            let mut cells: Vec<String> = r.labels.clone();
            cells.extend(
                r.values
                    .iter()
                    .map(|v| if v.is_nan() { "-".to_string() } else { v.to_string() }),
            );
            let _ = writeln!(s, "{}", cells.join("\t"));
        }
        s
    }

    pub fn parse_tsv(text: &str, label_columns: usize, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(origin, 1, "empty table"))?;
        let head: Vec<&str> = header.split('\t').collect();
        if head.len() < label_columns {
            return Err(Error::parse(origin, 1, "header shorter than label columns"));
        }
        let mut t = Self::new(&head[..label_columns], &head[label_columns..]);
        for (ln, line) in lines {
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != head.len() {
                return Err(Error::parse(
                    origin,
                    ln + 1,
                    format!("expected {} cells, found {}", head.len(), cells.len()),
                ));
            }
            let values = cells[label_columns..]
                .iter()
                .map(|c| match *c {
                    "-" => Ok(f64::NAN),
                    _ => c
                        .parse()
                        .map_err(|_| Error::parse(origin, ln + 1, format!("not a number: {c:?}"))),
                })
                .collect::<Result<Vec<_>>>()?;
            t.push(&cells[..label_columns], values);
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_tsv())
    }

    pub fn load(path: &Path, label_columns: usize) -> Result<Self> {
        Self::parse_tsv(&read_to_string(path)?, label_columns, &path.display().to_string())
    }
}
