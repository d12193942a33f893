//! Session accuracies, averages and result tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::trainer::{predict, ModelState};

/// Accuracy measured after one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionAccuracy {
    /// Over the union of all seen test sets.
    pub joint: f64,
    /// Restricted to each origin session's test set.
    pub per_origin: Vec<f64>,
    /// Test examples per origin session.
    pub origin_sizes: Vec<usize>,
}

/// Accuracies after every session so far, as fractions in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub per_session: Vec<f64>,
    /// Row `t` has `t + 1` entries, one per origin session.
    pub per_origin: Vec<Vec<f64>>,
    pub origin_sizes: Vec<Vec<usize>>,
}

impl AccuracyMatrix {
    pub fn push(&mut self, s: SessionAccuracy) {
        self.per_session.push(s.joint);
        self.per_origin.push(s.per_origin);
        self.origin_sizes.push(s.origin_sizes);
    }

    pub fn sessions(&self) -> usize {
        self.per_session.len()
    }

    /// Percentages, for table rows.
    pub fn percent(&self) -> Vec<f64> {
        self.per_session.iter().map(|a| 100.0 * a).collect()
    }

    /// `session,joint,o0,...,oT`; cells above the diagonal stay empty.
    /// Values are written with full round-trip precision.
    pub fn to_csv(&self) -> String {
        let width = self.sessions();
        let mut out = String::from("session,joint");
        for o in 0..width {
            write!(out, ",o{o}").unwrap();
        }
        out.push('\n');
        for (t, (joint, row)) in self.per_session.iter().zip(&self.per_origin).enumerate() {
            write!(out, "{t},{joint}").unwrap();
            for o in 0..width {
                match row.get(o) {
                    Some(a) => write!(out, ",{a}").unwrap(),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Reads the joint and per-origin columns written by [`AccuracyMatrix::to_csv`].
    /// Origin sizes are not part of the CSV and come back empty.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::arg("empty accuracy CSV"))?;
        if !header.starts_with("session,joint") {
            return Err(Error::arg(format!("unexpected accuracy CSV header {header:?}")));
        }
        let mut m = AccuracyMatrix::default();
        for (t, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() < 2 || cells[0].trim().parse::<usize>().ok() != Some(t) {
                return Err(Error::arg(format!("accuracy CSV row {t} is malformed")));
            }
            let parse = |s: &str| -> Result<f64> {
                let x: f64 = s
                    .trim()
                    .parse()
                    .map_err(|_| Error::arg(format!("accuracy CSV row {t}: bad number {s:?}")))?;
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::arg(format!("accuracy CSV row {t}: {x} outside [0, 1]")));
                }
                Ok(x)
            };
            m.per_session.push(parse(cells[1])?);
            let row = cells[2..]
                .iter()
                .filter(|c| !c.trim().is_empty())
                .map(|c| parse(c))
                .collect::<Result<Vec<_>>>()?;
            m.per_origin.push(row);
            m.origin_sizes.push(Vec::new());
        }
        if m.per_session.is_empty() {
            return Err(Error::arg("accuracy CSV has no rows"));
        }
        Ok(m)
    }
}

/// Accuracy of `state` on the concatenation of `tests`, plus per-origin accuracies.
pub fn evaluate_session(state: &ModelState, tests: &[&FeatureDataset]) -> Result<SessionAccuracy> {
    let classes = state.num_classes() as u32;
    let mut correct_total = 0usize;
    let mut total = 0usize;
    let mut per_origin = Vec::with_capacity(tests.len());
    let mut origin_sizes = Vec::with_capacity(tests.len());
    for test in tests {
        let mut correct = 0usize;
        for (f, y) in test.iter() {
            if y >= classes {
                return Err(Error::arg(format!(
                    "test label {y} has not been learned ({classes} classes seen)"
                )));
            }
            if predict(state, f)? == y {
                correct += 1;
            }
        }
        per_origin.push(if test.is_empty() {
            0.0
        } else {
            correct as f64 / test.len() as f64
        });
        origin_sizes.push(test.len());
        correct_total += correct;
        total += test.len();
    }
    if total == 0 {
        return Err(Error::arg("no test examples"));
    }
    Ok(SessionAccuracy {
        joint: correct_total as f64 / total as f64,
        per_origin,
        origin_sizes,
    })
}

/// Fraction of examples whose argmax logit is the true class.
pub fn evaluate_joint(state: &ModelState, tests: &[&FeatureDataset]) -> Result<f64> {
    Ok(evaluate_session(state, tests)?.joint)
}

pub fn average_accuracy(per_session: &[f64]) -> Result<f64> {
    if per_session.is_empty() {
        return Err(Error::arg("average of an empty accuracy list"));
    }
    Ok(per_session.iter().sum::<f64>() / per_session.len() as f64)
}

/// Two decimals, ties to even on the scaled value.
pub fn format_2dp(x: f64) -> String {
    let cents = (x * 100.0).round_ties_even();
    let s = format!("{:.2}", cents / 100.0);
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub name: String,
    /// Per-session accuracy in percent.
    pub values: Vec<f64>,
}

impl ReportRow {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }

    pub fn average(&self) -> Result<f64> {
        average_accuracy(&self.values)
    }
}

/// A results table: one row per method/config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    /// Row whose average the improvement column is measured against.
    pub reference: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "md" | "markdown" => Ok(Self::Markdown),
            other => Err(Error::arg(format!("unknown table format {other:?}"))),
        }
    }
}

impl Report {
    pub fn push(&mut self, row: ReportRow) {
        self.rows.push(row);
    }

    pub fn averages(&self) -> Result<Vec<f64>> {
        self.rows.iter().map(ReportRow::average).collect()
    }

    /// `row average - reference average` per row, when a reference is set.
    pub fn improvements(&self) -> Result<Option<Vec<f64>>> {
        let Some(r) = self.reference else {
            return Ok(None);
        };
        let averages = self.averages()?;
        let base = *averages
            .get(r)
            .ok_or_else(|| Error::arg(format!("reference row {r} does not exist")))?;
        Ok(Some(averages.iter().map(|a| a - base).collect()))
    }

    fn header(&self) -> Vec<String> {
        let width = self.rows.iter().map(|r| r.values.len()).max().unwrap_or(0);
        let mut h = vec!["method".to_string()];
        h.extend((0..width).map(|t| format!("s{t}")));
        h.push("avg".into());
        if self.reference.is_some() {
            h.push("improvement".into());
        }
        h
    }

    fn cells(&self) -> Result<Vec<Vec<String>>> {
        let width = self.header().len();
        let averages = self.averages()?;
        let improvements = self.improvements()?;
        let sessions = width - 2 - usize::from(self.reference.is_some());
        let mut out = Vec::with_capacity(self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            let mut cells = vec![row.name.clone()];
            for t in 0..sessions {
                cells.push(row.values.get(t).map(|&v| format_2dp(v)).unwrap_or_default());
            }
            cells.push(format_2dp(averages[i]));
            if let Some(imp) = &improvements {
                let d = format_2dp(imp[i]);
                cells.push(if imp[i] > 0.0 && d != "0.00" {
                    format!("+{d}")
                } else {
                    d
                });
            }
            out.push(cells);
        }
        Ok(out)
    }

    /// Renders the table. Values are percentages with two decimals.
    pub fn emit_table(&self, format: TableFormat) -> Result<String> {
        let header = self.header();
        let rows = self.cells()?;
        let mut out = String::new();
        match format {
            TableFormat::Csv => {
                if let Some(bad) = self.rows.iter().find(|r| r.name.contains([',', '\n', '"'])) {
                    return Err(Error::arg(format!("method name {:?} needs CSV quoting", bad.name)));
                }
                out.push_str(&header.join(","));
                out.push('\n');
                for r in rows {
                    out.push_str(&r.join(","));
                    out.push('\n');
                }
            }
            TableFormat::Markdown => {
                let line = |cells: &[String]| format!("| {} |\n", cells.join(" | "));
                out.push_str(&line(&header));
                let mut sep = vec![":---".to_string()];
                sep.extend(std::iter::repeat_n("---:".to_string(), header.len() - 1));
                out.push_str(&line(&sep));
                for r in rows {
                    out.push_str(&line(&r));
                }
            }
        }
        Ok(out)
    }
}

/// A parsed results table: names and rendered numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTable {
    pub header: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

/// Reads back a table written by [`Report::emit_table`] in either format.
pub fn parse_table(text: &str) -> Result<ParsedTable> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let first = lines.next().ok_or_else(|| Error::arg("empty table"))?;
    let markdown = first.trim_start().starts_with('|');
    let split = |line: &str| -> Vec<String> {
        if markdown {
            line.trim()
                .trim_start_matches('|')
                .trim_end_matches('|')
                .split('|')
                .map(|c| c.trim().to_string())
                .collect()
        } else {
            line.split(',').map(|c| c.trim().to_string()).collect()
        }
    };
    let header = split(first);
    let mut rows = Vec::new();
    for line in lines {
        let cells = split(line);
        if markdown && cells.iter().all(|c| c.chars().all(|ch| matches!(ch, ':' | '-'))) {
            continue;
        }
        if cells.len() != header.len() {
            return Err(Error::arg(format!("table row {line:?} has {} cells", cells.len())));
        }
        let values = cells[1..]
            .iter()
            .map(|c| {
                if c.is_empty() {
                    Ok(None)
                } else {
                    c.parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::arg(format!("bad table cell {c:?}")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push((cells[0].clone(), values));
    }
    Ok(ParsedTable { header, rows })
}
