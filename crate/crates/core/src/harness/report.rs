//! Comparison tables with the best value of each column in bold.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::FrameMetrics;

use super::eval::AggregateFile;

const IMAGES: &str = include_str!("../../fixtures/table_images.json");
const SUN_SEG: &str = include_str!("../../fixtures/table_sun_seg.json");
const POLYPGEN: &str = include_str!("../../fixtures/table_polypgen.json");

pub const FIXTURE_NAMES: [&str; 3] = ["images", "sun_seg", "polypgen"];

/// Published comparison tables bundled with the crate.
pub fn fixture(name: &str) -> Result<ReportDoc> {
    let text = match name {
        "images" => IMAGES,
        "sun_seg" => SUN_SEG,
        "polypgen" => POLYPGEN,
        other => {
            return Err(Error::Report(format!(
                "unknown fixture '{other}', expected one of {}",
                FIXTURE_NAMES.join(", ")
            )))
        }
    };
    Ok(serde_json::from_str(text)?)
}

fn default_decimals() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub name: String,
    pub columns: Vec<String>,
    #[serde(default = "default_decimals")]
    pub decimals: usize,
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    pub fn check(&self) -> Result<()> {
        for r in &self.rows {
            if r.values.len() != self.columns.len() {
                return Err(Error::Report(format!(
                    "table {}: method {} has {} values for columns [{}]",
                    self.name,
                    r.method,
                    r.values.len(),
                    self.columns.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// `best[row][col]` is true for every maximal cell of its column.
    pub fn best_cells(&self) -> Result<Vec<Vec<bool>>> {
        self.check()?;
        let mut best = vec![vec![false; self.columns.len()]; self.rows.len()];
        for c in 0..self.columns.len() {
            let max = self
                .rows
                .iter()
                .map(|r| r.values[c])
                .filter(|v| !v.is_nan())
                .fold(f64::NEG_INFINITY, f64::max);
            for (flags, row) in best.iter_mut().zip(&self.rows) {
                flags[c] = row.values[c] == max;
            }
        }
        Ok(best)
    }

    /// Methods holding the best value of `column`.
    pub fn winners(&self, column: &str) -> Result<Vec<&str>> {
        let c = self
            .columns
            .iter()
            .position(|x| x == column)
            .ok_or_else(|| Error::Report(format!("table {} has no column {column}", self.name)))?;
        let best = self.best_cells()?;
        Ok(self
            .rows
            .iter()
            .zip(&best)
            .filter(|(_, b)| b[c])
            .map(|(r, _)| r.method.as_str())
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReportDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    pub tables: Vec<ReportTable>,
}

impl ReportDoc {
    pub fn table(&self, name: &str) -> Option<&ReportTable> {
        self.tables.iter().find(|t| t.name == name)
    }

    /// Appends `other`; tables with the same name must share their columns.
    pub fn merge(&mut self, other: ReportDoc) -> Result<()> {
        if self.title.is_none() {
            self.title = other.title;
        }
        for t in other.tables {
            t.check()?;
            match self.tables.iter_mut().find(|x| x.name == t.name) {
                Some(existing) => {
                    if existing.columns != t.columns {
                        return Err(Error::Report(format!(
                            "table {}: columns [{}] do not match [{}]",
                            t.name,
                            existing.columns.join(", "),
                            t.columns.join(", ")
                        )));
                    }
                    existing.rows.extend(t.rows);
                }
                None => self.tables.push(t),
            }
        }
        Ok(())
    }

    /// Adds a method row to table `table`, creating it with `default_columns` if absent.
    pub fn add_result(
        &mut self,
        table: &str,
        method: &str,
        metrics: &FrameMetrics<f64>,
        default_columns: &[&str],
    ) -> Result<()> {
        let idx = match self.tables.iter().position(|t| t.name == table) {
            Some(i) => i,
            None => {
                self.tables.push(ReportTable {
                    name: table.to_string(),
                    columns: default_columns.iter().map(|s| s.to_string()).collect(),
                    decimals: default_decimals(),
                    rows: Vec::new(),
                });
                self.tables.len() - 1
            }
        };
        let t = &mut self.tables[idx];
        let values = t
            .columns
            .iter()
            .map(|c| {
                column_metric(c)
                    .and_then(|m| metrics.get(m))
                    .ok_or_else(|| Error::Report(format!("table {}: no metric for column {c}", t.name)))
            })
            .collect::<Result<Vec<f64>>>()?;
        t.rows.push(ReportRow {
            method: method.to_string(),
            values,
        });
        Ok(())
    }

    pub fn to_markdown(&self) -> Result<String> {
        let mut out = String::new();
        if let Some(title) = &self.title {
            let _ = writeln!(out, "# {title}\n");
        }
        for t in &self.tables {
            let best = t.best_cells()?;
            let _ = writeln!(out, "## {}\n", t.name);
            let _ = writeln!(out, "| Method | {} |", t.columns.join(" | "));
            let _ = writeln!(out, "|---|{}", "---:|".repeat(t.columns.len()));
            for (row, b) in t.rows.iter().zip(&best) {
                let cells: Vec<String> = row
                    .values
                    .iter()
                    .zip(b)
                    .map(|(v, &is_best)| {
                        let s = format!("{v:.prec$}", prec = t.decimals);
                        if is_best {
                            format!("**{s}**")
                        } else {
                            s
                        }
                    })
                    .collect();
                let _ = writeln!(out, "| {} | {} |", row.method, cells.join(" | "));
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Long format: `table,method,metric,value,best`.
    pub fn to_csv(&self) -> Result<String> {
        let mut out = String::from("table,method,metric,value,best\n");
        for t in &self.tables {
            let best = t.best_cells()?;
            for (row, b) in t.rows.iter().zip(&best) {
                for ((col, v), is_best) in t.columns.iter().zip(&row.values).zip(b) {
                    let _ = writeln!(
                        out,
                        "{},{},{},{v:.prec$},{is_best}",
                        csv_field(&t.name),
                        csv_field(&row.method),
                        csv_field(col),
                        prec = t.decimals
                    );
                }
            }
        }
        Ok(out)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Metric behind a table column label.
pub fn column_metric(column: &str) -> Option<&'static str> {
    Some(match column {
        "mIoU" | "IoU" => "iou",
        "mDice" | "Dice" => "dice",
        "Precision" => "precision",
        "Recall" => "recall",
        "F2" => "f2",
        "Sen" => "sen",
        "S_alpha" => "s_alpha",
        "E_phi_mn" => "e_phi_mn",
        "F_beta_mn" => "f_beta_mn",
        _ => return None,
    })
}

pub const IMAGE_COLUMNS: [&str; 2] = ["mIoU", "mDice"];
pub const VIDEO_COLUMNS: [&str; 5] = ["S_alpha", "E_phi_mn", "F_beta_mn", "Sen", "Dice"];

/// Own results to place next to the fixtures.
#[derive(Debug, Clone)]
pub struct ResultSource {
    pub method: String,
    pub aggregate: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct ReportRequest {
    pub fixtures: Vec<String>,
    pub fixture_files: Vec<PathBuf>,
    pub results: Vec<ResultSource>,
}

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub doc: ReportDoc,
    pub markdown: PathBuf,
    pub csv: PathBuf,
}

/// Builds the document without writing it.
pub fn build_report(req: &ReportRequest) -> Result<ReportDoc> {
    let mut doc = ReportDoc::default();
    for name in &req.fixtures {
        doc.merge(fixture(name)?)?;
    }
    for path in &req.fixture_files {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        doc.merge(serde_json::from_str(&text)?)?;
    }
    for src in &req.results {
        let text = std::fs::read_to_string(&src.aggregate).map_err(|e| Error::io(&src.aggregate, e))?;
        let agg: AggregateFile = serde_json::from_str(&text)?;
        if agg.subsets.is_empty() {
            let report = agg.report.as_ref().ok_or_else(|| {
                Error::Report(format!("{} has no successful samples", src.aggregate.display()))
            })?;
            let cols: &[&str] = match agg.kind {
                crate::data::DatasetKind::Image => &IMAGE_COLUMNS,
                crate::data::DatasetKind::Video => &VIDEO_COLUMNS,
            };
            doc.add_result(&agg.dataset, &src.method, &report.mean, cols)?;
        } else {
            for (tag, report) in &agg.subsets {
                doc.add_result(tag, &src.method, &report.mean, &VIDEO_COLUMNS)?;
            }
        }
    }
    if doc.tables.is_empty() {
        return Err(Error::Report("nothing to report".into()));
    }
    Ok(doc)
}

/// Writes `report.md` and `report.csv` into `out_dir`.
pub fn cmd_report(req: &ReportRequest, out_dir: &Path) -> Result<ReportOutcome> {
    let doc = build_report(req)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let markdown = out_dir.join("report.md");
    let csv = out_dir.join("report.csv");
    std::fs::write(&markdown, doc.to_markdown()?).map_err(|e| Error::io(&markdown, e))?;
    std::fs::write(&csv, doc.to_csv()?).map_err(|e| Error::io(&csv, e))?;
    Ok(ReportOutcome { doc, markdown, csv })
}

/// Column winners of every table, for quick inspection.
pub fn winners_by_table(doc: &ReportDoc) -> Result<BTreeMap<String, BTreeMap<String, Vec<String>>>> {
    let mut out = BTreeMap::new();
    for t in &doc.tables {
        let mut cols = BTreeMap::new();
        for c in &t.columns {
            cols.insert(c.clone(), t.winners(c)?.into_iter().map(String::from).collect());
        }
        out.insert(t.name.clone(), cols);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(&str, &[f64])]) -> ReportTable {
        ReportTable {
            name: "t".into(),
            columns: vec!["a".into(), "b".into()],
            decimals: 3,
            rows: rows
                .iter()
                .map(|(m, v)| ReportRow {
                    method: m.to_string(),
                    values: v.to_vec(),
                })
                .collect(),
        }
    }

    #[test]
    fn ties_are_all_bold() {
        let t = table(&[("x", &[0.5, 0.9]), ("y", &[0.5, 0.1])]);
        assert_eq!(t.winners("a").unwrap(), vec!["x", "y"]);
        assert_eq!(t.winners("b").unwrap(), vec!["x"]);
        let md = ReportDoc {
            title: None,
            tables: vec![t],
        }
        .to_markdown()
        .unwrap();
        assert!(md.contains("| x | **0.500** | **0.900** |"));
        assert!(md.contains("| y | **0.500** | 0.100 |"));
    }

    #[test]
    fn single_method_is_bold_everywhere() {
        let t = table(&[("only", &[0.2, 0.3])]);
        assert!(t.best_cells().unwrap()[0].iter().all(|&b| b));
    }

    #[test]
    fn mismatched_columns_are_named() {
        let mut doc = ReportDoc {
            title: None,
            tables: vec![table(&[("x", &[0.1, 0.2])])],
        };
        let mut other = table(&[("y", &[0.1, 0.2])]);
        other.columns = vec!["a".into(), "c".into()];
        let err = doc
            .merge(ReportDoc {
                title: None,
                tables: vec![other],
            })
            .unwrap_err()
            .to_string();
        assert!(err.contains("[a, b]") && err.contains("[a, c]"), "{err}");
        let bad = table(&[("z", &[0.1])]);
        assert!(bad.best_cells().unwrap_err().to_string().contains("z"));
    }

    #[test]
    fn csv_is_long_format() {
        let doc = ReportDoc {
            title: None,
            tables: vec![table(&[("x", &[0.5, 0.9]), ("y, z", &[0.6, 0.1])])],
        };
        let csv = doc.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "t,x,a,0.500,false");
        assert_eq!(lines[3], "t,\"y, z\",a,0.600,true");
    }

    #[test]
    fn fixtures_parse_and_are_consistent() {
        for name in FIXTURE_NAMES {
            let doc = fixture(name).unwrap();
            for t in &doc.tables {
                t.check().unwrap();
            }
        }
        assert!(fixture("nope").is_err());
    }

    #[test]
    fn own_results_fill_known_columns() {
        let mut doc = fixture("polypgen").unwrap();
        let m = FrameMetrics::from_values([0.5, 0.6, 0.7, 0.8, 0.9, 0.8, 0.4, 0.3, 0.2]);
        doc.add_result("PolypGen", "ours", &m, &IMAGE_COLUMNS).unwrap();
        let row = doc.table("PolypGen").unwrap().rows.last().unwrap();
        assert_eq!(row.values, vec![0.6, 0.5, 0.7, 0.8, 0.9]);
        assert!(doc.add_result("New", "ours", &m, &["Mystery"]).is_err());
    }
}
