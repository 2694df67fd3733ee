//! Table and series files.
//!
//! CSV tables start with `# `-prefixed comment lines carrying the run
//! configuration as JSON, then a header row. Diverged cells are written as
//! `diverged`. Floats use shortest round-trip formatting. In JSON format an
//! experiment produces one document holding every table and run record.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ReportFormat};
use crate::error::Result;
use crate::experiments::{lr_label, LrSweep, PerDigit, WidthSweep, WIDTH_COLUMNS};
use crate::record::RunRecord;

pub const DIVERGED: &str = "diverged";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub values: Vec<Option<f64>>,
}

impl Table {
    pub fn new(name: impl Into<String>, row_header: impl Into<String>, columns: Vec<String>) -> Self {
        Table {
            name: name.into(),
            row_header: row_header.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, values: Vec<Option<f64>>) {
        self.rows.push(TableRow {
            label: label.into(),
            values,
        });
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<f64> {
        self.rows[row].values[col]
    }
}

/// Epoch × learning-rate error tables, test and train, for one seed.
pub fn lr_tables(s: &LrSweep, seed_idx: usize) -> [Table; 2] {
    let seed = s.seeds[seed_idx];
    let cols: Vec<String> = s.lrs.iter().map(|&lr| lr_label(lr)).collect();
    let mut test = Table::new(format!("test_error_seed{seed}"), "epoch", cols.clone());
    let mut train = Table::new(format!("train_error_seed{seed}"), "epoch", cols);
    for (i, row) in s.table(seed_idx, false).into_iter().enumerate() {
        test.push((i + 1).to_string(), row);
    }
    for (i, row) in s.table(seed_idx, true).into_iter().enumerate() {
        train.push((i + 1).to_string(), row);
    }
    [test, train]
}

pub fn lr_summary(s: &LrSweep) -> Table {
    let mut t = Table::new("best_lr", "seed", vec!["best_lr".into()]);
    for (i, seed) in s.seeds.iter().enumerate() {
        t.push(seed.to_string(), vec![s.best_lr(i)]);
    }
    t
}

pub fn width_table(s: &WidthSweep) -> Table {
    let mut t = Table::new(
        "test_error_by_width",
        "width",
        WIDTH_COLUMNS.iter().map(|c| c.to_string()).collect(),
    );
    for (w, row) in s.widths.iter().zip(s.table()) {
        t.push(w.to_string(), row);
    }
    t
}

/// Per-digit precision/recall/F1 table for one seed (percent).
pub fn digit_table(rec: &RunRecord) -> Table {
    let mut t = Table::new(
        format!("per_digit_seed{}", rec.config.seed),
        "digit",
        vec!["precision".into(), "recall".into(), "f1".into()],
    );
    for d in 0..10 {
        let vals = match &rec.final_report {
            Some(m) => vec![Some(m.precision[d]), Some(m.recall[d]), Some(m.f1[d])],
            None => vec![None; 3],
        };
        t.push(d.to_string(), vals);
    }
    t
}

pub fn digit_summary(p: &PerDigit) -> Table {
    let mut t = Table::new(
        "per_digit_summary",
        "seed",
        vec!["best_f1_digit".into(), "error_rate".into(), "macro_f1".into()],
    );
    for (rec, best) in p.runs.iter().zip(p.best_digits()) {
        let m = rec.final_report.as_ref();
        t.push(
            rec.config.seed.to_string(),
            vec![best.map(|d| d as f64), m.map(|m| m.error_rate), m.map(|m| m.macro_f1)],
        );
    }
    t
}

pub fn cifar_summary(runs: &[RunRecord]) -> Table {
    let mut t = Table::new(
        "summary",
        "variant",
        vec![
            "samples_seen".into(),
            "final_test_error".into(),
            "max_train_acc".into(),
            "train_acc_auc".into(),
        ],
    );
    for r in runs {
        let seen = r.series.last().map(|p| p.samples_seen as f64);
        t.push(
            r.label.clone(),
            vec![seen, r.final_test_error(), Some(r.max_train_acc()), Some(r.train_acc_auc())],
        );
    }
    t
}

fn fmt_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => DIVERGED.to_string(),
    }
}

fn config_comment(w: &mut impl Write, cfg: Option<&ExperimentConfig>) -> Result<()> {
    if let Some(cfg) = cfg {
        writeln!(w, "# seed: {}", cfg.seed)?;
        writeln!(w, "# config: {}", serde_json::to_string(cfg)?)?;
    }
    Ok(())
}

pub fn write_table_csv(path: &Path, table: &Table, cfg: Option<&ExperimentConfig>) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    config_comment(&mut f, cfg)?;
    {
        let mut w = csv::Writer::from_writer(&mut f);
        let mut header = vec![table.row_header.clone()];
        header.extend(table.columns.iter().cloned());
        w.write_record(&header)?;
        for row in &table.rows {
            let mut rec = vec![row.label.clone()];
            rec.extend(row.values.iter().map(|&v| fmt_cell(v)));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_table_csv(path: &Path, name: &str) -> Result<Table> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = r.headers()?.clone();
    let mut t = Table::new(name, &header[0], header.iter().skip(1).map(String::from).collect());
    for rec in r.records() {
        let rec = rec?;
        let values = rec
            .iter()
            .skip(1)
            .map(|c| if c == DIVERGED { None } else { c.parse().ok() })
            .collect();
        t.push(&rec[0], values);
    }
    Ok(t)
}

pub fn write_series_csv(path: &Path, rec: &RunRecord) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    config_comment(&mut f, Some(&rec.config))?;
    {
        let mut w = csv::Writer::from_writer(&mut f);
        for p in &rec.series {
            w.serialize(p)?;
        }
        w.flush()?;
    }
    f.flush()?;
    Ok(())
}

/// Everything an experiment emits in JSON format.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub tables: Vec<Table>,
    pub records: Vec<RunRecord>,
}

fn file_safe(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_' | '=') { c } else { '_' })
        .collect()
}

/// Writes tables and per-run series under `dir`; returns the paths written.
pub fn emit_report(dir: &Path, format: ReportFormat, report: &ExperimentReport) -> Result<Vec<PathBuf>> {
    if report.records.is_empty() {
        return Err(crate::error::HarnessError::Config("no run records to report".into()));
    }
    fs::create_dir_all(dir.join("series"))?;
    let cfg = report.records.first().map(|r| &r.config);
    let mut written = Vec::new();
    match format {
        ReportFormat::Csv => {
            for t in &report.tables {
                let p = dir.join(format!("{}.csv", t.name));
                write_table_csv(&p, t, cfg)?;
                written.push(p);
            }
            for r in &report.records {
                let p = dir.join("series").join(format!("{}.csv", file_safe(&r.label)));
                write_series_csv(&p, r)?;
                written.push(p);
            }
        }
        ReportFormat::Json => {
            let p = dir.join(format!("{}.json", report.experiment));
            fs::write(&p, serde_json::to_string_pretty(report)?)?;
            written.push(p);
            for r in &report.records {
                let p = dir.join("series").join(format!("{}.json", file_safe(&r.label)));
                fs::write(&p, serde_json::to_string(&r.series)?)?;
                written.push(p);
            }
        }
    }
    Ok(written)
}
