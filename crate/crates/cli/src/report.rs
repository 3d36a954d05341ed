//! CSV serialization of creativity reports.
//!
//! Fixed column order: `id, era_tag, value, novelty, surprise, dc`,
//! followed by one `p_<class>` column per style class. Floats are printed
//! with Rust's shortest round-trip formatting, so identical scores yield
//! identical bytes.

use std::path::Path;

use anyhow::{bail, Context, Result};
use creativity_core::measures::{BatchReport, ScoreRow};

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn to_csv(report: &BatchReport, class_names: &[String]) -> String {
    let mut out = String::from("id,era_tag,value,novelty,surprise,dc");
    for name in class_names {
        out.push_str(",p_");
        out.push_str(&csv_field(name));
    }
    out.push('\n');
    for row in &report.rows {
        out.push_str(&csv_field(&row.id));
        out.push(',');
        out.push_str(&csv_field(&row.era_tag));
        for v in [row.value, row.novelty, row.surprise, row.dc] {
            out.push(',');
            out.push_str(&v.to_string());
        }
        for p in &row.class_posterior {
            out.push(',');
            out.push_str(&p.to_string());
        }
        out.push('\n');
    }
    out
}

/// Parsed report row as read back by `plot`.
#[derive(Debug, Clone)]
pub struct CsvReport {
    pub rows: Vec<ScoreRow>,
}

pub fn from_csv(text: &str) -> Result<CsvReport> {
    let mut lines = text.lines();
    let header = lines.next().context("empty report CSV")?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 6 || cols[..6] != ["id", "era_tag", "value", "novelty", "surprise", "dc"] {
        bail!("unexpected report CSV header {header:?}");
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        // Fields never contain quoted commas in practice (ids and era
        // tags are machine-generated), so a plain split suffices; quoted
        // fields are rejected loudly rather than misparsed.
        if line.contains('"') {
            bail!("line {}: quoted CSV fields are not supported by plot", lineno + 2);
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            bail!(
                "line {}: {} fields, header has {}",
                lineno + 2,
                fields.len(),
                cols.len()
            );
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .with_context(|| format!("line {}: bad number {:?}", lineno + 2, fields[i]))
        };
        let mut posterior = Vec::new();
        for i in 6..fields.len() {
            posterior.push(num(i)?);
        }
        rows.push(ScoreRow {
            id: fields[0].to_owned(),
            era_tag: fields[1].to_owned(),
            value: num(2)?,
            novelty: num(3)?,
            surprise: num(4)?,
            dc: num(5)?,
            class_posterior: posterior,
            warnings: Vec::new(),
        });
    }
    Ok(CsvReport { rows })
}

pub fn write_csv(path: &Path, report: &BatchReport, class_names: &[String]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, to_csv(report, class_names))
        .with_context(|| format!("writing report {}", path.display()))?;
    Ok(())
}
