//! Score tables in several output formats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const COLUMNS: [&str; 5] = ["method", "style", "style_similarity", "perceptual_similarity", "fid"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub style: String,
    pub style_similarity: f64,
    pub perceptual_similarity: f64,
    pub fid: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub style_embedder: String,
    pub perceptual_embedder: String,
    pub rows: Vec<ReportRow>,
}

impl Report {
    pub fn new(style_embedder: &str, perceptual_embedder: &str, rows: Vec<ReportRow>) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            style_embedder: style_embedder.into(),
            perceptual_embedder: perceptual_embedder.into(),
            rows,
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.rows {
            w.serialize(row).map_err(csv_err)?;
        }
        if self.rows.is_empty() {
            w.write_record(COLUMNS).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Corrupt(e.to_string()))
    }

    pub fn rows_from_csv(text: &str) -> Result<Vec<ReportRow>> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(csv_err)?.clone();
        if let Some(missing) = COLUMNS.iter().find(|c| !headers.iter().any(|h| h == **c)) {
            return Err(Error::InvalidArgument(format!("report is missing column `{missing}`")));
        }
        r.deserialize().map(|row| row.map_err(csv_err)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Fixed-width table for terminals.
    pub fn to_text(&self) -> String {
        let cells: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.method.clone(),
                    r.style.clone(),
                    format!("{:.4}", r.style_similarity),
                    format!("{:.4}", r.perceptual_similarity),
                    format!("{:.4}", r.fid),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..5)
            .map(|i| cells.iter().map(|c| c[i].len()).chain([COLUMNS[i].len()]).max().unwrap_or(0))
            .collect();
        let line = |vals: [&str; 5]| {
            vals.iter()
                .zip(&widths)
                .map(|(v, w)| format!("{v:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(COLUMNS);
        out.push('\n');
        for c in &cells {
            out.push_str(&line([&c[0], &c[1], &c[2], &c[3], &c[4]]));
            out.push('\n');
        }
        out
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("report csv: {e}"))
}
