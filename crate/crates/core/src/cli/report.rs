use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

/// A named report: aligned text sections plus line-delimited records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub name: String,
    sections: Vec<(String, Vec<String>, Vec<Vec<String>>)>,
    notes: Vec<String>,
    pub records: Vec<serde_json::Value>,
}

impl Report {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn table(&mut self, title: impl Into<String>, header: &[&str], rows: Vec<Vec<String>>) {
        self.sections
            .push((title.into(), header.iter().map(|s| s.to_string()).collect(), rows));
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.notes.push(line.into());
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    pub fn record<T: Serialize>(&mut self, value: &T) {
        self.records.push(serde_json::to_value(value).expect("report records serialize"));
    }

    /// Rows of the first table titled `title`.
    pub fn rows(&self, title: &str) -> Option<&[Vec<String>]> {
        self.sections
            .iter()
            .find(|(t, _, _)| t == title)
            .map(|(_, _, rows)| rows.as_slice())
    }

    pub fn render(&self, timestamp: bool) -> String {
        let mut out = String::new();
        if timestamp {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
            let _ = writeln!(out, "# generated at unix time {secs}");
        }
        for (title, header, rows) in &self.sections {
            let _ = writeln!(out, "== {title}");
            let mut widths: Vec<usize> = header.iter().map(String::len).collect();
            for row in rows {
                for (w, cell) in widths.iter_mut().zip(row) {
                    *w = (*w).max(cell.len());
                }
            }
            let line = |cells: &[String]| {
                cells
                    .iter()
                    .zip(&widths)
                    .map(|(c, w)| format!("{c:<w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
                    .trim_end()
                    .to_string()
            };
            let _ = writeln!(out, "{}", line(header));
            for row in rows {
                let _ = writeln!(out, "{}", line(row));
            }
            out.push('\n');
        }
        for n in &self.notes {
            let _ = writeln!(out, "{n}");
        }
        out
    }

    /// Writes `<name>.txt` and `<name>.jsonl` under `dir`.
    pub fn write(&self, dir: &Path, timestamp: bool) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{}.txt", self.name)), self.render(timestamp))?;
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{}.jsonl", self.name)))?);
        for r in &self.records {
            writeln!(f, "{r}")?;
        }
        f.flush()
    }
}

pub(crate) fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}
