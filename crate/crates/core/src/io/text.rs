//! Comma-separated text tables with `#` comments and an optional
//! `# format: <kind> <version>` line.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use csv::{ReaderBuilder, StringRecord, Trim};

use super::DataError;

pub const FORMAT_VERSION: u32 = 1;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn display_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Checks the `# format:` header if present. Other comment lines are ignored.
fn check_version(text: &str, kind: &str, file: &str) -> Result<(), DataError> {
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let Some(comment) = line.strip_prefix('#') else {
            break;
        };
        let Some(spec) = comment.trim().strip_prefix("format:") else {
            continue;
        };
        let mut parts = spec.split_whitespace();
        let (found_kind, version) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));
        if found_kind != kind {
            return Err(DataError::Parse {
                file: file.into(),
                line: 0,
                reason: format!("format header names `{found_kind}`, expected `{kind}`"),
            });
        }
        if version != FORMAT_VERSION.to_string() {
            return Err(DataError::UnsupportedVersion {
                file: file.into(),
                version: version.into(),
            });
        }
    }
    Ok(())
}

/// A parsed data row with its 1-based line number.
pub struct Row {
    pub line: usize,
    pub record: StringRecord,
    file: String,
}

impl Row {
    pub fn error(&self, reason: impl Into<String>) -> DataError {
        DataError::Parse {
            file: self.file.clone(),
            line: self.line,
            reason: reason.into(),
        }
    }

    pub fn str(&self, i: usize) -> &str {
        &self.record[i]
    }

    pub fn parse<T: FromStr>(&self, i: usize, what: &str) -> Result<T, DataError> {
        self.record[i]
            .parse()
            .map_err(|_| self.error(format!("invalid {what} `{}`", &self.record[i])))
    }

    pub fn id(&self, i: usize) -> Result<String, DataError> {
        let id = self.str(i);
        if id.is_empty() {
            return Err(self.error("empty image id"));
        }
        Ok(id.to_string())
    }
}

pub fn read_table(path: &Path, kind: &str, columns: usize) -> Result<Vec<Row>, DataError> {
    let file = display_name(path);
    let text = std::fs::read_to_string(path).map_err(|e| DataError::from_io(path, e))?;
    check_version(&text, kind, &file)?;
    let mut reader = ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| DataError::Parse {
            file: file.clone(),
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != columns {
            return Err(DataError::Parse {
                file,
                line,
                reason: format!("expected {columns} fields, found {}", record.len()),
            });
        }
        rows.push(Row {
            line,
            record,
            file: file.clone(),
        });
    }
    Ok(rows)
}

/// Header comment lines for a table.
pub fn header(kind: &str, columns: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# format: {kind} {FORMAT_VERSION}");
    let _ = writeln!(s, "# {columns}");
    s
}
