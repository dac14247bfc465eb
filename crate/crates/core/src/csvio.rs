//! Plain CSV helpers. Every file starts with a `# config_hash=...` comment
//! line followed by a header row; fields never contain commas or quotes.

use std::fs;
use std::path::Path;

use crate::error::{format_err, Result};

pub fn write(path: &Path, config_hash: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut out = String::new();
    out.push_str("# config_hash=");
    out.push_str(config_hash);
    out.push('\n');
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// A parsed CSV file: config hash comment, header and rows with their line numbers.
pub struct Table {
    pub config_hash: Option<String>,
    pub header: Vec<String>,
    pub rows: Vec<(u64, Vec<String>)>,
}

pub fn read(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path)?;
    let mut config_hash = None;
    let mut header = None;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i as u64 + 1;
        if let Some(c) = line.strip_prefix('#') {
            if let Some(h) = c.trim().strip_prefix("config_hash=") {
                config_hash = Some(h.to_string());
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        if header.is_none() {
            header = Some(fields);
        } else {
            rows.push((ln, fields));
        }
    }
    let header = header.ok_or_else(|| format_err(1, "missing header row"))?;
    for (ln, r) in &rows {
        if r.len() != header.len() {
            return Err(format_err(
                *ln,
                format!("expected {} fields, found {}", header.len(), r.len()),
            ));
        }
    }
    Ok(Table {
        config_hash,
        header,
        rows,
    })
}

pub fn parse<T: std::str::FromStr>(field: &str, line: u64, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| format_err(line, format!("cannot parse {what} from {field:?}")))
}
