//! Tab-separated interaction and attribute files.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub timestamp: i64,
}

/// One attribute line: an item and the attribute labels attached to it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawAttributes {
    pub item: String,
    pub attrs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub records: Vec<T>,
    pub errors: Vec<LineError>,
    pub total_lines: usize,
}

impl<T> Parsed<T> {
    pub fn malformed_fraction(&self) -> f64 {
        if self.total_lines == 0 {
            0.0
        } else {
            self.errors.len() as f64 / self.total_lines as f64
        }
    }
}

/// Fraction of malformed lines above which a file is rejected outright.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

fn parse_lines<T>(text: &str, mut parse_one: impl FnMut(&str) -> std::result::Result<T, String>) -> Parsed<T> {
    let mut records = Vec::new();
    let mut errors = Vec::new();
    let mut total = 0;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        match parse_one(line) {
            Ok(r) => records.push(r),
            Err(reason) => errors.push(LineError { line: i + 1, reason }),
        }
    }
    Parsed { records, errors, total_lines: total }
}

pub fn parse_interaction_line(line: &str) -> std::result::Result<RawInteraction, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 3 {
        return Err(format!("expected 3 tab-separated fields, found {}", fields.len()));
    }
    if fields[0].is_empty() || fields[1].is_empty() {
        return Err("empty user or item".into());
    }
    let timestamp: i64 = fields[2].trim().parse().map_err(|e| format!("bad timestamp `{}`: {e}", fields[2]))?;
    if timestamp < 0 {
        return Err(format!("negative timestamp {timestamp}"));
    }
    Ok(RawInteraction { user: fields[0].to_string(), item: fields[1].to_string(), timestamp })
}

pub fn parse_attribute_line(line: &str) -> std::result::Result<RawAttributes, String> {
    let mut fields = line.split('\t');
    let item = fields.next().unwrap_or_default();
    if item.is_empty() {
        return Err("empty item".into());
    }
    let attrs: Vec<String> = fields.map(str::to_string).collect();
    if attrs.iter().any(String::is_empty) {
        return Err("empty attribute field".into());
    }
    Ok(RawAttributes { item: item.to_string(), attrs })
}

pub fn parse_interactions_str(text: &str) -> Parsed<RawInteraction> {
    parse_lines(text, parse_interaction_line)
}

pub fn parse_attributes_str(text: &str) -> Parsed<RawAttributes> {
    parse_lines(text, parse_attribute_line)
}

/// Inverse of [`parse_interactions_str`].
pub fn format_interactions(records: &[RawInteraction]) -> String {
    records.iter().map(|r| format!("{}\t{}\t{}\n", r.user, r.item, r.timestamp)).collect()
}

/// Inverse of [`parse_attributes_str`].
pub fn format_attributes(records: &[RawAttributes]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.item);
        for a in &r.attrs {
            out.push('\t');
            out.push_str(a);
        }
        out.push('\n');
    }
    out
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn check_fraction<T>(path: &Path, parsed: &Parsed<T>) -> Result<()> {
    if parsed.malformed_fraction() > MAX_MALFORMED_FRACTION {
        let first = parsed
            .errors
            .first()
            .map(|e| format!("line {}: {}", e.line, e.reason))
            .unwrap_or_default();
        return Err(Error::Parse {
            path: path.to_path_buf(),
            malformed: parsed.errors.len(),
            total: parsed.total_lines,
            first,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawData {
    pub interactions: Parsed<RawInteraction>,
    pub attributes: Parsed<RawAttributes>,
}

/// Reads both files. Malformed lines are skipped and reported; more than
/// [`MAX_MALFORMED_FRACTION`] malformed lines in either file is fatal.
pub fn parse(interactions: &Path, attributes: Option<&Path>) -> Result<RawData> {
    let inter = parse_interactions_str(&read(interactions)?);
    check_fraction(interactions, &inter)?;
    let attrs = match attributes {
        Some(p) => {
            let parsed = parse_attributes_str(&read(p)?);
            check_fraction(p, &parsed)?;
            parsed
        }
        None => Parsed { records: Vec::new(), errors: Vec::new(), total_lines: 0 },
    };
    Ok(RawData { interactions: inter, attributes: attrs })
}
