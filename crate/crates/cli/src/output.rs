//! Artifact writing: a schema header on every file, atomic replacement of
//! the target path.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use alphafair::SCHEMA_VERSION;
use serde_json::{Map, Value};

use crate::CliError;

/// Rows of a CSV table with a fixed header.
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Table { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn render(&self, command: &str) -> String {
        let mut out = format!("# {SCHEMA_VERSION} {command}\n");
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn num(x: f64) -> String {
    format!("{x}")
}

/// JSON document with the schema and command stamped first.
pub fn render_json(command: &str, body: Value) -> String {
    let mut doc = Map::new();
    doc.insert("schema".into(), Value::from(SCHEMA_VERSION));
    doc.insert("command".into(), Value::from(command));
    match body {
        Value::Object(fields) => doc.extend(fields),
        other => {
            doc.insert("result".into(), other);
        }
    }
    let mut text = serde_json::to_string_pretty(&Value::Object(doc)).expect("JSON values serialize");
    text.push('\n');
    text
}

/// Flattens a JSON report into `field,index,value` rows for `--format csv`
/// on commands whose natural output is not tabular.
pub fn flatten(body: &Value) -> Table {
    fn walk(prefix: &str, index: &str, v: &Value, table: &mut Table) {
        match v {
            Value::Object(map) => {
                for (k, child) in map {
                    let name = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&name, index, child, table);
                }
            }
            Value::Array(items) => {
                for (i, child) in items.iter().enumerate() {
                    let mut idx = index.to_string();
                    if !idx.is_empty() {
                        idx.push(':');
                    }
                    let _ = write!(idx, "{i}");
                    walk(prefix, &idx, child, table);
                }
            }
            Value::String(s) => table.push(vec![prefix.to_string(), index.to_string(), csv_quote(s)]),
            other => table.push(vec![prefix.to_string(), index.to_string(), other.to_string()]),
        }
    }
    let mut table = Table::new(vec!["field".into(), "index".into(), "value".into()]);
    walk("", "", body, &mut table);
    table
}

fn csv_quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes `text` to `path` through a temporary file in the same directory,
/// or to stdout when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    let Some(path) = path else {
        std::io::stdout().write_all(text.as_bytes()).map_err(CliError::io)?;
        return Ok(());
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(CliError::io)?;
    tmp.write_all(text.as_bytes()).map_err(CliError::io)?;
    tmp.as_file().sync_all().map_err(CliError::io)?;
    tmp.persist(path).map_err(|e| CliError::io(e.error))?;
    Ok(())
}

pub fn render_table(command: &str, table: &Table) -> String {
    table.render(command)
}
