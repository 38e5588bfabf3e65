use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(x) => fmt_num(*x),
            Cell::Int(n) => n.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(x) => serde_json::Number::from_f64(*x).map_or(Value::Null, Value::Number),
            Cell::Int(n) => Value::from(*n),
            Cell::Text(s) => Value::from(s.as_str()),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

/// 17 significant digits, enough to round-trip any double.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Self {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| {
                    let obj: Map<String, Value> = self
                        .headers
                        .iter()
                        .cloned()
                        .zip(row.iter().map(Cell::json))
                        .collect();
                    Value::Object(obj)
                })
                .collect(),
        )
    }

    fn to_csv(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let io_err = |e: csv::Error| CliError::Io(e.to_string());
        w.write_record(&self.headers).map_err(io_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::csv)).map_err(io_err)?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }
}

/// A command result: a JSON document, a table, or both.
pub struct Artifact {
    pub json: Option<Value>,
    pub table: Option<Table>,
}

impl Artifact {
    pub fn json(value: Value) -> Self {
        Self {
            json: Some(value),
            table: None,
        }
    }

    pub fn table(table: Table) -> Self {
        Self {
            json: None,
            table: Some(table),
        }
    }

    pub fn both(value: Value, table: Table) -> Self {
        Self {
            json: Some(value),
            table: Some(table),
        }
    }

    pub fn render(&self, format: Format) -> Result<Vec<u8>, CliError> {
        match format {
            Format::Json => {
                let value = match (&self.json, &self.table) {
                    (Some(v), _) => v.clone(),
                    (None, Some(t)) => t.to_json(),
                    (None, None) => Value::Null,
                };
                let mut out = serde_json::to_vec_pretty(&value).map_err(|e| CliError::Io(e.to_string()))?;
                out.push(b'\n');
                Ok(out)
            }
            Format::Csv => match &self.table {
                Some(t) => t.to_csv(),
                None => Err(CliError::Validation(
                    "format: csv output is not available for this command, use json".into(),
                )),
            },
        }
    }
}

/// Writes through a sibling file and renames, so a failed run leaves nothing behind.
pub fn write(path: Option<&Path>, bytes: &[u8]) -> Result<(), CliError> {
    let Some(path) = path else {
        let mut out = io::stdout().lock();
        return out
            .write_all(bytes)
            .and_then(|_| out.flush())
            .map_err(|e| CliError::Io(format!("stdout: {e}")));
    };
    let mut partial = path.as_os_str().to_owned();
    partial.push(".partial");
    let partial = Path::new(&partial);
    let result = fs::write(partial, bytes).and_then(|_| fs::rename(partial, path));
    if let Err(e) = result {
        let _ = fs::remove_file(partial);
        return Err(CliError::Io(format!("output {}: {e}", path.display())));
    }
    Ok(())
}
