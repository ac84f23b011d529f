//! Experiment drivers behind the command-line tool: acceptance reports,
//! acceptance sweeps, exactness verification and decoding benchmarks.
//!
//! Every driver returns a [`Table`] whose rendering is a pure function of the
//! configuration, so identical configurations give byte-identical output.

pub mod coupling;
pub mod decode;
pub mod sweep;
pub mod verify;

use std::fmt;
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Parse(format!("unknown format {other:?} (expected csv or json)"))),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        })
    }
}

/// Reals are printed rounded to 12 decimals with trailing zeros removed.
pub fn format_real(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let s = format!("{x:.12}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(u64),
    Real(f64),
    Empty,
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    pub fn opt_real(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Real)
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Int(i) => Value::from(*i),
            Cell::Real(x) => format_real(*x)
                .parse::<f64>()
                .ok()
                .and_then(serde_json::Number::from_f64)
                .map_or(Value::Null, Value::Number),
            Cell::Empty => Value::Null,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Text(s) => f.write_str(s),
            Cell::Int(i) => write!(f, "{i}"),
            Cell::Real(x) => f.write_str(&format_real(*x)),
            Cell::Empty => Ok(()),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Real(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.into())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// Rows plus the configuration that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub command: &'static str,
    pub config: Vec<(String, String)>,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(command: &'static str, columns: Vec<&'static str>) -> Self {
        Self {
            command,
            config: Vec::new(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn with_config(mut self, key: &str, value: impl fmt::Display) -> Self {
        self.config.push((key.into(), value.to_string()));
        self
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Comment line echoing the configuration, without a trailing newline.
    pub fn config_line(&self) -> String {
        let mut line = format!("# spectr {}", self.command);
        for (k, v) in &self.config {
            line.push_str(&format!(" {k}={v}"));
        }
        line
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            writer
                .write_record(row.iter().map(|c| c.to_string()))
                .expect("in-memory write");
        }
        let body = String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 cells");
        format!("{}\n{body}", self.config_line())
    }

    pub fn to_json_value(&self) -> Value {
        let config: Map<String, Value> = self
            .config
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                Value::Object(
                    self.columns
                        .iter()
                        .zip(row)
                        .map(|(c, cell)| (c.to_string(), cell.to_json()))
                        .collect(),
                )
            })
            .collect();
        let mut obj = Map::new();
        obj.insert("command".into(), Value::String(self.command.into()));
        obj.insert("config".into(), Value::Object(config));
        obj.insert("rows".into(), Value::Array(rows));
        Value::Object(obj)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_json_value()).expect("table serializes");
        s.push('\n');
        s
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json(),
        }
    }
}

/// Concatenates per-seed tables of the same shape behind a leading `seed`
/// column. The echoed configuration is the first table's, with `seed`
/// replaced by the list of seeds.
pub fn stack_seeds(runs: Vec<(u64, Table)>) -> Result<Table> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Domain("no runs to combine".into()))?
        .1
        .clone();
    let mut columns = vec!["seed"];
    columns.extend(first.columns.iter().copied());
    let mut out = Table::new(first.command, columns);
    out.config = first.config.iter().filter(|(k, _)| k != "seed").cloned().collect();
    out.config.push((
        "seeds".into(),
        join(&runs.iter().map(|(s, _)| *s).collect::<Vec<_>>(), ","),
    ));
    for (seed, table) in runs {
        if table.columns != first.columns {
            return Err(Error::Internal("tables with different columns".into()));
        }
        for row in table.rows {
            let mut r = vec![Cell::Int(seed)];
            r.extend(row);
            out.rows.push(r);
        }
    }
    Ok(out)
}

/// Comma-separated list of values, e.g. `1,2,4` or `0.1,0.75`.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    let items: Result<Vec<T>> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| Error::Parse(format!("{t:?}: {e}"))))
        .collect();
    let items = items?;
    if items.is_empty() {
        return Err(Error::Parse(format!("empty list {s:?}")));
    }
    Ok(items)
}

pub(crate) fn join<T: fmt::Display>(items: &[T], sep: &str) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(sep)
}
