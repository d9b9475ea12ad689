//! Record emission: JSON lines, CSV, or two-column numeric text.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "csv" => Ok(Format::Csv),
            other => Err(format!("expected jsonl or csv, got {other:?}")),
        }
    }
}

#[derive(Serialize)]
pub struct Record<'a> {
    pub command: &'a str,
    pub config: BTreeMap<String, String>,
    pub result: Value,
}

/// Column pairs for plotting; commands without a natural pairing emit
/// their numeric fields as `index value` after a comment naming them.
pub type Columns = Vec<(f64, f64)>;

pub fn render(record: &Record, format: Format, gnuplot: Option<&Columns>) -> String {
    if gnuplot.is_some() {
        return gnuplot_text(record, gnuplot);
    }
    match format {
        Format::Jsonl => {
            let mut s = serde_json::to_string(record).expect("records serialize");
            s.push('\n');
            s
        }
        Format::Csv => {
            let value = serde_json::to_value(record).expect("records serialize");
            let mut flat = Vec::new();
            flatten("", &value, &mut flat);
            let header: Vec<String> = flat.iter().map(|(k, _)| csv_field(k)).collect();
            let row: Vec<String> = flat.iter().map(|(_, v)| csv_field(v)).collect();
            format!("{}\n{}\n", header.join(","), row.join(","))
        }
    }
}

fn gnuplot_text(record: &Record, columns: Option<&Columns>) -> String {
    let mut out = format!("# {}\n", record.command);
    match columns {
        Some(cols) if !cols.is_empty() => {
            for (a, b) in cols {
                out.push_str(&format!("{a} {b}\n"));
            }
        }
        _ => {
            let mut flat = Vec::new();
            flatten("", &record.result, &mut flat);
            let numeric: Vec<_> = flat.iter().filter(|(_, v)| v.parse::<f64>().is_ok()).collect();
            for (i, (k, _)) in numeric.iter().enumerate() {
                out.push_str(&format!("# {i} {k}\n"));
            }
            for (i, (_, v)) in numeric.iter().enumerate() {
                out.push_str(&format!("{i} {v}\n"));
            }
        }
    }
    out
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => map.iter().for_each(|(k, v)| flatten(&key(k), v, out)),
        Value::Array(items) => items.iter().enumerate().for_each(|(i, v)| flatten(&key(&i.to_string()), v, out)),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        Value::Null => out.push((prefix.to_string(), String::new())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
