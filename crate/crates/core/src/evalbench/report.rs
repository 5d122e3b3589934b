use std::collections::BTreeMap;
use std::fmt::Write;

use serde_json::{json, Map, Value};

use super::ApTable;
use crate::error::{Error, Result};

/// A rendered comparison: an aligned text table and one JSON object per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub text: String,
    pub json_lines: Vec<String>,
}

/// Tabulate AP results, one row per method in name order, one column per
/// (threshold, mode, range) entry of the first table.
pub fn benchmark_report(results: &BTreeMap<String, ApTable>) -> Result<Report> {
    let Some(first) = results.values().next() else {
        return Err(Error::Input("no results to report".into()));
    };
    let columns: Vec<String> = first.entries.iter().map(|e| e.column()).collect();
    let name_width = results.keys().map(|k| k.len()).max().unwrap_or(0).max(6);

    let mut text = String::new();
    writeln!(
        text,
        "# R40 AP; range columns bin boxes by BEV distance from the ego origin"
    )
    .unwrap();
    write!(text, "{:<name_width$}", "method").unwrap();
    for c in &columns {
        write!(text, "  {c:>w$}", w = c.len().max(6)).unwrap();
    }
    text.push('\n');

    let mut json_lines = Vec::with_capacity(results.len());
    for (name, table) in results {
        write!(text, "{name:<name_width$}").unwrap();
        let mut aps = Map::new();
        for c in &columns {
            let ap = table
                .entries
                .iter()
                .find(|e| &e.column() == c)
                .map(|e| e.ap);
            match ap {
                Some(v) => write!(text, "  {:>w$.4}", v, w = c.len().max(6)).unwrap(),
                None => write!(text, "  {:>w$}", "-", w = c.len().max(6)).unwrap(),
            }
            aps.insert(c.clone(), ap.map_or(Value::Null, Value::from));
        }
        text.push('\n');
        json_lines.push(json!({ "method": name, "ap": aps }).to_string());
    }
    Ok(Report { text, json_lines })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalbench::{ApEntry, IouMode};

    fn table(ap: f64) -> ApTable {
        ApTable {
            entries: vec![ApEntry {
                iou_threshold: 0.7,
                mode: IouMode::ThreeD,
                range: None,
                ap,
                num_gt: 3,
            }],
        }
    }

    #[test]
    fn single_and_sorted_rows() {
        let mut r = BTreeMap::new();
        r.insert("KBF".to_string(), table(0.5));
        let rep = benchmark_report(&r).unwrap();
        assert_eq!(rep.json_lines.len(), 1);
        assert_eq!(rep.text.lines().count(), 3);

        r.insert("A".to_string(), table(0.25));
        let rep = benchmark_report(&r).unwrap();
        let rows: Vec<&str> = rep.text.lines().skip(2).collect();
        assert!(rows[0].starts_with("A "));
        assert!(rep.json_lines[1].contains("\"method\":\"KBF\""));
        assert!(rep.json_lines[1].contains("0.5"));
    }

    #[test]
    fn empty_is_error() {
        assert!(benchmark_report(&BTreeMap::new()).is_err());
    }
}
