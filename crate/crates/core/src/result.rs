//! Query results and their canonical signatures.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
}

impl Value {
    fn canonical(&self, out: &mut String) {
        match self {
            Value::Null => out.push('n'),
            Value::Integer(i) => {
                let _ = write!(out, "i:{i}");
            }
            Value::Real(r) => {
                let r = if *r == 0.0 { 0.0 } else { *r };
                if r.is_finite() {
                    // six significant digits
                    let _ = write!(out, "r:{r:.5e}");
                } else {
                    let _ = write!(out, "r:{r}");
                }
            }
            Value::Text(s) => {
                let _ = write!(out, "t{}:{s}", s.len());
            }
        }
    }

    pub fn is_numeric(&self) -> bool {
        matches!(self, Value::Integer(_) | Value::Real(_))
    }
}

impl core::fmt::Display for Value {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Integer(i) => write!(f, "{i}"),
            Value::Real(r) => write!(f, "{r}"),
            Value::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("row {row} has {got} values, expected {expected}")]
pub struct ShapeError {
    pub row: usize,
    pub expected: usize,
    pub got: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTable")]
pub struct ResultTable {
    columns: Vec<String>,
    rows: Vec<Vec<Value>>,
    row_count: usize,
    /// Rows were cut off at the row limit.
    #[serde(default)]
    truncated: bool,
}

#[derive(Deserialize)]
struct RawTable {
    columns: Vec<String>,
    rows: Vec<Vec<Value>>,
    #[serde(default)]
    truncated: bool,
}

impl TryFrom<RawTable> for ResultTable {
    type Error = ShapeError;

    fn try_from(raw: RawTable) -> Result<Self, Self::Error> {
        ResultTable::new(raw.columns, raw.rows, raw.truncated)
    }
}

impl ResultTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Value>>, truncated: bool) -> Result<Self, ShapeError> {
        if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != columns.len()) {
            return Err(ShapeError { row, expected: columns.len(), got: r.len() });
        }
        Ok(Self { row_count: rows.len(), columns, rows, truncated })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    /// Fixed-width text rendering for terminals.
    pub fn to_text(&self) -> String {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(|v| format!("{v}")).collect())
            .collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|c| {
                cells
                    .iter()
                    .map(|r| r[c].chars().count())
                    .chain(core::iter::once(self.columns[c].chars().count()))
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let line = |out: &mut String, vals: &mut dyn Iterator<Item = &str>| {
            let row: Vec<String> = vals
                .zip(&widths)
                .map(|(v, w)| format!("{v:<w$}"))
                .collect();
            out.push_str(row.join(" | ").trim_end());
            out.push('\n');
        };
        line(&mut out, &mut self.columns.iter().map(String::as_str));
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        out.push_str(&rule.join("-+-"));
        out.push('\n');
        for r in &cells {
            line(&mut out, &mut r.iter().map(String::as_str));
        }
        let _ = writeln!(out, "({} row{}{})", self.row_count, if self.row_count == 1 { "" } else { "s" }, if self.truncated { ", truncated" } else { "" });
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResultSignature {
    /// Hex SHA-256 of `canonical_form`.
    pub digest: String,
    pub canonical_form: String,
}

/// Canonical form: one line per row, values typed and length-prefixed, reals
/// rounded to six significant digits, column names dropped. Rows are sorted
/// unless `order_sensitive`.
pub fn normalize_result(table: &ResultTable, order_sensitive: bool) -> ResultSignature {
    let mut rows: Vec<String> = table
        .rows
        .iter()
        .map(|r| {
            let mut s = String::from("(");
            for (i, v) in r.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                v.canonical(&mut s);
            }
            s.push(')');
            s
        })
        .collect();
    if !order_sensitive {
        rows.sort_unstable();
    }
    let canonical_form = rows.join("\n");
    let hash = Sha256::digest(canonical_form.as_bytes());
    let mut digest = String::with_capacity(64);
    for b in hash {
        let _ = write!(digest, "{b:02x}");
    }
    ResultSignature { digest, canonical_form }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn table(rows: Vec<Vec<Value>>) -> ResultTable {
        let n = rows.first().map_or(1, Vec::len);
        ResultTable::new((0..n).map(|i| format!("c{i}")).collect(), rows, false).unwrap()
    }

    #[test]
    fn shape_is_checked() {
        assert!(ResultTable::new(vec!["a".into()], vec![vec![Value::Null, Value::Null]], false).is_err());
    }

    #[test]
    fn order_insensitive_by_default() {
        let a = table(vec![vec![Value::Integer(1)], vec![Value::Integer(2)]]);
        let b = table(vec![vec![Value::Integer(2)], vec![Value::Integer(1)]]);
        assert_eq!(normalize_result(&a, false), normalize_result(&b, false));
        assert_ne!(normalize_result(&a, true), normalize_result(&b, true));
    }

    #[test]
    fn reals_round_to_six_significant_digits() {
        let a = table(vec![vec![Value::Real(1.0000001)]]);
        let b = table(vec![vec![Value::Real(1.0)]]);
        assert_eq!(normalize_result(&a, false), normalize_result(&b, false));
        let c = table(vec![vec![Value::Real(1.00001)]]);
        assert_ne!(normalize_result(&a, false), normalize_result(&c, false));
        let z = table(vec![vec![Value::Real(-0.0)]]);
        let pz = table(vec![vec![Value::Real(0.0)]]);
        assert_eq!(normalize_result(&z, false), normalize_result(&pz, false));
    }

    #[test]
    fn types_and_delimiters_are_unambiguous() {
        let int = table(vec![vec![Value::Integer(1)]]);
        let text = table(vec![vec![Value::Text("1".into())]]);
        assert_ne!(normalize_result(&int, false), normalize_result(&text, false));
        let a = table(vec![vec![Value::Text("a,b".into()), Value::Text("c".into())]]);
        let b = table(vec![vec![Value::Text("a".into()), Value::Text("b,c".into())]]);
        assert_ne!(normalize_result(&a, false), normalize_result(&b, false));
    }

    #[test]
    fn digest_is_stable() {
        let empty = table(vec![]);
        assert_eq!(
            normalize_result(&empty, false).digest,
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn text_rendering() {
        let t = ResultTable::new(vec!["region".into(), "total".into()], vec![vec![Value::Text("north".into()), Value::Integer(5)]], false).unwrap();
        assert_eq!(t.to_text(), "region | total\n-------+------\nnorth  | 5\n(1 row)\n");
    }
}
