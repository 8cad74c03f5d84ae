use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Storage class of a column, inferred at parse time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Text,
}

/// A single cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Missing,
    Number(f64),
    Text(String),
}

impl Value {
    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            _ => None,
        }
    }

    /// Rendering used for CSV output and level names of numeric columns.
    pub fn render(&self) -> String {
        match self {
            Value::Missing => "NA".to_string(),
            Value::Number(x) => format_number(*x),
            Value::Text(s) => s.clone(),
        }
    }
}

pub(crate) fn format_number(x: f64) -> String {
    format!("{x}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Observed levels in first-appearance order; empty for numeric columns.
    pub levels: Vec<String>,
}

/// Column-typed table parsed from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<Column>,
    rows: Vec<Vec<Value>>,
}

/// Non-numeric columns with more distinct values than this (and more than
/// half the rows) are treated as free text rather than categories.
const MAX_CATEGORICAL_LEVELS: usize = 50;

fn is_missing_token(s: &str) -> bool {
    s.is_empty() || s == "NA"
}

/// Picks `;` when the header has semicolons and no commas, `,` otherwise.
pub fn detect_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    if header.contains(';') && !header.contains(',') {
        b';'
    } else {
        b','
    }
}

/// Parses UTF-8 CSV content with a mandatory header row.
pub fn parse_csv(bytes: &[u8], delimiter_hint: Option<u8>) -> Result<Dataset> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Csv(format!("invalid UTF-8: {e}")))?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    if text.trim().is_empty() {
        return Err(Error::EmptyFile);
    }
    let delimiter = delimiter_hint.unwrap_or_else(|| detect_delimiter(text));
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut seen = HashSet::new();
    for name in &header {
        if !seen.insert(name.as_str()) {
            return Err(Error::DuplicateColumnName(name.clone()));
        }
    }

    let mut raw: Vec<Vec<String>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        if record.len() == 1 && record[0].is_empty() && header.len() > 1 {
            continue;
        }
        if record.len() != header.len() {
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            return Err(Error::RaggedRows {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        raw.push(record.iter().map(str::to_string).collect());
    }

    Ok(Dataset::from_strings(header, raw))
}

impl Dataset {
    /// Builds a dataset from string cells, inferring column kinds.
    pub fn from_strings(names: Vec<String>, raw: Vec<Vec<String>>) -> Dataset {
        let n = raw.len();
        let mut columns = Vec::with_capacity(names.len());
        let mut typed: Vec<Vec<Value>> = vec![Vec::with_capacity(names.len()); n];
        for (c, name) in names.into_iter().enumerate() {
            let numeric = raw
                .iter()
                .map(|r| r[c].as_str())
                .filter(|s| !is_missing_token(s))
                .all(|s| s.parse::<f64>().is_ok());
            if numeric {
                for (row, cells) in typed.iter_mut().zip(&raw) {
                    let s = cells[c].as_str();
                    row.push(if is_missing_token(s) {
                        Value::Missing
                    } else {
                        Value::Number(s.parse().unwrap())
                    });
                }
                columns.push(Column {
                    name,
                    kind: ColumnKind::Numeric,
                    levels: Vec::new(),
                });
            } else {
                let mut levels: Vec<String> = Vec::new();
                let mut seen = HashSet::new();
                for (row, cells) in typed.iter_mut().zip(&raw) {
                    let s = cells[c].as_str();
                    if is_missing_token(s) {
                        row.push(Value::Missing);
                    } else {
                        if seen.insert(s.to_string()) {
                            levels.push(s.to_string());
                        }
                        row.push(Value::Text(s.to_string()));
                    }
                }
                let kind = if levels.len() > MAX_CATEGORICAL_LEVELS && levels.len() * 2 > n {
                    ColumnKind::Text
                } else {
                    ColumnKind::Categorical
                };
                if kind == ColumnKind::Text {
                    levels.clear();
                }
                columns.push(Column { name, kind, levels });
            }
        }
        Dataset {
            columns,
            rows: typed,
        }
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        Ok(&self.columns[self.column_index(name)?])
    }

    pub fn values(&self, name: &str) -> Result<Vec<&Value>> {
        let c = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| &r[c]).collect())
    }

    /// Values of a numeric column; errors when the column holds text.
    pub fn numeric(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let col = self.column(name)?;
        if col.kind != ColumnKind::Numeric {
            return Err(Error::NonNumericColumn {
                column: name.to_string(),
            });
        }
        Ok(self.values(name)?.into_iter().map(Value::as_f64).collect())
    }

    /// Serialises back to CSV with the given delimiter; missing cells become `NA`.
    pub fn to_csv(&self, delimiter: u8) -> String {
        let mut writer = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(Vec::new());
        writer
            .write_record(self.columns.iter().map(|c| c.name.as_str()))
            .expect("in-memory write");
        for row in &self.rows {
            writer
                .write_record(row.iter().map(Value::render))
                .expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf8 output")
    }

    /// First `n` rows rendered as strings.
    pub fn preview(&self, n: usize) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .take(n)
            .map(|r| r.iter().map(Value::render).collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const AML_HEAD: &str =
        "time1,status,x\n9,1,Maintained\n13,1,Maintained\n13,0,Maintained\n5,1,Nonmaintained\n";

    #[test]
    fn parses_survival_layout() {
        let d = parse_csv(AML_HEAD.as_bytes(), None).unwrap();
        assert_eq!(d.columns().len(), 3);
        assert_eq!(d.n_rows(), 4);
        assert_eq!(d.column("time1").unwrap().kind, ColumnKind::Numeric);
        let x = d.column("x").unwrap();
        assert_eq!(x.kind, ColumnKind::Categorical);
        assert_eq!(x.levels, vec!["Maintained", "Nonmaintained"]);
    }

    #[test]
    fn semicolon_input_is_identical() {
        let semi = AML_HEAD.replace(',', ";");
        let a = parse_csv(AML_HEAD.as_bytes(), None).unwrap();
        let b = parse_csv(semi.as_bytes(), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_input() {
        assert_eq!(parse_csv(b"", None), Err(Error::EmptyFile));
        assert_eq!(parse_csv(b"  \n", None), Err(Error::EmptyFile));
    }

    #[test]
    fn ragged_and_duplicate() {
        let err = parse_csv(b"a,b\n1,2\n3\n", None).unwrap_err();
        assert!(matches!(
            err,
            Error::RaggedRows {
                expected: 2,
                found: 1,
                ..
            }
        ));
        let err = parse_csv(b"a,a\n1,2\n", None).unwrap_err();
        assert_eq!(err, Error::DuplicateColumnName("a".into()));
    }

    #[test]
    fn missing_tokens() {
        let d = parse_csv(b"t,g\n1,a\nNA,\n3,b\n", None).unwrap();
        assert_eq!(d.numeric("t").unwrap(), vec![Some(1.0), None, Some(3.0)]);
        assert!(d.rows()[1][1].is_missing());
        assert_eq!(d.column("g").unwrap().levels, vec!["a", "b"]);
    }

    #[test]
    fn quoted_fields() {
        let d = parse_csv(b"name,v\n\"a,b\",1\n\"c\"\"d\",2\n", None).unwrap();
        assert_eq!(d.rows()[0][0], Value::Text("a,b".into()));
        assert_eq!(d.rows()[1][0], Value::Text("c\"d".into()));
    }
}
