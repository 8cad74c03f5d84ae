use crate::data::dataset::{ColumnKind, Dataset, Value};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum CovariateValues {
    Numeric(Vec<Option<f64>>),
    /// Level codes index into `levels` (first-appearance order).
    Categorical {
        levels: Vec<String>,
        codes: Vec<Option<usize>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub values: CovariateValues,
}

impl Covariate {
    pub fn is_numeric(&self) -> bool {
        matches!(self.values, CovariateValues::Numeric(_))
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match &self.values {
            CovariateValues::Numeric(v) => v[row].is_none(),
            CovariateValues::Categorical { codes, .. } => codes[row].is_none(),
        }
    }

    /// Display label of a row's value, used for grouping.
    pub fn label(&self, row: usize) -> Option<String> {
        match &self.values {
            CovariateValues::Numeric(v) => v[row].map(crate::data::dataset::format_number),
            CovariateValues::Categorical { levels, codes } => codes[row].map(|c| levels[c].clone()),
        }
    }

    fn select(&self, rows: &[usize]) -> Covariate {
        let values = match &self.values {
            CovariateValues::Numeric(v) => {
                CovariateValues::Numeric(rows.iter().map(|&r| v[r]).collect())
            }
            CovariateValues::Categorical { levels, codes } => CovariateValues::Categorical {
                levels: levels.clone(),
                codes: rows.iter().map(|&r| codes[r]).collect(),
            },
        };
        Covariate {
            name: self.name.clone(),
            values,
        }
    }
}

/// Per-subject covariate columns carried alongside validated data.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CovariateTable {
    columns: Vec<Covariate>,
    n: usize,
}

impl CovariateTable {
    /// Extracts the named columns for the given dataset rows.
    pub fn from_dataset(d: &Dataset, names: &[String], rows: &[usize]) -> Result<CovariateTable> {
        let mut columns = Vec::with_capacity(names.len());
        for name in names {
            let col = d.column(name)?;
            let cells = d.values(name)?;
            let values = match col.kind {
                ColumnKind::Numeric => {
                    CovariateValues::Numeric(rows.iter().map(|&r| cells[r].as_f64()).collect())
                }
                ColumnKind::Categorical | ColumnKind::Text => {
                    let mut levels: Vec<String> = Vec::new();
                    let codes = rows
                        .iter()
                        .map(|&r| match cells[r] {
                            Value::Text(s) => Some(match levels.iter().position(|l| l == s) {
                                Some(i) => i,
                                None => {
                                    levels.push(s.clone());
                                    levels.len() - 1
                                }
                            }),
                            _ => None,
                        })
                        .collect();
                    CovariateValues::Categorical { levels, codes }
                }
            };
            columns.push(Covariate {
                name: name.clone(),
                values,
            });
        }
        Ok(CovariateTable {
            columns,
            n: rows.len(),
        })
    }

    pub fn new(columns: Vec<Covariate>, n: usize) -> CovariateTable {
        CovariateTable { columns, n }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn columns(&self) -> &[Covariate] {
        &self.columns
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Result<&Covariate> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Numeric values of a continuous covariate.
    pub fn numeric(&self, name: &str) -> Result<&[Option<f64>]> {
        match &self.get(name)?.values {
            CovariateValues::Numeric(v) => Ok(v),
            CovariateValues::Categorical { .. } => Err(Error::NonNumericColumn {
                column: name.to_string(),
            }),
        }
    }

    /// Row subset (rows may repeat, as in bootstrap resamples).
    pub fn select(&self, rows: &[usize]) -> CovariateTable {
        CovariateTable {
            columns: self.columns.iter().map(|c| c.select(rows)).collect(),
            n: rows.len(),
        }
    }

    /// Rows with no missing value in any of `names`.
    pub fn complete_rows(&self, names: &[String]) -> Result<Vec<usize>> {
        let cols = names
            .iter()
            .map(|n| self.get(n))
            .collect::<Result<Vec<_>>>()?;
        Ok((0..self.n)
            .filter(|&r| cols.iter().all(|c| !c.is_missing(r)))
            .collect())
    }
}
