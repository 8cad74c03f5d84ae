use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::data::{CovariateTable, CovariateValues};
use crate::error::{Error, Result};

/// How one model term maps onto design columns.
#[derive(Debug, Clone, PartialEq)]
pub enum TermEncoding {
    Numeric,
    /// Dummy columns for the listed non-reference levels.
    Dummies {
        reference: String,
        levels: Vec<String>,
    },
}

/// Numeric design matrix built from covariate terms, one row per complete case.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: DMatrix<f64>,
    /// Column names, `term` for numeric terms and `term=level` for dummies.
    pub names: Vec<String>,
    pub terms: Vec<String>,
    /// Term index of each column.
    pub assign: Vec<usize>,
    pub encodings: Vec<TermEncoding>,
    /// Table rows used, in design-row order.
    pub rows: Vec<usize>,
}

impl Design {
    /// Design over the given candidate rows, dropping rows with missing values
    /// in any term. Categorical terms use reference-level dummy coding with the
    /// first observed level as reference.
    pub fn build(table: &CovariateTable, terms: &[String], candidates: &[usize]) -> Result<Design> {
        let cols = terms
            .iter()
            .map(|t| table.get(t))
            .collect::<Result<Vec<_>>>()?;
        let rows: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&r| cols.iter().all(|c| !c.is_missing(r)))
            .collect();
        let mut names = Vec::new();
        let mut assign = Vec::new();
        let mut encodings = Vec::new();
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for (k, c) in cols.iter().enumerate() {
            match &c.values {
                CovariateValues::Numeric(v) => {
                    names.push(c.name.clone());
                    assign.push(k);
                    encodings.push(TermEncoding::Numeric);
                    columns.push(rows.iter().map(|&r| v[r].unwrap()).collect());
                }
                CovariateValues::Categorical { levels, codes } => {
                    let mut present: Vec<usize> = rows.iter().map(|&r| codes[r].unwrap()).collect();
                    present.sort_unstable();
                    present.dedup();
                    let Some((&reference, others)) = present.split_first() else {
                        return Err(Error::InvalidParameter(format!(
                            "no complete rows for `{}`",
                            c.name
                        )));
                    };
                    for &lvl in others {
                        names.push(format!("{}={}", c.name, levels[lvl]));
                        assign.push(k);
                        columns.push(
                            rows.iter()
                                .map(|&r| if codes[r] == Some(lvl) { 1.0 } else { 0.0 })
                                .collect(),
                        );
                    }
                    encodings.push(TermEncoding::Dummies {
                        reference: levels[reference].clone(),
                        levels: others.iter().map(|&l| levels[l].clone()).collect(),
                    });
                }
            }
        }
        let x = DMatrix::from_fn(rows.len(), columns.len(), |i, j| columns[j][i]);
        Ok(Design {
            x,
            names,
            terms: terms.to_vec(),
            assign,
            encodings,
            rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }

    /// Columns belonging to term `k`.
    pub fn term_columns(&self, k: usize) -> Vec<usize> {
        (0..self.assign.len())
            .filter(|&j| self.assign[j] == k)
            .collect()
    }

    /// Encodes a covariate profile given as `term -> value` strings.
    pub fn encode_profile(&self, profile: &BTreeMap<String, String>) -> Result<DVector<f64>> {
        let mut out = Vec::with_capacity(self.n_cols());
        for (term, enc) in self.terms.iter().zip(&self.encodings) {
            let raw = profile.get(term).ok_or_else(|| {
                Error::InvalidParameter(format!("profile lacks a value for `{term}`"))
            })?;
            match enc {
                TermEncoding::Numeric => out.push(raw.trim().parse::<f64>().map_err(|_| {
                    Error::InvalidParameter(format!(
                        "profile value `{raw}` for `{term}` is not numeric"
                    ))
                })?),
                TermEncoding::Dummies { reference, levels } => {
                    if raw != reference && !levels.contains(raw) {
                        return Err(Error::InvalidParameter(format!(
                            "unknown level `{raw}` for `{term}`"
                        )));
                    }
                    out.extend(levels.iter().map(|l| if l == raw { 1.0 } else { 0.0 }));
                }
            }
        }
        Ok(DVector::from_vec(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Covariate;

    fn table() -> CovariateTable {
        CovariateTable::new(
            vec![
                Covariate {
                    name: "age".into(),
                    values: CovariateValues::Numeric(vec![
                        Some(40.0),
                        None,
                        Some(60.0),
                        Some(50.0),
                    ]),
                },
                Covariate {
                    name: "rx".into(),
                    values: CovariateValues::Categorical {
                        levels: vec!["Obs".into(), "Lev".into(), "Lev+5FU".into()],
                        codes: vec![Some(1), Some(0), Some(0), Some(2)],
                    },
                },
            ],
            4,
        )
    }

    #[test]
    fn dummy_coding_uses_first_present_level() {
        let d = Design::build(&table(), &["age".into(), "rx".into()], &[0, 1, 2, 3]).unwrap();
        assert_eq!(d.rows, vec![0, 2, 3]);
        assert_eq!(d.names, vec!["age", "rx=Lev", "rx=Lev+5FU"]);
        assert_eq!(d.assign, vec![0, 1, 1]);
        assert_eq!(
            d.x.row(0).iter().copied().collect::<Vec<_>>(),
            vec![40.0, 1.0, 0.0]
        );
        assert_eq!(
            d.x.row(1).iter().copied().collect::<Vec<_>>(),
            vec![60.0, 0.0, 0.0]
        );
    }

    #[test]
    fn profile_encoding() {
        let d = Design::build(&table(), &["rx".into(), "age".into()], &[0, 1, 2, 3]).unwrap();
        let mut p = BTreeMap::new();
        p.insert("rx".to_string(), "Lev+5FU".to_string());
        p.insert("age".to_string(), "48".to_string());
        assert_eq!(d.encode_profile(&p).unwrap().as_slice(), &[0.0, 1.0, 48.0]);
        p.insert("rx".to_string(), "nope".to_string());
        assert!(d.encode_profile(&p).is_err());
    }
}
