use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{CategorizeError, Result};

/// Row `i` holds the embedding of entity `names[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub names: Vec<String>,
    pub data: DMatrix<f64>,
}

impl EmbeddingMatrix {
    pub fn new(names: Vec<String>, data: DMatrix<f64>) -> Result<Self> {
        if names.len() != data.nrows() {
            return Err(CategorizeError::DimensionMismatch {
                expected: data.nrows(),
                found: names.len(),
            });
        }
        if data.nrows() < 2 {
            return Err(CategorizeError::TooFewRows(data.nrows()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(CategorizeError::InvalidParameter(format!(
                "non-finite value in row {}",
                i % data.nrows()
            )));
        }
        Ok(Self { names, data })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(CategorizeError::DimensionMismatch {
                expected: d,
                found: bad.len(),
            });
        }
        let data = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
        Self::new(names, data)
    }

    /// Reads `entity<TAB>v1,v2,...,vd` lines. Blank lines are skipped.
    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut names = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let parse_err = |message: String| CategorizeError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            if line.trim().is_empty() {
                continue;
            }
            let (name, values) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected `entity<TAB>v1,v2,...`".into()))?;
            let row = values
                .split(',')
                .map(|v| {
                    let x: f64 = v
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(format!("`{v}` is not a number")))?;
                    if x.is_finite() {
                        Ok(x)
                    } else {
                        Err(parse_err(format!("`{v}` is not finite")))
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(parse_err(format!(
                        "{} values, earlier rows have {}",
                        row.len(),
                        first.len()
                    )));
                }
            }
            names.push(name.to_string());
            rows.push(row);
        }
        Self::from_rows(names, &rows)
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dims(&self) -> usize {
        self.data.ncols()
    }
}
