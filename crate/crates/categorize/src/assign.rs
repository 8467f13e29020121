use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::embedding::EmbeddingMatrix;
use crate::error::{CategorizeError, Result};
use crate::gmm::GmmModel;
use crate::pca::Projection;
use crate::select::ScoreRow;

/// Most responsible mixture component for every embedding row.
pub fn assign_categories(
    model: &GmmModel,
    projection: &Projection,
    x: &EmbeddingMatrix,
) -> Result<Vec<usize>> {
    if projection.output_dims() != model.dims() {
        return Err(CategorizeError::DimensionMismatch {
            expected: model.dims(),
            found: projection.output_dims(),
        });
    }
    model.predict(&projection.transform(&x.data)?)
}

/// Writes `entity<TAB>c_<index>` lines.
pub fn write_category_map(path: &Path, names: &[String], labels: &[usize]) -> Result<()> {
    if names.len() != labels.len() {
        return Err(CategorizeError::DimensionMismatch {
            expected: names.len(),
            found: labels.len(),
        });
    }
    let mut out = BufWriter::new(File::create(path)?);
    for (name, label) in names.iter().zip(labels) {
        writeln!(out, "{name}\tc_{label}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_score_table(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "dims,k,bic,aic,log_likelihood,error")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.dims,
            r.k,
            r.bic,
            r.aic,
            r.log_likelihood,
            r.error.as_deref().unwrap_or("").replace([',', '\n'], " ")
        )?;
    }
    out.flush()?;
    Ok(())
}
