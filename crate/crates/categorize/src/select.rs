//! Grid search over PCA size and mixture size.

use std::str::FromStr;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{CategorizeError, Result};
use crate::gmm::{aic_value, bic_value, gmm_fit, GmmModel, GmmParams};
use crate::pca::{pca_fit, Projection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Criterion {
    #[default]
    Bic,
    Aic,
}

impl FromStr for Criterion {
    type Err = CategorizeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bic" => Ok(Criterion::Bic),
            "aic" => Ok(Criterion::Aic),
            other => Err(CategorizeError::InvalidParameter(format!(
                "unknown criterion `{other}` (expected bic or aic)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectParams {
    pub dims_grid: Vec<usize>,
    pub k_grid: Vec<usize>,
    /// Mixture settings; `k` is taken from the grid.
    pub gmm: GmmParams,
    pub criterion: Criterion,
    pub seed: u64,
    /// Use this `(dims, k)` whatever the scores say.
    pub force: Option<(usize, usize)>,
}

impl Default for SelectParams {
    fn default() -> Self {
        Self {
            dims_grid: vec![50],
            k_grid: (1..=12).collect(),
            gmm: GmmParams::default(),
            criterion: Criterion::Bic,
            seed: 12,
            force: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub dims: usize,
    pub k: usize,
    pub bic: f64,
    pub aic: f64,
    pub log_likelihood: f64,
    /// Set when the cell failed; scores are NaN then.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub dims: usize,
    pub k: usize,
    pub projection: Projection,
    pub model: GmmModel,
    pub table: Vec<ScoreRow>,
}

fn cell_seed(seed: u64, dims: usize, k: usize) -> u64 {
    seed ^ (dims as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (k as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Fits every `(dims, k)` cell and returns the one minimising the criterion
/// (ties prefer fewer components, then fewer dimensions), or the forced
/// cell. Failed cells are reported in the table and skipped.
pub fn select_model(x: &DMatrix<f64>, params: &SelectParams) -> Result<Selection> {
    let mut dims_grid = params.dims_grid.clone();
    let mut k_grid = params.k_grid.clone();
    if dims_grid.is_empty() || k_grid.is_empty() {
        return Err(CategorizeError::InvalidParameter(
            "dimension and component grids must be non-empty".into(),
        ));
    }
    dims_grid.sort_unstable();
    dims_grid.dedup();
    k_grid.sort_unstable();
    k_grid.dedup();
    let mut cells: Vec<(usize, usize)> = dims_grid
        .iter()
        .flat_map(|&d| k_grid.iter().map(move |&k| (d, k)))
        .collect();
    if let Some(forced) = params.force {
        if !cells.contains(&forced) {
            cells.push(forced);
        }
    }
    let max_dims = cells.iter().map(|c| c.0).max().expect("non-empty grid");
    let full = pca_fit(x, max_dims)?;
    let mut reduced: Vec<(usize, DMatrix<f64>)> = Vec::new();
    for &(d, _) in &cells {
        if !reduced.iter().any(|(rd, _)| *rd == d) {
            reduced.push((d, full.truncate(d).transform(x)?));
        }
    }
    let n = x.nrows() as f64;
    let fits: Vec<(ScoreRow, Option<GmmModel>)> = cells
        .par_iter()
        .map(|&(d, k)| {
            let z = &reduced
                .iter()
                .find(|(rd, _)| *rd == d)
                .expect("reduced above")
                .1;
            let mut rng = ChaCha8Rng::seed_from_u64(cell_seed(params.seed, d, k));
            let gmm = GmmParams { k, ..params.gmm };
            match gmm_fit(z, &gmm, &mut rng) {
                Ok(m) => {
                    let p = m.num_parameters();
                    let row = ScoreRow {
                        dims: d,
                        k,
                        bic: bic_value(p, n, m.log_likelihood),
                        aic: aic_value(p, m.log_likelihood),
                        log_likelihood: m.log_likelihood,
                        error: None,
                    };
                    (row, Some(m))
                }
                Err(e) => {
                    log::warn!("cell dims={d} k={k} failed: {e}");
                    let row = ScoreRow {
                        dims: d,
                        k,
                        bic: f64::NAN,
                        aic: f64::NAN,
                        log_likelihood: f64::NAN,
                        error: Some(e.to_string()),
                    };
                    (row, None)
                }
            }
        })
        .collect();

    let chosen = match params.force {
        Some(forced) => cells.iter().position(|&c| c == forced),
        None => {
            let value = |r: &ScoreRow| match params.criterion {
                Criterion::Bic => r.bic,
                Criterion::Aic => r.aic,
            };
            (0..cells.len())
                .filter(|&i| fits[i].1.is_some())
                .min_by(|&a, &b| {
                    let (ra, rb) = (&fits[a].0, &fits[b].0);
                    value(ra)
                        .total_cmp(&value(rb))
                        .then(ra.k.cmp(&rb.k))
                        .then(ra.dims.cmp(&rb.dims))
                })
        }
    };
    let index = chosen
        .ok_or_else(|| CategorizeError::InvalidParameter("no grid cell could be fitted".into()))?;
    let (dims, k) = cells[index];
    let mut table: Vec<ScoreRow> = Vec::with_capacity(fits.len());
    let mut model = None;
    for (i, (row, m)) in fits.into_iter().enumerate() {
        if i == index {
            model = m;
        }
        table.push(row);
    }
    let model = match model {
        Some(m) => m,
        None => {
            let err = table[index].error.clone().unwrap_or_default();
            return Err(CategorizeError::InvalidParameter(format!(
                "forced cell dims={dims} k={k} failed: {err}"
            )));
        }
    };
    Ok(Selection {
        dims,
        k,
        projection: full.truncate(dims),
        model,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn mixture(centers: &[[f64; 3]], per: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(centers.len() * per, 3, |i, c| {
            let z: f64 = StandardNormal.sample(&mut rng);
            centers[i / per][c] + z
        })
    }

    fn params(k_grid: Vec<usize>) -> SelectParams {
        SelectParams {
            dims_grid: vec![2],
            k_grid,
            gmm: GmmParams {
                restarts: 3,
                ..GmmParams::default()
            },
            ..SelectParams::default()
        }
    }

    #[test]
    fn single_gaussian_selects_one_component() {
        let x = mixture(&[[0.0, 0.0, 0.0]], 200, 1);
        let s = select_model(&x, &params((1..=4).collect())).unwrap();
        assert_eq!(s.k, 1);
        assert_eq!(s.table.len(), 4);
    }

    #[test]
    fn forced_cell_wins_regardless_of_scores() {
        let x = mixture(&[[0.0, 0.0, 0.0], [9.0, 0.0, 0.0]], 50, 2);
        let mut p = params(vec![1, 2]);
        p.force = Some((3, 5));
        let s = select_model(&x, &p).unwrap();
        assert_eq!((s.dims, s.k), (3, 5));
        assert_eq!(s.model.k(), 5);
        assert_eq!(s.projection.output_dims(), 3);
        assert_eq!(s.table.len(), 3);
    }

    #[test]
    fn selection_is_reproducible() {
        let x = mixture(&[[0.0, 0.0, 0.0], [6.0, 6.0, 0.0]], 40, 3);
        let a = select_model(&x, &params(vec![1, 2, 3])).unwrap();
        let b = select_model(&x, &params(vec![1, 2, 3])).unwrap();
        assert_eq!(a.table, b.table);
        assert_eq!(a.model, b.model);
    }
}
