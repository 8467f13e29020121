use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{CategorizeError, Result};

/// Linear projection onto the leading principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub mean: DVector<f64>,
    /// One orthonormal direction per row, by descending variance.
    pub basis: DMatrix<f64>,
    /// Variance along each basis direction.
    pub explained_variance: Vec<f64>,
    /// Total variance of the input (trace of its covariance).
    pub total_variance: f64,
}

impl Projection {
    pub fn input_dims(&self) -> usize {
        self.basis.ncols()
    }

    pub fn output_dims(&self) -> usize {
        self.basis.nrows()
    }

    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.explained_variance
            .iter()
            .map(|v| v / self.total_variance)
            .collect()
    }

    /// Projects the rows of `x`.
    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dims() {
            return Err(CategorizeError::DimensionMismatch {
                expected: self.input_dims(),
                found: x.ncols(),
            });
        }
        Ok(center(x, &self.mean) * self.basis.transpose())
    }

    /// Maps reduced rows back to the input space.
    pub fn inverse_transform(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut x = z * &self.basis;
        for mut row in x.row_iter_mut() {
            row += self.mean.transpose();
        }
        x
    }

    /// The first `dims` directions.
    pub fn truncate(&self, dims: usize) -> Projection {
        let dims = dims.min(self.output_dims());
        Projection {
            mean: self.mean.clone(),
            basis: self.basis.rows(0, dims).into_owned(),
            explained_variance: self.explained_variance[..dims].to_vec(),
            total_variance: self.total_variance,
        }
    }
}

fn center(x: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut c = x.clone();
    for mut row in c.row_iter_mut() {
        row -= mean.transpose();
    }
    c
}

/// Eigenpairs sorted by descending eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| {
        eig.eigenvectors[(r, order[c])]
    });
    (values, vectors)
}

/// Fits a `dims`-component PCA. Uses the smaller of the covariance and Gram
/// matrices for the eigendecomposition.
pub fn pca_fit(x: &DMatrix<f64>, dims: usize) -> Result<Projection> {
    let (n, d) = x.shape();
    if n < 2 {
        return Err(CategorizeError::TooFewRows(n));
    }
    if dims == 0 || dims > d.min(n - 1) {
        return Err(CategorizeError::InvalidParameter(format!(
            "PCA dimension {dims} outside 1..={}",
            d.min(n - 1)
        )));
    }
    let mean = x.row_mean().transpose();
    let xc = center(x, &mean);
    let scale = 1.0 / (n as f64 - 1.0);
    let total_variance = xc.iter().map(|v| v * v).sum::<f64>() * scale;
    if total_variance <= 0.0 {
        return Err(CategorizeError::ZeroVariance);
    }

    let mut directions: Vec<DVector<f64>> = Vec::with_capacity(dims);
    let mut variances = Vec::with_capacity(dims);
    let mut use_covariance = n >= d;
    if !use_covariance {
        let (values, vectors) = sorted_eigen(&xc * xc.transpose() * scale);
        // Directions with zero variance cannot be recovered from the Gram
        // matrix, so fall back to the covariance route.
        if values[dims - 1] > total_variance * 1e-12 {
            for (i, &value) in values.iter().take(dims).enumerate() {
                let v = xc.transpose() * vectors.column(i);
                directions.push(v.normalize());
                variances.push(value);
            }
        } else {
            use_covariance = true;
        }
    }
    if use_covariance {
        let (values, vectors) = sorted_eigen(xc.transpose() * &xc * scale);
        for (i, &value) in values.iter().take(dims).enumerate() {
            directions.push(vectors.column(i).into_owned());
            variances.push(value.max(0.0));
        }
    }
    for v in &mut directions {
        let lead = v.iter().enumerate().fold(
            0,
            |best, (i, x)| if x.abs() > v[best].abs() { i } else { best },
        );
        if v[lead] < 0.0 {
            v.neg_mut();
        }
    }
    let basis = DMatrix::from_fn(dims, d, |r, c| directions[r][c]);
    Ok(Projection {
        mean,
        basis,
        explained_variance: variances,
        total_variance,
    })
}
