//! Gaussian mixtures fitted by expectation maximisation.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{CategorizeError, Result};
use crate::kmeans::kmeans_plus_plus;

/// Absolute floor on the responsibility mass of a kept component.
const COLLAPSE_MASS: f64 = 1e-8;
const MAX_COLLAPSES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceType {
    #[default]
    Diagonal,
    Full,
}

impl FromStr for CovarianceType {
    type Err = CategorizeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "diag" | "diagonal" => Ok(CovarianceType::Diagonal),
            "full" => Ok(CovarianceType::Full),
            other => Err(CategorizeError::InvalidParameter(format!(
                "unknown covariance type `{other}` (expected diagonal or full)"
            ))),
        }
    }
}

impl std::fmt::Display for CovarianceType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CovarianceType::Diagonal => "diagonal",
            CovarianceType::Full => "full",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmParams {
    pub k: usize,
    pub covariance: CovarianceType,
    pub max_iters: usize,
    /// Convergence threshold on the per-sample log-likelihood gain.
    pub tol: f64,
    pub restarts: usize,
    /// Lower bound on variances (diagonal) or eigenvalues (full).
    pub floor: f64,
}

impl Default for GmmParams {
    fn default() -> Self {
        Self {
            k: 1,
            covariance: CovarianceType::Diagonal,
            max_iters: 300,
            tol: 1e-6,
            restarts: 5,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariances {
    /// Row `j` holds the variances of component `j`.
    Diagonal(DMatrix<f64>),
    Full(Vec<DMatrix<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// Row `j` is the mean of component `j`.
    pub means: DMatrix<f64>,
    pub covariances: Covariances,
    /// Training log-likelihood of the final parameters.
    pub log_likelihood: f64,
    /// Log-likelihood after every EM iteration of the kept restart.
    pub history: Vec<f64>,
    /// History indices that directly follow a component re-seed.
    pub reseeds: Vec<usize>,
    pub collapses: usize,
    pub converged: bool,
}

/// Per-component terms reused across all rows.
enum Precomputed {
    Diagonal {
        inv_var: DMatrix<f64>,
        log_norm: Vec<f64>,
    },
    Full {
        chol: Vec<Cholesky<f64, nalgebra::Dyn>>,
        log_norm: Vec<f64>,
    },
}

fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn clamp_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let values = eig.eigenvalues.map(|v| v.max(floor));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&values) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dims(&self) -> usize {
        self.means.ncols()
    }

    pub fn covariance_type(&self) -> CovarianceType {
        match self.covariances {
            Covariances::Diagonal(_) => CovarianceType::Diagonal,
            Covariances::Full(_) => CovarianceType::Full,
        }
    }

    /// Free parameters: weights, means and covariance entries.
    pub fn num_parameters(&self) -> usize {
        let (k, d) = (self.k(), self.dims());
        let cov = match self.covariance_type() {
            CovarianceType::Diagonal => k * d,
            CovarianceType::Full => k * d * (d + 1) / 2,
        };
        (k - 1) + k * d + cov
    }

    /// Whether the log-likelihood never decreased by more than `slack`
    /// (relative) between consecutive iterations without a re-seed.
    pub fn is_monotone(&self, slack: f64) -> bool {
        self.history.windows(2).enumerate().all(|(i, w)| {
            self.reseeds.contains(&(i + 1)) || w[1] >= w[0] - slack * w[0].abs().max(1.0)
        })
    }

    fn precompute(&self) -> Precomputed {
        let d = self.dims() as f64;
        match &self.covariances {
            Covariances::Diagonal(var) => {
                let log_norm = (0..self.k())
                    .map(|j| {
                        -0.5 * (d * (2.0 * PI).ln()
                            + var.row(j).iter().map(|v| v.ln()).sum::<f64>())
                    })
                    .collect();
                Precomputed::Diagonal {
                    inv_var: var.map(|v| 1.0 / v),
                    log_norm,
                }
            }
            Covariances::Full(covs) => {
                let chol: Vec<_> = covs
                    .iter()
                    .map(|c| Cholesky::new(c.clone()).expect("covariances are positive definite"))
                    .collect();
                let log_norm = chol
                    .iter()
                    .map(|c| {
                        let log_det: f64 =
                            c.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
                        -0.5 * (d * (2.0 * PI).ln() + log_det)
                    })
                    .collect();
                Precomputed::Full { chol, log_norm }
            }
        }
    }

    /// `ln w_j + ln N(x_i | j)` for every row and component.
    fn weighted_log_densities(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let pre = self.precompute();
        let (n, k) = (x.nrows(), self.k());
        let log_w: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        DMatrix::from_fn(n, k, |i, j| {
            let diff = x.row(i) - self.means.row(j);
            let quad = match &pre {
                Precomputed::Diagonal { inv_var, .. } => diff
                    .iter()
                    .zip(inv_var.row(j).iter())
                    .map(|(a, b)| a * a * b)
                    .sum::<f64>(),
                Precomputed::Full { chol, .. } => {
                    let y = chol[j]
                        .l_dirty()
                        .solve_lower_triangular(&diff.transpose())
                        .expect("cholesky factor is invertible");
                    y.norm_squared()
                }
            };
            let norm = match &pre {
                Precomputed::Diagonal { log_norm, .. } | Precomputed::Full { log_norm, .. } => {
                    log_norm[j]
                }
            };
            log_w[j] + norm - 0.5 * quad
        })
    }

    fn e_step(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
        let mut dens = self.weighted_log_densities(x);
        let mut row_ll = Vec::with_capacity(x.nrows());
        let mut buf = Vec::with_capacity(self.k());
        for mut row in dens.row_iter_mut() {
            buf.clear();
            buf.extend(row.iter().copied());
            let lse = logsumexp(&buf);
            row.apply(|v| *v = (*v - lse).exp());
            row_ll.push(lse);
        }
        (dens, row_ll)
    }

    /// Posterior component probabilities; rows sum to one.
    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dims(x)?;
        Ok(self.e_step(x).0)
    }

    pub fn score(&self, x: &DMatrix<f64>) -> Result<f64> {
        self.check_dims(x)?;
        Ok(self.e_step(x).1.iter().sum())
    }

    /// Most probable component per row; ties go to the lowest index.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let resp = self.predict_proba(x)?;
        Ok(resp
            .row_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(0, |best, (j, &p)| if p > row[best] { j } else { best })
            })
            .collect())
    }

    fn check_dims(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.dims() {
            return Err(CategorizeError::DimensionMismatch {
                expected: self.dims(),
                found: x.ncols(),
            });
        }
        Ok(())
    }
}

pub fn bic_value(parameters: usize, n: f64, log_likelihood: f64) -> f64 {
    parameters as f64 * n.ln() - 2.0 * log_likelihood
}

pub fn aic_value(parameters: usize, log_likelihood: f64) -> f64 {
    2.0 * parameters as f64 - 2.0 * log_likelihood
}

pub fn bic(model: &GmmModel, x: &DMatrix<f64>) -> Result<f64> {
    Ok(bic_value(
        model.num_parameters(),
        x.nrows() as f64,
        model.score(x)?,
    ))
}

pub fn aic(model: &GmmModel, x: &DMatrix<f64>) -> Result<f64> {
    Ok(aic_value(model.num_parameters(), model.score(x)?))
}

fn data_variance(x: &DMatrix<f64>, floor: f64) -> DVector<f64> {
    let mean = x.row_mean();
    let n = x.nrows() as f64;
    DVector::from_fn(x.ncols(), |c, _| {
        let v = x
            .column(c)
            .iter()
            .map(|v| (v - mean[c]).powi(2))
            .sum::<f64>()
            / n;
        v.max(floor)
    })
}

fn data_covariance(x: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let mean = x.row_mean();
    let mut cov = DMatrix::zeros(x.ncols(), x.ncols());
    for row in x.row_iter() {
        let c = row - &mean;
        cov += c.transpose() * c;
    }
    clamp_eigenvalues(&(cov / x.nrows() as f64), floor)
}

fn m_step(
    model: &mut GmmModel,
    x: &DMatrix<f64>,
    resp: &DMatrix<f64>,
    row_ll: &[f64],
    params: &GmmParams,
) -> Result<bool> {
    let (n, d) = x.shape();
    let k = model.k();
    let mass: Vec<f64> = (0..k).map(|j| resp.column(j).sum()).collect();
    // A component needs this much responsibility mass to estimate its
    // covariance; below it the likelihood can grow without bound.
    let support = match params.covariance {
        CovarianceType::Diagonal => 2.0,
        CovarianceType::Full => (d + 1) as f64,
    };
    let min_mass = support.min(n as f64 / k as f64).max(COLLAPSE_MASS);
    let mut reseeded = false;
    // Points explained worst by the current mixture seed collapsed components.
    let mut worst: Vec<usize> = (0..n).collect();
    worst.sort_by(|&a, &b| row_ll[a].total_cmp(&row_ll[b]).then(a.cmp(&b)));
    let mut next_worst = worst.into_iter();
    for j in 0..k {
        if mass[j] >= min_mass {
            let mean = resp.column(j).transpose() * x / mass[j];
            model.means.set_row(j, &mean);
            match &mut model.covariances {
                Covariances::Diagonal(var) => {
                    for c in 0..d {
                        let v = (0..n)
                            .map(|i| resp[(i, j)] * (x[(i, c)] - mean[c]).powi(2))
                            .sum::<f64>()
                            / mass[j];
                        var[(j, c)] = v.max(params.floor);
                    }
                }
                Covariances::Full(covs) => {
                    let mut cov = DMatrix::zeros(d, d);
                    for i in 0..n {
                        let diff = x.row(i) - &mean;
                        cov += diff.transpose() * diff * resp[(i, j)];
                    }
                    covs[j] = clamp_eigenvalues(&(cov / mass[j]), params.floor);
                }
            }
            model.weights[j] = mass[j] / n as f64;
        } else {
            model.collapses += 1;
            if model.collapses > MAX_COLLAPSES {
                return Err(CategorizeError::Degenerate {
                    k,
                    collapses: model.collapses,
                });
            }
            reseeded = true;
            let seed = next_worst.next().expect("n >= k");
            model.means.set_row(j, &x.row(seed));
            match &mut model.covariances {
                Covariances::Diagonal(var) => {
                    var.set_row(j, &data_variance(x, params.floor).transpose())
                }
                Covariances::Full(covs) => covs[j] = data_covariance(x, params.floor),
            }
            model.weights[j] = 1.0 / k as f64;
        }
    }
    let total: f64 = model.weights.iter().sum();
    for w in &mut model.weights {
        *w /= total;
    }
    Ok(reseeded)
}

fn fit_once<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    params: &GmmParams,
    rng: &mut R,
) -> Result<GmmModel> {
    let (n, d) = x.shape();
    let k = params.k;
    let seeds = kmeans_plus_plus(x, k, rng);
    let means = DMatrix::from_fn(k, d, |j, c| x[(seeds[j], c)]);
    let covariances = match params.covariance {
        CovarianceType::Diagonal => {
            let v = data_variance(x, params.floor);
            Covariances::Diagonal(DMatrix::from_fn(k, d, |_, c| v[c]))
        }
        CovarianceType::Full => Covariances::Full(vec![data_covariance(x, params.floor); k]),
    };
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means,
        covariances,
        log_likelihood: f64::NEG_INFINITY,
        history: Vec::new(),
        reseeds: Vec::new(),
        collapses: 0,
        converged: false,
    };
    let (mut resp, mut row_ll) = model.e_step(x);
    let mut ll: f64 = row_ll.iter().sum();
    model.history.push(ll);
    for _ in 0..params.max_iters {
        let reseeded = m_step(&mut model, x, &resp, &row_ll, params)?;
        (resp, row_ll) = model.e_step(x);
        let next: f64 = row_ll.iter().sum();
        if reseeded {
            model.reseeds.push(model.history.len());
        }
        model.history.push(next);
        let gain = next - ll;
        ll = next;
        if !reseeded && gain < params.tol * n as f64 {
            model.converged = true;
            break;
        }
    }
    model.log_likelihood = ll;
    Ok(model)
}

/// Fits a `k`-component mixture, keeping the best of `restarts` runs. Fails
/// only when every restart degenerates.
pub fn gmm_fit<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    params: &GmmParams,
    rng: &mut R,
) -> Result<GmmModel> {
    let n = x.nrows();
    if params.k == 0 {
        return Err(CategorizeError::InvalidParameter(
            "k must be positive".into(),
        ));
    }
    if n < params.k {
        return Err(CategorizeError::InvalidParameter(format!(
            "{n} points cannot support {} components",
            params.k
        )));
    }
    if params.floor <= 0.0 {
        return Err(CategorizeError::InvalidParameter(
            "covariance floor must be positive".into(),
        ));
    }
    let mut best: Option<GmmModel> = None;
    let mut last_err = None;
    for _ in 0..params.restarts.max(1) {
        match fit_once(x, params, rng) {
            Ok(m) => {
                if best
                    .as_ref()
                    .is_none_or(|b| m.log_likelihood > b.log_likelihood)
                {
                    best = Some(m);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one restart ran"))
}
