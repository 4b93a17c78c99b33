//! Weighted Gaussian components and the closed-form operations on them.
//!
//! Covariances are symmetrized on ingest. Every factorization goes through
//! [`CovFactor`], which retries once with a `1e-9 * I` jitter before giving
//! up with [`Error::SingularCovariance`].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Diagonal jitter added when the first Cholesky attempt fails.
pub const COV_JITTER: f64 = 1e-9;

const STACK_DIM: usize = 8;

/// A weighted Gaussian `weight * N(x; mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianComponent {
    /// Builds a component, symmetrizing `cov`.
    pub fn new(weight: f64, mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: cov.nrows().max(cov.ncols()),
            });
        }
        if !(weight >= 0.0) {
            return Err(Error::Constraint(format!("negative component weight {weight}")));
        }
        Ok(Self {
            weight,
            mean,
            cov: symmetrize(&cov),
        })
    }

    /// Convenience constructor from slices; `cov` is row-major `n * n`.
    pub fn from_slices(weight: f64, mean: &[f64], cov: &[f64]) -> Result<Self> {
        let n = mean.len();
        if cov.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: cov.len(),
            });
        }
        Self::new(
            weight,
            DVector::from_column_slice(mean),
            DMatrix::from_row_slice(n, n, cov),
        )
    }

    /// 1-D component with variance `var`.
    pub fn scalar(weight: f64, mean: f64, var: f64) -> Result<Self> {
        Self::from_slices(weight, &[mean], &[var])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn with_weight(&self, weight: f64) -> Self {
        Self {
            weight,
            mean: self.mean.clone(),
            cov: self.cov.clone(),
        }
    }

    /// Unweighted density `N(x; mean, cov)`.
    pub fn density(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(FactoredGaussian::new(self)?.density(x.as_slice()))
    }

    pub fn is_finite(&self) -> bool {
        self.weight.is_finite()
            && self.mean.iter().all(|v| v.is_finite())
            && self.cov.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Lower Cholesky factor of a covariance, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CovFactor {
    n: usize,
    l: Vec<f64>,
    log_det: f64,
}

impl CovFactor {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let n = cov.nrows();
        if cov.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: cov.ncols(),
            });
        }
        let sym = symmetrize(cov);
        let mut l = vec![0.0; n * n];
        if cholesky(&sym, 0.0, &mut l) || cholesky(&sym, COV_JITTER, &mut l) {
            let log_det = 2.0 * (0..n).map(|i| l[i * n + i].ln()).sum::<f64>();
            Ok(Self { n, l, log_det })
        } else {
            Err(Error::SingularCovariance)
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `log det(cov)`.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Solves `L y = v` in place.
    fn forward_solve(&self, v: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.l[i * n..i * n + i];
            let s: f64 = row.iter().zip(&v[..i]).map(|(a, b)| a * b).sum();
            v[i] = (v[i] - s) / self.l[i * n + i];
        }
    }

    /// `d^T cov^{-1} d`.
    pub fn mahalanobis_sq(&self, d: &[f64]) -> f64 {
        with_scratch(self.n, |y| {
            y.copy_from_slice(d);
            self.forward_solve(y);
            y.iter().map(|v| v * v).sum()
        })
    }

    /// `tr(self^{-1} other)` as `|| L_self^{-1} L_other ||_F^2`.
    pub fn trace_solve(&self, other: &CovFactor) -> f64 {
        let n = self.n;
        with_scratch(n, |x| {
            let mut total = 0.0;
            for j in 0..n {
                // column j of L_other is zero above row j, so is the solution.
                for i in 0..n {
                    x[i] = if i >= j { other.l[i * n + j] } else { 0.0 };
                }
                for i in j..n {
                    let s: f64 = (j..i).map(|k| self.l[i * n + k] * x[k]).sum();
                    x[i] = (x[i] - s) / self.l[i * n + i];
                }
                total += x[j..].iter().map(|v| v * v).sum::<f64>();
            }
            total
        })
    }

    pub fn lower(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.l)
    }
}

fn cholesky(a: &DMatrix<f64>, jitter: f64, l: &mut [f64]) -> bool {
    let n = a.nrows();
    l.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)] + if i == j { jitter } else { 0.0 };
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > 0.0) || !s.is_finite() {
                    return false;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    true
}

fn with_scratch<R>(n: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    if n <= STACK_DIM {
        let mut buf = [0.0; STACK_DIM];
        f(&mut buf[..n])
    } else {
        let mut buf = vec![0.0; n];
        f(&mut buf)
    }
}

/// A Gaussian with its covariance factorized once, for repeated KL and
/// density evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredGaussian {
    pub weight: f64,
    mean: Vec<f64>,
    factor: CovFactor,
}

impl FactoredGaussian {
    pub fn new(g: &GaussianComponent) -> Result<Self> {
        Ok(Self {
            weight: g.weight,
            mean: g.mean.as_slice().to_vec(),
            factor: CovFactor::new(&g.cov)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn factor(&self) -> &CovFactor {
        &self.factor
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let n = self.mean.len();
        let maha = with_scratch(n, |d| {
            for i in 0..n {
                d[i] = x[i] - self.mean[i];
            }
            self.factor.mahalanobis_sq(d)
        });
        -0.5 * (maha + self.factor.log_det + n as f64 * (2.0 * PI).ln())
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.log_density(x).exp()
    }

    /// `KL(self || other)`, clamped at zero.
    pub fn kl_to(&self, other: &FactoredGaussian) -> f64 {
        if self.mean == other.mean && self.factor == other.factor {
            return 0.0;
        }
        let n = self.mean.len();
        let maha = with_scratch(n, |d| {
            for i in 0..n {
                d[i] = self.mean[i] - other.mean[i];
            }
            other.factor.mahalanobis_sq(d)
        });
        let trace = other.factor.trace_solve(&self.factor);
        let kl = 0.5 * (maha + trace + other.factor.log_det - self.factor.log_det - n as f64);
        kl.max(0.0)
    }
}

/// `∫ N(x; a) N(x; b) dx = N(mu_a; mu_b, cov_a + cov_b)`.
pub fn product_integral(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    let sum = GaussianComponent::new(1.0, b.mean.clone(), &a.cov + &b.cov)?;
    sum.density(&a.mean)
}

fn check_dims(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        Err(Error::DimensionMismatch { expected, found })
    } else {
        Ok(())
    }
}

/// Closed-form `KL(N_a || N_b)` between the normalized densities of `a` and
/// `b` (weights are ignored).
pub fn kl_gaussian(a: &GaussianComponent, b: &GaussianComponent) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(FactoredGaussian::new(a)?.kl_to(&FactoredGaussian::new(b)?))
}

/// Moment-matched merge of `(mass, component)` pairs. The component weights
/// are ignored in favour of the supplied masses.
pub fn moment_match_merge<'a, I>(parts: I) -> Result<GaussianComponent>
where
    I: IntoIterator<Item = (f64, &'a GaussianComponent)>,
    I::IntoIter: Clone,
{
    let parts = parts.into_iter();
    let mut first = parts.clone();
    let (_, g0) = first.next().ok_or(Error::DegenerateCluster)?;
    let n = g0.dim();
    let mut total = 0.0;
    let mut mean = DVector::zeros(n);
    for (m, g) in parts.clone() {
        check_dims(n, g.dim())?;
        total += m;
        mean.axpy(m, &g.mean, 1.0);
    }
    if !(total > 0.0) {
        return Err(Error::DegenerateCluster);
    }
    mean /= total;
    let mut cov = DMatrix::zeros(n, n);
    for (m, g) in parts {
        let d = &g.mean - &mean;
        cov += (&g.cov + &d * d.transpose()) * (m / total);
    }
    GaussianComponent::new(total, mean, cov)
}
