use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::{symmetrize, FactoredGaussian, GaussianComponent, COV_JITTER};

use super::models::MeasurementModel;

/// Measurement-independent parts of a Kalman update for one component.
pub(crate) struct KalmanTerms {
    innovation: FactoredGaussian,
    gain: DMatrix<f64>,
    post_cov: DMatrix<f64>,
}

impl KalmanTerms {
    pub(crate) fn new(g: &GaussianComponent, meas: &MeasurementModel) -> Result<Self> {
        let h = &meas.observation;
        let pht = &g.cov * h.transpose();
        let s = symmetrize(&(h * &pht + &meas.noise));
        let chol = s
            .clone()
            .cholesky()
            .or_else(|| (&s + DMatrix::identity(s.nrows(), s.ncols()) * COV_JITTER).cholesky())
            .ok_or(Error::SingularCovariance)?;
        // K = P H^T S^{-1}
        let gain = chol.solve(&pht.transpose()).transpose();
        let n = g.dim();
        let i_kh = DMatrix::identity(n, n) - &gain * h;
        let post_cov = symmetrize(&(&i_kh * &g.cov * i_kh.transpose() + &gain * &meas.noise * gain.transpose()));
        let innovation = FactoredGaussian::new(&GaussianComponent {
            weight: 1.0,
            mean: h * &g.mean,
            cov: s,
        })?;
        Ok(Self {
            innovation,
            gain,
            post_cov,
        })
    }

    /// `N(z; H mu, S)`.
    pub(crate) fn likelihood(&self, z: &DVector<f64>) -> f64 {
        self.innovation.density(z.as_slice())
    }

    pub(crate) fn mahalanobis_sq(&self, z: &DVector<f64>) -> f64 {
        let d: Vec<f64> = z
            .iter()
            .zip(self.innovation.mean())
            .map(|(a, b)| a - b)
            .collect();
        self.innovation.factor().mahalanobis_sq(&d)
    }

    pub(crate) fn update(&self, prior: &GaussianComponent, z: &DVector<f64>, weight: f64) -> GaussianComponent {
        let innov = z - DVector::from_column_slice(self.innovation.mean());
        GaussianComponent {
            weight,
            mean: &prior.mean + &self.gain * innov,
            cov: self.post_cov.clone(),
        }
    }
}
