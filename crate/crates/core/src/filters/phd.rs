//! Gaussian-mixture PHD filter.

use nalgebra::DVector;

use crate::error::Result;
use crate::mixture::{GaussianMixture, ReduceParams};

use super::kalman::KalmanTerms;
use super::models::{BirthModel, MeasurementModel, MotionModel};

/// Poisson intensity represented as a Gaussian mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct PhdFilterState {
    pub intensity: GaussianMixture,
}

impl PhdFilterState {
    pub fn new(dim: usize) -> Self {
        Self {
            intensity: GaussianMixture::new(dim),
        }
    }

    pub fn predict(&self, motion: &MotionModel, birth: &BirthModel) -> Result<Self> {
        let ps = motion.survival_prob;
        let mut out = GaussianMixture::new(self.intensity.dim());
        for g in self.intensity.iter() {
            let mut p = motion.predict(g);
            p.weight *= ps;
            out.push(p)?;
        }
        for b in birth.gaussians()? {
            out.push(b)?;
        }
        Ok(Self { intensity: out })
    }

    pub fn update(&self, meas: &MeasurementModel, measurements: &[DVector<f64>]) -> Result<Self> {
        let pd = meas.detect_prob;
        let dim = self.intensity.dim();
        let mut out = GaussianMixture::new(dim);
        for g in self.intensity.iter() {
            out.push(g.with_weight(g.weight * (1.0 - pd)))?;
        }
        if pd == 0.0 || measurements.is_empty() {
            return Ok(Self { intensity: out });
        }
        let terms = self
            .intensity
            .iter()
            .map(|g| KalmanTerms::new(g, meas))
            .collect::<Result<Vec<_>>>()?;
        let kappa = meas.clutter_density();
        for z in measurements {
            let detect: Vec<f64> = self
                .intensity
                .iter()
                .zip(&terms)
                .map(|(g, t)| pd * g.weight * t.likelihood(z))
                .collect();
            let norm = kappa + detect.iter().sum::<f64>();
            for ((g, t), d) in self.intensity.iter().zip(&terms).zip(&detect) {
                let w = if norm > 0.0 { d / norm } else { 0.0 };
                out.push(t.update(g, z, w))?;
            }
        }
        Ok(Self { intensity: out })
    }

    pub fn reduce(&self, params: &ReduceParams) -> Result<Self> {
        Ok(Self {
            intensity: self.intensity.reduce(params)?,
        })
    }

    pub fn cardinality(&self) -> f64 {
        self.intensity.total_mass()
    }

    /// Means of components above `threshold`, each repeated by its rounded
    /// weight.
    pub fn extract(&self, threshold: f64) -> Vec<DVector<f64>> {
        let mut out = Vec::new();
        for g in self.intensity.iter().filter(|g| g.weight > threshold) {
            let copies = g.weight.round().max(1.0) as usize;
            out.extend(std::iter::repeat(g.mean.clone()).take(copies));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::models::BirthComponent;
    use crate::gaussian::GaussianComponent;
    use nalgebra::DMatrix;

    fn four_births() -> BirthModel {
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 100.0, 100.0, 100.0]));
        let means = [
            [0.0, 0.0, 0.0, 0.0],
            [400.0, 0.0, -600.0, 0.0],
            [-800.0, 0.0, -200.0, 0.0],
            [-200.0, 0.0, 800.0, 0.0],
        ];
        BirthModel::new(
            means
                .iter()
                .map(|m| BirthComponent {
                    existence: 0.03,
                    mean: DVector::from_row_slice(m),
                    cov: cov.clone(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn scalar_models(ps: f64, q: f64, pd: f64, clutter: f64) -> (MotionModel, MeasurementModel) {
        let motion = MotionModel::new(DMatrix::identity(1, 1), DMatrix::from_element(1, 1, q), ps).unwrap();
        let meas = MeasurementModel::new(
            DMatrix::identity(1, 1),
            DMatrix::from_element(1, 1, 2.0),
            pd,
            clutter,
            100.0,
        )
        .unwrap();
        (motion, meas)
    }

    #[test]
    fn predict_from_empty_is_birth() {
        let motion = MotionModel::constant_velocity(1.0, 25.0, 0.95).unwrap();
        let s = PhdFilterState::new(4).predict(&motion, &four_births()).unwrap();
        assert_eq!(s.intensity.len(), 4);
        assert!((s.cardinality() - 0.12).abs() < 1e-15);
    }

    #[test]
    fn predict_identity_keeps_components() {
        let motion = MotionModel::new(DMatrix::identity(1, 1), DMatrix::zeros(1, 1), 1.0).unwrap();
        let g = GaussianComponent::scalar(0.7, 3.0, 2.0).unwrap();
        let s = PhdFilterState {
            intensity: GaussianMixture::from_components(1, vec![g.clone()]).unwrap(),
        };
        let p = s.predict(&motion, &BirthModel::new(vec![]).unwrap()).unwrap();
        assert_eq!(p.intensity.components(), &[g]);
    }

    #[test]
    fn predict_scales_by_survival() {
        let (motion, _) = scalar_models(0.95, 1.0, 0.9, 0.0);
        let s = PhdFilterState {
            intensity: GaussianMixture::from_components(1, vec![GaussianComponent::scalar(1.0, 0.0, 1.0).unwrap()])
                .unwrap(),
        };
        let p = s.predict(&motion, &BirthModel::new(vec![]).unwrap()).unwrap();
        assert!((p.cardinality() - 0.95).abs() < 1e-15);
    }

    #[test]
    fn empty_scan_scales_by_missed_detection() {
        let (_, meas) = scalar_models(1.0, 0.0, 0.9, 1.0);
        let s = PhdFilterState {
            intensity: GaussianMixture::from_components(
                1,
                vec![
                    GaussianComponent::scalar(0.8, 0.0, 1.0).unwrap(),
                    GaussianComponent::scalar(0.4, 5.0, 1.0).unwrap(),
                ],
            )
            .unwrap(),
        };
        let u = s.update(&meas, &[]).unwrap();
        let w = u.intensity.weights();
        assert!((w[0] - 0.08).abs() < 1e-15 && (w[1] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn zero_detection_probability_is_identity() {
        let (_, meas) = scalar_models(1.0, 0.0, 0.0, 1.0);
        let s = PhdFilterState {
            intensity: GaussianMixture::from_components(1, vec![GaussianComponent::scalar(0.8, 0.0, 1.0).unwrap()])
                .unwrap(),
        };
        let u = s.update(&meas, &[DVector::from_element(1, 0.5)]).unwrap();
        assert_eq!(u, s);
    }

    #[test]
    fn single_detection_matches_scalar_kalman() {
        // prior N(1, 3), R = 2, z = 1 (at the predicted mean), no clutter
        let (_, meas) = scalar_models(1.0, 0.0, 0.9, 0.0);
        let s = PhdFilterState {
            intensity: GaussianMixture::from_components(1, vec![GaussianComponent::scalar(1.0, 1.0, 3.0).unwrap()])
                .unwrap(),
        };
        let u = s.update(&meas, &[DVector::from_element(1, 1.0)]).unwrap();
        let comps = u.intensity.components();
        assert_eq!(comps.len(), 2);
        assert!((comps[0].weight - 0.1).abs() < 1e-15);
        assert!((comps[1].weight - 1.0).abs() < 1e-15);
        let k = 3.0 / 5.0;
        assert!((comps[1].mean[0] - 1.0).abs() < 1e-15);
        assert!((comps[1].cov[(0, 0)] - (1.0 - k) * 3.0).abs() < 1e-12);
        assert!((u.cardinality() - 1.1).abs() < 1e-12);
    }

    #[test]
    fn extraction_threshold() {
        let s = PhdFilterState {
            intensity: GaussianMixture::from_components(
                1,
                vec![
                    GaussianComponent::scalar(0.9, 1.0, 1.0).unwrap(),
                    GaussianComponent::scalar(0.3, 2.0, 1.0).unwrap(),
                ],
            )
            .unwrap(),
        };
        assert_eq!(s.extract(0.5).len(), 1);
        assert!(PhdFilterState::new(1).extract(0.5).is_empty());
        let heavy = PhdFilterState {
            intensity: GaussianMixture::from_components(1, vec![GaussianComponent::scalar(1.7, 1.0, 1.0).unwrap()])
                .unwrap(),
        };
        assert_eq!(heavy.extract(0.5).len(), 2);
    }
}
