use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianComponent;
use crate::mixture::ReduceParams;

/// Linear-Gaussian target dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    pub transition: DMatrix<f64>,
    pub process_noise: DMatrix<f64>,
    pub survival_prob: f64,
}

impl MotionModel {
    pub fn new(transition: DMatrix<f64>, process_noise: DMatrix<f64>, survival_prob: f64) -> Result<Self> {
        let n = transition.nrows();
        if transition.ncols() != n || process_noise.shape() != (n, n) {
            return Err(Error::Config("motion model matrices must be square and agree".into()));
        }
        check_prob("survival probability", survival_prob)?;
        Ok(Self {
            transition,
            process_noise,
            survival_prob,
        })
    }

    /// Planar constant velocity on `[x, vx, y, vy]`:
    /// `F = I2 ⊗ [[1, dt], [0, 1]]`, `Q = q_scale * I2 ⊗ [[dt²/2, dt/2], [dt/2, dt]]`.
    pub fn constant_velocity(dt: f64, q_scale: f64, survival_prob: f64) -> Result<Self> {
        let block_f = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
        let block_q = DMatrix::from_row_slice(2, 2, &[dt * dt / 2.0, dt / 2.0, dt / 2.0, dt]);
        let eye = DMatrix::<f64>::identity(2, 2);
        Self::new(eye.kronecker(&block_f), eye.kronecker(&block_q) * q_scale, survival_prob)
    }

    pub fn dim(&self) -> usize {
        self.transition.nrows()
    }

    pub fn predict(&self, g: &GaussianComponent) -> GaussianComponent {
        let f = &self.transition;
        GaussianComponent {
            weight: g.weight,
            mean: f * &g.mean,
            cov: crate::gaussian::symmetrize(&(f * &g.cov * f.transpose() + &self.process_noise)),
        }
    }
}

/// Linear-Gaussian sensor with Poisson clutter uniform over the region of
/// interest.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub observation: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub detect_prob: f64,
    /// Expected clutter returns per scan.
    pub clutter_rate: f64,
    pub roi_volume: f64,
}

impl MeasurementModel {
    pub fn new(
        observation: DMatrix<f64>,
        noise: DMatrix<f64>,
        detect_prob: f64,
        clutter_rate: f64,
        roi_volume: f64,
    ) -> Result<Self> {
        let nz = observation.nrows();
        if noise.shape() != (nz, nz) {
            return Err(Error::Config("measurement noise must be n_z x n_z".into()));
        }
        check_prob("detection probability", detect_prob)?;
        if !(clutter_rate >= 0.0) || !(roi_volume > 0.0) {
            return Err(Error::Config("clutter rate must be >= 0 and ROI volume > 0".into()));
        }
        Ok(Self {
            observation,
            noise,
            detect_prob,
            clutter_rate,
            roi_volume,
        })
    }

    /// Position-only sensor for the `[x, vx, y, vy]` state.
    pub fn planar_position(noise_std: f64, detect_prob: f64, clutter_rate: f64, roi_volume: f64) -> Result<Self> {
        let h = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let r = DMatrix::identity(2, 2) * (noise_std * noise_std);
        Self::new(h, r, detect_prob, clutter_rate, roi_volume)
    }

    pub fn meas_dim(&self) -> usize {
        self.observation.nrows()
    }

    /// Clutter intensity per unit measurement volume.
    pub fn clutter_density(&self) -> f64 {
        self.clutter_rate / self.roi_volume
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.observation * x
    }
}

/// One birth component: existence (or PHD weight) and Gaussian location.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthComponent {
    pub existence: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BirthModel {
    pub components: Vec<BirthComponent>,
}

impl BirthModel {
    pub fn new(components: Vec<BirthComponent>) -> Result<Self> {
        for c in &components {
            if !(c.existence > 0.0 && c.existence <= 1.0) {
                return Err(Error::Config(format!("birth existence {} outside (0, 1]", c.existence)));
            }
        }
        Ok(Self { components })
    }

    pub fn gaussians(&self) -> Result<Vec<GaussianComponent>> {
        self.components
            .iter()
            .map(|c| GaussianComponent::new(c.existence, c.mean.clone(), c.cov.clone()))
            .collect()
    }
}

/// Which local filter a sensor runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Phd,
    Mb,
    Lmb,
}

impl FilterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::Phd => "phd",
            FilterKind::Mb => "mb",
            FilterKind::Lmb => "lmb",
        }
    }
}

impl std::fmt::Display for FilterKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phd" => Ok(FilterKind::Phd),
            "mb" => Ok(FilterKind::Mb),
            "lmb" => Ok(FilterKind::Lmb),
            other => Err(Error::Config(format!("unknown filter type `{other}`"))),
        }
    }
}

/// Tuning shared by the local filters.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterParams {
    /// Reduction of the PHD intensity.
    pub phd_reduce: ReduceParams,
    /// Reduction of each Bernoulli density (weights are normalized).
    pub bernoulli_reduce: ReduceParams,
    /// Bernoulli components with lower existence are removed.
    pub existence_prune: f64,
    pub max_bernoullis: usize,
    /// Squared Mahalanobis validation gate.
    pub gate: f64,
    /// Hypotheses per association group in the LMB update.
    pub lmb_hypotheses: usize,
    pub extraction_threshold: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            phd_reduce: ReduceParams::new(1e-5, 4.0, 200),
            bernoulli_reduce: ReduceParams::new(1e-5, 4.0, 20),
            existence_prune: 1e-3,
            max_bernoullis: 50,
            gate: 25.0,
            lmb_hypotheses: 20,
            extraction_threshold: 0.5,
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} {p} outside [0, 1]")))
    }
}
