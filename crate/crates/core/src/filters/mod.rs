//! Local multi-target filters and their unlabeled GM-PHD view.

mod bernoulli;
mod kalman;
mod models;
mod phd;

pub use bernoulli::{BernoulliComponent, Label, LmbFilterState, MbFilterState, MAX_IMPORTED_EXISTENCE};
pub use models::{BirthComponent, BirthModel, FilterKind, FilterParams, MeasurementModel, MotionModel};
pub use phd::PhdFilterState;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::mixture::GaussianMixture;

/// Correspondence between an exported flat GM-PHD and the filter state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GcMapping {
    /// PHD intensity: component `j` of the export is component `j` of the state.
    Identity(usize),
    /// Entry `j` is `(bernoulli, component)` of the flattened mixture.
    Bernoulli(Vec<(usize, usize)>),
}

impl GcMapping {
    pub fn len(&self) -> usize {
        match self {
            GcMapping::Identity(n) => *n,
            GcMapping::Bernoulli(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhdExport {
    pub mixture: GaussianMixture,
    pub mapping: GcMapping,
}

/// What an import takes from the fitted mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImportMode {
    WeightsOnly,
    Full,
}

/// A state estimate, labeled for LMB tracks.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub state: DVector<f64>,
    pub label: Option<Label>,
}

/// Any of the local filters.
#[derive(Debug, Clone, PartialEq)]
pub enum FilterState {
    Phd(PhdFilterState),
    Mb(MbFilterState),
    Lmb(LmbFilterState),
}

impl FilterState {
    pub fn new(kind: FilterKind, dim: usize) -> Self {
        match kind {
            FilterKind::Phd => FilterState::Phd(PhdFilterState::new(dim)),
            FilterKind::Mb => FilterState::Mb(MbFilterState::new(dim)),
            FilterKind::Lmb => FilterState::Lmb(LmbFilterState::new(dim)),
        }
    }

    pub fn kind(&self) -> FilterKind {
        match self {
            FilterState::Phd(_) => FilterKind::Phd,
            FilterState::Mb(_) => FilterKind::Mb,
            FilterState::Lmb(_) => FilterKind::Lmb,
        }
    }

    pub fn predict(&self, motion: &MotionModel, birth: &BirthModel) -> Result<Self> {
        Ok(match self {
            FilterState::Phd(s) => FilterState::Phd(s.predict(motion, birth)?),
            FilterState::Mb(s) => FilterState::Mb(s.predict(motion, birth)?),
            FilterState::Lmb(s) => FilterState::Lmb(s.predict(motion, birth)?),
        })
    }

    /// Measurement update followed by the configured reduction.
    pub fn update(&self, meas: &MeasurementModel, z: &[DVector<f64>], params: &FilterParams) -> Result<Self> {
        Ok(match self {
            FilterState::Phd(s) => FilterState::Phd(s.update(meas, z)?.reduce(&params.phd_reduce)?),
            FilterState::Mb(s) => FilterState::Mb(s.update(meas, z, params)?),
            FilterState::Lmb(s) => FilterState::Lmb(s.update(meas, z, params)?),
        })
    }

    pub fn cardinality(&self) -> f64 {
        match self {
            FilterState::Phd(s) => s.cardinality(),
            FilterState::Mb(s) => s.cardinality(),
            FilterState::Lmb(s) => s.cardinality(),
        }
    }

    pub fn extract(&self, threshold: f64) -> Vec<Estimate> {
        match self {
            FilterState::Phd(s) => s.extract(threshold).into_iter().map(|state| Estimate { state, label: None }).collect(),
            FilterState::Mb(s) => s.extract(threshold).into_iter().map(|state| Estimate { state, label: None }).collect(),
            FilterState::Lmb(s) => s
                .extract(threshold)
                .into_iter()
                .map(|(state, label)| Estimate {
                    state,
                    label: Some(label),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            FilterState::Phd(s) => s.intensity.is_finite(),
            FilterState::Mb(s) => s.bernoullis.iter().all(|b| b.existence.is_finite() && b.density.is_finite()),
            FilterState::Lmb(s) => s.bernoullis.iter().all(|b| b.existence.is_finite() && b.density.is_finite()),
        }
    }

    pub fn export_phd(&self) -> Result<PhdExport> {
        match self {
            FilterState::Phd(s) => Ok(PhdExport {
                mapping: GcMapping::Identity(s.intensity.len()),
                mixture: s.intensity.clone(),
            }),
            FilterState::Mb(s) => {
                let (mixture, map) = s.export_phd()?;
                Ok(PhdExport {
                    mixture,
                    mapping: GcMapping::Bernoulli(map),
                })
            }
            FilterState::Lmb(s) => {
                let (mixture, map) = s.export_phd()?;
                Ok(PhdExport {
                    mixture,
                    mapping: GcMapping::Bernoulli(map),
                })
            }
        }
    }

    pub fn import_phd(&self, fitted: &GaussianMixture, mapping: &GcMapping, mode: ImportMode) -> Result<Self> {
        let full = mode == ImportMode::Full;
        match (self, mapping) {
            (FilterState::Phd(s), GcMapping::Identity(n)) => {
                if *n != s.intensity.len() || fitted.len() != *n {
                    return Err(Error::Mapping(format!(
                        "fitted mixture has {} components, state {}",
                        fitted.len(),
                        s.intensity.len()
                    )));
                }
                let intensity = if full {
                    fitted.clone()
                } else {
                    s.intensity.with_weights(&fitted.weights())?
                };
                Ok(FilterState::Phd(PhdFilterState { intensity }))
            }
            (FilterState::Mb(s), GcMapping::Bernoulli(map)) => Ok(FilterState::Mb(s.import_phd(fitted, map, full)?)),
            (FilterState::Lmb(s), GcMapping::Bernoulli(map)) => Ok(FilterState::Lmb(s.import_phd(fitted, map, full)?)),
            _ => Err(Error::Mapping("mapping kind does not match filter type".into())),
        }
    }

    /// Cleans up after a fusion import: PHD intensities are reduced; Bernoulli
    /// components tracking the same object are merged and those below the
    /// existence threshold dropped.
    pub fn prune(&self, params: &FilterParams) -> Result<Self> {
        Ok(match self {
            FilterState::Phd(s) => FilterState::Phd(s.reduce(&params.phd_reduce)?),
            FilterState::Mb(s) => FilterState::Mb(s.prune(params)?),
            FilterState::Lmb(s) => FilterState::Lmb(s.prune(params)?),
        })
    }

    /// Replaces an empty state by the given PHD (fusion cold start).
    pub fn adopt_phd(&self, phd: &GaussianMixture, params: &FilterParams) -> Result<Self> {
        match self {
            FilterState::Phd(_) => Ok(FilterState::Phd(PhdFilterState {
                intensity: phd.reduce(&params.phd_reduce)?,
            })),
            FilterState::Mb(s) => Ok(FilterState::Mb(MbFilterState {
                dim: s.dim,
                bernoullis: bernoullis_from_phd(phd, None),
            }
            .prune(params)?)),
            FilterState::Lmb(s) => Ok(FilterState::Lmb(LmbFilterState {
                dim: s.dim,
                step: s.step,
                bernoullis: bernoullis_from_phd(phd, Some(s.step)),
            }
            .prune(params)?)),
        }
    }
}

// One Bernoulli per component; labels use a birth index past any real birth.
fn bernoullis_from_phd(phd: &GaussianMixture, step: Option<usize>) -> Vec<BernoulliComponent> {
    phd.iter()
        .enumerate()
        .filter(|(_, g)| g.weight > 0.0)
        .map(|(i, g)| BernoulliComponent {
            existence: g.weight.min(MAX_IMPORTED_EXISTENCE),
            density: GaussianMixture::from_components(g.dim(), vec![g.with_weight(1.0)])
                .expect("component matches its own dimension"),
            label: step.map(|birth_step| Label {
                birth_step,
                index: usize::MAX / 2 + i,
            }),
        })
        .collect()
}
