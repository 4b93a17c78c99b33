use crate::error::{Error, Result};
use crate::mixture::GaussianMixture;

pub const FUSION_WEIGHT_TOLERANCE: f64 = 1e-9;

/// The weighted-average PHD that local mixtures are fitted to.
#[derive(Debug, Clone, PartialEq)]
pub struct PhdAA {
    pub mixture: GaussianMixture,
    /// Fused cardinality estimate, equal to the mixture mass.
    pub n_hat: f64,
}

impl PhdAA {
    pub fn len(&self) -> usize {
        self.mixture.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mixture.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.mixture.dim()
    }
}

/// Concatenates the inputs with each component weight multiplied by its
/// fusion weight. Fusion weights must sum to one.
pub fn weighted_phd_aa(inputs: &[(f64, &GaussianMixture)]) -> Result<PhdAA> {
    let sum: f64 = inputs.iter().map(|(w, _)| w).sum();
    if (sum - 1.0).abs() > FUSION_WEIGHT_TOLERANCE || inputs.iter().any(|(w, _)| !(*w >= 0.0)) {
        return Err(Error::FusionWeights(sum));
    }
    let dim = inputs[0].1.dim();
    let mut mixture = GaussianMixture::new(dim);
    let mut n_hat = 0.0;
    for &(w, gm) in inputs {
        for g in gm.iter() {
            mixture.push(g.with_weight(w * g.weight))?;
        }
        n_hat += w * gm.total_mass();
    }
    Ok(PhdAA { mixture, n_hat })
}

/// Rescales `gm` so its mass becomes `target_mass`. The flag is set (and the
/// mixture returned unchanged) when `state_mass` is not positive or the
/// mixture is empty.
pub fn cc_scale(state_mass: f64, target_mass: f64, gm: &GaussianMixture) -> (GaussianMixture, bool) {
    if !(state_mass > 0.0) || gm.is_empty() {
        return (gm.clone(), true);
    }
    if state_mass == target_mass {
        return (gm.clone(), false);
    }
    (gm.scaled(target_mass / state_mass), false)
}
