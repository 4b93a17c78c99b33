//! Gaussian mixtures and standard mixture reduction.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gaussian::{moment_match_merge, CovFactor, FactoredGaussian, GaussianComponent};

/// An ordered weighted sum of Gaussians sharing one state dimension.
///
/// Component order is significant: fusion maps fitted weights back onto
/// filter components by index.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    dim: usize,
    components: Vec<GaussianComponent>,
}

/// Thresholds for [`GaussianMixture::reduce`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReduceParams {
    /// Components with weight strictly below this are dropped.
    pub prune_threshold: f64,
    /// Squared Mahalanobis distance below which components are merged.
    pub merge_threshold: f64,
    /// Maximum number of components kept.
    pub cap: usize,
}

impl ReduceParams {
    pub const fn new(prune_threshold: f64, merge_threshold: f64, cap: usize) -> Self {
        Self {
            prune_threshold,
            merge_threshold,
            cap,
        }
    }
}

impl GaussianMixture {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            components: Vec::new(),
        }
    }

    pub fn from_components(dim: usize, components: Vec<GaussianComponent>) -> Result<Self> {
        if let Some(bad) = components.iter().find(|c| c.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.dim(),
            });
        }
        Ok(Self { dim, components })
    }

    pub fn push(&mut self, c: GaussianComponent) -> Result<()> {
        if c.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: c.dim(),
            });
        }
        self.components.push(c);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn iter(&self) -> std::slice::Iter<'_, GaussianComponent> {
        self.components.iter()
    }

    pub fn into_components(self) -> Vec<GaussianComponent> {
        self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// Replaces component weights in order. Lengths must match.
    pub fn with_weights(&self, weights: &[f64]) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::Mapping(format!(
                "{} weights for {} components",
                weights.len(),
                self.len()
            )));
        }
        Ok(Self {
            dim: self.dim,
            components: self
                .components
                .iter()
                .zip(weights)
                .map(|(c, &w)| c.with_weight(w))
                .collect(),
        })
    }

    /// Sum of weights; for a PHD this is the expected number of targets.
    pub fn total_mass(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    /// `sum_j w_j N(x; mu_j, P_j)`.
    pub fn eval(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: x.len(),
            });
        }
        let mut total = 0.0;
        for c in &self.components {
            total += c.weight * c.density(x)?;
        }
        Ok(total)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            components: self
                .components
                .iter()
                .map(|c| c.with_weight(c.weight * factor))
                .collect(),
        }
    }

    /// Factorizes every component for repeated evaluation.
    pub fn factored(&self) -> Result<Vec<FactoredGaussian>> {
        self.components.iter().map(FactoredGaussian::new).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(GaussianComponent::is_finite)
    }

    /// Prune, greedily merge around the heaviest remaining component, sort by
    /// descending weight and enforce the component cap.
    ///
    /// Components beyond the cap are merged into their KL-nearest kept
    /// component, so capping never removes mass.
    pub fn reduce(&self, params: &ReduceParams) -> Result<Self> {
        let mut pool: Vec<usize> = (0..self.len())
            .filter(|&i| self.components[i].weight >= params.prune_threshold)
            .collect();
        let factors: Vec<Option<CovFactor>> = self
            .components
            .iter()
            .map(|c| {
                if c.weight >= params.prune_threshold {
                    CovFactor::new(&c.cov).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;

        let mut merged = Vec::new();
        while !pool.is_empty() {
            let (_, &lead) = pool
                .iter()
                .enumerate()
                .max_by(|(ia, a), (ib, b)| {
                    self.components[**a]
                        .weight
                        .total_cmp(&self.components[**b].weight)
                        .then(ib.cmp(ia))
                })
                .expect("pool is non-empty");
            let lead_mean = &self.components[lead].mean;
            let (cluster, rest): (Vec<usize>, Vec<usize>) = pool.iter().partition(|&&i| {
                if i == lead {
                    return true;
                }
                let d = &self.components[i].mean - lead_mean;
                let f = factors[i].as_ref().expect("pooled components are factored");
                f.mahalanobis_sq(d.as_slice()) < params.merge_threshold
            });
            merged.push(self.merge_indices(&cluster, lead)?);
            pool = rest;
        }
        merged.sort_by(|a, b| b.weight.total_cmp(&a.weight));

        if merged.len() > params.cap {
            merged = cap_by_merging(merged, params.cap)?;
        }
        Ok(Self {
            dim: self.dim,
            components: merged,
        })
    }

    fn merge_indices(&self, cluster: &[usize], lead: usize) -> Result<GaussianComponent> {
        if cluster.len() == 1 {
            return Ok(self.components[cluster[0]].clone());
        }
        let mass: f64 = cluster.iter().map(|&i| self.components[i].weight).sum();
        if !(mass > 0.0) {
            return Ok(self.components[lead].clone());
        }
        moment_match_merge(
            cluster
                .iter()
                .map(|&i| (self.components[i].weight, &self.components[i])),
        )
    }
}

fn cap_by_merging(sorted: Vec<GaussianComponent>, cap: usize) -> Result<Vec<GaussianComponent>> {
    if cap == 0 {
        return Ok(Vec::new());
    }
    let kept = sorted[..cap]
        .iter()
        .map(FactoredGaussian::new)
        .collect::<Result<Vec<_>>>()?;
    let mut groups: Vec<Vec<usize>> = (0..cap).map(|i| vec![i]).collect();
    for (i, c) in sorted.iter().enumerate().skip(cap) {
        let f = FactoredGaussian::new(c)?;
        let nearest = kept
            .iter()
            .enumerate()
            .map(|(k, g)| (k, f.kl_to(g)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
            .expect("cap > 0");
        groups[nearest].push(i);
    }
    let mut out = groups
        .iter()
        .map(|g| {
            if g.len() == 1 {
                return Ok(sorted[g[0]].clone());
            }
            let mass: f64 = g.iter().map(|&i| sorted[i].weight).sum();
            if !(mass > 0.0) {
                return Ok(sorted[g[0]].clone());
            }
            moment_match_merge(g.iter().map(|&i| (sorted[i].weight, &sorted[i])))
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by(|a, b| b.weight.total_cmp(&a.weight));
    Ok(out)
}
