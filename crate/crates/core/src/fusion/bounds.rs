//! Closed-form approximations of the KL divergence between the fused
//! mixture and a local mixture. These are evaluators only.

use crate::error::{Error, Result};
use crate::gaussian::{moment_match_merge, product_integral, FactoredGaussian};
use crate::mixture::GaussianMixture;

use super::aa::PhdAA;

fn check(aa: &PhdAA, local: &GaussianMixture) -> Result<()> {
    if aa.is_empty() || local.is_empty() {
        return Err(Error::Assignment("divergence bounds need nonempty mixtures".into()));
    }
    if aa.dim() != local.dim() {
        return Err(Error::DimensionMismatch {
            expected: aa.dim(),
            found: local.dim(),
        });
    }
    Ok(())
}

fn normalized_weights(gm: &GaussianMixture) -> Result<Vec<f64>> {
    let mass = gm.total_mass();
    if !(mass > 0.0) {
        return Err(Error::DegenerateCluster);
    }
    Ok(gm.iter().map(|g| g.weight / mass).collect())
}

/// KL between the single Gaussians that moment-match each mixture.
pub fn bound_d1(aa: &PhdAA, local: &GaussianMixture) -> Result<f64> {
    check(aa, local)?;
    let d = moment_match_merge(aa.mixture.iter().map(|g| (g.weight, g)))?;
    let g = moment_match_merge(local.iter().map(|g| (g.weight, g)))?;
    Ok(FactoredGaussian::new(&d)?.kl_to(&FactoredGaussian::new(&g)?))
}

/// Smallest KL over all component pairs.
pub fn bound_d2(aa: &PhdAA, local: &GaussianMixture) -> Result<f64> {
    check(aa, local)?;
    let fa = aa.mixture.factored()?;
    let fl = local.factored()?;
    Ok(fa
        .iter()
        .flat_map(|a| fl.iter().map(move |b| a.kl_to(b)))
        .fold(f64::INFINITY, f64::min))
}

/// Convex upper bound `sum_ab pi_a w_b KL(N_a || N_b)` on the unnormalized
/// weights.
pub fn bound_d3(aa: &PhdAA, local: &GaussianMixture) -> Result<f64> {
    check(aa, local)?;
    let fa = aa.mixture.factored()?;
    let fl = local.factored()?;
    Ok(fa
        .iter()
        .map(|a| fl.iter().map(|b| a.weight * b.weight * a.kl_to(b)).sum::<f64>())
        .sum())
}

/// Product-integral variational bound on the normalized mixtures.
pub fn bound_d4(aa: &PhdAA, local: &GaussianMixture) -> Result<f64> {
    check(aa, local)?;
    let pi = normalized_weights(&aa.mixture)?;
    let om = normalized_weights(local)?;
    let ac = aa.mixture.components();
    let lc = local.components();
    let mut total = 0.0;
    for (a, ga) in ac.iter().enumerate() {
        let mut num = 0.0;
        for (p, gb) in pi.iter().zip(ac) {
            num += p * product_integral(ga, gb)?;
        }
        let mut den = 0.0;
        for (w, gb) in om.iter().zip(lc) {
            den += w * product_integral(ga, gb)?;
        }
        total += pi[a] * (num / den).ln();
    }
    Ok(total)
}

/// Variational approximation with `exp(-KL)` kernels on the normalized
/// mixtures.
pub fn bound_d5(aa: &PhdAA, local: &GaussianMixture) -> Result<f64> {
    check(aa, local)?;
    let pi = normalized_weights(&aa.mixture)?;
    let om = normalized_weights(local)?;
    let fa = aa.mixture.factored()?;
    let fl = local.factored()?;
    let mut total = 0.0;
    for (a, ga) in fa.iter().enumerate() {
        let num: f64 = pi.iter().zip(&fa).map(|(p, gb)| p * (-ga.kl_to(gb)).exp()).sum();
        let den: f64 = om.iter().zip(&fl).map(|(w, gb)| w * (-ga.kl_to(gb)).exp()).sum();
        total += pi[a] * (num / den).ln();
    }
    Ok(total)
}
