//! Variational fits of a local GM-PHD onto the fused PHD.
//!
//! Both fits minimize the variational upper bound `sum_ab h_ab KL(N_a || N_b)`
//! subject to the local mass matching the fused cardinality. The
//! weight fit does one hard assignment of fused components to local ones;
//! the full fit alternates assignment and per-cluster moment matching.

use crate::error::{Error, Result};
use crate::gaussian::{moment_match_merge, FactoredGaussian, GaussianComponent};
use crate::mixture::GaussianMixture;

use super::aa::PhdAA;

pub const DEFAULT_GAMMA_G: f64 = 0.1;
pub const DEFAULT_MAX_ITER: usize = 10;
/// Relative slack allowed when checking that the goodness never increases.
pub const MONOTONE_SLACK: f64 = 1e-12;

/// Hard assignment of fused components to local components.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Local component of each fused component; `None` when gated out.
    pub targets: Vec<Option<usize>>,
    /// Mass `h_ab` carried by each fused component to its target.
    pub mass: Vec<f64>,
}

impl Assignment {
    /// Mass collected by each of `n_local` components.
    pub fn local_weights(&self, n_local: usize) -> Vec<f64> {
        let mut w = vec![0.0; n_local];
        for (t, m) in self.targets.iter().zip(&self.mass) {
            if let Some(b) = t {
                w[*b] += m;
            }
        }
        w
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitReport {
    pub iterations: usize,
    /// Goodness `K_i` after each iteration.
    pub goodness: Vec<f64>,
    /// Relative reduction `gamma_i` for `i >= 2`.
    pub rates: Vec<f64>,
    pub converged: bool,
}

fn check_inputs(local: &GaussianMixture, aa: &PhdAA) -> Result<()> {
    if local.is_empty() {
        return Err(Error::Assignment("local mixture is empty".into()));
    }
    if !aa.is_empty() && aa.dim() != local.dim() {
        return Err(Error::DimensionMismatch {
            expected: local.dim(),
            found: aa.dim(),
        });
    }
    Ok(())
}

/// Nearest local component per fused component, with its KL.
fn nearest(aa: &[FactoredGaussian], local: &[FactoredGaussian]) -> Vec<(usize, f64)> {
    aa.iter()
        .map(|a| {
            let mut best = (0, f64::INFINITY);
            for (b, l) in local.iter().enumerate() {
                let kl = a.kl_to(l);
                // strict comparison keeps the smallest index on ties
                if kl < best.1 {
                    best = (b, kl);
                }
            }
            best
        })
        .collect()
}

fn build_assignment(aa: &[FactoredGaussian], near: &[(usize, f64)], gate: Option<f64>) -> Assignment {
    let pass = |kl: f64| gate.map_or(true, |g| kl <= g);
    let total: f64 = aa.iter().map(|a| a.weight).sum();
    let kept: f64 = aa.iter().zip(near).filter(|(_, n)| pass(n.1)).map(|(a, _)| a.weight).sum();
    // with every component gated out, fall back to the plain assignment
    let (gated, scale) = if gate.is_some() && kept > 0.0 {
        (true, total / kept)
    } else {
        (false, 1.0)
    };
    let mut targets = Vec::with_capacity(aa.len());
    let mut mass = Vec::with_capacity(aa.len());
    for (a, &(b, kl)) in aa.iter().zip(near) {
        if gated && !pass(kl) {
            targets.push(None);
            mass.push(0.0);
        } else {
            targets.push(Some(b));
            mass.push(a.weight * scale);
        }
    }
    Assignment { targets, mass }
}

/// Assigns every fused component to the local component of least KL
/// divergence, ties going to the lower index. With a gate, components whose
/// least divergence exceeds it are left unassigned and their mass is spread
/// proportionally over the rest.
pub fn assign_nearest(local: &GaussianMixture, aa: &PhdAA, gate: Option<f64>) -> Result<Assignment> {
    check_inputs(local, aa)?;
    let fa = aa.mixture.factored()?;
    let fl = local.factored()?;
    Ok(build_assignment(&fa, &nearest(&fa, &fl), gate))
}

fn goodness(assignment: &Assignment, aa: &[FactoredGaussian], local: &[FactoredGaussian]) -> f64 {
    assignment
        .targets
        .iter()
        .zip(&assignment.mass)
        .zip(aa)
        .filter_map(|((t, m), a)| t.map(|b| m * a.kl_to(&local[b])))
        .sum()
}

/// Variational upper bound `sum_ab h_ab KL(N_a || N_b)` of a feasible
/// assignment.
pub fn vub(aa: &PhdAA, local: &GaussianMixture, h: &Assignment) -> Result<f64> {
    if h.targets.len() != aa.len() || h.mass.len() != aa.len() {
        return Err(Error::Constraint(format!(
            "assignment covers {} of {} fused components",
            h.targets.len(),
            aa.len()
        )));
    }
    for (t, &m) in h.targets.iter().zip(&h.mass) {
        match t {
            Some(b) if *b >= local.len() => {
                return Err(Error::Constraint(format!("local component {b} does not exist")))
            }
            None if m != 0.0 => return Err(Error::Constraint("unassigned component carries mass".into())),
            _ if !(m >= 0.0) => return Err(Error::Constraint(format!("negative mass {m}"))),
            _ => {}
        }
    }
    let total = h.total_mass();
    if (total - aa.n_hat).abs() > 1e-9 * aa.n_hat.max(1.0) {
        return Err(Error::Constraint(format!("assignment mass {total} differs from {}", aa.n_hat)));
    }
    let fa = aa.mixture.factored()?;
    let fl = local.factored()?;
    Ok(goodness(h, &fa, &fl))
}

/// Refits only the local weights: each weight becomes the fused mass
/// assigned to it. Means and covariances are untouched.
pub fn gc_weight_fit(local: &GaussianMixture, aa: &PhdAA) -> Result<(Vec<f64>, FitReport)> {
    check_inputs(local, aa)?;
    let fa = aa.mixture.factored()?;
    let fl = local.factored()?;
    let h = build_assignment(&fa, &nearest(&fa, &fl), None);
    let k = goodness(&h, &fa, &fl);
    Ok((
        h.local_weights(local.len()),
        FitReport {
            iterations: 1,
            goodness: vec![k],
            rates: Vec::new(),
            converged: true,
        },
    ))
}

/// Refits all local parameters by alternating nearest assignment with
/// moment-matched merging of each cluster. Stops when the relative
/// reduction of the goodness drops to `gamma_g`, the goodness reaches zero,
/// or after `max_iter` iterations. Local components that receive no mass
/// keep their mean and covariance with zero weight.
pub fn gm_phd_fit(
    local: &GaussianMixture,
    aa: &PhdAA,
    gamma_g: f64,
    max_iter: usize,
) -> Result<(GaussianMixture, FitReport)> {
    check_inputs(local, aa)?;
    if !(gamma_g > 0.0) || max_iter == 0 {
        return Err(Error::Config("gamma_g must be positive and max_iter at least 1".into()));
    }
    let fa = aa.mixture.factored()?;
    let mut current: Vec<GaussianComponent> = local.components().to_vec();
    let mut report = FitReport::default();
    for i in 1..=max_iter {
        let fl = current.iter().map(FactoredGaussian::new).collect::<Result<Vec<_>>>()?;
        let near = nearest(&fa, &fl);
        let h = build_assignment(&fa, &near, None);

        let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); current.len()];
        for (a, t) in h.targets.iter().enumerate() {
            if let Some(b) = t {
                clusters[*b].push(a);
            }
        }
        let next = clusters
            .iter()
            .zip(&current)
            .map(|(members, prior)| merge_cluster(members, &h, aa, prior))
            .collect::<Result<Vec<_>>>()?;
        let fnext = next.iter().map(FactoredGaussian::new).collect::<Result<Vec<_>>>()?;
        let k = goodness(&h, &fa, &fnext);
        current = next;

        report.iterations = i;
        if let Some(&prev) = report.goodness.last() {
            if k > prev + MONOTONE_SLACK * prev.max(1.0) {
                return Err(Error::NonMonotone {
                    iteration: i,
                    previous: prev,
                    current: k,
                });
            }
            report.goodness.push(k);
            let rate = if prev > 0.0 { (k - prev).abs() / prev } else { 0.0 };
            report.rates.push(rate);
            if rate <= gamma_g || k == 0.0 {
                report.converged = true;
                break;
            }
        } else {
            report.goodness.push(k);
            if k == 0.0 {
                report.converged = true;
                break;
            }
        }
    }
    Ok((GaussianMixture::from_components(local.dim(), current)?, report))
}

fn merge_cluster(members: &[usize], h: &Assignment, aa: &PhdAA, prior: &GaussianComponent) -> Result<GaussianComponent> {
    let comps = aa.mixture.components();
    let mass: f64 = members.iter().map(|&a| h.mass[a]).sum();
    match members {
        [] => Ok(prior.with_weight(0.0)),
        _ if !(mass > 0.0) => Ok(prior.with_weight(0.0)),
        [a] => Ok(comps[*a].with_weight(h.mass[*a])),
        _ => moment_match_merge(members.iter().map(|&a| (h.mass[a], &comps[a]))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::weighted_phd_aa;
    use crate::gaussian::kl_gaussian;

    fn gm1(parts: &[(f64, f64, f64)]) -> GaussianMixture {
        GaussianMixture::from_components(
            1,
            parts
                .iter()
                .map(|&(w, m, v)| GaussianComponent::scalar(w, m, v).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn aa_of(gm: &GaussianMixture) -> PhdAA {
        weighted_phd_aa(&[(1.0, gm)]).unwrap()
    }

    #[test]
    fn identity_assignment() {
        let g = gm1(&[(0.5, 0.0, 1.0), (0.7, 5.0, 2.0), (0.2, -4.0, 1.0)]);
        let h = assign_nearest(&g, &aa_of(&g), None).unwrap();
        assert_eq!(h.targets, vec![Some(0), Some(1), Some(2)]);
        assert_eq!(vub(&aa_of(&g), &g, &h).unwrap(), 0.0);
    }

    #[test]
    fn one_dimensional_example() {
        let local = gm1(&[(1.0, 0.0, 1.0), (1.0, 10.0, 1.0)]);
        let aa = aa_of(&gm1(&[(0.6, 0.1, 1.0), (0.5, 9.8, 1.0), (0.3, 0.4, 1.0)]));
        let h = assign_nearest(&local, &aa, None).unwrap();
        assert_eq!(h.targets, vec![Some(0), Some(1), Some(0)]);
        let (w, _) = gc_weight_fit(&local, &aa).unwrap();
        assert!((w[0] - 0.9).abs() < 1e-15 && (w[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ties_go_to_lower_index() {
        let local = gm1(&[(1.0, -1.0, 1.0), (1.0, 1.0, 1.0)]);
        let aa = aa_of(&gm1(&[(1.0, 0.0, 1.0)]));
        assert_eq!(assign_nearest(&local, &aa, None).unwrap().targets, vec![Some(0)]);
    }

    #[test]
    fn single_cluster_takes_everything() {
        let local = gm1(&[(1.0, 0.0, 1.0), (1.0, 100.0, 1.0)]);
        let aa = aa_of(&gm1(&[(0.4, 0.5, 1.0), (0.9, -0.5, 1.0)]));
        let (w, _) = gc_weight_fit(&local, &aa).unwrap();
        assert!((w[0] - 1.3).abs() < 1e-15);
        assert_eq!(w[1], 0.0);
    }

    #[test]
    fn gate_redistributes_mass() {
        let local = gm1(&[(1.0, 0.0, 1.0)]);
        let aa = aa_of(&gm1(&[(0.6, 0.0, 1.0), (0.4, 50.0, 1.0)]));
        let h = assign_nearest(&local, &aa, Some(10.0)).unwrap();
        assert_eq!(h.targets, vec![Some(0), None]);
        assert!((h.total_mass() - 1.0).abs() < 1e-15);
        // nothing passes: fall back to the ungated assignment
        let h = assign_nearest(&local, &aa, Some(-1.0)).unwrap();
        assert_eq!(h.targets, vec![Some(0), Some(0)]);
    }

    #[test]
    fn empty_local_is_an_error() {
        let aa = aa_of(&gm1(&[(1.0, 0.0, 1.0)]));
        assert!(matches!(assign_nearest(&GaussianMixture::new(1), &aa, None), Err(Error::Assignment(_))));
    }

    #[test]
    fn gm_fit_of_self_converges_immediately() {
        let g = gm1(&[(0.5, 0.0, 1.0), (0.7, 5.0, 2.0)]);
        let (out, report) = gm_phd_fit(&g, &aa_of(&g), DEFAULT_GAMMA_G, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(out, g);
        assert_eq!(report.iterations, 1);
        assert_eq!(report.goodness, vec![0.0]);
        assert!(report.converged);
    }

    #[test]
    fn gm_fit_merges_cluster() {
        let local = gm1(&[(1.0, 0.0, 1.0)]);
        let aa = aa_of(&gm1(&[(0.5, -1.0, 1.0), (0.5, 1.0, 1.0)]));
        let (out, _) = gm_phd_fit(&local, &aa, DEFAULT_GAMMA_G, DEFAULT_MAX_ITER).unwrap();
        let c = &out.components()[0];
        assert!((c.weight - 1.0).abs() < 1e-15);
        assert!(c.mean[0].abs() < 1e-15);
        assert!((c.cov[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gm_fit_keeps_empty_clusters() {
        let local = gm1(&[(1.0, 0.0, 1.0), (1.0, 100.0, 3.0)]);
        let aa = aa_of(&gm1(&[(0.8, 0.2, 1.0)]));
        let (out, _) = gm_phd_fit(&local, &aa, DEFAULT_GAMMA_G, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.components()[1], local.components()[1].with_weight(0.0));
        assert!((out.total_mass() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn vub_rejects_infeasible() {
        let local = gm1(&[(1.0, 0.0, 1.0)]);
        let aa = aa_of(&gm1(&[(0.5, 0.0, 1.0)]));
        let bad = Assignment {
            targets: vec![Some(0)],
            mass: vec![0.7],
        };
        assert!(matches!(vub(&aa, &local, &bad), Err(Error::Constraint(_))));
        let ok = Assignment {
            targets: vec![Some(0)],
            mass: vec![0.5],
        };
        let kl = kl_gaussian(&aa.mixture.components()[0], &local.components()[0]).unwrap();
        assert_eq!(vub(&aa, &local, &ok).unwrap(), 0.5 * kl);
    }
}
