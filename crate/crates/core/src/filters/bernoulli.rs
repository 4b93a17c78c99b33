//! Gaussian-mixture multi-Bernoulli (MB) and labeled multi-Bernoulli (LMB)
//! filters.
//!
//! Both share the same track-oriented update. Each Bernoulli component is
//! either missed/absent or associated with one gated measurement; the two
//! filters differ in how the marginal association probabilities are
//! obtained. The LMB filter ranks joint hypotheses with Murty's algorithm in
//! each gating group; the MB filter runs loopy belief propagation over the
//! same association weights and keeps a single marginal MB.

use nalgebra::DVector;

use crate::assignment::{murty_k_best, CostMatrix};
use crate::error::{Error, Result};
use crate::gaussian::{CovFactor, GaussianComponent};
use crate::mixture::GaussianMixture;

use super::kalman::KalmanTerms;
use super::models::{BirthModel, FilterParams, MeasurementModel, MotionModel};

/// Track label: birth time step and index within that step's births.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label {
    pub birth_step: usize,
    pub index: usize,
}

/// Existence probability with a normalized Gaussian-mixture density.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliComponent {
    pub existence: f64,
    pub density: GaussianMixture,
    pub label: Option<Label>,
}

impl BernoulliComponent {
    fn predict(&self, motion: &MotionModel) -> Result<Self> {
        let mut density = GaussianMixture::new(self.density.dim());
        for g in self.density.iter() {
            density.push(motion.predict(g))?;
        }
        Ok(Self {
            existence: self.existence * motion.survival_prob,
            density,
            label: self.label,
        })
    }

    /// Mean of the heaviest density component.
    pub fn estimate(&self) -> Option<DVector<f64>> {
        self.density
            .iter()
            .max_by(|a, b| a.weight.total_cmp(&b.weight))
            .map(|g| g.mean.clone())
    }
}

/// Association weights for one scan: `missed[i]` and `detected[i][j]`, both
/// already divided by the clutter intensity.
struct AssociationWeights {
    missed: Vec<f64>,
    detected: Vec<Vec<Option<f64>>>,
}

/// Marginal association probabilities: column 0 is missed/absent, column
/// `j + 1` is measurement `j`.
type Marginals = Vec<Vec<f64>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Association {
    LoopyBelief,
    KBest(usize),
}

fn predict_bernoullis(
    bernoullis: &[BernoulliComponent],
    motion: &MotionModel,
    birth: &BirthModel,
    birth_step: Option<usize>,
) -> Result<Vec<BernoulliComponent>> {
    let mut out = bernoullis
        .iter()
        .map(|b| b.predict(motion))
        .collect::<Result<Vec<_>>>()?;
    for (index, b) in birth.components.iter().enumerate() {
        let g = GaussianComponent::new(1.0, b.mean.clone(), b.cov.clone())?;
        out.push(BernoulliComponent {
            existence: b.existence,
            density: GaussianMixture::from_components(g.dim(), vec![g])?,
            label: birth_step.map(|birth_step| Label { birth_step, index }),
        });
    }
    Ok(out)
}

fn update_bernoullis(
    bernoullis: &[BernoulliComponent],
    meas: &MeasurementModel,
    measurements: &[DVector<f64>],
    params: &FilterParams,
    association: Association,
) -> Result<Vec<BernoulliComponent>> {
    let pd = meas.detect_prob;
    let kappa = meas.clutter_density().max(f64::MIN_POSITIVE);
    let m = measurements.len();

    let terms = bernoullis
        .iter()
        .map(|b| b.density.iter().map(|g| KalmanTerms::new(g, meas)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;

    // per Bernoulli, per measurement: per-component likelihoods when gated
    let mut likelihoods: Vec<Vec<Option<Vec<f64>>>> = Vec::with_capacity(bernoullis.len());
    let mut weights = AssociationWeights {
        missed: Vec::with_capacity(bernoullis.len()),
        detected: Vec::with_capacity(bernoullis.len()),
    };
    for (b, t) in bernoullis.iter().zip(&terms) {
        let r = b.existence;
        weights.missed.push(1.0 - r * pd);
        let mut row = Vec::with_capacity(m);
        let mut lik_row = Vec::with_capacity(m);
        for z in measurements {
            let gated = pd > 0.0 && r > 0.0 && t.iter().any(|k| k.mahalanobis_sq(z) <= params.gate);
            if gated {
                let per: Vec<f64> = b
                    .density
                    .iter()
                    .zip(t)
                    .map(|(g, k)| g.weight * k.likelihood(z))
                    .collect();
                let total: f64 = per.iter().sum();
                row.push(Some(r * pd * total / kappa));
                lik_row.push(Some(per));
            } else {
                row.push(None);
                lik_row.push(None);
            }
        }
        weights.detected.push(row);
        likelihoods.push(lik_row);
    }

    let marginals = match association {
        Association::LoopyBelief => loopy_belief_marginals(&weights),
        Association::KBest(k) => kbest_marginals(&weights, k)?,
    };

    let mut out = Vec::with_capacity(bernoullis.len());
    for (i, b) in bernoullis.iter().enumerate() {
        let r = b.existence;
        let p = &marginals[i];
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Association(format!("non-finite marginal for component {i}")));
        }
        let missed_exist = if weights.missed[i] > 0.0 {
            r * (1.0 - pd) / weights.missed[i]
        } else {
            0.0
        };
        let mut density = GaussianMixture::new(b.density.dim());
        let missed_mass = p[0] * missed_exist;
        let mut existence = missed_mass;
        if missed_mass > 0.0 {
            for g in b.density.iter() {
                density.push(g.with_weight(missed_mass * g.weight))?;
            }
        }
        for (j, z) in measurements.iter().enumerate() {
            let pj = p[j + 1];
            let Some(per) = &likelihoods[i][j] else { continue };
            if pj <= 0.0 {
                continue;
            }
            existence += pj;
            let total: f64 = per.iter().sum();
            for ((g, k), l) in b.density.iter().zip(&terms[i]).zip(per) {
                let w = if total > 0.0 { pj * l / total } else { 0.0 };
                if w > 0.0 {
                    density.push(k.update(g, z, w))?;
                }
            }
        }
        if !(existence > 0.0) {
            continue;
        }
        let density = normalize(&density.scaled(1.0 / existence).reduce(&params.bernoulli_reduce)?);
        if density.is_empty() {
            continue;
        }
        out.push(BernoulliComponent {
            existence: existence.min(1.0),
            density,
            label: b.label,
        });
    }
    Ok(prune_bernoullis(out, params))
}

fn normalize(gm: &GaussianMixture) -> GaussianMixture {
    let mass = gm.total_mass();
    if mass > 0.0 {
        gm.scaled(1.0 / mass)
    } else {
        gm.clone()
    }
}

// Label index offset for Bernoullis split off after an import.
const SPLIT_LABEL_OFFSET: usize = usize::MAX / 4 * 3;

// A component outside the gate of its Bernoulli's heaviest component becomes
// a Bernoulli of its own carrying its share of the existence.
fn split_distant(
    bs: &[BernoulliComponent],
    params: &FilterParams,
    step: Option<usize>,
) -> Result<Vec<BernoulliComponent>> {
    let mut out = Vec::with_capacity(bs.len());
    let mut fragments = Vec::new();
    for b in bs {
        let Some(main) = b.density.iter().max_by(|x, y| x.weight.total_cmp(&y.weight)) else {
            out.push(b.clone());
            continue;
        };
        let factor = CovFactor::new(&main.cov)?;
        let (near, far): (Vec<&GaussianComponent>, Vec<&GaussianComponent>) = b.density.iter().partition(|g| {
            let d: Vec<f64> = (&g.mean - &main.mean).iter().copied().collect();
            factor.mahalanobis_sq(&d) <= params.gate
        });
        if far.is_empty() {
            out.push(b.clone());
            continue;
        }
        let kept: f64 = near.iter().map(|g| g.weight).sum();
        out.push(BernoulliComponent {
            existence: b.existence * kept,
            density: normalize(&GaussianMixture::from_components(
                b.density.dim(),
                near.into_iter().cloned().collect(),
            )?),
            label: b.label,
        });
        for g in far {
            fragments.push((b.existence * g.weight, g.with_weight(1.0)));
        }
    }
    for (k, (existence, g)) in fragments.into_iter().enumerate() {
        out.push(BernoulliComponent {
            existence,
            density: GaussianMixture::from_components(g.dim(), vec![g])?,
            label: step.map(|birth_step| Label {
                birth_step,
                index: SPLIT_LABEL_OFFSET + k,
            }),
        });
    }
    Ok(out)
}

// Greedy in order of decreasing existence: a leader absorbs every remaining
// Bernoulli whose estimate lies inside its merge gate. Existences add up to
// the import clamp, densities mix in proportion to existence, the leader's
// label survives.
fn merge_coincident(bs: &[BernoulliComponent], params: &FilterParams) -> Result<Vec<BernoulliComponent>> {
    let heaviest: Vec<Option<&GaussianComponent>> = bs
        .iter()
        .map(|b| b.density.iter().max_by(|x, y| x.weight.total_cmp(&y.weight)))
        .collect();
    let mut order: Vec<usize> = (0..bs.len()).collect();
    order.sort_by(|&a, &b| bs[b].existence.total_cmp(&bs[a].existence).then(a.cmp(&b)));
    let mut owner: Vec<Option<usize>> = vec![None; bs.len()];
    for (pos, &lead) in order.iter().enumerate() {
        if owner[lead].is_some() {
            continue;
        }
        owner[lead] = Some(lead);
        let Some(g) = heaviest[lead] else { continue };
        let factor = CovFactor::new(&g.cov)?;
        for &other in &order[pos + 1..] {
            if owner[other].is_some() {
                continue;
            }
            if let Some(h) = heaviest[other] {
                let d: Vec<f64> = (&h.mean - &g.mean).iter().copied().collect();
                if factor.mahalanobis_sq(&d) < params.bernoulli_reduce.merge_threshold {
                    owner[other] = Some(lead);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(bs.len());
    for lead in 0..bs.len() {
        if owner[lead] != Some(lead) {
            continue;
        }
        let members: Vec<usize> = (0..bs.len()).filter(|&i| owner[i] == Some(lead)).collect();
        if members.len() == 1 {
            out.push(bs[lead].clone());
            continue;
        }
        let total: f64 = members.iter().map(|&i| bs[i].existence).sum();
        let mut density = GaussianMixture::new(bs[lead].density.dim());
        for &i in &members {
            for g in bs[i].density.iter() {
                density.push(g.with_weight(g.weight * bs[i].existence / total))?;
            }
        }
        out.push(BernoulliComponent {
            existence: total.min(MAX_IMPORTED_EXISTENCE),
            density: normalize(&density.reduce(&params.bernoulli_reduce)?),
            label: bs[lead].label,
        });
    }
    Ok(out)
}

fn prune_bernoullis(mut bs: Vec<BernoulliComponent>, params: &FilterParams) -> Vec<BernoulliComponent> {
    bs.retain(|b| b.existence >= params.existence_prune);
    if bs.len() > params.max_bernoullis {
        let mut order: Vec<usize> = (0..bs.len()).collect();
        order.sort_by(|&a, &b| bs[b].existence.total_cmp(&bs[a].existence).then(a.cmp(&b)));
        let mut keep = vec![false; bs.len()];
        for &i in &order[..params.max_bernoullis] {
            keep[i] = true;
        }
        let mut idx = 0;
        bs.retain(|_| {
            let k = keep[idx];
            idx += 1;
            k
        });
    }
    bs
}

fn loopy_belief_marginals(w: &AssociationWeights) -> Marginals {
    let n = w.missed.len();
    let m = w.detected.first().map_or(0, Vec::len);
    // messages from measurements to components, initialised to 1
    let mut nu = vec![vec![1.0; m]; n];
    for _ in 0..200 {
        let mut mu = vec![vec![0.0; m]; n];
        for i in 0..n {
            let total: f64 = w.missed[i]
                + (0..m)
                    .filter_map(|j| w.detected[i][j].map(|v| v * nu[i][j]))
                    .sum::<f64>();
            for j in 0..m {
                if let Some(v) = w.detected[i][j] {
                    let denom = total - v * nu[i][j];
                    mu[i][j] = if denom > 0.0 { v / denom } else { f64::MAX };
                }
            }
        }
        let mut delta: f64 = 0.0;
        for j in 0..m {
            let col: f64 = (0..n).map(|i| mu[i][j]).sum();
            for i in 0..n {
                if w.detected[i][j].is_some() {
                    let new = 1.0 / (1.0 + col - mu[i][j]);
                    delta = delta.max((new - nu[i][j]).abs());
                    nu[i][j] = new;
                }
            }
        }
        if delta < 1e-10 {
            break;
        }
    }
    (0..n)
        .map(|i| {
            let mut row = vec![w.missed[i]];
            row.extend((0..m).map(|j| w.detected[i][j].map_or(0.0, |v| v * nu[i][j])));
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|v| *v /= total);
            } else {
                row[0] = 1.0;
            }
            row
        })
        .collect()
}

/// Connected components of the component/measurement gating graph.
fn gating_groups(w: &AssociationWeights) -> Vec<(Vec<usize>, Vec<usize>)> {
    let n = w.missed.len();
    let m = w.detected.first().map_or(0, Vec::len);
    let mut parent: Vec<usize> = (0..n + m).collect();
    fn find(p: &mut [usize], x: usize) -> usize {
        let mut r = x;
        while p[r] != r {
            r = p[r];
        }
        let mut c = x;
        while p[c] != r {
            let next = p[c];
            p[c] = r;
            c = next;
        }
        r
    }
    for i in 0..n {
        for j in 0..m {
            if w.detected[i][j].is_some() {
                let a = find(&mut parent, i);
                let b = find(&mut parent, n + j);
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut groups: Vec<(usize, Vec<usize>, Vec<usize>)> = Vec::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        match groups.iter_mut().find(|g| g.0 == root) {
            Some(g) => g.1.push(i),
            None => groups.push((root, vec![i], Vec::new())),
        }
    }
    for j in 0..m {
        let root = find(&mut parent, n + j);
        if let Some(g) = groups.iter_mut().find(|g| g.0 == root) {
            g.2.push(j);
        }
    }
    groups.into_iter().map(|(_, c, z)| (c, z)).collect()
}

fn kbest_marginals(w: &AssociationWeights, k: usize) -> Result<Marginals> {
    let n = w.missed.len();
    let m = w.detected.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; m + 1]; n];
    for (comps, meas) in gating_groups(w) {
        if meas.is_empty() {
            for &i in &comps {
                out[i][0] = 1.0;
            }
            continue;
        }
        let nc = comps.len();
        let nm = meas.len();
        // columns: measurements of the group, then one missed slot per component
        let cost = CostMatrix::from_fn(nc, nm + nc, |r, c| {
            let i = comps[r];
            if c < nm {
                w.detected[i][meas[c]].map_or(f64::INFINITY, |v| -v.ln())
            } else if c - nm == r {
                -w.missed[i].ln()
            } else {
                f64::INFINITY
            }
        });
        let ranked = murty_k_best(&cost, k);
        let Some(best) = ranked.first() else {
            return Err(Error::Association("no feasible association hypothesis".into()));
        };
        let best_cost = best.cost;
        let hyp_weights: Vec<f64> = ranked.iter().map(|h| (best_cost - h.cost).exp()).collect();
        let total: f64 = hyp_weights.iter().sum();
        for (h, hw) in ranked.iter().zip(&hyp_weights) {
            for (r, &col) in h.columns.iter().enumerate() {
                let slot = if col < nm { meas[col] + 1 } else { 0 };
                out[comps[r]][slot] += hw / total;
            }
        }
    }
    Ok(out)
}

fn export_flat(bernoullis: &[BernoulliComponent], dim: usize) -> Result<(GaussianMixture, Vec<(usize, usize)>)> {
    let mut gm = GaussianMixture::new(dim);
    let mut mapping = Vec::new();
    for (l, b) in bernoullis.iter().enumerate() {
        for (i, g) in b.density.iter().enumerate() {
            gm.push(g.with_weight(b.existence * g.weight))?;
            mapping.push((l, i));
        }
    }
    Ok((gm, mapping))
}

/// Maximum existence after importing fused weights.
pub const MAX_IMPORTED_EXISTENCE: f64 = 1.0 - 1e-6;

fn import_flat(
    bernoullis: &[BernoulliComponent],
    fitted: &GaussianMixture,
    mapping: &[(usize, usize)],
    full: bool,
) -> Result<Vec<BernoulliComponent>> {
    let expected: Vec<(usize, usize)> = bernoullis
        .iter()
        .enumerate()
        .flat_map(|(l, b)| (0..b.density.len()).map(move |i| (l, i)))
        .collect();
    if mapping != expected.as_slice() || fitted.len() != mapping.len() {
        return Err(Error::Mapping(format!(
            "fitted mixture has {} components, mapping {}, state {}",
            fitted.len(),
            mapping.len(),
            expected.len()
        )));
    }
    let mut out = Vec::with_capacity(bernoullis.len());
    let mut cursor = 0;
    for b in bernoullis {
        let k = b.density.len();
        let slice = &fitted.components()[cursor..cursor + k];
        cursor += k;
        let mass: f64 = slice.iter().map(|g| g.weight).sum();
        let comps: Vec<GaussianComponent> = slice
            .iter()
            .zip(b.density.iter())
            .map(|(f, old)| {
                let w = if mass > 0.0 { f.weight / mass } else { old.weight };
                if full {
                    f.with_weight(w)
                } else {
                    old.with_weight(w)
                }
            })
            .collect();
        out.push(BernoulliComponent {
            existence: mass.clamp(0.0, MAX_IMPORTED_EXISTENCE),
            density: GaussianMixture::from_components(b.density.dim(), comps)?,
            label: b.label,
        });
    }
    Ok(out)
}

/// Unlabeled multi-Bernoulli filter state.
#[derive(Debug, Clone, PartialEq)]
pub struct MbFilterState {
    pub dim: usize,
    pub bernoullis: Vec<BernoulliComponent>,
}

impl MbFilterState {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            bernoullis: Vec::new(),
        }
    }

    pub fn predict(&self, motion: &MotionModel, birth: &BirthModel) -> Result<Self> {
        Ok(Self {
            dim: self.dim,
            bernoullis: predict_bernoullis(&self.bernoullis, motion, birth, None)?,
        })
    }

    pub fn update(&self, meas: &MeasurementModel, measurements: &[DVector<f64>], params: &FilterParams) -> Result<Self> {
        Ok(Self {
            dim: self.dim,
            bernoullis: update_bernoullis(&self.bernoullis, meas, measurements, params, Association::LoopyBelief)?,
        })
    }

    pub fn cardinality(&self) -> f64 {
        self.bernoullis.iter().map(|b| b.existence).sum()
    }

    pub fn extract(&self, threshold: f64) -> Vec<DVector<f64>> {
        self.bernoullis
            .iter()
            .filter(|b| b.existence > threshold)
            .filter_map(BernoulliComponent::estimate)
            .collect()
    }

    pub fn export_phd(&self) -> Result<(GaussianMixture, Vec<(usize, usize)>)> {
        export_flat(&self.bernoullis, self.dim)
    }

    pub fn import_phd(&self, fitted: &GaussianMixture, mapping: &[(usize, usize)], full: bool) -> Result<Self> {
        Ok(Self {
            dim: self.dim,
            bernoullis: import_flat(&self.bernoullis, fitted, mapping, full)?,
        })
    }

    /// Splits off density components far from their Bernoulli's main mode,
    /// merges Bernoullis that track the same object, then prunes.
    pub fn prune(&self, params: &FilterParams) -> Result<Self> {
        Ok(Self {
            dim: self.dim,
            bernoullis: prune_bernoullis(merge_coincident(&split_distant(&self.bernoullis, params, None)?, params)?, params),
        })
    }
}

/// Labeled multi-Bernoulli filter state. `step` counts predictions and
/// stamps new labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LmbFilterState {
    pub dim: usize,
    pub step: usize,
    pub bernoullis: Vec<BernoulliComponent>,
}

impl LmbFilterState {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            step: 0,
            bernoullis: Vec::new(),
        }
    }

    pub fn predict(&self, motion: &MotionModel, birth: &BirthModel) -> Result<Self> {
        let step = self.step + 1;
        Ok(Self {
            dim: self.dim,
            step,
            bernoullis: predict_bernoullis(&self.bernoullis, motion, birth, Some(step))?,
        })
    }

    pub fn update(&self, meas: &MeasurementModel, measurements: &[DVector<f64>], params: &FilterParams) -> Result<Self> {
        Ok(Self {
            dim: self.dim,
            step: self.step,
            bernoullis: update_bernoullis(
                &self.bernoullis,
                meas,
                measurements,
                params,
                Association::KBest(params.lmb_hypotheses),
            )?,
        })
    }

    pub fn cardinality(&self) -> f64 {
        self.bernoullis.iter().map(|b| b.existence).sum()
    }

    pub fn extract(&self, threshold: f64) -> Vec<(DVector<f64>, Label)> {
        self.bernoullis
            .iter()
            .filter(|b| b.existence > threshold)
            .filter_map(|b| Some((b.estimate()?, b.label?)))
            .collect()
    }

    pub fn export_phd(&self) -> Result<(GaussianMixture, Vec<(usize, usize)>)> {
        export_flat(&self.bernoullis, self.dim)
    }

    pub fn import_phd(&self, fitted: &GaussianMixture, mapping: &[(usize, usize)], full: bool) -> Result<Self> {
        Ok(Self {
            dim: self.dim,
            step: self.step,
            bernoullis: import_flat(&self.bernoullis, fitted, mapping, full)?,
        })
    }

    /// Splits off density components far from their Bernoulli's main mode,
    /// merges Bernoullis that track the same object, then prunes.
    pub fn prune(&self, params: &FilterParams) -> Result<Self> {
        Ok(Self {
            dim: self.dim,
            step: self.step,
            bernoullis: prune_bernoullis(merge_coincident(&split_distant(&self.bernoullis, params, Some(self.step))?, params)?, params),
        })
    }

    pub fn labels_distinct(&self) -> bool {
        let mut labels: Vec<Label> = self.bernoullis.iter().filter_map(|b| b.label).collect();
        let n = labels.len();
        labels.sort_unstable();
        labels.dedup();
        labels.len() == n && n == self.bernoullis.len()
    }
}
