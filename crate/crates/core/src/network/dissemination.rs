//! Synchronous consensus and flooding rounds over a sensor graph, with
//! per-node accounting of the real values broadcast.

use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{cc_scale, gc_weight_fit, gm_phd_fit, weighted_phd_aa, PhdAA, DEFAULT_GAMMA_G, DEFAULT_MAX_ITER};
use crate::gaussian::GaussianComponent;
use crate::mixture::GaussianMixture;

use super::topology::{metropolis_weights, Topology};

/// Real values needed to send one Gaussian component: weight, mean and the
/// upper triangle of the covariance.
pub const fn comm_cost_per_gc(n_x: usize) -> usize {
    1 + n_x + n_x * (n_x + 1) / 2
}

/// Real values to resend a component whose body the receiver already has.
pub const WEIGHT_ONLY_COST: usize = 1;

/// Mass tolerance of the cardinality-consensus check after each fit.
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMethod {
    None,
    CcOnly,
    WeightFit,
    GmFit,
    /// Reserved; not implemented.
    IsdCdm,
}

impl FusionMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionMethod::None => "none",
            FusionMethod::CcOnly => "cc-only",
            FusionMethod::WeightFit => "weight-fit",
            FusionMethod::GmFit => "gm-fit",
            FusionMethod::IsdCdm => "isd-cdm",
        }
    }
}

impl std::fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FusionMethod::None),
            "cc-only" => Ok(FusionMethod::CcOnly),
            "weight-fit" => Ok(FusionMethod::WeightFit),
            "gm-fit" => Ok(FusionMethod::GmFit),
            "isd-cdm" => Ok(FusionMethod::IsdCdm),
            other => Err(Error::Config(format!("unknown fusion method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommMode {
    Consensus,
    Flooding,
}

impl CommMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CommMode::Consensus => "consensus",
            CommMode::Flooding => "flooding",
        }
    }
}

impl std::fmt::Display for CommMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CommMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consensus" => Ok(CommMode::Consensus),
            "flooding" => Ok(CommMode::Flooding),
            other => Err(Error::Config(format!("unknown communication mode `{other}`"))),
        }
    }
}

/// Provenance of a Gaussian component: the sensor that produced it, the
/// time step, and its index in that sensor's export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GcId {
    pub origin: usize,
    pub step: usize,
    pub index: usize,
}

fn ids_for(origin: usize, step: usize, n: usize) -> Vec<GcId> {
    (0..n).map(|index| GcId { origin, step, index }).collect()
}

/// Fit parameters shared by all nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSettings {
    pub gamma_g: f64,
    pub max_iter: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            gamma_g: DEFAULT_GAMMA_G,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

/// Counters over all fit calls.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitStats {
    pub fit_calls: u64,
    pub gm_fit_calls: u64,
    /// Full-parameter fits that met the stopping rule within `max_iter`.
    pub gm_fit_converged: u64,
    pub nonmonotone: u64,
    pub mass_violations: u64,
    pub max_mass_error: f64,
    pub cold_starts: u64,
}

impl FitStats {
    pub fn absorb(&mut self, other: &FitStats) {
        self.fit_calls += other.fit_calls;
        self.gm_fit_calls += other.gm_fit_calls;
        self.gm_fit_converged += other.gm_fit_converged;
        self.nonmonotone += other.nonmonotone;
        self.mass_violations += other.mass_violations;
        self.max_mass_error = self.max_mass_error.max(other.max_mass_error);
        self.cold_starts += other.cold_starts;
    }

    fn check_mass(&mut self, fitted: &GaussianMixture, aa: &PhdAA) {
        let err = (fitted.total_mass() - aa.n_hat).abs();
        self.max_mass_error = self.max_mass_error.max(err);
        if !(err <= MASS_TOLERANCE) {
            self.mass_violations += 1;
        }
    }
}

/// A node's mixture after fusion. `adopted` marks a cold start: the node had
/// no components and took the fused mixture wholesale, so the result does not
/// line up with its export.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedMixture {
    pub mixture: GaussianMixture,
    pub adopted: bool,
}

/// Applies one fit of `local` onto `aa`.
pub fn fit_local(
    local: &GaussianMixture,
    aa: &PhdAA,
    method: FusionMethod,
    settings: &FitSettings,
    stats: &mut FitStats,
) -> Result<FusedMixture> {
    if local.is_empty() {
        if aa.is_empty() {
            return Ok(FusedMixture {
                mixture: local.clone(),
                adopted: false,
            });
        }
        stats.cold_starts += 1;
        return Ok(FusedMixture {
            mixture: aa.mixture.clone(),
            adopted: true,
        });
    }
    let mixture = match method {
        FusionMethod::None => return Ok(FusedMixture { mixture: local.clone(), adopted: false }),
        FusionMethod::IsdCdm => return Err(Error::NotImplemented("isd-cdm fusion")),
        FusionMethod::CcOnly => cc_scale(local.total_mass(), aa.n_hat, local).0,
        FusionMethod::WeightFit => {
            stats.fit_calls += 1;
            let (w, _) = gc_weight_fit(local, aa)?;
            let fitted = local.with_weights(&w)?;
            stats.check_mass(&fitted, aa);
            fitted
        }
        FusionMethod::GmFit => {
            stats.fit_calls += 1;
            stats.gm_fit_calls += 1;
            match gm_phd_fit(local, aa, settings.gamma_g, settings.max_iter) {
                Ok((fitted, report)) => {
                    if report.converged {
                        stats.gm_fit_converged += 1;
                    }
                    stats.check_mass(&fitted, aa);
                    fitted
                }
                Err(Error::NonMonotone { .. }) => {
                    stats.nonmonotone += 1;
                    let fallback = cc_scale(local.total_mass(), aa.n_hat, local).0;
                    stats.check_mass(&fallback, aa);
                    fallback
                }
                Err(e) => return Err(e),
            }
        }
    };
    Ok(FusedMixture {
        mixture,
        adopted: false,
    })
}

/// Per-node state during consensus.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusNode {
    pub mixture: GaussianMixture,
    pub ids: Vec<GcId>,
    /// Cardinality estimate carried by cardinality-only consensus.
    pub mass: f64,
    pub adopted: bool,
    sent: BTreeSet<GcId>,
}

impl ConsensusNode {
    pub fn new(origin: usize, step: usize, mixture: GaussianMixture) -> Self {
        Self {
            ids: ids_for(origin, step, mixture.len()),
            mass: mixture.total_mass(),
            mixture,
            adopted: false,
            sent: BTreeSet::new(),
        }
    }
}

/// One synchronous consensus round. Every node broadcasts its current state,
/// forms the Metropolis-weighted average of its closed neighborhood and fits
/// its own mixture to it. Returns the new states and the real values each
/// node broadcast.
pub fn consensus_round(
    nodes: &[ConsensusNode],
    topology: &Topology,
    method: FusionMethod,
    settings: &FitSettings,
    stats: &mut FitStats,
) -> Result<(Vec<ConsensusNode>, Vec<f64>)> {
    if nodes.len() != topology.node_count() {
        return Err(Error::Topology(format!(
            "{} node states for {} nodes",
            nodes.len(),
            topology.node_count()
        )));
    }
    let full = comm_cost_per_gc(nodes.iter().map(|n| n.mixture.dim()).next().unwrap_or(0)) as f64;
    let mut costs = vec![0.0; nodes.len()];
    let mut out = nodes.to_vec();
    for (s, node) in nodes.iter().enumerate() {
        if topology.neighbors(s).is_empty() {
            continue;
        }
        costs[s] = match method {
            FusionMethod::None => 0.0,
            FusionMethod::CcOnly => 1.0,
            FusionMethod::GmFit | FusionMethod::IsdCdm => full * node.mixture.len() as f64,
            FusionMethod::WeightFit => node
                .ids
                .iter()
                .map(|id| if node.sent.contains(id) { WEIGHT_ONLY_COST as f64 } else { full })
                .sum(),
        };
        out[s].sent.extend(node.ids.iter().copied());
    }
    if method == FusionMethod::None {
        return Ok((nodes.to_vec(), vec![0.0; nodes.len()]));
    }
    for s in 0..nodes.len() {
        let weights = metropolis_weights(topology, s);
        if method == FusionMethod::CcOnly {
            out[s].mass = weights.iter().map(|&(r, w)| w * nodes[r].mass).sum();
            continue;
        }
        let inputs: Vec<(f64, &GaussianMixture)> = weights.iter().map(|&(r, w)| (w, &nodes[r].mixture)).collect();
        let aa = weighted_phd_aa(&inputs)?;
        let fused = fit_local(&nodes[s].mixture, &aa, method, settings, stats)?;
        if fused.adopted {
            out[s].ids = weights.iter().flat_map(|&(r, _)| nodes[r].ids.iter().copied()).collect();
            out[s].adopted = true;
        }
        out[s].mass = fused.mixture.total_mass();
        out[s].mixture = fused.mixture;
    }
    Ok((out, costs))
}

/// Per-node state during flooding.
#[derive(Debug, Clone, PartialEq)]
pub struct FloodNode {
    pub own: usize,
    /// Origins heard of, including the node itself.
    pub origins: BTreeSet<usize>,
    pub components: BTreeMap<GcId, GaussianComponent>,
    /// Cardinality estimates by origin.
    pub masses: BTreeMap<usize, f64>,
    sent_components: BTreeSet<GcId>,
    sent_masses: BTreeSet<usize>,
    heard_from: BTreeMap<GcId, BTreeSet<usize>>,
}

impl FloodNode {
    pub fn new(origin: usize, step: usize, mixture: &GaussianMixture) -> Self {
        Self {
            own: origin,
            origins: BTreeSet::from([origin]),
            components: ids_for(origin, step, mixture.len())
                .into_iter()
                .zip(mixture.iter().cloned())
                .collect(),
            masses: BTreeMap::from([(origin, mixture.total_mass())]),
            sent_components: BTreeSet::new(),
            sent_masses: BTreeSet::new(),
            heard_from: BTreeMap::new(),
        }
    }

    /// The fused mixture over all origins heard of, with uniform weights.
    pub fn aggregate(&self, dim: usize) -> Result<PhdAA> {
        let mut per_origin: BTreeMap<usize, GaussianMixture> =
            self.origins.iter().map(|&o| (o, GaussianMixture::new(dim))).collect();
        for (id, g) in &self.components {
            per_origin
                .get_mut(&id.origin)
                .expect("component origins are known")
                .push(g.clone())?;
        }
        let w = 1.0 / per_origin.len() as f64;
        let inputs: Vec<(f64, &GaussianMixture)> = per_origin.values().map(|gm| (w, gm)).collect();
        weighted_phd_aa(&inputs)
    }
}

/// One synchronous flooding round. Each node broadcasts, once, every item it
/// has not broadcast before, skipping components that all its neighbors
/// already sent to it. Component bodies cost `comm_cost_per_gc` each; with
/// cardinality-only fusion only the cardinality estimates travel, one real
/// value each.
pub fn flooding_round(nodes: &[FloodNode], topology: &Topology, method: FusionMethod) -> Result<(Vec<FloodNode>, Vec<f64>)> {
    if nodes.len() != topology.node_count() {
        return Err(Error::Topology(format!(
            "{} node states for {} nodes",
            nodes.len(),
            topology.node_count()
        )));
    }
    let mut out = nodes.to_vec();
    let mut costs = vec![0.0; nodes.len()];
    if method == FusionMethod::None {
        return Ok((out, costs));
    }
    let cc_only = method == FusionMethod::CcOnly;
    for (s, node) in nodes.iter().enumerate() {
        let neighbors = topology.neighbors(s);
        if neighbors.is_empty() {
            continue;
        }
        let origins: Vec<usize> = node.origins.iter().copied().collect();
        let masses: Vec<(usize, f64)> = node
            .masses
            .iter()
            .filter(|(o, _)| !node.sent_masses.contains(o))
            .map(|(&o, &m)| (o, m))
            .collect();
        let packet: Vec<(GcId, &GaussianComponent)> = if cc_only {
            Vec::new()
        } else {
            node.components
                .iter()
                .filter(|(id, _)| !node.sent_components.contains(id))
                .filter(|(id, _)| {
                    let heard = node.heard_from.get(id);
                    !neighbors.iter().all(|r| heard.is_some_and(|h| h.contains(r)))
                })
                .map(|(&id, g)| (id, g))
                .collect()
        };
        costs[s] = if cc_only {
            masses.len() as f64
        } else {
            packet.iter().map(|(_, g)| comm_cost_per_gc(g.dim()) as f64).sum()
        };
        out[s].sent_masses.extend(masses.iter().map(|&(o, _)| o));
        out[s].sent_components.extend(packet.iter().map(|&(id, _)| id));
        for &r in neighbors {
            let recv = &mut out[r];
            recv.origins.extend(origins.iter().copied());
            for &(o, m) in &masses {
                recv.masses.entry(o).or_insert(m);
            }
            for &(id, g) in &packet {
                recv.components.entry(id).or_insert_with(|| g.clone());
                recv.heard_from.entry(id).or_default().insert(s);
            }
        }
    }
    Ok((out, costs))
}

/// Builds each node's uniform-weight fused mixture from what it has heard
/// and fits its own mixture to it once.
pub fn flooding_finalize(
    nodes: &[FloodNode],
    locals: &[GaussianMixture],
    method: FusionMethod,
    settings: &FitSettings,
    stats: &mut FitStats,
) -> Result<Vec<FusedMixture>> {
    nodes
        .iter()
        .zip(locals)
        .map(|(node, local)| {
            if method == FusionMethod::CcOnly {
                let n_hat = node.masses.values().sum::<f64>() / node.masses.len() as f64;
                let aa = PhdAA {
                    mixture: GaussianMixture::new(local.dim()),
                    n_hat,
                };
                return fit_local(local, &aa, method, settings, stats);
            }
            let aa = node.aggregate(local.dim())?;
            fit_local(local, &aa, method, settings, stats)
        })
        .collect()
}

/// Fusion of one time step's local exports.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutcome {
    pub fused: Vec<FusedMixture>,
    /// Real values broadcast by each node over all rounds.
    pub costs: Vec<f64>,
}

/// Runs `rounds` rounds of dissemination and the chosen fit at every node.
pub fn disseminate_and_fuse(
    topology: &Topology,
    locals: &[GaussianMixture],
    step: usize,
    method: FusionMethod,
    mode: CommMode,
    rounds: usize,
    settings: &FitSettings,
    stats: &mut FitStats,
) -> Result<FusionOutcome> {
    if method == FusionMethod::IsdCdm {
        return Err(Error::NotImplemented("isd-cdm fusion"));
    }
    let n = topology.node_count();
    if locals.len() != n {
        return Err(Error::Topology(format!("{} local mixtures for {n} nodes", locals.len())));
    }
    let unchanged = || FusionOutcome {
        fused: locals
            .iter()
            .map(|m| FusedMixture {
                mixture: m.clone(),
                adopted: false,
            })
            .collect(),
        costs: vec![0.0; n],
    };
    if method == FusionMethod::None || rounds == 0 {
        return Ok(unchanged());
    }
    let mut costs = vec![0.0; n];
    match mode {
        CommMode::Consensus => {
            let mut nodes: Vec<ConsensusNode> = locals
                .iter()
                .enumerate()
                .map(|(s, m)| ConsensusNode::new(s, step, m.clone()))
                .collect();
            for _ in 0..rounds {
                let (next, c) = consensus_round(&nodes, topology, method, settings, stats)?;
                nodes = next;
                costs.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
            }
            let fused = nodes
                .into_iter()
                .map(|node| {
                    if method == FusionMethod::CcOnly {
                        let (mixture, _) = cc_scale(node.mixture.total_mass(), node.mass, &node.mixture);
                        FusedMixture { mixture, adopted: false }
                    } else {
                        FusedMixture {
                            mixture: node.mixture,
                            adopted: node.adopted,
                        }
                    }
                })
                .collect();
            Ok(FusionOutcome { fused, costs })
        }
        CommMode::Flooding => {
            let mut nodes: Vec<FloodNode> = locals.iter().enumerate().map(|(s, m)| FloodNode::new(s, step, m)).collect();
            for _ in 0..rounds {
                let (next, c) = flooding_round(&nodes, topology, method)?;
                nodes = next;
                costs.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
            }
            let fused = flooding_finalize(&nodes, locals, method, settings, stats)?;
            Ok(FusionOutcome { fused, costs })
        }
    }
}
