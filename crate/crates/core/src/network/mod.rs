//! Simulated peer-to-peer dissemination between sensors.

mod dissemination;
mod topology;

pub use dissemination::{
    comm_cost_per_gc, consensus_round, disseminate_and_fuse, fit_local, flooding_finalize, flooding_round, CommMode,
    ConsensusNode, FitSettings, FitStats, FloodNode, FusedMixture, FusionMethod, FusionOutcome, GcId, MASS_TOLERANCE,
    WEIGHT_ONLY_COST,
};
pub use topology::{metropolis_weights, Topology, TopologyFile};
