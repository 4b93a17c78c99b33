//! Arithmetic-average fusion of GM-PHDs and the variational fits that pull a
//! local mixture onto the fused one.

mod aa;
mod bounds;
mod fit;

pub use aa::{cc_scale, weighted_phd_aa, PhdAA, FUSION_WEIGHT_TOLERANCE};
pub use bounds::{bound_d1, bound_d2, bound_d3, bound_d4, bound_d5};
pub use fit::{
    assign_nearest, gc_weight_fit, gm_phd_fit, vub, Assignment, FitReport, DEFAULT_GAMMA_G, DEFAULT_MAX_ITER,
    MONOTONE_SLACK,
};
