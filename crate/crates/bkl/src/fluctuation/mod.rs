pub mod conditioned;
pub mod passage;
pub mod scale;

pub use conditioned::{
    conditioned_negdrift_check, conditioned_rayleigh_check, duality_check,
    duality_check_intervals, DualityReport, NegDriftReport, RayleighReport,
};
pub use passage::{
    advance_to, exit_up_mc, first_passage, killed_functional, renewal_r,
    survival_probability_analytic, survival_probability_mc, walk_replica, FirstPassageRecord,
    PathConfig, PathState, SegmentEnd,
};
pub use scale::{fixed_talbot, scale_w_bm, ScaleFunction, DEFAULT_TALBOT_NODES};
