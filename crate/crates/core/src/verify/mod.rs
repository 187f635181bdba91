//! Independent oracles for the layers, residual units and network.
//!
//! Nothing outside this module depends on it.

pub mod gradcheck;
mod oracles;
mod suite;

pub use gradcheck::{
    check_layer, check_softmax_xent, finite_diff_gradient, relative_error, reports_csv, CheckOptions,
    GradCheckReport, DEFAULT_STEP, MIN_PROBES, THRESHOLD,
};
pub use oracles::{
    init_gradient_structure, skeleton_forward, telescope_oracle, warm_batchnorm, InitGradReport,
    UnitGrad,
};
pub use suite::{gradient_suite, SUITE_LAYERS};
