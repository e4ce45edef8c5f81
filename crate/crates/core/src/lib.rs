//! Kernel Hotelling-Lawley (TKHL) testing for linear models fitted to kernel
//! mean embeddings.
//!
//! Observations are mapped into an RKHS, regressed on a one- or two-way
//! design, and linear hypotheses `L Θ = 0` are tested with a spectrally
//! truncated Hotelling-Lawley trace whose null distribution is `χ²(d T)`.
//! Everything is computed through Gram matrices; a Nyström path replaces the
//! full residual eigenproblem with a landmark-based one.

pub mod design;
pub mod diagnostics;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod model;
pub mod nystrom;
#[cfg(feature = "oracle")]
pub mod oracle;
pub mod sim;
pub mod stats;

pub use design::{
    hypothesis_projector, one_way_design, padded_contrast, pair_contrast, pairwise_contrast, two_way_additive_design,
    ContrastMatrix, DesignBundle, Factor, HypothesisProjector,
};
pub use diagnostics::{
    cook_distances, discriminant_coordinates, projection_tables, DiagnosticsBundle, DiscriminantAxes,
};
pub use error::{Error, Result};
pub use kernel::{cross_gram, gram, median_heuristic, GramMatrix, Kernel, KernelSpec};
pub use model::{
    fit, fit_with, kt_matrix, pairwise_statistic_matrix, pairwise_tests, pairwise_with, tkhl_test, FitOptions,
    FittedModel, PairwiseResult, TestMethod, TestResult,
};
pub use nystrom::{
    build_anchors, default_anchors, default_landmarks, landmark_residual_gram, nystrom_gram, nystrom_test,
    sample_landmarks, AnchorSystem, LandmarkPlan, LandmarkStrategy, NystromModel,
};
pub use sim::{generate_dataset, run_level_experiment, run_power_experiment, SimConfig, SimReport};
pub use stats::{bh_adjust, chi2_sf};
