//! A numerical laboratory for sub-Finsler geometry on Carnot groups.
//!
//! The crate builds up from exact group arithmetic in exponential
//! coordinates ([`group`]), through convex fiber metrics and their duals
//! ([`metric`]), horizontal curves with piecewise-constant controls
//! ([`curve`]), and a penalized multistart solver for the induced distance
//! ([`solver`]), to the derived experiments: metric derivatives along
//! curves ([`mderiv`]), the duality between distance decay and horizontal
//! gradients ([`duality`]), and variational convergence of length
//! functionals under degenerating metric families ([`gamma`]).
//!
//! Everything downstream of the group layer is deterministic by
//! construction: meshes are nested and enumerable ([`mesh`]), random
//! multistarts derive from explicit seeds, and parallel reductions are
//! ordered, so identical configurations reproduce identical bytes.

/// Library version, recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod curve;
pub mod duality;
pub mod gamma;
pub mod group;
pub mod mderiv;
pub mod mesh;
pub mod metric;
pub mod solver;

pub use curve::{Control, CurveError, HorizontalCurve};
pub use duality::{
    check_phi_eq_lip, cone_competitor, cone_scheme, default_radii, delta_lower, duality_gap,
    global_lip_vs_esssup, pointwise_lip, smooth_competitor_sufficiency, validate_competitor,
    warm_oracle, Competitor, CompetitorKind, ConeSchemeRow, DistOracle, DualityError,
    DualityGapReport, GlobalLipReport, PhiLipReport, PhiLipRow, PointwiseLip, SmoothingReport,
    SmoothingRow, Validation,
};
pub use gamma::{
    continuous_convergence_check, equicontinuity_fit, interval_oracle, j_eval, l_eval,
    recovery_sequence, uniform_distance_gap, Atom, AtomicMeasure, ConvergenceReport,
    ConvergenceRow, DistanceFamily, EquicontinuityReport, FamilyKind, GammaError, Interval,
    OmegaBox, RecoveryReport, RecoveryRow, UniformGapReport, CHECKERBOARD_REF_N,
};
pub use group::{BracketRule, CarnotGroup, GroupError, GroupSpec, HorizontalVector, Point};
pub use metric::{
    bidual_check, dual_eval, metric_from_config, semicontinuity_probe, verify_metric_axioms,
    AxiomReport, BidualReport, DualMetric, DualStrategy, MetricConfig, MetricError, Regularity,
    SemicontinuityProbe, SubFinslerMetric,
};
pub use mderiv::{
    check_convexity, compare_with_metric, fit_equivalence_constant, metric_derivative,
    sandwich_bounds, CompareReport, CompareRow, ConvexityReport, ConvexityRow, MDerivEstimate,
};
pub use solver::{
    cc_distance, competitor_lower_bound, dcc_equivalence_report, derive_seed,
    first_layer_lower_bound, solve_batch, solve_distance, solve_distance_with_init,
    sphere_sample, strengthen_lower_bound, CompetitorBound, DistanceEstimate, EquivalencePair,
    EquivalenceReport, SolverConfig, SolverError, SpherePoint,
};
