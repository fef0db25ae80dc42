//! Variational convergence laboratory: the distance functional `J` and
//! length functional `L` over degenerating families of metrics.
//!
//! A family assigns index `n` a fiber metric φ_n (hence a distance d_n
//! through the solver) together with its limit metric. Three kinds are
//! built in: uniform scaling `(1 + 1/n)·φ`, an oscillating checkerboard
//! with cell size `1/n`, and mixing `(1 − 1/n)·φ + (1/n)·ψ`. All members
//! of one family are equivalent to the Euclidean fiber norm with a single
//! constant, which keeps every distance estimate on one common scale.
//!
//! Every quantity that passes through the solver is carried as an
//! interval `[Σ w·lower, Σ w·upper]`; tables report midpoints with widths
//! as the uncertainty, and checks never claim more than the widths allow.
//! Measures are finite and atomic: weak convergence is realized
//! constructively by drifting atoms and converging weights, never tested
//! abstractly.

use std::sync::Arc;

use thiserror::Error;

use crate::curve::{CurveError, HorizontalCurve};
use crate::group::{CarnotGroup, Point};
use crate::metric::{EvalFn, MetricError, Regularity, SubFinslerMetric};
use crate::solver::{solve_distance, SolverConfig, SolverError};

/// Checkerboard families have no closed-form limit; the member at this
/// index stands in for the homogenized metric in reports.
pub const CHECKERBOARD_REF_N: usize = 64;

/// Errors from measures, domains, and functional evaluations.
#[derive(Debug, Error)]
pub enum GammaError {
    #[error("sampling box is malformed: {detail}")]
    BadBox { detail: String },
    #[error("atom {index} has non-positive weight {weight}")]
    BadWeight { index: usize, weight: f64 },
    #[error("atom {index} lies outside the sampling box")]
    AtomOutsideDomain { index: usize },
    #[error("metric {name:?} is not continuous, so its length functional need not represent the distance")]
    NotContinuousMetric { name: String },
    #[error("atom {index}: {source}")]
    AtomFailed { index: usize, source: SolverError },
    #[error("recovery segment {segment}: {source}")]
    SegmentFailed { segment: usize, source: SolverError },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// A solver-backed estimate carried as a two-sided bracket.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Axis-aligned sampling box Ω in exponential coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl OmegaBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, GammaError> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(GammaError::BadBox {
                detail: "bounds must be non-empty and of equal dimension".into(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| a > b || !a.is_finite() || !b.is_finite()) {
            return Err(GammaError::BadBox {
                detail: "need finite lo <= hi on every axis".into(),
            });
        }
        Ok(OmegaBox { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, p: &Point) -> bool {
        p.coords.len() == self.lo.len()
            && p.coords
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(c, (a, b))| *a <= *c && *c <= *b)
    }

    /// Uniform lattice with `per_axis` points on every axis (endpoints
    /// included; a single point sits at the center). Deterministic
    /// row-major order.
    pub fn grid(&self, per_axis: usize) -> Vec<Point> {
        assert!(per_axis >= 1, "need at least one point per axis");
        let d = self.dim();
        let total = per_axis.pow(d as u32);
        let mut points = Vec::with_capacity(total);
        for flat in 0..total {
            let mut coords = Vec::with_capacity(d);
            let mut rest = flat;
            for axis in 0..d {
                let idx = rest % per_axis;
                rest /= per_axis;
                let frac = if per_axis == 1 {
                    0.5
                } else {
                    idx as f64 / (per_axis - 1) as f64
                };
                coords.push(self.lo[axis] + frac * (self.hi[axis] - self.lo[axis]));
            }
            points.push(Point::new(coords));
        }
        points
    }
}

/// One weighted pair of a transport-style measure on Ω×Ω.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub x: Point,
    pub y: Point,
    pub weight: f64,
}

/// A positive finite atomic measure on Ω×Ω.
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    atoms: Vec<Atom>,
}

impl AtomicMeasure {
    /// Validates weights and membership in the sampling box.
    pub fn new(atoms: Vec<Atom>, omega: &OmegaBox) -> Result<Self, GammaError> {
        for (index, atom) in atoms.iter().enumerate() {
            if !(atom.weight > 0.0 && atom.weight.is_finite()) {
                return Err(GammaError::BadWeight {
                    index,
                    weight: atom.weight,
                });
            }
            if !omega.contains(&atom.x) || !omega.contains(&atom.y) {
                return Err(GammaError::AtomOutsideDomain { index });
            }
        }
        Ok(AtomicMeasure { atoms })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }
}

/// How a family degenerates toward its limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    /// φ_n = (1 + 1/n)·φ.
    Scaling,
    /// Checkerboard coefficient field with cell size 1/n.
    Checkerboard,
    /// φ_n = (1 − 1/n)·φ + (1/n)·ψ.
    Mixing,
}

/// An indexed family of fiber metrics with a declared limit and one
/// Euclidean-equivalence constant valid across all members.
#[derive(Clone)]
pub struct DistanceFamily {
    kind: FamilyKind,
    limit: SubFinslerMetric,
    other: Option<SubFinslerMetric>,
    checker: Option<(f64, f64)>,
    fiber_dim: usize,
}

impl std::fmt::Debug for DistanceFamily {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("DistanceFamily")
            .field("kind", &self.kind)
            .field("limit", &self.limit.name())
            .finish()
    }
}

impl DistanceFamily {
    /// Uniform inflation toward φ: members (1 + 1/n)·φ.
    pub fn scaling(limit: SubFinslerMetric) -> Self {
        let fiber_dim = limit.fiber_dim();
        DistanceFamily {
            kind: FamilyKind::Scaling,
            limit,
            other: None,
            checker: None,
            fiber_dim,
        }
    }

    /// Oscillating coefficient field on cells of side 1/n. The declared
    /// limit is the member at [`CHECKERBOARD_REF_N`] — a numerical
    /// stand-in for the homogenized metric, which has no closed form.
    pub fn checkerboard(fiber_dim: usize, low: f64, high: f64) -> Result<Self, GammaError> {
        let limit = SubFinslerMetric::checkerboard(
            fiber_dim,
            1.0 / CHECKERBOARD_REF_N as f64,
            low,
            high,
        )?;
        Ok(DistanceFamily {
            kind: FamilyKind::Checkerboard,
            limit,
            other: None,
            checker: Some((low, high)),
            fiber_dim,
        })
    }

    /// Convex interpolation from ψ toward φ: members (1−1/n)·φ + (1/n)·ψ.
    /// Both metrics must share the fiber dimension.
    pub fn mixing(limit: SubFinslerMetric, other: SubFinslerMetric) -> Self {
        assert_eq!(
            limit.fiber_dim(),
            other.fiber_dim(),
            "mixing requires one fiber dimension"
        );
        let fiber_dim = limit.fiber_dim();
        DistanceFamily {
            kind: FamilyKind::Mixing,
            limit,
            other: Some(other),
            checker: None,
            fiber_dim,
        }
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn limit(&self) -> &SubFinslerMetric {
        &self.limit
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    /// Euclidean-equivalence constant valid for every member with n ≥ 1.
    pub fn uniform_alpha(&self) -> f64 {
        match self.kind {
            FamilyKind::Scaling => 2.0 * self.limit.alpha(),
            FamilyKind::Checkerboard => self.limit.alpha(),
            FamilyKind::Mixing => self
                .limit
                .alpha()
                .max(self.other.as_ref().expect("mixing stores other").alpha()),
        }
    }

    /// The n-th member (n ≥ 1).
    pub fn member(&self, n: usize) -> SubFinslerMetric {
        assert!(n >= 1, "family indices start at 1");
        let eps = 1.0 / n as f64;
        match self.kind {
            FamilyKind::Scaling => {
                let base = self.limit.clone();
                let factor = 1.0 + eps;
                let eval: EvalFn = Arc::new(move |x: &Point, v: &[f64]| factor * base.eval(x, v));
                SubFinslerMetric::from_rule(
                    &format!("{}*(1+1/{n})", self.limit.name()),
                    eval,
                    self.fiber_dim,
                    factor * self.limit.alpha(),
                    self.limit.regularity(),
                    self.limit.is_convex(),
                    self.limit.base_dependent(),
                )
            }
            FamilyKind::Checkerboard => {
                let (low, high) = self.checker.expect("checkerboard stores coefficients");
                SubFinslerMetric::checkerboard(self.fiber_dim, eps, low, high)
                    .expect("validated at construction")
            }
            FamilyKind::Mixing => {
                let a = self.limit.clone();
                let b = self.other.clone().expect("mixing stores other");
                let eval: EvalFn = Arc::new(move |x: &Point, v: &[f64]| {
                    (1.0 - eps) * a.eval(x, v) + eps * b.eval(x, v)
                });
                let other = self.other.as_ref().expect("mixing stores other");
                let reg = if self.limit.regularity() == other.regularity() {
                    self.limit.regularity()
                } else {
                    Regularity::Borel
                };
                SubFinslerMetric::from_rule(
                    &format!("mix[{}<-{}; 1/{n}]", self.limit.name(), other.name()),
                    eval,
                    self.fiber_dim,
                    self.limit.alpha().max(other.alpha()),
                    reg,
                    self.limit.is_convex() && other.is_convex(),
                    self.limit.base_dependent() || other.base_dependent(),
                )
            }
        }
    }
}

/// Solver-backed interval oracle for one metric: `(lower, upper)` per
/// query. Owns its configuration so it can be handed to the functionals.
pub fn interval_oracle(
    group: Arc<CarnotGroup>,
    phi: SubFinslerMetric,
    cfg: SolverConfig,
) -> impl FnMut(&Point, &Point) -> Result<(f64, f64), SolverError> {
    move |a: &Point, b: &Point| {
        let est = solve_distance(&group, &phi, a, b, &cfg)?;
        Ok((est.lower, est.upper))
    }
}

/// The distance functional `J(μ) = ∫ d dμ` as an interval:
/// `[Σ w·lower, Σ w·upper]` over the atoms. A failing atom aborts with
/// its index attached.
pub fn j_eval(
    oracle: &mut dyn FnMut(&Point, &Point) -> Result<(f64, f64), SolverError>,
    mu: &AtomicMeasure,
) -> Result<Interval, GammaError> {
    let mut lower = 0.0;
    let mut upper = 0.0;
    for (index, atom) in mu.atoms().iter().enumerate() {
        let (lo, hi) =
            oracle(&atom.x, &atom.y).map_err(|source| GammaError::AtomFailed { index, source })?;
        lower += atom.weight * lo;
        upper += atom.weight * hi;
    }
    Ok(Interval { lower, upper })
}

/// The length functional `L(γ) = ∫ φ(γ, γ̇)` — the curve's length — for a
/// continuous convex metric. The continuity precondition is what licenses
/// reading this length as the intrinsic-distance functional.
pub fn l_eval(phi: &SubFinslerMetric, gamma: &HorizontalCurve) -> Result<f64, GammaError> {
    if phi.regularity() != Regularity::Continuous {
        return Err(GammaError::NotContinuousMetric {
            name: phi.name().into(),
        });
    }
    if !phi.is_convex() {
        return Err(GammaError::NotContinuousMetric {
            name: phi.name().into(),
        });
    }
    Ok(gamma.length(phi))
}

/// Uniform-convergence probe of d_n against the limit distance.
#[derive(Debug, Clone)]
pub struct UniformGapReport {
    pub n: usize,
    /// Max over grid pairs of |midpoint(d_n) − midpoint(d)|.
    pub max_gap: f64,
    /// Largest interval width among all the estimates involved.
    pub max_width: f64,
    pub pairs: usize,
}

/// Measures `max |d_n − d|` over all pairs of the compact grid, reporting
/// solver interval widths as the uncertainty of that number.
pub fn uniform_distance_gap(
    group: &Arc<CarnotGroup>,
    family: &DistanceFamily,
    n: usize,
    k_grid: &[Point],
    cfg: &SolverConfig,
) -> Result<UniformGapReport, GammaError> {
    let member = family.member(n);
    let mut max_gap = 0.0_f64;
    let mut max_width = 0.0_f64;
    let mut pairs = 0;
    for i in 0..k_grid.len() {
        for j in (i + 1)..k_grid.len() {
            let en = solve_distance(group, &member, &k_grid[i], &k_grid[j], cfg)?;
            let e = solve_distance(group, family.limit(), &k_grid[i], &k_grid[j], cfg)?;
            max_gap = max_gap.max((en.midpoint() - e.midpoint()).abs());
            max_width = max_width.max(en.width()).max(e.width());
            pairs += 1;
        }
    }
    Ok(UniformGapReport {
        n,
        max_gap,
        max_width,
        pairs,
    })
}

/// One stage of the continuous-convergence table.
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub n: usize,
    pub j_n: Interval,
    /// |midpoint(J_n(μ_n)) − midpoint(J(μ))|.
    pub error: f64,
    /// `2·(max interval width) + 2c/n` with `c` fitted on the first row;
    /// the doubling absorbs higher-order corrections, which are strongest
    /// exactly where the fit is taken.
    pub tolerance: f64,
    pub within: bool,
}

/// Desk-scale evidence for continuous convergence of J_n to J.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub j_limit: Interval,
    pub rows: Vec<ConvergenceRow>,
    pub all_within: bool,
    /// Midpoint errors never rise by more than the interval slack.
    pub decreasing: bool,
    /// The fitted envelope coefficient: error₀ · n₀.
    pub fitted_rate: f64,
}

/// Evaluates `J_n(μ_n)` down the schedule against `J(μ)` under the limit,
/// fitting a `c/n` envelope on the first stage and checking every later
/// stage stays below `2·max-width + 2c/n`.
pub fn continuous_convergence_check(
    group: &Arc<CarnotGroup>,
    family: &DistanceFamily,
    mu_sequence: &[AtomicMeasure],
    mu_limit: &AtomicMeasure,
    n_schedule: &[usize],
    cfg: &SolverConfig,
) -> Result<ConvergenceReport, GammaError> {
    assert_eq!(
        mu_sequence.len(),
        n_schedule.len(),
        "one measure per schedule entry"
    );
    assert!(
        n_schedule.windows(2).all(|w| w[0] < w[1]) && !n_schedule.is_empty(),
        "schedule must be non-empty and strictly increasing"
    );
    let mut limit_oracle = interval_oracle(group.clone(), family.limit().clone(), cfg.clone());
    let j_limit = j_eval(&mut limit_oracle, mu_limit)?;

    let mut stages = Vec::with_capacity(n_schedule.len());
    let mut max_width = j_limit.width();
    for (&n, mu_n) in n_schedule.iter().zip(mu_sequence) {
        let mut oracle = interval_oracle(group.clone(), family.member(n), cfg.clone());
        let j_n = j_eval(&mut oracle, mu_n)?;
        max_width = max_width.max(j_n.width());
        stages.push((n, j_n));
    }

    let first_error = (stages[0].1.midpoint() - j_limit.midpoint()).abs();
    let fitted_rate = first_error * n_schedule[0] as f64;
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(stages.len());
    for (n, j_n) in stages {
        let error = (j_n.midpoint() - j_limit.midpoint()).abs();
        let tolerance = 2.0 * max_width + 2.0 * fitted_rate / n as f64;
        rows.push(ConvergenceRow {
            n,
            j_n,
            error,
            within: error <= tolerance,
            tolerance,
        });
    }
    let slack = 2.0 * max_width;
    Ok(ConvergenceReport {
        all_within: rows.iter().all(|r| r.within),
        decreasing: rows.windows(2).all(|w| w[1].error <= w[0].error + slack),
        j_limit,
        rows,
        fitted_rate,
    })
}

/// One stage of the recovery construction.
#[derive(Debug, Clone)]
pub struct RecoveryRow {
    pub n: usize,
    /// Number of equal parameter intervals the target was split into.
    pub r: usize,
    /// The almost-geodesic replacement on each parameter interval; piece
    /// `s` starts exactly at γ(s/r) and runs on `[s/r, (s+1)/r]`.
    pub pieces: Vec<HorizontalCurve>,
    /// Σ of the segment upper estimates — the curve's d_n-length budget.
    pub l_n: f64,
    /// Length of the unmodified target under the member metric.
    pub l_n_gamma: f64,
    /// The construction's slack target: r · 2^{−r}.
    pub budget: f64,
    /// Σ of solver interval widths — what the solver actually certified,
    /// standing in for the budget when it is larger.
    pub solver_slack: f64,
    /// Sup over the parameter of the gauge of log(γ(t)⁻¹ γ_n(t)).
    pub sup_gauge_distance: f64,
    /// l_n ≤ l_n_gamma + max(budget, solver_slack).
    pub within_bound: bool,
}

impl RecoveryRow {
    /// Evaluates the recovery curve at `t ∈ [0, 1]` by dispatching to the
    /// piece covering `t`.
    pub fn evaluate(&self, t: f64) -> Result<Point, CurveError> {
        let r = self.pieces.len();
        let scaled = t * r as f64;
        let s = (scaled.floor() as usize).min(r - 1);
        self.pieces[s].evaluate((scaled - s as f64).clamp(0.0, 1.0))
    }
}

/// Report of the recovery-sequence construction against a target curve.
#[derive(Debug, Clone)]
pub struct RecoveryReport {
    /// Length of the target under the limit metric.
    pub l_limit: f64,
    pub rows: Vec<RecoveryRow>,
}

/// Builds recovery curves: stage (n, r) splits the parameter into `r`
/// equal intervals and replaces the target on each by the solver's best
/// d_n-curve between the endpoints, aiming for per-segment slack 2^{−r}.
/// When the solver's certified width exceeds that, the width is recorded
/// and stands in for the budget — the report carries both numbers.
pub fn recovery_sequence(
    group: &Arc<CarnotGroup>,
    family: &DistanceFamily,
    gamma: &HorizontalCurve,
    schedule: &[(usize, usize)],
    cfg: &SolverConfig,
) -> Result<RecoveryReport, GammaError> {
    assert!(
        schedule.iter().all(|&(n, r)| n >= 1 && r >= 1),
        "schedule entries must have n >= 1 and r >= 1"
    );
    let l_limit = l_eval(family.limit(), gamma)?;
    let mut rows = Vec::with_capacity(schedule.len());
    for &(n, r) in schedule {
        let member = family.member(n);
        let mut l_n = 0.0;
        let mut solver_slack = 0.0;
        let mut pieces = Vec::with_capacity(r);
        for s in 0..r {
            let a = gamma.evaluate(s as f64 / r as f64)?;
            let b = gamma.evaluate((s + 1) as f64 / r as f64)?;
            let est = solve_distance(group, &member, &a, &b, cfg)
                .map_err(|source| GammaError::SegmentFailed { segment: s, source })?;
            l_n += est.upper;
            solver_slack += est.width();
            pieces.push(est.curve);
        }
        let budget = r as f64 * (2.0_f64).powi(-(r as i32));
        let l_n_gamma = gamma.length(&member);
        let mut row = RecoveryRow {
            n,
            r,
            within_bound: l_n <= l_n_gamma + budget.max(solver_slack) + 1e-9,
            pieces,
            l_n,
            l_n_gamma,
            budget,
            solver_slack,
            sup_gauge_distance: 0.0,
        };
        let samples = 64 * r;
        for k in 0..=samples {
            let t = k as f64 / samples as f64;
            let p = gamma.evaluate(t)?;
            let q = row.evaluate(t)?;
            row.sup_gauge_distance = row
                .sup_gauge_distance
                .max(group.homogeneous_gauge(&group.log_between(&p, &q)));
        }
        rows.push(row);
    }
    Ok(RecoveryReport { l_limit, rows })
}

/// Hölder-equicontinuity fit of a family over a compact grid.
#[derive(Debug, Clone)]
pub struct EquicontinuityReport {
    /// Smallest constant covering all members in the schedule.
    pub constant: f64,
    /// Per-member constants, in schedule order.
    pub per_n: Vec<(usize, f64)>,
    /// The limit metric's own fit.
    pub limit_constant: f64,
    /// No member exceeds twice the limit's fit.
    pub uniformly_bounded: bool,
}

/// Fits the smallest C with |d_n(x,y) − d_n(x′,y′)| ≤ C(|x−x′|^{1/k} +
/// |y−y′|^{1/k}) over grid 4-tuples, for every n in the schedule and for
/// the limit, where k is the group's step.
pub fn equicontinuity_fit(
    group: &Arc<CarnotGroup>,
    family: &DistanceFamily,
    k_grid: &[Point],
    n_schedule: &[usize],
    cfg: &SolverConfig,
) -> Result<EquicontinuityReport, GammaError> {
    let limit_constant = holder_fit(group, family.limit(), k_grid, cfg)?;
    let mut per_n = Vec::with_capacity(n_schedule.len());
    let mut constant = limit_constant;
    for &n in n_schedule {
        let c = holder_fit(group, &family.member(n), k_grid, cfg)?;
        constant = constant.max(c);
        per_n.push((n, c));
    }
    Ok(EquicontinuityReport {
        constant,
        uniformly_bounded: per_n.iter().all(|&(_, c)| c <= 2.0 * limit_constant + 1e-12),
        per_n,
        limit_constant,
    })
}

/// Smallest Hölder constant for one metric over the grid's 4-tuples.
fn holder_fit(
    group: &Arc<CarnotGroup>,
    phi: &SubFinslerMetric,
    k_grid: &[Point],
    cfg: &SolverConfig,
) -> Result<f64, GammaError> {
    let root = 1.0 / group.step() as f64;
    let euclid = |p: &Point, q: &Point| {
        p.coords
            .iter()
            .zip(&q.coords)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..k_grid.len() {
        for j in (i + 1)..k_grid.len() {
            let est = solve_distance(group, phi, &k_grid[i], &k_grid[j], cfg)?;
            pairs.push((i, j, est.midpoint()));
        }
    }
    let mut c = 0.0_f64;
    for (a, pair_a) in pairs.iter().enumerate() {
        for pair_b in pairs.iter().skip(a + 1) {
            let denom = euclid(&k_grid[pair_a.0], &k_grid[pair_b.0]).powf(root)
                + euclid(&k_grid[pair_a.1], &k_grid[pair_b.1]).powf(root);
            if denom > 1e-12 {
                c = c.max((pair_a.2 - pair_b.2).abs() / denom);
            }
        }
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::Control;
    use crate::group::builtin;
    use approx::assert_abs_diff_eq;

    fn abelian() -> Arc<CarnotGroup> {
        Arc::new(CarnotGroup::new(builtin("abelian2").unwrap()).unwrap())
    }

    fn heis() -> Arc<CarnotGroup> {
        Arc::new(CarnotGroup::new(builtin("heisenberg1").unwrap()).unwrap())
    }

    fn quick_cfg() -> SolverConfig {
        SolverConfig {
            segments: 16,
            multistarts: 2,
            max_iters: 60,
            refine_levels: 0,
            seed: 5,
            ..SolverConfig::default()
        }
    }

    fn unit_box(dim: usize) -> OmegaBox {
        OmegaBox::new(vec![-1.0; dim], vec![1.0; dim]).unwrap()
    }

    #[test]
    fn box_validation_and_grid() {
        assert!(matches!(
            OmegaBox::new(vec![0.0], vec![-1.0]),
            Err(GammaError::BadBox { .. })
        ));
        assert!(matches!(
            OmegaBox::new(vec![], vec![]),
            Err(GammaError::BadBox { .. })
        ));
        let b = OmegaBox::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        let g = b.grid(3);
        assert_eq!(g.len(), 9);
        assert!(g.iter().all(|p| b.contains(p)));
        assert_eq!(g[0].coords, vec![0.0, 0.0]);
        assert_eq!(g[8].coords, vec![1.0, 2.0]);
        assert_eq!(b.grid(1)[0].coords, vec![0.5, 1.0]);
    }

    #[test]
    fn measure_validation() {
        let omega = unit_box(2);
        let inside = Point::new(vec![0.2, -0.3]);
        let outside = Point::new(vec![1.5, 0.0]);
        let err = AtomicMeasure::new(
            vec![Atom {
                x: inside.clone(),
                y: inside.clone(),
                weight: -1.0,
            }],
            &omega,
        );
        assert!(matches!(err, Err(GammaError::BadWeight { index: 0, .. })));
        let err = AtomicMeasure::new(
            vec![Atom {
                x: inside.clone(),
                y: outside,
                weight: 1.0,
            }],
            &omega,
        );
        assert!(matches!(err, Err(GammaError::AtomOutsideDomain { index: 0 })));
        let mu = AtomicMeasure::new(
            vec![
                Atom {
                    x: inside.clone(),
                    y: Point::new(vec![0.5, 0.5]),
                    weight: 2.0,
                },
                Atom {
                    x: Point::new(vec![-0.5, 0.0]),
                    y: inside,
                    weight: 0.5,
                },
            ],
            &omega,
        )
        .unwrap();
        assert_abs_diff_eq!(mu.total_mass(), 2.5);
    }

    #[test]
    fn j_eval_matches_single_distances_and_is_linear_in_weights() {
        let g = abelian();
        let phi = SubFinslerMetric::euclidean(2);
        let omega = unit_box(2);
        let a = Point::new(vec![0.0, 0.0]);
        let b = Point::new(vec![0.6, 0.8]);
        let c = Point::new(vec![-0.3, 0.4]);
        let single = AtomicMeasure::new(
            vec![Atom {
                x: a.clone(),
                y: b.clone(),
                weight: 1.0,
            }],
            &omega,
        )
        .unwrap();
        let mut oracle = interval_oracle(g.clone(), phi.clone(), quick_cfg());
        let j1 = j_eval(&mut oracle, &single).unwrap();
        assert_abs_diff_eq!(j1.midpoint(), 1.0, epsilon = 1e-9);

        let two = AtomicMeasure::new(
            vec![
                Atom {
                    x: a.clone(),
                    y: b.clone(),
                    weight: 2.0,
                },
                Atom {
                    x: a.clone(),
                    y: c.clone(),
                    weight: 3.0,
                },
            ],
            &omega,
        )
        .unwrap();
        let j2 = j_eval(&mut oracle, &two).unwrap();
        assert_abs_diff_eq!(j2.midpoint(), 2.0 * 1.0 + 3.0 * 0.5, epsilon = 1e-8);
        assert!(j2.width() >= 0.0);
    }

    #[test]
    fn scaling_member_scales_j_exactly() {
        let g = abelian();
        let family = DistanceFamily::scaling(SubFinslerMetric::euclidean(2));
        let omega = unit_box(2);
        let mu = AtomicMeasure::new(
            vec![Atom {
                x: Point::new(vec![-0.2, 0.1]),
                y: Point::new(vec![0.4, 0.9]),
                weight: 1.5,
            }],
            &omega,
        )
        .unwrap();
        let n = 8;
        let mut base = interval_oracle(g.clone(), family.limit().clone(), quick_cfg());
        let mut scaled = interval_oracle(g.clone(), family.member(n), quick_cfg());
        let j = j_eval(&mut base, &mu).unwrap();
        let jn = j_eval(&mut scaled, &mu).unwrap();
        let factor = 1.0 + 1.0 / n as f64;
        assert_abs_diff_eq!(jn.midpoint(), factor * j.midpoint(), epsilon = 1e-8);
    }

    #[test]
    fn l_eval_requires_a_continuous_metric() {
        let g = abelian();
        let straight = HorizontalCurve::new(
            g.clone(),
            g.identity(),
            Control::new(vec![vec![0.6, 0.8]]),
        )
        .unwrap();
        let phi = SubFinslerMetric::euclidean(2);
        assert_abs_diff_eq!(l_eval(&phi, &straight).unwrap(), 1.0, epsilon = 1e-12);
        let board = SubFinslerMetric::checkerboard(2, 0.25, 1.0, 2.0).unwrap();
        assert!(matches!(
            l_eval(&board, &straight),
            Err(GammaError::NotContinuousMetric { .. })
        ));
    }

    #[test]
    fn uniform_gap_scales_like_the_family_and_vanishes_for_constant() {
        let g = abelian();
        let grid = vec![
            Point::new(vec![0.0, 0.0]),
            Point::new(vec![1.0, 0.0]),
            Point::new(vec![0.0, 1.0]),
        ];
        let phi = SubFinslerMetric::euclidean(2);
        let scaling = DistanceFamily::scaling(phi.clone());
        let n = 4;
        let report = uniform_distance_gap(&g, &scaling, n, &grid, &quick_cfg()).unwrap();
        // Max grid distance is √2; the member inflates it by 1/n.
        assert_abs_diff_eq!(
            report.max_gap,
            (2.0_f64).sqrt() / n as f64,
            epsilon = 1e-7
        );
        let constant = DistanceFamily::mixing(phi.clone(), phi);
        let flat = uniform_distance_gap(&g, &constant, 7, &grid, &quick_cfg()).unwrap();
        assert!(flat.max_gap <= 1e-9, "gap {}", flat.max_gap);
    }

    #[test]
    fn convergence_table_tracks_the_scaling_rate() {
        let g = abelian();
        let family = DistanceFamily::scaling(SubFinslerMetric::euclidean(2));
        let omega = unit_box(2);
        let mu = AtomicMeasure::new(
            vec![
                Atom {
                    x: Point::new(vec![0.0, 0.0]),
                    y: Point::new(vec![0.6, 0.8]),
                    weight: 1.0,
                },
                Atom {
                    x: Point::new(vec![-0.5, -0.5]),
                    y: Point::new(vec![0.5, 0.5]),
                    weight: 0.5,
                },
            ],
            &omega,
        )
        .unwrap();
        let schedule = [2, 4, 8, 16];
        let mus = vec![mu.clone(); schedule.len()];
        let report =
            continuous_convergence_check(&g, &family, &mus, &mu, &schedule, &quick_cfg())
                .unwrap();
        assert!(report.all_within, "rows: {:?}", report.rows);
        assert!(report.decreasing);
        // Fixed measure: the midpoint error is J(μ)/n on the nose.
        let j = report.j_limit.midpoint();
        for row in &report.rows {
            assert_abs_diff_eq!(row.error, j / row.n as f64, epsilon = 1e-7);
        }
    }

    #[test]
    fn drifting_atoms_still_converge() {
        let g = abelian();
        let phi = SubFinslerMetric::euclidean(2);
        let family = DistanceFamily::mixing(phi.clone(), phi);
        let omega = unit_box(2);
        let target = Atom {
            x: Point::new(vec![0.0, 0.0]),
            y: Point::new(vec![0.6, 0.0]),
            weight: 1.0,
        };
        let schedule = [2, 4, 8];
        let mus: Vec<AtomicMeasure> = schedule
            .iter()
            .map(|&n| {
                let drift = 1.0 / n as f64;
                AtomicMeasure::new(
                    vec![Atom {
                        x: Point::new(vec![drift, 0.0]),
                        y: Point::new(vec![0.6, drift]),
                        weight: 1.0 + drift,
                    }],
                    &omega,
                )
                .unwrap()
            })
            .collect();
        let mu_limit = AtomicMeasure::new(vec![target], &omega).unwrap();
        let report =
            continuous_convergence_check(&g, &family, &mus, &mu_limit, &schedule, &quick_cfg())
                .unwrap();
        assert!(report.all_within, "rows: {:?}", report.rows);
    }

    #[test]
    fn recovery_on_a_geodesic_stays_within_budget() {
        let g = abelian();
        let phi = SubFinslerMetric::euclidean(2);
        let family = DistanceFamily::mixing(phi.clone(), phi);
        let gamma = HorizontalCurve::new(
            g.clone(),
            g.identity(),
            Control::new(vec![vec![0.8, 0.6]]),
        )
        .unwrap();
        let report = recovery_sequence(
            &g,
            &family,
            &gamma,
            &[(2, 2), (4, 4), (8, 6)],
            &quick_cfg(),
        )
        .unwrap();
        assert_abs_diff_eq!(report.l_limit, 1.0, epsilon = 1e-12);
        for row in &report.rows {
            assert!(row.within_bound, "row: n={} r={} l_n={}", row.n, row.r, row.l_n);
            // The witness segments of a straight geodesic are the segments
            // themselves, so the stitched curve hugs the target.
            assert!(
                row.sup_gauge_distance <= 1e-6,
                "sup gauge {}",
                row.sup_gauge_distance
            );
            assert!(row.l_n <= report.l_limit + row.budget.max(row.solver_slack) + 1e-9);
        }
    }

    #[test]
    fn recovery_under_scaling_tracks_the_member_length() {
        let g = heis();
        let phi = SubFinslerMetric::euclidean(2);
        let family = DistanceFamily::scaling(phi);
        // A straight horizontal segment in the Heisenberg group.
        let gamma = HorizontalCurve::new(
            g.clone(),
            g.identity(),
            Control::new(vec![vec![1.0, 0.5]]),
        )
        .unwrap();
        let report =
            recovery_sequence(&g, &family, &gamma, &[(4, 2), (16, 3)], &quick_cfg()).unwrap();
        for row in &report.rows {
            assert!(row.within_bound, "row n={} r={}", row.n, row.r);
            // limsup L_n(γ_n) ≤ L(γ): the member inflation (1+1/n) fades.
            let inflated = (1.0 + 1.0 / row.n as f64) * report.l_limit;
            assert!(row.l_n <= inflated + row.budget.max(row.solver_slack) + 1e-9);
        }
    }

    #[test]
    fn gamma_liminf_sample_check() {
        let g = abelian();
        let family = DistanceFamily::scaling(SubFinslerMetric::euclidean(2));
        let base = HorizontalCurve::new(
            g.clone(),
            g.identity(),
            Control::new(vec![vec![1.0, 0.0]; 8]),
        )
        .unwrap();
        let l_limit = l_eval(family.limit(), &base).unwrap();
        for n in [2usize, 4, 8] {
            // Perturb the control by a fading wiggle and measure under φ_n.
            let wiggle = 1.0 / n as f64;
            let values: Vec<Vec<f64>> = (0..8)
                .map(|j| vec![1.0, wiggle * if j % 2 == 0 { 1.0 } else { -1.0 }])
                .collect();
            let gamma_n =
                HorizontalCurve::new(g.clone(), g.identity(), Control::new(values))
                    .unwrap();
            let l_n = gamma_n.length(&family.member(n));
            assert!(
                l_n >= l_limit - 1e-9,
                "liminf violated at n={n}: {l_n} < {l_limit}"
            );
        }
    }

    #[test]
    fn j_is_monotone_under_pointwise_smaller_members() {
        let g = abelian();
        let phi = SubFinslerMetric::euclidean(2);
        // Deflating family: members (1 − 1/(2n))·φ ≤ φ pointwise, built as
        // mixing toward φ from the halved norm.
        let half = SubFinslerMetric::from_rule(
            "half-euclidean",
            Arc::new(|_: &Point, v: &[f64]| {
                0.5 * v.iter().map(|c| c * c).sum::<f64>().sqrt()
            }),
            2,
            2.0,
            Regularity::Continuous,
            true,
            false,
        );
        let family = DistanceFamily::mixing(phi.clone(), half);
        let omega = unit_box(2);
        let mu = AtomicMeasure::new(
            vec![
                Atom {
                    x: Point::new(vec![0.1, 0.0]),
                    y: Point::new(vec![0.9, 0.4]),
                    weight: 1.0,
                },
                Atom {
                    x: Point::new(vec![-0.7, 0.2]),
                    y: Point::new(vec![0.3, -0.6]),
                    weight: 2.0,
                },
            ],
            &omega,
        )
        .unwrap();
        let mut limit_oracle = interval_oracle(g.clone(), phi, quick_cfg());
        let j = j_eval(&mut limit_oracle, &mu).unwrap();
        for n in [2usize, 5, 10] {
            let mut oracle = interval_oracle(g.clone(), family.member(n), quick_cfg());
            let jn = j_eval(&mut oracle, &mu).unwrap();
            assert!(
                jn.upper <= j.upper + 1e-9 && jn.lower <= j.lower + 1e-9,
                "monotonicity failed at n={n}: {jn:?} vs {j:?}"
            );
        }
    }

    #[test]
    fn equicontinuity_constants_stay_uniform() {
        let g = abelian();
        let phi = SubFinslerMetric::euclidean(2);
        let family = DistanceFamily::scaling(phi);
        let grid = vec![
            Point::new(vec![0.0, 0.0]),
            Point::new(vec![0.5, 0.0]),
            Point::new(vec![0.0, 0.7]),
            Point::new(vec![0.6, 0.6]),
        ];
        let report =
            equicontinuity_fit(&g, &family, &grid, &[2, 4, 8], &quick_cfg()).unwrap();
        assert!(report.uniformly_bounded, "report: {report:?}");
        // Scaling members inflate the fit by exactly their factor.
        for &(n, c) in &report.per_n {
            let expected = (1.0 + 1.0 / n as f64) * report.limit_constant;
            assert_abs_diff_eq!(c, expected, epsilon = 1e-6);
        }
    }

    #[test]
    fn checkerboard_family_is_uniformly_equivalent() {
        let family = DistanceFamily::checkerboard(2, 1.0, 2.0).unwrap();
        let alpha = family.uniform_alpha();
        for n in [2usize, 4, 8, 16] {
            let member = family.member(n);
            assert_eq!(member.alpha(), alpha);
            assert!(member.base_dependent());
            // Coefficients stay inside [low, high] across cells.
            let v = [1.0, 0.0];
            for (px, py) in [(0.05, 0.05), (0.05 + 1.0 / n as f64, 0.05), (0.3, 0.9)] {
                let c = member.eval(&Point::new(vec![px, py]), &v);
                assert!((1.0..=2.0).contains(&c), "coefficient {c} at ({px},{py})");
            }
        }
        let g = abelian();
        // The n = 2 distance between cell centers respects the two-sided
        // Euclidean envelope from the coefficient range.
        let est = solve_distance(
            &g,
            &family.member(2),
            &Point::new(vec![0.25, 0.25]),
            &Point::new(vec![0.75, 0.25]),
            &quick_cfg(),
        )
        .unwrap();
        assert!(est.upper <= 2.0 * 0.5 + 1e-6, "upper {}", est.upper);
        // The distance itself is at least low·‖x−y‖ = 0.5, so any honest
        // upper estimate sits above it; the certified lower bound only
        // knows the declared sandwich ‖x−y‖/α.
        assert!(est.upper >= 0.5 - 1e-6, "upper {}", est.upper);
        assert!(est.lower >= 0.5 / alpha - 1e-9, "lower {}", est.lower);
    }
}
