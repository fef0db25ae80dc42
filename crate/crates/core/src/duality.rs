//! Lipschitz duality: bracketing the competitor distance δ_φ.
//!
//! δ_φ(x, y) is a supremum of |f(x) − f(y)| over functions whose
//! horizontal gradient stays inside the unit ball of φ — not finitely
//! searchable, but it can be bracketed: any validated competitor gives a
//! certified lower bound, and the intrinsic distance of the dual metric
//! φ⋆ gives an upper bound. Validation is honest by margin accounting: a
//! competitor's gradient constraint is checked on a finite grid, the
//! excess over 1 is recorded, and every bound it produces is deflated by
//! `1/(1 + margin)`.
//!
//! The module also measures pointwise Lipschitz constants against the
//! dual distance, compares them with φ applied to analytic gradients,
//! and runs the cone approximation scheme (distance cones over growing
//! anchor sets with shrinking slack) whose uniform convergence the
//! acceptance suite certifies.

use std::sync::Arc;

use thiserror::Error;

use crate::curve::Control;
use crate::group::{CarnotGroup, Point};
use crate::mderiv::extrapolate_tail;
use crate::mesh;
use crate::metric::{Regularity, SubFinslerMetric};
use crate::solver::{solve_distance, solve_distance_with_init, CompetitorBound, SolverConfig, SolverError};

/// Shared distance-oracle type: returns upper estimates.
pub type DistOracle = Arc<dyn Fn(&Point, &Point) -> Result<f64, SolverError> + Send + Sync>;

/// How a competitor was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompetitorKind {
    /// A user-supplied rule, possibly with an analytic horizontal gradient.
    Analytic,
    /// A distance cone over anchor points.
    Cone,
}

/// Record of a feasibility check on a finite grid.
#[derive(Debug, Clone, Copy)]
pub struct Validation {
    /// Largest feasibility ratio seen on the grid: `φ(x, ∇_G f(x))` for
    /// analytic rules, the Lipschitz quotient `|Δf|/d` over grid pairs
    /// for distance cones.
    pub grid_max: f64,
    /// `max(0, grid_max − 1)`; bounds deflate by `1/(1 + margin)`.
    pub margin: f64,
    /// Number of grid points inspected.
    pub grid_points: usize,
}

type ValueFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&Point) -> Vec<f64> + Send + Sync>;

/// A candidate for the δ_φ supremum: a scalar rule with an optional
/// analytic horizontal gradient and, after [`validate_competitor`], a
/// recorded feasibility margin.
#[derive(Clone)]
pub struct Competitor {
    name: String,
    f: ValueFn,
    grad_h: Option<GradFn>,
    kind: CompetitorKind,
    /// The distance a cone was built from; drives its validation.
    oracle: Option<DistOracle>,
    validation: Option<Validation>,
}

impl std::fmt::Debug for Competitor {
    fn fmt(&self, fm: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        fm.debug_struct("Competitor")
            .field("name", &self.name)
            .field("kind", &self.kind)
            .field("has_grad", &self.grad_h.is_some())
            .field("validation", &self.validation)
            .finish()
    }
}

impl Competitor {
    /// Wraps an analytic rule; pass the horizontal gradient when you have
    /// it, otherwise validation falls back to finite differences.
    pub fn analytic(
        name: impl Into<String>,
        f: ValueFn,
        grad_h: Option<GradFn>,
    ) -> Self {
        Competitor {
            name: name.into(),
            f,
            grad_h,
            kind: CompetitorKind::Analytic,
            oracle: None,
            validation: None,
        }
    }

    pub fn eval(&self, x: &Point) -> f64 {
        (self.f)(x)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> CompetitorKind {
        self.kind
    }

    /// Present once validated.
    pub fn validation(&self) -> Option<Validation> {
        self.validation
    }
}

impl CompetitorBound for Competitor {
    fn value(&self, x: &Point) -> f64 {
        (self.f)(x)
    }

    /// Unvalidated competitors report an infinite margin, deflating their
    /// bound to zero — never trusted by accident.
    fn margin(&self) -> f64 {
        self.validation.map_or(f64::INFINITY, |v| v.margin)
    }

    fn describe(&self) -> String {
        format!("competitor:{}", self.name)
    }
}

/// Errors from competitor construction and validation.
#[derive(Debug, Error)]
pub enum DualityError {
    /// Anchor values incompatible with the claimed Lipschitz constant.
    #[error(
        "anchor values {i} and {j} differ by {diff:.6e}, above the budget {allowed:.6e}"
    )]
    IncompatibleValues {
        i: usize,
        j: usize,
        diff: f64,
        allowed: f64,
    },
    /// No way to produce gradients for validation.
    #[error("cannot estimate a gradient: {detail}")]
    GradientUnavailable { detail: String },
    /// An operation that requires validated competitors met an unvalidated
    /// one.
    #[error("competitor {name:?} has not been validated")]
    NotValidated { name: String },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Builds the distance cone `f(x) = max_j(−L·d(x, aⱼ) + vⱼ) − slack`.
/// The anchor values must be compatible with `L` under the oracle's upper
/// estimates, which makes the cone L-Lipschitz with respect to the oracle
/// distance by construction.
pub fn cone_competitor(
    d_oracle: DistOracle,
    anchors: Vec<Point>,
    values: Vec<f64>,
    lip: f64,
    slack: f64,
) -> Result<Competitor, DualityError> {
    assert_eq!(anchors.len(), values.len(), "one value per anchor");
    assert!(!anchors.is_empty(), "cone needs at least one anchor");
    for i in 0..anchors.len() {
        for j in (i + 1)..anchors.len() {
            let allowed = lip * d_oracle(&anchors[i], &anchors[j])? + 1e-12;
            let diff = (values[i] - values[j]).abs();
            if diff > allowed {
                return Err(DualityError::IncompatibleValues { i, j, diff, allowed });
            }
        }
    }
    let f: ValueFn = {
        let anchors = anchors.clone();
        let values = values.clone();
        let oracle = d_oracle.clone();
        Arc::new(move |x: &Point| {
            let mut best = f64::NEG_INFINITY;
            for (a, v) in anchors.iter().zip(&values) {
                let d = oracle(x, a).unwrap_or(f64::INFINITY);
                best = best.max(-lip * d + v);
            }
            best - slack
        })
    };
    Ok(Competitor {
        name: format!("cone[{} anchors, L={lip}]", anchors.len()),
        f,
        grad_h: None,
        kind: CompetitorKind::Cone,
        oracle: Some(d_oracle),
        validation: None,
    })
}

/// Checks feasibility over the grid and returns the competitor with its
/// margin recorded.
///
/// Analytic rules are checked pointwise: `φ(x, ∇_G f(x)) ≤ 1`, with the
/// analytic gradient when present and central differences along the
/// horizontal frame (step 1e-5) otherwise. Distance cones are checked in
/// the equivalent metric-slope form instead — the Lipschitz quotient
/// `|f(p) − f(q)|/d(p, q)` over grid pairs against the distance the cone
/// was built from. The forms agree for smooth rules, but differentiating
/// a numerically solved distance at a tiny step measures the solver's
/// query-to-query noise rather than the slope, while the pair quotient
/// measures feasibility at the separation where the bounds actually use
/// the values.
pub fn validate_competitor(
    phi: &SubFinslerMetric,
    group: &CarnotGroup,
    mut candidate: Competitor,
    grid: &[Point],
) -> Result<Competitor, DualityError> {
    if grid.is_empty() {
        return Err(DualityError::GradientUnavailable {
            detail: "empty validation grid".into(),
        });
    }
    let grid_max = match (candidate.kind, &candidate.oracle) {
        (CompetitorKind::Cone, Some(oracle)) => {
            let values: Vec<f64> = grid.iter().map(|p| candidate.eval(p)).collect();
            let mut worst = 0.0_f64;
            for i in 0..grid.len() {
                for j in (i + 1)..grid.len() {
                    let d = oracle(&grid[i], &grid[j])?;
                    if d > 1e-12 {
                        worst = worst.max((values[i] - values[j]).abs() / d);
                    }
                }
            }
            worst
        }
        (CompetitorKind::Cone, None) => {
            return Err(DualityError::GradientUnavailable {
                detail: "cone has no underlying distance to validate against".into(),
            });
        }
        (CompetitorKind::Analytic, _) => {
            let m = group.horizontal_dim();
            let mut worst = 0.0_f64;
            for x in grid {
                let grad = match &candidate.grad_h {
                    Some(g) => g(x),
                    None => fd_horizontal_gradient(group, &candidate.f, x, m, 1e-5),
                };
                if grad.iter().any(|c| !c.is_finite()) {
                    return Err(DualityError::GradientUnavailable {
                        detail: format!("non-finite gradient at {:?}", x.coords),
                    });
                }
                worst = worst.max(phi.eval(x, &grad));
            }
            worst
        }
    };
    candidate.validation = Some(Validation {
        grid_max,
        margin: (grid_max - 1.0).max(0.0),
        grid_points: grid.len(),
    });
    Ok(candidate)
}

/// Central differences of `f` along the horizontal frame directions.
fn fd_horizontal_gradient(
    group: &CarnotGroup,
    f: &ValueFn,
    x: &Point,
    m: usize,
    step: f64,
) -> Vec<f64> {
    let mut grad = vec![0.0; m];
    let mut e = vec![0.0; m];
    for (c, g) in grad.iter_mut().enumerate() {
        e[c] = step;
        let up = f(&group.mul(x, &group.exp_layer1(&e)));
        e[c] = -step;
        let down = f(&group.mul(x, &group.exp_layer1(&e)));
        e[c] = 0.0;
        *g = (up - down) / (2.0 * step);
    }
    grad
}

/// Best deflated competitor bound `|f(x) − f(y)|/(1 + margin)` — a
/// certified lower bound for δ_φ. All competitors must be validated.
pub fn delta_lower(
    x: &Point,
    y: &Point,
    competitors: &[Competitor],
) -> Result<f64, DualityError> {
    let mut best = 0.0_f64;
    for comp in competitors {
        let val = comp.validation.ok_or_else(|| DualityError::NotValidated {
            name: comp.name.clone(),
        })?;
        best = best.max((comp.eval(x) - comp.eval(y)).abs() / (1.0 + val.margin));
    }
    Ok(best)
}

/// Two-sided bracket of δ_φ(x, y) for one pair.
#[derive(Debug, Clone)]
pub struct DualityGapReport {
    /// Certified lower bound from the validated distance cone at `x`.
    pub delta_lower: f64,
    /// Upper bound: intrinsic distance of the dual metric.
    pub d_dual_upper: f64,
    /// `(upper − lower)/upper`, 0 for coincident points.
    pub relative_gap: f64,
    /// Validation margin of the cone competitor.
    pub cone_margin: f64,
}

/// Brackets δ_φ(x, y): solves the dual intrinsic distance for the upper
/// bound and validates the proof's optimal competitor — the distance cone
/// `f = −d_{φ⋆}(x, ·)` — for the lower bound. The cone's value at `y`
/// reuses the reported upper estimate, so the ordering
/// `delta_lower ≤ d_dual_upper` holds by construction.
pub fn duality_gap(
    group: &Arc<CarnotGroup>,
    phi: &SubFinslerMetric,
    x: &Point,
    y: &Point,
    cfg: &SolverConfig,
    dual_resolution: usize,
) -> Result<DualityGapReport, DualityError> {
    let dual = phi.dual(dual_resolution);
    let est = solve_distance(group, &dual.metric, x, y, cfg)?;
    if est.upper == 0.0 {
        return Ok(DualityGapReport {
            delta_lower: 0.0,
            d_dual_upper: 0.0,
            relative_gap: 0.0,
            cone_margin: 0.0,
        });
    }
    let ws = Arc::new(WarmSolver::new(
        group.clone(),
        dual.metric.clone(),
        cfg.probe_profile(),
    ));
    // Validation grid: dilation-chord points between the endpoints, plus
    // the endpoints themselves. The (x, y) pair makes the quotient check
    // compare the full-quality estimate reused at `y` against the pair
    // oracle, so any grade mismatch lands in the margin.
    let w = Point::new(group.log_between(x, y));
    let mut grid: Vec<Point> = [0.35, 0.7]
        .iter()
        .map(|&t| {
            group
                .dilate(t, &w)
                .map(|q| group.mul(x, &q))
                .map_err(SolverError::from)
        })
        .collect::<Result<_, _>>()?;
    grid.push(x.clone());
    grid.push(y.clone());
    let cone = {
        let f: ValueFn = {
            let ws = ws.clone();
            let x0 = x.clone();
            let upper_xy = est.upper;
            let y0 = y.clone();
            Arc::new(move |z: &Point| {
                // Reuse the full-quality estimate for the reported endpoint.
                if z.coords == y0.coords {
                    return -upper_xy;
                }
                -(ws.value(&x0, z).unwrap_or(f64::INFINITY))
            })
        };
        let oracle: DistOracle = {
            let ws = ws.clone();
            Arc::new(move |a: &Point, b: &Point| ws.value(a, b))
        };
        Competitor {
            name: "cone[dual distance]".into(),
            f,
            grad_h: None,
            kind: CompetitorKind::Cone,
            oracle: Some(oracle),
            validation: None,
        }
    };
    let cone = validate_competitor(phi, group, cone, &grid)?;
    let lower = delta_lower(x, y, std::slice::from_ref(&cone))?;
    let margin = cone.validation().unwrap().margin;
    Ok(DualityGapReport {
        delta_lower: lower,
        d_dual_upper: est.upper,
        relative_gap: (est.upper - lower) / est.upper,
        cone_margin: margin,
    })
}

/// Deterministic warm-started solver over one metric. Consecutive calls
/// seed each other through a mutex-guarded control cache, so chains of
/// nearby queries converge fast and results never depend on thread count.
struct WarmSolver {
    group: Arc<CarnotGroup>,
    metric: SubFinslerMetric,
    cfg: SolverConfig,
    slot: std::sync::Mutex<Option<Control>>,
}

impl WarmSolver {
    fn new(group: Arc<CarnotGroup>, metric: SubFinslerMetric, cfg: SolverConfig) -> Self {
        WarmSolver {
            group,
            metric,
            cfg,
            slot: std::sync::Mutex::new(None),
        }
    }

    /// Upper estimate of d(a, b), warm-started from the previous call.
    fn value(&self, a: &Point, b: &Point) -> Result<f64, SolverError> {
        let init = self.slot.lock().unwrap().clone();
        let est =
            solve_distance_with_init(&self.group, &self.metric, a, b, &self.cfg, init.as_ref())?;
        *self.slot.lock().unwrap() = Some(est.curve.control().clone());
        Ok(est.upper)
    }
}

/// Deterministic warm-started oracle over one metric: each call seeds the
/// next solve of a nearby query with the previous control. Calls are
/// sequential (the cache is a mutex), so results do not depend on thread
/// count.
pub fn warm_oracle(
    group: Arc<CarnotGroup>,
    metric: SubFinslerMetric,
    cfg: SolverConfig,
) -> DistOracle {
    let ws = WarmSolver::new(group, metric, cfg);
    Arc::new(move |a: &Point, b: &Point| ws.value(a, b))
}

/// Ladder estimate of a pointwise Lipschitz constant.
#[derive(Debug, Clone)]
pub struct PointwiseLip {
    pub radii: Vec<f64>,
    /// Per radius: max over the direction fan of `|f(y) − f(x)|/δ(x,y)`.
    pub values: Vec<f64>,
    pub extrapolated: f64,
    pub spread: f64,
}

/// Default radius ladder `2⁻², …, 2⁻⁶`.
pub fn default_radii() -> Vec<f64> {
    (2..=6).map(|k| (2.0_f64).powi(-k)).collect()
}

/// Measures `Lip f` at `x`: for each radius, scans a deterministic
/// direction fan on the dilation sphere, divides increments by the
/// δ-estimate (dual-distance upper bounds), and extrapolates the ladder.
///
/// The fan is the union of the signed horizontal axes, `fan` horizontal
/// mesh directions, and `fan/2` full-gauge directions. The horizontal
/// part carries the supremum for differentiable rules (vertical approach
/// costs a full distance order more than it moves such an `f`), so its
/// angular density is what bounds the systematic deficit; the full-gauge
/// directions guard the genuinely nonsmooth cases.
pub fn pointwise_lip(
    group: &CarnotGroup,
    f: &dyn Fn(&Point) -> f64,
    delta_oracle: &DistOracle,
    x: &Point,
    radii: &[f64],
    fan: usize,
) -> Result<PointwiseLip, DualityError> {
    assert!(
        radii.windows(2).all(|w| w[0] > w[1]) && radii.last().is_some_and(|r| *r > 0.0),
        "radii must decrease strictly and stay positive"
    );
    let n = group.dim();
    let m = group.horizontal_dim();
    let mut directions: Vec<Point> = Vec::new();
    let mut e = vec![0.0; m];
    for c in 0..m {
        for sign in [1.0, -1.0] {
            e[c] = sign;
            directions.push(group.exp_layer1(&e));
            e[c] = 0.0;
        }
    }
    for k in 0..fan {
        directions.push(group.exp_layer1(&mesh::sphere_point(m, k)));
    }
    if n > m {
        for k in 0..fan.div_ceil(2) {
            let raw = Point::new(mesh::sphere_point(n, k));
            let g0 = group.homogeneous_gauge(&raw.coords);
            directions.push(group.dilate(1.0 / g0, &raw).map_err(SolverError::from)?);
        }
    }
    let fx = f(x);
    let mut values = Vec::with_capacity(radii.len());
    for &r in radii {
        let mut worst = 0.0_f64;
        for q in &directions {
            let yk = group.mul(x, &group.dilate(r, q).map_err(SolverError::from)?);
            let denom = delta_oracle(x, &yk)?;
            if denom > 0.0 {
                worst = worst.max((f(&yk) - fx).abs() / denom);
            }
        }
        values.push(worst);
    }
    let (extrapolated, spread) = extrapolate_tail(&values);
    Ok(PointwiseLip {
        radii: radii.to_vec(),
        values,
        extrapolated,
        spread,
    })
}

/// One sample of the gradient-vs-Lipschitz comparison.
#[derive(Debug, Clone)]
pub struct PhiLipRow {
    pub point: Point,
    /// `φ(x, ∇_G f(x))` from the analytic gradient.
    pub phi_value: f64,
    pub lip: PointwiseLip,
    pub relative_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct PhiLipReport {
    pub rows: Vec<PhiLipRow>,
    pub all_pass: bool,
}

/// Verifies `φ(x, ∇_G f(x)) = Lip f(x)` at the samples for a metric tagged
/// continuous or upper semicontinuous. Two stacked numerical layers (the
/// dual-distance solves and the radius ladder) motivate the 7% threshold.
pub fn check_phi_eq_lip(
    group: &Arc<CarnotGroup>,
    phi: &SubFinslerMetric,
    f: &Competitor,
    samples: &[Point],
    cfg: &SolverConfig,
    dual_resolution: usize,
    radii: &[f64],
    fan: usize,
) -> Result<PhiLipReport, DualityError> {
    assert!(
        matches!(phi.regularity(), Regularity::Continuous | Regularity::Usc),
        "the gradient-Lipschitz identity needs an usc (or continuous) metric"
    );
    let grad = f.grad_h.clone().ok_or_else(|| DualityError::GradientUnavailable {
        detail: "analytic gradient required for the comparison".into(),
    })?;
    let dual = phi.dual(dual_resolution);
    let oracle = warm_oracle(group.clone(), dual.metric.clone(), cfg.probe_profile());
    let rule = |x: &Point| f.eval(x);
    let mut rows = Vec::with_capacity(samples.len());
    for x in samples {
        let phi_value = phi.eval(x, &grad(x));
        let lip = pointwise_lip(group, &rule, &oracle, x, radii, fan)?;
        let denom = phi_value.max(1e-12);
        let relative_error = (phi_value - lip.extrapolated).abs() / denom;
        rows.push(PhiLipRow {
            point: x.clone(),
            phi_value,
            pass: relative_error <= 0.07,
            relative_error,
            lip,
        });
    }
    Ok(PhiLipReport {
        all_pass: rows.iter().all(|r| r.pass),
        rows,
    })
}

/// Global-vs-essential-sup comparison of Lipschitz constants.
#[derive(Debug, Clone)]
pub struct GlobalLipReport {
    /// Max over sampled pairs of `|f(x) − f(y)|/d_{φ⋆}(x,y)`.
    pub global: f64,
    /// Max over the grid of pointwise constants.
    pub ess_sup: f64,
    pub relative_difference: f64,
    /// Agreement within 10%.
    pub pass: bool,
}

/// Compares the global Lipschitz constant over sampled pairs with the
/// grid maximum of pointwise constants.
#[allow(clippy::too_many_arguments)]
pub fn global_lip_vs_esssup(
    group: &Arc<CarnotGroup>,
    phi: &SubFinslerMetric,
    f: &Competitor,
    grid: &[Point],
    pairs: &[(Point, Point)],
    cfg: &SolverConfig,
    dual_resolution: usize,
    radii: &[f64],
    fan: usize,
) -> Result<GlobalLipReport, DualityError> {
    let dual = phi.dual(dual_resolution);
    let oracle = warm_oracle(group.clone(), dual.metric.clone(), cfg.probe_profile());
    let mut global = 0.0_f64;
    for (a, b) in pairs {
        let d = oracle(a, b)?;
        if d > 0.0 {
            global = global.max((f.eval(a) - f.eval(b)).abs() / d);
        }
    }
    let rule = |x: &Point| f.eval(x);
    let mut ess_sup = 0.0_f64;
    for x in grid {
        ess_sup = ess_sup.max(pointwise_lip(group, &rule, &oracle, x, radii, fan)?.extrapolated);
    }
    let relative_difference = (global - ess_sup).abs() / global.max(ess_sup).max(1e-12);
    Ok(GlobalLipReport {
        global,
        ess_sup,
        relative_difference,
        pass: relative_difference <= 0.10,
    })
}

/// One smoothing radius of the sufficiency check.
#[derive(Debug, Clone)]
pub struct SmoothingRow {
    pub rho: f64,
    /// Deflated bound of the ball-averaged cone.
    pub bound: f64,
    pub margin: f64,
}

/// Result of replacing the cone by ball-averaged versions.
#[derive(Debug, Clone)]
pub struct SmoothingReport {
    /// Deflated bound of the unsmoothed cone.
    pub cone_bound: f64,
    pub cone_margin: f64,
    pub rows: Vec<SmoothingRow>,
    /// Smallest-radius bound within 5% of the cone bound.
    pub recovers_cone: bool,
    /// Bounds increase as the radius shrinks.
    pub monotone_recovery: bool,
    /// Every smoothed margin stays within the original + 0.02.
    pub margins_controlled: bool,
}

/// Checks that smooth competitors suffice: the distance cone for the pair
/// is averaged over shrinking dilation-ball samples, each average is
/// re-validated, and the deflated bounds must climb back to the cone's.
pub fn smooth_competitor_sufficiency(
    group: &Arc<CarnotGroup>,
    phi: &SubFinslerMetric,
    x: &Point,
    y: &Point,
    cfg: &SolverConfig,
    dual_resolution: usize,
    rho_schedule: &[f64],
) -> Result<SmoothingReport, DualityError> {
    assert!(
        matches!(phi.regularity(), Regularity::Continuous | Regularity::Usc),
        "smoothing sufficiency is stated for usc metrics"
    );
    let dual = phi.dual(dual_resolution);
    let w = Point::new(group.log_between(x, y));
    let mut grid: Vec<Point> = [0.4, 0.8]
        .iter()
        .map(|&t| {
            group
                .dilate(t, &w)
                .map(|q| group.mul(x, &q))
                .map_err(SolverError::from)
        })
        .collect::<Result<_, _>>()?;
    grid.push(x.clone());
    grid.push(y.clone());

    // Offset pattern for the averages: gauge-normalized mesh directions in
    // inverse pairs, each dilated to radius ρ later. The pairing cancels
    // the first-order conjugation distortion of right shifts (a left-
    // invariant distance is not right-invariant), so the averaged cone's
    // Lipschitz excess shrinks with ρ instead of plateauing. One warm
    // solver per offset keeps every term's query chain local and
    // deterministic.
    let n = group.dim();
    let offsets: Vec<Point> = (0..2)
        .flat_map(|k| {
            let raw = Point::new(mesh::sphere_point(n, k));
            let g0 = group.homogeneous_gauge(&raw.coords);
            let q = group.dilate(1.0 / g0, &raw).expect("unit gauge point");
            let qi = group.inverse(&q);
            [q, qi]
        })
        .collect();
    let solvers: Vec<Arc<WarmSolver>> = (0..=offsets.len())
        .map(|_| {
            Arc::new(WarmSolver::new(
                group.clone(),
                dual.metric.clone(),
                cfg.probe_profile(),
            ))
        })
        .collect();

    // All quotient validations share one pair oracle (its own warm chain).
    let pair_oracle: DistOracle = {
        let ws = Arc::new(WarmSolver::new(
            group.clone(),
            dual.metric.clone(),
            cfg.probe_profile(),
        ));
        Arc::new(move |a: &Point, b: &Point| ws.value(a, b))
    };
    let cone = {
        let f: ValueFn = {
            let ws = solvers[0].clone();
            let x0 = x.clone();
            Arc::new(move |z: &Point| -(ws.value(&x0, z).unwrap_or(f64::INFINITY)))
        };
        Competitor {
            name: "cone[dual distance]".into(),
            f,
            grad_h: None,
            kind: CompetitorKind::Cone,
            oracle: Some(pair_oracle.clone()),
            validation: None,
        }
    };
    let cone = validate_competitor(phi, group, cone, &grid)?;
    let cone_margin = cone.validation().unwrap().margin;
    let cone_bound = delta_lower(x, y, std::slice::from_ref(&cone))?;

    let mut rows = Vec::with_capacity(rho_schedule.len());
    for &rho in rho_schedule {
        // Shift k = 0 is the identity (the unsmoothed term).
        let shifts: Vec<Option<Point>> = std::iter::once(None)
            .chain(
                offsets
                    .iter()
                    .map(|q| Some(group.dilate(rho, q).expect("positive dilation"))),
            )
            .collect();
        let count = shifts.len() as f64;
        let smoothed_f: ValueFn = {
            let solvers = solvers.clone();
            let shifts = shifts.clone();
            let group = group.clone();
            let x0 = x.clone();
            Arc::new(move |z: &Point| {
                let mut acc = 0.0;
                for (ws, shift) in solvers.iter().zip(&shifts) {
                    let target = match shift {
                        Some(s) => group.mul(z, s),
                        None => z.clone(),
                    };
                    acc -= ws.value(&x0, &target).unwrap_or(f64::INFINITY);
                }
                acc / count
            })
        };
        let smoothed = Competitor {
            name: format!("cone[ball-averaged rho={rho}]"),
            f: smoothed_f,
            grad_h: None,
            kind: CompetitorKind::Cone,
            oracle: Some(pair_oracle.clone()),
            validation: None,
        };
        let smoothed = validate_competitor(phi, group, smoothed, &grid)?;
        rows.push(SmoothingRow {
            rho,
            bound: delta_lower(x, y, std::slice::from_ref(&smoothed))?,
            margin: smoothed.validation().unwrap().margin,
        });
    }
    let last_bound = rows.last().map_or(0.0, |r| r.bound);
    let slack = 0.01 * cone_bound.abs().max(1e-9);
    Ok(SmoothingReport {
        recovers_cone: (cone_bound - last_bound).abs() <= 0.05 * cone_bound.max(1e-12),
        monotone_recovery: rows.windows(2).all(|w| w[1].bound >= w[0].bound - slack),
        margins_controlled: rows.iter().all(|r| r.margin <= cone_margin + 0.02),
        cone_bound,
        cone_margin,
        rows,
    })
}

/// One stage of the cone approximation scheme.
#[derive(Debug, Clone)]
pub struct ConeSchemeRow {
    /// Stage index (anchor prefix length and reciprocal slack).
    pub n: usize,
    /// Covering radius of the anchor prefix over the test points, measured
    /// by the oracle distance.
    pub covering_radius: f64,
    /// `h_n` at each test point.
    pub values: Vec<f64>,
    /// Strictly above the previous stage everywhere.
    pub strictly_increasing: bool,
    /// Strictly below the target everywhere.
    pub below_target: bool,
    /// Largest `f − h_n` over the test points.
    pub max_gap: f64,
    /// The guaranteed bound `(2L+1)·covering_radius + 1/n`.
    pub gap_bound: f64,
}

/// Runs the cone scheme: stage `n` builds the distance cone over the
/// first `n` anchors with values taken from the target and slack `1/n`.
/// The target must be L-Lipschitz for the oracle distance.
pub fn cone_scheme(
    d_oracle: &DistOracle,
    anchor_pool: &[Point],
    target: &dyn Fn(&Point) -> f64,
    lip: f64,
    stages: &[usize],
    test_points: &[Point],
) -> Result<Vec<ConeSchemeRow>, DualityError> {
    assert!(
        stages.windows(2).all(|w| w[0] < w[1]),
        "stages must strictly increase"
    );
    assert!(
        stages.last().is_some_and(|&n| n <= anchor_pool.len()),
        "stage exceeds the anchor pool"
    );
    let mut prev: Option<Vec<f64>> = None;
    let mut rows = Vec::with_capacity(stages.len());
    for &n in stages {
        let anchors = &anchor_pool[..n];
        let values: Vec<f64> = anchors.iter().map(|a| target(a)).collect();
        let cone = cone_competitor(
            d_oracle.clone(),
            anchors.to_vec(),
            values,
            lip,
            1.0 / n as f64,
        )?;
        let hn: Vec<f64> = test_points.iter().map(|p| cone.eval(p)).collect();
        let mut covering = 0.0_f64;
        for p in test_points {
            let mut nearest = f64::INFINITY;
            for a in anchors {
                nearest = nearest.min(d_oracle(p, a)?);
            }
            covering = covering.max(nearest);
        }
        let targets: Vec<f64> = test_points.iter().map(|p| target(p)).collect();
        let max_gap = targets
            .iter()
            .zip(&hn)
            .fold(0.0_f64, |acc, (t, h)| acc.max(t - h));
        rows.push(ConeSchemeRow {
            n,
            covering_radius: covering,
            strictly_increasing: prev
                .as_ref()
                .is_none_or(|p| p.iter().zip(&hn).all(|(a, b)| b > a)),
            below_target: targets.iter().zip(&hn).all(|(t, h)| h < t),
            max_gap,
            gap_bound: (2.0 * lip + 1.0) * covering + 1.0 / n as f64,
            values: hn.clone(),
        });
        prev = Some(hn);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::builtin;
    use approx::assert_abs_diff_eq;

    fn heis() -> Arc<CarnotGroup> {
        Arc::new(CarnotGroup::new(builtin("heisenberg1").unwrap()).unwrap())
    }

    fn abelian() -> Arc<CarnotGroup> {
        Arc::new(CarnotGroup::new(builtin("abelian2").unwrap()).unwrap())
    }

    fn quick_cfg() -> SolverConfig {
        SolverConfig {
            segments: 16,
            multistarts: 3,
            max_iters: 60,
            refine_levels: 0,
            seed: 23,
            ..SolverConfig::default()
        }
    }

    /// Exact Euclidean oracle on the abelian plane.
    fn euclid_oracle() -> DistOracle {
        Arc::new(|a: &Point, b: &Point| {
            Ok(a.coords
                .iter()
                .zip(&b.coords)
                .map(|(p, q)| (p - q).powi(2))
                .sum::<f64>()
                .sqrt())
        })
    }

    #[test]
    fn single_anchor_cone_obeys_the_reverse_triangle() {
        let oracle = euclid_oracle();
        let a = Point::new(vec![0.5, -0.5]);
        let cone = cone_competitor(oracle.clone(), vec![a], vec![0.0], 1.0, 0.0).unwrap();
        let x = Point::new(vec![1.0, 2.0]);
        let y = Point::new(vec![-1.0, 0.5]);
        let lhs = (cone.eval(&x) - cone.eval(&y)).abs();
        let dxy = oracle(&x, &y).unwrap();
        assert!(lhs <= dxy + 1e-12, "{lhs} > {dxy}");
    }

    #[test]
    fn incompatible_anchor_values_are_rejected() {
        let oracle = euclid_oracle();
        let anchors = vec![Point::new(vec![0.0, 0.0]), Point::new(vec![1.0, 0.0])];
        let err = cone_competitor(oracle, anchors, vec![0.0, 5.0], 1.0, 0.0);
        assert!(matches!(
            err,
            Err(DualityError::IncompatibleValues { .. })
        ));
    }

    #[test]
    fn coordinate_competitor_validates_with_zero_margin() {
        let g = heis();
        let phi = SubFinslerMetric::euclidean(2);
        let f: ValueFn = Arc::new(|x: &Point| x.coords[0]);
        let cand = Competitor::analytic("x1", f, None);
        let grid: Vec<Point> = vec![
            g.identity(),
            Point::new(vec![0.3, -0.2, 0.1]),
            Point::new(vec![-1.0, 0.5, 0.4]),
        ];
        let comp = validate_competitor(&phi, &g, cand, &grid).unwrap();
        let v = comp.validation().unwrap();
        assert_abs_diff_eq!(v.grid_max, 1.0, epsilon = 1e-8);
        assert!(v.margin <= 1e-8);
    }

    #[test]
    fn scaling_doubles_the_margin_and_halves_the_bound() {
        let g = heis();
        let phi = SubFinslerMetric::euclidean(2);
        let f2: ValueFn = Arc::new(|x: &Point| 2.0 * x.coords[0]);
        let cand = Competitor::analytic("2x1", f2, None);
        let grid = vec![g.identity(), Point::new(vec![0.2, 0.3, -0.1])];
        let comp = validate_competitor(&phi, &g, cand, &grid).unwrap();
        assert_abs_diff_eq!(comp.validation().unwrap().margin, 1.0, epsilon = 1e-7);
        let x = g.identity();
        let y = Point::new(vec![1.0, 0.0, 0.0]);
        // Deflation restores the honest bound: |2·1 − 0|/(1+1) = 1.
        let bound = delta_lower(&x, &y, &[comp]).unwrap();
        assert_abs_diff_eq!(bound, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn delta_lower_is_monotone_in_the_competitor_set() {
        let g = heis();
        let phi = SubFinslerMetric::euclidean(2);
        let grid = vec![g.identity()];
        let c1 = validate_competitor(
            &phi,
            &g,
            Competitor::analytic("x1", Arc::new(|x: &Point| x.coords[0]), None),
            &grid,
        )
        .unwrap();
        let c2 = validate_competitor(
            &phi,
            &g,
            Competitor::analytic("x2", Arc::new(|x: &Point| x.coords[1]), None),
            &grid,
        )
        .unwrap();
        let x = g.identity();
        let y = Point::new(vec![0.3, 0.9, 0.0]);
        assert_eq!(delta_lower(&x, &y, &[]).unwrap(), 0.0);
        let one = delta_lower(&x, &y, std::slice::from_ref(&c1)).unwrap();
        let both = delta_lower(&x, &y, &[c1, c2]).unwrap();
        assert!(both >= one);
    }

    #[test]
    fn unvalidated_competitors_are_refused() {
        let cand = Competitor::analytic("raw", Arc::new(|_: &Point| 0.0), None);
        let x = Point::new(vec![0.0, 0.0, 0.0]);
        let err = delta_lower(&x, &x, &[cand]);
        assert!(matches!(err, Err(DualityError::NotValidated { .. })));
    }

    #[test]
    fn duality_gap_is_small_for_the_self_dual_norm() {
        let g = heis();
        let phi = SubFinslerMetric::euclidean(2);
        let x = g.identity();
        let y = Point::new(vec![0.7, 0.4, 0.2]);
        let report = duality_gap(&g, &phi, &x, &y, &quick_cfg(), 64).unwrap();
        assert!(report.delta_lower <= report.d_dual_upper + 1e-12);
        assert!(
            report.relative_gap <= 0.05,
            "relative gap {} (margin {})",
            report.relative_gap,
            report.cone_margin
        );
        let same = duality_gap(&g, &phi, &x, &x, &quick_cfg(), 64).unwrap();
        assert_eq!(same.d_dual_upper, 0.0);
        assert_eq!(same.delta_lower, 0.0);
    }

    #[test]
    fn duality_ordering_holds_for_an_elliptic_metric() {
        let g = heis();
        let a = nalgebra::DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.25]);
        let phi = SubFinslerMetric::elliptic_constant("spread", a).unwrap();
        let x = g.identity();
        let y = Point::new(vec![0.5, -0.6, 0.1]);
        let report = duality_gap(&g, &phi, &x, &y, &quick_cfg(), 64).unwrap();
        assert!(
            report.delta_lower <= report.d_dual_upper + 1e-12,
            "ordering violated: {} > {}",
            report.delta_lower,
            report.d_dual_upper
        );
    }

    #[test]
    fn pointwise_lip_of_coordinate_functions() {
        let g = heis();
        let phi = SubFinslerMetric::euclidean(2);
        let dual = phi.dual(32);
        let oracle = warm_oracle(g.clone(), dual.metric.clone(), quick_cfg());
        let x = Point::new(vec![0.1, 0.2, 0.0]);
        let radii = default_radii();
        let lip1 = pointwise_lip(&g, &|p: &Point| p.coords[0], &oracle, &x, &radii, 4).unwrap();
        assert!(
            (lip1.extrapolated - 1.0).abs() <= 0.05,
            "lip {} spread {}",
            lip1.extrapolated,
            lip1.spread
        );
        let lip0 = pointwise_lip(&g, &|_: &Point| 42.0, &oracle, &x, &radii, 4).unwrap();
        assert_abs_diff_eq!(lip0.extrapolated, 0.0, epsilon = 1e-12);
        let lip3 = pointwise_lip(&g, &|p: &Point| 3.0 * p.coords[0], &oracle, &x, &radii, 4)
            .unwrap();
        let ratio = lip3.extrapolated / lip1.extrapolated;
        assert!((ratio - 3.0).abs() <= 0.03, "homogeneity ratio {ratio}");
    }

    #[test]
    fn gradient_identity_for_linear_horizontal_functions() {
        let g = heis();
        let a = nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let phi = SubFinslerMetric::elliptic_constant("tilted", a).unwrap();
        // f = 0.8·x₁ + 0.6·x₂ has constant horizontal gradient (0.8, 0.6).
        let f = Competitor::analytic(
            "linear",
            Arc::new(|p: &Point| 0.8 * p.coords[0] + 0.6 * p.coords[1]),
            Some(Arc::new(|_: &Point| vec![0.8, 0.6])),
        );
        let samples = vec![g.identity(), Point::new(vec![0.4, -0.1, 0.2])];
        let report = check_phi_eq_lip(
            &g,
            &phi,
            &f,
            &samples,
            &quick_cfg(),
            64,
            &default_radii(),
            32,
        )
        .unwrap();
        assert!(report.all_pass, "rows: {:?}", report.rows);
    }

    #[test]
    fn global_constant_agrees_with_the_pointwise_sup() {
        let g = heis();
        let phi = SubFinslerMetric::euclidean(2);
        let f = Competitor::analytic(
            "x1",
            Arc::new(|p: &Point| p.coords[0]),
            Some(Arc::new(|_: &Point| vec![1.0, 0.0])),
        );
        let grid = vec![g.identity(), Point::new(vec![0.3, 0.3, 0.1])];
        let pairs = vec![
            (g.identity(), Point::new(vec![1.0, 0.0, 0.0])),
            (g.identity(), Point::new(vec![0.5, 0.5, 0.2])),
        ];
        let report = global_lip_vs_esssup(
            &g,
            &phi,
            &f,
            &grid,
            &pairs,
            &quick_cfg(),
            32,
            &default_radii(),
            4,
        )
        .unwrap();
        assert!(report.pass, "global {} ess-sup {}", report.global, report.ess_sup);
    }

    #[test]
    fn cone_scheme_obeys_the_appendix_bounds() {
        let oracle = euclid_oracle();
        // Deterministic anchor pool on a square, target 1-Lipschitz.
        let pool: Vec<Point> = (0..16)
            .map(|k| {
                let p = mesh::halton(k + 1, 2);
                let q = mesh::halton(k + 1, 3);
                Point::new(vec![2.0 * p - 1.0, 2.0 * q - 1.0])
            })
            .collect();
        let target = |p: &Point| 0.5 * p.coords[0] - 0.3 * p.coords[1];
        let tests: Vec<Point> = (0..9)
            .map(|k| Point::new(vec![-0.8 + 0.2 * (k % 3) as f64, -0.8 + 0.2 * (k / 3) as f64]))
            .collect();
        let rows = cone_scheme(&oracle, &pool, &target, 1.0, &[2, 4, 8, 16], &tests).unwrap();
        for row in &rows {
            assert!(row.strictly_increasing, "stage {} not increasing", row.n);
            assert!(row.below_target, "stage {} reached the target", row.n);
            assert!(
                row.max_gap <= row.gap_bound + 1e-12,
                "stage {}: gap {} above bound {}",
                row.n,
                row.max_gap,
                row.gap_bound
            );
        }
    }

    #[test]
    fn smoothing_recovers_the_cone_bound() {
        let g = heis();
        let phi = SubFinslerMetric::euclidean(2);
        let x = g.identity();
        let y = Point::new(vec![0.8, 0.3, 0.1]);
        let cfg = SolverConfig {
            segments: 12,
            multistarts: 2,
            max_iters: 40,
            refine_levels: 0,
            ..SolverConfig::default()
        };
        let report =
            smooth_competitor_sufficiency(&g, &phi, &x, &y, &cfg, 32, &[0.2, 0.1, 0.05])
                .unwrap();
        assert!(report.recovers_cone, "report: {report:?}");
        assert!(report.margins_controlled, "report: {report:?}");
        assert!(report.monotone_recovery, "report: {report:?}");
    }

    #[test]
    fn gradient_unavailable_cases() {
        let g = heis();
        let phi = SubFinslerMetric::euclidean(2);
        let cand = Competitor::analytic("f", Arc::new(|_: &Point| 0.0), None);
        let err = validate_competitor(&phi, &g, cand, &[]);
        assert!(matches!(err, Err(DualityError::GradientUnavailable { .. })));
    }

    #[test]
    fn abelian_cone_recovers_the_distance() {
        // delta_lower with the optimal cone recovers d(x, y) itself.
        let g = abelian();
        let oracle = euclid_oracle();
        let x = Point::new(vec![0.0, 0.0]);
        let y = Point::new(vec![0.6, 0.8]);
        let phi = SubFinslerMetric::euclidean(2);
        let cone = cone_competitor(oracle, vec![x.clone()], vec![0.0], 1.0, 0.0).unwrap();
        let grid = vec![y.clone(), Point::new(vec![0.3, 0.4])];
        let cone = validate_competitor(&phi, &g, cone, &grid).unwrap();
        let bound = delta_lower(&x, &y, &[cone]).unwrap();
        assert!((bound - 1.0).abs() <= 0.05, "bound {bound}");
    }
}
