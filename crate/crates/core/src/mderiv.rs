//! Metric derivative: recovering a fiber norm from a distance.
//!
//! Given a distance `d` compatible with the group structure, the derived
//! metric at `(x, v)` is the limit of `d(x, x·δ_t exp v̄)/t` as `t → 0⁺`,
//! where `v̄` is the left-translation of `v` to the identity. The module
//! estimates that limit on a decreasing `t` ladder with Richardson
//! extrapolation, always reporting the ratio spread as an honesty measure
//! — the definition is a limsup, and a bare last ratio would hide
//! non-convergence.
//!
//! Negative parameters never appear: the `|t|` symmetrization of the
//! definition is covered by evaluating at `−v`, which homogeneity makes
//! equivalent.

use std::sync::Arc;

use crate::curve::Control;
use crate::group::{CarnotGroup, HorizontalVector, Point};
use crate::mesh;
use crate::metric::{Regularity, SubFinslerMetric};
use crate::solver::{
    cc_distance, scale_control, solve_distance_with_init, SolverConfig, SolverError,
};

/// The default dilation ladder `2⁻³, …, 2⁻¹⁰`.
pub fn default_schedule() -> Vec<f64> {
    (3..=10).map(|k| (2.0_f64).powi(-k)).collect()
}

/// Ratio ladder for one `(x, v)` pair.
#[derive(Debug, Clone)]
pub struct MDerivEstimate {
    /// Decreasing dilation parameters.
    pub t_values: Vec<f64>,
    /// `d(x, x·δ_t exp v̄)/t` per parameter, from upper distance estimates.
    pub ratios: Vec<f64>,
    /// Averaged two-point Richardson extrapolants of the last three ratios.
    pub extrapolated: f64,
    /// `max − min` of the ratio tail; large spread means the ladder has
    /// not stabilized and the extrapolation should not be trusted.
    pub spread: f64,
}

/// Estimates the derived metric at `v` (based at `v.base`) by running the
/// distance oracle along the dilation curve. The oracle returns upper
/// distance estimates; its failures propagate.
pub fn metric_derivative<F>(
    oracle: &mut F,
    group: &CarnotGroup,
    v: &HorizontalVector,
    schedule: &[f64],
) -> Result<MDerivEstimate, SolverError>
where
    F: FnMut(&Point, &Point) -> Result<f64, SolverError>,
{
    assert!(!schedule.is_empty(), "empty dilation schedule");
    assert!(
        schedule.windows(2).all(|w| w[0] > w[1]) && *schedule.last().unwrap() > 0.0,
        "schedule must decrease strictly toward 0"
    );
    let x = &v.base;
    let cap = group.exp_layer1(&v.h);
    let mut ratios = Vec::with_capacity(schedule.len());
    for &t in schedule {
        let y = group.mul(x, &group.dilate(t, &cap)?);
        let d = oracle(x, &y)?;
        ratios.push(d / t);
    }
    let (extrapolated, spread) = extrapolate_tail(&ratios);
    Ok(MDerivEstimate {
        t_values: schedule.to_vec(),
        ratios,
        extrapolated,
        spread,
    })
}

/// Averaged two-point Richardson extrapolants over the last three entries
/// (the ladder halves `t`, so `2r(t/2) − r(t)` cancels the O(t) error),
/// plus the tail spread.
pub(crate) fn extrapolate_tail(ratios: &[f64]) -> (f64, f64) {
    let k = ratios.len();
    let extrapolated = match k {
        0 => unreachable!("schedule is nonempty"),
        1 => ratios[0],
        2 => 2.0 * ratios[1] - ratios[0],
        _ => {
            let ea = 2.0 * ratios[k - 1] - ratios[k - 2];
            let eb = 2.0 * ratios[k - 2] - ratios[k - 3];
            0.5 * (ea + eb)
        }
    };
    let tail = &ratios[k.saturating_sub(3)..];
    let spread = tail.iter().cloned().fold(f64::MIN, f64::max)
        - tail.iter().cloned().fold(f64::MAX, f64::min);
    (extrapolated, spread)
}

/// One subadditivity probe of the derived metric.
#[derive(Debug, Clone)]
pub struct ConvexityRow {
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub value_v1: f64,
    pub value_v2: f64,
    pub value_sum: f64,
    /// Combined ladder spreads of the three estimates.
    pub tolerance: f64,
    /// `value_sum ≤ value_v1 + value_v2 + tolerance`.
    pub satisfied: bool,
}

/// Subadditivity audit of the derived metric at one base point.
#[derive(Debug, Clone)]
pub struct ConvexityReport {
    pub rows: Vec<ConvexityRow>,
    pub all_satisfied: bool,
}

/// Checks `φ_d(x, v₁+v₂) ≤ φ_d(x, v₁) + φ_d(x, v₂)` up to the combined
/// spreads. Together with the positive homogeneity the ladder construction
/// grants for free, subadditivity is fiber convexity.
pub fn check_convexity<F>(
    oracle: &mut F,
    group: &CarnotGroup,
    x: &Point,
    pairs: &[(Vec<f64>, Vec<f64>)],
    schedule: &[f64],
) -> Result<ConvexityReport, SolverError>
where
    F: FnMut(&Point, &Point) -> Result<f64, SolverError>,
{
    let mut rows = Vec::with_capacity(pairs.len());
    for (v1, v2) in pairs {
        let sum: Vec<f64> = v1.iter().zip(v2).map(|(a, b)| a + b).collect();
        let e1 = metric_derivative(oracle, group, &group.embed_horizontal(x, v1.clone()), schedule)?;
        let e2 = metric_derivative(oracle, group, &group.embed_horizontal(x, v2.clone()), schedule)?;
        let es = metric_derivative(oracle, group, &group.embed_horizontal(x, sum), schedule)?;
        let tolerance = e1.spread + e2.spread + es.spread;
        rows.push(ConvexityRow {
            v1: v1.clone(),
            v2: v2.clone(),
            value_v1: e1.extrapolated,
            value_v2: e2.extrapolated,
            value_sum: es.extrapolated,
            satisfied: es.extrapolated <= e1.extrapolated + e2.extrapolated + tolerance,
            tolerance,
        });
    }
    Ok(ConvexityReport {
        all_satisfied: rows.iter().all(|r| r.satisfied),
        rows,
    })
}

/// One sample of the derived-vs-generating comparison.
#[derive(Debug, Clone)]
pub struct CompareRow {
    pub base: Point,
    pub h: Vec<f64>,
    /// `ψ(x, v)`.
    pub metric_value: f64,
    pub estimate: MDerivEstimate,
    /// Signed gap `φ_{d_ψ}(x,v) − ψ(x,v)`.
    pub gap: f64,
    /// Ladder spread plus the solver interval width at the finest `t`.
    pub tolerance: f64,
    /// Whether the gap respects the regularity tag's one- or two-sided
    /// comparison (merely-measurable metrics carry no comparison claim
    /// and are reported as consistent).
    pub consistent: bool,
}

/// Comparison of the metric derived from `d_ψ` with ψ itself.
#[derive(Debug, Clone)]
pub struct CompareReport {
    pub regularity: Regularity,
    pub rows: Vec<CompareRow>,
    pub all_consistent: bool,
    pub max_abs_gap: f64,
}

/// Solves the intrinsic distance of ψ along each sample's dilation curve
/// (warm-starting down the ladder) and compares the derived metric with ψ:
/// continuous metrics must match two-sidedly, upper semicontinuous ones
/// may only drop, lower semicontinuous ones may only rise.
pub fn compare_with_metric(
    group: &Arc<CarnotGroup>,
    psi: &SubFinslerMetric,
    samples: &[HorizontalVector],
    cfg: &SolverConfig,
    schedule: &[f64],
) -> Result<CompareReport, SolverError> {
    let probe_cfg = cfg.probe_profile();
    let mut rows = Vec::with_capacity(samples.len());
    for v in samples {
        let mut prev: Option<Control> = None;
        let mut last_width = 0.0_f64;
        let mut oracle = |a: &Point, b: &Point| -> Result<f64, SolverError> {
            let init = prev.as_ref().map(|c| scale_control(c, 0.5));
            let est = solve_distance_with_init(group, psi, a, b, &probe_cfg, init.as_ref())?;
            last_width = est.width();
            prev = Some(est.curve.control().clone());
            Ok(est.upper)
        };
        let estimate = metric_derivative(&mut oracle, group, v, schedule)?;
        let metric_value = psi.eval(&v.base, &v.h);
        let gap = estimate.extrapolated - metric_value;
        let t_last = *schedule.last().unwrap();
        // The floor keeps exact plateaus from failing on rounding jitter,
        // which the extrapolation weights amplify by an order of magnitude.
        let tolerance =
            estimate.spread + last_width / t_last + 1e-12 * metric_value.abs().max(1.0);
        let consistent = match psi.regularity() {
            Regularity::Continuous => gap.abs() <= tolerance,
            Regularity::Usc => gap <= tolerance,
            Regularity::Lsc => gap >= -tolerance,
            Regularity::Borel => true,
        };
        rows.push(CompareRow {
            base: v.base.clone(),
            h: v.h.clone(),
            metric_value,
            estimate,
            gap,
            tolerance,
            consistent,
        });
    }
    Ok(CompareReport {
        regularity: psi.regularity(),
        all_consistent: rows.iter().all(|r| r.consistent),
        max_abs_gap: rows.iter().fold(0.0, |acc, r| acc.max(r.gap.abs())),
        rows,
    })
}

/// Fits the norm-equivalence constant `c ≥ 1` of the group by sampling
/// `d_cc(e, exp v̄)/‖v̄‖` over unit directions: the derived metric of any
/// admissible distance is then sandwiched in `[(1/(c·α))‖v‖, c·α·‖v‖]`.
pub fn fit_equivalence_constant(
    group: &Arc<CarnotGroup>,
    directions: usize,
    cfg: &SolverConfig,
) -> Result<f64, SolverError> {
    let m = group.horizontal_dim();
    let mut c = 1.0_f64;
    for k in 0..directions {
        let dir = mesh::sphere_point(m, k);
        let p = group.exp_layer1(&dir);
        let est = cc_distance(group, &group.identity(), &p, cfg)?;
        if est.upper > 0.0 {
            c = c.max(est.upper);
        }
        if est.lower > 0.0 {
            c = c.max(1.0 / est.lower);
        }
    }
    Ok(c)
}

/// The sandwich interval `[(1/(c·α))‖v‖, c·α·‖v‖]` for a derived metric.
pub fn sandwich_bounds(c: f64, alpha: f64, norm: f64) -> (f64, f64) {
    (norm / (c * alpha), c * alpha * norm)
}
