//! One runner per experiment kind. Every runner turns a prepared
//! configuration into CSV tables; all numeric work happens in the library,
//! so the runners are plumbing: iterate, format, record wall time.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use carnotlab::{
    bidual_check, cone_scheme, continuous_convergence_check, dual_eval, duality_gap,
    equicontinuity_fit, metric_from_config, recovery_sequence,
    solve_batch, solve_distance, sphere_sample, uniform_distance_gap, warm_oracle, AtomicMeasure,
    DistanceFamily, GammaError, OmegaBox, Point,
};

use crate::config::{FamilyBlock, Kind, Prepared};
use crate::output::{fmt_f64, text_cell, Table};
use crate::CliError;

/// The tables an experiment produced, each with the wall time (seconds)
/// of the computation stage behind it, plus whether every solve converged
/// (`false` triggers exit code 3 in strict mode).
pub struct RunOutcome {
    pub tables: Vec<(Table, f64)>,
    pub all_converged: bool,
}

pub fn run(p: &Prepared) -> Result<RunOutcome, CliError> {
    match p.kind {
        Kind::Dist => run_dist(p),
        Kind::Sphere => run_sphere(p),
        Kind::Dual => run_dual(p),
        Kind::Mder => run_mder(p),
        Kind::DualityGap => run_duality_gap(p),
        Kind::Gamma => run_gamma(p),
        Kind::Approx => run_approx(p),
    }
}

fn bool_cell(b: bool) -> String {
    if b { "true" } else { "false" }.to_string()
}

fn nan_cells(n: usize) -> impl Iterator<Item = String> {
    std::iter::repeat_with(|| fmt_f64(f64::NAN)).take(n)
}

fn solver_err(e: impl std::fmt::Display) -> CliError {
    CliError::Solver(e.to_string())
}

/// Gamma errors split: bad inputs are configuration mistakes, everything
/// else is the solver failing on a well-posed problem.
fn gamma_err(e: GammaError) -> CliError {
    match e {
        GammaError::BadBox { .. }
        | GammaError::BadWeight { .. }
        | GammaError::AtomOutsideDomain { .. }
        | GammaError::NotContinuousMetric { .. } => CliError::Config(format!("gamma: {e}")),
        other => CliError::Solver(other.to_string()),
    }
}

fn run_dist(p: &Prepared) -> Result<RunOutcome, CliError> {
    let metric = p.metric.as_ref().expect("validated");
    let clock = Instant::now();
    let results = solve_batch(&p.group, metric, &p.pairs, &p.solver);
    let elapsed = clock.elapsed().as_secs_f64();

    let mut table = Table::new(
        "distances.csv",
        vec![
            "index".into(),
            "lower".into(),
            "upper".into(),
            "midpoint".into(),
            "width".into(),
            "converged".into(),
            "endpoint_gap".into(),
            "iterations".into(),
            "status".into(),
        ],
    );
    let mut all_converged = true;
    for (i, res) in results.iter().enumerate() {
        match res {
            Ok(est) => {
                all_converged &= est.converged;
                table.push(vec![
                    i.to_string(),
                    fmt_f64(est.lower),
                    fmt_f64(est.upper),
                    fmt_f64(est.midpoint()),
                    fmt_f64(est.width()),
                    bool_cell(est.converged),
                    fmt_f64(est.endpoint_gap),
                    est.iterations.to_string(),
                    "ok".to_string(),
                ]);
            }
            Err(e) => {
                all_converged = false;
                let mut row = vec![i.to_string()];
                row.extend(nan_cells(4));
                row.push(bool_cell(false));
                row.extend(nan_cells(1));
                row.push("0".to_string());
                row.push(text_cell(&e.to_string()));
                table.push(row);
            }
        }
    }
    Ok(RunOutcome {
        tables: vec![(table, elapsed)],
        all_converged,
    })
}

fn run_sphere(p: &Prepared) -> Result<RunOutcome, CliError> {
    let metric = p.metric.as_ref().expect("validated");
    let block = p.config.sphere.as_ref().expect("validated");
    let center = Point::new(block.center.clone());
    let clock = Instant::now();
    let points = sphere_sample(
        &p.group,
        metric,
        &center,
        block.radius,
        block.directions,
        &p.solver,
    )
    .map_err(solver_err)?;
    let elapsed = clock.elapsed().as_secs_f64();

    let mut header: Vec<String> = vec!["direction".into(), "scale".into(), "distance".into()];
    header.extend((0..p.group.dim()).map(|i| format!("x_{i}")));
    let mut table = Table::new("sphere.csv", header);
    for sp in &points {
        let mut row = vec![
            sp.direction.to_string(),
            fmt_f64(sp.scale),
            fmt_f64(sp.distance),
        ];
        row.extend(sp.point.coords.iter().map(|c| fmt_f64(*c)));
        table.push(row);
    }
    Ok(RunOutcome {
        tables: vec![(table, elapsed)],
        all_converged: true,
    })
}

fn run_dual(p: &Prepared) -> Result<RunOutcome, CliError> {
    let metric = p.metric.as_ref().expect("validated");
    let block = p.config.dual.as_ref().expect("validated");
    let base = match &block.base {
        Some(coords) => Point::new(coords.clone()),
        None => p.group.identity(),
    };
    let samples: Vec<(Point, Vec<f64>)> = block
        .vectors
        .iter()
        .map(|v| (base.clone(), v.clone()))
        .collect();
    let clock = Instant::now();
    let report = bidual_check(metric, &samples, block.resolution);
    let duals: Vec<f64> = block
        .vectors
        .iter()
        .map(|v| dual_eval(metric, &base, v, block.resolution))
        .collect();
    let elapsed = clock.elapsed().as_secs_f64();

    let mut table = Table::new(
        "dual.csv",
        vec![
            "index".into(),
            "primal".into(),
            "dual".into(),
            "bidual".into(),
            "rel_gap".into(),
            "declared_bound".into(),
        ],
    );
    for (i, sample) in report.samples.iter().enumerate() {
        table.push(vec![
            i.to_string(),
            fmt_f64(sample.primal),
            fmt_f64(duals[i]),
            fmt_f64(sample.bidual),
            fmt_f64(sample.rel_gap),
            fmt_f64(report.declared_bound),
        ]);
    }
    Ok(RunOutcome {
        tables: vec![(table, elapsed)],
        all_converged: true,
    })
}

fn run_mder(p: &Prepared) -> Result<RunOutcome, CliError> {
    let metric = p.metric.as_ref().expect("validated");
    let block = p.config.mder.as_ref().expect("validated");
    let samples: Vec<carnotlab::HorizontalVector> = block
        .samples
        .iter()
        .map(|s| carnotlab::HorizontalVector {
            base: Point::new(s.base.clone()),
            h: s.h.clone(),
        })
        .collect();
    let schedule = block
        .schedule
        .clone()
        .unwrap_or_else(carnotlab::mderiv::default_schedule);
    let clock = Instant::now();
    let report = carnotlab::compare_with_metric(&p.group, metric, &samples, &p.solver, &schedule)
        .map_err(solver_err)?;
    let elapsed = clock.elapsed().as_secs_f64();

    let mut ratios = Table::new(
        "mder_ratios.csv",
        vec!["sample".into(), "t".into(), "ratio".into()],
    );
    let mut summary = Table::new(
        "mder_summary.csv",
        vec![
            "sample".into(),
            "metric_value".into(),
            "extrapolated".into(),
            "spread".into(),
            "gap".into(),
            "tolerance".into(),
            "consistent".into(),
        ],
    );
    for (i, row) in report.rows.iter().enumerate() {
        for (t, ratio) in row.estimate.t_values.iter().zip(&row.estimate.ratios) {
            ratios.push(vec![i.to_string(), fmt_f64(*t), fmt_f64(*ratio)]);
        }
        summary.push(vec![
            i.to_string(),
            fmt_f64(row.metric_value),
            fmt_f64(row.estimate.extrapolated),
            fmt_f64(row.estimate.spread),
            fmt_f64(row.gap),
            fmt_f64(row.tolerance),
            bool_cell(row.consistent),
        ]);
    }
    Ok(RunOutcome {
        tables: vec![(ratios, elapsed), (summary, elapsed)],
        all_converged: report.all_consistent,
    })
}

fn run_duality_gap(p: &Prepared) -> Result<RunOutcome, CliError> {
    let metric = p.metric.as_ref().expect("validated");
    let resolution = p
        .config
        .duality_gap
        .as_ref()
        .map(|b| b.resolution)
        .unwrap_or(64);
    let clock = Instant::now();
    let mut table = Table::new(
        "duality_gap.csv",
        vec![
            "index".into(),
            "delta_lower".into(),
            "d_dual_upper".into(),
            "relative_gap".into(),
            "cone_margin".into(),
            "status".into(),
        ],
    );
    let mut all_converged = true;
    for (i, (x, y)) in p.pairs.iter().enumerate() {
        match duality_gap(&p.group, metric, x, y, &p.solver, resolution) {
            Ok(report) => table.push(vec![
                i.to_string(),
                fmt_f64(report.delta_lower),
                fmt_f64(report.d_dual_upper),
                fmt_f64(report.relative_gap),
                fmt_f64(report.cone_margin),
                "ok".to_string(),
            ]),
            Err(e) => {
                all_converged = false;
                let mut row = vec![i.to_string()];
                row.extend(nan_cells(4));
                row.push(text_cell(&e.to_string()));
                table.push(row);
            }
        }
    }
    let elapsed = clock.elapsed().as_secs_f64();
    Ok(RunOutcome {
        tables: vec![(table, elapsed)],
        all_converged,
    })
}

/// Builds the metric family a gamma block describes. Shared with
/// validation so `validate` rejects what `run` would reject.
pub fn build_family(
    block: &FamilyBlock,
    group: &carnotlab::CarnotGroup,
) -> Result<DistanceFamily, CliError> {
    match block.kind.as_str() {
        "scaling" => {
            let cfg = block.metric.as_ref().expect("validated");
            let limit = metric_from_config(group, cfg)
                .map_err(|e| CliError::Config(format!("gamma.family.metric: {e}")))?;
            Ok(DistanceFamily::scaling(limit))
        }
        "checkerboard" => DistanceFamily::checkerboard(
            group.horizontal_dim(),
            block.low.expect("validated"),
            block.high.expect("validated"),
        )
        .map_err(gamma_err),
        "mixing" => {
            let limit = metric_from_config(group, block.metric.as_ref().expect("validated"))
                .map_err(|e| CliError::Config(format!("gamma.family.metric: {e}")))?;
            let other = metric_from_config(group, block.other.as_ref().expect("validated"))
                .map_err(|e| CliError::Config(format!("gamma.family.other: {e}")))?;
            if limit.fiber_dim() != other.fiber_dim() {
                return Err(CliError::Config(
                    "gamma.family: metric and other disagree on the fiber dimension".into(),
                ));
            }
            Ok(DistanceFamily::mixing(limit, other))
        }
        _ => unreachable!("validated"),
    }
}

fn run_gamma(p: &Prepared) -> Result<RunOutcome, CliError> {
    let block = p.config.gamma.as_ref().expect("validated");
    let family = build_family(&block.family, &p.group)?;
    let omega =
        OmegaBox::new(block.omega_lo.clone(), block.omega_hi.clone()).map_err(gamma_err)?;
    let atoms: Vec<carnotlab::Atom> = block
        .atoms
        .iter()
        .map(|a| carnotlab::Atom {
            x: Point::new(a.x.clone()),
            y: Point::new(a.y.clone()),
            weight: a.weight,
        })
        .collect();
    let mu = AtomicMeasure::new(atoms, &omega).map_err(gamma_err)?;
    let grid = omega.grid(block.grid_per_axis);

    let mut table = Table::new(
        "gamma.csv",
        vec![
            "n".into(),
            "quantity".into(),
            "value".into(),
            "uncertainty".into(),
        ],
    );
    let clock = Instant::now();

    // Functional convergence: J_n(μ) down the schedule against J(μ).
    let mu_sequence = vec![mu.clone(); block.schedule.len()];
    let report = continuous_convergence_check(
        &p.group,
        &family,
        &mu_sequence,
        &mu,
        &block.schedule,
        &p.solver,
    )
    .map_err(gamma_err)?;
    table.push(vec![
        "0".to_string(),
        "j_limit".to_string(),
        fmt_f64(report.j_limit.midpoint()),
        fmt_f64(report.j_limit.width()),
    ]);
    for row in &report.rows {
        table.push(vec![
            row.n.to_string(),
            "j_n".to_string(),
            fmt_f64(row.j_n.midpoint()),
            fmt_f64(row.j_n.width()),
        ]);
        table.push(vec![
            row.n.to_string(),
            "j_error".to_string(),
            fmt_f64(row.error),
            fmt_f64(row.tolerance),
        ]);
    }
    table.push(vec![
        "0".to_string(),
        "j_all_within".to_string(),
        fmt_f64(report.all_within as u8 as f64),
        fmt_f64(0.0),
    ]);
    table.push(vec![
        "0".to_string(),
        "j_error_decreasing".to_string(),
        fmt_f64(report.decreasing as u8 as f64),
        fmt_f64(0.0),
    ]);

    // Uniform distance gap over the compact grid, one row per member.
    for &n in &block.schedule {
        let gap =
            uniform_distance_gap(&p.group, &family, n, &grid, &p.solver).map_err(gamma_err)?;
        table.push(vec![
            n.to_string(),
            "uniform_gap".to_string(),
            fmt_f64(gap.max_gap),
            fmt_f64(gap.max_width),
        ]);
    }

    // Hölder equicontinuity constants across the family.
    let equi =
        equicontinuity_fit(&p.group, &family, &grid, &block.schedule, &p.solver).map_err(gamma_err)?;
    table.push(vec![
        "0".to_string(),
        "equicontinuity_limit".to_string(),
        fmt_f64(equi.limit_constant),
        fmt_f64(0.0),
    ]);
    for (n, c) in &equi.per_n {
        table.push(vec![
            n.to_string(),
            "equicontinuity_c".to_string(),
            fmt_f64(*c),
            fmt_f64(0.0),
        ]);
    }
    table.push(vec![
        "0".to_string(),
        "equicontinuity_uniform".to_string(),
        fmt_f64(equi.uniformly_bounded as u8 as f64),
        fmt_f64(0.0),
    ]);

    // Optional recovery stage along a limit geodesic.
    if let (Some(target), Some(rs)) = (&block.recovery_target, &block.recovery_r) {
        let x = Point::new(target.x.clone());
        let y = Point::new(target.y.clone());
        let est =
            solve_distance(&p.group, family.limit(), &x, &y, &p.solver).map_err(solver_err)?;
        let schedule: Vec<(usize, usize)> = block
            .schedule
            .iter()
            .zip(rs)
            .map(|(&n, &r)| (n, r))
            .collect();
        let recovery =
            recovery_sequence(&p.group, &family, &est.curve, &schedule, &p.solver)
                .map_err(gamma_err)?;
        table.push(vec![
            "0".to_string(),
            "recovery_l_limit".to_string(),
            fmt_f64(recovery.l_limit),
            fmt_f64(0.0),
        ]);
        for row in &recovery.rows {
            let tag = format!("[r={}]", row.r);
            table.push(vec![
                row.n.to_string(),
                format!("recovery_l_n{tag}"),
                fmt_f64(row.l_n),
                fmt_f64(row.solver_slack),
            ]);
            table.push(vec![
                row.n.to_string(),
                format!("recovery_l_n_gamma{tag}"),
                fmt_f64(row.l_n_gamma),
                fmt_f64(0.0),
            ]);
            table.push(vec![
                row.n.to_string(),
                format!("recovery_budget{tag}"),
                fmt_f64(row.budget),
                fmt_f64(0.0),
            ]);
            table.push(vec![
                row.n.to_string(),
                format!("recovery_sup_gauge{tag}"),
                fmt_f64(row.sup_gauge_distance),
                fmt_f64(0.0),
            ]);
            table.push(vec![
                row.n.to_string(),
                format!("recovery_within{tag}"),
                fmt_f64(row.within_bound as u8 as f64),
                fmt_f64(0.0),
            ]);
        }
    }

    let elapsed = clock.elapsed().as_secs_f64();
    let all_converged = report.all_within && equi.uniformly_bounded;
    Ok(RunOutcome {
        tables: vec![(table, elapsed)],
        all_converged,
    })
}

/// Primes indexing the Halton bases for anchor sampling.
const HALTON_PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

fn run_approx(p: &Prepared) -> Result<RunOutcome, CliError> {
    let metric = p.metric.as_ref().expect("validated");
    let block = p.config.approx.as_ref().expect("validated");
    let dim = p.group.dim();
    if dim > HALTON_PRIMES.len() {
        return Err(CliError::Config(format!(
            "approx: anchor sampling supports dimension up to {}, group has {dim}",
            HALTON_PRIMES.len()
        )));
    }
    let omega =
        OmegaBox::new(block.omega_lo.clone(), block.omega_hi.clone()).map_err(gamma_err)?;
    let test_points = omega.grid(block.grid_per_axis);
    // Low-discrepancy anchor pool: one Halton sequence per axis, mapped
    // affinely into Ω. Index 0 is skipped — it degenerates to a corner.
    let anchor_pool: Vec<Point> = (0..block.pool)
        .map(|i| {
            let coords: Vec<f64> = (0..dim)
                .map(|axis| {
                    let u = carnotlab::mesh::halton(i + 1, HALTON_PRIMES[axis]);
                    block.omega_lo[axis] + (block.omega_hi[axis] - block.omega_lo[axis]) * u
                })
                .collect();
            Point::new(coords)
        })
        .collect();

    let base = Point::new(block.base.clone());
    let oracle = warm_oracle(Arc::clone(&p.group), metric.clone(), p.solver.clone());
    let oracle_failed = Arc::new(AtomicBool::new(false));
    let target = {
        let oracle = oracle.clone();
        let failed = Arc::clone(&oracle_failed);
        let base = base.clone();
        move |q: &Point| -> f64 {
            match oracle(&base, q) {
                Ok(v) => v,
                Err(_) => {
                    failed.store(true, Ordering::Relaxed);
                    f64::NAN
                }
            }
        }
    };

    let clock = Instant::now();
    let rows = cone_scheme(
        &oracle,
        &anchor_pool,
        &target,
        block.lip,
        &block.stages,
        &test_points,
    )
    .map_err(solver_err)?;
    let elapsed = clock.elapsed().as_secs_f64();
    if oracle_failed.load(Ordering::Relaxed) {
        return Err(CliError::Solver(
            "approx: the distance oracle failed at a test point".into(),
        ));
    }

    let mut table = Table::new(
        "approx.csv",
        vec![
            "n".into(),
            "covering_radius".into(),
            "max_gap".into(),
            "gap_bound".into(),
            "strictly_increasing".into(),
            "below_target".into(),
        ],
    );
    let mut values = Table::new(
        "approx_values.csv",
        vec![
            "n".into(),
            "point".into(),
            "h_n".into(),
            "target".into(),
        ],
    );
    let targets: Vec<f64> = test_points.iter().map(&target).collect();
    if oracle_failed.load(Ordering::Relaxed) {
        return Err(CliError::Solver(
            "approx: the distance oracle failed at a test point".into(),
        ));
    }
    for row in &rows {
        table.push(vec![
            row.n.to_string(),
            fmt_f64(row.covering_radius),
            fmt_f64(row.max_gap),
            fmt_f64(row.gap_bound),
            bool_cell(row.strictly_increasing),
            bool_cell(row.below_target),
        ]);
        for (j, v) in row.values.iter().enumerate() {
            values.push(vec![
                row.n.to_string(),
                j.to_string(),
                fmt_f64(*v),
                fmt_f64(targets[j]),
            ]);
        }
    }
    let all_converged = rows.iter().all(|r| r.strictly_increasing && r.below_target);
    Ok(RunOutcome {
        tables: vec![(table, elapsed), (values, elapsed)],
        all_converged,
    })
}
