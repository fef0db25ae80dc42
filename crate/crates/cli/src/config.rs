//! The experiment configuration document: one JSON object describing the
//! group, the metric, the solver profile, and one experiment with its
//! inputs. Validation is separated from execution so `validate` can check
//! a document without running anything.

use std::fmt;
use std::path::{Path, PathBuf};

use carnotlab::{
    metric_from_config, CarnotGroup, GroupSpec, MetricConfig, Point, SolverConfig,
    SubFinslerMetric,
};
use serde::Deserialize;

use crate::CliError;

/// Experiment kinds the runner understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Dist,
    Sphere,
    Dual,
    Mder,
    DualityGap,
    Gamma,
    Approx,
}

impl Kind {
    pub fn parse(s: &str) -> Option<Kind> {
        Some(match s {
            "dist" => Kind::Dist,
            "sphere" => Kind::Sphere,
            "dual" => Kind::Dual,
            "mder" => Kind::Mder,
            "duality-gap" => Kind::DualityGap,
            "gamma" => Kind::Gamma,
            "approx" => Kind::Approx,
            _ => return None,
        })
    }

    pub fn all() -> &'static [&'static str] {
        &[
            "dist",
            "sphere",
            "dual",
            "mder",
            "duality-gap",
            "gamma",
            "approx",
        ]
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Kind::Dist => "dist",
            Kind::Sphere => "sphere",
            Kind::Dual => "dual",
            Kind::Mder => "mder",
            Kind::DualityGap => "duality-gap",
            Kind::Gamma => "gamma",
            Kind::Approx => "approx",
        };
        f.write_str(s)
    }
}

/// A group reference: a builtin name or an inline structure spec.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum GroupChoice {
    Name(String),
    Spec(GroupSpec),
}

/// Point-pair queries, inline or from a CSV file of `2·dim` columns.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Queries {
    Inline(Vec<PairRow>),
    Csv { csv: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRow {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Partial solver profile; unset fields keep library defaults. The RNG
/// seed always comes from the top-level `seed`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub segments: Option<usize>,
    pub multistarts: Option<usize>,
    pub penalty_schedule: Option<Vec<f64>>,
    pub max_iters: Option<usize>,
    pub step_tol: Option<f64>,
    pub fd_step_rel: Option<f64>,
    pub endpoint_tol: Option<f64>,
    pub refine_levels: Option<usize>,
}

impl SolverBlock {
    pub fn build(&self, seed: u64) -> SolverConfig {
        let mut cfg = SolverConfig::default();
        if let Some(v) = self.segments {
            cfg.segments = v;
        }
        if let Some(v) = self.multistarts {
            cfg.multistarts = v;
        }
        if let Some(v) = self.penalty_schedule.clone() {
            cfg.penalty_schedule = v;
        }
        if let Some(v) = self.max_iters {
            cfg.max_iters = v;
        }
        if let Some(v) = self.step_tol {
            cfg.step_tol = v;
        }
        if let Some(v) = self.fd_step_rel {
            cfg.fd_step_rel = v;
        }
        if let Some(v) = self.endpoint_tol {
            cfg.endpoint_tol = v;
        }
        if let Some(v) = self.refine_levels {
            cfg.refine_levels = v;
        }
        cfg.seed = seed;
        cfg
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereBlock {
    pub center: Vec<f64>,
    pub radius: f64,
    pub directions: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualBlock {
    /// Fiber vectors to evaluate, one row each.
    pub vectors: Vec<Vec<f64>>,
    /// Base point (identity when omitted); only base-dependent metrics care.
    pub base: Option<Vec<f64>>,
    /// Mesh resolution for sampled dual strategies.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MderSample {
    pub base: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MderBlock {
    pub samples: Vec<MderSample>,
    /// Dilation parameters, strictly decreasing; library default when
    /// omitted.
    pub schedule: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualityGapBlock {
    #[serde(default = "default_resolution")]
    pub resolution: usize,
}

fn default_resolution() -> usize {
    64
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyBlock {
    /// `scaling`, `checkerboard`, or `mixing`.
    pub kind: String,
    /// Limit metric (scaling/mixing); ignored for checkerboard.
    pub metric: Option<MetricConfig>,
    /// Second metric for mixing.
    pub other: Option<MetricConfig>,
    /// Checkerboard coefficients.
    pub low: Option<f64>,
    pub high: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomRow {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaBlock {
    pub family: FamilyBlock,
    /// Member indices, strictly increasing.
    pub schedule: Vec<usize>,
    /// Sampling box Ω.
    pub omega_lo: Vec<f64>,
    pub omega_hi: Vec<f64>,
    /// Lattice points per axis for the compact grid.
    #[serde(default = "default_grid")]
    pub grid_per_axis: usize,
    /// Atoms of the measure μ (μ_n = μ down the schedule).
    pub atoms: Vec<AtomRow>,
    /// Optional recovery stage: straight-line target between two points,
    /// replaced by almost-geodesics on `r` intervals per schedule entry.
    pub recovery_target: Option<PairRow>,
    pub recovery_r: Option<Vec<usize>>,
}

fn default_grid() -> usize {
    3
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApproxBlock {
    /// Apex of the target cone `f = d(base, ·)`.
    pub base: Vec<f64>,
    /// Anchor pool size (deterministic low-discrepancy points in Ω).
    pub pool: usize,
    /// Anchor prefix sizes, strictly increasing.
    pub stages: Vec<usize>,
    /// Sampling box for anchors and test points.
    pub omega_lo: Vec<f64>,
    pub omega_hi: Vec<f64>,
    #[serde(default = "default_grid")]
    pub grid_per_axis: usize,
    /// Lipschitz budget of the target (1 for a metric cone).
    #[serde(default = "default_lip")]
    pub lip: f64,
}

fn default_lip() -> f64 {
    1.0
}

/// The whole configuration document.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Mandatory RNG seed; determines every random choice downstream.
    pub seed: u64,
    pub group: GroupChoice,
    pub experiment: String,
    #[serde(default)]
    pub metric: Option<MetricConfig>,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub queries: Option<Queries>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Fail with exit code 3 when any solve does not converge.
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub sphere: Option<SphereBlock>,
    #[serde(default)]
    pub dual: Option<DualBlock>,
    #[serde(default)]
    pub mder: Option<MderBlock>,
    #[serde(default)]
    pub duality_gap: Option<DualityGapBlock>,
    #[serde(default)]
    pub gamma: Option<GammaBlock>,
    #[serde(default)]
    pub approx: Option<ApproxBlock>,
}

/// A parsed and cross-checked configuration, ready to run.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub kind: Kind,
    pub group: std::sync::Arc<CarnotGroup>,
    pub metric: Option<SubFinslerMetric>,
    pub solver: SolverConfig,
    pub pairs: Vec<(Point, Point)>,
}

pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Config(format!("config schema: {e}")))
}

/// Full validation: schema (already parsed), group construction, metric
/// construction, experiment-block presence, and referenced files.
pub fn prepare(config: ExperimentConfig, config_dir: &Path) -> Result<Prepared, CliError> {
    let kind = Kind::parse(&config.experiment).ok_or_else(|| {
        CliError::Config(format!(
            "experiment: unknown kind {:?} (expected one of {})",
            config.experiment,
            Kind::all().join(", ")
        ))
    })?;

    let spec = match &config.group {
        GroupChoice::Name(name) => carnotlab::group::builtin(name).ok_or_else(|| {
            CliError::Config(format!(
                "group: no builtin named {:?} (try `list-builtins`)",
                name
            ))
        })?,
        GroupChoice::Spec(spec) => spec.clone(),
    };
    let group = std::sync::Arc::new(
        CarnotGroup::new(spec).map_err(|e| CliError::Config(format!("group: {e}")))?,
    );

    let metric = match &config.metric {
        Some(block) => Some(
            metric_from_config(&group, block)
                .map_err(|e| CliError::Config(format!("metric: {e}")))?,
        ),
        None => None,
    };
    let needs_metric = !matches!(kind, Kind::Gamma);
    if needs_metric && metric.is_none() {
        return Err(CliError::Config(format!(
            "metric: required for experiment {kind}"
        )));
    }

    let solver = config.solver.build(config.seed);
    if solver.segments < 2 {
        return Err(CliError::Config("solver.segments: need at least 2".into()));
    }

    let needs_pairs = matches!(kind, Kind::Dist | Kind::DualityGap);
    let pairs = match (&config.queries, needs_pairs) {
        (Some(q), _) => load_pairs(q, config_dir, group.dim())?,
        (None, true) => {
            return Err(CliError::Config(format!(
                "queries: required for experiment {kind}"
            )))
        }
        (None, false) => Vec::new(),
    };
    if needs_pairs && pairs.is_empty() {
        return Err(CliError::Config("queries: empty query list".into()));
    }

    match kind {
        Kind::Sphere => {
            let block = config
                .sphere
                .as_ref()
                .ok_or_else(|| CliError::Config("sphere: block required".into()))?;
            check_dim("sphere.center", &block.center, group.dim())?;
            if block.radius <= 0.0 {
                return Err(CliError::Config("sphere.radius: must be positive".into()));
            }
            if block.directions == 0 {
                return Err(CliError::Config("sphere.directions: must be positive".into()));
            }
        }
        Kind::Dual => {
            let block = config
                .dual
                .as_ref()
                .ok_or_else(|| CliError::Config("dual: block required".into()))?;
            if block.vectors.is_empty() {
                return Err(CliError::Config("dual.vectors: empty".into()));
            }
            for (i, v) in block.vectors.iter().enumerate() {
                check_dim(&format!("dual.vectors[{i}]"), v, group.horizontal_dim())?;
            }
            if let Some(base) = &block.base {
                check_dim("dual.base", base, group.dim())?;
            }
        }
        Kind::Mder => {
            let block = config
                .mder
                .as_ref()
                .ok_or_else(|| CliError::Config("mder: block required".into()))?;
            if block.samples.is_empty() {
                return Err(CliError::Config("mder.samples: empty".into()));
            }
            for (i, s) in block.samples.iter().enumerate() {
                check_dim(&format!("mder.samples[{i}].base"), &s.base, group.dim())?;
                check_dim(
                    &format!("mder.samples[{i}].h"),
                    &s.h,
                    group.horizontal_dim(),
                )?;
            }
            if let Some(schedule) = &block.schedule {
                if !schedule.windows(2).all(|w| w[0] > w[1])
                    || schedule.first().is_none_or(|t| *t <= 0.0)
                {
                    return Err(CliError::Config(
                        "mder.schedule: need strictly decreasing positive values".into(),
                    ));
                }
            }
        }
        Kind::Gamma => {
            let block = config
                .gamma
                .as_ref()
                .ok_or_else(|| CliError::Config("gamma: block required".into()))?;
            validate_gamma(block, &group)?;
        }
        Kind::Approx => {
            let block = config
                .approx
                .as_ref()
                .ok_or_else(|| CliError::Config("approx: block required".into()))?;
            check_dim("approx.base", &block.base, group.dim())?;
            check_dim("approx.omega_lo", &block.omega_lo, group.dim())?;
            check_dim("approx.omega_hi", &block.omega_hi, group.dim())?;
            if block.stages.is_empty() || !block.stages.windows(2).all(|w| w[0] < w[1]) {
                return Err(CliError::Config(
                    "approx.stages: need a strictly increasing non-empty list".into(),
                ));
            }
            if *block.stages.last().unwrap() > block.pool {
                return Err(CliError::Config(
                    "approx.stages: last stage exceeds the anchor pool".into(),
                ));
            }
            if block.lip <= 0.0 {
                return Err(CliError::Config("approx.lip: must be positive".into()));
            }
        }
        Kind::Dist | Kind::DualityGap => {}
    }

    Ok(Prepared {
        kind,
        group,
        metric,
        solver,
        pairs,
        config,
    })
}

fn validate_gamma(block: &GammaBlock, group: &CarnotGroup) -> Result<(), CliError> {
    match block.family.kind.as_str() {
        "scaling" => {
            if block.family.metric.is_none() {
                return Err(CliError::Config(
                    "gamma.family.metric: required for scaling".into(),
                ));
            }
        }
        "mixing" => {
            if block.family.metric.is_none() || block.family.other.is_none() {
                return Err(CliError::Config(
                    "gamma.family: mixing needs `metric` and `other`".into(),
                ));
            }
        }
        "checkerboard" => {
            let (low, high) = (
                block.family.low.unwrap_or(0.0),
                block.family.high.unwrap_or(0.0),
            );
            if !(low > 0.0 && high >= low) {
                return Err(CliError::Config(
                    "gamma.family: checkerboard needs 0 < low <= high".into(),
                ));
            }
        }
        other => {
            return Err(CliError::Config(format!(
                "gamma.family.kind: unknown kind {other:?}"
            )))
        }
    }
    if block.schedule.is_empty() || !block.schedule.windows(2).all(|w| w[0] < w[1]) {
        return Err(CliError::Config(
            "gamma.schedule: need a strictly increasing non-empty list".into(),
        ));
    }
    if block.schedule.first().is_some_and(|n| *n == 0) {
        return Err(CliError::Config("gamma.schedule: indices start at 1".into()));
    }
    check_dim("gamma.omega_lo", &block.omega_lo, group.dim())?;
    check_dim("gamma.omega_hi", &block.omega_hi, group.dim())?;
    if block.atoms.is_empty() {
        return Err(CliError::Config("gamma.atoms: empty measure".into()));
    }
    for (i, atom) in block.atoms.iter().enumerate() {
        check_dim(&format!("gamma.atoms[{i}].x"), &atom.x, group.dim())?;
        check_dim(&format!("gamma.atoms[{i}].y"), &atom.y, group.dim())?;
        if atom.weight <= 0.0 {
            return Err(CliError::Config(format!(
                "gamma.atoms[{i}].weight: must be positive"
            )));
        }
    }
    match (&block.recovery_target, &block.recovery_r) {
        (None, None) => {}
        (Some(target), Some(rs)) => {
            check_dim("gamma.recovery_target.x", &target.x, group.dim())?;
            check_dim("gamma.recovery_target.y", &target.y, group.dim())?;
            if rs.len() != block.schedule.len() {
                return Err(CliError::Config(
                    "gamma.recovery_r: one entry per schedule index".into(),
                ));
            }
            if rs.iter().any(|r| *r == 0) {
                return Err(CliError::Config("gamma.recovery_r: entries start at 1".into()));
            }
        }
        _ => {
            return Err(CliError::Config(
                "gamma: recovery_target and recovery_r come together".into(),
            ))
        }
    }
    Ok(())
}

fn check_dim(field: &str, v: &[f64], want: usize) -> Result<(), CliError> {
    if v.len() != want {
        return Err(CliError::Config(format!(
            "{field}: has {} coordinates, the group wants {want}",
            v.len()
        )));
    }
    if v.iter().any(|c| !c.is_finite()) {
        return Err(CliError::Config(format!("{field}: non-finite coordinate")));
    }
    Ok(())
}

fn load_pairs(
    queries: &Queries,
    config_dir: &Path,
    dim: usize,
) -> Result<Vec<(Point, Point)>, CliError> {
    match queries {
        Queries::Inline(rows) => rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                check_dim(&format!("queries[{i}].x"), &row.x, dim)?;
                check_dim(&format!("queries[{i}].y"), &row.y, dim)?;
                Ok((Point::new(row.x.clone()), Point::new(row.y.clone())))
            })
            .collect(),
        Queries::Csv { csv } => {
            let path = if csv.is_absolute() {
                csv.clone()
            } else {
                config_dir.join(csv)
            };
            if !path.exists() {
                return Err(CliError::Config(format!(
                    "queries.csv: file {} does not exist",
                    path.display()
                )));
            }
            let text = std::fs::read_to_string(&path).map_err(CliError::Io)?;
            let mut pairs = Vec::new();
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() {
                    continue;
                }
                let cells: Result<Vec<f64>, _> =
                    line.split(',').map(|c| c.trim().parse::<f64>()).collect();
                let cells = cells.map_err(|e| {
                    CliError::Config(format!("queries.csv line {}: {e}", lineno + 1))
                })?;
                if cells.len() != 2 * dim {
                    return Err(CliError::Config(format!(
                        "queries.csv line {}: {} columns, expected {}",
                        lineno + 1,
                        cells.len(),
                        2 * dim
                    )));
                }
                pairs.push((
                    Point::new(cells[..dim].to_vec()),
                    Point::new(cells[dim..].to_vec()),
                ));
            }
            if pairs.is_empty() {
                return Err(CliError::Config("queries.csv: no data rows".into()));
            }
            Ok(pairs)
        }
    }
}
