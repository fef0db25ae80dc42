//! Sub-Finsler metrics on the horizontal bundle and their duals.
//!
//! A metric assigns to each base point a positively `|λ|`-homogeneous,
//! norm-sandwiched cost on horizontal (frame) coefficients. Three concrete
//! families get exact dual formulas — elliptic (quadratic-form) metrics,
//! polytope gauges, and the support/polar functions they dualize to — and
//! everything else falls back to a deterministic sampled dual that reports
//! a certified mesh error bound alongside its value.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::{CarnotGroup, Point};
use crate::mesh;

/// Relative gap accepted between a convex metric and its bidual when both
/// dual hops use exact strategies.
pub const EXACT_BIDUAL_TOL: f64 = 1e-9;

/// Regularity annotation for the base-point dependence of a metric.
///
/// The tag is carried, not inferred; probes report whether sampled behavior
/// is consistent with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularity {
    Continuous,
    /// Upper semicontinuous in the base point.
    Usc,
    /// Lower semicontinuous in the base point.
    Lsc,
    /// Merely Borel measurable.
    Borel,
}

impl Regularity {
    /// Semicontinuity flips under duality; continuity and plain
    /// measurability are preserved.
    pub fn dual(self) -> Regularity {
        match self {
            Regularity::Continuous => Regularity::Continuous,
            Regularity::Usc => Regularity::Lsc,
            Regularity::Lsc => Regularity::Usc,
            Regularity::Borel => Regularity::Borel,
        }
    }
}

impl fmt::Display for Regularity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regularity::Continuous => "continuous",
            Regularity::Usc => "usc",
            Regularity::Lsc => "lsc",
            Regularity::Borel => "borel",
        };
        f.write_str(s)
    }
}

/// Errors from metric constructors and the config registry.
#[derive(Debug, Error)]
pub enum MetricError {
    /// The norm sandwich `(1/α)|v| ≤ φ ≤ α|v|` failed on a validation sample.
    #[error("alpha sandwich violated: {detail}")]
    AlphaBoundViolation { detail: String },
    /// A polytope vertex has no negated partner.
    #[error("vertex set is not symmetric: vertex {index} has no negative")]
    AsymmetricVertexSet { index: usize },
    /// The vertex set does not span the fiber.
    #[error("vertex set does not span the horizontal fiber")]
    DegenerateSpan,
    /// Vertex enumeration cost grows combinatorially; sets are capped.
    #[error("vertex set has {count} vertices, above the supported cap of 24")]
    TooManyVertices { count: usize },
    /// A config block could not be interpreted.
    #[error("bad metric parameters: {detail}")]
    BadParams { detail: String },
    /// The config named an unknown constructor.
    #[error("unknown metric kind {kind:?}")]
    UnknownKind { kind: String },
}

/// Pointwise evaluation rule of a custom metric: `(base point, fiber
/// vector) -> cost`.
pub type EvalFn = Arc<dyn Fn(&Point, &[f64]) -> f64 + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&Point) -> DMatrix<f64> + Send + Sync>;
type VertexFn = Arc<dyn Fn(&Point) -> Vec<Vec<f64>> + Send + Sync>;

#[derive(Clone)]
enum MatrixRule {
    Constant(DMatrix<f64>),
    Varying(MatrixFn),
}

#[derive(Clone)]
enum VertexRule {
    Constant(Vec<Vec<f64>>),
    Varying(VertexFn),
}

impl VertexRule {
    fn with<R>(&self, x: &Point, f: impl FnOnce(&[Vec<f64>]) -> R) -> R {
        match self {
            VertexRule::Constant(v) => f(v),
            VertexRule::Varying(g) => f(&g(x)),
        }
    }
}

#[derive(Clone)]
enum MetricKind {
    /// `sqrt(vᵀ A(x) v)`.
    Elliptic { a: MatrixRule },
    /// Minkowski gauge of `conv(V(x))`.
    Polyhedral { verts: VertexRule },
    /// Support function `max_i |⟨v, w_i⟩|` of the same vertex set — the
    /// exact dual of the polytope gauge.
    Support { verts: VertexRule },
    /// Support function of the polar body `{u : |⟨w_i, u⟩| ≤ 1}`, computed
    /// by feasibility-checked vertex enumeration. This is the exact dual of
    /// `Support` and agrees with the `Polyhedral` gauge, but through an
    /// independent code path, which keeps bidual round trips honest.
    PolarGauge { verts: VertexRule },
    /// Black-box rule; duals are sampled.
    Custom { eval: EvalFn },
}

/// How a dual value was produced, plus its certified accuracy.
#[derive(Debug, Clone, PartialEq)]
pub enum DualStrategy {
    /// Matrix inverse; exact up to conditioning.
    EllipticExact,
    /// Vertex or polar-vertex enumeration; exact up to linear solves.
    PolyhedralExact,
    /// Deterministic sphere mesh plus golden-section refinement. The value
    /// is a lower bound of the true supremum; `mesh_error_bound` is the
    /// recorded relative covering estimate `α²·(angular gap)`.
    Sampled {
        resolution: usize,
        mesh_error_bound: f64,
    },
}

impl DualStrategy {
    /// Relative error budget this strategy claims for one dual hop.
    pub fn error_budget(&self) -> f64 {
        match self {
            DualStrategy::EllipticExact | DualStrategy::PolyhedralExact => EXACT_BIDUAL_TOL,
            DualStrategy::Sampled {
                mesh_error_bound, ..
            } => *mesh_error_bound,
        }
    }
}

/// A sub-Finsler metric: Borel cost on the horizontal bundle satisfying
/// `|λ|`-homogeneity and the `α` norm sandwich, convex in the fiber unless
/// flagged otherwise.
#[derive(Clone)]
pub struct SubFinslerMetric {
    name: String,
    alpha: f64,
    regularity: Regularity,
    convex: bool,
    base_dependent: bool,
    fiber_dim: usize,
    kind: MetricKind,
}

impl fmt::Debug for SubFinslerMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SubFinslerMetric")
            .field("name", &self.name)
            .field("alpha", &self.alpha)
            .field("regularity", &self.regularity)
            .field("convex", &self.convex)
            .finish()
    }
}

/// A dual metric: the metric itself plus the strategy that evaluates it.
#[derive(Debug, Clone)]
pub struct DualMetric {
    pub metric: SubFinslerMetric,
    pub strategy: DualStrategy,
}

impl SubFinslerMetric {
    /// The Euclidean fiber norm; self-dual with `α = 1`.
    pub fn euclidean(fiber_dim: usize) -> Self {
        SubFinslerMetric {
            name: "euclidean".into(),
            alpha: 1.0,
            regularity: Regularity::Continuous,
            convex: true,
            base_dependent: false,
            fiber_dim,
            kind: MetricKind::Elliptic {
                a: MatrixRule::Constant(DMatrix::identity(fiber_dim, fiber_dim)),
            },
        }
    }

    /// Elliptic metric `sqrt(vᵀ A v)` with a constant symmetric
    /// positive-definite matrix; `α` is derived from the spectrum.
    pub fn elliptic_constant(name: &str, a: DMatrix<f64>) -> Result<Self, MetricError> {
        let m = a.nrows();
        check_spd(&a, "constant matrix")?;
        let eig = a.clone().symmetric_eigen().eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        let alpha = hi.sqrt().max(1.0 / lo.sqrt());
        Ok(SubFinslerMetric {
            name: name.into(),
            alpha,
            regularity: Regularity::Continuous,
            convex: true,
            base_dependent: false,
            fiber_dim: m,
            kind: MetricKind::Elliptic {
                a: MatrixRule::Constant(a),
            },
        })
    }

    /// Elliptic metric with a base-point-dependent matrix rule. The
    /// eigenvalue sandwich `[α⁻², α²]` is validated on the given sample.
    pub fn elliptic(
        name: &str,
        a: MatrixFn,
        alpha: f64,
        regularity: Regularity,
        sample: &[Point],
    ) -> Result<Self, MetricError> {
        let mut fiber_dim = 0;
        for (s, x) in sample.iter().enumerate() {
            let ax = a(x);
            fiber_dim = ax.nrows();
            check_spd(&ax, &format!("sample {s}"))?;
            let eig = ax.symmetric_eigen().eigenvalues;
            let (lo, hi) = (eig.min(), eig.max());
            if lo < alpha.powi(-2) - 1e-12 || hi > alpha.powi(2) + 1e-12 {
                return Err(MetricError::AlphaBoundViolation {
                    detail: format!(
                        "sample {s}: eigenvalues in [{lo:.6}, {hi:.6}] outside [{:.6}, {:.6}]",
                        alpha.powi(-2),
                        alpha.powi(2)
                    ),
                });
            }
        }
        Ok(SubFinslerMetric {
            name: name.into(),
            alpha,
            regularity,
            convex: true,
            base_dependent: true,
            fiber_dim,
            kind: MetricKind::Elliptic {
                a: MatrixRule::Varying(a),
            },
        })
    }

    /// Gauge of a constant symmetric polytope given by its vertices; `α` is
    /// derived exactly from the circumradius and inradius.
    pub fn polyhedral_constant(name: &str, verts: Vec<Vec<f64>>) -> Result<Self, MetricError> {
        let m = verts.first().map(|w| w.len()).unwrap_or(0);
        validate_vertices(&verts, m)?;
        let circum = verts
            .iter()
            .map(|w| norm2(w))
            .fold(0.0f64, f64::max);
        // Facets of conv(V) are the vertices of the polar body; the facet
        // at polar vertex u sits at distance 1/|u| from the origin.
        let mut inradius_inv = 0.0f64;
        enumerate_polar_vertices(&verts, m, &mut |u| {
            inradius_inv = inradius_inv.max(norm2(u));
        });
        if inradius_inv == 0.0 {
            return Err(MetricError::DegenerateSpan);
        }
        let alpha = circum.max(inradius_inv);
        Ok(SubFinslerMetric {
            name: name.into(),
            alpha,
            regularity: Regularity::Continuous,
            convex: true,
            base_dependent: false,
            fiber_dim: m,
            kind: MetricKind::Polyhedral {
                verts: VertexRule::Constant(verts),
            },
        })
    }

    /// Gauge of a base-point-dependent polytope rule, validated on a sample.
    pub fn polyhedral(
        name: &str,
        verts: VertexFn,
        alpha: f64,
        regularity: Regularity,
        sample: &[Point],
    ) -> Result<Self, MetricError> {
        let mut fiber_dim = 0;
        for x in sample {
            let v = verts(x);
            fiber_dim = v.first().map(|w| w.len()).unwrap_or(0);
            validate_vertices(&v, fiber_dim)?;
            // Empirical sandwich check on a direction mesh.
            for u in mesh::sphere_mesh(fiber_dim, 32) {
                let g = polytope_gauge(&v, &u);
                if g > alpha + 1e-9 || g < 1.0 / alpha - 1e-9 {
                    return Err(MetricError::AlphaBoundViolation {
                        detail: format!("gauge {g:.6} outside [1/{alpha}, {alpha}] on mesh"),
                    });
                }
            }
        }
        Ok(SubFinslerMetric {
            name: name.into(),
            alpha,
            regularity,
            convex: true,
            base_dependent: true,
            fiber_dim,
            kind: MetricKind::Polyhedral {
                verts: VertexRule::Varying(verts),
            },
        })
    }

    /// Scalar checkerboard field times the Euclidean fiber norm: cells of
    /// side `scale` in the first two base coordinates alternate between
    /// the `high` and `low` coefficients. Borel regularity — the jumps
    /// land exactly on cell walls.
    pub fn checkerboard(
        fiber_dim: usize,
        scale: f64,
        low: f64,
        high: f64,
    ) -> Result<Self, MetricError> {
        if scale <= 0.0 || low <= 0.0 || high < low {
            return Err(MetricError::BadParams {
                detail: "need scale > 0 and 0 < low <= high".into(),
            });
        }
        let eval: EvalFn = Arc::new(move |x: &Point, v: &[f64]| {
            let cell = (x.coords[0] / scale).floor() + (x.coords[1] / scale).floor();
            let c = if (cell as i64).rem_euclid(2) == 0 { high } else { low };
            c * norm2(v)
        });
        Ok(SubFinslerMetric::from_rule(
            &format!("checkerboard[{scale}]"),
            eval,
            fiber_dim,
            high.max(1.0 / low),
            Regularity::Borel,
            true,
            true,
        ))
    }

    /// Wraps an arbitrary evaluation rule. No validation is performed here;
    /// run [`verify_metric_axioms`] to audit the claims made by the flags.
    pub fn from_rule(
        name: &str,
        eval: EvalFn,
        fiber_dim: usize,
        alpha: f64,
        regularity: Regularity,
        convex: bool,
        base_dependent: bool,
    ) -> Self {
        SubFinslerMetric {
            name: name.into(),
            alpha,
            regularity,
            convex,
            base_dependent,
            fiber_dim,
            kind: MetricKind::Custom { eval },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The sandwich constant: `(1/α)|v| ≤ φ(x, v) ≤ α|v|`.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn regularity(&self) -> Regularity {
        self.regularity
    }

    /// Whether the metric claims fiber convexity (subadditivity).
    pub fn is_convex(&self) -> bool {
        self.convex
    }

    /// Whether evaluation actually reads the base point. Length integrals
    /// skip midpoint computations when it does not.
    pub fn base_dependent(&self) -> bool {
        self.base_dependent
    }

    pub fn fiber_dim(&self) -> usize {
        self.fiber_dim
    }

    /// Evaluates `φ(x, v)` on frame coefficients `v`.
    pub fn eval(&self, x: &Point, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.fiber_dim);
        match &self.kind {
            MetricKind::Elliptic { a } => match a {
                MatrixRule::Constant(mat) => quad_form_sqrt(mat, v),
                MatrixRule::Varying(f) => quad_form_sqrt(&f(x), v),
            },
            MetricKind::Polyhedral { verts } => verts.with(x, |w| polytope_gauge(w, v)),
            MetricKind::Support { verts } => verts.with(x, |w| support_value(w, v)),
            MetricKind::PolarGauge { verts } => verts.with(x, |w| polar_support(w, v)),
            MetricKind::Custom { eval } => eval(x, v),
        }
    }

    /// The dual metric `φ*(x, v) = sup_w |⟨v, w⟩| / φ(x, w)`.
    ///
    /// Elliptic, polyhedral, and polar kinds dualize exactly; custom rules
    /// get a sampled dual at the given mesh resolution. Semicontinuity tags
    /// flip according to the duality lemma, and duals are always convex.
    pub fn dual(&self, resolution: usize) -> DualMetric {
        let dual_name = format!("{}*", self.name);
        let (kind, strategy) = match &self.kind {
            MetricKind::Elliptic { a } => {
                let inv_rule = match a {
                    MatrixRule::Constant(mat) => MatrixRule::Constant(spd_inverse(mat)),
                    MatrixRule::Varying(f) => {
                        let f = f.clone();
                        MatrixRule::Varying(Arc::new(move |x: &Point| spd_inverse(&f(x))))
                    }
                };
                (
                    MetricKind::Elliptic { a: inv_rule },
                    DualStrategy::EllipticExact,
                )
            }
            MetricKind::Polyhedral { verts } => (
                MetricKind::Support {
                    verts: verts.clone(),
                },
                DualStrategy::PolyhedralExact,
            ),
            MetricKind::Support { verts } => (
                MetricKind::PolarGauge {
                    verts: verts.clone(),
                },
                DualStrategy::PolyhedralExact,
            ),
            MetricKind::PolarGauge { verts } => (
                // The dual of the polar gauge is the support function of the
                // original polytope again.
                MetricKind::Support {
                    verts: verts.clone(),
                },
                DualStrategy::PolyhedralExact,
            ),
            MetricKind::Custom { .. } => {
                let primal = self.clone();
                let res = mesh::canonical_resolution(resolution);
                let bound = self.alpha.powi(2) * mesh::mesh_angular_gap(self.fiber_dim, res);
                let eval: EvalFn =
                    Arc::new(move |x: &Point, v: &[f64]| sampled_dual_value(&primal, x, v, res));
                (
                    MetricKind::Custom { eval },
                    DualStrategy::Sampled {
                        resolution: res,
                        mesh_error_bound: bound,
                    },
                )
            }
        };
        DualMetric {
            metric: SubFinslerMetric {
                name: dual_name,
                alpha: self.alpha,
                regularity: self.regularity.dual(),
                convex: true,
                base_dependent: self.base_dependent,
                fiber_dim: self.fiber_dim,
                kind,
            },
            strategy,
        }
    }
}

/// Convenience wrapper: one dual evaluation.
pub fn dual_eval(phi: &SubFinslerMetric, x: &Point, v: &[f64], resolution: usize) -> f64 {
    phi.dual(resolution).metric.eval(x, v)
}

/// Pure mesh maximum of the dual objective, without refinement. Exposed so
/// the growing-set monotonicity of the sampled strategy can be tested
/// against exactly the quantity that property concerns.
pub fn sampled_dual_mesh_value(
    phi: &SubFinslerMetric,
    x: &Point,
    v: &[f64],
    resolution: usize,
) -> f64 {
    let res = mesh::canonical_resolution(resolution);
    let mut best = 0.0f64;
    for w in mesh::sphere_mesh(phi.fiber_dim(), res) {
        let val = dual_objective(phi, x, v, &w);
        if val > best {
            best = val;
        }
    }
    best
}

fn dual_objective(phi: &SubFinslerMetric, x: &Point, v: &[f64], w: &[f64]) -> f64 {
    let ip: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
    let denom = phi.eval(x, w);
    if denom <= 0.0 {
        return 0.0;
    }
    ip.abs() / denom
}

/// Sampled dual value: mesh maximum plus golden-section refinement around
/// the running argmax of every power-of-two prefix. Evaluating all coarser
/// prefixes keeps the result monotone in the resolution, and every value
/// returned is a genuine lower bound of the supremum because each candidate
/// is a feasible direction.
fn sampled_dual_value(phi: &SubFinslerMetric, x: &Point, v: &[f64], resolution: usize) -> f64 {
    let m = phi.fiber_dim();
    let res = mesh::canonical_resolution(resolution);
    let points = mesh::sphere_mesh(m, res);
    let values: Vec<f64> = points
        .iter()
        .map(|w| dual_objective(phi, x, v, w))
        .collect();

    let mut best = 0.0f64;
    let mut level = 8usize;
    loop {
        let level_res = level.min(res);
        let (argmax, _) = values[..level_res]
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &val)| {
                if val > acc.1 {
                    (i, val)
                } else {
                    acc
                }
            });
        best = best.max(values[argmax]);
        best = best.max(refine_around(phi, x, v, &points[argmax], m, level_res));
        if level >= res {
            break;
        }
        level *= 2;
    }
    best
}

/// Local refinement: golden-section search along rotations of the best mesh
/// point in each coordinate plane, bracketed by the mesh gap at this level.
fn refine_around(
    phi: &SubFinslerMetric,
    x: &Point,
    v: &[f64],
    center: &[f64],
    m: usize,
    level_res: usize,
) -> f64 {
    let gap = mesh::mesh_angular_gap(m, level_res);
    let mut best = dual_objective(phi, x, v, center);
    if m < 2 {
        return best;
    }
    let mut current = center.to_vec();
    for _pass in 0..2 {
        for a in 0..m {
            for b in (a + 1)..m {
                let base = current.clone();
                let mut f = |t: f64| {
                    let mut w = base.clone();
                    let (ca, cb) = (base[a], base[b]);
                    w[a] = ca * t.cos() - cb * t.sin();
                    w[b] = ca * t.sin() + cb * t.cos();
                    dual_objective(phi, x, v, &w)
                };
                let (t, val) = mesh::golden_section_max(&mut f, -gap, gap, 40);
                if val > best {
                    best = val;
                    let (ca, cb) = (current[a], current[b]);
                    current[a] = ca * t.cos() - cb * t.sin();
                    current[b] = ca * t.sin() + cb * t.cos();
                }
            }
        }
    }
    best
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

fn quad_form_sqrt(a: &DMatrix<f64>, v: &[f64]) -> f64 {
    let m = v.len();
    let mut acc = 0.0;
    for i in 0..m {
        for j in 0..m {
            acc += v[i] * a[(i, j)] * v[j];
        }
    }
    acc.max(0.0).sqrt()
}

fn check_spd(a: &DMatrix<f64>, what: &str) -> Result<(), MetricError> {
    if a.nrows() != a.ncols() {
        return Err(MetricError::BadParams {
            detail: format!("{what}: matrix is not square"),
        });
    }
    let sym_err = (a - a.transpose()).amax();
    if sym_err > 1e-10 {
        return Err(MetricError::BadParams {
            detail: format!("{what}: matrix is not symmetric (error {sym_err:.3e})"),
        });
    }
    if a.clone().cholesky().is_none() {
        return Err(MetricError::AlphaBoundViolation {
            detail: format!("{what}: matrix is not positive definite"),
        });
    }
    Ok(())
}

fn spd_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| a.clone().try_inverse())
        .expect("elliptic matrix rule produced a singular matrix")
}

fn validate_vertices(verts: &[Vec<f64>], m: usize) -> Result<(), MetricError> {
    if verts.len() > 24 {
        return Err(MetricError::TooManyVertices { count: verts.len() });
    }
    if verts.is_empty() || m == 0 {
        return Err(MetricError::DegenerateSpan);
    }
    for (i, w) in verts.iter().enumerate() {
        if w.len() != m {
            return Err(MetricError::BadParams {
                detail: format!("vertex {i} has dimension {} instead of {m}", w.len()),
            });
        }
        let has_negative = verts.iter().any(|u| {
            u.iter()
                .zip(w)
                .all(|(a, b)| (a + b).abs() <= 1e-9 * (1.0 + b.abs()))
        });
        if !has_negative {
            return Err(MetricError::AsymmetricVertexSet { index: i });
        }
    }
    let rows = verts.len();
    let mat = DMatrix::from_fn(rows, m, |r, c| verts[r][c]);
    if mat.rank(1e-10) < m {
        return Err(MetricError::DegenerateSpan);
    }
    Ok(())
}

fn for_each_combination(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    if k > n {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // Advance the lexicographic odometer.
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in (i + 1)..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Minkowski gauge of `conv(verts)`: the least total weight of a
/// nonnegative combination of vertices equal to `v`. The minimizing
/// boundary point lies on a face spanned by at most `m` vertices, so
/// enumerating `m`-subsets (plus exact single-vertex rays) is exact.
fn polytope_gauge(verts: &[Vec<f64>], v: &[f64]) -> f64 {
    let m = v.len();
    let vnorm = norm2(v);
    if vnorm == 0.0 {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    // Exact ray hits on single vertices.
    for w in verts {
        let ww: f64 = w.iter().map(|c| c * c).sum();
        if ww == 0.0 {
            continue;
        }
        let a: f64 = v.iter().zip(w).map(|(p, q)| p * q).sum::<f64>() / ww;
        if a > 0.0 {
            let residual: f64 = v
                .iter()
                .zip(w)
                .map(|(p, q)| (p - a * q).powi(2))
                .sum::<f64>()
                .sqrt();
            if residual <= 1e-12 * vnorm {
                best = best.min(a);
            }
        }
    }
    let rhs = DVector::from_column_slice(v);
    for_each_combination(verts.len(), m, &mut |subset: &[usize]| {
        let mat = DMatrix::from_fn(m, m, |r, c| verts[subset[c]][r]);
        if let Some(sol) = mat.lu().solve(&rhs) {
            if sol.iter().all(|&a| a >= -1e-12) {
                let total: f64 = sol.iter().map(|&a| a.max(0.0)).sum();
                if total.is_finite() {
                    best = best.min(total);
                }
            }
        }
    });
    best
}

/// Support function `max_i |⟨v, w_i⟩|` of the vertex set.
fn support_value(verts: &[Vec<f64>], v: &[f64]) -> f64 {
    verts
        .iter()
        .map(|w| v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>().abs())
        .fold(0.0, f64::max)
}

/// Visits every vertex of the polar body `{u : |⟨w_i, u⟩| ≤ 1}` by solving
/// all sign-resolved `m`-subsets of active constraints and keeping the
/// globally feasible solutions.
fn enumerate_polar_vertices(verts: &[Vec<f64>], m: usize, visit: &mut impl FnMut(&[f64])) {
    let n = verts.len();
    for_each_combination(n, m, &mut |subset: &[usize]| {
        let mat = DMatrix::from_fn(m, m, |r, c| verts[subset[r]][c]);
        let lu = mat.lu();
        // The first active constraint can be fixed at +1: the polar body is
        // symmetric, so -u is a vertex whenever u is.
        for signs in 0..(1usize << (m - 1)) {
            let rhs = DVector::from_fn(m, |r, _| {
                if r == 0 {
                    1.0
                } else if (signs >> (r - 1)) & 1 == 0 {
                    1.0
                } else {
                    -1.0
                }
            });
            if let Some(u) = lu.solve(&rhs) {
                let feasible = verts.iter().all(|w| {
                    let ip: f64 = w.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                    ip.abs() <= 1.0 + 1e-9
                });
                if feasible && u.iter().all(|c| c.is_finite()) {
                    visit(u.as_slice());
                }
            }
        }
    });
}

/// Support function of the polar body: `sup {⟨v, u⟩ : |⟨w_i, u⟩| ≤ 1 ∀i}`.
/// By the bipolar theorem this equals the gauge of `conv(verts)`.
fn polar_support(verts: &[Vec<f64>], v: &[f64]) -> f64 {
    let m = v.len();
    let mut best = 0.0f64;
    enumerate_polar_vertices(verts, m, &mut |u| {
        let ip: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
        if ip.abs() > best {
            best = ip.abs();
        }
    });
    best
}

/// Per-sample bidual comparison.
#[derive(Debug, Clone, Serialize)]
pub struct BidualSample {
    /// Primal value `φ(x, v)`.
    pub primal: f64,
    /// Bidual value `φ**(x, v)`.
    pub bidual: f64,
    /// `|φ** − φ| / max(φ, ε)`.
    pub rel_gap: f64,
}

/// Outcome of a bidual round trip over a sample set.
#[derive(Debug, Clone, Serialize)]
pub struct BidualReport {
    /// Largest relative gap `|φ** − φ|/φ` over the samples.
    pub max_rel_gap: f64,
    /// Largest relative overshoot `(φ** − φ)⁺/φ`; should be ~0 always,
    /// convex or not, since the bidual is the convex relaxation.
    pub max_overshoot: f64,
    /// Largest relative drop `(φ − φ**)⁺/φ`; strictly positive somewhere
    /// exactly when the metric fails fiber convexity.
    pub max_drop: f64,
    /// Error budget implied by the two dual strategies involved.
    pub declared_bound: f64,
    pub samples: Vec<BidualSample>,
}

/// Evaluates `φ**` against `φ` on the given `(point, vector)` samples.
///
/// For a convex metric the round trip must close up to the declared bound:
/// solver-exact strategies promise `1e-9`, sampled strategies promise their
/// combined mesh budgets. For a nonconvex metric the bidual is the convex
/// envelope, so a genuine drop appears and is reported, never asserted away.
pub fn bidual_check(
    phi: &SubFinslerMetric,
    samples: &[(Point, Vec<f64>)],
    resolution: usize,
) -> BidualReport {
    let dual = phi.dual(resolution);
    let bidual = dual.metric.dual(resolution);
    let b1 = dual.strategy.error_budget();
    let b2 = bidual.strategy.error_budget();
    // Sampled budgets compound: the second hop divides by an underestimated
    // dual, so the relative budgets add with a cross term.
    let declared_bound = ((b1 + b2) / (1.0 - b1.min(0.5))).max(EXACT_BIDUAL_TOL);

    let mut report = BidualReport {
        max_rel_gap: 0.0,
        max_overshoot: 0.0,
        max_drop: 0.0,
        declared_bound,
        samples: Vec::with_capacity(samples.len()),
    };
    for (x, v) in samples {
        let p = phi.eval(x, v);
        let b = bidual.metric.eval(x, v);
        let scale = p.abs().max(1e-300);
        let rel_gap = (b - p).abs() / scale;
        report.max_rel_gap = report.max_rel_gap.max(rel_gap);
        report.max_overshoot = report.max_overshoot.max((b - p).max(0.0) / scale);
        report.max_drop = report.max_drop.max((p - b).max(0.0) / scale);
        report.samples.push(BidualSample {
            primal: p,
            bidual: b,
            rel_gap,
        });
    }
    report
}

/// Worst violations of the metric axioms over a sample set; zeros mean the
/// sample saw nothing inconsistent.
#[derive(Debug, Clone, Serialize)]
pub struct AxiomReport {
    /// Worst relative error of `φ(x, λv) = |λ|·φ(x, v)`.
    pub homogeneity: f64,
    /// Worst relative shortfall of `φ` under `(1/α)|v|`.
    pub sandwich_lower: f64,
    /// Worst relative excess of `φ` over `α|v|`.
    pub sandwich_upper: f64,
    /// Worst relative violation of `φ(x, u+w) ≤ φ(x, u) + φ(x, w)`;
    /// only audited when the metric claims convexity.
    pub subadditivity: Option<f64>,
}

impl AxiomReport {
    /// Largest violation across all audited axioms.
    pub fn worst(&self) -> f64 {
        self.homogeneity
            .max(self.sandwich_lower)
            .max(self.sandwich_upper)
            .max(self.subadditivity.unwrap_or(0.0))
    }
}

/// Audits homogeneity, the `α` sandwich, and (for convex metrics)
/// subadditivity on the cartesian product of the given points and vectors.
pub fn verify_metric_axioms(
    phi: &SubFinslerMetric,
    points: &[Point],
    vectors: &[Vec<f64>],
) -> AxiomReport {
    let mut report = AxiomReport {
        homogeneity: 0.0,
        sandwich_lower: 0.0,
        sandwich_upper: 0.0,
        subadditivity: phi.is_convex().then_some(0.0),
    };
    let lambdas = [-2.0, -0.5, 0.5, 3.0];
    for x in points {
        for v in vectors {
            let base = phi.eval(x, v);
            let vn = norm2(v);
            let scale = vn.max(1e-300);
            for lam in lambdas {
                let scaled: Vec<f64> = v.iter().map(|c| c * lam).collect();
                let err = (phi.eval(x, &scaled) - lam.abs() * base).abs() / (scale * lam.abs());
                report.homogeneity = report.homogeneity.max(err);
            }
            report.sandwich_lower = report
                .sandwich_lower
                .max((vn / phi.alpha() - base) / scale);
            report.sandwich_upper = report
                .sandwich_upper
                .max((base - phi.alpha() * vn) / scale);
        }
        if let Some(sub) = report.subadditivity.as_mut() {
            for pair in vectors.windows(2) {
                let (u, w) = (&pair[0], &pair[1]);
                let sum: Vec<f64> = u.iter().zip(w).map(|(a, b)| a + b).collect();
                let scale = (norm2(u) + norm2(w)).max(1e-300);
                let viol = (phi.eval(x, &sum) - phi.eval(x, u) - phi.eval(x, w)) / scale;
                *sub = sub.max(viol);
            }
        }
    }
    report
}

/// Empirical envelopes of `φ` on shrinking neighborhoods of `(x, v)`.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeRow {
    pub radius: f64,
    /// Minimum of `φ` over the sampled neighborhood.
    pub lower_envelope: f64,
    /// Maximum of `φ` over the sampled neighborhood.
    pub upper_envelope: f64,
}

/// Semicontinuity probe: envelopes of `φ` over deterministic samples of
/// shrinking `(x, v)`-neighborhoods, for comparison against the value.
#[derive(Debug, Clone, Serialize)]
pub struct SemicontinuityProbe {
    pub value: f64,
    pub rows: Vec<ProbeRow>,
}

impl SemicontinuityProbe {
    /// Lower semicontinuity predicts `liminf ≥ value`: the sampled minimum
    /// at the finest radius must not undercut the value.
    pub fn consistent_with_lsc(&self, tol: f64) -> bool {
        self.rows
            .last()
            .map(|r| r.lower_envelope >= self.value - tol)
            .unwrap_or(true)
    }

    /// Upper semicontinuity predicts `limsup ≤ value`.
    pub fn consistent_with_usc(&self, tol: f64) -> bool {
        self.rows
            .last()
            .map(|r| r.upper_envelope <= self.value + tol)
            .unwrap_or(true)
    }
}

/// Samples `φ` on product neighborhoods `|x' − x| ≤ r`, `|v' − v| ≤ r`
/// for each radius in the (descending) schedule.
pub fn semicontinuity_probe(
    phi: &SubFinslerMetric,
    x: &Point,
    v: &[f64],
    radii: &[f64],
    samples_per_radius: usize,
) -> SemicontinuityProbe {
    let n = x.dim();
    let m = v.len();
    let value = phi.eval(x, v);
    let rows = radii
        .iter()
        .map(|&r| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for s in 0..samples_per_radius {
                let dir = mesh::sphere_point(n + m, s);
                let x2 = Point::new(
                    (0..n)
                        .map(|i| x.coords[i] + r * dir[i])
                        .collect::<Vec<f64>>(),
                );
                let v2: Vec<f64> = (0..m).map(|j| v[j] + r * dir[n + j]).collect();
                let val = phi.eval(&x2, &v2);
                lo = lo.min(val);
                hi = hi.max(val);
            }
            ProbeRow {
                radius: r,
                lower_envelope: lo,
                upper_envelope: hi,
            }
        })
        .collect();
    SemicontinuityProbe { value, rows }
}

/// Config-schema description of a metric: a named constructor plus its
/// parameter block, with optional overrides for the sandwich constant,
/// the regularity tag, and the display name.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricConfig {
    pub kind: String,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub regularity: Option<Regularity>,
    #[serde(default)]
    pub name: Option<String>,
}

fn params<T: serde::de::DeserializeOwned>(cfg: &MetricConfig) -> Result<T, MetricError> {
    serde_json::from_value(cfg.params.clone()).map_err(|e| MetricError::BadParams {
        detail: e.to_string(),
    })
}

/// Builds a metric for `group`'s horizontal fiber from a config block.
///
/// Known kinds: `euclidean`, `elliptic` (constant matrix),
/// `elliptic-oscillating` (diagonal modulated along the first coordinate),
/// `polyhedral` (constant vertex list), `lp` (fiber p-norm), `checkerboard`
/// (scalar field on unit cells), `two-phase` (scalar jump across a
/// coordinate hyperplane), and `min-of-norms` (a deliberately nonconvex
/// example).
pub fn metric_from_config(
    group: &CarnotGroup,
    cfg: &MetricConfig,
) -> Result<SubFinslerMetric, MetricError> {
    let m = group.horizontal_dim();
    let mut metric = match cfg.kind.as_str() {
        "euclidean" => SubFinslerMetric::euclidean(m),
        "elliptic" => {
            #[derive(Deserialize)]
            struct P {
                matrix: Vec<Vec<f64>>,
            }
            let p: P = params(cfg)?;
            if p.matrix.len() != m || p.matrix.iter().any(|row| row.len() != m) {
                return Err(MetricError::BadParams {
                    detail: format!("matrix must be {m}x{m}"),
                });
            }
            let a = DMatrix::from_fn(m, m, |r, c| p.matrix[r][c]);
            SubFinslerMetric::elliptic_constant("elliptic", a)?
        }
        "elliptic-oscillating" => {
            #[derive(Deserialize)]
            struct P {
                diag: Vec<f64>,
                amp: f64,
                freq: f64,
            }
            let p: P = params(cfg)?;
            if p.diag.len() != m {
                return Err(MetricError::BadParams {
                    detail: format!("diag must have {m} entries"),
                });
            }
            if !(0.0..1.0).contains(&p.amp) {
                return Err(MetricError::BadParams {
                    detail: "amp must lie in [0, 1)".into(),
                });
            }
            if p.diag.iter().any(|&d| d <= 0.0) {
                return Err(MetricError::BadParams {
                    detail: "diag entries must be positive".into(),
                });
            }
            let dmax = p.diag.iter().cloned().fold(0.0f64, f64::max);
            let dmin = p.diag.iter().cloned().fold(f64::INFINITY, f64::min);
            let alpha = (dmax * (1.0 + p.amp)).sqrt().max(1.0 / (dmin * (1.0 - p.amp)).sqrt());
            let diag = p.diag.clone();
            let (amp, freq) = (p.amp, p.freq);
            let rule: MatrixFn = Arc::new(move |x: &Point| {
                let c = 1.0 + amp * (freq * x.coords[0]).sin();
                DMatrix::from_fn(diag.len(), diag.len(), |r, col| {
                    if r == col {
                        diag[r] * c
                    } else {
                        0.0
                    }
                })
            });
            let sample: Vec<Point> = (0..8)
                .map(|i| {
                    let mut c = vec![0.0; group.dim()];
                    c[0] = i as f64 * 0.37;
                    Point::new(c)
                })
                .collect();
            SubFinslerMetric::elliptic(
                "elliptic-oscillating",
                rule,
                alpha,
                Regularity::Continuous,
                &sample,
            )?
        }
        "polyhedral" => {
            #[derive(Deserialize)]
            struct P {
                vertices: Vec<Vec<f64>>,
            }
            let p: P = params(cfg)?;
            SubFinslerMetric::polyhedral_constant("polyhedral", p.vertices)?
        }
        "lp" => {
            #[derive(Deserialize)]
            struct P {
                p: f64,
            }
            let prm: P = params(cfg)?;
            if prm.p < 1.0 {
                return Err(MetricError::BadParams {
                    detail: "p must be at least 1".into(),
                });
            }
            let p = prm.p;
            let alpha = (m as f64).powf((0.5 - 1.0 / p).abs());
            let eval: EvalFn = Arc::new(move |_x: &Point, v: &[f64]| {
                v.iter().map(|c| c.abs().powf(p)).sum::<f64>().powf(1.0 / p)
            });
            SubFinslerMetric::from_rule(
                &format!("l{p}"),
                eval,
                m,
                alpha,
                Regularity::Continuous,
                true,
                false,
            )
        }
        "checkerboard" => {
            #[derive(Deserialize)]
            struct P {
                scale: f64,
                low: f64,
                high: f64,
            }
            let p: P = params(cfg)?;
            SubFinslerMetric::checkerboard(m, p.scale, p.low, p.high)?
        }
        "two-phase" => {
            #[derive(Deserialize)]
            struct P {
                #[serde(default)]
                axis: usize,
                low: f64,
                high: f64,
                /// Which side the interface itself belongs to: "high" makes
                /// the field usc, "low" makes it lsc.
                #[serde(default = "default_boundary")]
                boundary: String,
            }
            fn default_boundary() -> String {
                "high".into()
            }
            let p: P = params(cfg)?;
            if p.low <= 0.0 || p.high < p.low {
                return Err(MetricError::BadParams {
                    detail: "need 0 < low <= high".into(),
                });
            }
            let boundary_high = match p.boundary.as_str() {
                "high" => true,
                "low" => false,
                other => {
                    return Err(MetricError::BadParams {
                        detail: format!("boundary must be \"high\" or \"low\", got {other:?}"),
                    })
                }
            };
            let (axis, lo, hi) = (p.axis, p.low, p.high);
            let eval: EvalFn = Arc::new(move |x: &Point, v: &[f64]| {
                let t = x.coords[axis];
                let c = if t > 0.0 {
                    hi
                } else if t < 0.0 {
                    lo
                } else if boundary_high {
                    hi
                } else {
                    lo
                };
                c * norm2(v)
            });
            let regularity = if boundary_high {
                Regularity::Usc
            } else {
                Regularity::Lsc
            };
            SubFinslerMetric::from_rule(
                "two-phase",
                eval,
                m,
                hi.max(1.0 / lo),
                regularity,
                true,
                true,
            )
        }
        "min-of-norms" => {
            #[derive(Deserialize)]
            struct P {
                euclid_scale: f64,
                l1_scale: f64,
            }
            let p: P = params(cfg)?;
            if p.euclid_scale <= 0.0 || p.l1_scale <= 0.0 {
                return Err(MetricError::BadParams {
                    detail: "scales must be positive".into(),
                });
            }
            let (a, b) = (p.euclid_scale, p.l1_scale);
            let eval: EvalFn = Arc::new(move |_x: &Point, v: &[f64]| {
                let l1: f64 = v.iter().map(|c| c.abs()).sum();
                (a * norm2(v)).min(b * l1)
            });
            let alpha = a
                .max(b * (m as f64).sqrt())
                .max(1.0 / a)
                .max(1.0 / b);
            SubFinslerMetric::from_rule("min-of-norms", eval, m, alpha, Regularity::Continuous, false, false)
        }
        other => {
            return Err(MetricError::UnknownKind {
                kind: other.to_string(),
            })
        }
    };
    if let Some(alpha) = cfg.alpha {
        if alpha < metric.alpha {
            return Err(MetricError::AlphaBoundViolation {
                detail: format!(
                    "configured alpha {alpha} is below the derived bound {}",
                    metric.alpha
                ),
            });
        }
        metric.alpha = alpha;
    }
    if let Some(reg) = cfg.regularity {
        metric.regularity = reg;
    }
    if let Some(name) = &cfg.name {
        metric.name = name.clone();
    }
    Ok(metric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn origin(n: usize) -> Point {
        Point::new(vec![0.0; n])
    }

    fn cross_polytope() -> SubFinslerMetric {
        SubFinslerMetric::polyhedral_constant(
            "l1",
            vec![
                vec![1.0, 0.0],
                vec![-1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, -1.0],
            ],
        )
        .unwrap()
    }

    fn square() -> SubFinslerMetric {
        SubFinslerMetric::polyhedral_constant(
            "linf",
            vec![
                vec![1.0, 1.0],
                vec![1.0, -1.0],
                vec![-1.0, 1.0],
                vec![-1.0, -1.0],
            ],
        )
        .unwrap()
    }

    #[test]
    fn cross_polytope_gauge_is_l1() {
        let phi = cross_polytope();
        let x = origin(3);
        assert_abs_diff_eq!(phi.eval(&x, &[1.0, 1.0]), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(phi.eval(&x, &[0.3, -0.4]), 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(phi.eval(&x, &[0.0, 0.0]), 0.0, epsilon = 1e-15);
        // Exact alpha for the cross polytope: circumradius 1, inradius 1/sqrt(2).
        assert_abs_diff_eq!(phi.alpha(), 2.0f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn square_gauge_is_linf() {
        let phi = square();
        let x = origin(3);
        assert_abs_diff_eq!(phi.eval(&x, &[1.0, 0.0]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(phi.eval(&x, &[0.5, 0.2]), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(phi.eval(&x, &[-0.5, 0.5]), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn l1_and_linf_are_dual() {
        let l1 = cross_polytope();
        let x = origin(3);
        let dual = l1.dual(64);
        assert_eq!(dual.strategy, DualStrategy::PolyhedralExact);
        // The dual of l1 is the sup norm.
        assert_abs_diff_eq!(dual.metric.eval(&x, &[1.0, 1.0]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(dual.metric.eval(&x, &[0.3, -0.8]), 0.8, epsilon = 1e-12);
        // And the round trip comes back through the independent polar route.
        let bidual = dual.metric.dual(64);
        assert_abs_diff_eq!(bidual.metric.eval(&x, &[1.0, 1.0]), 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(bidual.metric.eval(&x, &[0.3, -0.4]), 0.7, epsilon = 1e-9);
    }

    #[test]
    fn elliptic_dual_inverts_the_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let phi = SubFinslerMetric::elliptic_constant("diag41", a).unwrap();
        let x = origin(3);
        assert_abs_diff_eq!(phi.eval(&x, &[1.0, 0.0]), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(phi.alpha(), 2.0, epsilon = 1e-12);
        let dual = phi.dual(64);
        assert_eq!(dual.strategy, DualStrategy::EllipticExact);
        // Dual of sqrt(4v1² + v2²) is sqrt(v1²/4 + v2²).
        assert_abs_diff_eq!(dual.metric.eval(&x, &[1.0, 0.0]), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(dual.metric.eval(&x, &[0.0, 1.0]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            dual.metric.eval(&x, &[1.0, 1.0]),
            (0.25f64 + 1.0).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn euclidean_is_self_dual() {
        let phi = SubFinslerMetric::euclidean(2);
        let x = origin(3);
        let dual = phi.dual(32);
        for v in [[1.0, 0.0], [0.3, -0.4], [2.0, 5.0]] {
            assert_abs_diff_eq!(dual.metric.eval(&x, &v), phi.eval(&x, &v), epsilon = 1e-12);
        }
    }

    #[test]
    fn sampled_dual_approximates_lp_duality() {
        // For the fiber 3-norm the dual is the 3/2-norm; the sampled
        // strategy must land within its declared budget (and in practice
        // far inside it thanks to the refinement).
        let cfg = MetricConfig {
            kind: "lp".into(),
            params: serde_json::json!({"p": 3.0}),
            alpha: None,
            regularity: None,
            name: None,
        };
        let group = crate::group::CarnotGroup::new(crate::group::builtin("heisenberg1").unwrap())
            .unwrap();
        let phi = metric_from_config(&group, &cfg).unwrap();
        let dual = phi.dual(128);
        let DualStrategy::Sampled {
            mesh_error_bound, ..
        } = dual.strategy
        else {
            panic!("custom metric must use the sampled strategy")
        };
        let x = origin(3);
        let q = 1.5;
        for v in [[1.0, 1.0], [1.0, 0.25], [-0.7, 0.2]] {
            let want = v
                .iter()
                .map(|c: &f64| c.abs().powf(q))
                .sum::<f64>()
                .powf(1.0 / q);
            let got = dual.metric.eval(&x, &v);
            // Lower bound, within the declared (relative) mesh budget.
            assert!(got <= want * (1.0 + 1e-12), "sampled dual overshot: {got} > {want}");
            assert!(
                got >= want * (1.0 - mesh_error_bound),
                "sampled dual below budget: {got} vs {want}, budget {mesh_error_bound}"
            );
            // Refinement should do far better than the worst case.
            assert!((got - want).abs() / want < 1e-4);
        }
    }

    #[test]
    fn sampled_dual_mesh_value_is_monotone_in_resolution() {
        let cfg = MetricConfig {
            kind: "lp".into(),
            params: serde_json::json!({"p": 4.0}),
            alpha: None,
            regularity: None,
            name: None,
        };
        let group = crate::group::CarnotGroup::new(crate::group::builtin("heisenberg1").unwrap())
            .unwrap();
        let phi = metric_from_config(&group, &cfg).unwrap();
        let x = origin(3);
        let v = [0.9, -0.45];
        let mut prev = 0.0;
        for res in [8, 16, 32, 64, 128, 256] {
            let val = sampled_dual_mesh_value(&phi, &x, &v, res);
            assert!(
                val >= prev - 1e-15,
                "mesh value decreased: {val} < {prev} at resolution {res}"
            );
            prev = val;
        }
        // The refined public value is monotone as well because every level
        // recomputes the coarser prefixes.
        let mut prev = 0.0;
        for res in [16, 64, 256] {
            let val = dual_eval(&phi, &x, &v, res);
            assert!(val >= prev - 1e-15);
            prev = val;
        }
    }

    #[test]
    fn bidual_closes_for_convex_metrics() {
        let group = crate::group::CarnotGroup::new(crate::group::builtin("heisenberg1").unwrap())
            .unwrap();
        let x = origin(3);
        let samples: Vec<(Point, Vec<f64>)> = (0..40)
            .map(|i| {
                let dir = mesh::sphere_point(2, i);
                let r = 0.5 + 1.7 * mesh::halton(i + 1, 5);
                (x.clone(), vec![r * dir[0], r * dir[1]])
            })
            .collect();

        let elliptic = SubFinslerMetric::elliptic_constant(
            "e",
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let report = bidual_check(&elliptic, &samples, 64);
        assert!(report.max_rel_gap <= EXACT_BIDUAL_TOL, "{}", report.max_rel_gap);

        let report = bidual_check(&cross_polytope(), &samples, 64);
        assert!(report.max_rel_gap <= EXACT_BIDUAL_TOL, "{}", report.max_rel_gap);

        let cfg = MetricConfig {
            kind: "lp".into(),
            params: serde_json::json!({"p": 3.0}),
            alpha: None,
            regularity: None,
            name: None,
        };
        let lp = metric_from_config(&group, &cfg).unwrap();
        let report = bidual_check(&lp, &samples, 128);
        assert!(report.max_rel_gap <= report.declared_bound);
        assert!(report.max_overshoot <= report.declared_bound);
    }

    #[test]
    fn bidual_drops_for_nonconvex_metric() {
        let group = crate::group::CarnotGroup::new(crate::group::builtin("heisenberg1").unwrap())
            .unwrap();
        let cfg = MetricConfig {
            kind: "min-of-norms".into(),
            params: serde_json::json!({"euclid_scale": 1.0, "l1_scale": 0.8}),
            alpha: None,
            regularity: None,
            name: None,
        };
        let phi = metric_from_config(&group, &cfg).unwrap();
        assert!(!phi.is_convex());
        let x = origin(3);
        let samples: Vec<(Point, Vec<f64>)> = vec![
            (x.clone(), vec![1.0, 0.3]),
            (x.clone(), vec![1.0, 0.0]),
            (x.clone(), vec![1.0, 1.0]),
            (x.clone(), vec![0.3, -1.0]),
        ];
        let report = bidual_check(&phi, &samples, 256);
        // The convex relaxation never overshoots...
        assert!(report.max_overshoot <= report.declared_bound);
        // ...but genuinely drops below the nonconvex metric somewhere.
        assert!(
            report.max_drop > 0.02,
            "expected a strict convexification drop, got {}",
            report.max_drop
        );
    }

    #[test]
    fn axiom_audit_is_clean_on_builtin_families() {
        let points = vec![origin(3), Point::new(vec![0.4, -1.2, 0.7])];
        let vectors: Vec<Vec<f64>> = (0..12)
            .map(|i| {
                let d = mesh::sphere_point(2, i);
                vec![1.3 * d[0], 1.3 * d[1]]
            })
            .collect();
        for phi in [
            SubFinslerMetric::euclidean(2),
            cross_polytope(),
            square(),
            SubFinslerMetric::elliptic_constant(
                "e",
                DMatrix::from_row_slice(2, 2, &[3.0, -0.4, -0.4, 1.5]),
            )
            .unwrap(),
        ] {
            let report = verify_metric_axioms(&phi, &points, &vectors);
            assert!(
                report.worst() < 1e-9,
                "{} failed the axiom audit: {report:?}",
                phi.name()
            );
        }
    }

    #[test]
    fn axiom_audit_flags_nonconvexity_when_claimed_convex() {
        // Same rule as min-of-norms but dishonestly flagged convex: the
        // subadditivity audit must catch it.
        let eval: EvalFn = Arc::new(|_x: &Point, v: &[f64]| {
            let l1: f64 = v.iter().map(|c| c.abs()).sum();
            norm2(v).min(0.8 * l1)
        });
        let phi = SubFinslerMetric::from_rule("liar", eval, 2, 2.0, Regularity::Continuous, true, false);
        let points = vec![origin(3)];
        // A genuinely violating pair: a cross-polytope spike tip plus the
        // point where its tangent segment touches the round ball. Their sum
        // leaves the (nonconvex) union of the two unit balls.
        let vectors = vec![vec![1.25, 0.0], vec![0.8, 0.6]];
        let report = verify_metric_axioms(&phi, &points, &vectors);
        assert!(report.subadditivity.unwrap() > 1e-3);
    }

    #[test]
    fn semicontinuity_probe_matches_two_phase_tags() {
        let group = crate::group::CarnotGroup::new(crate::group::builtin("heisenberg1").unwrap())
            .unwrap();
        let lsc_cfg = MetricConfig {
            kind: "two-phase".into(),
            params: serde_json::json!({"axis": 0, "low": 1.0, "high": 2.0, "boundary": "low"}),
            alpha: None,
            regularity: None,
            name: None,
        };
        let phi = metric_from_config(&group, &lsc_cfg).unwrap();
        assert_eq!(phi.regularity(), Regularity::Lsc);
        let x = origin(3); // on the interface
        let v = [1.0, 0.0];
        let radii = [0.1, 0.01, 0.001];
        // The probe perturbs v as well as x, so even a semicontinuous field
        // moves by O(alpha * radius); the consistency tolerance must cover
        // that, while the genuine jump (a full factor of the phase contrast)
        // stays far above it.
        let probe = semicontinuity_probe(&phi, &x, &v, &radii, 32);
        assert!(probe.consistent_with_lsc(0.01));
        // The value is the low side, but arbitrarily near points see the
        // high side, so the usc prediction fails.
        assert!(!probe.consistent_with_usc(0.5));

        // The dual flips the failure direction.
        let dual = phi.dual(64).metric;
        assert_eq!(dual.regularity(), Regularity::Usc);
        let dual_probe = semicontinuity_probe(&dual, &x, &v, &radii, 32);
        assert!(dual_probe.consistent_with_usc(0.01));
        assert!(!dual_probe.consistent_with_lsc(0.1));
    }

    #[test]
    fn constructors_reject_bad_input() {
        assert!(matches!(
            SubFinslerMetric::polyhedral_constant("bad", vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
            Err(MetricError::AsymmetricVertexSet { .. })
        ));
        assert!(matches!(
            SubFinslerMetric::polyhedral_constant("flat", vec![vec![1.0, 0.0], vec![-1.0, 0.0]]),
            Err(MetricError::DegenerateSpan)
        ));
        let not_spd = DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]);
        assert!(matches!(
            SubFinslerMetric::elliptic_constant("bad", not_spd),
            Err(MetricError::AlphaBoundViolation { .. })
        ));
    }
}
