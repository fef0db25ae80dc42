//! Carnot group arithmetic in exponential coordinates of the first kind.
//!
//! A group is described by a stratified nilpotent Lie algebra: an adapted
//! basis split into layers `g_1 ⊕ … ⊕ g_k` (step `k ≤ 3`) together with the
//! structure constants of the bracket. Points are algebra vectors (exp and
//! log are the identity on coordinates) and the product is the truncated
//! Baker–Campbell–Hausdorff series, which is exact for step at most 3.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest nilpotency step supported by the truncated product.
pub const MAX_STEP: usize = 3;

/// Tolerance for structure-constant validation (Jacobi residuals and the
/// rank decisions inside the generation check).
pub const STRUCTURE_TOL: f64 = 1e-10;

/// Errors raised while validating a [`GroupSpec`] or using group operations.
#[derive(Debug, Error, PartialEq)]
pub enum GroupError {
    /// The layer list was empty or contained a zero-dimensional layer.
    #[error("layer dimensions must be nonempty and positive, got {0:?}")]
    BadLayerDims(Vec<usize>),
    /// More layers than the truncated product can handle.
    #[error("step {step} exceeds the supported maximum {MAX_STEP}")]
    StepTooLarge { step: usize },
    /// A bracket rule referenced a basis index outside `1..=n`.
    #[error("bracket rule references basis index {index} outside 1..={dim}")]
    BracketIndexOutOfRange { index: usize, dim: usize },
    /// Rules for `(i, j)` and `(j, i)` are not negatives of each other.
    #[error("bracket rules for ({i},{j}) and ({j},{i}) are not antisymmetric")]
    AsymmetricBracket { i: usize, j: usize },
    /// `[e_i, e_j]` produced a component outside layer `w(i)+w(j)`.
    #[error("bracket [e{i},e{j}] writes to e{out}, outside layer {expected_layer}")]
    BracketGradingViolation {
        i: usize,
        j: usize,
        out: usize,
        expected_layer: usize,
    },
    /// The Jacobi identity failed on a basis triple.
    #[error("Jacobi identity fails on (e{i},e{j},e{k}) with residual {residual:.3e}")]
    JacobiViolation {
        i: usize,
        j: usize,
        k: usize,
        residual: f64,
    },
    /// Iterated brackets of the first layer do not span some higher layer.
    #[error("first layer does not generate layer {layer}")]
    FirstLayerNotGenerating { layer: usize },
    /// Negative dilation parameters only act on first-layer vectors.
    #[error("negative dilation parameter {lambda} applied outside the first layer")]
    NegativeLambdaOutsideFirstLayer { lambda: f64 },
    /// Two horizontal vectors were combined at different base points.
    #[error("horizontal vectors have different base points")]
    BaseMismatch,
}

/// One bracket rule `[e_i, e_j] = Σ c·e_k`, with 1-based basis indices.
///
/// Only pairs with `i < j` need to be listed; the antisymmetric completion
/// is implied. Listing both orientations is allowed as long as they agree.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BracketRule {
    pub i: usize,
    pub j: usize,
    /// Output terms as `(basis index, coefficient)` pairs.
    pub out: Vec<(usize, f64)>,
}

/// Plain description of a stratified algebra: layer dimensions of the
/// adapted basis plus the nonzero structure constants.
///
/// This is the serialization surface; a spec must pass [`CarnotGroup::new`]
/// before any arithmetic can be done with it.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GroupSpec {
    pub name: String,
    pub layer_dims: Vec<usize>,
    pub brackets: Vec<BracketRule>,
}

impl GroupSpec {
    /// Reads a spec from its canonical JSON form.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Writes the spec in its canonical JSON form.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("group specs always serialize")
    }
}

/// A group element in exponential coordinates: one `f64` per basis vector,
/// layers concatenated in order.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub coords: Vec<f64>,
}

impl Point {
    pub fn new(coords: Vec<f64>) -> Self {
        Point { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Euclidean norm of the coordinate vector.
    pub fn norm(&self) -> f64 {
        self.coords.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

impl From<Vec<f64>> for Point {
    fn from(coords: Vec<f64>) -> Self {
        Point { coords }
    }
}

/// A tangent vector constrained to the horizontal bundle: the base point
/// plus coefficients with respect to the left-invariant frame `X_1..X_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalVector {
    pub base: Point,
    pub h: Vec<f64>,
}

/// A validated Carnot group. Construction checks antisymmetry, grading,
/// the Jacobi identity, and that the first layer bracket-generates the
/// rest; afterwards all operations are total except where documented.
#[derive(Debug, Clone)]
pub struct CarnotGroup {
    spec: GroupSpec,
    n: usize,
    m: usize,
    step: usize,
    /// 1-based layer (= homogeneous weight) of each coordinate.
    layer_of: Vec<usize>,
    /// Canonical sparse table: entries `(i, j, terms)` with `i < j`,
    /// 0-based indices, each term `(k, c)` meaning `[e_i,e_j] ⊇ c·e_k`.
    entries: Vec<(usize, usize, Vec<(usize, f64)>)>,
}

impl CarnotGroup {
    /// Validates a spec and builds the group.
    pub fn new(spec: GroupSpec) -> Result<Self, GroupError> {
        if spec.layer_dims.is_empty() || spec.layer_dims.iter().any(|&d| d == 0) {
            return Err(GroupError::BadLayerDims(spec.layer_dims.clone()));
        }
        let step = spec.layer_dims.len();
        if step > MAX_STEP {
            return Err(GroupError::StepTooLarge { step });
        }
        let n: usize = spec.layer_dims.iter().sum();
        let m = spec.layer_dims[0];

        let mut layer_of = Vec::with_capacity(n);
        for (idx, &d) in spec.layer_dims.iter().enumerate() {
            layer_of.extend(std::iter::repeat(idx + 1).take(d));
        }

        // Assemble a dense table first so duplicate and mirrored rules can be
        // checked coherently, then compress to the sparse entry list.
        let mut table = vec![vec![vec![0.0; n]; n]; n];
        let mut seen = vec![vec![false; n]; n];
        for rule in &spec.brackets {
            for &(k, _) in &rule.out {
                for index in [rule.i, rule.j, k] {
                    if index == 0 || index > n {
                        return Err(GroupError::BracketIndexOutOfRange { index, dim: n });
                    }
                }
            }
            if rule.i == 0 || rule.i > n || rule.j == 0 || rule.j > n {
                return Err(GroupError::BracketIndexOutOfRange {
                    index: rule.i.max(rule.j),
                    dim: n,
                });
            }
            let (i, j) = (rule.i - 1, rule.j - 1);
            if seen[i][j] {
                // A duplicate rule for the same ordered pair must agree; treat
                // disagreement as an antisymmetry problem on the same pair.
                let mut dup = vec![0.0; n];
                for &(k, c) in &rule.out {
                    dup[k - 1] += c;
                }
                if table[i][j]
                    .iter()
                    .zip(&dup)
                    .any(|(a, b)| (a - b).abs() > STRUCTURE_TOL)
                {
                    return Err(GroupError::AsymmetricBracket {
                        i: rule.i,
                        j: rule.j,
                    });
                }
                continue;
            }
            seen[i][j] = true;
            for &(k, c) in &rule.out {
                table[i][j][k - 1] += c;
            }
        }
        // Antisymmetric completion and consistency.
        for i in 0..n {
            if seen[i][i] && table[i][i].iter().any(|&c| c.abs() > STRUCTURE_TOL) {
                return Err(GroupError::AsymmetricBracket { i: i + 1, j: i + 1 });
            }
            for j in 0..n {
                if i == j {
                    continue;
                }
                if seen[i][j] && seen[j][i] {
                    let mirrored_ok = (0..n)
                        .all(|k| (table[i][j][k] + table[j][i][k]).abs() <= STRUCTURE_TOL);
                    if !mirrored_ok {
                        return Err(GroupError::AsymmetricBracket { i: i + 1, j: j + 1 });
                    }
                } else if seen[i][j] && !seen[j][i] {
                    for k in 0..n {
                        table[j][i][k] = -table[i][j][k];
                    }
                }
            }
        }

        // Grading: [g_a, g_b] ⊆ g_{a+b} (empty when a+b exceeds the step).
        for i in 0..n {
            for j in 0..n {
                let target = layer_of[i] + layer_of[j];
                for k in 0..n {
                    if table[i][j][k].abs() > 0.0 && layer_of[k] != target {
                        return Err(GroupError::BracketGradingViolation {
                            i: i + 1,
                            j: j + 1,
                            out: k + 1,
                            expected_layer: target,
                        });
                    }
                }
                if target > step {
                    for k in 0..n {
                        if table[i][j][k].abs() > 0.0 {
                            return Err(GroupError::BracketGradingViolation {
                                i: i + 1,
                                j: j + 1,
                                out: k + 1,
                                expected_layer: target,
                            });
                        }
                    }
                }
            }
        }

        // Jacobi identity on basis triples.
        let bracket_basis = |i: usize, j: usize| -> &Vec<f64> { &table[i][j] };
        let bracket_vec = |u: &[f64], v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for i in 0..n {
                if u[i] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    if v[j] == 0.0 {
                        continue;
                    }
                    let col = bracket_basis(i, j);
                    for k in 0..n {
                        out[k] += u[i] * v[j] * col[k];
                    }
                }
            }
            out
        };
        for i in 0..n {
            for j in (i + 1)..n {
                for k in (j + 1)..n {
                    let e = |idx: usize| -> Vec<f64> {
                        let mut v = vec![0.0; n];
                        v[idx] = 1.0;
                        v
                    };
                    let (ei, ej, ek) = (e(i), e(j), e(k));
                    let t1 = bracket_vec(&bracket_vec(&ei, &ej), &ek);
                    let t2 = bracket_vec(&bracket_vec(&ej, &ek), &ei);
                    let t3 = bracket_vec(&bracket_vec(&ek, &ei), &ej);
                    let residual: f64 = (0..n)
                        .map(|c| (t1[c] + t2[c] + t3[c]).abs())
                        .fold(0.0, f64::max);
                    if residual > STRUCTURE_TOL {
                        return Err(GroupError::JacobiViolation {
                            i: i + 1,
                            j: j + 1,
                            k: k + 1,
                            residual,
                        });
                    }
                }
            }
        }

        // The first layer must bracket-generate every higher layer: the
        // vectors [e_1..e_m, spanning set of layer a] must span layer a+1.
        let mut layer_start = vec![0usize; step + 1];
        for a in 0..step {
            layer_start[a + 1] = layer_start[a] + spec.layer_dims[a];
        }
        let mut spanning: Vec<Vec<f64>> = (0..m)
            .map(|j| {
                let mut v = vec![0.0; n];
                v[j] = 1.0;
                v
            })
            .collect();
        for a in 1..step {
            let mut candidates: Vec<Vec<f64>> = Vec::new();
            for j in 0..m {
                let mut ej = vec![0.0; n];
                ej[j] = 1.0;
                for w in &spanning {
                    candidates.push(bracket_vec(&ej, w));
                }
            }
            let rows = candidates.len();
            let cols = spec.layer_dims[a];
            let block = nalgebra::DMatrix::from_fn(rows, cols, |r, c| {
                candidates[r][layer_start[a] + c]
            });
            if block.rank(STRUCTURE_TOL) < cols {
                return Err(GroupError::FirstLayerNotGenerating { layer: a + 1 });
            }
            spanning = candidates;
        }

        // Compress to the canonical i < j entry list.
        let mut entries = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let terms: Vec<(usize, f64)> = (0..n)
                    .filter(|&k| table[i][j][k] != 0.0)
                    .map(|k| (k, table[i][j][k]))
                    .collect();
                if !terms.is_empty() {
                    entries.push((i, j, terms));
                }
            }
        }

        Ok(CarnotGroup {
            spec,
            n,
            m,
            step,
            layer_of,
            entries,
        })
    }

    /// Total dimension of the group.
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Dimension of the first (horizontal) layer.
    pub fn horizontal_dim(&self) -> usize {
        self.m
    }

    /// Nilpotency step.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Layer (= homogeneous weight) of coordinate `i`, 1-based value.
    pub fn layer_of(&self, i: usize) -> usize {
        self.layer_of[i]
    }

    /// The spec this group was validated from.
    pub fn spec(&self) -> &GroupSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.name
    }

    /// Identity element (the origin in exponential coordinates).
    pub fn identity(&self) -> Point {
        Point::new(vec![0.0; self.n])
    }

    /// Lie bracket of two algebra vectors, written into `out`.
    fn bracket_into(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|c| *c = 0.0);
        for &(i, j, ref terms) in &self.entries {
            let w = u[i] * v[j] - u[j] * v[i];
            if w != 0.0 {
                for &(k, c) in terms {
                    out[k] += c * w;
                }
            }
        }
    }

    /// Lie bracket `[u, v]` of two algebra vectors.
    pub fn bracket(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(u.len(), self.n);
        debug_assert_eq!(v.len(), self.n);
        let mut out = vec![0.0; self.n];
        self.bracket_into(u, v, &mut out);
        out
    }

    /// Truncated Baker–Campbell–Hausdorff product
    /// `u ⋆ v = u + v + ½[u,v] + 1/12([u,[u,v]] + [v,[v,u]])`,
    /// exact for step at most 3.
    pub fn bch(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.bch_into(u, v, &mut out);
        out
    }

    /// In-place variant of [`CarnotGroup::bch`] for hot loops.
    pub fn bch_into(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.n);
        debug_assert_eq!(v.len(), self.n);
        for k in 0..self.n {
            out[k] = u[k] + v[k];
        }
        if self.step < 2 {
            return;
        }
        let mut uv = vec![0.0; self.n];
        self.bracket_into(u, v, &mut uv);
        for k in 0..self.n {
            out[k] += 0.5 * uv[k];
        }
        if self.step < 3 {
            return;
        }
        let mut nested = vec![0.0; self.n];
        self.bracket_into(u, &uv, &mut nested);
        for k in 0..self.n {
            out[k] += nested[k] / 12.0;
        }
        // [v,[v,u]] = [v, -[u,v]] = -[v, [u,v]]
        self.bracket_into(v, &uv, &mut nested);
        for k in 0..self.n {
            out[k] -= nested[k] / 12.0;
        }
    }

    /// Group product `x · y`.
    pub fn mul(&self, x: &Point, y: &Point) -> Point {
        Point::new(self.bch(&x.coords, &y.coords))
    }

    /// Group inverse; in these coordinates it is coordinate negation.
    pub fn inverse(&self, x: &Point) -> Point {
        Point::new(x.coords.iter().map(|c| -c).collect())
    }

    /// Algebra coordinates of `log(x⁻¹ · y)`, the displacement from `x` to `y`.
    pub fn log_between(&self, x: &Point, y: &Point) -> Vec<f64> {
        let neg: Vec<f64> = x.coords.iter().map(|c| -c).collect();
        self.bch(&neg, &y.coords)
    }

    /// Anisotropic dilation `δ_λ`: coordinate `i` scales by `λ^{w(i)}`.
    ///
    /// `λ > 0` acts on every point; other values of `λ` are only defined on
    /// points supported in the first layer, where `δ_λ` is plain scaling.
    pub fn dilate(&self, lambda: f64, x: &Point) -> Result<Point, GroupError> {
        debug_assert_eq!(x.dim(), self.n);
        if lambda > 0.0 {
            let coords = x
                .coords
                .iter()
                .enumerate()
                .map(|(i, &c)| lambda.powi(self.layer_of[i] as i32) * c)
                .collect();
            return Ok(Point::new(coords));
        }
        if x.coords[self.m..].iter().any(|&c| c != 0.0) {
            return Err(GroupError::NegativeLambdaOutsideFirstLayer { lambda });
        }
        let mut coords = vec![0.0; self.n];
        for i in 0..self.m {
            coords[i] = lambda * x.coords[i];
        }
        Ok(Point::new(coords))
    }

    /// The homogeneous gauge `Σ_i |z_i|^{1/w(i)}` of an algebra vector.
    ///
    /// It scales exactly linearly under dilations and vanishes only at the
    /// origin, which makes it the natural residual measure for endpoint gaps.
    pub fn homogeneous_gauge(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.n);
        z.iter()
            .enumerate()
            .map(|(i, &c)| c.abs().powf(1.0 / self.layer_of[i] as f64))
            .sum()
    }

    /// Exponential of a first-layer algebra vector: the point with
    /// horizontal coordinates `h` and zeros above.
    pub fn exp_layer1(&self, h: &[f64]) -> Point {
        debug_assert_eq!(h.len(), self.m);
        let mut coords = vec![0.0; self.n];
        coords[..self.m].copy_from_slice(h);
        Point::new(coords)
    }

    /// Differential of left translation at the identity applied to the
    /// embedded first-layer vector `h`: the coordinate expression of
    /// `Σ_j h_j X_j(x)`. Closed form `h + ½[x, h] + 1/12 [x, [x, h]]`.
    pub fn frame_apply(&self, x: &Point, h: &[f64]) -> Vec<f64> {
        debug_assert_eq!(h.len(), self.m);
        let mut w = vec![0.0; self.n];
        w[..self.m].copy_from_slice(h);
        let mut out = w.clone();
        if self.step >= 2 {
            let mut xw = vec![0.0; self.n];
            self.bracket_into(&x.coords, &w, &mut xw);
            for k in 0..self.n {
                out[k] += 0.5 * xw[k];
            }
            if self.step >= 3 {
                let mut xxw = vec![0.0; self.n];
                self.bracket_into(&x.coords, &xw, &mut xxw);
                for k in 0..self.n {
                    out[k] += xxw[k] / 12.0;
                }
            }
        }
        out
    }

    /// The left-invariant horizontal frame at `x`: column `j` holds the
    /// coordinates of `X_j(x)`.
    pub fn horizontal_frame(&self, x: &Point) -> Vec<Vec<f64>> {
        (0..self.m)
            .map(|j| {
                let mut h = vec![0.0; self.m];
                h[j] = 1.0;
                self.frame_apply(x, &h)
            })
            .collect()
    }

    /// Projection onto the horizontal bundle at `x`: reads off the frame
    /// coefficients of the left-translated vector, which in these
    /// coordinates are the first `m` entries of `y`.
    pub fn project_horizontal(&self, x: &Point, y: &[f64]) -> HorizontalVector {
        debug_assert_eq!(y.len(), self.n);
        HorizontalVector {
            base: x.clone(),
            h: y[..self.m].to_vec(),
        }
    }

    /// Wraps frame coefficients `h` as a horizontal vector based at `x`.
    pub fn embed_horizontal(&self, x: &Point, h: Vec<f64>) -> HorizontalVector {
        debug_assert_eq!(h.len(), self.m);
        HorizontalVector {
            base: x.clone(),
            h,
        }
    }

    /// Fiber inner product of two horizontal vectors at the same base:
    /// the Euclidean dot product of frame coefficients.
    pub fn fiber_inner(
        &self,
        u: &HorizontalVector,
        w: &HorizontalVector,
    ) -> Result<f64, GroupError> {
        if u.base != w.base {
            return Err(GroupError::BaseMismatch);
        }
        Ok(u.h.iter().zip(&w.h).map(|(a, b)| a * b).sum())
    }
}

/// Built-in group specs addressable by name.
pub fn builtin(name: &str) -> Option<GroupSpec> {
    let spec = match name {
        "abelian2" => GroupSpec {
            name: "abelian2".into(),
            layer_dims: vec![2],
            brackets: vec![],
        },
        "heisenberg1" => GroupSpec {
            name: "heisenberg1".into(),
            layer_dims: vec![2, 1],
            brackets: vec![BracketRule {
                i: 1,
                j: 2,
                out: vec![(3, 1.0)],
            }],
        },
        "heisenberg2" => GroupSpec {
            name: "heisenberg2".into(),
            layer_dims: vec![4, 1],
            brackets: vec![
                BracketRule {
                    i: 1,
                    j: 2,
                    out: vec![(5, 1.0)],
                },
                BracketRule {
                    i: 3,
                    j: 4,
                    out: vec![(5, 1.0)],
                },
            ],
        },
        "engel" => GroupSpec {
            name: "engel".into(),
            layer_dims: vec![2, 1, 1],
            brackets: vec![
                BracketRule {
                    i: 1,
                    j: 2,
                    out: vec![(3, 1.0)],
                },
                BracketRule {
                    i: 1,
                    j: 3,
                    out: vec![(4, 1.0)],
                },
            ],
        },
        _ => return None,
    };
    Some(spec)
}

/// Names of all built-in groups, in registry order.
pub fn builtin_names() -> Vec<&'static str> {
    vec!["abelian2", "heisenberg1", "heisenberg2", "engel"]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn heisenberg() -> CarnotGroup {
        CarnotGroup::new(builtin("heisenberg1").unwrap()).unwrap()
    }

    fn engel() -> CarnotGroup {
        CarnotGroup::new(builtin("engel").unwrap()).unwrap()
    }

    /// Hand-expanded Heisenberg product used as an independent oracle:
    /// with [e1,e2] = e3 and step 2 the series is u + v + ½[u,v], so
    /// z picks up ½(u1·v2 − u2·v1).
    fn heis_product_oracle(u: &[f64], v: &[f64]) -> Vec<f64> {
        vec![
            u[0] + v[0],
            u[1] + v[1],
            u[2] + v[2] + 0.5 * (u[0] * v[1] - u[1] * v[0]),
        ]
    }

    /// Hand-expanded Engel product: with [e1,e2] = e3 and [e1,e3] = e4 the
    /// third-order terms contribute only to e4. Writing a = u1·v2 − u2·v1,
    /// the nested brackets reduce to u1·a (from [u,[u,v]]) and v1·(v1u2 − v2u1)
    /// (from [v,[v,u]]).
    fn engel_product_oracle(u: &[f64], v: &[f64]) -> Vec<f64> {
        let a = u[0] * v[1] - u[1] * v[0];
        let b = u[0] * v[2] - u[2] * v[0];
        vec![
            u[0] + v[0],
            u[1] + v[1],
            u[2] + v[2] + 0.5 * a,
            u[3] + v[3] + 0.5 * b + (u[0] * a + v[0] * (v[0] * u[1] - v[1] * u[0])) / 12.0,
        ]
    }

    #[test]
    fn heisenberg_product_matches_hand_expansion() {
        let g = heisenberg();
        let cases = [
            (vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]),
            (vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]),
            (vec![0.3, -0.2, 0.1], vec![-1.1, 0.7, 0.4]),
            (vec![2.5, 1.5, -3.0], vec![0.25, -4.0, 0.125]),
        ];
        for (u, v) in cases {
            let got = g.bch(&u, &v);
            let want = heis_product_oracle(&u, &v);
            for k in 0..3 {
                assert_abs_diff_eq!(got[k], want[k], epsilon = 1e-15);
            }
        }
        // Frozen spot values for the two unit generators.
        assert_eq!(
            g.bch(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]),
            vec![1.0, 1.0, 0.5]
        );
        assert_eq!(
            g.bch(&[0.0, 1.0, 0.0], &[1.0, 0.0, 0.0]),
            vec![1.0, 1.0, -0.5]
        );
    }

    #[test]
    fn engel_product_matches_hand_expansion() {
        let g = engel();
        let e1 = vec![1.0, 0.0, 0.0, 0.0];
        let e2 = vec![0.0, 1.0, 0.0, 0.0];
        let got = g.bch(&e1, &e2);
        // u + v + ½e3 + (1/12)[e1,[e1,e2]] = (1, 1, 1/2, 1/12).
        assert_abs_diff_eq!(got[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(got[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(got[2], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(got[3], 1.0 / 12.0, epsilon = 1e-15);

        let cases = [
            (
                vec![0.5, -0.3, 0.2, 0.1],
                vec![-0.2, 0.4, -0.1, 0.3],
            ),
            (
                vec![1.5, 0.7, -0.4, 0.9],
                vec![-0.6, 1.1, 2.0, -0.8],
            ),
        ];
        for (u, v) in cases {
            let got = g.bch(&u, &v);
            let want = engel_product_oracle(&u, &v);
            for k in 0..4 {
                assert_abs_diff_eq!(got[k], want[k], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn heisenberg_frame_is_the_classical_one() {
        let g = heisenberg();
        let x = Point::new(vec![0.7, -1.3, 0.4]);
        let frame = g.horizontal_frame(&x);
        // X1 = (1, 0, -y/2), X2 = (0, 1, x/2).
        assert_abs_diff_eq!(frame[0][0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(frame[0][1], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(frame[0][2], 1.3 / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(frame[1][0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(frame[1][1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(frame[1][2], 0.7 / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn frame_matches_translation_derivative() {
        // X_j(x) must agree with a finite-difference derivative of
        // y ↦ x·y at the identity.
        let g = engel();
        let x = Point::new(vec![0.4, -0.9, 0.3, -0.2]);
        let eps = 1e-6;
        for j in 0..2 {
            let mut h = vec![0.0; 2];
            h[j] = 1.0;
            let analytic = g.frame_apply(&x, &h);
            let plus = g.mul(&x, &g.exp_layer1(&[h[0] * eps, h[1] * eps]));
            let minus = g.mul(&x, &g.exp_layer1(&[-h[0] * eps, -h[1] * eps]));
            for k in 0..4 {
                let fd = (plus.coords[k] - minus.coords[k]) / (2.0 * eps);
                assert_abs_diff_eq!(analytic[k], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn inverse_and_identity() {
        let g = engel();
        let x = Point::new(vec![0.5, -0.3, 0.2, 0.1]);
        let e = g.identity();
        assert_eq!(g.mul(&x, &e), x);
        assert_eq!(g.mul(&e, &x), x);
        let inv = g.inverse(&x);
        let prod = g.mul(&x, &inv);
        for c in prod.coords {
            assert_abs_diff_eq!(c, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn dilations_scale_by_layer_weight() {
        let g = engel();
        let x = Point::new(vec![1.0, 2.0, 3.0, 4.0]);
        let y = g.dilate(2.0, &x).unwrap();
        assert_eq!(y.coords, vec![2.0, 4.0, 12.0, 32.0]);

        // Negative parameters only act on first-layer points.
        let h = g.exp_layer1(&[1.0, -2.0]);
        let neg = g.dilate(-3.0, &h).unwrap();
        assert_eq!(neg.coords, vec![-3.0, 6.0, 0.0, 0.0]);
        assert_eq!(
            g.dilate(-1.0, &x),
            Err(GroupError::NegativeLambdaOutsideFirstLayer { lambda: -1.0 })
        );
    }

    #[test]
    fn dilation_is_a_group_homomorphism() {
        let g = engel();
        let u = Point::new(vec![0.3, -0.7, 0.4, 0.2]);
        let v = Point::new(vec![-0.5, 0.2, 0.15, -0.6]);
        for lambda in [0.5, 2.0, 3.7] {
            let lhs = g.dilate(lambda, &g.mul(&u, &v)).unwrap();
            let rhs = g.mul(
                &g.dilate(lambda, &u).unwrap(),
                &g.dilate(lambda, &v).unwrap(),
            );
            for k in 0..4 {
                assert_abs_diff_eq!(lhs.coords[k], rhs.coords[k], epsilon = 1e-12);
            }
        }
        // δ_λ ∘ δ_η = δ_{λη}
        let a = g.dilate(2.0, &g.dilate(3.0, &u).unwrap()).unwrap();
        let b = g.dilate(6.0, &u).unwrap();
        for k in 0..4 {
            assert_abs_diff_eq!(a.coords[k], b.coords[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn homogeneous_gauge_scales_linearly() {
        let g = engel();
        let z = vec![0.5, -0.25, 0.36, -0.008];
        let gauge = g.homogeneous_gauge(&z);
        let scaled: Vec<f64> = z
            .iter()
            .enumerate()
            .map(|(i, &c)| 2.0f64.powi(g.layer_of(i) as i32) * c)
            .collect();
        assert_abs_diff_eq!(g.homogeneous_gauge(&scaled), 2.0 * gauge, epsilon = 1e-12);
        assert_eq!(g.homogeneous_gauge(&vec![0.0; 4]), 0.0);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        // Step too large.
        let too_deep = GroupSpec {
            name: "deep".into(),
            layer_dims: vec![2, 1, 1, 1],
            brackets: vec![],
        };
        assert!(matches!(
            CarnotGroup::new(too_deep),
            Err(GroupError::StepTooLarge { step: 4 })
        ));

        // Grading violation: [e1,e2] cannot land back in the first layer.
        let bad_grading = GroupSpec {
            name: "bad-grading".into(),
            layer_dims: vec![2, 1],
            brackets: vec![BracketRule {
                i: 1,
                j: 2,
                out: vec![(1, 1.0)],
            }],
        };
        assert!(matches!(
            CarnotGroup::new(bad_grading),
            Err(GroupError::BracketGradingViolation { .. })
        ));

        // Second layer present but no bracket reaches it.
        let not_generating = GroupSpec {
            name: "hollow".into(),
            layer_dims: vec![2, 1],
            brackets: vec![],
        };
        assert!(matches!(
            CarnotGroup::new(not_generating),
            Err(GroupError::FirstLayerNotGenerating { layer: 2 })
        ));

        // Conflicting orientations for the same pair.
        let asymmetric = GroupSpec {
            name: "asym".into(),
            layer_dims: vec![2, 1],
            brackets: vec![
                BracketRule {
                    i: 1,
                    j: 2,
                    out: vec![(3, 1.0)],
                },
                BracketRule {
                    i: 2,
                    j: 1,
                    out: vec![(3, 1.0)],
                },
            ],
        };
        assert!(matches!(
            CarnotGroup::new(asymmetric),
            Err(GroupError::AsymmetricBracket { .. })
        ));
    }

    #[test]
    fn validation_rejects_jacobi_violation() {
        // Step-3 table with m = 3 where the cyclic sum on (e1,e2,e3) is
        // deliberately off: [[e1,e2],e3] = e7, [[e2,e3],e1] = e7,
        // [[e3,e1],e2] = -e7, summing to e7 instead of 0.
        let bad = GroupSpec {
            name: "bad-jacobi".into(),
            layer_dims: vec![3, 3, 1],
            brackets: vec![
                BracketRule { i: 1, j: 2, out: vec![(4, 1.0)] },
                BracketRule { i: 1, j: 3, out: vec![(5, 1.0)] },
                BracketRule { i: 2, j: 3, out: vec![(6, 1.0)] },
                BracketRule { i: 4, j: 3, out: vec![(7, 1.0)] },
                BracketRule { i: 6, j: 1, out: vec![(7, 1.0)] },
                BracketRule { i: 5, j: 2, out: vec![(7, 1.0)] },
            ],
        };
        assert!(matches!(
            CarnotGroup::new(bad),
            Err(GroupError::JacobiViolation { .. })
        ));
    }

    #[test]
    fn builtin_registry_round_trips_through_json() {
        for name in builtin_names() {
            let spec = builtin(name).unwrap();
            let text = spec.to_json();
            let back = GroupSpec::from_json(&text).unwrap();
            assert_eq!(spec, back);
            // Every builtin must validate.
            CarnotGroup::new(back).unwrap();
        }
    }

    #[test]
    fn fiber_inner_requires_matching_base() {
        let g = heisenberg();
        let x = Point::new(vec![0.1, 0.2, 0.3]);
        let y = Point::new(vec![0.4, 0.5, 0.6]);
        let u = g.embed_horizontal(&x, vec![1.0, 2.0]);
        let w_ok = g.embed_horizontal(&x, vec![-3.0, 0.5]);
        let w_bad = g.embed_horizontal(&y, vec![-3.0, 0.5]);
        assert_abs_diff_eq!(g.fiber_inner(&u, &w_ok).unwrap(), -2.0, epsilon = 1e-15);
        assert_eq!(g.fiber_inner(&u, &w_bad), Err(GroupError::BaseMismatch));
    }

    #[test]
    fn projection_reads_frame_coefficients() {
        // For y = coordinates of Σ h_j X_j(x) + vertical junk, the projection
        // must return exactly h: the frame vectors are the identity on the
        // first layer.
        let g = heisenberg();
        let x = Point::new(vec![2.0, -1.0, 0.5]);
        let h = [0.8, -0.6];
        let mut y = g.frame_apply(&x, &h);
        y[2] += 4.0; // vertical perturbation must not affect the projection
        let proj = g.project_horizontal(&x, &y);
        assert_eq!(proj.h, vec![0.8, -0.6]);
        assert_eq!(proj.base, x);
    }
}
