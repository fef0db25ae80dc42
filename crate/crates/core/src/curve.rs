//! Horizontal curves with piecewise-constant controls on a uniform grid.
//!
//! A curve is stored as its start point plus `N` control blocks, each a
//! vector of horizontal frame coefficients held constant on one grid cell
//! of `[0, 1]`. Within a cell the flow of a constant horizontal field is a
//! one-parameter subgroup, so node values satisfy the exact recurrence
//! `γ(t_{j+1}) = γ(t_j) · exp(Δt · h_j)` — no ODE integration error enters
//! anywhere in this module; the only approximation is the midpoint rule in
//! [`HorizontalCurve::length`] for base-point-dependent metrics.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::group::{CarnotGroup, Point};
use crate::metric::SubFinslerMetric;

/// Coordinate tolerance for endpoint matching in [`HorizontalCurve::concatenate`].
pub const CONCAT_TOL: f64 = 1e-10;

/// Errors from curve construction and evaluation.
#[derive(Debug, Error, PartialEq)]
pub enum CurveError {
    /// A curve needs at least one control block.
    #[error("control grid is empty")]
    EmptyControl,
    /// Control block dimension must match the horizontal fiber.
    #[error("control block {index} has dimension {got}, fiber has {want}")]
    BlockDimMismatch {
        index: usize,
        got: usize,
        want: usize,
    },
    /// Curve parameters live in `[0, 1]`.
    #[error("parameter {t} outside [0, 1]")]
    TOutOfRange { t: f64 },
    /// Concatenation needs matching endpoint and start.
    #[error("curves do not chain: endpoint/start coordinate gap {gap:.3e}")]
    EndpointMismatch { gap: f64 },
    /// Curves on different groups cannot be combined.
    #[error("curves live on different groups")]
    GroupMismatch,
    /// Start point dimension must match the group.
    #[error("start point has dimension {got}, group has {want}")]
    BadStartDim { got: usize, want: usize },
}

/// A piecewise-constant control signal: `values[j]` is the horizontal
/// coefficient vector on the `j`-th cell of a uniform grid over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub values: Vec<Vec<f64>>,
}

impl Control {
    pub fn new(values: Vec<Vec<f64>>) -> Self {
        Control { values }
    }

    /// Number of grid cells.
    pub fn segments(&self) -> usize {
        self.values.len()
    }
}

/// A horizontal curve on `[0, 1]` with cached grid nodes.
#[derive(Debug, Clone)]
pub struct HorizontalCurve {
    group: Arc<CarnotGroup>,
    control: Control,
    /// `segments() + 1` node points; `nodes[0]` is the start.
    nodes: Vec<Point>,
}

impl HorizontalCurve {
    /// Builds the curve and computes all grid nodes by the exact
    /// node recurrence.
    pub fn new(
        group: Arc<CarnotGroup>,
        start: Point,
        control: Control,
    ) -> Result<Self, CurveError> {
        let n = control.segments();
        if n == 0 {
            return Err(CurveError::EmptyControl);
        }
        if start.dim() != group.dim() {
            return Err(CurveError::BadStartDim {
                got: start.dim(),
                want: group.dim(),
            });
        }
        let m = group.horizontal_dim();
        for (index, block) in control.values.iter().enumerate() {
            if block.len() != m {
                return Err(CurveError::BlockDimMismatch {
                    index,
                    got: block.len(),
                    want: m,
                });
            }
        }
        let dt = 1.0 / n as f64;
        let mut nodes = Vec::with_capacity(n + 1);
        nodes.push(start);
        for block in &control.values {
            let step: Vec<f64> = block.iter().map(|c| c * dt).collect();
            let next = group.mul(nodes.last().unwrap(), &group.exp_layer1(&step));
            nodes.push(next);
        }
        Ok(HorizontalCurve {
            group,
            control,
            nodes,
        })
    }

    pub fn group(&self) -> &Arc<CarnotGroup> {
        &self.group
    }

    pub fn control(&self) -> &Control {
        &self.control
    }

    pub fn segments(&self) -> usize {
        self.control.segments()
    }

    /// Grid nodes, including start and endpoint.
    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn start(&self) -> &Point {
        &self.nodes[0]
    }

    pub fn endpoint(&self) -> &Point {
        self.nodes.last().unwrap()
    }

    /// Evaluates the curve at `t ∈ [0, 1]` exactly: flow the constant
    /// control of the containing cell from its node.
    pub fn evaluate(&self, t: f64) -> Result<Point, CurveError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(CurveError::TOutOfRange { t });
        }
        let n = self.segments();
        let j = ((t * n as f64).floor() as usize).min(n - 1);
        let tau = t - j as f64 / n as f64;
        if tau == 0.0 {
            return Ok(self.nodes[j].clone());
        }
        let step: Vec<f64> = self.control.values[j].iter().map(|c| c * tau).collect();
        Ok(self.group.mul(&self.nodes[j], &self.group.exp_layer1(&step)))
    }

    /// Euclidean norm of the active control block: the curve's
    /// Carnot–Carathéodory speed at `t` for the round fiber norm.
    pub fn cc_speed(&self, t: f64) -> Result<f64, CurveError> {
        if !(0.0..=1.0).contains(&t) {
            return Err(CurveError::TOutOfRange { t });
        }
        let n = self.segments();
        let j = ((t * n as f64).floor() as usize).min(n - 1);
        Ok(self.control.values[j]
            .iter()
            .map(|c| c * c)
            .sum::<f64>()
            .sqrt())
    }

    /// Length under `phi` by the midpoint rule on each cell. For a metric
    /// that does not read the base point the sum is exact (the integrand is
    /// cellwise constant), and the midpoint evaluation is skipped.
    pub fn length(&self, phi: &SubFinslerMetric) -> f64 {
        let n = self.segments();
        let dt = 1.0 / n as f64;
        let mut total = 0.0;
        for (j, block) in self.control.values.iter().enumerate() {
            let x = if phi.base_dependent() {
                let half: Vec<f64> = block.iter().map(|c| c * (dt / 2.0)).collect();
                self.group.mul(&self.nodes[j], &self.group.exp_layer1(&half))
            } else {
                self.nodes[j].clone()
            };
            total += dt * phi.eval(&x, block);
        }
        total
    }

    /// The same path traversed backwards. Node values are recovered to
    /// machine precision (the bracket terms of the product re-associate, so
    /// cancellation is not bitwise).
    pub fn reverse(&self) -> HorizontalCurve {
        let values: Vec<Vec<f64>> = self
            .control
            .values
            .iter()
            .rev()
            .map(|block| block.iter().map(|c| -c).collect())
            .collect();
        HorizontalCurve::new(
            self.group.clone(),
            self.endpoint().clone(),
            Control::new(values),
        )
        .expect("reversal preserves validity")
    }

    /// Splits every cell into `factor` equal cells with the same control.
    /// Nodes at shared grid times are reproduced exactly, because repeated
    /// products of parallel one-parameter steps telescope without brackets.
    pub fn refine(&self, factor: usize) -> HorizontalCurve {
        let factor = factor.max(1);
        let values: Vec<Vec<f64>> = self
            .control
            .values
            .iter()
            .flat_map(|block| std::iter::repeat_n(block.clone(), factor))
            .collect();
        HorizontalCurve::new(
            self.group.clone(),
            self.start().clone(),
            Control::new(values),
        )
        .expect("refinement preserves validity")
    }

    /// Runs `self` on `[0, 1/2]` and `other` on `[1/2, 1]`, each at twice
    /// its original speed. Both curves are refined to a common grid first,
    /// so lengths add exactly. Fails unless `other` starts where `self`
    /// ends (within [`CONCAT_TOL`] per coordinate) on the same group.
    pub fn concatenate(&self, other: &HorizontalCurve) -> Result<HorizontalCurve, CurveError> {
        if self.group.spec() != other.group.spec() {
            return Err(CurveError::GroupMismatch);
        }
        let gap = self
            .endpoint()
            .coords
            .iter()
            .zip(&other.start().coords)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if gap > CONCAT_TOL {
            return Err(CurveError::EndpointMismatch { gap });
        }
        let l = lcm(self.segments(), other.segments());
        let first = self.refine(l / self.segments());
        let second = other.refine(l / other.segments());
        let values: Vec<Vec<f64>> = first
            .control
            .values
            .iter()
            .chain(&second.control.values)
            .map(|block| block.iter().map(|c| c * 2.0).collect())
            .collect();
        HorizontalCurve::new(
            self.group.clone(),
            self.start().clone(),
            Control::new(values),
        )
    }

    /// Resamples onto `2N` cells so that every block carries the same
    /// Euclidean speed, equal to the total length of the round-norm control.
    ///
    /// Cells are assigned the unit direction active at the midpoint of
    /// their arclength window, so the result is exact when the control
    /// direction is constant; otherwise corners move endpoints by `O(1/N)`,
    /// which the caller can audit by comparing endpoints.
    pub fn reparametrize_constant_speed(&self) -> HorizontalCurve {
        let n = self.segments();
        let dt = 1.0 / n as f64;
        let speeds: Vec<f64> = self
            .control
            .values
            .iter()
            .map(|b| b.iter().map(|c| c * c).sum::<f64>().sqrt())
            .collect();
        let total: f64 = speeds.iter().map(|s| s * dt).sum();
        if total == 0.0 {
            return self.clone();
        }
        let smax = speeds.iter().cloned().fold(0.0f64, f64::max);
        let smin = speeds.iter().cloned().fold(f64::INFINITY, f64::min);
        if smax - smin <= 1e-14 * smax {
            return self.clone();
        }
        // Cumulative arclength at the original grid nodes.
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        for s in &speeds {
            cum.push(cum.last().unwrap() + s * dt);
        }
        let n2 = 2 * n;
        let values: Vec<Vec<f64>> = (0..n2)
            .map(|i| {
                let a = (i as f64 + 0.5) / n2 as f64 * total;
                // Locate the original cell whose arclength window covers a;
                // zero-speed cells have empty windows and are never chosen.
                let j = match cum[1..n].binary_search_by(|c| c.partial_cmp(&a).unwrap()) {
                    Ok(k) => k + 1,
                    Err(k) => k,
                };
                let s = speeds[j].max(1e-300);
                self.control.values[j].iter().map(|c| c / s * total).collect()
            })
            .collect();
        HorizontalCurve::new(
            self.group.clone(),
            self.start().clone(),
            Control::new(values),
        )
        .expect("resampling preserves validity")
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}
