//! Graded radial mesh, weighted quadrature and grid functions.
//!
//! The mesh is geometric on `[y_min, 1]` and algebraically stretched on
//! `[1, y_max]`; `y = 1` is always a node. Derivatives use five-point
//! Fornberg stencils (centered in the interior, one-sided at the ends).
//! Integrals integrate the local cubic interpolant of the integrand against
//! the exact weight `y^w` with an 8-point Gauss rule per interval.

use std::fmt;
use std::io::Write;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Grading {
    /// Log-uniform on both sides of `y = 1`.
    Geometric,
    /// Geometric on `[y_min, 1]`, `y = (1 + c j)^power` on `[1, y_max]`.
    GeometricAlgebraic { power: f64 },
}

impl Default for Grading {
    fn default() -> Self {
        Grading::GeometricAlgebraic { power: 8.0 }
    }
}

impl fmt::Display for Grading {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Grading::Geometric => write!(f, "geometric"),
            Grading::GeometricAlgebraic { power } => write!(f, "geometric-algebraic(p={power})"),
        }
    }
}

const STENCIL: usize = 5;

// 8-point Gauss-Legendre on [-1, 1].
const GAUSS_X: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GAUSS_W: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362,
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// Finite-difference weights for derivatives `0..=m` at `x0` over `xs`
/// (Fornberg's recursion). Returns `c[k][j]` for derivative `k`, node `j`.
pub fn fornberg(x0: f64, xs: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

#[derive(Debug, Clone)]
struct Stencil {
    start: usize,
    d1: [f64; STENCIL],
    d2: [f64; STENCIL],
}

/// Per-interval integration weights for the cubic interpolant.
#[derive(Debug, Clone)]
struct IntervalRule {
    start: usize,
    w: [f64; 4],
}

#[derive(Debug, Clone)]
pub struct RadialGrid {
    nodes: Vec<f64>,
    grading: Grading,
    weight_exp: f64,
    one_index: usize,
    stencils: Vec<Stencil>,
    weighted_rules: Vec<IntervalRule>,
    plain_rules: Vec<IntervalRule>,
    quad_weights: Vec<f64>,
}

impl PartialEq for RadialGrid {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes && self.weight_exp == other.weight_exp
    }
}

impl RadialGrid {
    /// Builds the mesh. `weight_exp` is the exponent of the measure, `d - 3`.
    pub fn build(y_min: f64, y_max: f64, n: usize, grading: Grading, weight_exp: f64) -> Result<Self> {
        if !(y_min > 0.0 && y_min < 1.0 && y_max > 1.0) {
            return Err(Error::InvalidParams(format!(
                "need 0 < y_min < 1 < y_max (got {y_min}, {y_max})"
            )));
        }
        if n < 100 {
            return Err(Error::InsufficientResolution(format!(
                "n={n} < 100"
            )));
        }
        let inner_decades = (1.0 / y_min).ln();
        let nodes = match grading {
            Grading::Geometric => {
                let total = (y_max / y_min).ln();
                let n_in = ((n - 1) as f64 * inner_decades / total).round() as usize;
                check_inner(n_in)?;
                let n_out = n - 1 - n_in;
                let mut v = geometric(y_min, 1.0, n_in);
                let r = (y_max.ln() / n_out as f64).exp();
                v.extend((1..=n_out).map(|j| if j == n_out { y_max } else { r.powi(j as i32) }));
                v
            }
            Grading::GeometricAlgebraic { power } => {
                if !(power >= 1.0) {
                    return Err(Error::InvalidParams(format!("algebraic power must be >= 1 (got {power})")));
                }
                let outer_span = y_max.powf(1.0 / power) - 1.0;
                let count = |ln_r: f64| inner_decades / ln_r + outer_span / ((ln_r / power).exp() - 1.0);
                // count is decreasing in ln r
                let target = (n - 1) as f64;
                let (mut lo, mut hi) = (1e-8_f64, 10.0_f64);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if count(mid) > target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let ln_r = 0.5 * (lo + hi);
                let n_in = (inner_decades / ln_r).round() as usize;
                check_inner(n_in)?;
                if n_in + 1 >= n {
                    return Err(Error::InsufficientResolution("no nodes left for the far field".into()));
                }
                let n_out = n - 1 - n_in;
                let c = outer_span / n_out as f64;
                let mut v = geometric(y_min, 1.0, n_in);
                v.extend((1..=n_out).map(|j| {
                    if j == n_out {
                        y_max
                    } else {
                        (1.0 + c * j as f64).powf(power)
                    }
                }));
                v
            }
        };
        Self::from_nodes(nodes, grading, weight_exp)
    }

    /// Builds a grid from explicit nodes; `1.0` must be one of them.
    pub fn from_nodes(nodes: Vec<f64>, grading: Grading, weight_exp: f64) -> Result<Self> {
        let n = nodes.len();
        if n < STENCIL + 1 {
            return Err(Error::InsufficientResolution(format!("only {n} nodes")));
        }
        if nodes[0] <= 0.0 || nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParams("nodes must be positive and strictly increasing".into()));
        }
        let one_index = nodes
            .iter()
            .position(|&y| y == 1.0)
            .ok_or_else(|| Error::InvalidParams("grid must contain the node y = 1".into()))?;
        let stencils = (0..n)
            .map(|i| {
                let start = i.saturating_sub(2).min(n - STENCIL);
                let c = fornberg(nodes[i], &nodes[start..start + STENCIL], 2);
                let mut d1 = [0.0; STENCIL];
                let mut d2 = [0.0; STENCIL];
                d1.copy_from_slice(&c[1]);
                d2.copy_from_slice(&c[2]);
                Stencil { start, d1, d2 }
            })
            .collect();
        let weighted_rules = interval_rules(&nodes, weight_exp);
        let plain_rules = interval_rules(&nodes, 0.0);
        let mut quad_weights = vec![0.0; n];
        for r in &weighted_rules {
            for (k, w) in r.w.iter().enumerate() {
                quad_weights[r.start + k] += w;
            }
        }
        Ok(Self {
            nodes,
            grading,
            weight_exp,
            one_index,
            stencils,
            weighted_rules,
            plain_rules,
            quad_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn y_min(&self) -> f64 {
        self.nodes[0]
    }

    pub fn y_max(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn grading(&self) -> Grading {
        self.grading
    }

    pub fn weight_exp(&self) -> f64 {
        self.weight_exp
    }

    /// Index of the node `y = 1`.
    pub fn one_index(&self) -> usize {
        self.one_index
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }

    /// Short human-readable descriptor used in output headers.
    pub fn descriptor(&self) -> String {
        format!(
            "n={} y_min={:e} y_max={:e} grading={} weight=y^{}",
            self.len(),
            self.y_min(),
            self.y_max(),
            self.grading,
            self.weight_exp
        )
    }

    /// Analytic value of `int_{y_min}^{y_max} y^w dy`.
    pub fn measure_exact(&self) -> f64 {
        let p = self.weight_exp + 1.0;
        (self.y_max().powf(p) - self.y_min().powf(p)) / p
    }

    pub fn derivative(&self, v: &[f64]) -> Vec<f64> {
        self.stencils
            .iter()
            .map(|s| s.d1.iter().zip(&v[s.start..s.start + STENCIL]).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn second_derivative(&self, v: &[f64]) -> Vec<f64> {
        self.stencils
            .iter()
            .map(|s| s.d2.iter().zip(&v[s.start..s.start + STENCIL]).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Stencil of node `i`: first index and the first/second derivative weights.
    pub fn stencil(&self, i: usize) -> (usize, &[f64; STENCIL], &[f64; STENCIL]) {
        let s = &self.stencils[i];
        (s.start, &s.d1, &s.d2)
    }

    /// `int v(y) y^w dy` over the whole grid.
    pub fn integrate_weighted(&self, v: &[f64]) -> f64 {
        self.quad_weights.iter().zip(v).map(|(w, x)| w * x).sum()
    }

    fn cumulative_with(&self, rules: &[IntervalRule], v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(v.len());
        let mut acc = 0.0;
        out.push(0.0);
        for r in rules {
            acc += r.w.iter().zip(&v[r.start..r.start + 4]).map(|(a, b)| a * b).sum::<f64>();
            out.push(acc);
        }
        out
    }

    /// `C_i = int_{y_0}^{y_i} v(y) dy`.
    pub fn cumulative_plain(&self, v: &[f64]) -> Vec<f64> {
        self.cumulative_with(&self.plain_rules, v)
    }

    /// `C_i = int_{y_0}^{y_i} v(y) y^w dy`.
    pub fn cumulative_weighted(&self, v: &[f64]) -> Vec<f64> {
        self.cumulative_with(&self.weighted_rules, v)
    }

    /// Integral of `v` (times `y^w` if `weighted`) over each mesh interval.
    pub fn interval_integrals(&self, v: &[f64], weighted: bool) -> Vec<f64> {
        let rules = if weighted { &self.weighted_rules } else { &self.plain_rules };
        rules
            .iter()
            .map(|r| r.w.iter().zip(&v[r.start..r.start + 4]).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `C_i = int_{y_anchor}^{y_i} v`, summed outward from the anchor node so
    /// that steep integrands keep their relative accuracy on both sides.
    pub fn cumulative_from(&self, v: &[f64], anchor: usize, weighted: bool) -> Vec<f64> {
        let parts = self.interval_integrals(v, weighted);
        let mut out = vec![0.0; self.len()];
        for i in anchor + 1..self.len() {
            out[i] = out[i - 1] + parts[i - 1];
        }
        for i in (0..anchor).rev() {
            out[i] = out[i + 1] - parts[i];
        }
        out
    }

    /// Six-point Lagrange interpolation of nodal values at `y` (clamped to the grid).
    pub fn interpolate(&self, v: &[f64], y: f64) -> f64 {
        let n = self.len();
        let idx = self.nodes.partition_point(|&x| x <= y);
        let start = idx.saturating_sub(3).min(n - 6);
        let xs = &self.nodes[start..start + 6];
        let mut acc = 0.0;
        for j in 0..6 {
            let mut l = 1.0;
            for k in 0..6 {
                if k != j {
                    l *= (y - xs[k]) / (xs[j] - xs[k]);
                }
            }
            acc += l * v[start + j];
        }
        acc
    }

    /// Smallest node index with `y_i >= y`.
    pub fn index_at_or_above(&self, y: f64) -> usize {
        self.nodes.partition_point(|&x| x < y)
    }
}

fn check_inner(n_in: usize) -> Result<()> {
    if n_in < 20 {
        return Err(Error::InsufficientResolution(format!(
            "only {n_in} intervals on [y_min, 1]"
        )));
    }
    Ok(())
}

fn geometric(a: f64, b: f64, intervals: usize) -> Vec<f64> {
    let r = (b / a).ln() / intervals as f64;
    (0..=intervals)
        .map(|i| if i == intervals { b } else { a * (r * i as f64).exp() })
        .collect()
}

fn interval_rules(nodes: &[f64], w: f64) -> Vec<IntervalRule> {
    let n = nodes.len();
    (0..n - 1)
        .map(|i| {
            let start = i.saturating_sub(1).min(n - 4);
            let xs = &nodes[start..start + 4];
            let (a, b) = (nodes[i], nodes[i + 1]);
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            let mut wts = [0.0; 4];
            for (gx, gw) in GAUSS_X.iter().zip(GAUSS_W.iter()) {
                let y = mid + half * gx;
                let meas = gw * half * if w == 0.0 { 1.0 } else { y.powf(w) };
                for j in 0..4 {
                    let mut l = 1.0;
                    for k in 0..4 {
                        if k != j {
                            l *= (y - xs[k]) / (xs[j] - xs[k]);
                        }
                    }
                    wts[j] += meas * l;
                }
            }
            IntervalRule { start, w: wts }
        })
        .collect()
}

/// A sampled radial function on a shared grid.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<RadialGrid>,
    values: Vec<f64>,
    /// `p` with `f ~ c y^{2p+2}` near the origin, when known.
    pub origin_order: Option<i32>,
    /// `q` with `f ~ c y^q` at `y_max`, when known.
    pub tail_order: Option<f64>,
}

impl GridFunction {
    pub fn new(grid: Arc<RadialGrid>, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len(), "value count must match the grid");
        Self { grid, values, origin_order: None, tail_order: None }
    }

    pub fn from_fn(grid: &Arc<RadialGrid>, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&y| f(y)).collect();
        Self::new(grid.clone(), values)
    }

    pub fn zeros(grid: &Arc<RadialGrid>) -> Self {
        Self::new(grid.clone(), vec![0.0; grid.len()])
    }

    pub fn with_orders(mut self, origin: Option<i32>, tail: Option<f64>) -> Self {
        self.origin_order = origin;
        self.tail_order = tail;
        self
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn y(&self) -> &[f64] {
        self.grid.nodes()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || *self.grid == *other.grid
    }

    pub fn check_grid(&self, other: &Self) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = self.y().iter().zip(&self.values).map(|(&y, &v)| f(y, v)).collect();
        Self::new(self.grid.clone(), values)
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        assert!(self.same_grid(other), "grid mismatch");
        let values = self
            .y()
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(&y, (&a, &b))| f(y, a, b))
            .collect();
        Self::new(self.grid.clone(), values)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|_, v| c * v)
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Self) {
        assert!(self.same_grid(other), "grid mismatch");
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
        self.origin_order = None;
        self.tail_order = None;
    }

    pub fn derivative(&self) -> Self {
        Self::new(self.grid.clone(), self.grid.derivative(&self.values))
    }

    pub fn second_derivative(&self) -> Self {
        Self::new(self.grid.clone(), self.grid.second_derivative(&self.values))
    }

    /// Scaling generator `y d/dy`.
    pub fn lambda(&self) -> Self {
        let d = self.grid.derivative(&self.values);
        let values = self.y().iter().zip(d).map(|(y, dv)| y * dv).collect();
        Self::new(self.grid.clone(), values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn at(&self, y: f64) -> f64 {
        self.grid.interpolate(&self.values, y)
    }

    /// Least-squares slope of `ln|f|` against `ln y` over nodes in `[lo, hi]`.
    pub fn log_slope(&self, lo: f64, hi: f64) -> Result<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = self
            .y()
            .iter()
            .zip(&self.values)
            .filter(|(y, _)| **y >= lo && **y <= hi)
            .map(|(y, v)| (y.ln(), v.abs().ln()))
            .unzip();
        if xs.len() < 3 || ys.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("cannot fit a slope on [{lo:e}, {hi:e}]")));
        }
        Ok(crate::fit::linear_fit(&xs, &ys).slope)
    }

    /// Slope over the first decade of the grid.
    pub fn origin_slope(&self) -> Result<f64> {
        let y0 = self.grid.y_min();
        self.log_slope(y0, 10.0 * y0)
    }

    /// Slope over the last decade of the grid.
    pub fn tail_slope(&self) -> Result<f64> {
        let y1 = self.grid.y_max();
        self.log_slope(y1 / 10.0, y1)
    }

    /// Writes `(y, value)` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W, header: &str) -> std::io::Result<()> {
        writeln!(w, "y,{header}")?;
        for (y, v) in self.y().iter().zip(&self.values) {
            writeln!(w, "{y:.16e},{v:.16e}")?;
        }
        Ok(())
    }
}

/// `<f, g> = int f g y^{d-3} dy`.
pub fn weighted_inner(f: &GridFunction, g: &GridFunction) -> Result<f64> {
    f.check_grid(g)?;
    Ok(f.grid.quad_weights.iter().zip(f.values.iter().zip(&g.values)).map(|(w, (a, b))| w * (a * b)).sum())
}

pub fn weighted_norm(f: &GridFunction) -> f64 {
    weighted_inner(f, f).unwrap().max(0.0).sqrt()
}

/// `int_{y_min}^{upto} h y^{d-3} dy`, interpolating the cumulative integral at `upto`.
pub fn weighted_integral_upto(h: &GridFunction, upto: f64) -> f64 {
    let grid = h.grid();
    if upto >= grid.y_max() {
        return grid.integrate_weighted(h.values());
    }
    let c = grid.cumulative_weighted(h.values());
    grid.interpolate(&c, upto)
}

impl Add for &GridFunction {
    type Output = GridFunction;
    fn add(self, rhs: &GridFunction) -> GridFunction {
        self.zip_map(rhs, |_, a, b| a + b)
    }
}

impl Sub for &GridFunction {
    type Output = GridFunction;
    fn sub(self, rhs: &GridFunction) -> GridFunction {
        self.zip_map(rhs, |_, a, b| a - b)
    }
}

impl Mul for &GridFunction {
    type Output = GridFunction;
    fn mul(self, rhs: &GridFunction) -> GridFunction {
        self.zip_map(rhs, |_, a, b| a * b)
    }
}

impl Mul<&GridFunction> for f64 {
    type Output = GridFunction;
    fn mul(self, rhs: &GridFunction) -> GridFunction {
        rhs.scale(self)
    }
}

impl Neg for &GridFunction {
    type Output = GridFunction;
    fn neg(self) -> GridFunction {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Arc<RadialGrid> {
        Arc::new(RadialGrid::build(1e-4, 1e3, n, Grading::default(), 8.0).unwrap())
    }

    #[test]
    fn builds_standard_grid() {
        let g = grid(2000);
        assert_eq!(g.len(), 2000);
        assert_eq!(g.nodes()[g.one_index()], 1.0);
        assert!((g.y_min() - 1e-4).abs() < 1e-18);
        assert!((g.y_max() - 1e3).abs() < 1e-9);
        let rel = (g.integrate_weighted(&vec![1.0; g.len()]) - g.measure_exact()).abs() / g.measure_exact();
        assert!(rel < 1e-8, "rel = {rel}");
    }

    #[test]
    fn node_spacing_non_decreasing() {
        for grading in [Grading::default(), Grading::Geometric, Grading::GeometricAlgebraic { power: 3.0 }] {
            let g = RadialGrid::build(1e-4, 1e3, 1500, grading, 8.0).unwrap();
            let h: Vec<f64> = g.nodes().windows(2).map(|w| w[1] - w[0]).collect();
            for (i, w) in h.windows(2).enumerate() {
                assert!(w[1] >= w[0] * (1.0 - 1e-9), "{grading}: spacing shrinks at {i}");
            }
        }
    }

    #[test]
    fn rejects_coarse_grid() {
        let e = RadialGrid::build(1e-4, 1e3, 50, Grading::default(), 8.0).unwrap_err();
        assert!(e.to_string().contains("insufficient resolution"));
        let e = RadialGrid::build(1e-4, 1e60, 110, Grading::Geometric, 8.0).unwrap_err();
        assert!(e.to_string().contains("insufficient resolution"), "{e}");
    }

    #[test]
    fn unit_interval_measure() {
        let mut nodes: Vec<f64> = (0..=400).map(|i| 1.0 + i as f64 / 400.0).collect();
        nodes.insert(0, 0.5);
        let g = Arc::new(RadialGrid::from_nodes(nodes, Grading::Geometric, 8.0).unwrap());
        let one = GridFunction::from_fn(&g, |_| 1.0);
        // restricted to [1, 2]: integrate only from the node y = 1
        let c = g.cumulative_weighted(one.values());
        let val = c[g.len() - 1] - c[g.one_index()];
        assert!((val - 511.0 / 9.0).abs() < 1e-10, "{val}");
    }

    #[test]
    fn quadrature_is_high_order() {
        // int y^8 e^{-y} over [y_min, y_max] against the closed form
        let exact = |a: f64, b: f64| {
            let anti = |y: f64| {
                let mut s = 0.0;
                let mut term = 1.0;
                let mut fact = 1.0;
                for k in 0..=8 {
                    if k > 0 {
                        term *= y;
                        fact *= k as f64;
                    }
                    s += 40320.0 / fact * term;
                }
                -(-y).exp() * s
            };
            anti(b) - anti(a)
        };
        let mut errs = vec![];
        for n in [400, 800] {
            let g = grid(n);
            let f = GridFunction::from_fn(&g, |y| (-y).exp());
            let v = g.integrate_weighted(f.values());
            errs.push((v - exact(g.y_min(), g.y_max())).abs() / 40320.0);
        }
        assert!(errs[0] / errs[1] >= 4.0, "{errs:?}");
    }

    #[test]
    fn derivatives_fourth_order() {
        let mut errs = vec![];
        for n in [500, 1000] {
            let g = grid(n);
            let f = GridFunction::from_fn(&g, |y| (y / (1.0 + y)).powi(3));
            let d = f.derivative();
            let e = d
                .y()
                .iter()
                .zip(d.values())
                .filter(|(y, _)| **y > 1e-2 && **y < 1e2)
                .map(|(&y, &v)| (v - 3.0 * y * y / (1.0 + y).powi(4)).abs())
                .fold(0.0, f64::max);
            errs.push(e);
        }
        assert!(errs[0] / errs[1] > 10.0, "{errs:?}");
    }

    #[test]
    fn interpolation_and_slopes() {
        let g = grid(2000);
        let f = GridFunction::from_fn(&g, |y| 3.0 * y.powf(-2.0));
        assert!((f.at(17.3) - 3.0 / (17.3f64 * 17.3)).abs() < 1e-9);
        assert!((f.tail_slope().unwrap() + 2.0).abs() < 1e-12);
        assert!((f.origin_slope().unwrap() + 2.0).abs() < 1e-12);
    }

    #[test]
    fn inner_product_basics() {
        let g = grid(800);
        let f = GridFunction::from_fn(&g, |y| (-y).exp() * y.sin());
        let h = GridFunction::from_fn(&g, |y| 1.0 / (1.0 + y * y * y * y * y * y * y * y * y * y));
        let zero = GridFunction::zeros(&g);
        assert_eq!(weighted_inner(&f, &h).unwrap(), weighted_inner(&h, &f).unwrap());
        assert_eq!(weighted_inner(&f, &zero).unwrap(), 0.0);
        let other = grid(801);
        assert!(matches!(weighted_inner(&f, &GridFunction::zeros(&other)), Err(Error::GridMismatch)));
    }

    #[test]
    fn fornberg_uniform_matches_classic() {
        let xs = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let c = fornberg(0.0, &xs, 2);
        let d2 = [-1.0 / 12.0, 4.0 / 3.0, -2.5, 4.0 / 3.0, -1.0 / 12.0];
        for (a, b) in c[2].iter().zip(d2) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn csv_has_seventeen_digits() {
        let g = grid(200);
        let f = GridFunction::from_fn(&g, |y| 1.0 / 3.0 + y);
        let mut buf = Vec::new();
        f.write_csv(&mut buf, "f").unwrap();
        let s = String::from_utf8(buf).unwrap();
        let line = s.lines().nth(1).unwrap();
        let parsed: Vec<f64> = line.split(',').map(|t| t.parse().unwrap()).collect();
        assert_eq!(parsed[1], f.values()[0]);
    }
}
