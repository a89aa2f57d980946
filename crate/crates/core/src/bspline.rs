//! Uniform B-splines in `t = ln y` with compact support inside `[y_lo, y_hi]`.
//!
//! Only the splines whose support lies fully inside the interval are kept,
//! so every combination vanishes with its first `degree - 1` derivatives at
//! both ends.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{GridFunction, RadialGrid};

#[derive(Debug, Clone, Copy)]
pub struct SplineBasis {
    t0: f64,
    h: f64,
    degree: usize,
    count: usize,
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

/// `m`-th derivative of the cardinal B-spline of degree `p` (support `[0, p+1]`).
pub fn cardinal(p: usize, x: f64, m: usize) -> f64 {
    if x <= 0.0 || x >= (p + 1) as f64 || m > p {
        return 0.0;
    }
    let e = (p - m) as i32;
    let mut acc = 0.0;
    for j in 0..=p + 1 {
        let s = x - j as f64;
        if s > 0.0 {
            let term = binom(p + 1, j) * s.powi(e);
            acc += if j % 2 == 0 { term } else { -term };
        }
    }
    acc / factorial(p - m)
}

impl SplineBasis {
    /// `intervals` uniform knot intervals in `ln y` over `[y_lo, y_hi]`.
    pub fn new(y_lo: f64, y_hi: f64, intervals: usize, degree: usize) -> Result<Self> {
        if !(y_lo > 0.0 && y_hi > y_lo) {
            return Err(Error::InvalidParams(format!("bad spline interval [{y_lo}, {y_hi}]")));
        }
        if intervals <= degree + 1 {
            return Err(Error::InvalidParams(format!(
                "{intervals} knot intervals leave no interior degree-{degree} splines"
            )));
        }
        let t0 = y_lo.ln();
        let h = (y_hi.ln() - t0) / intervals as f64;
        Ok(Self { t0, h, degree, count: intervals - degree })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    fn x(&self, j: usize, y: f64) -> f64 {
        (y.ln() - self.t0) / self.h - j as f64
    }

    pub fn value(&self, j: usize, y: f64) -> f64 {
        cardinal(self.degree, self.x(j, y), 0)
    }

    /// `d/dy` of basis function `j`.
    pub fn dy(&self, j: usize, y: f64) -> f64 {
        cardinal(self.degree, self.x(j, y), 1) / (self.h * y)
    }

    pub fn on_grid(&self, j: usize, grid: &Arc<RadialGrid>) -> GridFunction {
        GridFunction::from_fn(grid, |y| self.value(j, y))
    }

    pub fn dy_on_grid(&self, j: usize, grid: &Arc<RadialGrid>) -> GridFunction {
        GridFunction::from_fn(grid, |y| self.dy(j, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_of_unity_and_derivative() {
        for p in [3, 5] {
            for i in 0..50 {
                let x = p as f64 + i as f64 / 50.0;
                let s: f64 = (0..=p).map(|j| cardinal(p, x - j as f64, 0)).sum();
                assert!((s - 1.0).abs() < 1e-12, "{s}");
            }
            let h = 1e-6;
            for &x in &[0.3, 1.7, 2.5, 3.9] {
                let fd = (cardinal(p, x + h, 0) - cardinal(p, x - h, 0)) / (2.0 * h);
                assert!((fd - cardinal(p, x, 1)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn compact_support() {
        let b = SplineBasis::new(1.0, 100.0, 20, 3).unwrap();
        assert_eq!(b.len(), 17);
        for j in 0..b.len() {
            assert_eq!(b.value(j, 1.0), 0.0);
            assert_eq!(b.value(j, 100.0), 0.0);
        }
        assert!(b.value(0, 1.5) > 0.0);
        assert!(SplineBasis::new(1.0, 100.0, 4, 3).is_err());
    }
}
