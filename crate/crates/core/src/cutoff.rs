//! Smooth radial cutoff `chi`: 1 on `[0, 1]`, 0 on `[2, inf)`.
//!
//! Built from the bump `exp(-1/x)`; on `(1, 2)` it is the logistic of
//! `g(t) = 1/t - 1/(1-t)` with `t = 2 - y`, which keeps every derivative
//! finite and avoids underflow.

use std::sync::Arc;

use crate::grid::{GridFunction, RadialGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cutoff {
    pub scale: f64,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Value and first two derivatives of the unit cutoff at `y`.
pub fn chi_unit(y: f64) -> (f64, f64, f64) {
    if y <= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    if y >= 2.0 {
        return (0.0, 0.0, 0.0);
    }
    let t = 2.0 - y;
    let s = 1.0 - t;
    let g = 1.0 / t - 1.0 / s;
    let g1 = -1.0 / (t * t) - 1.0 / (s * s);
    let g2 = 2.0 / (t * t * t) - 2.0 / (s * s * s);
    // S(t) = logistic(-g)
    let v = logistic(-g);
    let w = v * (1.0 - v);
    let dv_dt = -w * g1;
    let d2v_dt2 = -(dv_dt * (1.0 - 2.0 * v)) * g1 - w * g2;
    // dt/dy = -1
    let guard = |x: f64| if x.is_finite() { x } else { 0.0 };
    (v, guard(-dv_dt), guard(d2v_dt2))
}

impl Cutoff {
    pub fn new(scale: f64) -> Self {
        assert!(scale > 0.0, "cutoff scale must be positive");
        Self { scale }
    }

    pub fn value(&self, y: f64) -> f64 {
        chi_unit(y / self.scale).0
    }

    pub fn d1(&self, y: f64) -> f64 {
        chi_unit(y / self.scale).1 / self.scale
    }

    pub fn d2(&self, y: f64) -> f64 {
        chi_unit(y / self.scale).2 / (self.scale * self.scale)
    }

    pub fn on_grid(&self, grid: &Arc<RadialGrid>) -> GridFunction {
        GridFunction::from_fn(grid, |y| self.value(y))
    }
}

/// `chi_scale` sampled on the grid.
pub fn cutoff(grid: &Arc<RadialGrid>, scale: f64) -> GridFunction {
    Cutoff::new(scale).on_grid(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grading;

    #[test]
    fn plateau_and_support() {
        let c = Cutoff::new(20.0);
        assert_eq!(c.value(10.0), 1.0);
        assert_eq!(c.value(20.0), 1.0);
        assert_eq!(c.value(60.0), 0.0);
        assert_eq!(c.value(40.0), 0.0);
        let mid = c.value(30.0);
        assert!(mid > 0.0 && mid < 1.0);
    }

    #[test]
    fn monotone_on_transition() {
        let c = Cutoff::new(20.0);
        let mut prev = 1.0;
        for i in 1..390 {
            let y = 20.0 + 20.0 * i as f64 / 400.0;
            let v = c.value(y);
            assert!(v <= prev && v > 0.0);
            if (20..380).contains(&i) {
                assert!(v < prev && v < 1.0);
            }
            prev = v;
        }
    }

    #[test]
    fn derivatives_match_differences() {
        let c = Cutoff::new(3.0);
        for &y in &[3.3, 4.0, 4.5, 5.2, 5.9] {
            let h = 1e-5;
            let fd1 = (c.value(y + h) - c.value(y - h)) / (2.0 * h);
            let fd2 = (c.d1(y + h) - c.d1(y - h)) / (2.0 * h);
            assert!((fd1 - c.d1(y)).abs() < 1e-7, "{y}");
            assert!((fd2 - c.d2(y)).abs() < 1e-6, "{y}");
        }
        assert_eq!(c.d1(2.9), 0.0);
        assert_eq!(c.d2(6.1), 0.0);
    }

    #[test]
    fn converges_under_refinement() {
        let y_probe = 27.3;
        let mut prev: Option<f64> = None;
        for n in [500, 1000, 2000] {
            let g = Arc::new(RadialGrid::build(1e-4, 1e3, n, Grading::default(), 8.0).unwrap());
            let v = cutoff(&g, 20.0).at(y_probe);
            if let Some(p) = prev {
                assert!((v - p).abs() < 1e-6, "{n}: {v} vs {p}");
            }
            prev = Some(v);
        }
    }
}
