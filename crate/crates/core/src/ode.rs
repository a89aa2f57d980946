//! Dormand-Prince 5(4) integrator with step-size control.
//!
//! Integrates exactly to each requested output point, so callers can sample a
//! solution on a mesh without dense output.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-14, max_steps: 2_000_000 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Outcome of an observer callback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

impl Dopri5 {
    pub fn with_tol(rtol: f64, atol: f64) -> Self {
        Self { rtol, atol, ..Self::default() }
    }

    /// Integrates `y' = f(x, y)` from `x0` through the increasing `outputs`,
    /// calling `observe(index, x, y)` at each. Returns the number of outputs reached.
    pub fn solve<F, O>(&self, mut f: F, x0: f64, y0: &[f64], outputs: &[f64], mut observe: O) -> Result<usize>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
        O: FnMut(usize, f64, &[f64]) -> Control,
    {
        let n = y0.len();
        let mut y = y0.to_vec();
        let mut x = x0;
        let mut k1 = vec![0.0; n];
        let mut k2 = vec![0.0; n];
        let mut k3 = vec![0.0; n];
        let mut k4 = vec![0.0; n];
        let mut k5 = vec![0.0; n];
        let mut k6 = vec![0.0; n];
        let mut k7 = vec![0.0; n];
        let mut tmp = vec![0.0; n];
        let mut ynew = vec![0.0; n];
        f(x, &y, &mut k1);
        let span = outputs.last().map(|&e| (e - x0).abs()).unwrap_or(0.0);
        let mut h = (span * 1e-4).max(1e-12);
        let mut steps = 0usize;
        let mut reached = 0;
        for (idx, &target) in outputs.iter().enumerate() {
            if target < x {
                return Err(Error::Numerical("outputs must be increasing".into()));
            }
            while x < target {
                steps += 1;
                if steps > self.max_steps {
                    return Err(Error::Numerical(format!("step limit reached at x = {x:e}")));
                }
                let last = x + h >= target;
                let hh = if last { target - x } else { h };
                for i in 0..n {
                    tmp[i] = y[i] + hh * A21 * k1[i];
                }
                f(x + C2 * hh, &tmp, &mut k2);
                for i in 0..n {
                    tmp[i] = y[i] + hh * (A31 * k1[i] + A32 * k2[i]);
                }
                f(x + C3 * hh, &tmp, &mut k3);
                for i in 0..n {
                    tmp[i] = y[i] + hh * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
                }
                f(x + C4 * hh, &tmp, &mut k4);
                for i in 0..n {
                    tmp[i] = y[i] + hh * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
                }
                f(x + C5 * hh, &tmp, &mut k5);
                for i in 0..n {
                    tmp[i] = y[i] + hh * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
                }
                f(x + hh, &tmp, &mut k6);
                for i in 0..n {
                    ynew[i] = y[i] + hh * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
                }
                f(x + hh, &ynew, &mut k7);
                let mut err = 0.0_f64;
                for i in 0..n {
                    let e = hh * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                    let sc = self.atol + self.rtol * y[i].abs().max(ynew[i].abs());
                    err = err.max((e / sc).abs());
                }
                if !err.is_finite() {
                    h *= 0.1;
                    if h < 1e-300 {
                        return Err(Error::Numerical(format!("step underflow at x = {x:e}")));
                    }
                    continue;
                }
                if err <= 1.0 {
                    x = if last { target } else { x + hh };
                    std::mem::swap(&mut y, &mut ynew);
                    std::mem::swap(&mut k1, &mut k7);
                }
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                if !(last && err <= 1.0) {
                    h = hh * fac;
                } else {
                    h = h.max(hh * fac);
                }
                if h < 1e-300 {
                    return Err(Error::Numerical(format!("step underflow at x = {x:e}")));
                }
            }
            reached = idx + 1;
            if observe(idx, x, &y) == Control::Stop {
                break;
            }
        }
        Ok(reached)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let mut out = vec![];
        Dopri5::default()
            .solve(|_, y, dy| dy[0] = -y[0], 0.0, &[1.0], &[0.5, 1.0, 3.0], |_, _, y| {
                out.push(y[0]);
                Control::Continue
            })
            .unwrap();
        assert!((out[2] - (-3.0f64).exp()).abs() < 1e-11);
        assert!((out[0] - (-0.5f64).exp()).abs() < 1e-11);
    }

    #[test]
    fn harmonic_oscillator_energy() {
        let mut last = vec![];
        Dopri5::with_tol(1e-11, 1e-13)
            .solve(
                |_, y, dy| {
                    dy[0] = y[1];
                    dy[1] = -y[0];
                },
                0.0,
                &[1.0, 0.0],
                &[20.0],
                |_, _, y| {
                    last = y.to_vec();
                    Control::Continue
                },
            )
            .unwrap();
        assert!((last[0] - 20f64.cos()).abs() < 1e-8);
    }
}
