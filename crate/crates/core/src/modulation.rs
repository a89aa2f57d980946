//! Finite-dimensional modulation dynamics for `b = (b_1, .., b_L)` and `lambda`.
//!
//! `(b_k)_s = b_{k+1} - (2k - gamma) b_1 b_k` with `b_{L+1} = 0`, and
//! `lambda_s / lambda = -b_1`, `dt = lambda^2 ds`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::ode::{Control, Dopri5};
use crate::params::ModelParams;

#[derive(Debug, Clone, Serialize)]
pub struct ModulationSystem {
    pub params: ModelParams,
    /// `c_1 .. c_L`; zero beyond `l`.
    pub c: Vec<f64>,
    /// Linearization `A_l` around the explicit solution.
    #[serde(skip)]
    pub a: DMatrix<f64>,
    /// Predicted spectrum, `-1` first then `k gamma / (2l - gamma)`, `k = 2..l`.
    pub d_l: Vec<f64>,
    /// Computed eigenvalues, ordered to match `d_l`.
    pub eigenvalues: Vec<f64>,
    /// Right eigenvectors as columns (the inverse of `P_l`), unit norm,
    /// first non-negligible component positive.
    #[serde(skip)]
    pub right: DMatrix<f64>,
    /// `P_l`, so that `V = P_l U`.
    #[serde(skip)]
    pub p: DMatrix<f64>,
    /// `max_j |A v_j - mu_j v_j| / |v_j|`.
    pub eigen_residual: f64,
}

/// `c_1 = l/(2l - gamma)`, `c_{k+1} = -gamma (l-k)/(2l - gamma) c_k`, zero past `l`.
pub fn explicit_coefficients(gamma: f64, l: usize, depth: usize) -> Vec<f64> {
    let lf = l as f64;
    let den = 2.0 * lf - gamma;
    let mut c = vec![0.0; depth];
    c[0] = lf / den;
    for k in 1..l {
        c[k] = -gamma * (lf - k as f64) / den * c[k - 1];
    }
    c
}

/// The matrix `A_l`.
pub fn linearization_matrix(gamma: f64, c: &[f64], l: usize) -> DMatrix<f64> {
    let lf = l as f64;
    let den = 2.0 * lf - gamma;
    let mut a = DMatrix::zeros(l, l);
    for i in 1..=l {
        a[(i - 1, i - 1)] = gamma * (lf - i as f64) / den;
        if i < l {
            a[(i - 1, i)] = 1.0;
        }
        if i >= 2 {
            a[(i - 1, 0)] = -(2.0 * i as f64 - gamma) * c[i - 1];
        }
    }
    a[(0, 0)] -= (2.0 - gamma) * c[0];
    a
}

pub fn predicted_spectrum(gamma: f64, l: usize) -> Vec<f64> {
    let den = 2.0 * l as f64 - gamma;
    std::iter::once(-1.0).chain((2..=l).map(|k| k as f64 * gamma / den)).collect()
}

fn null_vector(a: &DMatrix<f64>, mu: f64) -> DVector<f64> {
    let n = a.nrows();
    let shifted = a - DMatrix::identity(n, n) * mu;
    let svd = shifted.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let j = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .map(|(j, _)| j)
        .unwrap();
    let mut v: DVector<f64> = vt.row(j).transpose();
    v /= v.norm();
    let lead = v.iter().copied().find(|x| x.abs() > 1e-12).unwrap_or(1.0);
    if lead < 0.0 {
        v = -v;
    }
    v
}

pub fn build_system(params: &ModelParams) -> Result<ModulationSystem> {
    let l = params.l as usize;
    let depth = params.depth as usize;
    let gamma = params.gamma;
    let c = explicit_coefficients(gamma, l, depth);
    let a = linearization_matrix(gamma, &c, l);
    let d_l = predicted_spectrum(gamma, l);

    let ev = a.clone().complex_eigenvalues();
    let mut computed: Vec<f64> = Vec::with_capacity(l);
    for z in ev.iter() {
        if z.im.abs() > 1e-8 * (1.0 + z.re.abs()) {
            return Err(Error::Numerical(format!("A_l has a complex eigenvalue {z}")));
        }
        computed.push(z.re);
    }
    // match to the predicted listing
    let mut eigenvalues = vec![f64::NAN; l];
    let mut used = vec![false; l];
    for (slot, target) in d_l.iter().enumerate() {
        let j = (0..l)
            .filter(|&j| !used[j])
            .min_by(|&x, &y| (computed[x] - target).abs().total_cmp(&(computed[y] - target).abs()))
            .unwrap();
        used[j] = true;
        eigenvalues[slot] = computed[j];
    }

    let mut right = DMatrix::zeros(l, l);
    let mut eigen_residual = 0.0_f64;
    for (j, &mu) in eigenvalues.iter().enumerate() {
        let v = null_vector(&a, mu);
        eigen_residual = eigen_residual.max((&a * &v - &v * mu).norm());
        right.set_column(j, &v);
    }
    let p = right
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("eigenvector matrix of A_l is singular".into()))?;
    Ok(ModulationSystem { params: *params, c, a, d_l, eigenvalues, right, p, eigen_residual })
}

impl ModulationSystem {
    pub fn l(&self) -> usize {
        self.params.l as usize
    }

    pub fn depth(&self) -> usize {
        self.params.depth as usize
    }

    /// `max_j |mu_j - D_j|`.
    pub fn spectrum_error(&self) -> f64 {
        self.eigenvalues.iter().zip(&self.d_l).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// `b^e(s) = c_k s^{-k}`.
    pub fn explicit(&self, s: f64) -> Vec<f64> {
        self.c.iter().enumerate().map(|(k, c)| c * s.powi(-(k as i32 + 1))).collect()
    }

    /// `(U, V)` with `U_k = s^k (b_k - b_k^e)` and `V = P_l U`, `k = 1..l`.
    pub fn linearized_coordinates(&self, b: &[f64], s: f64) -> (Vec<f64>, Vec<f64>) {
        let l = self.l();
        let u: Vec<f64> = (0..l)
            .map(|k| s.powi(k as i32 + 1) * (b[k] - self.c[k] * s.powi(-(k as i32 + 1))))
            .collect();
        let v = &self.p * DVector::from_column_slice(&u);
        (u, v.iter().copied().collect())
    }

    /// Right-hand side of the `b` system.
    pub fn rhs(&self, b: &[f64], out: &mut [f64]) {
        let gamma = self.params.gamma;
        let n = b.len();
        for k in 0..n {
            let next = if k + 1 < n { b[k + 1] } else { 0.0 };
            out[k] = next - (2.0 * (k + 1) as f64 - gamma) * b[0] * b[k];
        }
    }
}

/// Whether `b` lies in the cone `0 < b_1`, `|b_k| <= 10 b_1^k`.
pub fn in_cone(b: &[f64]) -> bool {
    b[0] > 0.0 && b.iter().enumerate().skip(1).all(|(k, v)| v.abs() <= 10.0 * b[0].powi(k as i32 + 1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub s: f64,
    pub t: f64,
    pub lambda: f64,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub rtol: f64,
    pub atol: f64,
    /// `s` at which `b` first left the cone, if it did.
    pub cone_exit: Option<f64>,
    /// Set when the run stopped before `s1` because `lambda` underflowed.
    pub underflow: Option<f64>,
}

impl Trajectory {
    pub fn s(&self) -> Vec<f64> {
        self.samples.iter().map(|x| x.s).collect()
    }

    pub fn t(&self) -> Vec<f64> {
        self.samples.iter().map(|x| x.t).collect()
    }

    pub fn lambda(&self) -> Vec<f64> {
        self.samples.iter().map(|x| x.lambda).collect()
    }

    /// `s` recomputed from the `t` column by trapezoidal `ds = dt / lambda^2`.
    pub fn s_from_t(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.samples.len());
        let mut s = self.samples[0].s;
        out.push(s);
        for w in self.samples.windows(2) {
            let dt = w[1].t - w[0].t;
            s += 0.5 * dt * (w[0].lambda.powi(-2) + w[1].lambda.powi(-2));
            out.push(s);
        }
        out
    }
}

/// `n_out` log-spaced output times in `[s0, s1]`.
pub fn log_times(s0: f64, s1: f64, n_out: usize) -> Vec<f64> {
    let (a, b) = (s0.ln(), s1.ln());
    let mut out: Vec<f64> = (0..n_out).map(|i| (a + (b - a) * i as f64 / (n_out - 1) as f64).exp()).collect();
    out[0] = s0;
    out[n_out - 1] = s1;
    out
}

/// Integrates the full nonlinear system, with `t(s0) = 0`.
pub fn integrate(
    sys: &ModulationSystem,
    b0: &[f64],
    lambda0: f64,
    s0: f64,
    s1: f64,
    n_out: usize,
) -> Result<Trajectory> {
    let depth = sys.depth();
    if b0.len() != depth {
        return Err(Error::InvalidParams(format!("b0 has {} entries, expected L={depth}", b0.len())));
    }
    if !(s0 >= 1.0 && s1 > s0) {
        return Err(Error::InvalidParams(format!("need 1 <= s0 < s1 (got {s0}, {s1})")));
    }
    if !(lambda0 > 0.0) {
        return Err(Error::InvalidParams("lambda0 must be positive".into()));
    }
    if !in_cone(b0) {
        return Err(Error::ConeViolation(format!("initial b = {b0:?}")));
    }
    if n_out < 2 {
        return Err(Error::InvalidParams("need at least two output times".into()));
    }
    let solver = Dopri5::with_tol(1e-13, 1e-300);
    // state: b_1..b_L, ln lambda, t
    let mut y0 = b0.to_vec();
    y0.push(lambda0.ln());
    y0.push(0.0);
    let outputs = log_times(s0, s1, n_out);
    let mut samples = Vec::with_capacity(n_out);
    let mut cone_exit = None;
    let mut underflow = None;
    solver.solve(
        |_, y, dy| {
            sys.rhs(&y[..depth], &mut dy[..depth]);
            dy[depth] = -y[0];
            dy[depth + 1] = (2.0 * y[depth]).exp();
        },
        s0,
        &y0,
        &outputs,
        |_, s, y| {
            let b = y[..depth].to_vec();
            if cone_exit.is_none() && !in_cone(&b) {
                cone_exit = Some(s);
            }
            let lambda = y[depth].exp();
            if lambda < f64::MIN_POSITIVE {
                underflow = Some(s);
                return Control::Stop;
            }
            samples.push(Sample { s, t: y[depth + 1], lambda, b });
            Control::Continue
        },
    )?;
    Ok(Trajectory { samples, rtol: solver.rtol, atol: solver.atol, cone_exit, underflow })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    /// Estimated blow-up time.
    pub t_blowup: f64,
    pub exponent: f64,
    /// Prefactor `c` in `lambda ~ c (T - t)^exponent`.
    pub prefactor: f64,
    pub stderr: f64,
    /// `lambda_first / lambda_last` over the fit window.
    pub decay: f64,
    pub points: usize,
}

const RESOLVED_FRACTION: f64 = 1e-7;

/// Fits `lambda ~ c (T - t)^p`: `T` from extrapolating `lambda^power` linearly in
/// `t`, then `p` from log-log least squares. The window is the second half of
/// the run in `log lambda`, cut where `lambda^power` falls below `1e-7` of its
/// initial value.
pub fn fit_rate(t: &[f64], lambda: &[f64], power: f64) -> Result<RateFit> {
    if t.len() != lambda.len() || t.len() < 10 {
        return Err(Error::RateFit("need at least 10 samples".into()));
    }
    if lambda.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::RateFit("lambda is not monotonically decreasing".into()));
    }
    // T - t scales like lambda^power; once it drops below ~1e-7 of its initial
    // value, t no longer resolves it in double precision
    let floor = lambda[0] * RESOLVED_FRACTION.powf(1.0 / power);
    let usable = lambda.iter().take_while(|&&l| l >= floor).count();
    let first = lambda[0];
    let last = lambda[usable - 1];
    if first / last < 1e2 {
        return Err(Error::RateFit(format!("lambda dropped only by {:.3e}", first / last)));
    }
    let mid = (first * last).sqrt();
    let idx: Vec<usize> = (0..usable).filter(|&i| lambda[i] <= mid).collect();
    if idx.len() < 5 {
        return Err(Error::RateFit("too few samples in the fit window".into()));
    }
    let tw: Vec<f64> = idx.iter().map(|&i| t[i]).collect();
    let lw: Vec<f64> = idx.iter().map(|&i| lambda[i]).collect();
    let lin = linear_fit(&tw, &lw.iter().map(|l| l.powf(power)).collect::<Vec<_>>());
    if !(lin.slope < 0.0) {
        return Err(Error::RateFit("lambda^power does not decrease linearly".into()));
    }
    let t_blowup = -lin.intercept / lin.slope;
    let tmax = tw.iter().copied().fold(f64::MIN, f64::max);
    if !(t_blowup > tmax) {
        return Err(Error::RateFit(format!("extrapolated T = {t_blowup:e} precedes the data")));
    }
    let x: Vec<f64> = tw.iter().map(|t| (t_blowup - t).ln()).collect();
    let y: Vec<f64> = lw.iter().map(|l| l.ln()).collect();
    let f = linear_fit(&x, &y);
    Ok(RateFit {
        t_blowup,
        exponent: f.slope,
        prefactor: f.intercept.exp(),
        stderr: f.stderr,
        decay: lw[0] / lw[lw.len() - 1],
        points: idx.len(),
    })
}

/// Rate fit of a modulation trajectory with the linearizing power `gamma / l`.
pub fn fit_blowup_rate(traj: &Trajectory, params: &ModelParams) -> Result<RateFit> {
    fit_rate(&traj.t(), &traj.lambda(), params.gamma / params.l as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l1_matrix() {
        let p = ModelParams::derive(11, 1, 4, 0.01, 20.0).unwrap();
        let sys = build_system(&p).unwrap();
        assert_eq!(sys.a.shape(), (1, 1));
        assert!((sys.a[(0, 0)] + 1.0).abs() < 1e-15);
        assert_eq!(sys.c[1], 0.0);
        assert_eq!(sys.d_l, vec![-1.0]);
    }

    #[test]
    fn synthetic_power_law() {
        let t: Vec<f64> = (0..400).map(|i| 1.0 - 10f64.powf(-(i as f64) / 80.0)).collect();
        let lambda: Vec<f64> = t.iter().map(|t| 2.0 * (1.0 - t).powf(0.7)).collect();
        let f = fit_rate(&t, &lambda, 1.0 / 0.7).unwrap();
        assert!((f.exponent - 0.7).abs() < 1e-6, "{f:?}");
        assert!((f.t_blowup - 1.0).abs() < 1e-9);
        assert!((f.prefactor - 2.0).abs() < 1e-5);
    }

    #[test]
    fn rate_fit_errors() {
        let t: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let flat: Vec<f64> = t.iter().map(|t| 1.0 - 0.01 * t).collect();
        assert!(matches!(fit_rate(&t, &flat, 1.0), Err(Error::RateFit(_))));
        let mut bumpy: Vec<f64> = t.iter().map(|t| (-t).exp()).collect();
        bumpy[5] = 1.0;
        assert!(matches!(fit_rate(&t, &bumpy, 1.0), Err(Error::RateFit(_))));
    }
}
