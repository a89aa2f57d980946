//! Method-of-lines evolution of
//! `u_t = u_rr + (d-3)/r u_r - (d-2) f(u) / r^2`
//! in the physical frame and in the renormalized frame
//! `w(s, y) = u(t, lambda y)`, `w_s = Delta w - (d-2) f(w)/y^2 + (lambda_s/lambda) Lambda w`.
//!
//! Time stepping is linearly implicit Euler (Jacobian frozen at the start of
//! the step) with step doubling; the accepted value is the Richardson
//! combination `2 w_{h/2} - w_h`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::banded::BandMatrix;
use crate::cutoff::Cutoff;
use crate::error::{Error, Result};
use crate::grid::{weighted_inner, weighted_integral_upto, weighted_norm, GridFunction, RadialGrid};
use crate::linops::OperatorContext;
use crate::params::nonlinearity as nl;
use crate::profiles::ApproximateProfile;
use crate::spectral::PhiM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    Physical,
    Renormalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
    pub dt_init: f64,
    pub dt_min: f64,
    pub dt_max: f64,
    pub max_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { rtol: 1e-7, atol: 1e-10, dt_init: 1e-4, dt_min: 1e-14, dt_max: 1e3, max_steps: 200_000 }
    }
}

/// `E(u) = int (u_r^2 / 2 + (d-2) F(u) / r^2) r^{d-3} dr` over the grid.
pub fn energy(u: &GridFunction, d: u32) -> f64 {
    let d = d as f64;
    let du = u.derivative();
    let dens: Vec<f64> = u
        .y()
        .iter()
        .zip(u.values())
        .zip(du.values())
        .map(|((r, v), dv)| 0.5 * dv * dv + (d - 2.0) * nl::potential(*v) / (r * r))
        .collect();
    u.grid().integrate_weighted(&dens)
}

/// `E(u) - E(v)` on a common grid, with the densities differenced pointwise
/// so the far-field contribution `F(1) r^{d-5}` cancels exactly.
pub fn energy_difference(u: &GridFunction, v: &GridFunction, d: u32) -> f64 {
    let d = d as f64;
    let (du, dv) = (u.derivative(), v.derivative());
    let dens: Vec<f64> = (0..u.len())
        .map(|i| {
            let r = u.y()[i];
            let (a, b) = (1.0 - u.values()[i], 1.0 - v.values()[i]);
            // F = (1 - (1-u)^2)^2 / 4
            let df = 0.25 * (b * b - a * a) * (2.0 - a * a - b * b);
            0.5 * (du.values()[i] - dv.values()[i]) * (du.values()[i] + dv.values()[i]) + (d - 2.0) * df / (r * r)
        })
        .collect();
    u.grid().integrate_weighted(&dens)
}

#[derive(Debug, Clone, Copy)]
enum FarBoundary {
    Neumann,
    Dirichlet(f64),
}

/// Semi-discrete right-hand side and its linearly implicit step.
struct Flow {
    grid: Arc<RadialGrid>,
    d: f64,
    far: FarBoundary,
}

impl Flow {
    /// `Delta w - (d-2) f(w)/y^2 + mu y w'` at the interior nodes; zero on the boundary rows.
    fn rhs(&self, w: &[f64], mu: f64) -> Vec<f64> {
        let y = self.grid.nodes();
        let d1 = self.grid.derivative(w);
        let d2 = self.grid.second_derivative(w);
        let n = w.len();
        let mut out = vec![0.0; n];
        for i in 1..n - 1 {
            out[i] = d2[i] + ((self.d - 3.0) / y[i] + mu * y[i]) * d1[i] - (self.d - 2.0) * nl::f(w[i]) / (y[i] * y[i]);
        }
        out
    }

    fn step(&self, w: &[f64], mu: f64, dt: f64) -> Result<Vec<f64>> {
        let y = self.grid.nodes();
        let n = w.len();
        let mut m = BandMatrix::zeros(n, 4, 4);
        let mut r = self.rhs(w, mu);
        for i in 1..n - 1 {
            let (start, d1, d2) = self.grid.stencil(i);
            let c1 = (self.d - 3.0) / y[i] + mu * y[i];
            for j in 0..5 {
                m.add(i, start + j, -dt * (d2[j] + c1 * d1[j]));
            }
            m.add(i, i, 1.0 + dt * (self.d - 2.0) * nl::df(w[i]) / (y[i] * y[i]));
            r[i] *= dt;
        }
        // origin: w ~ c y^2
        let rho = (y[0] / y[1]).powi(2);
        m.add(0, 0, 1.0);
        m.add(0, 1, -rho);
        r[0] = rho * w[1] - w[0];
        match self.far {
            FarBoundary::Dirichlet(v) => {
                m.add(n - 1, n - 1, 1.0);
                r[n - 1] = v - w[n - 1];
            }
            FarBoundary::Neumann => {
                let (start, d1, _) = self.grid.stencil(n - 1);
                let mut acc = 0.0;
                for j in 0..5 {
                    m.add(n - 1, start + j, d1[j]);
                    acc += d1[j] * w[start + j];
                }
                r[n - 1] = -acc;
            }
        }
        let delta = m.factor()?.solve(&r);
        let out: Vec<f64> = w.iter().zip(&delta).map(|(a, b)| a + b).collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite state after a step".into()));
        }
        Ok(out)
    }

    /// One step-doubled attempt: `(Richardson value, scaled error)`.
    fn attempt(&self, w: &[f64], mu: f64, dt: f64, opts: &SolverOptions) -> Result<(Vec<f64>, f64)> {
        let full = self.step(w, mu, dt)?;
        let half = self.step(&self.step(w, mu, 0.5 * dt)?, mu, 0.5 * dt)?;
        let mut err = 0.0_f64;
        let out: Vec<f64> = full
            .iter()
            .zip(&half)
            .map(|(a, b)| {
                err = err.max((a - b).abs() / (opts.atol + opts.rtol * b.abs()));
                2.0 * b - a
            })
            .collect();
        Ok((out, err))
    }
}

/// Adaptive controller shared by both frames.
struct Controller {
    dt: f64,
    opts: SolverOptions,
}

impl Controller {
    /// Advances by at most `limit`; returns `(new state, dt taken)`.
    fn advance(&mut self, flow: &Flow, w: &[f64], mu: f64, limit: f64) -> Result<(Vec<f64>, f64)> {
        loop {
            let dt = self.dt.min(limit).min(self.opts.dt_max);
            if dt < self.opts.dt_min {
                return Err(Error::Numerical(format!("step size underflow (dt = {dt:e})")));
            }
            let (out, err) = match flow.attempt(w, mu, dt, &self.opts) {
                Ok(x) => x,
                Err(_) => (Vec::new(), f64::INFINITY),
            };
            // second-order error estimate of the first-order pair
            let fac = if err > 0.0 { 0.9 * err.powf(-0.5) } else { 4.0 };
            if err <= 1.0 {
                self.dt = dt * fac.clamp(0.2, 4.0);
                if dt < limit && self.dt < dt {
                    self.dt = self.dt.max(0.2 * dt);
                }
                return Ok((out, dt));
            }
            self.dt = dt * fac.clamp(0.1, 0.9);
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhysicalSample {
    pub t: f64,
    pub energy: f64,
    /// `E(u(t)) - E(u0)`, free of the far-field constant.
    pub energy_change: f64,
    pub sup_du: f64,
    pub dt: f64,
}

#[derive(Debug, Clone)]
pub struct PhysicalRun {
    pub samples: Vec<PhysicalSample>,
    pub snapshots: Vec<(f64, GridFunction)>,
    pub state: GridFunction,
    /// Why the run stopped before `t_end`, if it did.
    pub terminated: Option<String>,
}

impl PhysicalRun {
    /// Largest increase of `E` between consecutive accepted steps, relative to
    /// the total energy released over the run.
    pub fn max_energy_increase(&self) -> f64 {
        let released = self.samples.iter().map(|x| -x.energy_change).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let step = self
            .samples
            .windows(2)
            .map(|w| w[1].energy_change - w[0].energy_change)
            .fold(f64::MIN, f64::max);
        step / released
    }
}

fn physical_sample(u: &GridFunction, u0: &GridFunction, d: u32, t: f64, dt: f64) -> PhysicalSample {
    PhysicalSample {
        t,
        energy: energy(u, d),
        energy_change: energy_difference(u, u0, d),
        sup_du: u.derivative().max_abs(),
        dt,
    }
}

/// Evolves `u0` on its grid to `t_end`, with snapshots at the requested times.
/// Step-size underflow ends the run with the last resolved state.
pub fn evolve_physical(
    u0: &GridFunction,
    d: u32,
    t_end: f64,
    snapshot_times: &[f64],
    opts: &SolverOptions,
) -> Result<PhysicalRun> {
    if !u0.is_finite() {
        return Err(Error::InvalidParams("initial data is not finite".into()));
    }
    if u0.values().iter().any(|v| *v < -1e-8 || *v > 1.0 + 1e-2) {
        return Err(Error::InvalidParams("initial data outside [0, 1 + eps]".into()));
    }
    let grid = u0.grid().clone();
    let flow = Flow { grid: grid.clone(), d: d as f64, far: FarBoundary::Neumann };
    let mut ctl = Controller { dt: opts.dt_init, opts: *opts };
    let mut w = u0.values().to_vec();
    let mut t = 0.0;
    let mut samples = vec![physical_sample(u0, u0, d, 0.0, 0.0)];
    let mut snapshots = Vec::new();
    let mut marks: Vec<f64> = snapshot_times.iter().copied().filter(|x| *x > 0.0 && *x <= t_end).collect();
    marks.sort_by(f64::total_cmp);
    let mut next = 0;
    let mut terminated = None;
    for _ in 0..opts.max_steps {
        if t >= t_end * (1.0 - 1e-14) {
            break;
        }
        let target = if next < marks.len() { marks[next] } else { t_end };
        let (out, dt) = match ctl.advance(&flow, &w, 0.0, target - t) {
            Ok(x) => x,
            Err(e) => {
                terminated = Some(e.to_string());
                break;
            }
        };
        w = out;
        t += dt;
        if (t - target).abs() <= 1e-12 * target.max(1.0) {
            t = target;
        }
        let u = GridFunction::new(grid.clone(), w.clone());
        samples.push(physical_sample(&u, u0, d, t, dt));
        if next < marks.len() && t >= marks[next] {
            snapshots.push((t, u));
            next += 1;
        }
    }
    if terminated.is_none() && t < t_end * (1.0 - 1e-14) {
        terminated = Some(format!("step budget exhausted at t = {t:e}"));
    }
    Ok(PhysicalRun { samples, snapshots, state: GridFunction::new(grid, w), terminated })
}

/// Shared data for extraction and renormalized evolution.
pub struct Decomposer<'a> {
    pub ctx: &'a OperatorContext,
    pub phi: &'a PhiM,
    pub profile: &'a ApproximateProfile,
    /// Number of `b_k` solved for; also `L^i Phi_M` constraints `i = 0..=l_ext`.
    pub l_ext: usize,
    pub eta: f64,
    norms: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub lambda: f64,
    pub b: Vec<f64>,
    pub q: GridFunction,
    /// `<q, L^i Phi_M> / (|q|_loc |L^i Phi_M|)`, see [`Decomposer::relative_residuals`].
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl<'a> Decomposer<'a> {
    pub fn new(ctx: &'a OperatorContext, phi: &'a PhiM, profile: &'a ApproximateProfile, l_ext: usize) -> Result<Self> {
        if l_ext == 0 || l_ext > profile.depth || l_ext + 1 > phi.l_phi.len() {
            return Err(Error::InvalidParams(format!("L_extract = {l_ext} out of range")));
        }
        let norms = phi.l_phi[..=l_ext].iter().map(weighted_norm).collect();
        Ok(Self { ctx, phi, profile, l_ext, eta: ctx.params.eta, norms })
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        self.ctx.grid()
    }

    /// `Q + chi_{B_1} Theta_b`, extended to `b_1` of either sign through `|b_1|`;
    /// below the smallest `b_1` whose cutoff fits in half the domain the radius is frozen.
    pub fn qtilde(&self, b: &[f64]) -> GridFunction {
        let q = &self.ctx.gs.q;
        if b.iter().all(|v| *v == 0.0) {
            return q.clone();
        }
        let (radius, _) = self.radius(b[0]);
        let chi = Cutoff::new(radius);
        let theta = self.profile.theta(b);
        q.zip_map(&theta, |y, qv, th| qv + chi.value(y) * th)
    }

    /// `(B_1, dB_1/db_1)` for the decomposer's `eta`, with the floor described above.
    fn radius(&self, b1: f64) -> (f64, f64) {
        let p = 0.5 * (1.0 + self.eta);
        let floor = (0.25 * self.grid().y_max()).powf(-1.0 / p);
        if b1.abs() <= floor {
            return (floor.powf(-p), 0.0);
        }
        let r = b1.abs().powf(-p);
        (r, -p * r / b1)
    }

    fn full_b(&self, head: &[f64], tail: &[f64]) -> Vec<f64> {
        let mut b = tail.to_vec();
        b[..self.l_ext].copy_from_slice(head);
        b
    }

    /// `<g, L^i Phi_M> / |L^i Phi_M|` for `i = 0..=l_ext`.
    fn project(&self, g: &GridFunction) -> Vec<f64> {
        (0..=self.l_ext)
            .map(|i| weighted_inner(g, &self.phi.l_phi[i]).unwrap() / self.norms[i])
            .collect()
    }

    /// Weighted norm over the support of `Phi_M`, `y <= 2M`.
    pub fn local_norm(&self, g: &GridFunction) -> f64 {
        weighted_integral_upto(&g.map(|_, v| v * v), 2.0 * self.phi.m_cut).max(0.0).sqrt()
    }

    /// `|<q, L^i Phi_M>| / (|q|_loc |L^i Phi_M|)`, with the norm of `q` taken on
    /// the support of `Phi_M` (the quotient is then at most one).
    pub fn relative_residuals(&self, q: &GridFunction) -> Vec<f64> {
        let nq = self.local_norm(q);
        self.project(q).iter().map(|v| if nq > 0.0 { v.abs() / nq } else { 0.0 }).collect()
    }

    /// `d Q~_b / d b_k` (0-based `k`).
    fn qtilde_partial(&self, b: &[f64], k: usize) -> GridFunction {
        let (radius, dr) = self.radius(b[0]);
        let chi = Cutoff::new(radius);
        let dtheta = self.profile.theta_partial(b, k + 1);
        let mut out = dtheta.map(|y, v| chi.value(y) * v);
        if k == 0 && dr != 0.0 {
            // d chi(y/B)/dB = -y chi'(y) / B
            let theta = self.profile.theta(b);
            out = out.zip_map(&theta, |y, v, th| v - y * chi.d1(y) / radius * dr * th);
        }
        out
    }

    /// Newton solve of `<w(kappa .) - Q~_b, L^i Phi_M> = 0` for `(ln kappa, b_1..b_{l_ext})`,
    /// where `w_at(kappa)` samples the field at `kappa y`. Other `b_k` stay at `b_rest`.
    fn newton(
        &self,
        w_at: &dyn Fn(f64) -> GridFunction,
        b_guess: &[f64],
        tol: f64,
        max_iter: usize,
    ) -> (f64, Vec<f64>, GridFunction, Vec<f64>, bool, usize) {
        let m = self.l_ext + 1;
        let mut lk = 0.0_f64;
        let mut head = b_guess[..self.l_ext].to_vec();
        let eval = |lk: f64, head: &[f64]| {
            let w = w_at(lk.exp());
            let b = self.full_b(head, b_guess);
            let q = &w - &self.qtilde(&b);
            (w, b, q)
        };
        let (mut w, mut b, mut q) = eval(lk, &head);
        let mut r = self.project(&q);
        let max_abs = |r: &[f64]| r.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        // converged relative to |q|, or at round-off level of |w|
        let done = |r: &[f64], w: &GridFunction, q: &GridFunction| {
            let n = max_abs(r);
            n <= tol * self.local_norm(q) || n <= NEWTON_FLOOR * self.local_norm(w)
        };
        let mut best = max_abs(&r);
        let mut it = 0;
        while !done(&r, &w, &q) && it < max_iter {
            it += 1;
            let mut jac = DMatrix::zeros(m, m);
            let lw = w.lambda();
            for (i, v) in self.project(&lw).iter().enumerate() {
                jac[(i, 0)] = *v;
            }
            for k in 0..self.l_ext {
                let g = self.qtilde_partial(&b, k);
                for (i, v) in self.project(&g).iter().enumerate() {
                    jac[(i, k + 1)] = -v;
                }
            }
            let Some(step) = jac.lu().solve(&DVector::from_column_slice(&r)) else {
                break;
            };
            // box trust region: |d ln kappa| <= 0.2, |d b_1| <= max(|b_1|, 1e-3)
            let mut step = step;
            step[0] = step[0].clamp(-0.2, 0.2);
            let cap = head[0].abs().max(1e-3);
            step[1] = step[1].clamp(-cap, cap);
            let mut damp = 1.0;
            let mut improved = false;
            for _ in 0..20 {
                let lk_new = lk - damp * step[0];
                let head_new: Vec<f64> = head.iter().enumerate().map(|(k, v)| v - damp * step[k + 1]).collect();
                let (w2, b2, q2) = eval(lk_new, &head_new);
                let r2 = self.project(&q2);
                let n2 = max_abs(&r2);
                if n2 < best || done(&r2, &w2, &q2) {
                    (lk, head, w, b, q, r, best) = (lk_new, head_new, w2, b2, q2, r2, n2);
                    improved = true;
                    break;
                }
                damp *= 0.5;
            }
            if !improved {
                break;
            }
        }
        let converged = done(&r, &w, &q) || max_abs(&r) <= NEWTON_ROUNDOFF * self.local_norm(&w);
        (lk.exp(), b, q, r, converged, it)
    }

    /// Decomposes `u` (on the physical grid, which must equal the context grid)
    /// as `u(lambda y) = Q~_b(y) + q(y)`.
    pub fn extract(&self, u: &GridFunction, lambda_guess: f64, b_guess: &[f64]) -> Result<Decomposition> {
        if u.grid().nodes() != self.grid().nodes() {
            return Err(Error::GridMismatch);
        }
        if b_guess.len() != self.profile.depth {
            return Err(Error::InvalidParams("b guess has the wrong length".into()));
        }
        let grid = self.grid().clone();
        let sample = |lambda: f64| resample(u, &grid, lambda);
        let w_at = |kappa: f64| sample(lambda_guess * kappa);
        let (kappa, b, q, _, converged, iterations) = self.newton(&w_at, b_guess, 1e-11, 50);
        let residuals = self.relative_residuals(&q);
        Ok(Decomposition { lambda: lambda_guess * kappa, b, q, residuals, converged, iterations })
    }
}

/// `u(lambda y)` on `grid`, from `u` on its own grid. Past the outer end the last
/// value is held; below the inner end `u ~ c r^2` is used.
pub fn resample(u: &GridFunction, grid: &Arc<RadialGrid>, lambda: f64) -> GridFunction {
    let src = u.grid();
    let (r0, r1) = (src.y_min(), src.y_max());
    let v = u.values();
    let last = *v.last().unwrap();
    GridFunction::from_fn(grid, |y| {
        let r = lambda * y;
        if r >= r1 {
            last
        } else if r <= r0 {
            v[0] * (r / r0).powi(2)
        } else {
            src.interpolate(v, r)
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RenormSample {
    pub s: f64,
    pub t: f64,
    pub lambda: f64,
    /// `lambda_s / lambda` from the closure.
    pub mu: f64,
    pub b: Vec<f64>,
    /// Largest `|<q, L^i Phi_M>| / (|q| |L^i Phi_M|)` after the step.
    pub constraint: f64,
    /// `|q|` on the support of `Phi_M`.
    pub q_norm: f64,
    /// `int |L^m q|^2` for the configured `m`.
    pub e2m: Vec<f64>,
    pub ds: f64,
}

#[derive(Debug, Clone)]
pub struct RenormRun {
    pub samples: Vec<RenormSample>,
    pub snapshots: Vec<(f64, GridFunction, GridFunction)>,
    pub state: GridFunction,
    pub stop_reason: String,
}

impl RenormRun {
    pub fn max_constraint(&self) -> f64 {
        self.samples.iter().map(|x| x.constraint).fold(0.0, f64::max)
    }

    pub fn t(&self) -> Vec<f64> {
        self.samples.iter().map(|x| x.t).collect()
    }

    pub fn lambda(&self) -> Vec<f64> {
        self.samples.iter().map(|x| x.lambda).collect()
    }
}

/// Newton stops once the projections are this small relative to `|w|`.
const NEWTON_FLOOR: f64 = 1e-18;

/// A stalled Newton iterate counts as converged below this level relative to `|w|`.
const NEWTON_ROUNDOFF: f64 = 1e-15;

/// Largest accepted `|ln kappa|` and relative `b_1` change in one re-projection.
const MAX_KAPPA_JUMP: f64 = 0.05;
const MAX_B1_JUMP: f64 = 0.5;

#[derive(Debug, Clone, Serialize)]
pub struct RenormOptions {
    pub solver: SolverOptions,
    /// Stop once `lambda < stop_ratio * lambda(s0)`.
    pub stop_ratio: f64,
    /// Rate at which the closure pulls the constraints back to zero.
    pub relaxation: f64,
    /// Newton re-projection when the drift still exceeds this.
    pub projection_tol: f64,
    pub e2m_orders: Vec<usize>,
    /// Snapshot every this many accepted steps (0: none).
    pub snap_every: usize,
}

impl Default for RenormOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions { dt_init: 1e-2, dt_max: 50.0, ..SolverOptions::default() },
            stop_ratio: 1e-3,
            relaxation: 1.0,
            projection_tol: 1e-9,
            e2m_orders: vec![1, 2],
            snap_every: 0,
        }
    }
}

/// `E_{2m}(q) = int |L^m q|^2` for each `m`.
pub fn sobolev_energies(ctx: &OperatorContext, q: &GridFunction, orders: &[usize]) -> Vec<f64> {
    orders.iter().map(|&m| weighted_norm(&ctx.apply_l_pow(q, m)).powi(2)).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct QDiagnostics {
    /// `(m, E_{2m})`.
    pub energies: Vec<(usize, f64)>,
    /// `(i, j, int |d^i q|^2 / (1 + y^{2j}))`.
    pub lower: Vec<(usize, usize, f64)>,
}

pub fn diagnostics_q(ctx: &OperatorContext, q: &GridFunction, m_set: &[usize]) -> QDiagnostics {
    let energies = m_set.iter().copied().zip(sobolev_energies(ctx, q, m_set)).collect();
    let derivs = [q.clone(), q.derivative(), q.second_derivative()];
    let mut lower = Vec::new();
    for &m in m_set {
        for (i, di) in derivs.iter().enumerate().take((2 * m).min(2) + 1) {
            let j = 2 * m - i;
            let g = di.map(|y, v| v * v / (1.0 + y.powi(2 * j as i32)));
            lower.push((i, j, g.grid().integrate_weighted(g.values())));
        }
    }
    QDiagnostics { energies, lower }
}

impl<'a> Decomposer<'a> {
    /// `(mu, (b_k)_s)` with `d/ds <q, L^i Phi_M> = -relax <q, L^i Phi_M>`.
    fn closure(&self, flow: &Flow, w: &GridFunction, b: &[f64], relax: f64) -> Result<(f64, Vec<f64>)> {
        let m = self.l_ext + 1;
        let f0 = GridFunction::new(self.grid().clone(), flow.rhs(w.values(), 0.0));
        let lw = w.lambda();
        let mut a = DMatrix::zeros(m, m);
        let c = if relax > 0.0 { self.project(&(w - &self.qtilde(b))) } else { vec![0.0; m] };
        let rhs = DVector::from_iterator(
            m,
            self.project(&f0).into_iter().zip(c).map(|(v, ci)| -v - relax * ci),
        );
        for (i, v) in self.project(&lw).iter().enumerate() {
            a[(i, 0)] = *v;
        }
        for k in 0..self.l_ext {
            let g = self.qtilde_partial(b, k);
            for (i, v) in self.project(&g).iter().enumerate() {
                a[(i, k + 1)] = -v;
            }
        }
        let x = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::RankDeficient("closure matrix is singular".into()))?;
        Ok((x[0], x.iter().skip(1).copied().collect()))
    }

    /// Evolves `w0` (on the context grid) from `s0` with `lambda(s0) = lambda0`.
    pub fn evolve_renormalized(
        &self,
        w0: &GridFunction,
        b0: &[f64],
        lambda0: f64,
        s0: f64,
        s_end: f64,
        opts: &RenormOptions,
    ) -> Result<RenormRun> {
        if w0.grid().nodes() != self.grid().nodes() {
            return Err(Error::GridMismatch);
        }
        let grid = self.grid().clone();
        let n = grid.len();
        let flow = Flow {
            grid: grid.clone(),
            d: self.ctx.params.d as f64,
            far: FarBoundary::Dirichlet(w0.values()[n - 1]),
        };
        let mut ctl = Controller { dt: opts.solver.dt_init, opts: opts.solver };
        let mut w = w0.clone();
        let mut b = b0.to_vec();
        let (mut s, mut t, mut lambda) = (s0, 0.0, lambda0);
        let record = |s: f64, t: f64, lambda: f64, mu: f64, b: &[f64], w: &GridFunction, ds: f64| {
            let q = w - &self.qtilde(b);
            let constraint = self.relative_residuals(&q).into_iter().fold(0.0, f64::max);
            RenormSample {
                s,
                t,
                lambda,
                mu,
                b: b.to_vec(),
                constraint,
                q_norm: self.local_norm(&q),
                e2m: sobolev_energies(self.ctx, &q, &opts.e2m_orders),
                ds,
            }
        };
        let (mu0, _) = self.closure(&flow, &w, &b, opts.relaxation)?;
        let mut samples = vec![record(s, t, lambda, mu0, &b, &w, 0.0)];
        let mut snapshots = Vec::new();
        let mut stop_reason = format!("step budget ({}) exhausted", opts.solver.max_steps);
        for step in 1..=opts.solver.max_steps {
            if s >= s_end {
                stop_reason = "reached s_end".into();
                break;
            }
            if lambda < opts.stop_ratio * lambda0 {
                stop_reason = format!("lambda below {} lambda0", opts.stop_ratio);
                break;
            }
            let (mu, bs) = self.closure(&flow, &w, &b, opts.relaxation)?;
            let (out, ds) = match ctl.advance(&flow, w.values(), mu, s_end - s) {
                Ok(x) => x,
                Err(e) => {
                    stop_reason = e.to_string();
                    break;
                }
            };
            w = GridFunction::new(grid.clone(), out);
            for k in 0..self.l_ext {
                b[k] += ds * bs[k];
            }
            t += if (mu * ds).abs() > 1e-12 {
                lambda * lambda * ((2.0 * mu * ds).exp() - 1.0) / (2.0 * mu)
            } else {
                lambda * lambda * ds
            };
            lambda *= (mu * ds).exp();
            s += ds;
            let q = &w - &self.qtilde(&b);
            let drift = self.relative_residuals(&q).into_iter().fold(0.0, f64::max);
            if drift > opts.projection_tol {
                let cur = w.clone();
                let w_at = |kappa: f64| resample(&cur, &grid, kappa);
                let (kappa, bn, _, _, _, _) = self.newton(&w_at, &b, 0.1 * opts.projection_tol, 8);
                // a large correction means Newton found another branch
                if kappa.ln().abs() > MAX_KAPPA_JUMP || (bn[0] - b[0]).abs() > MAX_B1_JUMP * b[0].abs() {
                    stop_reason = format!("re-projection left the branch at s = {s:e} (kappa = {kappa:e})");
                    samples.push(record(s, t, lambda, mu, &b, &w, ds));
                    break;
                }
                w = w_at(kappa);
                lambda *= kappa;
                b = bn;
            }
            if !(b[0] > 0.0) {
                stop_reason = format!("b_1 = {:e} left the cone", b[0]);
                samples.push(record(s, t, lambda, mu, &b, &w, ds));
                break;
            }
            samples.push(record(s, t, lambda, mu, &b, &w, ds));
            if opts.snap_every > 0 && step % opts.snap_every == 0 {
                let q = &w - &self.qtilde(&b);
                snapshots.push((s, w.clone(), q));
            }
        }
        Ok(RenormRun { samples, snapshots, state: w, stop_reason })
    }
}
