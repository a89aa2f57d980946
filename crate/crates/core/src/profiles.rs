//! Approximate blow-up profiles `Q_b = Q + sum b_k T_k + sum S_k(b)`, their
//! localization, and the residual `Psi_b` of the renormalized flow.
//!
//! `b` evolves by the exact modulation law `(b_k)_s = b_{k+1} - (2k-gamma) b_1 b_k`
//! with `lambda_s / lambda = -b_1`, so the modulation term vanishes and the
//! residual is a function of `b` alone.

use std::sync::Arc;

use serde::Serialize;

use crate::bpoly::{BPolynomial, Monomial};
use crate::cutoff::Cutoff;
use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::grid::{weighted_integral_upto, GridFunction, RadialGrid};
use crate::linops::{OperatorContext, ProfileSet};
use crate::params::{nonlinearity as nl, ModelParams};

/// `|b_k| <= CONE * b_1^k` for `k >= 2`.
pub const CONE: f64 = 10.0;

/// `f^{(j)}(Q) / j!` for `j = 0..=j_max`; zero for `j >= 4`.
pub fn taylor_weights(ctx: &OperatorContext, j_max: usize) -> Vec<GridFunction> {
    let q = &ctx.gs.q;
    (0..=j_max)
        .map(|j| match j {
            0 => q.map(|_, u| nl::f(u)),
            1 => q.map(|_, u| nl::df(u)),
            2 => q.map(|_, u| nl::d2f(u) / 2.0),
            3 => q.map(|_, u| nl::d3f(u) / 6.0),
            _ => GridFunction::zeros(q.grid()),
        })
        .collect()
}

/// `(b_k)_s` under the exact modulation law, `b_{L+1} = 0`.
pub fn modulation_velocity(gamma: f64, b: &[f64]) -> Vec<f64> {
    (0..b.len())
        .map(|i| {
            let k = i as f64 + 1.0;
            let next = b.get(i + 1).copied().unwrap_or(0.0);
            next - (2.0 * k - gamma) * b[0] * b[i]
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileSlopeRow {
    pub k: usize,
    pub monomial: Monomial,
    pub origin: f64,
    pub origin_expected: f64,
    pub tail: f64,
    pub tail_expected: f64,
}

impl ProfileSlopeRow {
    pub fn max_relative_error(&self) -> f64 {
        let o = (self.origin - self.origin_expected).abs() / self.origin_expected.abs();
        let t = (self.tail - self.tail_expected).abs() / self.tail_expected.abs();
        o.max(t)
    }
}

#[derive(Debug, Clone)]
pub struct ApproximateProfile {
    pub params: ModelParams,
    pub depth: usize,
    /// `T_1 .. T_L`.
    pub t: Vec<GridFunction>,
    /// `F_2 .. F_{L+2}`.
    pub f: Vec<BPolynomial>,
    /// `S_2 .. S_{L+2}`.
    pub s: Vec<BPolynomial>,
    /// `ds[k-2][m-1] = dS_k / db_m`.
    pub ds: Vec<Vec<BPolynomial>>,
    /// `E_{L+2} + (d-2) R_1 / y^2`: the residual of `Q_b`.
    pub residual: BPolynomial,
    /// `(d-2) R_1 / y^2`: Taylor terms of degree above `L+2`.
    pub dropped: BPolynomial,
    /// Round-trip residual of every inversion, `(k, monomial, residual)`.
    pub roundtrip: Vec<(usize, Monomial, f64)>,
}

fn inv_y2(grid: &Arc<RadialGrid>, c: f64) -> GridFunction {
    GridFunction::from_fn(grid, |y| c / (y * y))
}

/// `D_k = Lambda T_k - (2k - gamma) T_k` for `k = 1..=depth`.
///
/// Differencing `T_k` loses the answer to cancellation in the far field, where
/// `D_k` is `y^{-2}` smaller than `T_k`. Instead, from `Lambda L = L Lambda - 2L
/// + Lambda Z / y^2`, `L D_k = -D_{k-1} - (Lambda Z / y^2) T_k` with
/// `D_0 = (V + gamma) LambdaQ`, and both sides vanish faster than `LambdaQ` at
/// the origin.
pub fn ladder_defects(ctx: &OperatorContext, ladder: &ProfileSet, depth: usize) -> Result<Vec<GridFunction>> {
    let gamma = ctx.params.gamma;
    let mut prev = ctx.gs.v.zip_map(&ctx.gs.lambda_q, |_, v, l| (v + gamma) * l);
    let mut out = vec![];
    for k in 1..=depth {
        let src = ctx
            .lambda_z
            .zip_map(&ladder.t[k], |y, lz, t| -lz * t / (y * y))
            .zip_map(&prev, |_, a, p| a - p);
        let inv = ctx.invert_l(&src).map_err(|e| Error::LadderInversion {
            level: k,
            monomial: vec![],
            source: Box::new(e),
        })?;
        prev = inv.omega;
        out.push(prev.clone());
    }
    Ok(out)
}

/// `E_k` as a polynomial in `b`; `s_k` is `S_k` (`None` for `k = 1`).
fn e_poly(
    k: usize,
    depth: usize,
    gamma: f64,
    defects: &[GridFunction],
    s_k: Option<&BPolynomial>,
    grid: &Arc<RadialGrid>,
) -> BPolynomial {
    let mut e = BPolynomial::zero(grid, depth);
    if k <= depth {
        e.axpy(1.0, &BPolynomial::linear(depth, k, defects[k - 1].clone()).mul_b(1));
    }
    if let Some(s) = s_k {
        e.axpy(1.0, &s.map_coefficients(|g| g.lambda()).mul_b(1));
        for j in 1..=(k - 1).min(depth) {
            let dsj = s.partial(j);
            e.axpy(-(2.0 * j as f64 - gamma), &dsj.mul_b(1).mul_b(j));
            if j < depth {
                e.axpy(1.0, &dsj.mul_b(j + 1));
            }
        }
    }
    e
}

/// Builds `S_k = -L^{-1} F_k` for `k = 2..=L+2`.
pub fn build_sk(ctx: &OperatorContext, ladder: &ProfileSet, depth: usize) -> Result<ApproximateProfile> {
    if depth == 0 || ladder.depth() < depth {
        return Err(Error::InvalidParams(format!(
            "profile depth {depth} needs a ladder of depth >= {depth} (have {})",
            ladder.depth()
        )));
    }
    let grid = ctx.grid();
    let p = ctx.params;
    let d = p.d as f64;
    let gamma = p.gamma;
    let w = taylor_weights(ctx, 3);
    let coupling = inv_y2(grid, d - 2.0);
    let t: Vec<GridFunction> = ladder.t[1..=depth].to_vec();
    let defects = ladder_defects(ctx, ladder, depth)?;

    let mut theta = BPolynomial::zero(grid, depth);
    for (i, tk) in t.iter().enumerate() {
        theta.axpy(1.0, &BPolynomial::linear(depth, i + 1, tk.clone()));
    }
    let top = depth as u32 + 2;
    let mut s: Vec<BPolynomial> = vec![];
    let mut f = vec![];
    let mut roundtrip = vec![];
    for k in 2..=depth + 2 {
        let mut fk = e_poly(k - 1, depth, gamma, &defects, s.last(), grid);
        let kk = k as u32;
        let sq_low = theta.mul_filtered(&theta, |h| h < kk);
        let mut pk = theta.mul_filtered(&theta, |h| h == kk).mul_function(&w[2]);
        pk.axpy(1.0, &sq_low.mul_filtered(&theta, |h| h == kk).mul_function(&w[3]));
        fk.axpy(1.0, &pk.mul_function(&coupling));
        let sk = fk.try_map_coefficients(|m, g| {
            let inv = ctx.invert_l(g).map_err(|e| Error::LadderInversion {
                level: k,
                monomial: m.clone(),
                source: Box::new(e),
            })?;
            roundtrip.push((k, m.clone(), inv.residual));
            Ok(inv.omega.scale(-1.0))
        })?;
        theta.axpy(1.0, &sk);
        f.push(fk);
        s.push(sk);
    }
    let ds = s.iter().map(|sk| (1..=depth).map(|m| sk.partial(m)).collect()).collect();

    let sq = theta.mul(&theta);
    let mut r1 = sq.filter(|h| h > top).mul_function(&w[2]);
    r1.axpy(1.0, &sq.mul_filtered(&theta, |h| h > top).mul_function(&w[3]));
    let dropped = r1.mul_function(&coupling);
    let mut residual = e_poly(depth + 2, depth, gamma, &defects, s.last(), grid);
    residual.axpy(1.0, &dropped);

    Ok(ApproximateProfile { params: p, depth, t, f, s, ds, residual, dropped, roundtrip })
}

impl ApproximateProfile {
    /// `S_k`, `k = 2..=L+2`.
    pub fn s_k(&self, k: usize) -> &BPolynomial {
        &self.s[k - 2]
    }

    /// `F_k`, `k = 2..=L+2`.
    pub fn f_k(&self, k: usize) -> &BPolynomial {
        &self.f[k - 2]
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        self.t[0].grid()
    }

    /// `dS_k / db_m = 0` for `2 <= k <= m`, read off the monomial maps.
    pub fn triangular(&self) -> bool {
        (2..=self.depth + 2).all(|k| (k..=self.depth).all(|m| !self.s_k(k).depends_on(m)))
    }

    /// Every `S_k` homogeneous of degree `k`.
    pub fn homogeneous(&self) -> bool {
        (2..=self.depth + 2).all(|k| self.s_k(k).degree() == Some(k as u32))
    }

    /// Origin and tail slopes of the coefficients of `S_k`, `k = 2..=k_max`.
    pub fn slope_table(&self, k_max: usize) -> Result<Vec<ProfileSlopeRow>> {
        let mut rows = vec![];
        for k in 2..=k_max.min(self.depth + 2) {
            for (m, g) in self.s_k(k).terms() {
                rows.push(ProfileSlopeRow {
                    k,
                    monomial: m.clone(),
                    origin: g.origin_slope()?,
                    origin_expected: 2.0 * k as f64 + 2.0,
                    tail: g.tail_slope()?,
                    tail_expected: 2.0 * (k as f64 - 1.0) - self.params.gamma,
                });
            }
        }
        Ok(rows)
    }

    /// Rejects `b` outside `0 < b_1 < b*`, `|b_k| <= CONE b_1^k`; `b = 0` is allowed.
    pub fn check_cone(&self, b: &[f64]) -> Result<()> {
        if b.len() != self.depth {
            return Err(Error::ConeViolation(format!("expected {} entries in b, got {}", self.depth, b.len())));
        }
        if b.iter().all(|v| *v == 0.0) {
            return Ok(());
        }
        let b1 = b[0];
        if !(b1 > 0.0 && b1 < self.params.bstar) {
            return Err(Error::ConeViolation(format!("b_1 = {b1:e} outside (0, {})", self.params.bstar)));
        }
        for (i, bk) in b.iter().enumerate().skip(1) {
            let bound = CONE * b1.powi(i as i32 + 1);
            if !(bk.abs() <= bound) {
                return Err(Error::ConeViolation(format!("|b_{}| = {:e} exceeds {bound:e}", i + 1, bk.abs())));
            }
        }
        Ok(())
    }

    /// `Theta_b = sum b_k T_k + sum S_k(b)`.
    pub fn theta(&self, b: &[f64]) -> GridFunction {
        let mut out = GridFunction::zeros(self.grid());
        for (tk, bk) in self.t.iter().zip(b) {
            out.axpy(*bk, tk);
        }
        for sk in &self.s {
            out.axpy(1.0, &sk.evaluate(b));
        }
        out
    }

    /// `d Theta_b / d b_m = T_m + sum_j dS_j/db_m`.
    pub fn theta_partial(&self, b: &[f64], m: usize) -> GridFunction {
        let mut out = self.t[m - 1].clone();
        for dsk in &self.ds {
            out.axpy(1.0, &dsk[m - 1].evaluate(b));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct QbAssembly {
    pub q_b: GridFunction,
    pub theta: GridFunction,
}

pub fn assemble_qb(ctx: &OperatorContext, profile: &ApproximateProfile, b: &[f64]) -> Result<QbAssembly> {
    profile.check_cone(b)?;
    let theta = profile.theta(b);
    let q_b = &ctx.gs.q + &theta;
    Ok(QbAssembly { q_b, theta })
}

/// `B_1` for `b_1`, checked against the domain.
fn localization_radius(grid: &RadialGrid, b1: f64, eta: f64) -> Result<f64> {
    let radius = b1.powf(-0.5 * (1.0 + eta));
    if !(2.0 * radius <= grid.y_max()) {
        return Err(Error::DomainTooSmall(format!(
            "2 B_1 = {:.4e} exceeds y_max = {:.4e} for b_1 = {b1:e}",
            2.0 * radius,
            grid.y_max()
        )));
    }
    Ok(radius)
}

/// Smallest `eta` with `B_1 >= 2 B_0` for every `b_1 <= b1_max`, so that the
/// localization terms of `Psi~_b` vanish on `y <= 2 B_0`.
pub fn separating_eta(b1_max: f64) -> f64 {
    2.0 * 2f64.ln() / (1.0 / b1_max).ln()
}

/// `chi_{B_1}` on the grid, identically one for `b = 0`.
fn localizer(grid: &Arc<RadialGrid>, b: &[f64], eta: f64) -> Result<Option<Cutoff>> {
    if b.iter().all(|v| *v == 0.0) {
        return Ok(None);
    }
    Ok(Some(Cutoff::new(localization_radius(grid, b[0], eta)?)))
}

/// `Q~_b = Q + chi_{B_1} Theta_b`.
pub fn localize_qb(ctx: &OperatorContext, profile: &ApproximateProfile, b: &[f64], eta: f64) -> Result<GridFunction> {
    profile.check_cone(b)?;
    let grid = ctx.grid();
    let theta = profile.theta(b);
    Ok(match localizer(grid, b, eta)? {
        None => &ctx.gs.q + &theta,
        Some(chi) => ctx.gs.q.zip_map(&theta, |y, q, th| q + chi.value(y) * th),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct PsiNorms {
    pub m: usize,
    pub power: u32,
    pub l_power: f64,
    pub weighted: f64,
    pub l_power_b0: f64,
    pub weighted_b0: f64,
    pub l_power_m: f64,
    pub weighted_m: f64,
}

#[derive(Debug, Clone)]
pub struct PsiResidual {
    pub psi: GridFunction,
    /// Residual of the unlocalized `Q_b`.
    pub psi_b: GridFunction,
    pub b0: f64,
    pub b1_radius: f64,
    pub norms: Vec<PsiNorms>,
    /// `|(b_1)_s| / b_1^2` under the modulation law.
    pub b1s_ratio: f64,
}

/// `Psi~_b`: the renormalized-flow operator applied to `Q~_b`.
///
/// Evaluated as `chi Psi_b + b_1 (1-chi) LambdaQ + (d-2)/y^2 [f(Q~_b) - f(Q) -
/// chi (f(Q_b) - f(Q))] + Theta [d_s chi - chi'' - (d-3) chi'/y + b_1 y chi']
/// - 2 chi' Theta'`, with `Psi_b` from its polynomial form. This avoids
/// cancelling the `O(b_1)` terms of the operator node by node.
pub fn localized_residual(
    ctx: &OperatorContext,
    profile: &ApproximateProfile,
    b: &[f64],
    eta: f64,
) -> Result<(GridFunction, GridFunction)> {
    profile.check_cone(b)?;
    let grid = ctx.grid();
    let p = ctx.params;
    let d = p.d as f64;
    let psi_b = profile.residual.evaluate(b);
    let Some(chi) = localizer(grid, b, eta)? else {
        return Ok((psi_b.clone(), psi_b));
    };
    let w = taylor_weights(ctx, 3);
    let theta = profile.theta(b);
    let dtheta = theta.derivative();
    let b1 = b[0];
    let b1s = modulation_velocity(p.gamma, b)[0];
    let vals = (0..grid.len())
        .map(|i| {
            let y = grid.nodes()[i];
            let (c, c1, c2) = (chi.value(y), chi.d1(y), chi.d2(y));
            let th = theta.values()[i];
            let lq = ctx.gs.lambda_q.values()[i];
            let dchi_db1 = c1 * y * (1.0 + eta) / (2.0 * b1);
            let nonlinear = (d - 2.0) / (y * y)
                * (w[2].values()[i] * (c * c - c) * th * th + w[3].values()[i] * (c * c * c - c) * th * th * th);
            let cut = th * (b1s * dchi_db1 - c2 - (d - 3.0) * c1 / y + b1 * y * c1) - 2.0 * c1 * dtheta.values()[i];
            c * psi_b.values()[i] + b1 * (1.0 - c) * lq + nonlinear + cut
        })
        .collect();
    Ok((GridFunction::new(grid.clone(), vals), psi_b))
}

/// The renormalized-flow operator applied to `Q~_b` with mesh stencils, for
/// cross-checking `localized_residual`.
pub fn flow_residual_direct(
    ctx: &OperatorContext,
    profile: &ApproximateProfile,
    b: &[f64],
    eta: f64,
) -> Result<GridFunction> {
    let grid = ctx.grid();
    let p = ctx.params;
    let d = p.d as f64;
    let w = localize_qb(ctx, profile, b, eta)?;
    let vel = modulation_velocity(p.gamma, b);
    let mut ds = GridFunction::zeros(grid);
    for (m, v) in vel.iter().enumerate() {
        ds.axpy(*v, &profile.theta_partial(b, m + 1));
    }
    let chi = localizer(grid, b, eta)?;
    let theta = profile.theta(b);
    let ds = ds.zip_map(&theta, |y, a, th| match chi {
        None => a,
        Some(c) => c.value(y) * a + vel[0] * c.d1(y) * y * (1.0 + eta) / (2.0 * b[0]) * th,
    });
    let w1 = w.derivative();
    let w2 = w.second_derivative();
    let b1 = b[0];
    let vals = (0..grid.len())
        .map(|i| {
            let y = grid.nodes()[i];
            let u = w.values()[i];
            ds.values()[i] - w2.values()[i] - (d - 3.0) * w1.values()[i] / y
                + b1 * y * w1.values()[i]
                + (d - 2.0) * nl::f(u) / (y * y)
        })
        .collect();
    Ok(GridFunction::new(grid.clone(), vals))
}

/// `Psi~_b` with its weighted-norm table for `m = 0..=L`.
pub fn residual_psi(ctx: &OperatorContext, profile: &ApproximateProfile, b: &[f64], eta: f64) -> Result<PsiResidual> {
    let (psi, psi_b) = localized_residual(ctx, profile, b, eta)?;
    let p = ctx.params;
    let b1 = b[0];
    let (b0, b1_radius) = if b1 > 0.0 { (p.b0(b1), b1.powf(-0.5 * (1.0 + eta))) } else { (f64::INFINITY, f64::INFINITY) };
    let y_max = ctx.grid().y_max();
    let upto = |r: f64| (2.0 * r).min(y_max);
    let mut norms = vec![];
    for m in 0..=profile.depth {
        let power = p.hbar + m as u32 + 1;
        let lp = ctx.apply_l_pow(&psi, power as usize);
        let lp2 = lp.map(|_, v| v * v);
        let wt = psi.map(|y, v| v * v / (1.0 + y.powi(4 * power as i32)));
        norms.push(PsiNorms {
            m,
            power,
            l_power: weighted_integral_upto(&lp2, y_max),
            weighted: weighted_integral_upto(&wt, y_max),
            l_power_b0: weighted_integral_upto(&lp2, upto(b0)),
            weighted_b0: weighted_integral_upto(&wt, upto(b0)),
            l_power_m: weighted_integral_upto(&lp2, upto(p.m_cut)),
            weighted_m: weighted_integral_upto(&wt, upto(p.m_cut)),
        });
    }
    let b1s_ratio = if b1 > 0.0 { modulation_velocity(p.gamma, b)[0].abs() / (b1 * b1) } else { 0.0 };
    Ok(PsiResidual { psi, psi_b, b0, b1_radius, norms, b1s_ratio })
}

/// Weighted norm of the dropped Taylor terms on `y <= 2 B_1`, relative to the
/// same norm of `Psi_b`.
pub fn dropped_mass(ctx: &OperatorContext, profile: &ApproximateProfile, b: &[f64], eta: f64) -> Result<f64> {
    profile.check_cone(b)?;
    let radius = localization_radius(ctx.grid(), b[0], eta)?;
    let k = 2 * (ctx.params.hbar as i32 + 1);
    let sq = |g: GridFunction| {
        let h = g.map(|y, v| v * v / (1.0 + y.powi(2 * k)));
        weighted_integral_upto(&h, 2.0 * radius)
    };
    let dropped = sq(profile.dropped.evaluate(b));
    let total = sq(profile.residual.evaluate(b));
    Ok((dropped / total).sqrt())
}

#[derive(Debug, Clone, Serialize)]
pub struct ExponentFit {
    pub m: usize,
    pub slope: f64,
    pub expected: f64,
    pub b1: Vec<f64>,
    pub norm: Vec<f64>,
}

impl ExponentFit {
    pub fn relative_error(&self) -> f64 {
        (self.slope - self.expected).abs() / self.expected.abs()
    }
}

/// Log-log slope of `int_{y <= 2B_0} |Psi~_b|^2 / (1 + y^{4(hbar+m+1)})`
/// against `b_1` along `b = (b_1, 0, .., 0)`.
pub fn residual_exponent(
    ctx: &OperatorContext,
    profile: &ApproximateProfile,
    b1s: &[f64],
    m: usize,
    eta: f64,
) -> Result<ExponentFit> {
    let mut norm = vec![];
    for &b1 in b1s {
        let mut b = vec![0.0; profile.depth];
        b[0] = b1;
        let r = residual_psi(ctx, profile, &b, eta)?;
        let n = r.norms.get(m).ok_or_else(|| Error::InvalidParams(format!("m = {m} exceeds L")))?;
        norm.push(n.weighted_b0);
    }
    let xs: Vec<f64> = b1s.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = norm.iter().map(|v| v.ln()).collect();
    if ys.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-positive residual norm in exponent fit".into()));
    }
    let fit = linear_fit(&xs, &ys);
    let expected = 2.0 * m as f64 + 4.0 + 2.0 * (1.0 - ctx.params.delta);
    Ok(ExponentFit { m, slope: fit.slope, expected, b1: b1s.to_vec(), norm })
}
