//! Linearized operator `L = -d^2 - (d-3)/y d + Z/y^2` around `Q`, its
//! factorization `L = A*A`, the conjugate `L~ = A A*`, the kernel element
//! `Gamma`, the two-step inverse and the ladder `T_k = (-L^{-1})^k LambdaQ`.

use std::sync::Arc;

use serde::Serialize;

use crate::cutoff::Cutoff;
use crate::error::{Error, Result};
use crate::grid::{GridFunction, RadialGrid};
use crate::ground_state::GroundState;
use crate::params::ModelParams;

/// Round-trip tolerance for `L (L^{-1} g) = g`.
pub const ROUNDTRIP_TOL: f64 = 1e-4;

/// Nodes dropped at each end when measuring node-wise identities, where the
/// one-sided stencils are of lower order.
pub const EDGE: usize = 2;

/// Weighted norm of `r` over the interior nodes, relative to that of `scale`.
pub fn interior_relative(r: &GridFunction, scale: &GridFunction) -> f64 {
    let w = r.grid().quad_weights();
    let n = r.len();
    let (mut a, mut b) = (0.0, 0.0);
    for i in EDGE..n - EDGE {
        a += w[i] * r.values()[i] * r.values()[i];
        b += w[i] * scale.values()[i] * scale.values()[i];
    }
    (a / b).sqrt()
}

#[derive(Debug, Clone)]
pub struct OperatorContext {
    pub params: ModelParams,
    pub gs: GroundState,
    /// `(V+1)^2 + (d-4)(V+1) - Lambda V`.
    pub ztilde: GridFunction,
    pub lambda_z: GridFunction,
    /// `LambdaQ int_1^y dxi / (xi^{d-3} LambdaQ^2)`.
    pub gamma: GridFunction,
    /// `-LambdaQ int_y^inf dxi / (xi^{d-3} LambdaQ^2)`: the kernel element
    /// decaying at infinity. Differs from `gamma` by a multiple of `LambdaQ`.
    pub gamma_dec: GridFunction,
}

/// `int_0^{y_0} h` from the power law through the first two samples.
fn below_first_node(h: &[f64], y: &[f64]) -> Result<f64> {
    let (h0, h1) = (h[0], h[1]);
    if h0 == 0.0 {
        return Ok(0.0);
    }
    if h0 * h1 <= 0.0 {
        return Ok(0.5 * h0 * y[0]);
    }
    let s = (h1 / h0).ln() / (y[1] / y[0]).ln();
    if s <= -1.0 {
        return Err(Error::TailDivergence(format!(
            "integrand ~ y^{s:.3} is not integrable at the origin"
        )));
    }
    Ok(h0 * y[0] / (s + 1.0))
}

/// `int_y^inf h` beyond the last node from the power law through the last two samples.
fn beyond_last_node(h: &[f64], y: &[f64]) -> Result<f64> {
    let n = h.len();
    let (ha, hb) = (h[n - 2], h[n - 1]);
    if hb == 0.0 {
        return Ok(0.0);
    }
    let s = (hb / ha).ln() / (y[n - 1] / y[n - 2]).ln();
    if !(s < -1.0) || ha * hb <= 0.0 {
        return Err(Error::TailDivergence(format!("integrand ~ y^{s:.3} does not decay on the grid")));
    }
    Ok(-hb * y[n - 1] / (s + 1.0))
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(Error::TailDivergence(format!("{what} not finite at node {i}")));
    }
    Ok(())
}

/// Output of [`OperatorContext::invert_l`].
#[derive(Debug, Clone)]
pub struct Inversion {
    pub omega: GridFunction,
    /// `|L omega - g| / |g|`, weighted, interior nodes.
    pub residual: f64,
}

impl OperatorContext {
    pub fn new(gs: GroundState) -> Result<Self> {
        let params = gs.params;
        let d = params.d as f64;
        let grid = gs.grid().clone();
        let y = grid.nodes();
        let lv = gs.lambda_v();
        let ztilde = gs.v.zip_map(&lv, |_, v, lv| (v + 1.0).powi(2) + (d - 4.0) * (v + 1.0) - lv);
        let lambda_z = gs.lambda_z();

        let lq = gs.lambda_q.values();
        let w = params.weight_exp();
        let h: Vec<f64> = y.iter().zip(lq).map(|(&y, &l)| 1.0 / (y.powf(w) * l * l)).collect();
        check_finite(&h, "Gamma integrand")?;
        let from_one = grid.cumulative_from(&h, grid.one_index(), false);
        let gamma: Vec<f64> = lq.iter().zip(&from_one).map(|(l, c)| l * c).collect();
        let tail = beyond_last_node(&h, y)?;
        let parts = grid.interval_integrals(&h, false);
        let mut upper = vec![0.0; y.len()];
        *upper.last_mut().unwrap() = tail;
        for i in (0..y.len() - 1).rev() {
            upper[i] = upper[i + 1] + parts[i];
        }
        let gamma_dec: Vec<f64> = lq.iter().zip(&upper).map(|(l, c)| -l * c).collect();

        let gamma = GridFunction::new(grid.clone(), gamma).with_orders(None, Some(-params.gamma));
        let gamma_dec = GridFunction::new(grid.clone(), gamma_dec)
            .with_orders(None, Some(-(d - 4.0 - params.gamma)));
        Ok(Self { params, gs, ztilde, lambda_z, gamma, gamma_dec })
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        self.gs.grid()
    }

    fn d(&self) -> f64 {
        self.params.d as f64
    }

    /// `A u = -u' + (V/y) u`.
    pub fn apply_a(&self, u: &GridFunction) -> GridFunction {
        let du = u.derivative();
        let v = self.gs.v.values();
        let vals = u
            .y()
            .iter()
            .enumerate()
            .map(|(i, &y)| -du.values()[i] + v[i] / y * u.values()[i])
            .collect();
        GridFunction::new(self.grid().clone(), vals)
    }

    /// `A* u = u' + ((d-3+V)/y) u`.
    pub fn apply_astar(&self, u: &GridFunction) -> GridFunction {
        let d = self.d();
        let du = u.derivative();
        let v = self.gs.v.values();
        let vals = u
            .y()
            .iter()
            .enumerate()
            .map(|(i, &y)| du.values()[i] + (d - 3.0 + v[i]) / y * u.values()[i])
            .collect();
        GridFunction::new(self.grid().clone(), vals)
    }

    fn second_order(&self, u: &GridFunction, pot: &GridFunction) -> GridFunction {
        let d = self.d();
        let du = u.derivative();
        let d2u = u.second_derivative();
        let z = pot.values();
        let vals = u
            .y()
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                -d2u.values()[i] - (d - 3.0) * du.values()[i] / y + z[i] * u.values()[i] / (y * y)
            })
            .collect();
        GridFunction::new(self.grid().clone(), vals)
    }

    /// `L u = -u'' - (d-3)/y u' + Z/y^2 u`.
    pub fn apply_l(&self, u: &GridFunction) -> GridFunction {
        self.second_order(u, &self.gs.z)
    }

    /// `L^k u`.
    pub fn apply_l_pow(&self, u: &GridFunction, k: usize) -> GridFunction {
        let mut out = u.clone();
        for _ in 0..k {
            out = self.apply_l(&out);
        }
        out
    }

    /// `L (chi LambdaQ) = -(chi'' + (d-3) chi'/y) LambdaQ - 2 chi' V LambdaQ / y`,
    /// using `L LambdaQ = 0`; vanishes identically where `chi` is constant.
    pub fn l_chi_lambda_q(&self, chi: &Cutoff) -> GridFunction {
        let d = self.d();
        let v = self.gs.v.values();
        let vals = self
            .gs
            .lambda_q
            .values()
            .iter()
            .zip(self.grid().nodes())
            .enumerate()
            .map(|(i, (&lq, &y))| {
                let (c1, c2) = (chi.d1(y), chi.d2(y));
                -(c2 + (d - 3.0) * c1 / y) * lq - 2.0 * c1 * v[i] * lq / y
            })
            .collect();
        GridFunction::new(self.grid().clone(), vals)
    }

    /// `L~ u = -u'' - (d-3)/y u' + Z~/y^2 u`.
    pub fn apply_ltilde(&self, u: &GridFunction) -> GridFunction {
        self.second_order(u, &self.ztilde)
    }

    /// `[L, Lambda] u - (2 L u - (Lambda Z / y^2) u)`.
    pub fn commutator_defect(&self, u: &GridFunction) -> GridFunction {
        let lhs = &self.apply_l(&u.lambda()) - &self.apply_l(u).lambda();
        let lu = self.apply_l(u);
        let lz = self.lambda_z.values();
        let rhs = u.zip_map(&lu, |_, _, l| 2.0 * l);
        let vals: Vec<f64> = rhs
            .values()
            .iter()
            .zip(u.values())
            .zip(u.y())
            .enumerate()
            .map(|(i, ((r, uv), y))| lhs.values()[i] - (r - lz[i] * uv / (y * y)))
            .collect();
        GridFunction::new(self.grid().clone(), vals)
    }

    /// Two-step inverse without the round-trip check.
    ///
    /// `A omega = (y^{d-3} LambdaQ)^{-1} int_0^y g LambdaQ x^{d-3}`, then
    /// `omega = -LambdaQ int_0^y A omega / LambdaQ`.
    pub fn invert_l_unchecked(&self, g: &GridFunction) -> Result<GridFunction> {
        let grid = self.grid();
        g.check_grid(&self.gs.q)?;
        check_finite(g.values(), "right-hand side")?;
        let y = grid.nodes();
        let w = self.params.weight_exp();
        let lq = self.gs.lambda_q.values();
        let h1: Vec<f64> = g.values().iter().zip(lq).map(|(a, b)| a * b).collect();
        let h1w: Vec<f64> = h1.iter().zip(y).map(|(h, y)| h * y.powf(w)).collect();
        let base = below_first_node(&h1w, y)?;
        let c1 = grid.cumulative_weighted(&h1);
        let a_omega: Vec<f64> = (0..y.len()).map(|i| (base + c1[i]) / (y[i].powf(w) * lq[i])).collect();
        let h2: Vec<f64> = a_omega.iter().zip(lq).map(|(a, l)| a / l).collect();
        check_finite(&h2, "intermediate A omega / LambdaQ")?;
        let base2 = below_first_node(&h2, y)?;
        let c2 = grid.cumulative_plain(&h2);
        let omega: Vec<f64> = (0..y.len()).map(|i| -lq[i] * (base2 + c2[i])).collect();
        check_finite(&omega, "inverse")?;
        Ok(GridFunction::new(grid.clone(), omega).with_orders(
            g.origin_order.map(|p| p + 1),
            g.tail_order.map(|q| q + 2.0),
        ))
    }

    /// Solves `L omega = g` and checks the round trip against [`ROUNDTRIP_TOL`].
    pub fn invert_l(&self, g: &GridFunction) -> Result<Inversion> {
        let omega = self.invert_l_unchecked(g)?;
        let residual = self.roundtrip_residual(&omega, g);
        if !(residual <= ROUNDTRIP_TOL) {
            return Err(Error::RoundtripFailed { residual, tol: ROUNDTRIP_TOL });
        }
        Ok(Inversion { omega, residual })
    }

    /// `|L omega - g| / |g|` over the interior nodes.
    pub fn roundtrip_residual(&self, omega: &GridFunction, g: &GridFunction) -> f64 {
        let r = &self.apply_l(omega) - g;
        interior_relative(&r, g)
    }

    /// Variation-of-parameters inverse
    /// `-Gamma int_0^y g LambdaQ x^{d-3} + LambdaQ int_0^y g Gamma x^{d-3}`,
    /// evaluated with the decaying kernel element (the formula is unchanged
    /// when `Gamma` is shifted by a multiple of `LambdaQ`).
    pub fn invert_l_standard(&self, g: &GridFunction) -> Result<GridFunction> {
        let grid = self.grid();
        g.check_grid(&self.gs.q)?;
        let y = grid.nodes();
        let w = self.params.weight_exp();
        let lq = self.gs.lambda_q.values();
        let gm = self.gamma_dec.values();
        let integral = |h: Vec<f64>| -> Result<Vec<f64>> {
            let hw: Vec<f64> = h.iter().zip(y).map(|(h, y)| h * y.powf(w)).collect();
            let base = below_first_node(&hw, y)?;
            Ok(grid.cumulative_weighted(&h).into_iter().map(|c| c + base).collect())
        };
        let i1 = integral(g.values().iter().zip(lq).map(|(a, b)| a * b).collect())?;
        let i2 = integral(g.values().iter().zip(gm).map(|(a, b)| a * b).collect())?;
        let vals: Vec<f64> = (0..y.len()).map(|i| -gm[i] * i1[i] + lq[i] * i2[i]).collect();
        check_finite(&vals, "standard inverse")?;
        Ok(GridFunction::new(grid.clone(), vals))
    }

    /// `y^{d-3} LambdaQ A kernel + 1`, node-wise, divided by the size of the
    /// two terms of `A` when that exceeds one (a kernel element with a
    /// `LambdaQ` component carries large cancelling terms in the tail).
    pub fn wronskian_defect(&self, kernel: &GridFunction) -> GridFunction {
        let w = self.params.weight_exp();
        let dk = kernel.derivative();
        let vals = (0..kernel.len())
            .map(|i| {
                let y = kernel.y()[i];
                let pre = y.powf(w) * self.gs.lambda_q.values()[i];
                let t1 = -dk.values()[i];
                let t2 = self.gs.v.values()[i] / y * kernel.values()[i];
                let size = (pre * (t1.abs() + t2.abs())).max(1.0);
                (pre * (t1 + t2) + 1.0) / size
            })
            .collect();
        GridFunction::new(self.grid().clone(), vals)
    }
}

/// Measured slopes of one ladder level.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlopeRow {
    pub k: usize,
    pub origin: f64,
    pub origin_expected: f64,
    pub tail: f64,
    pub tail_expected: f64,
}

impl SlopeRow {
    pub fn max_relative_error(&self) -> f64 {
        let e1 = (self.origin - self.origin_expected).abs() / self.origin_expected.abs();
        let e2 = (self.tail - self.tail_expected).abs() / self.tail_expected.abs();
        e1.max(e2)
    }
}

/// `T_0 .. T_L` with the round-trip residual of each inversion.
#[derive(Debug, Clone)]
pub struct ProfileSet {
    pub t: Vec<GridFunction>,
    /// `residuals[k]` belongs to the inversion producing `T_{k+1}`.
    pub residuals: Vec<f64>,
}

impl ProfileSet {
    pub fn depth(&self) -> usize {
        self.t.len() - 1
    }

    /// Origin slope over the first decade and tail slope over the last decade.
    pub fn slope_table(&self, gamma: f64) -> Result<Vec<SlopeRow>> {
        self.t
            .iter()
            .enumerate()
            .map(|(k, t)| {
                Ok(SlopeRow {
                    k,
                    origin: t.origin_slope()?,
                    origin_expected: 2.0 * k as f64 + 2.0,
                    tail: t.tail_slope()?,
                    tail_expected: 2.0 * k as f64 - gamma,
                })
            })
            .collect()
    }
}

/// `T_0 = LambdaQ`, `T_{k+1} = -L^{-1} T_k` for `k < depth`.
pub fn build_profile_ladder(ctx: &OperatorContext, depth: usize) -> Result<ProfileSet> {
    let mut t = vec![ctx.gs.lambda_q.clone()];
    let mut residuals = vec![];
    for level in 1..=depth {
        let inv = ctx.invert_l(&t[level - 1]).map_err(|e| Error::LadderInversion {
            level,
            monomial: vec![],
            source: Box::new(e),
        })?;
        t.push(inv.omega.scale(-1.0).with_orders(
            Some(level as i32),
            Some(2.0 * level as f64 - ctx.params.gamma),
        ));
        residuals.push(inv.residual);
    }
    Ok(ProfileSet { t, residuals })
}
