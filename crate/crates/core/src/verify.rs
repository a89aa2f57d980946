//! The acceptance suite: one measured check list per criterion.
//!
//! Every criterion runs independently; a failing or erroring criterion is
//! recorded in the report and never stops the others.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cutoff::cutoff;
use crate::error::{Error, Result};
use crate::grid::{weighted_inner, weighted_norm, Grading, GridFunction, RadialGrid};
use crate::ground_state::solve_ground_state;
use crate::linops::{build_profile_ladder, interior_relative, OperatorContext};
use crate::modulation::{build_system, fit_blowup_rate, fit_rate, integrate};
use crate::params::ModelParams;
use crate::pde::{evolve_physical, resample, Decomposer, RenormOptions, SolverOptions};
use crate::profiles::{build_sk, localize_qb, residual_exponent, separating_eta};
use crate::spectral::{build_phi_m, default_basis, hardy_check, CoercivityProblem, Inequality};
use crate::tiers::{Tier, Y_MAX, Y_MIN};

pub const CRITERIA: [(u8, &str); 11] = [
    (1, "constants"),
    (2, "ground state"),
    (3, "operator calculus"),
    (4, "profile ladder"),
    (5, "coercivity"),
    (6, "S_k construction"),
    (7, "residual power law"),
    (8, "modulation spectrum"),
    (9, "rate quantization"),
    (10, "PDE blow-up rate"),
    (11, "stationarity and scaling"),
];

/// Decomposition settings of the renormalized run: `2M` must stay below the
/// cutoff radius `B_1 = b_1^{-(1+eta)/2}` for the whole window.
pub const RUN_M: f64 = 4.0;
pub const RUN_ETA: f64 = 0.9;
pub const RUN_B1: f64 = 1e-2;

#[derive(Debug, Clone, Serialize)]
pub struct VerifyConfig {
    pub tier: Tier,
    /// Replaces the tier's node count (the finer comparison mesh doubles it).
    pub n_override: Option<usize>,
    /// Replaces the tier's domain `[y_min, y_max]`.
    pub domain: Option<(f64, f64)>,
    pub seed: u64,
    /// Criteria to run; empty means all.
    pub only: Vec<u8>,
    pub threads: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { tier: Tier::Standard, n_override: None, domain: None, seed: 7, only: vec![], threads: 1 }
    }
}

impl VerifyConfig {
    pub fn nodes(&self) -> usize {
        self.n_override.unwrap_or(self.tier.spec().n)
    }

    fn grid(&self, params: &ModelParams, n: usize) -> Result<Arc<RadialGrid>> {
        let (lo, hi) = self.domain.unwrap_or((Y_MIN, Y_MAX));
        Ok(Arc::new(RadialGrid::build(lo, hi, n, Grading::default(), params.weight_exp())?))
    }

    fn context(&self, params: &ModelParams, n: usize) -> Result<OperatorContext> {
        OperatorContext::new(solve_ground_state(params, &self.grid(params, n)?)?)
    }

    /// Mesh for the refinement comparison: the next tier, or twice the override.
    fn refined_nodes(&self) -> usize {
        match (self.n_override, self.tier.refined()) {
            (Some(n), _) => 2 * n,
            (None, Some(t)) => t.spec().n,
            (None, None) => 2 * self.tier.spec().n,
        }
    }

    pub fn grid_descriptor(&self) -> String {
        let p = ModelParams::derive(11, 1, 4, 0.01, 20.0).expect("default parameters");
        match self.grid(&p, self.nodes()) {
            Ok(g) => g.descriptor(),
            Err(e) => format!("invalid grid: {e}"),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// `"<="`, `">="` or `"=="`.
    pub relation: &'static str,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, relation: "<=", threshold, passed: value <= threshold }
    }

    pub fn at_least(name: impl Into<String>, value: f64, threshold: f64) -> Self {
        Self { name: name.into(), value, relation: ">=", threshold, passed: value >= threshold }
    }

    pub fn holds(name: impl Into<String>, ok: bool) -> Self {
        let v = if ok { 1.0 } else { 0.0 };
        Self { name: name.into(), value: v, relation: "==", threshold: 1.0, passed: ok }
    }
}

/// Value reported alongside the checks but not gating.
#[derive(Debug, Clone, Serialize)]
pub struct Note {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub name: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub notes: Vec<Note>,
    pub error: Option<String>,
}

impl CriterionResult {
    /// Names of the failed checks, or the error.
    pub fn failures(&self) -> Vec<String> {
        let mut out: Vec<String> = self.checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
        if let Some(e) = &self.error {
            out.push(e.clone());
        }
        out
    }

    pub fn summary(&self) -> String {
        let status = if self.passed { "PASS" } else { "FAIL" };
        let mut s = format!("criterion {:>2} {status} {}", self.id, self.name);
        if !self.passed {
            s.push_str(&format!(" [{}]", self.failures().join("; ")));
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub code_version: String,
    pub tier: Tier,
    pub nodes: usize,
    pub seed: u64,
    pub grid: String,
    pub passed: bool,
    pub criteria: Vec<CriterionResult>,
}

impl Report {
    pub fn failed(&self) -> Vec<&CriterionResult> {
        self.criteria.iter().filter(|c| !c.passed).collect()
    }
}

#[derive(Default)]
struct Out {
    checks: Vec<Check>,
    notes: Vec<Note>,
}

impl Out {
    fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    fn note(&mut self, name: impl Into<String>, value: f64) {
        self.notes.push(Note { name: name.into(), value });
    }
}

fn criterion_name(id: u8) -> &'static str {
    CRITERIA.iter().find(|(i, _)| *i == id).map_or("unknown", |(_, n)| n)
}

/// Runs one criterion, capturing errors and panics.
pub fn run_criterion(id: u8, cfg: &VerifyConfig) -> CriterionResult {
    let mut out = Out::default();
    let res = catch_unwind(AssertUnwindSafe(|| dispatch(id, cfg, &mut out)));
    let error = match res {
        Ok(Ok(())) => None,
        Ok(Err(e)) => Some(e.to_string()),
        Err(p) => Some(
            p.downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()),
        ),
    };
    let passed = error.is_none() && !out.checks.is_empty() && out.checks.iter().all(|c| c.passed);
    CriterionResult { id, name: criterion_name(id).into(), passed, checks: out.checks, notes: out.notes, error }
}

fn dispatch(id: u8, cfg: &VerifyConfig, out: &mut Out) -> Result<()> {
    match id {
        1 => constants(out),
        2 => ground_state(cfg, out),
        3 => operators(cfg, out),
        4 => ladder(cfg, out),
        5 => coercivity(cfg, out),
        6 => sk_construction(cfg, out),
        7 => residual_law(cfg, out),
        8 => modulation_spectrum(out),
        9 => rate_quantization(out),
        10 => pde_rate(cfg, out),
        11 => stationarity(cfg, out),
        _ => Err(Error::InvalidParams(format!("no criterion {id}"))),
    }
}

/// Runs the selected criteria on up to `cfg.threads` threads; the report is
/// ordered by criterion id regardless of completion order.
pub fn run_all(cfg: &VerifyConfig) -> Report {
    let ids: Vec<u8> = if cfg.only.is_empty() {
        CRITERIA.iter().map(|(i, _)| *i).collect()
    } else {
        let mut v = cfg.only.clone();
        v.sort_unstable();
        v.dedup();
        v
    };
    let queue = Mutex::new(ids.clone());
    let done = Mutex::new(Vec::with_capacity(ids.len()));
    std::thread::scope(|s| {
        for _ in 0..cfg.threads.clamp(1, ids.len().max(1)) {
            s.spawn(|| loop {
                let Some(id) = queue.lock().unwrap().pop() else { break };
                let r = run_criterion(id, cfg);
                done.lock().unwrap().push(r);
            });
        }
    });
    let mut criteria = done.into_inner().unwrap();
    criteria.sort_by_key(|c| c.id);
    Report {
        code_version: env!("CARGO_PKG_VERSION").into(),
        tier: cfg.tier,
        nodes: cfg.nodes(),
        seed: cfg.seed,
        grid: cfg.grid_descriptor(),
        passed: criteria.iter().all(|c| c.passed),
        criteria,
    }
}

fn params(d: u32, l: u32, m_cut: f64) -> Result<ModelParams> {
    ModelParams::derive(d, l, l.max(4), 0.01, m_cut)
}

// gamma, hbar, delta from a 30-digit evaluation
const CONSTANT_ORACLE: [(u32, &str, u32, &str); 3] = [
    (11, "1.697224362268005353440389", 1, "0.4013878188659973232798053"),
    (12, "1.550510257216821901802716", 1, "0.724744871391589049098642"),
    (13, "1.458618734850890155500158", 2, "0.02069063257455492224992106"),
];

fn constants(out: &mut Out) -> Result<()> {
    for (d, g, h, dl) in CONSTANT_ORACLE {
        let p = params(d, 1, 20.0)?;
        let g: f64 = g.parse().unwrap();
        let dl: f64 = dl.parse().unwrap();
        out.check(Check::at_most(format!("d={d} gamma relative error"), ((p.gamma - g) / g).abs(), 1e-12));
        out.check(Check::holds(format!("d={d} hbar = {h}"), p.hbar == h));
        out.check(Check::at_most(format!("d={d} delta relative error"), ((p.delta - dl) / dl).abs(), 1e-12));
    }
    Ok(())
}

fn ground_state(cfg: &VerifyConfig, out: &mut Out) -> Result<()> {
    let p = params(11, 1, 20.0)?;
    let ctx = cfg.context(&p, cfg.nodes())?;
    let gs = &ctx.gs;
    out.check(Check::at_most("relative ODE residual", gs.relative_ode_residual(), 1e-6));
    out.check(Check::at_most("tail exponent error vs gamma", (gs.gamma_fit - p.gamma).abs() / p.gamma, 0.01));
    let v = gs.v.values();
    out.check(Check::at_most("V(0) error vs 2", (v[0] - 2.0).abs() / 2.0, 0.05));
    out.check(Check::at_most("V(inf) error vs -gamma", (v[v.len() - 1] + p.gamma).abs() / p.gamma, 0.05));
    let lq = &gs.lambda_q;
    let scale = lq.zip_map(&gs.z, |y, l, z| z * l / (y * y));
    out.check(Check::at_most("L(Lambda Q) relative", weighted_norm(&ctx.apply_l(lq)) / weighted_norm(&scale), 1e-6));
    out.note("alpha_fit", gs.alpha_fit);
    out.note("gamma_fit", gs.gamma_fit);
    Ok(())
}

/// Sum of log-Gaussian bumps centred in `[1e-2, 10]`.
fn random_smooth(grid: &Arc<RadialGrid>, rng: &mut ChaCha8Rng) -> GridFunction {
    let bumps: Vec<(f64, f64)> = (0..4)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0, (rng.random::<f64>() * 3.0 - 2.0) * 10f64.ln()))
        .collect();
    GridFunction::from_fn(grid, |y| {
        bumps.iter().map(|(c, m)| c * (-((y.ln() - m) / 0.6).powi(2)).exp()).sum::<f64>()
    })
}

/// Worst relative defects of the operator identities over seeded smooth samples.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OperatorErrors {
    pub adjoint: f64,
    pub factor: f64,
    pub factor_tilde: f64,
    pub commutator: f64,
    pub roundtrip: f64,
}

pub fn operator_errors(ctx: &OperatorContext, seed: u64) -> Result<OperatorErrors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = ctx.grid().clone();
    let mut e = OperatorErrors { adjoint: 0.0, factor: 0.0, factor_tilde: 0.0, commutator: 0.0, roundtrip: 0.0 };
    for _ in 0..5 {
        let u = random_smooth(&grid, &mut rng);
        let v = random_smooth(&grid, &mut rng);
        let au = ctx.apply_a(&u);
        let lhs = weighted_inner(&au, &v)?;
        let rhs = weighted_inner(&u, &ctx.apply_astar(&v))?;
        e.adjoint = e.adjoint.max((lhs - rhs).abs() / (weighted_norm(&au) * weighted_norm(&v)));
        let lu = ctx.apply_l(&u);
        e.factor = e.factor.max(interior_relative(&(&ctx.apply_astar(&au) - &lu), &lu));
        let lt = ctx.apply_ltilde(&u);
        e.factor_tilde = e.factor_tilde.max(interior_relative(&(&ctx.apply_a(&ctx.apply_astar(&u)) - &lt), &lt));
        e.commutator = e.commutator.max(interior_relative(&ctx.commutator_defect(&u), &lu.scale(2.0)));
    }
    let chi = cutoff(&grid, 5.0);
    for g in [chi.zip_map(&ctx.gs.lambda_q, |y, c, l| c * l * (1.0 + y)), ctx.gs.lambda_q.clone()] {
        let omega = ctx.invert_l_unchecked(&g)?;
        e.roundtrip = e.roundtrip.max(ctx.roundtrip_residual(&omega, &g));
    }
    Ok(e)
}

fn operators(cfg: &VerifyConfig, out: &mut Out) -> Result<()> {
    let p = params(11, 1, 20.0)?;
    let ctx = cfg.context(&p, cfg.nodes())?;
    let e = operator_errors(&ctx, cfg.seed)?;
    out.check(Check::at_most("adjointness <Au,v> = <u,A*v>", e.adjoint, 1e-4));
    out.check(Check::at_most("factorization L = A*A", e.factor, 1e-4));
    out.check(Check::at_most("factorization L~ = AA*", e.factor_tilde, 1e-4));
    out.check(Check::at_most("commutator identity", e.commutator, 1e-4));
    out.check(Check::at_most("L L^-1 round trip", e.roundtrip, 1e-4));

    // kernel element Gamma: origin y^{-(d-2)}, tails -gamma and -(d-4-gamma)
    let d = p.d as f64;
    let slope = |r: Result<f64>, expect: f64| r.map_or(f64::NAN, |s| (s - expect).abs() / expect.abs());
    out.check(Check::at_most("Gamma slope at origin", slope(ctx.gamma.origin_slope(), 2.0 - d), 0.05));
    out.check(Check::at_most("Gamma slope at infinity", slope(ctx.gamma.tail_slope(), -p.gamma), 0.05));
    let decaying = slope(ctx.gamma_dec.tail_slope(), p.gamma + 4.0 - d);
    out.check(Check::at_most("decaying Gamma slope at infinity", decaying, 0.05));

    let fine = cfg.context(&p, cfg.refined_nodes())?;
    let f = operator_errors(&fine, cfg.seed)?;
    // quantities already at round-off cannot improve further
    const FLOOR: f64 = 1e-11;
    for (name, a, b) in [
        ("factorization L = A*A", e.factor, f.factor),
        ("factorization L~ = AA*", e.factor_tilde, f.factor_tilde),
        ("commutator identity", e.commutator, f.commutator),
        ("L L^-1 round trip", e.roundtrip, f.roundtrip),
        ("adjointness", e.adjoint, f.adjoint),
    ] {
        out.note(format!("{name} refined"), b);
        if a > FLOOR {
            out.check(Check::at_least(format!("{name} refinement gain"), a / b.max(f64::MIN_POSITIVE), 4.0));
        } else {
            out.check(Check::at_most(format!("{name} at round-off"), b, FLOOR));
        }
    }
    Ok(())
}

fn ladder(cfg: &VerifyConfig, out: &mut Out) -> Result<()> {
    let p = params(11, 1, 20.0)?;
    let ctx = cfg.context(&p, cfg.nodes())?;
    let set = build_profile_ladder(&ctx, 4)?;
    for row in set.slope_table(p.gamma)? {
        out.check(Check::at_most(format!("T_{} slopes", row.k), row.max_relative_error(), 0.05));
    }
    let phi = build_phi_m(&ctx, &set, p.m_cut)?;
    out.check(Check::at_most("Phi_M orthogonality to T_1..T_4", phi.max_orthogonality_defect(), 1e-6));
    Ok(())
}

fn coercivity(cfg: &VerifyConfig, out: &mut Out) -> Result<()> {
    let p = params(11, 1, 20.0)?;
    let ctx = cfg.context(&p, cfg.nodes())?;
    let h = hardy_check(&p, ctx.grid(), 0.0, 60, 200, cfg.seed)?;
    out.check(Check::at_least("Hardy constant alpha=0", h.rayleigh_min, 12.25 * 0.95));
    out.check(Check::holds("Hardy samples", h.pass));
    let set = build_profile_ladder(&ctx, 4)?;
    let phi = build_phi_m(&ctx, &set, p.m_cut)?;
    let prob = CoercivityProblem::new(&ctx, &phi, Inequality::Iterate { k: p.hbar })?;
    let r = prob.check(&default_basis(ctx.grid(), 48)?, 200, cfg.seed)?;
    out.check(Check::at_least("iterate domination min ratio (200 samples)", r.sample_min, 1e-3));
    out.check(Check::at_least("iterate domination subspace minimum", r.rayleigh_min, 1e-3));
    out.note("constraint residual", r.max_constraint_residual);
    Ok(())
}

fn sk_construction(cfg: &VerifyConfig, out: &mut Out) -> Result<()> {
    let p = params(11, 1, 20.0)?;
    let ctx = cfg.context(&p, cfg.nodes())?;
    let set = build_profile_ladder(&ctx, 4)?;
    let prof = build_sk(&ctx, &set, 4)?;
    out.check(Check::holds("triangular dependence", prof.triangular()));
    out.check(Check::holds("homogeneous monomials", prof.homogeneous()));
    let b1: f64 = 2e-2;
    let b = [b1, 0.3 * b1 * b1, -0.2 * b1.powi(3), 0.1 * b1.powi(4)];
    let mut worst = 0.0_f64;
    for mu in [0.5f64, 2.0] {
        let bm: Vec<f64> = b.iter().enumerate().map(|(i, v)| v * mu.powi(i as i32 + 1)).collect();
        for k in 2..=6 {
            let s = prof.s_k(k);
            let scale = mu.powi(k as i32);
            let (x, z) = (s.evaluate(&b), s.evaluate(&bm));
            for (x, z) in x.values().iter().zip(z.values()) {
                if *x != 0.0 {
                    worst = worst.max((z - scale * x).abs() / (scale * x).abs());
                }
            }
        }
    }
    out.check(Check::at_most("homogeneity under b_k -> mu^k b_k", worst, 1e-13));
    for row in prof.slope_table(4)? {
        let name = format!("S_{} coefficient {:?} slopes", row.k, row.monomial);
        out.check(Check::at_most(name, row.max_relative_error(), 0.07));
    }
    Ok(())
}

fn residual_law(cfg: &VerifyConfig, out: &mut Out) -> Result<()> {
    let p = params(11, 1, 20.0)?;
    let ctx = cfg.context(&p, cfg.nodes())?;
    let set = build_profile_ladder(&ctx, 4)?;
    let prof = build_sk(&ctx, &set, 4)?;
    let b1s = [1e-3, 10f64.powf(-2.5), 1e-2];
    let eta = separating_eta(1e-2);
    out.note("eta", eta);
    for m in 0..2 {
        let fit = residual_exponent(&ctx, &prof, &b1s, m, eta)?;
        out.note(format!("m={m} slope"), fit.slope);
        out.note(format!("m={m} expected"), fit.expected);
        out.check(Check::at_most(format!("m={m} slope error"), fit.relative_error(), 0.15));
        // the default eta sits below the separation B_1 >= 2B_0
        let fit = residual_exponent(&ctx, &prof, &b1s, m, p.eta)?;
        out.note(format!("m={m} slope at eta={}", p.eta), fit.slope);
    }
    Ok(())
}

fn modulation_spectrum(out: &mut Out) -> Result<()> {
    let mut spec = 0.0_f64;
    for d in [11, 12, 13] {
        for l in 1..=10 {
            spec = spec.max(build_system(&params(d, l, 20.0)?)?.spectrum_error());
        }
    }
    out.check(Check::at_most("eig(A_l) vs D_l, d=11..13, l=1..10", spec, 1e-8));
    for (d, l) in [(11, 1), (11, 2), (12, 1), (13, 2)] {
        let p = params(d, l, 20.0)?;
        let sys = build_system(&p)?;
        let s0 = 10.0;
        let tr = integrate(&sys, &sys.explicit(s0), 1.0, s0, 100.0 * s0, 400)?;
        let c1 = l as f64 / (2.0 * l as f64 - p.gamma);
        let (mut drift, mut lam) = (0.0_f64, 0.0_f64);
        for x in &tr.samples {
            for k in 0..l as usize {
                drift = drift.max((x.b[k] * x.s.powi(k as i32 + 1) / sys.c[k] - 1.0).abs());
            }
            lam = lam.max((x.lambda / (s0 / x.s).powf(c1) - 1.0).abs());
        }
        out.check(Check::at_most(format!("d={d} l={l} explicit solution drift"), drift, 1e-6));
        out.check(Check::at_most(format!("d={d} l={l} lambda(s) power law"), lam, 1e-2));
    }
    Ok(())
}

fn rate_quantization(out: &mut Out) -> Result<()> {
    for (d, l, expect) in [(11, 1, 0.58920), (11, 2, 1.17838), (12, 1, 0.64495)] {
        let p = params(d, l, 20.0)?;
        let sys = build_system(&p)?;
        let tr = integrate(&sys, &sys.explicit(10.0), 1.0, 10.0, 1e6, 600)?;
        let f = fit_blowup_rate(&tr, &p)?;
        out.note(format!("d={d} l={l} exponent"), f.exponent);
        out.check(Check::at_most(format!("d={d} l={l} exponent vs {expect}"), (f.exponent - expect).abs() / expect, 0.02));
    }
    Ok(())
}

fn pde_rate(cfg: &VerifyConfig, out: &mut Out) -> Result<()> {
    let p = params(11, 1, RUN_M)?;
    let ctx = cfg.context(&p, cfg.nodes())?;
    let set = build_profile_ladder(&ctx, 4)?;
    let prof = build_sk(&ctx, &set, 4)?;
    let phi = build_phi_m(&ctx, &set, RUN_M)?;
    let mut dec = Decomposer::new(&ctx, &phi, &prof, 1)?;
    dec.eta = RUN_ETA;
    let b0 = [RUN_B1, 0.0, 0.0, 0.0];
    let w0 = localize_qb(&ctx, &prof, &b0, RUN_ETA)?;
    let s0 = 1.0 / ((2.0 - p.gamma) * RUN_B1);
    let opts = RenormOptions {
        solver: SolverOptions { max_steps: 40_000, ..RenormOptions::default().solver },
        ..RenormOptions::default()
    };
    let run = dec.evolve_renormalized(&w0, &b0, 1.0, s0, 1e6, &opts)?;
    let (t, lam) = (run.t(), run.lambda());
    out.note("steps", run.samples.len() as f64);
    out.note("s_end", run.samples.last().map_or(s0, |x| x.s));
    out.check(Check::holds("lambda decays monotonically", lam.windows(2).all(|w| w[1] < w[0])));
    let decay = lam[0] / lam[lam.len() - 1];
    out.check(Check::at_least("lambda decay over the window", decay, 10.0));
    out.check(Check::at_most("max constraint residual", run.max_constraint(), 1e-8));
    let target = 1.0 / p.gamma;
    match fit_rate(&t, &lam, p.gamma) {
        Ok(f) => {
            out.note("fitted exponent", f.exponent);
            out.note("fitted blow-up time", f.t_blowup);
            out.check(Check::at_most("exponent vs 1/gamma", (f.exponent - target).abs() / target, 0.10));
        }
        Err(e) => out.check(Check::holds(format!("rate fit: {e}"), false)),
    }

    // companion physical run over the part of the window the mesh resolves at
    // lambda >= 0.1
    let k = lam.iter().position(|&l| l < 0.1).unwrap_or(lam.len() - 1);
    let t_end = t[k];
    let phys = evolve_physical(&w0, p.d, t_end, &[], &SolverOptions::default())?;
    out.note("physical run end time", t_end);
    out.note("energy released", -phys.samples.last().map_or(0.0, |x| x.energy_change));
    if let Some(why) = &phys.terminated {
        out.check(Check::holds(format!("physical run completed ({why})"), false));
    }
    out.check(Check::at_most("largest relative energy increase", phys.max_energy_increase(), 0.0));
    Ok(())
}

fn stationarity(cfg: &VerifyConfig, out: &mut Out) -> Result<()> {
    let p = params(11, 1, RUN_M)?;
    let ctx = cfg.context(&p, cfg.nodes())?;
    let q = &ctx.gs.q;
    let run = evolve_physical(q, p.d, 1.0, &[], &SolverOptions::default())?;
    out.check(Check::holds("physical run completed", run.terminated.is_none()));
    out.check(Check::at_most("evolved Q deviation (sup, relative)", (&run.state - q).max_abs() / q.max_abs(), 1e-5));

    // u_mu(t, r) = u(t / mu^2, r / mu) on a coarser mesh
    let cp = cfg.n_override.map_or(Tier::Coarse.spec().n, |n| n / 2);
    let cctx = cfg.context(&p, cp)?;
    let grid = cctx.grid().clone();
    let u0 = GridFunction::from_fn(&grid, |r| {
        cctx.gs.q.at((1.3 * r).min(grid.y_max())) + 0.05 * r * r * (-(r - 1.0).powi(2)).exp()
    });
    let mu: f64 = 2.0;
    let u0s = resample(&u0, &grid, 1.0 / mu);
    let times = [0.25, 0.5, 1.0];
    let opts = SolverOptions { rtol: 1e-8, ..SolverOptions::default() };
    let a = evolve_physical(&u0, p.d, 1.0, &times, &opts)?;
    let scaled: Vec<f64> = times.iter().map(|t| mu * mu * t).collect();
    let b = evolve_physical(&u0s, p.d, mu * mu, &scaled, &opts)?;
    let mut err = 0.0_f64;
    for ((_, ua), (_, ub)) in a.snapshots.iter().zip(&b.snapshots) {
        let back = resample(ub, &grid, mu);
        for (i, r) in grid.nodes().iter().enumerate() {
            if *r <= 100.0 {
                err = err.max((back.values()[i] - ua.values()[i]).abs());
            }
        }
    }
    out.check(Check::holds("all snapshots produced", a.snapshots.len() == 3 && b.snapshots.len() == 3));
    out.check(Check::at_most("scaling covariance (sup on r <= 100)", err, 1e-4));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_and_bookkeeping() {
        let cfg = VerifyConfig { only: vec![1, 99], ..VerifyConfig::default() };
        let r = run_all(&cfg);
        assert_eq!(r.criteria.len(), 2);
        assert!(r.criteria[0].passed, "{:?}", r.criteria[0]);
        assert!(!r.criteria[1].passed && r.criteria[1].error.is_some());
        assert!(!r.passed);
        assert!(r.criteria[1].summary().contains("FAIL"));
    }

    #[test]
    fn checks_reject_nan() {
        assert!(!Check::at_most("x", f64::NAN, 1.0).passed);
        assert!(!Check::at_least("x", f64::NAN, 1.0).passed);
    }
}
