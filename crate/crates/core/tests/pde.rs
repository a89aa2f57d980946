use std::sync::OnceLock;

use ymflow_core::linops::{build_profile_ladder, OperatorContext};
use ymflow_core::pde::*;
use ymflow_core::profiles::{build_sk, localize_qb, ApproximateProfile};
use ymflow_core::spectral::{build_phi_m, PhiM};
use ymflow_core::{weighted_inner, GridFunction, ModelParams, Tier};

struct Fixture {
    ctx: OperatorContext,
    prof: ApproximateProfile,
    phi: PhiM,
}

const ETA: f64 = 0.9;

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let p = ModelParams::derive(11, 1, 4, 0.01, 4.0).unwrap();
        let ctx = Tier::Standard.context(&p).unwrap();
        let set = build_profile_ladder(&ctx, 4).unwrap();
        let prof = build_sk(&ctx, &set, 4).unwrap();
        let phi = build_phi_m(&ctx, &set, 4.0).unwrap();
        Fixture { ctx, prof, phi }
    })
}

fn decomposer(f: &Fixture) -> Decomposer<'_> {
    let mut dec = Decomposer::new(&f.ctx, &f.phi, &f.prof, 1).unwrap();
    dec.eta = ETA;
    dec
}

fn rel_diff(a: &GridFunction, b: &GridFunction) -> f64 {
    (a - b).max_abs() / b.max_abs()
}

#[test]
fn ground_state_is_stationary() {
    let f = fixture();
    let q = &f.ctx.gs.q;
    let run = evolve_physical(q, 11, 1.0, &[0.5], &SolverOptions::default()).unwrap();
    assert!(run.terminated.is_none());
    assert_eq!(run.snapshots.len(), 1);
    assert!(rel_diff(&run.state, q) < 1e-5, "{:e}", rel_diff(&run.state, q));
}

#[test]
fn scaling_covariance() {
    let p = ModelParams::derive(11, 1, 4, 0.01, 4.0).unwrap();
    let ctx = Tier::Coarse.context(&p).unwrap();
    let grid = ctx.grid().clone();
    // a non-stationary bump on a shrunk ground state
    let u0 = GridFunction::from_fn(&grid, |r| {
        let q = ctx.gs.q.grid().interpolate(ctx.gs.q.values(), (1.3 * r).min(grid.y_max()));
        q + 0.05 * r * r * (-(r - 1.0).powi(2)).exp()
    });
    let mu: f64 = 2.0;
    let u0s = resample(&u0, &grid, 1.0 / mu);
    let times = [0.25, 0.5, 1.0];
    let opts = SolverOptions { rtol: 1e-8, ..SolverOptions::default() };
    let a = evolve_physical(&u0, 11, 1.0, &times, &opts).unwrap();
    let scaled: Vec<f64> = times.iter().map(|t| mu * mu * t).collect();
    let b = evolve_physical(&u0s, 11, mu * mu, &scaled, &opts).unwrap();
    assert_eq!(a.snapshots.len(), 3);
    assert_eq!(b.snapshots.len(), 3);
    for ((t, ua), (_, ub)) in a.snapshots.iter().zip(&b.snapshots) {
        // ub(mu r) = ua(r), compared on r <= 100 where both grids resolve the data
        let back = resample(ub, &grid, mu);
        let err = grid
            .nodes()
            .iter()
            .enumerate()
            .filter(|(_, r)| **r <= 100.0)
            .map(|(i, _)| (back.values()[i] - ua.values()[i]).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-4, "t = {t}: {err:e}");
        assert!(rel_diff(ua, &u0) > 1e-3, "data did not move by t = {t}");
    }
}

#[test]
fn energy_decreases() {
    let f = fixture();
    let u0 = localize_qb(&f.ctx, &f.prof, &[1e-2, 0.0, 0.0, 0.0], ETA).unwrap();
    let run = evolve_physical(&u0, 11, 5.0, &[], &SolverOptions::default()).unwrap();
    assert!(run.terminated.is_none());
    let last = run.samples.last().unwrap();
    assert!(last.energy_change < 0.0);
    assert!(run.max_energy_increase() <= 0.0, "{:e}", run.max_energy_increase());
}

#[test]
fn energy_difference_is_antisymmetric_and_vanishes_on_equal_data() {
    let f = fixture();
    let u0 = localize_qb(&f.ctx, &f.prof, &[3e-3, 0.0, 0.0, 0.0], ETA).unwrap();
    let q = &f.ctx.gs.q;
    assert_eq!(energy_difference(q, q, 11), 0.0);
    let (a, b) = (energy_difference(q, &u0, 11), energy_difference(&u0, q, 11));
    assert!((a + b).abs() <= 1e-14 * a.abs());
}

#[test]
fn extraction_of_rescaled_ground_state() {
    let f = fixture();
    let dec = decomposer(f);
    let grid = f.ctx.grid().clone();
    let u = resample(&f.ctx.gs.q, &grid, 1.0 / 3.0);
    let d = dec.extract(&u, 2.7, &[1e-3, 0.0, 0.0, 0.0]).unwrap();
    assert!(d.converged);
    assert!((d.lambda - 3.0).abs() < 1e-6, "{}", d.lambda);
    // b_1 only weakly enters the constraints; interpolation noise sets this floor
    assert!(d.b[0].abs() < 1e-4, "{:?}", d.b);
    assert!(dec.local_norm(&d.q) < 1e-4 * dec.local_norm(&f.ctx.gs.q));
}

#[test]
fn extraction_recovers_synthetic_parameters() {
    let f = fixture();
    let dec = decomposer(f);
    let grid = f.ctx.grid().clone();
    let b1 = 8e-3;
    let b = [b1, 0.0, 0.0, 0.0];
    // the exact fixed point is returned as is
    let d = dec.extract(&dec.qtilde(&b), 1.0, &b).unwrap();
    assert!(d.converged);
    assert!((d.lambda - 1.0).abs() < 1e-8, "{:e}", d.lambda - 1.0);
    assert!((d.b[0] / b1 - 1.0).abs() < 1e-8, "{:e}", d.b[0] / b1 - 1.0);
    assert!(d.residuals.iter().all(|r| *r < 1e-10), "{:?}", d.residuals);
    // from a perturbed guess b_1 is pinned only to the round-off floor of the
    // constraints, which see b_1 weakly
    let d = dec.extract(&dec.qtilde(&b), 0.9, &[1e-2, 0.0, 0.0, 0.0]).unwrap();
    assert!(d.converged);
    assert!((d.lambda - 1.0).abs() < 1e-8, "{:e}", d.lambda - 1.0);
    assert!((d.b[0] / b1 - 1.0).abs() < 1e-3, "{:e}", d.b[0] / b1 - 1.0);
    // rescaled, through interpolation
    let lambda = 1.5;
    let u = resample(&dec.qtilde(&b), &grid, 1.0 / lambda);
    let d = dec.extract(&u, 1.4, &[1e-2, 0.0, 0.0, 0.0]).unwrap();
    assert!(d.converged);
    assert!((d.lambda / lambda - 1.0).abs() < 1e-7, "{:e}", d.lambda / lambda - 1.0);
    assert!((d.b[0] / b1 - 1.0).abs() < 2e-3, "{:e}", d.b[0] / b1 - 1.0);
}

#[test]
fn extraction_separates_orthogonal_bump() {
    let f = fixture();
    let dec = decomposer(f);
    let grid = f.ctx.grid().clone();
    // smooth bump with <bump, L^i Phi_M> = 0, i = 0, 1, corrected by smooth terms
    // (subtracting L^i Phi_M itself would make it too rough to resample)
    let shape = |c: f64| GridFunction::from_fn(&grid, move |y| y * y * (-(y - c).powi(2)).exp());
    let (g, h1, h2) = (shape(2.0), shape(1.0), shape(3.0));
    let pr = |g: &GridFunction| -> Vec<f64> {
        f.phi.l_phi.iter().take(2).map(|e| weighted_inner(g, e).unwrap()).collect()
    };
    let (pg, p1, p2) = (pr(&g), pr(&h1), pr(&h2));
    let det = p1[0] * p2[1] - p2[0] * p1[1];
    let a1 = (pg[0] * p2[1] - p2[0] * pg[1]) / det;
    let a2 = (p1[0] * pg[1] - pg[0] * p1[1]) / det;
    let mut bump = g.clone();
    bump.axpy(-a1, &h1);
    bump.axpy(-a2, &h2);
    assert!(dec.relative_residuals(&bump).iter().all(|r| *r < 1e-12));
    let eps = 1e-3;
    let w = &f.ctx.gs.q + &bump.scale(eps);
    let lambda = 0.7;
    let u = resample(&w, &grid, 1.0 / lambda);
    let d = dec.extract(&u, 0.701, &[0.0; 4]).unwrap();
    assert!((d.lambda / lambda - 1.0).abs() < 1e-6, "{}", d.lambda);
    assert!(d.b[0].abs() < 1e-4, "{:?}", d.b);
    // the residual b_1 shifts q by b_1 T_1, a few percent of the bump
    let expected = bump.scale(eps);
    let err = dec.local_norm(&(&d.q - &expected)) / dec.local_norm(&expected);
    assert!(err < 0.1, "{err:e}");
}

#[test]
fn renormalized_ground_state_is_stationary() {
    let f = fixture();
    let dec = decomposer(f);
    let opts = RenormOptions {
        solver: SolverOptions { max_steps: 40, ..RenormOptions::default().solver },
        ..RenormOptions::default()
    };
    let q = &f.ctx.gs.q;
    let run = dec.evolve_renormalized(q, &[0.0; 4], 1.0, 100.0, 1e6, &opts);
    // b = 0 is the edge of the cone: the run may stop there, but mu must vanish
    let run = run.unwrap();
    for x in &run.samples {
        assert!(x.mu.abs() < 1e-5, "mu = {:e} at s = {}", x.mu, x.s);
    }
    assert!(rel_diff(&run.state, q) < 1e-5);
}

#[test]
fn modulation_tracks_the_scaling_rate() {
    let f = fixture();
    let dec = decomposer(f);
    let p = &f.ctx.params;
    let c1 = 1.0 / (2.0 - p.gamma);
    let b1 = 1e-2;
    let s0 = c1 / b1;
    let b0 = [b1, 0.0, 0.0, 0.0];
    let w0 = localize_qb(&f.ctx, &f.prof, &b0, ETA).unwrap();
    let opts = RenormOptions {
        solver: SolverOptions { max_steps: 2500, ..RenormOptions::default().solver },
        ..RenormOptions::default()
    };
    let run = dec.evolve_renormalized(&w0, &b0, 1.0, s0, 1e6, &opts).unwrap();
    let last = run.samples.last().unwrap();
    assert!(last.s > 1.5 * s0, "{}", run.stop_reason);
    assert!(run.max_constraint() <= 1e-8, "{:e}", run.max_constraint());
    assert!(run.samples.windows(2).all(|w| w[1].lambda < w[0].lambda));
    for x in run.samples.iter().skip(1) {
        assert!((-x.mu / x.b[0] - 1.0).abs() < 0.1, "s = {}: mu {} b1 {}", x.s, x.mu, x.b[0]);
        assert!((-x.mu * x.s / c1 - 1.0).abs() < 0.1, "s = {}: mu s / c1 = {}", x.s, -x.mu * x.s / c1);
    }
    // dt = lambda^2 ds
    let t_trap: f64 = run
        .samples
        .windows(2)
        .map(|w| 0.5 * (w[0].lambda.powi(2) + w[1].lambda.powi(2)) * (w[1].s - w[0].s))
        .sum();
    assert!((t_trap / last.t - 1.0).abs() < 1e-4);
}

#[test]
fn q_diagnostics() {
    let f = fixture();
    let grid = f.ctx.grid().clone();
    let zero = GridFunction::zeros(&grid);
    let d = diagnostics_q(&f.ctx, &zero, &[1, 2]);
    assert!(d.energies.iter().all(|(_, e)| *e == 0.0));
    assert!(d.lower.iter().all(|(_, _, e)| *e == 0.0));
    let chi = ymflow_core::cutoff::cutoff(&grid, 4.0);
    let g = &f.ctx.gs.lambda_q * &chi;
    let lg = f.ctx.apply_l(&g);
    let d = diagnostics_q(&f.ctx, &g, &[1]);
    let direct = weighted_inner(&lg, &lg).unwrap();
    assert!((d.energies[0].1 / direct - 1.0).abs() < 1e-12);
    assert_eq!(d.lower.len(), 3);
}

#[test]
fn rejects_bad_input() {
    let f = fixture();
    let grid = f.ctx.grid().clone();
    let bad = GridFunction::from_fn(&grid, |_| 2.0);
    assert!(evolve_physical(&bad, 11, 1.0, &[], &SolverOptions::default()).is_err());
    let dec = decomposer(f);
    assert!(dec.extract(&f.ctx.gs.q, 1.0, &[1e-2]).is_err());
    assert!(Decomposer::new(&f.ctx, &f.phi, &f.prof, 0).is_err());
}

#[test]
fn frames_agree_on_lambda() {
    let f = fixture();
    let dec = decomposer(f);
    let c1 = 1.0 / (2.0 - f.ctx.params.gamma);
    let b0 = [1e-2, 0.0, 0.0, 0.0];
    let w0 = localize_qb(&f.ctx, &f.prof, &b0, ETA).unwrap();
    let times = [10.0, 30.0, 45.0];
    let phys = evolve_physical(&w0, 11, 45.0, &times, &SolverOptions::default()).unwrap();
    let opts = RenormOptions {
        solver: SolverOptions { max_steps: 3000, ..RenormOptions::default().solver },
        stop_ratio: 0.3,
        ..RenormOptions::default()
    };
    let run = dec.evolve_renormalized(&w0, &b0, 1.0, c1 / b0[0], 1e6, &opts).unwrap();
    let (t, lam) = (run.t(), run.lambda());
    assert!(*t.last().unwrap() > 45.0, "{}", run.stop_reason);
    for (tp, u) in &phys.snapshots {
        let k = t.partition_point(|x| x < tp);
        let a = (tp - t[k - 1]) / (t[k] - t[k - 1]);
        let lr = lam[k - 1].powf(1.0 - a) * lam[k].powf(a);
        let b1 = run.samples[k].b[0];
        let d = dec.extract(u, lr, &[b1, 0.0, 0.0, 0.0]).unwrap();
        assert!((d.lambda / lr - 1.0).abs() < 0.05, "t = {tp}: {} vs {lr}", d.lambda);
    }
}
