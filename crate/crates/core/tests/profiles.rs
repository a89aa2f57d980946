use std::sync::{Arc, OnceLock};

use ymflow_core::bpoly::homogeneity;
use ymflow_core::ground_state::solve_ground_state;
use ymflow_core::linops::{build_profile_ladder, interior_relative, OperatorContext};
use ymflow_core::profiles::*;
use ymflow_core::{weighted_norm, Error, Grading, GridFunction, ModelParams, RadialGrid};

struct Fixture {
    ctx: OperatorContext,
    prof: ApproximateProfile,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let p = ModelParams::derive(11, 1, 4, 0.01, 20.0).unwrap();
        let g = Arc::new(RadialGrid::build(1e-4, 1e4, 3000, Grading::default(), p.weight_exp()).unwrap());
        let ctx = OperatorContext::new(solve_ground_state(&p, &g).unwrap()).unwrap();
        let set = build_profile_ladder(&ctx, 4).unwrap();
        let prof = build_sk(&ctx, &set, 4).unwrap();
        Fixture { ctx, prof }
    })
}

fn b_ray(b1: f64) -> Vec<f64> {
    vec![b1, 0.3 * b1 * b1, -0.2 * b1.powi(3), 0.1 * b1.powi(4)]
}

#[test]
fn taylor_weights_of_cubic() {
    let f = fixture();
    let w = taylor_weights(&f.ctx, 5);
    assert_eq!(w[4].max_abs(), 0.0);
    assert_eq!(w[5].max_abs(), 0.0);
    assert!(w[3].values().iter().all(|v| *v == 1.0));
    // f''(1)/2 = 0, approached like 3 (1 - Q)
    let tail = *w[2].values().last().unwrap();
    let omq = *f.ctx.gs.one_minus_q.values().last().unwrap();
    assert!((tail + 3.0 * omq).abs() < 1e-10, "{tail} {omq}");
}

#[test]
fn first_source_term() {
    let f = fixture();
    let f2 = f.prof.f_k(2);
    assert_eq!(f2.len(), 1);
    let (m, c) = f2.terms().iter().next().unwrap();
    assert_eq!(m, &vec![2, 0, 0, 0]);
    let o = c.origin_slope().unwrap();
    let t = c.tail_slope().unwrap();
    let g = f.ctx.params.gamma;
    assert!((o - 4.0).abs() / 4.0 < 0.05, "origin {o}");
    assert!((t + g).abs() / g < 0.05, "tail {t}");
}

#[test]
fn ladder_defects_match_differencing() {
    let f = fixture();
    let p = f.ctx.params;
    let set = build_profile_ladder(&f.ctx, 4).unwrap();
    let d = ladder_defects(&f.ctx, &set, 4).unwrap();
    let window = |g: &GridFunction| g.map(|y, v| if (1e-2..=10.0).contains(&y) { v } else { 0.0 });
    for k in 1..=4 {
        let fd = set.t[k].lambda().zip_map(&set.t[k], |_, l, v| l - (2.0 * k as f64 - p.gamma) * v);
        let rel = interior_relative(&(&window(&fd) - &window(&d[k - 1])), &window(&fd));
        assert!(rel < 1e-6, "k={k}: {rel:e}");
        let t = d[k - 1].tail_slope().unwrap();
        let expect = 2.0 * (k as f64 - 1.0) - p.gamma;
        assert!((t - expect).abs() / expect.abs() < 0.05, "k={k}: tail {t}");
    }
}

#[test]
fn homogeneity_and_triangularity() {
    let f = fixture();
    assert!(f.prof.homogeneous());
    assert!(f.prof.triangular());
    let b = b_ray(2e-2);
    for mu in [0.5f64, 2.0] {
        let bm: Vec<f64> = b.iter().enumerate().map(|(i, v)| v * mu.powi(i as i32 + 1)).collect();
        for k in 2..=6 {
            let s = f.prof.s_k(k);
            let a = s.evaluate(&b);
            let c = s.evaluate(&bm);
            let scale = mu.powi(k as i32);
            for (x, z) in a.values().iter().zip(c.values()) {
                assert!((z - scale * x).abs() <= 1e-13 * (scale * x).abs() + 1e-300, "k={k} mu={mu}");
            }
        }
    }
}

#[test]
fn stored_partials_match_differences() {
    let f = fixture();
    let b = b_ray(2e-2);
    for k in 2..=6 {
        for m in 1..=4 {
            let h = 1e-4 * b[m - 1].abs();
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp[m - 1] += h;
            bm[m - 1] -= h;
            let fd = (&f.prof.s_k(k).evaluate(&bp) - &f.prof.s_k(k).evaluate(&bm)).scale(0.5 / h);
            let exact = f.prof.ds[k - 2][m - 1].evaluate(&b);
            let n = weighted_norm(&exact);
            if n == 0.0 {
                assert_eq!(weighted_norm(&fd), 0.0, "k={k} m={m}");
                continue;
            }
            let rel = weighted_norm(&(&fd - &exact)) / n;
            assert!(rel < 1e-6, "k={k} m={m}: {rel:e}");
        }
    }
}

#[test]
fn coefficient_slopes() {
    let f = fixture();
    let rows = f.prof.slope_table(4).unwrap();
    assert_eq!(rows.len(), 1 + 2 + 4);
    for r in rows {
        assert_eq!(homogeneity(&r.monomial) as usize, r.k);
        assert!(r.max_relative_error() < 0.07, "{r:?}");
    }
}

#[test]
fn assembly() {
    let f = fixture();
    let zero = assemble_qb(&f.ctx, &f.prof, &[0.0; 4]).unwrap();
    assert_eq!(zero.q_b.values(), f.ctx.gs.q.values());
    // second-order remainder along b = (b_1, 0, ..)
    let t1 = &f.prof.t[0];
    let quad: Vec<f64> = [4e-3, 2e-3, 1e-3]
        .iter()
        .map(|&b1| {
            let qb = assemble_qb(&f.ctx, &f.prof, &[b1, 0.0, 0.0, 0.0]).unwrap();
            let r = qb.theta.zip_map(t1, |_, th, t| (th - b1 * t) / (b1 * b1));
            r.at(3.0)
        })
        .collect();
    let d1 = (quad[0] - quad[1]).abs();
    let d2 = (quad[1] - quad[2]).abs();
    assert!(d2 < 0.6 * d1 && quad[2].is_finite(), "{quad:?}");
    let qb = assemble_qb(&f.ctx, &f.prof, &b_ray(1e-3)).unwrap();
    let radius = 2.0 * 1e-3f64.powf(-0.505);
    let worst = qb.theta.y().iter().zip(qb.theta.values()).filter(|(y, _)| **y <= radius).fold(0.0_f64, |m, (_, v)| m.max(v.abs()));
    assert!(worst < 0.1, "{worst}");
    assert!(matches!(assemble_qb(&f.ctx, &f.prof, &[1e-2, 1.0, 0.0, 0.0]), Err(Error::ConeViolation(_))));
    assert!(matches!(assemble_qb(&f.ctx, &f.prof, &[-1e-2, 0.0, 0.0, 0.0]), Err(Error::ConeViolation(_))));
}

#[test]
fn localization() {
    let f = fixture();
    let p = f.ctx.params;
    assert!((p.b0(1e-2) - 10.0).abs() < 1e-12);
    assert!((p.b1_radius(1e-2) - 10f64.powf(1.01)).abs() < 1e-10);
    let b = b_ray(1e-2);
    let loc = localize_qb(&f.ctx, &f.prof, &b, 0.01).unwrap();
    let full = assemble_qb(&f.ctx, &f.prof, &b).unwrap().q_b;
    let r = p.b1_radius(1e-2);
    for i in 0..loc.len() {
        let y = loc.y()[i];
        if y >= 2.0 * r {
            assert_eq!(loc.values()[i], f.ctx.gs.q.values()[i]);
        }
        if y <= r {
            assert_eq!(loc.values()[i], full.values()[i]);
        }
    }
    assert!(matches!(
        localize_qb(&f.ctx, &f.prof, &[1e-9, 0.0, 0.0, 0.0], 0.01),
        Err(Error::DomainTooSmall(_))
    ));
}

#[test]
fn residual_structure() {
    let f = fixture();
    let zero = residual_psi(&f.ctx, &f.prof, &[0.0; 4], 0.01).unwrap();
    assert_eq!(zero.psi.max_abs(), 0.0);
    let b = b_ray(1e-2);
    let r = residual_psi(&f.ctx, &f.prof, &b, 0.01).unwrap();
    for i in 0..r.psi.len() {
        if r.psi.y()[i] <= r.b0 {
            assert_eq!(r.psi.values()[i], r.psi_b.values()[i]);
        }
    }
    assert_eq!(r.norms.len(), 5);
    assert!(r.b1s_ratio > 0.0 && r.b1s_ratio < 10.0);
    // against the operator applied with mesh stencils, where the residual is
    // above the stencil error
    let direct = flow_residual_direct(&f.ctx, &f.prof, &b, 0.01).unwrap();
    let band = |g: &GridFunction| g.map(|y, v| if (r.b0..=2.0 * r.b1_radius).contains(&y) { v } else { 0.0 });
    let rel = weighted_norm(&(&band(&direct) - &band(&r.psi))) / weighted_norm(&band(&r.psi));
    assert!(rel < 1e-4, "{rel:e}");
    let dropped = dropped_mass(&f.ctx, &f.prof, &b, 0.01).unwrap();
    assert!(dropped.is_finite() && dropped < 1.0, "{dropped}");
}

#[test]
fn residual_power_law() {
    let f = fixture();
    let b1s = [1e-3, 10f64.powf(-2.5), 1e-2];
    let eta = separating_eta(1e-2);
    for m in 0..2 {
        let fit = residual_exponent(&f.ctx, &f.prof, &b1s, m, eta).unwrap();
        assert!(fit.relative_error() < 0.15, "{fit:?}");
    }
}

#[test]
fn localization_term_dominates_below_separation() {
    // with B_1 < 2 B_0, b_1 (1 - chi_{B_1}) LambdaQ sets the scaling on y <= 2B_0
    let f = fixture();
    let b1s = [1e-3, 10f64.powf(-2.5), 1e-2];
    let delta = f.ctx.params.delta;
    for m in 0..2 {
        let fit = residual_exponent(&f.ctx, &f.prof, &b1s, m, 0.01).unwrap();
        let expect = 2.0 * m as f64 + 2.0 + 2.0 * (1.0 - delta);
        assert!((fit.slope - expect).abs() / expect < 0.05, "{fit:?}");
    }
}
