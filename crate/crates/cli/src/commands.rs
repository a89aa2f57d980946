use std::path::Path;
use std::sync::Arc;

use anyhow::Context;
use serde::Serialize;
use ymflow_core::linops::{build_profile_ladder, OperatorContext, SlopeRow};
use ymflow_core::modulation::{build_system, fit_blowup_rate, fit_rate, integrate, ModulationSystem, RateFit};
use ymflow_core::pde::{diagnostics_q, evolve_physical, Decomposer, QDiagnostics, RenormOptions, SolverOptions};
use ymflow_core::profiles::{assemble_qb, build_sk, dropped_mass, localize_qb, residual_psi, PsiNorms};
use ymflow_core::spectral::build_phi_m;
use ymflow_core::verify::{self, operator_errors, OperatorErrors, Report, VerifyConfig};
use ymflow_core::{weighted_norm, Grading, GridFunction, RadialGrid};

use crate::config::{config_error, FrameArg, RunConfig};
use crate::output::{beside, sibling, write_config, write_csv, write_json, Header};

fn grid(cfg: &RunConfig) -> anyhow::Result<Arc<RadialGrid>> {
    let g = RadialGrid::build(cfg.y_min, cfg.y_max, cfg.n, Grading::default(), cfg.params.weight_exp())
        .map_err(|e| config_error(e.to_string()))?;
    Ok(Arc::new(g))
}

fn context(cfg: &RunConfig) -> anyhow::Result<OperatorContext> {
    let g = grid(cfg)?;
    let gs = ymflow_core::ground_state::solve_ground_state(&cfg.params, &g).context("ground state")?;
    Ok(OperatorContext::new(gs)?)
}

fn columns(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn rows_of(fs: &[&GridFunction]) -> Vec<Vec<f64>> {
    let y = fs[0].y();
    (0..y.len()).map(|i| std::iter::once(y[i]).chain(fs.iter().map(|f| f.values()[i])).collect()).collect()
}

/// `b_k = c_k (b_1 / c_1)^k`: the explicit modulation ray through `b_1`.
fn b_ray(sys: &ModulationSystem, b1: f64) -> Vec<f64> {
    sys.explicit(sys.c[0] / b1)
}

#[derive(Serialize)]
#[serde(untagged)]
enum Fit {
    Ok(RateFit),
    Failed { error: String },
}

impl From<ymflow_core::Result<RateFit>> for Fit {
    fn from(r: ymflow_core::Result<RateFit>) -> Self {
        match r {
            Ok(f) => Fit::Ok(f),
            Err(e) => Fit::Failed { error: e.to_string() },
        }
    }
}

#[derive(Serialize)]
struct GroundStateSummary {
    gamma: f64,
    hbar: u32,
    delta: f64,
    alpha_fit: f64,
    gamma_fit: f64,
    tail_stderr: f64,
    relative_ode_residual: f64,
    l_lambda_q_relative: f64,
}

pub fn ground_state(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = cfg.out_path()?;
    let ctx = context(cfg)?;
    let gs = &ctx.gs;
    let header = Header::new(cfg, ctx.grid().descriptor());
    let rows = rows_of(&[&gs.q, &gs.lambda_q, &gs.v, &gs.z]);
    write_csv(out, &header, &columns(&["y", "Q", "LambdaQ", "V", "Z"]), &rows)?;
    let scale = gs.lambda_q.zip_map(&gs.z, |y, l, z| z * l / (y * y));
    let p = &cfg.params;
    let summary = GroundStateSummary {
        gamma: p.gamma,
        hbar: p.hbar,
        delta: p.delta,
        alpha_fit: gs.alpha_fit,
        gamma_fit: gs.gamma_fit,
        tail_stderr: gs.tail_stderr,
        relative_ode_residual: gs.relative_ode_residual(),
        l_lambda_q_relative: weighted_norm(&ctx.apply_l(&gs.lambda_q)) / weighted_norm(&scale),
    };
    write_json(&sibling(out, "json"), &header, cfg, &summary)?;
    write_config(&sibling(out, "config.toml"), cfg)
}

#[derive(Serialize)]
struct KernelSlopes {
    origin: f64,
    origin_expected: f64,
    tail: f64,
    tail_expected: f64,
    decaying_tail: f64,
    decaying_tail_expected: f64,
    wronskian_max: f64,
}

#[derive(Serialize)]
struct PhiSummary {
    m_cut: f64,
    c: Vec<f64>,
    orthogonality: Vec<f64>,
    max_orthogonality_defect: f64,
    gram_diagonal_error: f64,
    gram_offdiagonal_error: f64,
}

#[derive(Serialize)]
struct OperatorsReport {
    seed: u64,
    invariants: OperatorErrors,
    l_lambda_q_relative: f64,
    gamma: KernelSlopes,
    ladder_residuals: Vec<f64>,
    slope_table: Vec<SlopeRow>,
    phi: PhiSummary,
}

pub fn operators(cfg: &RunConfig, dump: bool) -> anyhow::Result<()> {
    let out = cfg.out_path()?;
    let ctx = context(cfg)?;
    let p = &cfg.params;
    let set = build_profile_ladder(&ctx, cfg.depth as usize)?;
    let phi = build_phi_m(&ctx, &set, cfg.m_cut)?;
    let d = p.d as f64;
    let w = ctx.wronskian_defect(&ctx.gamma);
    let wmax = w.values()[2..w.len() - 2].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let gs = &ctx.gs;
    let scale = gs.lambda_q.zip_map(&gs.z, |y, l, z| z * l / (y * y));
    let report = OperatorsReport {
        seed: cfg.seed,
        invariants: operator_errors(&ctx, cfg.seed)?,
        l_lambda_q_relative: weighted_norm(&ctx.apply_l(&gs.lambda_q)) / weighted_norm(&scale),
        gamma: KernelSlopes {
            origin: ctx.gamma.origin_slope()?,
            origin_expected: 2.0 - d,
            tail: ctx.gamma.tail_slope()?,
            tail_expected: -p.gamma,
            decaying_tail: ctx.gamma_dec.tail_slope()?,
            decaying_tail_expected: p.gamma + 4.0 - d,
            wronskian_max: wmax,
        },
        ladder_residuals: set.residuals.clone(),
        slope_table: set.slope_table(p.gamma)?,
        phi: PhiSummary {
            m_cut: phi.m_cut,
            c: phi.c.clone(),
            orthogonality: phi.orthogonality.clone(),
            max_orthogonality_defect: phi.max_orthogonality_defect(),
            gram_diagonal_error: phi.gram_diagonal_error(),
            gram_offdiagonal_error: phi.gram_offdiagonal_error(),
        },
    };
    let header = Header::new(cfg, ctx.grid().descriptor());
    write_json(out, &header, cfg, &report)?;
    if dump {
        for (k, t) in set.t.iter().enumerate() {
            let name = format!("T_{k}");
            write_csv(&sibling(out, &format!("{name}.csv")), &header, &columns(&["y", &name]), &rows_of(&[t]))?;
        }
    }
    write_config(&sibling(out, "config.toml"), cfg)
}

#[derive(Serialize)]
struct ProfileNorms {
    b: Vec<f64>,
    b0: f64,
    b1_radius: f64,
    b1s_ratio: f64,
    dropped_mass: f64,
    norms: Vec<PsiNorms>,
}

pub fn profile(cfg: &RunConfig, norms: Option<&Path>) -> anyhow::Result<()> {
    let out = cfg.out_path()?;
    let ctx = context(cfg)?;
    let set = build_profile_ladder(&ctx, cfg.depth as usize)?;
    let prof = build_sk(&ctx, &set, cfg.depth as usize)?;
    let b = b_ray(&build_system(&cfg.params)?, cfg.b1);
    let qb = assemble_qb(&ctx, &prof, &b).map_err(|e| config_error(e.to_string()))?;
    let local = localize_qb(&ctx, &prof, &b, cfg.eta).map_err(|e| config_error(e.to_string()))?;
    let r = residual_psi(&ctx, &prof, &b, cfg.eta)?;
    let header = Header::new(cfg, ctx.grid().descriptor());
    let cols = columns(&["y", "Q_b", "Qtilde_b", "Psi_b", "Psitilde_b"]);
    write_csv(out, &header, &cols, &rows_of(&[&qb.q_b, &local, &r.psi_b, &r.psi]))?;
    let body = ProfileNorms {
        dropped_mass: dropped_mass(&ctx, &prof, &b, cfg.eta)?,
        b,
        b0: r.b0,
        b1_radius: r.b1_radius,
        b1s_ratio: r.b1s_ratio,
        norms: r.norms,
    };
    let path = match norms {
        Some(n) => beside(out, n)?,
        None => sibling(out, "json"),
    };
    write_json(&path, &header, cfg, &body)?;
    write_config(&sibling(out, "config.toml"), cfg)
}

#[derive(Serialize)]
struct ModulationSummary {
    system: ModulationSystem,
    rows: usize,
    cone_exit: Option<f64>,
    underflow: Option<f64>,
    rate_fit: Fit,
    expected_exponent: f64,
}

pub fn modulate(cfg: &RunConfig) -> anyhow::Result<()> {
    let out = cfg.out_path()?;
    if cfg.s0 < 1.0 {
        anyhow::bail!(config_error("s0 must be at least 1"));
    }
    let sys = build_system(&cfg.params)?;
    let tr = integrate(&sys, &sys.explicit(cfg.s0), 1.0, cfg.s0, cfg.s1, cfg.n_out)?;
    let (l, depth) = (sys.l(), sys.depth());
    let mut cols = columns(&["s", "t", "lambda"]);
    cols.extend((1..=depth).map(|k| format!("b{k}")));
    cols.extend((1..=l).map(|k| format!("U{k}")));
    cols.extend((1..=l).map(|k| format!("V{k}")));
    let rows: Vec<Vec<f64>> = tr
        .samples
        .iter()
        .map(|x| {
            let (u, v) = sys.linearized_coordinates(&x.b, x.s);
            [x.s, x.t, x.lambda].into_iter().chain(x.b.iter().copied()).chain(u).chain(v).collect()
        })
        .collect();
    let header = Header::new(cfg, "none (modulation ODE)");
    write_csv(out, &header, &cols, &rows)?;
    let summary = ModulationSummary {
        rows: rows.len(),
        cone_exit: tr.cone_exit,
        underflow: tr.underflow,
        rate_fit: Fit::from(fit_blowup_rate(&tr, &cfg.params)),
        expected_exponent: cfg.l as f64 / cfg.params.gamma,
        system: sys,
    };
    write_json(&sibling(out, "json"), &header, cfg, &summary)?;
    write_config(&sibling(out, "config.toml"), cfg)
}

#[derive(Serialize)]
struct RenormDiagnostics {
    frame: &'static str,
    s0: f64,
    b0: Vec<f64>,
    steps: usize,
    stop_reason: String,
    max_constraint: f64,
    lambda_decay: f64,
    rate_fit: Fit,
    expected_exponent: f64,
    snapshots: Vec<String>,
    final_q: QDiagnostics,
}

#[derive(Serialize)]
struct PhysicalDiagnostics {
    frame: &'static str,
    b0: Vec<f64>,
    steps: usize,
    terminated: Option<String>,
    t_reached: f64,
    energy_released: f64,
    max_relative_energy_increase: f64,
    snapshots: Vec<String>,
}

pub fn evolve(cfg: &RunConfig) -> anyhow::Result<()> {
    let dir = cfg.out_path()?.to_path_buf();
    let ctx = context(cfg)?;
    let depth = cfg.depth as usize;
    let set = build_profile_ladder(&ctx, depth)?;
    let prof = build_sk(&ctx, &set, depth)?;
    let sys = build_system(&cfg.params)?;
    let b0 = b_ray(&sys, cfg.b1);
    let w0 = localize_qb(&ctx, &prof, &b0, cfg.eta).map_err(|e| config_error(e.to_string()))?;
    let header = Header::new(cfg, ctx.grid().descriptor());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let snap_dir = dir.join("snapshots");
    let mut snapshot_files = vec![];
    match cfg.frame {
        FrameArg::Renormalized => {
            let phi = build_phi_m(&ctx, &set, cfg.m_cut)?;
            let mut dec = Decomposer::new(&ctx, &phi, &prof, 1)?;
            dec.eta = cfg.eta;
            let s0 = sys.c[0] / cfg.b1;
            if !(cfg.s_end > s0) {
                anyhow::bail!(config_error(format!("s-end must exceed s0 = c_1 / b_1 = {s0}")));
            }
            let opts = RenormOptions {
                solver: SolverOptions { max_steps: cfg.max_steps, ..RenormOptions::default().solver },
                stop_ratio: cfg.stop_ratio,
                snap_every: cfg.snap_every,
                ..RenormOptions::default()
            };
            let run = dec.evolve_renormalized(&w0, &b0, 1.0, s0, cfg.s_end, &opts)?;
            let mut cols = columns(&["s", "t", "lambda", "mu"]);
            cols.extend((1..=depth).map(|k| format!("b{k}")));
            cols.extend(columns(&["constraint", "q_norm"]));
            cols.extend(opts.e2m_orders.iter().map(|m| format!("E{}", 2 * m)));
            cols.push("ds".into());
            let rows: Vec<Vec<f64>> = run
                .samples
                .iter()
                .map(|x| {
                    let head = [x.s, x.t, x.lambda, x.mu];
                    let tail = [x.constraint, x.q_norm];
                    head.into_iter().chain(x.b.iter().copied()).chain(tail).chain(x.e2m.iter().copied()).chain([x.ds]).collect()
                })
                .collect();
            write_csv(&dir.join("trajectory.csv"), &header, &cols, &rows)?;
            for (i, (s, w, q)) in run.snapshots.iter().enumerate() {
                let name = format!("snap_{i:05}.csv");
                let mut h = header.clone();
                h.grid = format!("{} s={s:.16e}", h.grid);
                write_csv(&snap_dir.join(&name), &h, &columns(&["y", "w", "q"]), &rows_of(&[w, q]))?;
                snapshot_files.push(format!("snapshots/{name}"));
            }
            let (t, lam) = (run.t(), run.lambda());
            let last = run.samples.last().expect("at least the initial sample");
            let q = &run.state - &dec.qtilde(&last.b);
            let diag = RenormDiagnostics {
                frame: "renormalized",
                s0,
                b0,
                steps: run.samples.len() - 1,
                stop_reason: run.stop_reason.clone(),
                max_constraint: run.max_constraint(),
                lambda_decay: lam[0] / lam[lam.len() - 1],
                rate_fit: Fit::from(fit_rate(&t, &lam, cfg.params.gamma / cfg.l as f64)),
                expected_exponent: cfg.l as f64 / cfg.params.gamma,
                snapshots: snapshot_files,
                final_q: diagnostics_q(&ctx, &q, &opts.e2m_orders),
            };
            write_json(&dir.join("diagnostics.json"), &header, cfg, &diag)?;
        }
        FrameArg::Physical => {
            let times: Vec<f64> =
                (1..=cfg.snapshots).map(|k| cfg.t_end * k as f64 / cfg.snapshots as f64).collect();
            let opts = SolverOptions { max_steps: cfg.max_steps, ..SolverOptions::default() };
            let run = evolve_physical(&w0, cfg.d, cfg.t_end, &times, &opts)?;
            let cols = columns(&["t", "energy", "energy_change", "sup_du", "dt"]);
            let rows: Vec<Vec<f64>> =
                run.samples.iter().map(|x| vec![x.t, x.energy, x.energy_change, x.sup_du, x.dt]).collect();
            write_csv(&dir.join("trajectory.csv"), &header, &cols, &rows)?;
            for (i, (t, u)) in run.snapshots.iter().enumerate() {
                let name = format!("snap_{i:05}.csv");
                let mut h = header.clone();
                h.grid = format!("{} t={t:.16e}", h.grid);
                write_csv(&snap_dir.join(&name), &h, &columns(&["y", "u"]), &rows_of(&[u]))?;
                snapshot_files.push(format!("snapshots/{name}"));
            }
            let last = run.samples.last().expect("at least the initial sample");
            let diag = PhysicalDiagnostics {
                frame: "physical",
                b0,
                steps: run.samples.len() - 1,
                terminated: run.terminated.clone(),
                t_reached: last.t,
                energy_released: -last.energy_change,
                max_relative_energy_increase: run.max_energy_increase(),
                snapshots: snapshot_files,
            };
            write_json(&dir.join("diagnostics.json"), &header, cfg, &diag)?;
        }
    }
    write_config(&dir.join("config.toml"), cfg)
}

/// Named verify targets and the criteria they select.
pub const TARGETS: [(&str, &[u8]); 12] = [
    ("all", &[]),
    ("constants", &[1]),
    ("ground-state", &[2]),
    ("operators", &[3]),
    ("ladder", &[4]),
    ("coercivity", &[5]),
    ("profiles", &[6]),
    ("residual", &[7]),
    ("spectrum", &[8]),
    ("rate", &[9]),
    ("pde", &[10]),
    ("stationarity", &[11]),
];

fn select(cfg: &RunConfig, targets: &[String]) -> anyhow::Result<Vec<u8>> {
    let mut ids = cfg.criteria.clone();
    for t in targets {
        let found = TARGETS.iter().find(|(n, _)| n == t).map(|(_, c)| c.to_vec());
        match (found, t.parse::<u8>()) {
            (Some(c), _) => ids.extend(c),
            (None, Ok(i)) if (1..=11).contains(&i) => ids.push(i),
            _ => {
                let names: Vec<&str> = TARGETS.iter().map(|(n, _)| *n).collect();
                anyhow::bail!(config_error(format!(
                    "unknown verify target {t:?} (use 1..11 or one of {})",
                    names.join(", ")
                )));
            }
        }
    }
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

fn threads() -> usize {
    std::env::var("YMFLOW_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs the suite; `Ok(false)` when a criterion failed.
pub fn verify(cfg: &RunConfig, targets: &[String]) -> anyhow::Result<bool> {
    let spec = cfg.tier.spec();
    let vc = VerifyConfig {
        tier: cfg.tier,
        n_override: (cfg.n != spec.n).then_some(cfg.n),
        domain: (cfg.y_min != spec.y_min || cfg.y_max != spec.y_max).then_some((cfg.y_min, cfg.y_max)),
        seed: cfg.seed,
        only: select(cfg, targets)?,
        threads: threads(),
    };
    let report: Report = verify::run_all(&vc);
    for c in &report.criteria {
        eprintln!("{}", c.summary());
    }
    let header = Header::new(cfg, report.grid.clone());
    match &cfg.out {
        Some(p) => {
            write_json(p, &header, cfg, &report)?;
            write_config(&sibling(p, "config.toml"), cfg)?;
        }
        None => {
            let doc = serde_json::json!({ "header": header, "config": cfg, "report": report });
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
    }
    Ok(report.passed)
}
