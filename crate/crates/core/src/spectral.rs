//! Orthogonality generator `Phi_M` and numerical coercivity certificates.
//!
//! Each inequality is a pair of quadratic forms `lhs(u) >= c rhs(u)`. On a
//! compactly supported spline subspace the best constant is the smallest
//! generalized eigenvalue of the form matrices; random samples from the same
//! subspace give the per-sample ratios.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bspline::SplineBasis;
use crate::cutoff::Cutoff;
use crate::error::{Error, Result};
use crate::grid::{weighted_inner, weighted_norm, GridFunction, RadialGrid};
use crate::linops::{OperatorContext, ProfileSet};
use crate::params::ModelParams;

use std::sync::Arc;

/// Pass threshold for the coercivity ratios.
pub const RATIO_FLOOR: f64 = 1e-3;
/// Largest relative inner product accepted as "orthogonal".
pub const CONSTRAINT_TOL: f64 = 1e-10;
/// Half-width of the excluded neighbourhood around a resonant weight exponent.
pub const RESONANCE_GAP: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct PhiM {
    pub m_cut: f64,
    pub phi: GridFunction,
    pub c: Vec<f64>,
    /// Coefficients from the triangular recursion, for comparison with `c`.
    pub c_recursion: Vec<f64>,
    /// `<chi_M LambdaQ, LambdaQ>`.
    pub denom: f64,
    /// `gram[i][k] = <L^i T_k, Phi_M>`.
    pub gram: Vec<Vec<f64>>,
    /// `<LambdaQ, L^m Phi_M> / denom` for `m = 1..=L` with mesh stencils; zero in
    /// the continuum, reported as a discretization diagnostic.
    pub adjoint_kernel: Vec<f64>,
    /// `<Phi_M, T_k> / (|Phi_M| |T_k|)` for `k = 0..=L`.
    pub orthogonality: Vec<f64>,
    /// `L^m Phi_M` for `m = 0..=L`.
    pub l_phi: Vec<GridFunction>,
}

impl PhiM {
    /// Largest relative deviation of the Gram diagonal from `(-1)^k denom`.
    pub fn gram_diagonal_error(&self) -> f64 {
        (0..self.gram.len())
            .map(|k| {
                let expect = if k % 2 == 0 { self.denom } else { -self.denom };
                (self.gram[k][k] - expect).abs() / self.denom.abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest off-diagonal Gram entry relative to `denom`.
    pub fn gram_offdiagonal_error(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (i, row) in self.gram.iter().enumerate() {
            for (k, v) in row.iter().enumerate() {
                if i != k {
                    worst = worst.max(v.abs() / self.denom.abs());
                }
            }
        }
        worst
    }

    /// Largest `|<Phi_M, T_k>| / (|Phi_M| |T_k|)` over `k >= 1`.
    pub fn max_orthogonality_defect(&self) -> f64 {
        self.orthogonality.iter().skip(1).map(|v| v.abs()).fold(0.0, f64::max)
    }
}

/// `Phi_M = sum_k c_k L^k (chi_M LambdaQ)` with `c_0 = 1` and
/// `c_k = (-1)^{k+1} sum_{j<k} c_j <L^j chi_M LambdaQ, T_k> / <chi_M LambdaQ, LambdaQ>`.
pub fn build_phi_m(ctx: &OperatorContext, set: &ProfileSet, m_cut: f64) -> Result<PhiM> {
    let grid = ctx.grid();
    if 2.0 * m_cut >= grid.y_max() {
        return Err(Error::DomainTooSmall(format!(
            "cutoff support 2M = {} exceeds y_max = {}",
            2.0 * m_cut,
            grid.y_max()
        )));
    }
    let depth = set.depth();
    let lq = &ctx.gs.lambda_q;
    let chi = Cutoff::new(m_cut);
    let base = &chi.on_grid(grid) * lq;
    // images[m] = L^m (chi LambdaQ), m = 0..=2L; all but the first live on [M, 2M]
    let mut images = vec![base.clone(), ctx.l_chi_lambda_q(&chi)];
    for _ in 2..=2 * depth {
        let next = ctx.apply_l(images.last().unwrap());
        images.push(next);
    }
    let denom = weighted_inner(&base, lq)?;
    if !(denom.abs() > 1e-12 * weighted_norm(&base) * weighted_norm(lq)) {
        return Err(Error::DegenerateDenominator(denom));
    }
    // g[k][j] = <L^j chi LambdaQ, T_k>
    let mut g = vec![vec![0.0; depth + 1]; depth + 1];
    for (k, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = weighted_inner(&images[j], &set.t[k])?;
        }
    }
    let mut c_recursion = vec![1.0];
    for k in 1..=depth {
        let acc: f64 = c_recursion.iter().enumerate().map(|(j, cj)| cj * g[k][j]).sum();
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        c_recursion.push(sign * acc / denom);
    }
    // the recursion drops <L^j chi LambdaQ, T_k> for j > k and uses the exact
    // diagonal; on the mesh these hold only to discretization accuracy, which
    // the growth |c_k| ~ M^{2k} amplifies. Solve the full system instead.
    let mut c = vec![1.0];
    if depth > 0 {
        c.extend(solve_equilibrated(
            DMatrix::from_fn(depth, depth, |r, s| g[r + 1][s + 1]),
            DVector::from_fn(depth, |r, _| -g[r + 1][0]),
        )
        .ok_or(Error::DegenerateDenominator(denom))?
        .iter());
    }
    let combine = |shift: usize| {
        let mut out = GridFunction::zeros(grid);
        for (k, ck) in c.iter().enumerate() {
            out.axpy(*ck, &images[k + shift]);
        }
        out
    };
    let l_phi: Vec<GridFunction> = (0..=depth).map(combine).collect();
    let phi = l_phi[0].clone();
    // <T_k, Phi_M> summed term by term: forming Phi_M pointwise first cancels
    // terms of size |c_k| ~ M^{2k}
    let t_phi: Vec<f64> = g
        .iter()
        .map(|row| row.iter().zip(&c).map(|(gj, cj)| gj * cj).sum())
        .collect();
    // <L^i T_k, Phi_M>: the ladder gives L^i T_k = (-1)^i T_{k-i} for i <= k,
    // and (-1)^k L^{i-k} LambdaQ for i > k, differentiated exactly along the ODE
    let kernel_powers: Vec<GridFunction> = (0..=depth).map(|m| ctx.gs.l_power_lambda_q(m)).collect();
    let mut gram = vec![vec![0.0; depth + 1]; depth + 1];
    for (i, row) in gram.iter_mut().enumerate() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = if i <= k {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                s * t_phi[k - i]
            } else {
                let s = if k % 2 == 0 { 1.0 } else { -1.0 };
                s * weighted_inner(&kernel_powers[i - k], &phi)?
            };
        }
    }
    let adjoint_kernel = (1..=depth)
        .map(|m| Ok(weighted_inner(lq, &l_phi[m])? / denom))
        .collect::<Result<Vec<_>>>()?;
    let np = weighted_norm(&phi);
    let orthogonality = set.t.iter().zip(&t_phi).map(|(t, v)| v / (np * weighted_norm(t))).collect();
    Ok(PhiM { m_cut, phi, c, c_recursion, denom, gram, adjoint_kernel, orthogonality, l_phi })
}

/// Solves `a x = b` after scaling rows and columns to unit max-norm, with one
/// step of iterative refinement.
fn solve_equilibrated(a: DMatrix<f64>, b: DVector<f64>) -> Option<DVector<f64>> {
    let n = a.nrows();
    let rs: Vec<f64> = (0..n).map(|i| 1.0 / a.row(i).amax()).collect();
    let scaled_rows = DMatrix::from_fn(n, n, |i, j| a[(i, j)] * rs[i]);
    let cs: Vec<f64> = (0..n).map(|j| 1.0 / scaled_rows.column(j).amax()).collect();
    let m = DMatrix::from_fn(n, n, |i, j| scaled_rows[(i, j)] * cs[j]);
    let rhs = DVector::from_fn(n, |i, _| b[i] * rs[i]);
    let lu = m.clone().lu();
    let mut z = lu.solve(&rhs)?;
    let r = &rhs - &m * &z;
    z += lu.solve(&r)?;
    Some(DVector::from_fn(n, |j, _| z[j] * cs[j]))
}

/// Smallest `lambda` with `K c = lambda R c`, dropping directions where `R`
/// is numerically singular.
pub fn min_generalized_eigenvalue(k: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(r.clone());
    let smax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > 1e-12 * smax)
        .collect();
    let n = r.nrows();
    let mut w = DMatrix::zeros(n, keep.len());
    for (col, &i) in keep.iter().enumerate() {
        let s = eig.eigenvalues[i].sqrt();
        for row in 0..n {
            w[(row, col)] = eig.eigenvectors[(row, i)] / s;
        }
    }
    let c = w.transpose() * k * &w;
    let c = (&c + c.transpose()) * 0.5;
    SymmetricEigen::new(c).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

type Op<'a> = Box<dyn Fn(&GridFunction) -> GridFunction + 'a>;
type Weight<'a> = Box<dyn Fn(f64) -> f64 + 'a>;

/// One term `int |op u|^2 rho(y) y^{d-3} dy`.
pub struct Term<'a> {
    op: Op<'a>,
    rho: Weight<'a>,
}

impl<'a> Term<'a> {
    pub fn new(op: impl Fn(&GridFunction) -> GridFunction + 'a, rho: impl Fn(f64) -> f64 + 'a) -> Self {
        Self { op: Box::new(op), rho: Box::new(rho) }
    }
}

/// Sum of weighted squared norms.
#[derive(Default)]
pub struct QuadForm<'a> {
    terms: Vec<Term<'a>>,
}

impl<'a> QuadForm<'a> {
    pub fn new() -> Self {
        Self { terms: vec![] }
    }

    pub fn term(
        mut self,
        op: impl Fn(&GridFunction) -> GridFunction + 'a,
        rho: impl Fn(f64) -> f64 + 'a,
    ) -> Self {
        self.terms.push(Term::new(op, rho));
        self
    }

    pub fn eval(&self, u: &GridFunction) -> f64 {
        let w = u.grid().quad_weights();
        self.terms
            .iter()
            .map(|t| {
                let img = (t.op)(u);
                img.values()
                    .iter()
                    .zip(u.y())
                    .zip(w)
                    .map(|((v, &y), w)| w * (t.rho)(y) * v * v)
                    .sum::<f64>()
            })
            .sum()
    }

    /// Form matrix on `basis`.
    pub fn matrix(&self, basis: &[GridFunction]) -> DMatrix<f64> {
        let n = basis.len();
        let mut m = DMatrix::zeros(n, n);
        for t in &self.terms {
            let imgs: Vec<GridFunction> = basis.iter().map(|b| (t.op)(b)).collect();
            let grid = basis[0].grid();
            let wr: Vec<f64> = grid
                .quad_weights()
                .iter()
                .zip(grid.nodes())
                .map(|(w, &y)| w * (t.rho)(y))
                .collect();
            for i in 0..n {
                for j in i..n {
                    let s: f64 = imgs[i]
                        .values()
                        .iter()
                        .zip(imgs[j].values())
                        .zip(&wr)
                        .map(|((a, b), w)| w * a * b)
                        .sum();
                    m[(i, j)] += s;
                    if i != j {
                        m[(j, i)] += s;
                    }
                }
            }
        }
        m
    }
}

/// The inequalities that can be certified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "lemma", rename_all = "snake_case")]
pub enum Inequality {
    /// `int |A* u|^2 rho >= C (int |u'|^2 rho + int u^2 rho / y^2)`, `rho = 1/(y^{2i}(1+y^{2 alpha}))`.
    AStar { i: u32, alpha: f64 },
    /// Same with `A`, `rho = 1/(y^{2i}(1+y^{2p}))`; needs `<u, Phi_M> = 0` above the resonance.
    A { i: u32, p: f64 },
    /// `int |L u|^2 rho` against second-order and `A`-based weighted norms.
    L { i: u32, k: u32 },
    /// `E_{2k+2}(u) = int |L^{k+1} u|^2` against the lower iterates.
    Iterate { k: u32 },
}

impl Inequality {
    pub fn id(&self) -> String {
        match self {
            Inequality::AStar { i, alpha } => format!("A*-coercivity(i={i}, alpha={alpha})"),
            Inequality::A { i, p } => format!("A-coercivity(i={i}, p={p})"),
            Inequality::L { i, k } => format!("L-coercivity(i={i}, k={k})"),
            Inequality::Iterate { k } => format!("iterated-L-coercivity(k={k})"),
        }
    }
}

/// A coercivity inequality ready to be evaluated.
pub struct CoercivityProblem<'a> {
    pub inequality: Inequality,
    pub lhs: QuadForm<'a>,
    pub rhs: QuadForm<'a>,
    pub constraints: Vec<GridFunction>,
    pub constraint_desc: String,
    grid: Arc<RadialGrid>,
}

/// Result of evaluating one test function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleOutcome {
    Ratio(f64),
    ConstraintNotSatisfied { residual: f64 },
}

impl<'a> CoercivityProblem<'a> {
    pub fn new(ctx: &'a OperatorContext, phi: &PhiM, inequality: Inequality) -> Result<Self> {
        let p = ctx.params;
        let d = p.d as f64;
        let crit_a = d - 2.0 * p.gamma - 4.0;
        let a = move |u: &GridFunction| ctx.apply_a(u);
        let l = move |u: &GridFunction| ctx.apply_l(u);
        let id = |u: &GridFunction| u.clone();
        let dy = |u: &GridFunction| u.derivative();
        let (lhs, rhs, constraints, desc) = match inequality {
            Inequality::AStar { i, alpha } => {
                if alpha < 0.0 {
                    return Err(Error::InvalidParams("alpha must be non-negative".into()));
                }
                let rho = move |y: f64| 1.0 / (y.powi(2 * i as i32) * (1.0 + y.powf(2.0 * alpha)));
                let lhs = QuadForm::new().term(move |u: &GridFunction| ctx.apply_astar(u), rho);
                let rhs = QuadForm::new().term(dy, rho).term(id, move |y| rho(y) / (y * y));
                (lhs, rhs, vec![], "none".to_string())
            }
            Inequality::A { i, p: pw } => {
                let e = 2.0 * i as f64 + 2.0 * pw - crit_a;
                if e.abs() < RESONANCE_GAP {
                    return Err(Error::InvalidParams(format!(
                        "weight exponent within {RESONANCE_GAP} of the resonance (2i+2p-(d-2gamma-4) = {e:.3})"
                    )));
                }
                let rho = move |y: f64| 1.0 / (y.powi(2 * i as i32) * (1.0 + y.powf(2.0 * pw)));
                let lhs = QuadForm::new().term(a, rho);
                let rhs = QuadForm::new().term(dy, rho).term(id, move |y| rho(y) / (y * y));
                if e > 0.0 {
                    (lhs, rhs, vec![phi.phi.clone()], "<u, Phi_M> = 0".to_string())
                } else {
                    (lhs, rhs, vec![], "none".to_string())
                }
            }
            Inequality::L { i, k } => {
                let i2 = 2 * i as i32;
                let k2 = 2.0 * k as f64;
                let rho = move |y: f64| 1.0 / (y.powi(i2) * (1.0 + y.powf(k2)));
                let lhs = QuadForm::new().term(l, rho);
                let rhs = QuadForm::new()
                    .term(|u: &GridFunction| u.second_derivative(), rho)
                    .term(dy, move |y| 1.0 / (y.powi(i2) * (1.0 + y.powf(k2 + 2.0))))
                    .term(id, move |y| 1.0 / (y.powi(i2 + 2) * (1.0 + y.powf(k2 + 2.0))))
                    .term(a, move |y| rho(y) / (y * y))
                    .term(id, move |y| 1.0 / (y.powi(i2) * (1.0 + y.powf(k2 + 4.0))));
                if 2.0 * i as f64 + k2 > d - 2.0 * p.gamma - 6.0 {
                    (lhs, rhs, vec![phi.phi.clone()], "<u, Phi_M> = 0".to_string())
                } else {
                    (lhs, rhs, vec![], "none".to_string())
                }
            }
            Inequality::Iterate { k } => {
                let k = k as usize;
                if k + 1 > phi.l_phi.len() {
                    return Err(Error::InvalidParams(format!(
                        "iterate k={k} needs Phi_M images up to L^{k}, only {} available",
                        phi.l_phi.len() - 1
                    )));
                }
                let lk1 = move |u: &GridFunction| ctx.apply_l_pow(u, k + 1);
                let lhs = QuadForm::new().term(lk1, |_| 1.0);
                let mut rhs = QuadForm::new();
                for j in 0..=k {
                    let e = 4.0 * (k - j) as f64;
                    rhs = rhs.term(move |u: &GridFunction| ctx.apply_l_pow(u, j), move |y: f64| {
                        1.0 / (y.powi(4) * (1.0 + y.powf(e)))
                    });
                }
                rhs = rhs.term(move |u: &GridFunction| ctx.apply_a(&ctx.apply_l_pow(u, k)), |y: f64| {
                    1.0 / (y * y)
                });
                for j in 0..k {
                    let e = 4.0 * (k - j - 1) as f64;
                    rhs = rhs.term(move |u: &GridFunction| ctx.apply_a(&ctx.apply_l_pow(u, j)), move |y: f64| {
                        1.0 / (y.powi(6) * (1.0 + y.powf(e)))
                    });
                }
                let hbar = p.hbar as usize;
                if k >= hbar {
                    let cons: Vec<GridFunction> = phi.l_phi[..=k - hbar].to_vec();
                    let desc = format!("<u, L^m Phi_M> = 0 for 0 <= m <= {}", k - hbar);
                    (lhs, rhs, cons, desc)
                } else {
                    (lhs, rhs, vec![], "none".to_string())
                }
            }
        };
        Ok(Self { inequality, lhs, rhs, constraints, constraint_desc: desc, grid: ctx.grid().clone() })
    }

    /// Largest `|<u, c>| / (|u| |c|)` over the constraints.
    pub fn constraint_residual(&self, u: &GridFunction) -> f64 {
        let nu = weighted_norm(u);
        self.constraints
            .iter()
            .map(|c| weighted_inner(u, c).unwrap().abs() / (nu * weighted_norm(c)))
            .fold(0.0, f64::max)
    }

    /// `lhs(u) / rhs(u)`, refusing test functions that violate the constraints.
    pub fn evaluate(&self, u: &GridFunction) -> SampleOutcome {
        let residual = self.constraint_residual(u);
        if residual > CONSTRAINT_TOL {
            return SampleOutcome::ConstraintNotSatisfied { residual };
        }
        SampleOutcome::Ratio(self.lhs.eval(u) / self.rhs.eval(u))
    }

    /// Certifies the inequality on `basis` and on `samples` random members of it.
    pub fn check(&self, basis: &SplineBasis, samples: usize, seed: u64) -> Result<CoercivityReport> {
        let grid = &self.grid;
        let raw: Vec<GridFunction> = (0..basis.len()).map(|j| basis.on_grid(j, grid)).collect();
        let r_raw = self.rhs.matrix(&raw);
        // normalize so that every basis function has unit right-hand form
        let fns: Vec<GridFunction> = raw
            .iter()
            .enumerate()
            .map(|(j, f)| f.scale(1.0 / r_raw[(j, j)].sqrt()))
            .collect();
        let k = self.lhs.matrix(&fns);
        let r = self.rhs.matrix(&fns);
        let n = fns.len();
        let m = self.constraints.len();
        let mut b = DMatrix::zeros(m, n);
        for (i, c) in self.constraints.iter().enumerate() {
            for (j, f) in fns.iter().enumerate() {
                b[(i, j)] = weighted_inner(f, c)?;
            }
        }
        let proj = if m > 0 {
            let bbt = &b * b.transpose();
            let inv = bbt
                .clone()
                .cholesky()
                .ok_or_else(|| Error::RankDeficient("constraint Gram matrix is singular".into()))?
                .inverse();
            let cond = SymmetricEigen::new(bbt).eigenvalues;
            let (lo, hi) = cond.iter().fold((f64::INFINITY, 0.0_f64), |(l, h), v| (l.min(*v), h.max(*v)));
            if !(lo > 1e-14 * hi) {
                return Err(Error::RankDeficient(format!(
                    "constraint Gram matrix condition {:.2e}",
                    hi / lo
                )));
            }
            DMatrix::identity(n, n) - b.transpose() * inv * &b
        } else {
            DMatrix::identity(n, n)
        };
        let null = if m > 0 {
            let eig = SymmetricEigen::new((&proj + proj.transpose()) * 0.5);
            let cols: Vec<DVector<f64>> = (0..n)
                .filter(|&i| eig.eigenvalues[i] > 0.5)
                .map(|i| eig.eigenvectors.column(i).into_owned())
                .collect();
            DMatrix::from_columns(&cols)
        } else {
            DMatrix::identity(n, n)
        };
        let kn = null.transpose() * &k * &null;
        let rn = null.transpose() * &r * &null;
        let rayleigh_min = min_generalized_eigenvalue(&kn, &rn);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sample_min = f64::INFINITY;
        let mut worst_constraint = 0.0_f64;
        for _ in 0..samples {
            let c0 = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let c = &proj * c0;
            let mut u = GridFunction::zeros(grid);
            for (cj, f) in c.iter().zip(&fns) {
                u.axpy(*cj, f);
            }
            worst_constraint = worst_constraint.max(self.constraint_residual(&u));
            let ratio = (c.transpose() * &k * &c)[(0, 0)] / (c.transpose() * &r * &c)[(0, 0)];
            sample_min = sample_min.min(ratio);
        }
        let pass = samples > 0 && sample_min >= RATIO_FLOOR && worst_constraint <= CONSTRAINT_TOL;
        Ok(CoercivityReport {
            inequality: self.inequality.id(),
            constraint: self.constraint_desc.clone(),
            rayleigh_min,
            sample_min,
            bound: RATIO_FLOOR,
            samples,
            basis_size: n,
            seed,
            max_constraint_residual: worst_constraint,
            pass,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoercivityReport {
    pub inequality: String,
    pub constraint: String,
    /// Smallest generalized eigenvalue on the (constrained) spline subspace.
    pub rayleigh_min: f64,
    /// Smallest ratio over the random samples.
    pub sample_min: f64,
    pub bound: f64,
    pub samples: usize,
    pub basis_size: usize,
    pub seed: u64,
    pub max_constraint_residual: f64,
    pub pass: bool,
}

/// Default spline subspace for coercivity checks: degree 5 on
/// `[10 y_min, y_max / 10]`.
pub fn default_basis(grid: &RadialGrid, intervals: usize) -> Result<SplineBasis> {
    SplineBasis::new(10.0 * grid.y_min(), grid.y_max() / 10.0, intervals, 5)
}

/// `((d - 4 - 2 alpha) / 2)^2`.
pub fn hardy_constant(params: &ModelParams, alpha: f64) -> f64 {
    let d = params.d as f64;
    ((d - 4.0 - 2.0 * alpha) / 2.0).powi(2)
}

/// `(int_1 |u'|^2 y^{-2 alpha}, int_1 u^2 y^{-2-2 alpha})` with the measure `y^{d-3} dy`.
pub fn hardy_forms(alpha: f64, u: &GridFunction, du: &GridFunction) -> (f64, f64) {
    let grid = u.grid();
    let one = grid.one_index();
    let f1: Vec<f64> = du.values().iter().zip(u.y()).map(|(v, y)| v * v * y.powf(-2.0 * alpha)).collect();
    let f2: Vec<f64> = u
        .values()
        .iter()
        .zip(u.y())
        .map(|(v, y)| v * v * y.powf(-2.0 - 2.0 * alpha))
        .collect();
    let a: f64 = grid.interval_integrals(&f1, true)[one..].iter().sum();
    let b: f64 = grid.interval_integrals(&f2, true)[one..].iter().sum();
    (a, b)
}

/// Certifies the Hardy inequality on `[1, y_max/10]` for test functions with `u(1) = 0`.
/// Passes when both the subspace minimum and every sample stay above 95% of the constant.
pub fn hardy_check(
    params: &ModelParams,
    grid: &Arc<RadialGrid>,
    alpha: f64,
    intervals: usize,
    samples: usize,
    seed: u64,
) -> Result<CoercivityReport> {
    let d = params.d as f64;
    if alpha < 0.0 {
        return Err(Error::InvalidParams("alpha must be non-negative".into()));
    }
    if (alpha - (d - 4.0) / 2.0).abs() < 1e-12 {
        return Err(Error::InvalidParams("alpha = (d-4)/2 is excluded".into()));
    }
    let basis = SplineBasis::new(1.0_f64.max(10.0 * grid.y_min()), grid.y_max() / 10.0, intervals, 3)?;
    let n = basis.len();
    let vals: Vec<GridFunction> = (0..n).map(|j| basis.on_grid(j, grid)).collect();
    let ders: Vec<GridFunction> = (0..n).map(|j| basis.dy_on_grid(j, grid)).collect();
    let w = grid.quad_weights();
    let y = grid.nodes();
    let wk: Vec<f64> = (0..y.len()).map(|i| w[i] * y[i].powf(-2.0 * alpha)).collect();
    let wm: Vec<f64> = (0..y.len()).map(|i| w[i] * y[i].powf(-2.0 - 2.0 * alpha)).collect();
    let mut km = DMatrix::zeros(n, n);
    let mut mm = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let a: f64 = (0..y.len()).map(|q| wk[q] * ders[i].values()[q] * ders[j].values()[q]).sum();
            let b: f64 = (0..y.len()).map(|q| wm[q] * vals[i].values()[q] * vals[j].values()[q]).sum();
            km[(i, j)] = a;
            km[(j, i)] = a;
            mm[(i, j)] = b;
            mm[(j, i)] = b;
        }
    }
    // diagonal scaling
    let s: Vec<f64> = (0..n).map(|i| 1.0 / mm[(i, i)].sqrt()).collect();
    let km = DMatrix::from_fn(n, n, |i, j| km[(i, j)] * s[i] * s[j]);
    let mm = DMatrix::from_fn(n, n, |i, j| mm[(i, j)] * s[i] * s[j]);
    let rayleigh_min = min_generalized_eigenvalue(&km, &mm);
    let constant = hardy_constant(params, alpha);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample_min = f64::INFINITY;
    for _ in 0..samples {
        let c = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let ratio = (c.transpose() * &km * &c)[(0, 0)] / (c.transpose() * &mm * &c)[(0, 0)];
        sample_min = sample_min.min(ratio);
    }
    let bound = 0.95 * constant;
    Ok(CoercivityReport {
        inequality: format!("hardy(alpha={alpha}, constant={constant})"),
        constraint: "u(1) = 0".into(),
        rayleigh_min,
        sample_min,
        bound,
        samples,
        basis_size: n,
        seed,
        max_constraint_residual: 0.0,
        pass: rayleigh_min >= bound && sample_min >= bound,
    })
}
