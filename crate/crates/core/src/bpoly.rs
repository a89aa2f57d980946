//! Polynomials in `b = (b_1, .., b_L)` with grid-function coefficients.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::Result;
use crate::grid::{GridFunction, RadialGrid};

/// Exponent vector `(m_1, .., m_L)`.
pub type Monomial = Vec<u32>;

/// `sum_k k m_k`.
pub fn homogeneity(m: &[u32]) -> u32 {
    m.iter().enumerate().map(|(k, e)| (k as u32 + 1) * e).sum()
}

fn monomial_value(m: &[u32], b: &[f64]) -> f64 {
    m.iter().zip(b).fold(1.0, |acc, (e, bk)| acc * bk.powi(*e as i32))
}

#[derive(Debug, Clone)]
pub struct BPolynomial {
    grid: Arc<RadialGrid>,
    vars: usize,
    terms: BTreeMap<Monomial, GridFunction>,
}

impl BPolynomial {
    pub fn zero(grid: &Arc<RadialGrid>, vars: usize) -> Self {
        Self { grid: grid.clone(), vars, terms: BTreeMap::new() }
    }

    /// `coeff * prod_k b_k^{m_k}`.
    pub fn monomial(m: Monomial, coeff: GridFunction) -> Self {
        let grid = coeff.grid().clone();
        let vars = m.len();
        let mut terms = BTreeMap::new();
        terms.insert(m, coeff);
        Self { grid, vars, terms }
    }

    /// `b_k * coeff` with `k` 1-based.
    pub fn linear(vars: usize, k: usize, coeff: GridFunction) -> Self {
        let mut m = vec![0; vars];
        m[k - 1] = 1;
        Self::monomial(m, coeff)
    }

    pub fn vars(&self) -> usize {
        self.vars
    }

    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn terms(&self) -> &BTreeMap<Monomial, GridFunction> {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Common degree `sum_k k m_k` of all monomials, `None` when mixed or empty.
    pub fn degree(&self) -> Option<u32> {
        let mut it = self.terms.keys().map(|m| homogeneity(m));
        let first = it.next()?;
        it.all(|h| h == first).then_some(first)
    }

    pub fn max_degree(&self) -> u32 {
        self.terms.keys().map(|m| homogeneity(m)).max().unwrap_or(0)
    }

    /// Whether any monomial contains `b_k` (1-based).
    pub fn depends_on(&self, k: usize) -> bool {
        k >= 1 && k <= self.vars && self.terms.keys().any(|m| m[k - 1] > 0)
    }

    pub fn add_term(&mut self, m: Monomial, c: f64, coeff: &GridFunction) {
        debug_assert_eq!(m.len(), self.vars);
        match self.terms.get_mut(&m) {
            Some(v) => v.axpy(c, coeff),
            None => {
                self.terms.insert(m, coeff.scale(c));
            }
        }
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &Self) {
        for (m, g) in &other.terms {
            self.add_term(m.clone(), c, g);
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map_coefficients(|g| g.scale(c))
    }

    /// Multiplies every coefficient node-wise by `w`.
    pub fn mul_function(&self, w: &GridFunction) -> Self {
        self.map_coefficients(|g| g * w)
    }

    /// Multiplies by `b_k` (1-based).
    pub fn mul_b(&self, k: usize) -> Self {
        let mut out = Self::zero(&self.grid, self.vars);
        for (m, g) in &self.terms {
            let mut m = m.clone();
            m[k - 1] += 1;
            out.terms.insert(m, g.clone());
        }
        out
    }

    /// Product, keeping only monomials whose degree lies in `keep`.
    pub fn mul_filtered(&self, other: &Self, keep: impl Fn(u32) -> bool) -> Self {
        let mut out = Self::zero(&self.grid, self.vars);
        for (ma, ga) in &self.terms {
            for (mb, gb) in &other.terms {
                let m: Monomial = ma.iter().zip(mb).map(|(a, b)| a + b).collect();
                if keep(homogeneity(&m)) {
                    out.add_term(m, 1.0, &(ga * gb));
                }
            }
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        self.mul_filtered(other, |_| true)
    }

    /// Monomials of degree exactly `h`.
    pub fn part(&self, h: u32) -> Self {
        self.filter(|d| d == h)
    }

    pub fn filter(&self, keep: impl Fn(u32) -> bool) -> Self {
        let terms = self
            .terms
            .iter()
            .filter(|(m, _)| keep(homogeneity(m)))
            .map(|(m, g)| (m.clone(), g.clone()))
            .collect();
        Self { grid: self.grid.clone(), vars: self.vars, terms }
    }

    pub fn map_coefficients(&self, f: impl Fn(&GridFunction) -> GridFunction) -> Self {
        let terms = self.terms.iter().map(|(m, g)| (m.clone(), f(g))).collect();
        Self { grid: self.grid.clone(), vars: self.vars, terms }
    }

    /// Coefficient-wise map that may fail; the error carries the monomial.
    pub fn try_map_coefficients(
        &self,
        mut f: impl FnMut(&Monomial, &GridFunction) -> Result<GridFunction>,
    ) -> Result<Self> {
        let mut terms = BTreeMap::new();
        for (m, g) in &self.terms {
            terms.insert(m.clone(), f(m, g)?);
        }
        Ok(Self { grid: self.grid.clone(), vars: self.vars, terms })
    }

    /// Exact partial derivative in `b_k` (1-based).
    pub fn partial(&self, k: usize) -> Self {
        let mut out = Self::zero(&self.grid, self.vars);
        for (m, g) in &self.terms {
            let e = m[k - 1];
            if e > 0 {
                let mut m = m.clone();
                m[k - 1] -= 1;
                out.add_term(m, e as f64, g);
            }
        }
        out
    }

    pub fn evaluate(&self, b: &[f64]) -> GridFunction {
        assert_eq!(b.len(), self.vars, "b has {} entries, polynomial has {} variables", b.len(), self.vars);
        let mut out = GridFunction::zeros(&self.grid);
        for (m, g) in &self.terms {
            let c = monomial_value(m, b);
            if c != 0.0 {
                out.axpy(c, g);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grading;

    fn grid() -> Arc<RadialGrid> {
        Arc::new(RadialGrid::build(1e-2, 1e2, 200, Grading::default(), 8.0).unwrap())
    }

    #[test]
    fn algebra() {
        let g = grid();
        let one = GridFunction::from_fn(&g, |_| 1.0);
        let y = GridFunction::from_fn(&g, |y| y);
        // p = b_1 y + b_2
        let mut p = BPolynomial::linear(2, 1, y.clone());
        p.axpy(1.0, &BPolynomial::linear(2, 2, one.clone()));
        assert_eq!(p.degree(), None);
        let sq = p.mul(&p);
        assert_eq!(sq.len(), 3);
        assert_eq!(sq.part(2).degree(), Some(2));
        let b = [0.3, -0.7];
        let direct = p.evaluate(&b);
        let prod = sq.evaluate(&b);
        for (a, c) in direct.values().iter().zip(prod.values()) {
            assert!((a * a - c).abs() < 1e-12 * (1.0 + c.abs()));
        }
        let d1 = sq.partial(1).evaluate(&b);
        for ((a, yy), c) in direct.values().iter().zip(g.nodes()).zip(d1.values()) {
            assert!((2.0 * a * yy - c).abs() < 1e-12 * (1.0 + c.abs()));
        }
        assert!(sq.depends_on(2) && !p.partial(2).depends_on(2));
        assert_eq!(BPolynomial::zero(&g, 2).evaluate(&b).max_abs(), 0.0);
        assert_eq!(p.mul_b(2).max_degree(), 4);
    }
}
