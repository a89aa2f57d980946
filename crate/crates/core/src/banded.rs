//! Banded matrices with LU factorization (partial pivoting).

use crate::error::{Error, Result};

/// `n x n` matrix with `kl` sub- and `ku` super-diagonals. Row `i` stores
/// columns `i - kl ..= i + ku + kl`; the extra `kl` columns hold pivoting fill-in.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        Self { n, kl, ku, width, data: vec![0.0; n * width] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.kl < i || j > i + self.ku + self.kl {
            return None;
        }
        Some(i * self.width + (j + self.kl - i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |k| self.data[k])
    }

    /// Adds `v` at `(i, j)`; panics outside the declared band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.kl >= i && j <= i + self.ku, "({i}, {j}) outside the band");
        let k = self.slot(i, j).unwrap();
        self.data[k] += v;
    }

    pub fn clear_row(&mut self, i: usize) {
        let w = self.width;
        self.data[i * w..(i + 1) * w].iter_mut().for_each(|x| *x = 0.0);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// In-place LU with row pivoting inside the band.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let last = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.get(k, k).abs();
            for i in k + 1..=last {
                let v = self.get(i, k).abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > 0.0) || !best.is_finite() {
                return Err(Error::Numerical(format!("singular banded matrix at column {k}")));
            }
            piv[k] = p;
            let jmax = (k + self.ku + self.kl).min(n - 1);
            if p != k {
                for j in k..=jmax {
                    let a = self.get(k, j);
                    let b = self.get(p, j);
                    let (sa, sb) = (self.slot(k, j).unwrap(), self.slot(p, j));
                    self.data[sa] = b;
                    match sb {
                        Some(s) => self.data[s] = a,
                        None => debug_assert!(a == 0.0),
                    }
                }
            }
            let pivot = self.get(k, k);
            for i in k + 1..=last {
                let si = self.slot(i, k).unwrap();
                let m = self.data[si] / pivot;
                self.data[si] = m;
                if m != 0.0 {
                    for j in k + 1..=jmax {
                        let a = self.get(k, j);
                        if a != 0.0 {
                            let s = self.slot(i, j).unwrap();
                            self.data[s] -= m * a;
                        }
                    }
                }
            }
        }
        Ok(BandLu { m: self, piv })
    }
}

#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let a = &self.m;
        let n = a.n;
        let mut x = rhs.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let last = (k + a.kl).min(n - 1);
            for i in k + 1..=last {
                x[i] -= a.get(i, k) * x[k];
            }
        }
        for k in (0..n).rev() {
            let jmax = (k + a.ku + a.kl).min(n - 1);
            let mut s = x[k];
            for j in k + 1..=jmax {
                s -= a.get(k, j) * x[j];
            }
            x[k] = s / a.get(k, k);
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, kl, ku) = (40, 3, 4);
        let mut b = BandMatrix::zeros(n, kl, ku);
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                // weak diagonal so pivoting is exercised
                let v = rng.random::<f64>() - 0.5 + if i == j { 0.1 } else { 0.0 };
                b.add(i, j, v);
                d[(i, j)] = v;
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let y = b.mul_vec(&rhs);
        let yd = &d * DVector::from_column_slice(&rhs);
        for i in 0..n {
            assert!((y[i] - yd[i]).abs() < 1e-12);
        }
        let x = b.factor().unwrap().solve(&rhs);
        let xd = d.lu().solve(&DVector::from_column_slice(&rhs)).unwrap();
        for i in 0..n {
            assert!((x[i] - xd[i]).abs() < 1e-9 * (1.0 + xd[i].abs()), "{i}: {} {}", x[i], xd[i]);
        }
    }

    #[test]
    fn singular_is_reported() {
        let b = BandMatrix::zeros(5, 1, 1);
        assert!(b.factor().is_err());
    }
}
