//! Model constants derived from the dimension and the blow-up index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tail exponent of the ground state, `(d - 4 - sqrt((d-6)^2 - 12)) / 2`.
pub fn gamma_of(d: u32) -> f64 {
    let d = d as f64;
    0.5 * (d - 4.0 - ((d - 6.0).powi(2) - 12.0).sqrt())
}

/// The scalar nonlinearity `f(u) = u(1-u)(2-u)` and its derivatives.
pub mod nonlinearity {
    #[inline]
    pub fn f(u: f64) -> f64 {
        u * (1.0 - u) * (2.0 - u)
    }

    /// `f` from `u` and `r = 1 - u` carried separately.
    #[inline]
    pub fn f_split(u: f64, r: f64) -> f64 {
        u * r * (1.0 + r)
    }

    #[inline]
    pub fn df(u: f64) -> f64 {
        3.0 * u * u - 6.0 * u + 2.0
    }

    #[inline]
    pub fn d2f(u: f64) -> f64 {
        6.0 * u - 6.0
    }

    #[inline]
    pub fn d3f(_u: f64) -> f64 {
        6.0
    }

    /// Potential `F` with `F' = f`, `F(u) = u^2 (2-u)^2 / 4`.
    #[inline]
    pub fn potential(u: f64) -> f64 {
        0.25 * u * u * (2.0 - u) * (2.0 - u)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub d: u32,
    pub gamma: f64,
    pub hbar: u32,
    pub delta: f64,
    /// Blow-up index `l`.
    pub l: u32,
    /// Profile depth `L`.
    pub depth: u32,
    /// `L + hbar + 1`.
    pub bbk: u32,
    pub eta: f64,
    /// Cutoff scale of the orthogonality generator.
    pub m_cut: f64,
    pub bstar: f64,
}

impl ModelParams {
    pub fn derive(d: u32, l: u32, depth: u32, eta: f64, m_cut: f64) -> Result<Self> {
        if d <= 10 {
            return Err(Error::InvalidParams(format!("d must exceed 10 (got d={d})")));
        }
        if l < 1 {
            return Err(Error::InvalidParams("blow-up index l must be at least 1".into()));
        }
        if depth < l {
            return Err(Error::InvalidParams(format!(
                "profile depth L={depth} must be at least l={l}"
            )));
        }
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::InvalidParams(format!("eta must lie in (0, 1) (got {eta})")));
        }
        if !(m_cut >= 1.0) {
            return Err(Error::InvalidParams(format!("M must be at least 1 (got {m_cut})")));
        }
        let gamma = gamma_of(d);
        if 2.0 * l as f64 <= gamma {
            return Err(Error::InvalidParams(format!(
                "blow-up index too small: 2l={} must exceed gamma={gamma}",
                2 * l
            )));
        }
        let half = 0.5 * ((d as f64 - 2.0) / 2.0 - gamma);
        let hbar = half.floor() as u32;
        let delta = half - hbar as f64;
        let p = Self {
            d,
            gamma,
            hbar,
            delta,
            l,
            depth,
            bbk: depth + hbar + 1,
            eta,
            m_cut,
            bstar: 0.1,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.to_string()));
        if self.d <= 10 {
            return bad("d must exceed 10");
        }
        if !(self.gamma > 1.0 && self.gamma < 2.0) {
            return bad("gamma outside (1, 2)");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta outside (0, 1)");
        }
        if 2.0 * self.l as f64 <= self.gamma {
            return bad("blow-up index too small");
        }
        if self.depth < self.l {
            return bad("L < l");
        }
        Ok(())
    }

    /// `d - 3`, the exponent of the radial weight.
    pub fn weight_exp(&self) -> f64 {
        self.d as f64 - 3.0
    }

    /// Inner localization radius `B_0 = b_1^{-1/2}`.
    pub fn b0(&self, b1: f64) -> f64 {
        b1.powf(-0.5)
    }

    /// Outer localization radius `B_1 = B_0^{1+eta}`.
    pub fn b1_radius(&self, b1: f64) -> f64 {
        self.b0(b1).powf(1.0 + self.eta)
    }

    /// Rate exponent `l / gamma` of `lambda(t) ~ (T - t)^{l/gamma}`.
    pub fn rate_exponent(&self) -> f64 {
        self.l as f64 / self.gamma
    }

    /// Exponent `l / (2l - gamma)` of `lambda(s) ~ s^{-l/(2l-gamma)}`.
    pub fn s_exponent(&self) -> f64 {
        let l = self.l as f64;
        l / (2.0 * l - self.gamma)
    }
}
