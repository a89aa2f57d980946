//! Resolution tiers: concrete meshes that the checks and the CLI refer to.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grading, RadialGrid};
use crate::ground_state::solve_ground_state;
use crate::linops::OperatorContext;
use crate::params::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Coarse,
    Standard,
    Fine,
}

/// Mesh for a tier. All tiers share the domain; only the node count changes
/// (fine doubles standard, standard doubles coarse).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TierSpec {
    pub n: usize,
    pub y_min: f64,
    pub y_max: f64,
    /// Tolerance on interior L L^{-1} round trips.
    pub roundtrip_tol: f64,
}

pub const Y_MIN: f64 = 1e-4;
pub const Y_MAX: f64 = 1e4;

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Coarse, Tier::Standard, Tier::Fine];

    pub fn spec(self) -> TierSpec {
        let n = match self {
            Tier::Coarse => 1500,
            Tier::Standard => 3000,
            Tier::Fine => 6000,
        };
        TierSpec { n, y_min: Y_MIN, y_max: Y_MAX, roundtrip_tol: 1e-4 }
    }

    /// The next finer tier, if any.
    pub fn refined(self) -> Option<Tier> {
        match self {
            Tier::Coarse => Some(Tier::Standard),
            Tier::Standard => Some(Tier::Fine),
            Tier::Fine => None,
        }
    }

    pub fn grid(self, params: &ModelParams) -> Result<Arc<RadialGrid>> {
        let s = self.spec();
        Ok(Arc::new(RadialGrid::build(s.y_min, s.y_max, s.n, Grading::default(), params.weight_exp())?))
    }

    /// Ground state and operators on this tier's mesh.
    pub fn context(self, params: &ModelParams) -> Result<OperatorContext> {
        let g = self.grid(params)?;
        OperatorContext::new(solve_ground_state(params, &g)?)
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Coarse => "coarse",
            Tier::Standard => "standard",
            Tier::Fine => "fine",
        })
    }
}

impl FromStr for Tier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coarse" => Ok(Tier::Coarse),
            "standard" => Ok(Tier::Standard),
            "fine" => Ok(Tier::Fine),
            other => Err(Error::InvalidParams(format!("unknown tier {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_order() {
        for t in Tier::ALL {
            assert_eq!(t.to_string().parse::<Tier>().unwrap(), t);
        }
        assert!("ultra".parse::<Tier>().is_err());
        assert_eq!(Tier::Fine.spec().n, 2 * Tier::Standard.spec().n);
        assert_eq!(Tier::Fine.refined(), None);
    }
}
