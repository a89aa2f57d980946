//! Run configuration: flags layered over an optional TOML file.
//!
//! File keys are the long flag names (`d`, `L`, `M`, `b1`, `s-end`, ...).
//! Flags override the file; unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::bail;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use ymflow_core::{ModelParams, Tier};

/// Configuration problems map to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    GroundState,
    Operators,
    Profile,
    Modulate,
    Evolve,
    Verify,
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FrameArg {
    Physical,
    Renormalized,
}

fn parse_tier(s: &str) -> Result<Tier, String> {
    s.parse().map_err(|e: ymflow_core::Error| e.to_string())
}

/// Every key a run accepts; all optional so that file and flags can be layered.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    /// Subcommand the file was written for (file only).
    #[arg(skip)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,

    /// Dimension (d > 10)
    #[arg(long)]
    pub d: Option<u32>,
    /// Blow-up index
    #[arg(long)]
    pub l: Option<u32>,
    /// Profile depth L (default max(l, 4))
    #[arg(long = "L")]
    #[serde(rename = "L")]
    pub depth: Option<u32>,
    /// Cutoff scale of Phi_M (default 20; evolve: 4)
    #[arg(long = "M")]
    #[serde(rename = "M")]
    pub m_cut: Option<f64>,
    /// Localization exponent (default 0.01; evolve: 0.9)
    #[arg(long)]
    pub eta: Option<f64>,

    /// Resolution tier: coarse, standard or fine
    #[arg(long, value_parser = parse_tier)]
    pub tier: Option<Tier>,
    /// Node count, overriding the tier
    #[arg(long)]
    pub n: Option<usize>,
    /// Inner radius, overriding the tier
    #[arg(long)]
    pub y_min: Option<f64>,
    /// Outer radius, overriding the tier
    #[arg(long)]
    pub y_max: Option<f64>,
    /// Random seed
    #[arg(long)]
    pub seed: Option<u64>,

    /// Initial b_1 (profile, evolve)
    #[arg(long)]
    pub b1: Option<f64>,
    /// Initial renormalized time (modulate)
    #[arg(long)]
    pub s0: Option<f64>,
    /// Final renormalized time (modulate)
    #[arg(long)]
    pub s1: Option<f64>,
    /// Number of output rows (modulate)
    #[arg(long)]
    pub n_out: Option<usize>,

    /// Evolution frame
    #[arg(long, value_enum)]
    pub frame: Option<FrameArg>,
    /// Renormalized end time
    #[arg(long)]
    pub s_end: Option<f64>,
    /// Physical end time
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Renormalized frame: snapshot every this many steps (0: none)
    #[arg(long)]
    pub snap_every: Option<usize>,
    /// Physical frame: number of equally spaced snapshots
    #[arg(long)]
    pub snapshots: Option<usize>,
    /// Step limit of the time integrator
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Stop once lambda falls below this fraction of lambda(s0)
    #[arg(long)]
    pub stop_ratio: Option<f64>,

    /// Criteria to run (verify), e.g. 3,5
    #[arg(long, value_delimiter = ',')]
    pub criteria: Option<Vec<u8>>,

    /// Output path: a CSV/JSON file, or a directory for evolve
    #[arg(long, visible_alias = "report")]
    pub out: Option<PathBuf>,
}

macro_rules! layer {
    ($dst:ident, $src:ident, $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl Settings {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_error(format!("config {}: {e}", path.display())))
    }

    /// `other` wins wherever it is set.
    pub fn overridden_by(mut self, other: &Settings) -> Self {
        layer!(
            self, other, command, d, l, depth, m_cut, eta, tier, n, y_min, y_max, seed, b1, s0, s1, n_out, frame,
            s_end, t_end, snap_every, snapshots, max_steps, stop_ratio, criteria, out
        );
        self
    }
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunConfig {
    pub command: Command,
    pub d: u32,
    pub l: u32,
    #[serde(rename = "L")]
    pub depth: u32,
    #[serde(rename = "M")]
    pub m_cut: f64,
    pub eta: f64,
    pub tier: Tier,
    pub n: usize,
    pub y_min: f64,
    pub y_max: f64,
    pub seed: u64,
    pub b1: f64,
    pub s0: f64,
    pub s1: f64,
    pub n_out: usize,
    pub frame: FrameArg,
    pub s_end: f64,
    pub t_end: f64,
    pub snap_every: usize,
    pub snapshots: usize,
    pub max_steps: usize,
    pub stop_ratio: f64,
    pub criteria: Vec<u8>,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub params: ModelParams,
}

impl RunConfig {
    /// Defaults, then the file, then the flags.
    pub fn resolve(command: Command, file: Option<&Path>, flags: &Settings) -> anyhow::Result<Self> {
        let base = match file {
            Some(p) => Settings::from_file(p)?,
            None => Settings::default(),
        };
        if let Some(c) = base.command {
            if c != command {
                bail!(config_error(format!("config file is for `{c}`, but `{command}` was requested")));
            }
        }
        let s = base.overridden_by(flags);
        let evolve = command == Command::Evolve;
        let d = s.d.unwrap_or(11);
        let l = s.l.unwrap_or(1);
        let depth = s.depth.unwrap_or(l.max(4));
        let m_cut = s.m_cut.unwrap_or(if evolve { 4.0 } else { 20.0 });
        let eta = s.eta.unwrap_or(if evolve { 0.9 } else { 0.01 });
        let params = ModelParams::derive(d, l, depth, eta, m_cut).map_err(|e| config_error(e.to_string()))?;
        let tier = s.tier.unwrap_or(Tier::Standard);
        let spec = tier.spec();
        let cfg = Self {
            command,
            d,
            l,
            depth,
            m_cut,
            eta,
            tier,
            n: s.n.unwrap_or(spec.n),
            y_min: s.y_min.unwrap_or(spec.y_min),
            y_max: s.y_max.unwrap_or(spec.y_max),
            seed: s.seed.unwrap_or(7),
            b1: s.b1.unwrap_or(1e-2),
            s0: s.s0.unwrap_or(10.0),
            s1: s.s1.unwrap_or(1e6),
            n_out: s.n_out.unwrap_or(600),
            frame: s.frame.unwrap_or(FrameArg::Renormalized),
            s_end: s.s_end.unwrap_or(1e6),
            t_end: s.t_end.unwrap_or(1.0),
            snap_every: s.snap_every.unwrap_or(0),
            snapshots: s.snapshots.unwrap_or(10),
            max_steps: s.max_steps.unwrap_or(40_000),
            stop_ratio: s.stop_ratio.unwrap_or(1e-3),
            criteria: s.criteria.clone().unwrap_or_default(),
            out: s.out.clone(),
            params,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> anyhow::Result<()> {
        let positive = [
            ("y-min", self.y_min),
            ("b1", self.b1),
            ("s0", self.s0),
            ("t-end", self.t_end),
            ("stop-ratio", self.stop_ratio),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bail!(config_error(format!("{k} must be positive and finite (got {v})")));
            }
        }
        if !(self.y_max > self.y_min) {
            bail!(config_error(format!("y-max must exceed y-min (got {} <= {})", self.y_max, self.y_min)));
        }
        if !(self.s1 > self.s0) {
            bail!(config_error(format!("s1 must exceed s0 (got {} <= {})", self.s1, self.s0)));
        }
        if self.n_out < 2 {
            bail!(config_error("n-out must be at least 2"));
        }
        if !(self.stop_ratio < 1.0) {
            bail!(config_error("stop-ratio must be below 1"));
        }
        if let Some(c) = self.criteria.iter().find(|c| !(1..=11).contains(*c)) {
            bail!(config_error(format!("no acceptance criterion {c} (valid: 1..11)")));
        }
        Ok(())
    }

    /// The configuration as a file that reproduces this run.
    pub fn to_settings(&self) -> Settings {
        Settings {
            command: Some(self.command),
            d: Some(self.d),
            l: Some(self.l),
            depth: Some(self.depth),
            m_cut: Some(self.m_cut),
            eta: Some(self.eta),
            tier: Some(self.tier),
            n: Some(self.n),
            y_min: Some(self.y_min),
            y_max: Some(self.y_max),
            seed: Some(self.seed),
            b1: Some(self.b1),
            s0: Some(self.s0),
            s1: Some(self.s1),
            n_out: Some(self.n_out),
            frame: Some(self.frame),
            s_end: Some(self.s_end),
            t_end: Some(self.t_end),
            snap_every: Some(self.snap_every),
            snapshots: Some(self.snapshots),
            max_steps: Some(self.max_steps),
            stop_ratio: Some(self.stop_ratio),
            criteria: Some(self.criteria.clone()),
            out: None,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_settings()).expect("settings serialize")
    }

    /// SHA-256 of the canonical TOML form (output paths excluded).
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn out_path(&self) -> anyhow::Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| config_error(format!("`{}` needs --out", self.command)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layering_and_defaults() {
        let file = Settings { d: Some(12), b1: Some(3e-3), ..Settings::default() };
        let flags = Settings { d: Some(13), ..Settings::default() };
        let s = file.overridden_by(&flags);
        assert_eq!(s.d, Some(13));
        assert_eq!(s.b1, Some(3e-3));
        let cfg = RunConfig::resolve(Command::Evolve, None, &Settings::default()).unwrap();
        assert_eq!((cfg.m_cut, cfg.eta), (4.0, 0.9));
        let cfg = RunConfig::resolve(Command::Profile, None, &Settings::default()).unwrap();
        assert_eq!((cfg.m_cut, cfg.eta, cfg.depth), (20.0, 0.01, 4));
        assert!((cfg.params.gamma - 1.6972243622680053).abs() < 1e-15);
    }

    #[test]
    fn emitted_config_round_trips() {
        let flags = Settings { l: Some(2), tier: Some(Tier::Coarse), ..Settings::default() };
        let cfg = RunConfig::resolve(Command::Modulate, None, &flags).unwrap();
        let back: Settings = toml::from_str(&cfg.to_toml()).unwrap();
        let again = RunConfig::resolve(Command::Modulate, None, &back).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_keys_and_values() {
        assert!(toml::from_str::<Settings>("dimension = 11").is_err());
        let e = RunConfig::resolve(Command::Profile, None, &Settings { d: Some(9), ..Settings::default() });
        assert!(e.unwrap_err().to_string().contains("d must exceed 10"));
        let e = RunConfig::resolve(Command::Verify, None, &Settings { criteria: Some(vec![12]), ..Settings::default() });
        assert!(e.is_err());
    }
}
