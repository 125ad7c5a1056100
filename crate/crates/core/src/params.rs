//! Hardware and scene parameter sets plus the `key=value` config format.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Result, SimError};

/// Pulse containment constant: the pulse is considered fully inside the
/// period when `tau` lies in `[c·sigma_t, t_r - c·sigma_t]`.
pub const PULSE_CONTAINMENT: f64 = 5.0;

/// Laser and detector constants, fixed for a calibrated system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    /// Laser repetition period.
    pub t_r: f64,
    /// Detector dead time (nonparalyzable).
    pub t_d: f64,
    /// Half pulse width of the Gaussian laser pulse.
    pub sigma_t: f64,
    /// Number of acquisition cycles per pixel.
    pub n_cycles: u64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            t_r: 10.0,
            t_d: 8.0,
            sigma_t: 0.1,
            n_cycles: 1000,
        }
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_r.is_finite() && self.t_r > 0.0) {
            return Err(SimError::param(format!(
                "t_r must be > 0, got {}",
                self.t_r
            )));
        }
        if !(self.t_d.is_finite() && self.t_d >= 0.0) {
            return Err(SimError::param(format!(
                "t_d must be >= 0, got {}",
                self.t_d
            )));
        }
        if self.t_d >= self.t_r {
            return Err(SimError::param(format!(
                "t_d ({}) must be smaller than t_r ({})",
                self.t_d, self.t_r
            )));
        }
        if !(self.sigma_t.is_finite() && self.sigma_t > 0.0) {
            return Err(SimError::param(format!(
                "sigma_t must be > 0, got {}",
                self.sigma_t
            )));
        }
        if PULSE_CONTAINMENT * 2.0 * self.sigma_t >= self.t_r {
            return Err(SimError::param(format!(
                "sigma_t ({}) too wide for period {}",
                self.sigma_t, self.t_r
            )));
        }
        if self.n_cycles == 0 {
            return Err(SimError::param("n_cycles must be positive"));
        }
        Ok(())
    }

    /// Upper bound on registrations over the acquisition window.
    pub fn max_registrations(&self) -> f64 {
        if self.t_d == 0.0 {
            f64::INFINITY
        } else {
            (self.n_cycles as f64 * self.t_r / self.t_d).floor() + 1.0
        }
    }
}

/// Scene-dependent parameters for one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvParams {
    /// Pulse delay (encodes depth), in `[0, t_r)`.
    pub tau: f64,
    /// Signal level S, photons per cycle.
    pub s_level: f64,
    /// Background level B, photons per cycle.
    pub b_level: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            tau: 4.0,
            s_level: 2.0,
            b_level: 1.0,
        }
    }
}

/// Signal-to-background ratio. `B = 0` is reported as [`Sbr::Infinite`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sbr {
    Finite(f64),
    Infinite,
}

impl Sbr {
    pub fn value(self) -> f64 {
        match self {
            Sbr::Finite(v) => v,
            Sbr::Infinite => f64::INFINITY,
        }
    }
}

impl EnvParams {
    pub fn new(tau: f64, s_level: f64, b_level: f64) -> Self {
        Self {
            tau,
            s_level,
            b_level,
        }
    }

    /// Per-cycle energy `Q = S + B`.
    pub fn energy(&self) -> f64 {
        self.s_level + self.b_level
    }

    pub fn sbr(&self) -> Sbr {
        if self.b_level > 0.0 {
            Sbr::Finite(self.s_level / self.b_level)
        } else {
            Sbr::Infinite
        }
    }

    pub fn validate(&self, sys: &SystemParams) -> Result<()> {
        if !(self.s_level.is_finite() && self.s_level >= 0.0) {
            return Err(SimError::param(format!(
                "S must be >= 0, got {}",
                self.s_level
            )));
        }
        if !(self.b_level.is_finite() && self.b_level >= 0.0) {
            return Err(SimError::param(format!(
                "B must be >= 0, got {}",
                self.b_level
            )));
        }
        if !(self.tau.is_finite() && self.tau >= 0.0 && self.tau < sys.t_r) {
            return Err(SimError::param(format!(
                "tau must lie in [0, {}), got {}",
                sys.t_r, self.tau
            )));
        }
        let margin = PULSE_CONTAINMENT * sys.sigma_t;
        if self.s_level > 0.0 && (self.tau < margin || self.tau > sys.t_r - margin) {
            log::warn!(
                "pulse at tau={} is not contained in [{margin}, {}]; signal energy leaks out of the period",
                self.tau,
                sys.t_r - margin
            );
        }
        Ok(())
    }
}

/// Parsed `key=value` configuration. Unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    pub values: BTreeMap<String, String>,
}

pub const CONFIG_KEYS: [&str; 9] = [
    "t_r", "t_d", "sigma_t", "n_cycles", "tau", "s_level", "b_level", "n_bins", "seed",
];

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                SimError::param(format!("config line {}: expected key=value", lineno + 1))
            })?;
            let key = key.trim();
            if !CONFIG_KEYS.contains(&key) {
                return Err(SimError::param(format!(
                    "config line {}: unknown key '{key}'",
                    lineno + 1
                )));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), value.to_string());
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| SimError::param(format!("bad value for '{key}': '{v}'"))),
        }
    }

    pub fn system(&self) -> Result<SystemParams> {
        let d = SystemParams::default();
        let sys = SystemParams {
            t_r: self.get("t_r")?.unwrap_or(d.t_r),
            t_d: self.get("t_d")?.unwrap_or(d.t_d),
            sigma_t: self.get("sigma_t")?.unwrap_or(d.sigma_t),
            n_cycles: self.get("n_cycles")?.unwrap_or(d.n_cycles),
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn env(&self) -> Result<EnvParams> {
        let d = EnvParams::default();
        Ok(EnvParams {
            tau: self.get("tau")?.unwrap_or(d.tau),
            s_level: self.get("s_level")?.unwrap_or(d.s_level),
            b_level: self.get("b_level")?.unwrap_or(d.b_level),
        })
    }

    pub fn n_bins(&self) -> Result<Option<usize>> {
        self.get("n_bins")
    }

    pub fn seed(&self) -> Result<Option<u64>> {
        self.get("seed")
    }
}
