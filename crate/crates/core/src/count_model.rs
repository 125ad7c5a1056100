//! Gaussian model of the registration count.
//!
//! Each registration at `t_k` blanks the detector for `t_d`, during which the
//! expected number of lost photons is `g(t_k)`, the integral of the
//! periodically extended flux over `[t_k, t_k + t_d]`. With `E[g] = ⟨f_r, g⟩`
//! the registration count is modeled as
//! `M_r ~ N(R, R / (1 + E[g])²)` where `R = N·Q / (1 + E[g])`.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SimError};
use crate::grid::DiscretizedFunction;
use crate::params::{EnvParams, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountEstimate {
    /// Expected number of registrations `R`.
    pub mean_r: f64,
    /// Refined standard deviation `√R / (1 + E[g])`.
    pub std_r: f64,
    /// Expected loss per registration `E[g]`.
    pub e_loss: f64,
}

impl CountEstimate {
    /// Width before the empirical refinement: `√(R / (1 + E[g]))`.
    pub fn unrefined_std(&self) -> f64 {
        (self.mean_r / (1.0 + self.e_loss)).sqrt()
    }
}

/// `g(t_k)` at every bin center, integrating the piecewise-constant flux over
/// its periodic extension with exact partial-bin mass at both ends.
pub fn energy_loss_fn(flux: &DiscretizedFunction, t_d: f64) -> Result<DiscretizedFunction> {
    let grid = *flux.grid();
    if !(t_d >= 0.0 && t_d < 2.0 * grid.t_r) {
        return Err(SimError::param(format!(
            "dead time {t_d} outside [0, 2·t_r) for period {}",
            grid.t_r
        )));
    }
    let w = grid.width();
    let k_bins = grid.n_bins;
    // prefix[j] = mass of bins [0, j)
    let mut prefix = Vec::with_capacity(k_bins + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for v in flux.values() {
        acc += v * w;
        prefix.push(acc);
    }
    let period_mass = acc;
    let masses = flux.values();
    // ∫_0^x of the periodic extension, x ≥ 0
    let cumulative = |x: f64| -> f64 {
        let wraps = (x / grid.t_r).floor();
        let y = x - wraps * grid.t_r;
        let pos = y / w;
        let j = (pos.floor() as usize).min(k_bins - 1);
        let frac = (pos - j as f64).clamp(0.0, 1.0);
        wraps * period_mass + prefix[j] + frac * masses[j] * w
    };
    let values = grid
        .centers()
        .map(|c| (cumulative(c + t_d) - cumulative(c)).max(0.0))
        .collect();
    DiscretizedFunction::new(grid, values)
}

/// `⟨f_r, g⟩ = Σ f_r[k]·g[k]·Δ`.
pub fn expected_loss(f_r: &DiscretizedFunction, g: &DiscretizedFunction) -> Result<f64> {
    f_r.check_same_grid(g)?;
    let w = f_r.grid().width();
    Ok(f_r
        .values()
        .iter()
        .zip(g.values())
        .map(|(p, l)| p * l)
        .sum::<f64>()
        * w)
}

/// Count estimate from the registration PDF `f_r` (network prediction at
/// inference time, or an empirical histogram).
pub fn estimate_count(
    sys: &SystemParams,
    env: &EnvParams,
    f_r: &DiscretizedFunction,
) -> Result<CountEstimate> {
    sys.validate()?;
    let q = env.energy();
    if q == 0.0 {
        return Ok(CountEstimate {
            mean_r: 0.0,
            std_r: 0.0,
            e_loss: 0.0,
        });
    }
    let flux = crate::grid::build_flux(sys, env, f_r.grid())?;
    let g = energy_loss_fn(&flux, sys.t_d)?;
    let e_loss = expected_loss(f_r, &g)?;
    Ok(from_loss(sys.n_cycles as f64 * q, e_loss))
}

/// Applies the refined estimator for total energy `nq` and loss `e_loss`.
pub fn from_loss(nq: f64, e_loss: f64) -> CountEstimate {
    let mean_r = nq / (1.0 + e_loss);
    CountEstimate {
        mean_r,
        std_r: mean_r.sqrt() / (1.0 + e_loss),
        e_loss,
    }
}

/// Draws a registration count: Gaussian, rounded, clamped at zero.
pub fn sample_count<R: Rng + ?Sized>(est: &CountEstimate, rng: &mut R) -> u64 {
    if est.std_r == 0.0 {
        return est.mean_r.round().max(0.0) as u64;
    }
    let normal = Normal::new(est.mean_r, est.std_r).expect("finite positive std");
    normal.sample(rng).round().max(0.0) as u64
}
