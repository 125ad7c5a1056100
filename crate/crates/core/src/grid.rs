//! Uniform time grid over one repetition period and functions sampled on it.

use std::f64::consts::PI;

use crate::error::{Result, SimError};
use crate::params::{EnvParams, SystemParams};

/// Tolerance for the PDF-role invariant `Σ values·Δ = 1`.
pub const PDF_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_BINS: usize = 1024;

/// K uniform bins covering `[0, t_r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub n_bins: usize,
    pub t_r: f64,
}

impl TimeGrid {
    pub fn new(n_bins: usize, t_r: f64) -> Result<Self> {
        if n_bins == 0 {
            return Err(SimError::param("grid needs at least one bin"));
        }
        if !(t_r.is_finite() && t_r > 0.0) {
            return Err(SimError::param(format!(
                "grid period must be > 0, got {t_r}"
            )));
        }
        Ok(Self { n_bins, t_r })
    }

    pub fn for_system(sys: &SystemParams, n_bins: usize) -> Result<Self> {
        Self::new(n_bins, sys.t_r)
    }

    /// Bin width Δ.
    pub fn width(&self) -> f64 {
        self.t_r / self.n_bins as f64
    }

    pub fn center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.width()
    }

    pub fn centers(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_bins).map(|k| self.center(k))
    }

    /// Bin index holding time `t` (clamped into the grid).
    pub fn bin_of(&self, t: f64) -> usize {
        let k = (t / self.width()).floor();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(self.n_bins - 1)
        }
    }
}

/// A non-negative function sampled at the bin centers of a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedFunction {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl DiscretizedFunction {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_bins {
            return Err(SimError::Shape {
                expected: grid.n_bins,
                actual: values.len(),
            });
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(SimError::param(format!(
                "function values must be finite and non-negative, found {bad}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TimeGrid, value: f64) -> Result<Self> {
        Self::new(grid, vec![value; grid.n_bins])
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Riemann sum `Σ values·Δ`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.width()
    }

    pub fn is_pdf(&self) -> bool {
        (self.integral() - 1.0).abs() <= PDF_TOLERANCE
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.grid, self.values.iter().map(|v| v * c).collect())
    }

    pub fn argmax(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                if v > bv {
                    (i, v)
                } else {
                    (bi, bv)
                }
            })
            .0
    }

    /// Mean of the piecewise-constant density (assumes PDF role).
    pub fn mean(&self) -> f64 {
        let w = self.grid.width();
        self.values
            .iter()
            .enumerate()
            .map(|(k, v)| v * w * self.grid.center(k))
            .sum()
    }

    /// Second central moment of the piecewise-constant density.
    pub fn variance(&self) -> f64 {
        let w = self.grid.width();
        let mu = self.mean();
        self.values
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let c = self.grid.center(k) - mu;
                // within-bin uniform spread adds w²/12
                v * w * (c * c + w * w / 12.0)
            })
            .sum()
    }

    /// CDF evaluated at the right edge of every bin.
    pub fn cdf(&self) -> Vec<f64> {
        let w = self.grid.width();
        let mut acc = 0.0;
        self.values
            .iter()
            .map(|v| {
                acc += v * w;
                acc
            })
            .collect()
    }

    pub(crate) fn check_same_grid(&self, other: &DiscretizedFunction) -> Result<()> {
        if self.grid != other.grid {
            return Err(SimError::param(format!(
                "grid mismatch: {:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }
}

pub(crate) fn gauss(t: f64, mean: f64, sigma: f64) -> f64 {
    let z = (t - mean) / sigma;
    (-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt())
}

/// Per-cycle arrival flux `λ(t) = S·N(t; τ, σ²) + B/t_r` evaluated at bin centers.
pub fn build_flux(
    sys: &SystemParams,
    env: &EnvParams,
    grid: &TimeGrid,
) -> Result<DiscretizedFunction> {
    if grid.t_r != sys.t_r {
        return Err(SimError::param(format!(
            "grid period {} does not match t_r {}",
            grid.t_r, sys.t_r
        )));
    }
    sys.validate()?;
    env.validate(sys)?;
    let floor = env.b_level / sys.t_r;
    let values = grid
        .centers()
        .map(|c| env.s_level * gauss(c, env.tau, sys.sigma_t) + floor)
        .collect();
    DiscretizedFunction::new(*grid, values)
}

/// Normalizes a flux into the arrival PDF `f_a = λ / Q`.
pub fn arrival_pdf(flux: &DiscretizedFunction) -> Result<DiscretizedFunction> {
    normalize(flux)
}

pub(crate) fn normalize(f: &DiscretizedFunction) -> Result<DiscretizedFunction> {
    let mass = f.integral();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(SimError::Degenerate(format!(
            "cannot normalize a function with integral {mass}"
        )));
    }
    f.scaled(1.0 / mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sys() -> SystemParams {
        SystemParams::default()
    }

    #[test]
    fn grid_geometry() {
        let g = TimeGrid::new(1024, 10.0).unwrap();
        assert_relative_eq!(g.width(), 10.0 / 1024.0);
        assert_relative_eq!(g.center(0), 0.5 * 10.0 / 1024.0);
        assert_eq!(g.bin_of(9.9999), 1023);
        assert_eq!(g.bin_of(-1.0), 0);
        assert_eq!(g.bin_of(10.0), 1023);
        assert!(TimeGrid::new(0, 10.0).is_err());
    }

    #[test]
    fn background_only_flux_is_constant() {
        let g = TimeGrid::new(1024, 10.0).unwrap();
        let f = build_flux(&sys(), &EnvParams::new(4.0, 0.0, 2.0), &g).unwrap();
        assert!(f.values().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn unit_pulse_integrates_to_one() {
        let g = TimeGrid::new(1024, 10.0).unwrap();
        let f = build_flux(&sys(), &EnvParams::new(4.0, 1.0, 0.0), &g).unwrap();
        assert!((f.integral() - 1.0).abs() < 1e-3);
        let peak = g.center(f.argmax());
        assert!((peak - 4.0).abs() <= g.width());
    }

    #[test]
    fn flux_energy_matches_quadrature() {
        // Oracle: composite Simpson on a 2^16 grid of the continuous flux.
        let s = 2.0;
        let b = 1.0;
        let n = 1 << 16;
        let h = 10.0 / n as f64;
        let lam = |t: f64| s * gauss(t, 4.0, 0.1) + b / 10.0;
        let mut acc = lam(0.0) + lam(10.0);
        for i in 1..n {
            acc += lam(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let oracle = acc * h / 3.0;
        assert!((oracle - 3.0).abs() < 1e-9);

        let g = TimeGrid::new(1024, 10.0).unwrap();
        let f = build_flux(&sys(), &EnvParams::new(4.0, s, b), &g).unwrap();
        assert!((f.integral() - oracle).abs() < 0.003);
    }

    #[test]
    fn mismatched_grid_rejected() {
        let g = TimeGrid::new(64, 5.0).unwrap();
        assert!(matches!(
            build_flux(&sys(), &EnvParams::default(), &g),
            Err(SimError::Parameter(_))
        ));
    }

    #[test]
    fn arrival_pdf_uniform_and_normalized() {
        let g = TimeGrid::new(1024, 10.0).unwrap();
        let flux = DiscretizedFunction::constant(g, 0.2).unwrap();
        let pdf = arrival_pdf(&flux).unwrap();
        assert!(pdf.values().iter().all(|&v| (v - 0.1).abs() < 1e-12));
        assert!(pdf.is_pdf());
    }

    #[test]
    fn arrival_pdf_matches_direct_evaluation() {
        // f_a(t) = (α s(t-τ) + λ_b) / (S + B) evaluated at bin centers; the
        // bin-center discretization differs from the exact Q only by the
        // Riemann-sum error, which is far below the tolerance used here.
        let g = TimeGrid::new(1024, 10.0).unwrap();
        let env = EnvParams::new(4.0, 1.0, 1.0);
        let pdf = arrival_pdf(&build_flux(&sys(), &env, &g).unwrap()).unwrap();
        for (k, c) in g.centers().enumerate() {
            let direct = (gauss(c, 4.0, 0.1) + 0.1) / 2.0;
            assert!((pdf.values()[k] - direct).abs() < 1e-6 * direct.max(1.0));
        }
    }

    #[test]
    fn zero_flux_is_degenerate() {
        let g = TimeGrid::new(16, 10.0).unwrap();
        let flux = DiscretizedFunction::constant(g, 0.0).unwrap();
        assert!(matches!(arrival_pdf(&flux), Err(SimError::Degenerate(_))));
    }

    #[test]
    fn negative_values_rejected() {
        let g = TimeGrid::new(2, 10.0).unwrap();
        assert!(DiscretizedFunction::new(g, vec![1.0, -0.1]).is_err());
        assert!(matches!(
            DiscretizedFunction::new(g, vec![1.0]),
            Err(SimError::Shape { .. })
        ));
    }

    #[test]
    fn moments_of_uniform() {
        let g = TimeGrid::new(100, 10.0).unwrap();
        let pdf = DiscretizedFunction::constant(g, 0.1).unwrap();
        assert_relative_eq!(pdf.mean(), 5.0, epsilon = 1e-12);
        assert_relative_eq!(pdf.variance(), 100.0 / 12.0, epsilon = 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn flux_is_linear(s1 in 0.0..3.0f64, s2 in 0.0..3.0f64, b1 in 0.0..3.0f64, b2 in 0.0..3.0f64, tau in 1.0..9.0f64) {
                let g = TimeGrid::new(256, 10.0).unwrap();
                let sys = SystemParams::default();
                let a = build_flux(&sys, &EnvParams::new(tau, s1, b1), &g).unwrap();
                let b = build_flux(&sys, &EnvParams::new(tau, s2, b2), &g).unwrap();
                let ab = build_flux(&sys, &EnvParams::new(tau, s1 + s2, b1 + b2), &g).unwrap();
                for k in 0..256 {
                    prop_assert!((ab.values()[k] - a.values()[k] - b.values()[k]).abs() < 1e-12);
                }
            }

            #[test]
            fn tau_shift_moves_argmax(tau in 1.0..5.0f64, shift_bins in 1usize..300) {
                let g = TimeGrid::new(1024, 10.0).unwrap();
                let sys = SystemParams::default();
                // keep the pulse peak on a bin center so the argmax is unambiguous
                let tau = g.center(g.bin_of(tau));
                let delta = shift_bins as f64 * g.width();
                let a = build_flux(&sys, &EnvParams::new(tau, 1.0, 0.5), &g).unwrap();
                let b = build_flux(&sys, &EnvParams::new(tau + delta, 1.0, 0.5), &g).unwrap();
                prop_assert_eq!((b.argmax() + 1024 - a.argmax()) % 1024, shift_bins);
            }

            #[test]
            fn arrival_pdf_scale_invariant(c in 1e-3..1e3f64, s in 0.1..3.0f64, b in 0.1..3.0f64) {
                let g = TimeGrid::new(128, 10.0).unwrap();
                let flux = build_flux(&SystemParams::default(), &EnvParams::new(4.0, s, b), &g).unwrap();
                let p1 = arrival_pdf(&flux).unwrap();
                let p2 = arrival_pdf(&flux.scaled(c).unwrap()).unwrap();
                prop_assert!(p2.is_pdf());
                for k in 0..128 {
                    prop_assert!((p1.values()[k] - p2.values()[k]).abs() <= 1e-12 * p1.values()[k].max(1.0));
                }
            }
        }
    }
}
