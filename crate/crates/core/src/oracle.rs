//! Conventional dead-time simulator used as ground truth.
//!
//! Arrivals for all cycles are laid out on the absolute time axis and scanned
//! in order; a photon is registered only if it arrives at least `t_d` after
//! the previous registration. Culled photons do not extend the blanking
//! window (nonparalyzable detector) and the dead time carries across cycle
//! boundaries.

use std::io::{self, Write};

use rand::Rng;
use rayon::prelude::*;

use crate::arrival::{simulate_arrivals, TimestampBatch};
use crate::error::{Result, SimError};
use crate::grid::{DiscretizedFunction, TimeGrid};
use crate::params::{EnvParams, SystemParams};
use crate::rng::RngHandle;

/// Outcome of one acquisition of `N` cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Registered photons, relative to the cycle start, in registration order.
    pub rel_times: TimestampBatch,
    pub m_r: u64,
    /// Arrivals before culling.
    pub m_a: u64,
}

/// Sequential nonparalyzable dead-time scan over sorted absolute times.
/// Returns the indices of the registered photons.
pub fn cull_dead_time(sorted_abs: &[f64], t_d: f64) -> Vec<usize> {
    let mut kept = Vec::with_capacity(sorted_abs.len().min(1 << 20));
    let mut last = f64::NEG_INFINITY;
    for (i, &a) in sorted_abs.iter().enumerate() {
        if a >= last + t_d {
            kept.push(i);
            last = a;
        }
    }
    kept
}

pub fn simulate_registrations<R: Rng + ?Sized>(
    sys: &SystemParams,
    env: &EnvParams,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<RegistrationResult> {
    let arrivals = simulate_arrivals(sys, env, grid, rng)?;
    let m_a = arrivals.count() as u64;
    let n = sys.n_cycles;
    let mut abs: Vec<f64> = arrivals
        .times
        .iter()
        .map(|&t| rng.random_range(0..n) as f64 * sys.t_r + t)
        .collect();
    abs.sort_unstable_by(f64::total_cmp);
    let kept = cull_dead_time(&abs, sys.t_d);
    let times = kept
        .iter()
        .map(|&i| {
            let a = abs[i];
            let r = a - (a / sys.t_r).floor() * sys.t_r;
            // guard against a − floor(a/t_r)·t_r rounding up to t_r
            if r >= sys.t_r || r < 0.0 {
                0.0
            } else {
                r
            }
        })
        .collect::<Vec<_>>();
    Ok(RegistrationResult {
        m_r: times.len() as u64,
        m_a,
        rel_times: TimestampBatch {
            times,
            t_r: sys.t_r,
        },
    })
}

/// Pooled output of many independent oracle acquisitions.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRun {
    pub grid: TimeGrid,
    /// `(m_a, m_r)` per realization.
    pub counts: Vec<(u64, u64)>,
    /// Registration histogram pooled over realizations.
    pub histogram: Vec<u64>,
}

impl OracleRun {
    pub fn total_registrations(&self) -> u64 {
        self.counts.iter().map(|c| c.1).sum()
    }

    pub fn arrival_counts(&self) -> Vec<f64> {
        self.counts.iter().map(|c| c.0 as f64).collect()
    }

    pub fn registration_counts(&self) -> Vec<f64> {
        self.counts.iter().map(|c| c.1 as f64).collect()
    }

    /// Monte-Carlo mean number of culled photons per registration.
    pub fn loss_per_registration(&self) -> f64 {
        let (a, r) = self
            .counts
            .iter()
            .fold((0u64, 0u64), |(a, r), c| (a + c.0, r + c.1));
        (a - r) as f64 / r as f64
    }

    pub fn empirical_pdf(&self) -> Result<EmpiricalPdf> {
        let total = self.total_registrations();
        if total == 0 {
            return Err(SimError::Degenerate(
                "histogram has no registrations".into(),
            ));
        }
        let scale = 1.0 / (total as f64 * self.grid.width());
        let values = self.histogram.iter().map(|&c| c as f64 * scale).collect();
        Ok(EmpiricalPdf {
            pdf: DiscretizedFunction::new(self.grid, values)?,
            realizations: self.counts.len(),
            total_registrations: total,
        })
    }
}

/// Runs `n_realizations` independent acquisitions; realization `i` draws from
/// `rng.child(i)`, so the result does not depend on thread scheduling.
pub fn run_oracle(
    sys: &SystemParams,
    env: &EnvParams,
    grid: &TimeGrid,
    n_realizations: usize,
    rng: RngHandle,
) -> Result<OracleRun> {
    if n_realizations == 0 {
        return Err(SimError::param("need at least one realization"));
    }
    let per: Vec<(u64, u64, Vec<u64>)> = (0..n_realizations)
        .into_par_iter()
        .map(|i| {
            let mut r = rng.child(i as u64).rng();
            let res = simulate_registrations(sys, env, grid, &mut r)?;
            Ok((res.m_a, res.m_r, res.rel_times.histogram(grid)))
        })
        .collect::<Result<_>>()?;
    let mut histogram = vec![0u64; grid.n_bins];
    let mut counts = Vec::with_capacity(per.len());
    for (m_a, m_r, h) in per {
        counts.push((m_a, m_r));
        for (acc, c) in histogram.iter_mut().zip(h) {
            *acc += c;
        }
    }
    Ok(OracleRun {
        grid: *grid,
        counts,
        histogram,
    })
}

/// Averaged registration histogram normalized to a density.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPdf {
    pub pdf: DiscretizedFunction,
    pub realizations: usize,
    pub total_registrations: u64,
}

impl EmpiricalPdf {
    pub fn grid(&self) -> &TimeGrid {
        self.pdf.grid()
    }

    pub fn values(&self) -> &[f64] {
        self.pdf.values()
    }

    /// `bin_center,density` rows with a header line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "bin_center,density")?;
        for (c, v) in self.grid().centers().zip(self.values()) {
            writeln!(w, "{c},{v}")?;
        }
        Ok(())
    }
}

pub fn empirical_pdf(
    sys: &SystemParams,
    env: &EnvParams,
    grid: &TimeGrid,
    n_realizations: usize,
    rng: RngHandle,
) -> Result<EmpiricalPdf> {
    run_oracle(sys, env, grid, n_realizations, rng)?.empirical_pdf()
}
