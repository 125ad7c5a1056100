//! Photon arrival simulation: Poisson count then i.i.d. timestamps drawn from
//! the arrival PDF by inverse transform sampling, plus an O(K + n) binned
//! sampler used by the fast engine.

use std::io::{self, BufRead, Read, Write};

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};

use crate::error::{Result, SimError};
use crate::grid::{arrival_pdf, build_flux, DiscretizedFunction, TimeGrid, PDF_TOLERANCE};
use crate::params::{EnvParams, SystemParams};

/// Relative photon timestamps in `[0, t_r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimestampBatch {
    pub times: Vec<f64>,
    pub t_r: f64,
}

impl TimestampBatch {
    pub fn new(times: Vec<f64>, t_r: f64) -> Result<Self> {
        if let Some(bad) = times.iter().find(|t| !(**t >= 0.0 && **t < t_r)) {
            return Err(SimError::param(format!(
                "timestamp {bad} outside [0, {t_r})"
            )));
        }
        Ok(Self { times, t_r })
    }

    pub fn empty(t_r: f64) -> Self {
        Self {
            times: Vec::new(),
            t_r,
        }
    }

    pub fn count(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Per-bin counts on `grid`.
    pub fn histogram(&self, grid: &TimeGrid) -> Vec<u64> {
        let mut h = vec![0u64; grid.n_bins];
        for &t in &self.times {
            h[grid.bin_of(t)] += 1;
        }
        h
    }

    /// One timestamp per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for t in &self.times {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, t_r: f64) -> Result<Self> {
        let mut times = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            times.push(
                line.parse::<f64>()
                    .map_err(|_| SimError::format(format!("bad timestamp '{line}'")))?,
            );
        }
        Self::new(times, t_r)
    }

    /// Little-endian `u64` count followed by `count` little-endian `f64`s.
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&(self.times.len() as u64).to_le_bytes())?;
        for t in &self.times {
            w.write_all(&t.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R, t_r: f64) -> Result<Self> {
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)
            .map_err(|_| SimError::format("truncated timestamp header"))?;
        let n = u64::from_le_bytes(buf) as usize;
        let mut times = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            r.read_exact(&mut buf)
                .map_err(|_| SimError::format("truncated timestamp payload"))?;
            times.push(f64::from_le_bytes(buf));
        }
        Self::new(times, t_r)
    }
}

/// Draws `M ~ Poisson(mean)`.
pub fn sample_poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if !(mean >= 0.0 && mean.is_finite()) {
        return Err(SimError::param(format!(
            "Poisson mean must be >= 0, got {mean}"
        )));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let dist = Poisson::new(mean).map_err(|e| SimError::param(format!("Poisson({mean}): {e}")))?;
    Ok(dist.sample(rng) as u64)
}

/// Inverse-CDF sampler for a piecewise-constant density on a [`TimeGrid`].
///
/// Inside the selected bin the timestamp is placed by linear interpolation of
/// the CDF, which is exact inversion of the piecewise-constant density. Bin
/// lookup starts from a guide table (cutpoint method), so a draw costs O(1)
/// expected time.
#[derive(Debug, Clone)]
pub struct InverseCdf {
    grid: TimeGrid,
    /// `cdf[k]` is the mass strictly left of bin `k`; `cdf[K] == 1`.
    cdf: Vec<f64>,
    /// `guide[j]` is the bin containing `u = j / K`.
    guide: Vec<u32>,
}

impl InverseCdf {
    pub fn new(pdf: &DiscretizedFunction) -> Result<Self> {
        let integral = pdf.integral();
        if (integral - 1.0).abs() > PDF_TOLERANCE {
            return Err(SimError::Normalization { integral });
        }
        let grid = *pdf.grid();
        let w = grid.width();
        let mut cdf = Vec::with_capacity(grid.n_bins + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for v in pdf.values() {
            acc += v * w;
            cdf.push(acc);
        }
        // absorb round-off so that u in [0,1) always lands in a bin
        for c in cdf.iter_mut() {
            *c /= acc;
        }
        cdf[grid.n_bins] = 1.0;
        let k = grid.n_bins;
        let mut guide = Vec::with_capacity(k);
        let mut bin = 0usize;
        for j in 0..k {
            let u = j as f64 / k as f64;
            while bin + 1 < k && cdf[bin + 1] <= u {
                bin += 1;
            }
            guide.push(bin as u32);
        }
        Ok(Self { grid, cdf, guide })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Maps a uniform variate `u ∈ [0, 1)` to a time in `[0, t_r)`.
    #[inline]
    pub fn sample_at(&self, u: f64) -> f64 {
        let n = self.grid.n_bins;
        let j = ((u * n as f64) as usize).min(n - 1);
        let mut k = self.guide[j] as usize;
        while k + 1 < n && self.cdf[k + 1] <= u {
            k += 1;
        }
        let lo = self.cdf[k];
        let mass = self.cdf[k + 1] - lo;
        let frac = if mass > 0.0 {
            ((u - lo) / mass).clamp(0.0, 1.0)
        } else {
            0.5
        };
        let t = (k as f64 + frac) * self.grid.width();
        if t >= self.grid.t_r {
            prev_float(self.grid.t_r)
        } else {
            t
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sample_at(rng.random::<f64>())
    }

    pub fn sample_n<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> TimestampBatch {
        let times = (0..n).map(|_| self.sample(rng)).collect();
        TimestampBatch {
            times,
            t_r: self.grid.t_r,
        }
    }
}

/// Quantile of the bin values used as the floor level in [`sample_binned`].
const FLOOR_QUANTILE_DEN: usize = 8;

/// Draws `n` timestamps from a piecewise-constant density in `O(K + n)`.
///
/// The density is split into a flat floor `c` over the bins at or above `c`
/// and a non-negative residual. A binomial draw decides how many photons come
/// from the floor; each picks one of those bins uniformly. The residual
/// photons get multinomial bin counts by sequential conditional binomials.
/// Inside a bin the position is uniform.
///
/// The multiset has the law of `n` i.i.d. draws. Floor photons come first,
/// then the residual ones grouped by bin in ascending order.
pub fn sample_binned<R: Rng + ?Sized>(
    pdf: &DiscretizedFunction,
    n: usize,
    rng: &mut R,
) -> Result<TimestampBatch> {
    let integral = pdf.integral();
    if (integral - 1.0).abs() > PDF_TOLERANCE {
        return Err(SimError::Normalization { integral });
    }
    let grid = *pdf.grid();
    let w = grid.width();
    let last = prev_float(grid.t_r);
    // 32-bit uniforms; a 64-bit word serves two of them
    const SCALE: f64 = 1.0 / 4_294_967_296.0;
    let place = |k: usize, bits: u32| ((k as f64 + (bits as f64 + 0.5) * SCALE) * w).min(last);
    let binomial = |n: u64, p: f64, rng: &mut R| -> Result<u64> {
        if p >= 1.0 {
            return Ok(n);
        }
        if p <= 0.0 || n == 0 {
            return Ok(0);
        }
        Ok(Binomial::new(n, p)
            .map_err(|e| SimError::param(format!("binomial({n}, {p}): {e}")))?
            .sample(rng))
    };

    let values = pdf.values();
    let total: f64 = values.iter().sum();
    let mut times = Vec::with_capacity(n);
    let mut remaining = n as u64;

    let mut sorted = values.to_vec();
    let (_, &mut c, _) =
        sorted.select_nth_unstable_by(grid.n_bins / FLOOR_QUANTILE_DEN, f64::total_cmp);
    let floor_bins: Vec<u32> = if c > 0.0 {
        (0..grid.n_bins)
            .filter(|&k| values[k] >= c)
            .map(|k| k as u32)
            .collect()
    } else {
        Vec::new()
    };
    let c = if floor_bins.is_empty() { 0.0 } else { c };
    if !floor_bins.is_empty() {
        let share = (c * floor_bins.len() as f64 / total).clamp(0.0, 1.0);
        let count = binomial(remaining, share, rng)?;
        let m = floor_bins.len() as u64;
        for _ in 0..count {
            let word = rng.next_u64();
            let j = (((word >> 32) * m) >> 32) as usize;
            times.push(place(floor_bins[j] as usize, word as u32));
        }
        remaining -= count;
    }

    let residual = |v: f64| if v >= c { v - c } else { v };
    let mut mass_left: f64 = values.iter().map(|&v| residual(v)).sum();
    for (k, &v) in values.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        let r = residual(v);
        let count = if k + 1 == grid.n_bins || mass_left <= 0.0 {
            remaining
        } else {
            binomial(remaining, (r / mass_left).clamp(0.0, 1.0), rng)?
        };
        remaining -= count;
        mass_left -= r;
        for _ in 0..count / 2 {
            let word = rng.next_u64();
            times.push(place(k, word as u32));
            times.push(place(k, (word >> 32) as u32));
        }
        if count % 2 == 1 {
            times.push(place(k, rng.next_u32()));
        }
    }
    Ok(TimestampBatch {
        times,
        t_r: grid.t_r,
    })
}

fn prev_float(x: f64) -> f64 {
    f64::from_bits(x.to_bits() - 1)
}

/// Draws `n` i.i.d. timestamps from `pdf`.
pub fn inverse_transform_sample<R: Rng + ?Sized>(
    pdf: &DiscretizedFunction,
    n: usize,
    rng: &mut R,
) -> Result<TimestampBatch> {
    Ok(InverseCdf::new(pdf)?.sample_n(n, rng))
}

/// Two-step arrival simulator over `sys.n_cycles` cycles.
pub fn simulate_arrivals<R: Rng + ?Sized>(
    sys: &SystemParams,
    env: &EnvParams,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<TimestampBatch> {
    let flux = build_flux(sys, env, grid)?;
    let q = env.energy();
    if q == 0.0 {
        return Ok(TimestampBatch::empty(sys.t_r));
    }
    let count = sample_poisson_count(sys.n_cycles as f64 * q, rng)?;
    inverse_transform_sample(&arrival_pdf(&flux)?, count as usize, rng)
}
