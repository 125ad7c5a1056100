//! Training pairs `(scaled flux, empirical registration PDF)`.
//!
//! Dataset file layout (little-endian):
//!
//! ```text
//! "SPLDS1"                      6 bytes
//! format version                u32
//! t_r, t_d, sigma_t             3 × f64
//! n_cycles                      u64
//! n_bins                        u32
//! S range, B range, tau range   6 × f64
//! seed                          u64
//! realizations per label        u32
//! input scale                   f64
//! sample count                  u64
//! per sample                    split u8, tau/S/B 3 × f64, flux K × f64, label K × f64
//! crc32                         u32 over every preceding byte
//! ```

use std::fs::{self, File};
use std::io::Read;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Result, SimError};
use crate::format::{split_checked, Reader};
use crate::grid::{build_flux, TimeGrid};
use crate::net::{predict_pdf, train, AeModel, TrainConfig, TrainReport};
use crate::oracle::empirical_pdf;
use crate::params::{EnvParams, SystemParams};
use crate::rng::RngHandle;
use crate::stats::{ks_distance_masses, median};

pub const DATASET_MAGIC: &[u8; 6] = b"SPLDS1";
pub const DATASET_VERSION: u32 = 1;
/// Environments with `S + B` below this carry too few photons for a label.
pub const MIN_ENERGY: f64 = 0.01;
pub const DEFAULT_REALIZATIONS: usize = 20;
/// Every `TEST_FRACTION_DEN`-th sample (by hash rank) is held out: 4:1 split.
const TEST_FRACTION_DEN: usize = 5;

const HEADER_LEN: usize = 6 + 4 + 3 * 8 + 8 + 4 + 6 * 8 + 8 + 4 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvRanges {
    pub s_level: (f64, f64),
    pub b_level: (f64, f64),
    pub tau: (f64, f64),
}

impl Default for EnvRanges {
    fn default() -> Self {
        Self {
            s_level: (0.0, 3.0),
            b_level: (0.0, 3.0),
            tau: (2.0, 6.0),
        }
    }
}

impl EnvRanges {
    pub fn contains(&self, env: &EnvParams) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        inside(env.s_level, self.s_level)
            && inside(env.b_level, self.b_level)
            && inside(env.tau, self.tau)
    }
}

/// Independent uniform draws of `S`, `B` and `tau`.
pub fn sample_env<R: Rng + ?Sized>(ranges: &EnvRanges, rng: &mut R) -> EnvParams {
    let mut u = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
    let s_level = u(ranges.s_level);
    let b_level = u(ranges.b_level);
    let tau = u(ranges.tau);
    EnvParams {
        tau,
        s_level,
        b_level,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub env: EnvParams,
    /// Flux multiplied by the input scale.
    pub flux: Vec<f64>,
    /// Empirical registration PDF.
    pub label: Vec<f64>,
    pub split: Split,
}

/// Prediction accuracy against oracle labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeldOutMetrics {
    pub samples: usize,
    /// Root mean square density error over every bin of every sample.
    pub rmse: f64,
    /// Median over samples of the largest CDF gap between prediction and label.
    pub median_ks: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub sys: SystemParams,
    pub grid: TimeGrid,
    pub ranges: EnvRanges,
    pub seed: u64,
    pub realizations: usize,
    pub input_scale: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

/// Generation settings; the defaults are the desk-scale configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub n_samples: usize,
    pub n_bins: usize,
    pub realizations: usize,
    pub ranges: EnvRanges,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            n_bins: 256,
            realizations: DEFAULT_REALIZATIONS,
            ranges: EnvRanges::default(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    /// 11,000 pairs at 1024 bins.
    pub fn full_scale() -> Self {
        Self {
            n_samples: 11_000,
            n_bins: 1024,
            ..Default::default()
        }
    }
}

/// Network input scale for a grid: flux times bin width, i.e. expected
/// photons per bin per cycle.
pub fn input_scale(grid: &TimeGrid) -> f64 {
    grid.width()
}

/// One `(scaled flux, label)` pair.
pub fn make_pair(
    sys: &SystemParams,
    env: &EnvParams,
    grid: &TimeGrid,
    realizations: usize,
    rng: RngHandle,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let scale = input_scale(grid);
    let flux = build_flux(sys, env, grid)?
        .into_values()
        .into_iter()
        .map(|v| v * scale)
        .collect();
    let label = empirical_pdf(sys, env, grid, realizations, rng)?
        .pdf
        .into_values();
    Ok((flux, label))
}

fn split_hash(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Test-set membership: the `n / 5` samples with the smallest hash of
/// `(seed, index)` are held out.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by_key(|&i| (split_hash(seed, i as u64), i));
    let mut splits = vec![Split::Train; n];
    for &i in ranked.iter().take(n / TEST_FRACTION_DEN) {
        splits[i] = Split::Test;
    }
    splits
}

pub fn generate_dataset(sys: &SystemParams, cfg: &DatasetConfig) -> Result<Dataset> {
    sys.validate()?;
    if cfg.realizations == 0 {
        return Err(SimError::param("realizations must be >= 1"));
    }
    if cfg.n_samples == 0 {
        return Err(SimError::param("dataset needs at least one sample"));
    }
    let grid = TimeGrid::for_system(sys, cfg.n_bins)?;
    let splits = assign_splits(cfg.n_samples, cfg.seed);
    let samples = (0..cfg.n_samples)
        .into_par_iter()
        .map(|i| {
            let stream = RngHandle::new(cfg.seed, i as u64);
            let mut env_rng = stream.rng();
            for attempt in 0u64.. {
                let env = sample_env(&cfg.ranges, &mut env_rng);
                if env.energy() < MIN_ENERGY {
                    log::debug!("sample {i}: resampling near-zero energy environment {env:?}");
                    continue;
                }
                match make_pair(sys, &env, &grid, cfg.realizations, stream.child(attempt)) {
                    Ok((flux, label)) => {
                        return Ok(Sample {
                            env,
                            flux,
                            label,
                            split: splits[i],
                        })
                    }
                    Err(SimError::Degenerate(_)) => {
                        log::info!("sample {i}: empty histogram for {env:?}, resampling");
                    }
                    Err(e) => return Err(e),
                }
            }
            unreachable!()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        header: DatasetHeader {
            sys: *sys,
            grid,
            ranges: cfg.ranges,
            seed: cfg.seed,
            realizations: cfg.realizations,
            input_scale: input_scale(&grid),
            n_samples: cfg.n_samples,
        },
        samples,
    })
}

impl Dataset {
    pub fn config(&self) -> DatasetConfig {
        DatasetConfig {
            n_samples: self.header.n_samples,
            n_bins: self.header.grid.n_bins,
            realizations: self.header.realizations,
            ranges: self.header.ranges,
            seed: self.header.seed,
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Inputs and labels of one split as row-per-sample matrices.
    pub fn arrays(&self, split: Split) -> (Array2<f64>, Array2<f64>) {
        let k = self.header.grid.n_bins;
        let rows: Vec<&Sample> = self.split(split).collect();
        let x = Array2::from_shape_fn((rows.len(), k), |(i, j)| rows[i].flux[j]);
        let y = Array2::from_shape_fn((rows.len(), k), |(i, j)| rows[i].label[j]);
        (x, y)
    }

    /// Trains a fresh autoencoder of the dataset width on the training split,
    /// tracking validation loss on the test split.
    pub fn train_model(&self, latent: usize, cfg: &TrainConfig) -> Result<(AeModel, TrainReport)> {
        let model = AeModel::new(
            self.header.grid.n_bins,
            latent,
            self.header.input_scale,
            cfg.seed,
        )?;
        let (x, y) = self.arrays(Split::Train);
        let (vx, vy) = self.arrays(Split::Test);
        train(model, &x, &y, Some((&vx, &vy)), cfg)
    }

    /// Accuracy of the post-processed predictions on one split.
    pub fn evaluate(&self, model: &AeModel, split: Split) -> Result<HeldOutMetrics> {
        let grid = self.header.grid;
        let w = grid.width();
        let mut sq = 0.0;
        let mut bins = 0usize;
        let mut ks = Vec::new();
        for s in self.split(split) {
            let pred = predict_pdf(model, &build_flux(&self.header.sys, &s.env, &grid)?)?;
            for (p, l) in pred.values().iter().zip(&s.label) {
                sq += (p - l) * (p - l);
            }
            bins += s.label.len();
            let pm: Vec<f64> = pred.values().iter().map(|v| v * w).collect();
            let lm: Vec<f64> = s.label.iter().map(|v| v * w).collect();
            ks.push(ks_distance_masses(&pm, &lm));
        }
        if ks.is_empty() {
            return Err(SimError::param("split has no samples"));
        }
        Ok(HeldOutMetrics {
            samples: ks.len(),
            rmse: (sq / bins as f64).sqrt(),
            median_ks: median(&ks),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let h = &self.header;
        let k = h.grid.n_bins;
        let mut buf = Vec::with_capacity(HEADER_LEN + self.samples.len() * (25 + 16 * k) + 4);
        buf.extend_from_slice(DATASET_MAGIC);
        buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        for v in [h.sys.t_r, h.sys.t_d, h.sys.sigma_t] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&h.sys.n_cycles.to_le_bytes());
        buf.extend_from_slice(&(k as u32).to_le_bytes());
        for (lo, hi) in [h.ranges.s_level, h.ranges.b_level, h.ranges.tau] {
            buf.extend_from_slice(&lo.to_le_bytes());
            buf.extend_from_slice(&hi.to_le_bytes());
        }
        buf.extend_from_slice(&h.seed.to_le_bytes());
        buf.extend_from_slice(&(h.realizations as u32).to_le_bytes());
        buf.extend_from_slice(&h.input_scale.to_le_bytes());
        buf.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        for s in &self.samples {
            buf.push(match s.split {
                Split::Train => 0,
                Split::Test => 1,
            });
            for v in [s.env.tau, s.env.s_level, s.env.b_level] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in s.flux.iter().chain(&s.label) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        buf
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let body = split_checked(bytes, DATASET_MAGIC)?;
        let mut r = Reader::new(&body[DATASET_MAGIC.len()..]);
        let header = read_header(&mut r)?;
        let k = header.grid.n_bins;
        let mut samples = Vec::with_capacity(header.n_samples.min(1 << 20));
        for i in 0..header.n_samples {
            let split = match r.u8()? {
                0 => Split::Train,
                1 => Split::Test,
                t => return Err(SimError::format(format!("sample {i}: bad split tag {t}"))),
            };
            let tau = r.f64()?;
            let s_level = r.f64()?;
            let b_level = r.f64()?;
            let flux = r.f64_vec(k)?;
            let label = r.f64_vec(k)?;
            samples.push(Sample {
                env: EnvParams {
                    tau,
                    s_level,
                    b_level,
                },
                flux,
                label,
                split,
            });
        }
        r.finish()?;
        Ok(Self { header, samples })
    }
}

fn read_header(r: &mut Reader<'_>) -> Result<DatasetHeader> {
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(SimError::format(format!(
            "unsupported dataset version {version}"
        )));
    }
    let t_r = r.f64()?;
    let t_d = r.f64()?;
    let sigma_t = r.f64()?;
    let n_cycles = r.u64()?;
    let sys = SystemParams {
        t_r,
        t_d,
        sigma_t,
        n_cycles,
    };
    sys.validate()
        .map_err(|e| SimError::format(format!("invalid system parameters in header: {e}")))?;
    let n_bins = r.u32()? as usize;
    let grid = TimeGrid::new(n_bins, t_r)?;
    let mut range = || -> Result<(f64, f64)> { Ok((r.f64()?, r.f64()?)) };
    let ranges = EnvRanges {
        s_level: range()?,
        b_level: range()?,
        tau: range()?,
    };
    let seed = r.u64()?;
    let realizations = r.u32()? as usize;
    let input_scale = r.f64()?;
    let n_samples = r.u64()? as usize;
    Ok(DatasetHeader {
        sys,
        grid,
        ranges,
        seed,
        realizations,
        input_scale,
        n_samples,
    })
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, ds.encode())?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::decode(&fs::read(path)?)
}

/// Reads only the fixed-size header (no checksum verification).
pub fn read_dataset_header(path: &Path) -> Result<DatasetHeader> {
    let mut buf = vec![0u8; HEADER_LEN];
    File::open(path)?
        .read_exact(&mut buf)
        .map_err(|_| SimError::format("file too short for a dataset header"))?;
    if &buf[..6] != DATASET_MAGIC {
        return Err(SimError::format("bad magic: expected \"SPLDS1\""));
    }
    read_header(&mut Reader::new(&buf[6..]))
}
