//! Learned fast simulator and the multi-pixel depth demo.

use std::fmt;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use crate::arrival::{sample_binned, TimestampBatch};
use crate::count_model::{estimate_count, sample_count};
use crate::error::{Result, SimError};
use crate::grid::{build_flux, DiscretizedFunction, TimeGrid};
use crate::net::{predict_pdf, AeModel};
use crate::oracle::simulate_registrations;
use crate::params::{EnvParams, SystemParams};
use crate::rng::RngHandle;

/// Fast simulation: predicted PDF, Gaussian count draw, then timestamps drawn
/// from the predicted PDF (grouped by bin).
pub fn fast_simulate<R: Rng + ?Sized>(
    sys: &SystemParams,
    env: &EnvParams,
    model: &AeModel,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<TimestampBatch> {
    if env.energy() == 0.0 {
        env.validate(sys)?;
        return Ok(TimestampBatch::empty(sys.t_r));
    }
    let flux = build_flux(sys, env, grid)?;
    let f_r = predict_pdf(model, &flux)?;
    fast_simulate_with_pdf(sys, env, &f_r, rng)
}

/// Fast simulation from an already known registration PDF.
pub fn fast_simulate_with_pdf<R: Rng + ?Sized>(
    sys: &SystemParams,
    env: &EnvParams,
    f_r: &DiscretizedFunction,
    rng: &mut R,
) -> Result<TimestampBatch> {
    let est = estimate_count(sys, env, f_r)?;
    let count = sample_count(&est, rng);
    sample_binned(f_r, count as usize, rng)
}

/// Naive depth estimate: mean relative timestamp.
pub fn estimate_depth(batch: &TimestampBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(SimError::NoPhotons);
    }
    Ok(batch.times.iter().sum::<f64>() / batch.count() as f64)
}

/// Per-pixel delays; `NaN` marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub depths: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, depths: Vec<f64>) -> Result<Self> {
        if depths.len() != width * height {
            return Err(SimError::Shape {
                expected: width * height,
                actual: depths.len(),
            });
        }
        Ok(Self {
            width,
            height,
            depths,
        })
    }

    pub fn constant(width: usize, height: usize, tau: f64) -> Self {
        Self {
            width,
            height,
            depths: vec![tau; width * height],
        }
    }

    /// Horizontal ramp from `lo` (left column) to `hi` (right column).
    pub fn ramp(width: usize, height: usize, lo: f64, hi: f64) -> Self {
        let depths = (0..height)
            .flat_map(|_| {
                (0..width).map(move |c| {
                    if width == 1 {
                        lo
                    } else {
                        lo + (hi - lo) * c as f64 / (width - 1) as f64
                    }
                })
            })
            .collect();
        Self {
            width,
            height,
            depths,
        }
    }

    pub fn n_invalid(&self) -> usize {
        self.depths.iter().filter(|d| d.is_nan()).count()
    }

    /// Row-major CSV grid, one image row per line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        for row in self.depths.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|d| format!("{d}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Scene: per-pixel delay and reflectivity, global background and laser energy.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub depth: DepthMap,
    pub reflectivity: Vec<f64>,
    pub b_level: f64,
    pub energy: f64,
}

impl SceneSpec {
    pub fn uniform(depth: DepthMap, reflectivity: f64, b_level: f64, energy: f64) -> Self {
        let n = depth.depths.len();
        Self {
            depth,
            reflectivity: vec![reflectivity; n],
            b_level,
            energy,
        }
    }

    pub fn n_pixels(&self) -> usize {
        self.depth.depths.len()
    }

    pub fn env(&self, pixel: usize) -> EnvParams {
        EnvParams {
            tau: self.depth.depths[pixel],
            s_level: self.reflectivity[pixel] * self.energy,
            b_level: self.b_level,
        }
    }

    pub fn validate(&self, sys: &SystemParams) -> Result<()> {
        if self.reflectivity.len() != self.n_pixels() {
            return Err(SimError::Shape {
                expected: self.n_pixels(),
                actual: self.reflectivity.len(),
            });
        }
        if self
            .reflectivity
            .iter()
            .any(|a| !(a.is_finite() && *a > 0.0))
        {
            return Err(SimError::param("reflectivity must be positive"));
        }
        if !(self.energy.is_finite() && self.energy >= 0.0) {
            return Err(SimError::param("laser energy must be >= 0"));
        }
        for p in 0..self.n_pixels() {
            self.env(p).validate(sys)?;
        }
        Ok(())
    }

    /// Text format: a `width height B E` header line, then `height` rows of
    /// depths and `height` rows of reflectivities. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut nums = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(|l| l.split(|c: char| c.is_whitespace() || c == ','))
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| SimError::format(format!("scene: bad number '{t}'")))
            });
        let mut next = |what: &str| -> Result<f64> {
            nums.next()
                .unwrap_or_else(|| Err(SimError::format(format!("scene: missing {what}"))))
        };
        let width = next("width")?;
        let height = next("height")?;
        if !(width >= 1.0 && height >= 1.0 && width.fract() == 0.0 && height.fract() == 0.0) {
            return Err(SimError::format(
                "scene: width and height must be positive integers",
            ));
        }
        let (width, height) = (width as usize, height as usize);
        let b_level = next("B")?;
        let energy = next("E")?;
        let n = width * height;
        let depths = (0..n)
            .map(|_| next("depth value"))
            .collect::<Result<Vec<_>>>()?;
        let reflectivity = (0..n)
            .map(|_| next("reflectivity value"))
            .collect::<Result<Vec<_>>>()?;
        if nums.next().is_some() {
            return Err(SimError::format("scene: trailing values"));
        }
        Ok(Self {
            depth: DepthMap::new(width, height, depths)?,
            reflectivity,
            b_level,
            energy,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# width height B E")?;
        writeln!(
            w,
            "{} {} {} {}",
            self.depth.width, self.depth.height, self.b_level, self.energy
        )?;
        writeln!(w, "# depth")?;
        for row in self.depth.depths.chunks(self.depth.width) {
            writeln!(
                w,
                "{}",
                row.iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            )?;
        }
        writeln!(w, "# reflectivity")?;
        for row in self.reflectivity.chunks(self.depth.width) {
            writeln!(
                w,
                "{}",
                row.iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Oracle,
    Fast,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Oracle => "oracle",
            Engine::Fast => "fast",
        })
    }
}

impl FromStr for Engine {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Engine::Oracle),
            "fast" => Ok(Engine::Fast),
            _ => Err(SimError::param(format!(
                "unknown engine '{s}' (oracle|fast)"
            ))),
        }
    }
}

/// Simulates one pixel with the chosen engine.
pub fn simulate_pixel<R: Rng + ?Sized>(
    engine: Engine,
    sys: &SystemParams,
    env: &EnvParams,
    model: Option<&AeModel>,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<TimestampBatch> {
    match engine {
        Engine::Oracle => Ok(simulate_registrations(sys, env, grid, rng)?.rel_times),
        Engine::Fast => {
            let model = model.ok_or_else(|| SimError::param("fast engine requires a model"))?;
            fast_simulate(sys, env, model, grid, rng)
        }
    }
}

#[derive(Debug, Clone)]
pub struct ImageResult {
    pub engine: Engine,
    pub batches: Vec<TimestampBatch>,
    pub depth: DepthMap,
    /// Sum of per-pixel simulation times.
    pub pixel_time: Duration,
    /// Elapsed wall time for the whole image.
    pub wall_time: Duration,
}

impl ImageResult {
    pub fn mean_pixel_seconds(&self) -> f64 {
        self.pixel_time.as_secs_f64() / self.batches.len().max(1) as f64
    }

    pub fn total_photons(&self) -> usize {
        self.batches.iter().map(|b| b.count()).sum()
    }

    pub fn write_runtime_csv<W: Write>(&self, w: W) -> io::Result<()> {
        write_runtime_report(w, std::slice::from_ref(self))
    }

    /// Pixel index and timestamp, one registered photon per row.
    pub fn write_timestamps_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "pixel,time")?;
        for (p, b) in self.batches.iter().enumerate() {
            for t in &b.times {
                writeln!(w, "{p},{t}")?;
            }
        }
        Ok(())
    }
}

/// Runtime CSV with one row per image result.
pub fn write_runtime_report<W: Write>(mut w: W, results: &[ImageResult]) -> io::Result<()> {
    writeln!(
        w,
        "engine,pixels,total_pixel_seconds,mean_pixel_seconds,wall_seconds,photons"
    )?;
    for r in results {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.engine,
            r.batches.len(),
            r.pixel_time.as_secs_f64(),
            r.mean_pixel_seconds(),
            r.wall_time.as_secs_f64(),
            r.total_photons()
        )?;
    }
    Ok(())
}

/// Per-pixel simulation with stream `rng.child(pixel)`; pixels with no
/// registered photon get a `NaN` depth.
pub fn simulate_image(
    scene: &SceneSpec,
    sys: &SystemParams,
    model: Option<&AeModel>,
    engine: Engine,
    grid: &TimeGrid,
    rng: RngHandle,
) -> Result<ImageResult> {
    scene.validate(sys)?;
    if engine == Engine::Fast && model.is_none() {
        return Err(SimError::param("fast engine requires a model"));
    }
    let wall = Instant::now();
    let per_pixel: Vec<(TimestampBatch, Duration)> = (0..scene.n_pixels())
        .into_par_iter()
        .map(|p| {
            let env = scene.env(p);
            let mut r = rng.child(p as u64).rng();
            let t0 = Instant::now();
            let batch = simulate_pixel(engine, sys, &env, model, grid, &mut r)?;
            Ok((batch, t0.elapsed()))
        })
        .collect::<Result<_>>()?;
    let wall_time = wall.elapsed();
    let pixel_time = per_pixel.iter().map(|p| p.1).sum();
    let depths = per_pixel
        .iter()
        .map(|(b, _)| estimate_depth(b).unwrap_or(f64::NAN))
        .collect();
    Ok(ImageResult {
        engine,
        batches: per_pixel.into_iter().map(|p| p.0).collect(),
        depth: DepthMap::new(scene.depth.width, scene.depth.height, depths)?,
        pixel_time,
        wall_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::arrival_pdf;
    use crate::stats;

    fn model(k: usize) -> AeModel {
        AeModel::new(k, 16, 10.0 / k as f64, 1).unwrap()
    }

    #[test]
    fn no_energy_gives_empty_batch() {
        let g = TimeGrid::new(64, 10.0).unwrap();
        let b = fast_simulate(
            &SystemParams::default(),
            &EnvParams::new(4.0, 0.0, 0.0),
            &model(64),
            &g,
            &mut RngHandle::new(1, 0).rng(),
        )
        .unwrap();
        assert!(b.is_empty());
    }

    #[test]
    fn depth_estimates() {
        assert_eq!(
            estimate_depth(&TimestampBatch::new(vec![2.5], 10.0).unwrap()).unwrap(),
            2.5
        );
        assert!(
            (estimate_depth(&TimestampBatch::new(vec![3.9, 4.1], 10.0).unwrap()).unwrap() - 4.0)
                .abs()
                < 1e-12
        );
        assert!(matches!(
            estimate_depth(&TimestampBatch::empty(10.0)),
            Err(SimError::NoPhotons)
        ));
    }

    #[test]
    fn oracle_depth_within_clt_band() {
        let sys = SystemParams {
            n_cycles: 200,
            ..Default::default()
        };
        let env = EnvParams::new(4.0, 3.0, 0.1);
        let g = TimeGrid::new(1024, 10.0).unwrap();
        let emp = crate::oracle::empirical_pdf(&sys, &env, &g, 400, RngHandle::new(2, 0)).unwrap();
        let res = simulate_registrations(&sys, &env, &g, &mut RngHandle::new(3, 0).rng()).unwrap();
        let d = estimate_depth(&res.rel_times).unwrap();
        let band = 3.0 * emp.pdf.variance().sqrt() / (res.m_r as f64).sqrt();
        assert!(
            (d - emp.pdf.mean()).abs() < band,
            "depth {d} mean {} band {band}",
            emp.pdf.mean()
        );
    }

    #[test]
    fn count_statistics_match_estimate() {
        let sys = SystemParams::default();
        let env = EnvParams::new(4.0, 2.0, 1.0);
        let g = TimeGrid::new(256, 10.0).unwrap();
        let f_r = arrival_pdf(&build_flux(&sys, &env, &g).unwrap()).unwrap();
        let est = estimate_count(&sys, &env, &f_r).unwrap();
        let counts: Vec<f64> = (0..10_000)
            .map(|i| {
                let mut r = RngHandle::new(4, i).rng();
                sample_count(&est, &mut r) as f64
            })
            .collect();
        let (m, v) = stats::mean_var(&counts);
        assert!((m / est.mean_r - 1.0).abs() < 0.02);
        assert!((v.sqrt() / est.std_r - 1.0).abs() < 0.10);
    }

    #[test]
    fn single_pixel_image_matches_fast_simulate() {
        let sys = SystemParams::default();
        let g = TimeGrid::new(64, 10.0).unwrap();
        let m = model(64);
        let scene = SceneSpec::uniform(DepthMap::constant(1, 1, 4.0), 1.0, 1.0, 2.0);
        let rng = RngHandle::new(5, 0);
        let img = simulate_image(&scene, &sys, Some(&m), Engine::Fast, &g, rng).unwrap();
        let direct = fast_simulate(&sys, &scene.env(0), &m, &g, &mut rng.child(0).rng()).unwrap();
        assert_eq!(img.batches[0], direct);
        assert_eq!(img.depth.depths[0], estimate_depth(&direct).unwrap());
    }

    #[test]
    fn image_is_schedule_independent() {
        let sys = SystemParams {
            n_cycles: 50,
            ..Default::default()
        };
        let g = TimeGrid::new(64, 10.0).unwrap();
        let scene = SceneSpec::uniform(DepthMap::ramp(4, 3, 2.0, 6.0), 1.0, 0.5, 1.5);
        let a =
            simulate_image(&scene, &sys, None, Engine::Oracle, &g, RngHandle::new(6, 0)).unwrap();
        let b =
            simulate_image(&scene, &sys, None, Engine::Oracle, &g, RngHandle::new(6, 0)).unwrap();
        assert_eq!(a.batches, b.batches);
        assert!(
            simulate_image(&scene, &sys, None, Engine::Fast, &g, RngHandle::new(6, 0)).is_err()
        );
    }

    #[test]
    fn dark_pixels_are_invalid() {
        let sys = SystemParams {
            n_cycles: 1,
            ..Default::default()
        };
        let g = TimeGrid::new(64, 10.0).unwrap();
        let scene = SceneSpec::uniform(DepthMap::constant(3, 3, 4.0), 1.0, 0.0, 0.001);
        let img =
            simulate_image(&scene, &sys, None, Engine::Oracle, &g, RngHandle::new(7, 0)).unwrap();
        assert!(img.depth.n_invalid() > 0);
    }

    #[test]
    fn scene_text_round_trip() {
        let mut scene = SceneSpec::uniform(DepthMap::ramp(3, 2, 2.0, 6.0), 0.5, 1.0, 4.0);
        scene.reflectivity[4] = 0.75;
        let mut text = Vec::new();
        scene.write(&mut text).unwrap();
        let back = SceneSpec::parse(std::str::from_utf8(&text).unwrap()).unwrap();
        assert_eq!(back, scene);
        assert!(SceneSpec::parse("2 2 1 1\n1 2 3 4\n1 1 1").is_err());
        assert!(SceneSpec::parse("2 2 1 1\n1 2 3 4\n1 1 1 1 9").is_err());
        assert_eq!(DepthMap::ramp(3, 1, 2.0, 6.0).depths, vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn engine_parse() {
        assert_eq!("fast".parse::<Engine>().unwrap(), Engine::Fast);
        assert_eq!("oracle".parse::<Engine>().unwrap().to_string(), "oracle");
        assert!("gpu".parse::<Engine>().is_err());
    }
}
