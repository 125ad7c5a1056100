use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use splsim_core::bench::{write_count_hist, write_pdf_compare, write_runtime};
use splsim_core::dataset::{generate_dataset, read_dataset, write_dataset};
use splsim_core::net::{load_model, save_model, AdamConfig, TrainConfig};
use splsim_core::{
    build_flux, empirical_pdf, estimate_count, predict_pdf, run_benchmark, simulate_image,
    write_runtime_report, AeModel, Config, DatasetConfig, DepthMap, Engine, EnvParams, RngHandle,
    SceneSpec, SimError, Split, SystemParams, TimeGrid,
};

use crate::{Cli, Command, EngineArg, EnvArgs, Failure, PlotKindArg, SysArgs};

type Result<T> = std::result::Result<T, Failure>;

/// Bins used when neither a flag, the config file nor a model decides.
const DEFAULT_BINS: usize = 1024;
const DESK_EPOCHS: usize = 300;
const FULL_SCALE_EPOCHS: usize = 5000;

struct Settings {
    sys: SystemParams,
    env: EnvParams,
    bins: Option<usize>,
    seed: u64,
}

fn settings(cli: &Cli, sys: Option<&SysArgs>, env: Option<&EnvArgs>) -> Result<Settings> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path).map_err(at(path))?,
        None => Config::default(),
    };
    if let Some(a) = sys {
        set_opt(&mut cfg, "t_r", a.t_r);
        set_opt(&mut cfg, "t_d", a.t_d);
        set_opt(&mut cfg, "sigma_t", a.sigma_t);
        set_opt(&mut cfg, "n_cycles", a.n_cycles);
    }
    if let Some(a) = env {
        set_opt(&mut cfg, "tau", a.tau);
        set_opt(&mut cfg, "s_level", a.s_level);
        set_opt(&mut cfg, "b_level", a.b_level);
    }
    set_opt(&mut cfg, "n_bins", cli.bins);
    set_opt(&mut cfg, "seed", cli.seed);
    let sys = cfg.system()?;
    let env = cfg.env()?;
    if let Some(0) = cfg.n_bins()? {
        return Err(SimError::Parameter("bins must be >= 1".into()).into());
    }
    Ok(Settings {
        sys,
        env,
        bins: cfg.n_bins()?,
        seed: cfg.seed()?.unwrap_or(0),
    })
}

fn set_opt<T: ToString>(cfg: &mut Config, key: &str, value: Option<T>) {
    if let Some(v) = value {
        cfg.set(key, v);
    }
}

/// Loads a model and checks it against an explicitly requested width.
fn model_for(path: &Path, bins: Option<usize>) -> Result<AeModel> {
    let model = load_model(path).map_err(at(path))?;
    if let Some(k) = bins {
        if model.input_dim() != k {
            return Err(SimError::Parameter(format!(
                "model {} has {} bins but {k} were requested",
                path.display(),
                model.input_dim()
            ))
            .into());
        }
    }
    Ok(model)
}

/// Prefixes an error with the file it concerns.
fn at(path: &Path) -> impl Fn(SimError) -> Failure + '_ {
    move |e| {
        let mut f = Failure::from(e);
        f.message = format!("{}: {}", path.display(), f.message);
        f
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// `--out` file or stdout.
fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenDataset {
            n,
            realizations,
            full_scale,
            sys,
        } => {
            let s = settings(cli, Some(sys), None)?;
            let mut cfg = if *full_scale {
                DatasetConfig::full_scale()
            } else {
                DatasetConfig::default()
            };
            if let Some(n) = n {
                cfg.n_samples = *n;
            }
            cfg.n_bins = s.bins.unwrap_or(cfg.n_bins);
            cfg.realizations = *realizations;
            cfg.seed = s.seed;
            let ds = generate_dataset(&s.sys, &cfg)?;
            let out = cli.out.clone().unwrap_or_else(|| "dataset.splds".into());
            write_dataset(&ds, &out)?;
            log::info!(
                "wrote {} pairs at K={} to {}",
                ds.samples.len(),
                cfg.n_bins,
                out.display()
            );
            Ok(())
        }
        Command::Train {
            dataset,
            epochs,
            batch_size,
            lr,
            latent,
            full_scale,
            history,
        } => {
            let s = settings(cli, None, None)?;
            let ds = read_dataset(dataset).map_err(at(dataset))?;
            if let Some(k) = s.bins.filter(|&k| k != ds.header.grid.n_bins) {
                return Err(SimError::Parameter(format!(
                    "dataset has {} bins but {k} were requested",
                    ds.header.grid.n_bins
                ))
                .into());
            }
            let cfg = TrainConfig {
                batch_size: *batch_size,
                epochs: epochs.unwrap_or(if *full_scale {
                    FULL_SCALE_EPOCHS
                } else {
                    DESK_EPOCHS
                }),
                adam: AdamConfig {
                    lr: *lr,
                    ..AdamConfig::default()
                },
                seed: s.seed,
                ..TrainConfig::default()
            };
            if *full_scale {
                log::info!("full-scale schedule: reference held-out RMSE is 0.017");
            }
            let (model, report) = ds.train_model(*latent, &cfg)?;
            let out = cli.out.clone().unwrap_or_else(|| "model.splae".into());
            save_model(&model, &out)?;
            if let Some(path) = history {
                let mut w = create(path)?;
                writeln!(w, "epoch,train_loss,validation_loss")?;
                for e in &report.history {
                    let v = e.validation.map(|v| v.to_string()).unwrap_or_default();
                    writeln!(w, "{},{},{v}", e.epoch + 1, e.train)?;
                }
                w.flush()?;
            }
            let mut w = BufWriter::new(io::stdout().lock());
            writeln!(w, "split,samples,rmse,median_ks")?;
            for (name, split) in [("train", Split::Train), ("test", Split::Test)] {
                if ds.split(split).next().is_some() {
                    let m = ds.evaluate(&model, split)?;
                    writeln!(w, "{name},{},{},{}", m.samples, m.rmse, m.median_ks)?;
                }
            }
            w.flush()?;
            Ok(())
        }
        Command::Simulate {
            engine,
            scene,
            model,
            sys,
            env,
        } => {
            let s = settings(cli, Some(sys), Some(env))?;
            let engine = engine_of(*engine);
            let model = match (engine, model) {
                (_, Some(p)) => Some(model_for(p, s.bins)?),
                (Engine::Fast, None) => {
                    return Err(Failure::usage("--engine fast requires --model"))
                }
                (Engine::Oracle, None) => None,
            };
            let scene = match scene {
                Some(p) => SceneSpec::load(p).map_err(at(p))?,
                None => SceneSpec::uniform(
                    DepthMap::constant(1, 1, s.env.tau),
                    1.0,
                    s.env.b_level,
                    s.env.s_level,
                ),
            };
            let bins = model
                .as_ref()
                .map(|m| m.input_dim())
                .or(s.bins)
                .unwrap_or(DEFAULT_BINS);
            let grid = TimeGrid::for_system(&s.sys, bins)?;
            let result = simulate_image(
                &scene,
                &s.sys,
                model.as_ref(),
                engine,
                &grid,
                RngHandle::new(s.seed, 0),
            )?;
            let dir = cli.out.clone().unwrap_or_else(|| "sim_out".into());
            fs::create_dir_all(&dir)?;
            let mut w = create(&dir.join("depth.csv"))?;
            result.depth.write_csv(&mut w)?;
            w.flush()?;
            let mut w = create(&dir.join("runtime.csv"))?;
            result.write_runtime_csv(&mut w)?;
            w.flush()?;
            let mut w = create(&dir.join("timestamps.csv"))?;
            result.write_timestamps_csv(&mut w)?;
            w.flush()?;
            let mut w = create(&dir.join("timestamps.bin"))?;
            for b in &result.batches {
                b.write_binary(&mut w)?;
            }
            w.flush()?;
            let mut hist = vec![0u64; grid.n_bins];
            for b in &result.batches {
                for (acc, c) in hist.iter_mut().zip(b.histogram(&grid)) {
                    *acc += c;
                }
            }
            let total: u64 = hist.iter().sum();
            let mut w = create(&dir.join("histogram.csv"))?;
            writeln!(w, "bin_center,density")?;
            for (c, n) in grid.centers().zip(&hist) {
                let d = if total > 0 {
                    *n as f64 / (total as f64 * grid.width())
                } else {
                    0.0
                };
                writeln!(w, "{c},{d}")?;
            }
            w.flush()?;
            if result.depth.n_invalid() > 0 {
                log::warn!("{} pixels registered no photons", result.depth.n_invalid());
            }
            Ok(())
        }
        Command::EstimateCount {
            model,
            realizations,
            sys,
            env,
        } => {
            let s = settings(cli, Some(sys), Some(env))?;
            s.env.validate(&s.sys)?;
            let f_r = match model {
                Some(p) => {
                    let m = model_for(p, s.bins)?;
                    let grid = TimeGrid::for_system(&s.sys, m.input_dim())?;
                    predict_pdf(&m, &build_flux(&s.sys, &s.env, &grid)?)?
                }
                None => {
                    let grid = TimeGrid::for_system(&s.sys, s.bins.unwrap_or(DEFAULT_BINS))?;
                    empirical_pdf(
                        &s.sys,
                        &s.env,
                        &grid,
                        *realizations,
                        RngHandle::new(s.seed, 0),
                    )?
                    .pdf
                }
            };
            let est = estimate_count(&s.sys, &s.env, &f_r)?;
            let mut w = sink(&cli.out)?;
            writeln!(w, "mean_r,std_r,e_loss")?;
            writeln!(w, "{},{},{}", est.mean_r, est.std_r, est.e_loss)?;
            w.flush()?;
            eprintln!("unrefined std: {}", est.unrefined_std());
            Ok(())
        }
        Command::Benchmark {
            model,
            cycles,
            reps,
            sys,
            env,
        } => {
            let s = settings(cli, Some(sys), Some(env))?;
            let model = model_for(model, s.bins)?;
            let grid = TimeGrid::for_system(&s.sys, model.input_dim())?;
            let report = run_benchmark(
                &s.sys,
                &s.env,
                cycles,
                *reps,
                &model,
                &grid,
                RngHandle::new(s.seed, 0),
            )?;
            let mut w = sink(&cli.out)?;
            report.write_csv(&mut w)?;
            w.flush()?;
            if let Some(&n) = cycles.last() {
                if let (Some(o), Some(f)) =
                    (report.get(Engine::Oracle, n), report.get(Engine::Fast, n))
                {
                    eprintln!("speedup at N={n}: {:.1}x", o.seconds / f.seconds);
                }
            }
            Ok(())
        }
        Command::PlotData {
            kind,
            model,
            realizations,
            cycles,
            reps,
            sys,
            env,
        } => {
            let s = settings(cli, Some(sys), Some(env))?;
            let rng = RngHandle::new(s.seed, 0);
            let need_model = |m: &Option<PathBuf>| -> Result<AeModel> {
                match m {
                    Some(p) => model_for(p, s.bins),
                    None => Err(Failure::usage("this plot kind requires --model")),
                }
            };
            let mut w = sink(&cli.out)?;
            match kind {
                PlotKindArg::CountHist => {
                    let grid = TimeGrid::for_system(&s.sys, s.bins.unwrap_or(DEFAULT_BINS))?;
                    write_count_hist(&mut w, &s.sys, &[s.env], &grid, *realizations, rng)?;
                }
                PlotKindArg::PdfCompare => {
                    let m = need_model(model)?;
                    let grid = TimeGrid::for_system(&s.sys, m.input_dim())?;
                    let emp = empirical_pdf(&s.sys, &s.env, &grid, *realizations, rng)?;
                    write_pdf_compare(&mut w, &s.sys, &s.env, &emp, &m)?;
                }
                PlotKindArg::Runtime => {
                    let m = need_model(model)?;
                    let grid = TimeGrid::for_system(&s.sys, m.input_dim())?;
                    let report = run_benchmark(&s.sys, &s.env, cycles, *reps, &m, &grid, rng)?;
                    write_runtime(&mut w, &report)?;
                }
            }
            w.flush()?;
            Ok(())
        }
        Command::DepthDemo {
            model,
            width,
            height,
            near,
            far,
            reflectivity,
            sys,
            env,
        } => {
            let s = settings(cli, Some(sys), Some(env))?;
            if *width == 0 || *height == 0 {
                return Err(
                    SimError::Parameter("scene must have at least one pixel".into()).into(),
                );
            }
            let model = model_for(model, s.bins)?;
            let grid = TimeGrid::for_system(&s.sys, model.input_dim())?;
            let scene = SceneSpec::uniform(
                DepthMap::ramp(*width, *height, *near, *far),
                *reflectivity,
                s.env.b_level,
                s.env.s_level,
            );
            let dir = cli.out.clone().unwrap_or_else(|| "depth_demo".into());
            fs::create_dir_all(&dir)?;
            let mut results = Vec::new();
            for engine in [Engine::Oracle, Engine::Fast] {
                let r = simulate_image(
                    &scene,
                    &s.sys,
                    Some(&model),
                    engine,
                    &grid,
                    RngHandle::new(s.seed, 0),
                )?;
                let mut w = create(&dir.join(format!("depth_{engine}.csv")))?;
                r.depth.write_csv(&mut w)?;
                w.flush()?;
                results.push(r);
            }
            let mut w = create(&dir.join("runtime.csv"))?;
            write_runtime_report(&mut w, &results)?;
            w.flush()?;
            let mut w = create(&dir.join("truth.csv"))?;
            scene.depth.write_csv(&mut w)?;
            w.flush()?;
            eprintln!(
                "oracle {:.3}s, fast {:.3}s summed per-pixel time ({:.1}x)",
                results[0].pixel_time.as_secs_f64(),
                results[1].pixel_time.as_secs_f64(),
                results[0].pixel_time.as_secs_f64() / results[1].pixel_time.as_secs_f64()
            );
            Ok(())
        }
    }
}

fn engine_of(e: EngineArg) -> Engine {
    match e {
        EngineArg::Oracle => Engine::Oracle,
        EngineArg::Fast => Engine::Fast,
    }
}
