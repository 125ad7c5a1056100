//! Per-pixel runtime harness and plot-data emitters.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Result, SimError};
use crate::fast_sim::{simulate_pixel, Engine};
use crate::grid::{build_flux, TimeGrid};
use crate::net::{predict_pdf, AeModel};
use crate::oracle::{run_oracle, EmpiricalPdf};
use crate::params::{EnvParams, SystemParams};
use crate::rng::RngHandle;
use crate::stats::median;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub n_cycles: u64,
    pub engine: Engine,
    /// Median per-pixel wall time over the timed repetitions.
    pub seconds: f64,
    /// Mean registered photons per pixel.
    pub photons: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn get(&self, engine: Engine, n_cycles: u64) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.engine == engine && r.n_cycles == n_cycles)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n_cycles,engine,seconds,photons")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{}", r.n_cycles, r.engine, r.seconds, r.photons)?;
        }
        Ok(())
    }
}

/// Times both engines for every cycle count. Each cell runs one untimed
/// warm-up repetition followed by `reps` timed ones on the calling thread.
pub fn run_benchmark(
    sys: &SystemParams,
    env: &EnvParams,
    cycles: &[u64],
    reps: usize,
    model: &AeModel,
    grid: &TimeGrid,
    rng: RngHandle,
) -> Result<BenchReport> {
    if reps < 3 {
        return Err(SimError::param("benchmark needs at least 3 repetitions"));
    }
    let mut report = BenchReport::default();
    for (ci, &n_cycles) in cycles.iter().enumerate() {
        let sys_n = SystemParams { n_cycles, ..*sys };
        sys_n.validate()?;
        for (ei, engine) in [Engine::Oracle, Engine::Fast].into_iter().enumerate() {
            let cell = rng.child((ci * 2 + ei) as u64);
            let mut times = Vec::with_capacity(reps);
            let mut photons = 0usize;
            for rep in 0..=reps {
                let mut r = cell.child(rep as u64).rng();
                let t0 = Instant::now();
                let batch = simulate_pixel(engine, &sys_n, env, Some(model), grid, &mut r)?;
                let dt = t0.elapsed().as_secs_f64();
                if rep > 0 {
                    times.push(dt);
                    photons += batch.count();
                }
            }
            report.rows.push(BenchRow {
                n_cycles,
                engine,
                seconds: median(&times),
                photons: photons as f64 / reps as f64,
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    CountHist,
    PdfCompare,
    Runtime,
}

impl FromStr for PlotKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count-hist" => Ok(PlotKind::CountHist),
            "pdf-compare" => Ok(PlotKind::PdfCompare),
            "runtime" => Ok(PlotKind::Runtime),
            _ => Err(SimError::param(format!(
                "unknown plot kind '{s}' (count-hist|pdf-compare|runtime)"
            ))),
        }
    }
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlotKind::CountHist => "count-hist",
            PlotKind::PdfCompare => "pdf-compare",
            PlotKind::Runtime => "runtime",
        })
    }
}

/// Arrival and registration counts per realization for each environment.
pub fn write_count_hist<W: Write>(
    mut w: W,
    sys: &SystemParams,
    envs: &[EnvParams],
    grid: &TimeGrid,
    realizations: usize,
    rng: RngHandle,
) -> Result<()> {
    writeln!(w, "tau,s_level,b_level,realization,arrivals,registrations")?;
    for (i, env) in envs.iter().enumerate() {
        let run = run_oracle(sys, env, grid, realizations, rng.child(i as u64))?;
        for (r, (m_a, m_r)) in run.counts.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{r},{m_a},{m_r}",
                env.tau, env.s_level, env.b_level
            )?;
        }
    }
    Ok(())
}

/// `bin_center,oracle_density,predicted_density`, one row per bin.
pub fn write_pdf_compare<W: Write>(
    mut w: W,
    sys: &SystemParams,
    env: &EnvParams,
    oracle: &EmpiricalPdf,
    model: &AeModel,
) -> Result<()> {
    let grid = oracle.grid();
    let predicted = predict_pdf(model, &build_flux(sys, env, grid)?)?;
    writeln!(w, "bin_center,oracle_density,predicted_density")?;
    for ((c, o), p) in grid.centers().zip(oracle.values()).zip(predicted.values()) {
        writeln!(w, "{c},{o},{p}")?;
    }
    Ok(())
}

pub fn write_runtime<W: Write>(w: W, report: &BenchReport) -> Result<()> {
    report.write_csv(w)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::empirical_pdf;

    #[test]
    fn plot_kind_parse() {
        assert_eq!(
            "count-hist".parse::<PlotKind>().unwrap(),
            PlotKind::CountHist
        );
        assert_eq!(
            "pdf-compare".parse::<PlotKind>().unwrap().to_string(),
            "pdf-compare"
        );
        assert!(matches!(
            "histogram".parse::<PlotKind>(),
            Err(SimError::Parameter(_))
        ));
    }

    #[test]
    fn pdf_compare_has_one_row_per_bin() {
        let sys = SystemParams::default();
        let env = EnvParams::default();
        let g = TimeGrid::new(64, 10.0).unwrap();
        let emp = empirical_pdf(&sys, &env, &g, 2, RngHandle::new(1, 0)).unwrap();
        let model = AeModel::new(64, 16, g.width(), 0).unwrap();
        let mut out = Vec::new();
        write_pdf_compare(&mut out, &sys, &env, &emp, &model).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 65);
        assert_eq!(
            text.lines().next().unwrap(),
            "bin_center,oracle_density,predicted_density"
        );
    }

    #[test]
    fn count_hist_rows() {
        let sys = SystemParams {
            n_cycles: 50,
            ..Default::default()
        };
        let g = TimeGrid::new(32, 10.0).unwrap();
        let envs = [EnvParams::new(4.0, 1.0, 1.0), EnvParams::new(4.0, 2.0, 1.0)];
        let mut a = Vec::new();
        write_count_hist(&mut a, &sys, &envs, &g, 10, RngHandle::new(2, 0)).unwrap();
        let mut b = Vec::new();
        write_count_hist(&mut b, &sys, &envs, &g, 10, RngHandle::new(2, 0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(String::from_utf8(a).unwrap().lines().count(), 21);
    }

    #[test]
    fn runtime_rows_per_cell() {
        let sys = SystemParams::default();
        let g = TimeGrid::new(64, 10.0).unwrap();
        let model = AeModel::new(64, 16, g.width(), 0).unwrap();
        let report = run_benchmark(
            &sys,
            &EnvParams::default(),
            &[10, 100],
            3,
            &model,
            &g,
            RngHandle::new(3, 0),
        )
        .unwrap();
        assert_eq!(report.rows.len(), 4);
        assert!(report.rows.iter().all(|r| r.seconds > 0.0));
        let mut out = Vec::new();
        write_runtime(&mut out, &report).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 5);
        assert!(run_benchmark(
            &sys,
            &EnvParams::default(),
            &[10],
            2,
            &model,
            &g,
            RngHandle::new(3, 0)
        )
        .is_err());
    }
}
