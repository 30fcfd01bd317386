use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use kglab::covariance::{covariance, increment_moment};
use kglab::reduction::{decompose, lipschitz_constant, picard_solve, sample_critical_field};
use kglab::regularity::{
    lil_experiment, lil_experiment_line, mc_experiment, mc_experiment_line, propagation_experiment, sim_lil_bound,
    singularity_scan, write_records, LineModel, ScanConfig, ScanResult, DEFAULT_POINTS_PER_SHIFT,
};
use kglab::sampler::{sample_grid_walsh, ExactSampler, FieldSample, GridSpec};
use kglab::{CharCoords, SpaceTimePoint};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::{keyed, CliError};

pub const VERSION: &str = concat!("kglab ", env!("CARGO_PKG_VERSION"));

/// Writes the CSV and JSON artifacts of one run.
pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::config("out_dir", format!("{}: {e}", cfg.out_dir.display())))?;
        Ok(Self { dir: cfg.out_dir.clone() })
    }

    pub fn csv(&self, name: &str, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
        let mut out = BufWriter::new(File::create(self.dir.join(name))?);
        body(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Summary JSON: version, config echo, wall-clock timestamp and results.
    pub fn summary(&self, cfg: &ExperimentConfig, results: Value) -> Result<(), CliError> {
        let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let doc = json!({
            "version": VERSION,
            "command": cfg.command,
            "config": cfg.echo(),
            "generated_unix": stamp,
            "results": results,
        });
        let path = self.dir.join(format!("{}.json", cfg.command));
        fs::write(path, serde_json::to_string_pretty(&doc).expect("plain data serializes"))?;
        Ok(())
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<(), CliError> {
    match cfg.command.as_str() {
        "cov" => cov(cfg),
        "sample" => sample(cfg),
        "picard" => picard(cfg),
        "lil" => lil(cfg),
        "mc" => mc(cfg),
        "simlil" => simlil(cfg),
        "scan" => scan(cfg),
        "propagate" => propagate(cfg),
        other => Err(CliError::config("command", format!("unknown subcommand `{other}`"))),
    }
}

fn cov(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let p = cfg.raw.point("p", None)?;
    let q = cfg.raw.point("q", Some(p))?;
    for (key, pt) in [("p", p), ("q", q)] {
        if !(0.0..=cfg.params.horizon).contains(&pt.t) {
            return Err(CliError::config(key, format!("t = {} outside [0, T]", pt.t)));
        }
    }
    let value = covariance(p, q, &cfg.params)?;
    let moment = increment_moment(p, q, &cfg.params)?;
    println!("{value}");
    Artifacts::new(cfg)?.summary(cfg, json!({ "covariance": value, "increment_moment": moment, "regime": format!("{:?}", cfg.params.regime()) }))
}

fn sample(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let points = cfg.raw.points("points", &[SpaceTimePoint::new(1.0, 0.0)])?;
    if points.is_empty() {
        return Err(CliError::config("points", "empty"));
    }
    let method = cfg.raw.str_or("method", "exact");
    let seed = cfg.seed();
    let samples: Vec<FieldSample> = match method {
        "exact" => {
            let sampler = ExactSampler::new(&points, &cfg.params).map_err(keyed("points"))?;
            (0..cfg.replicas as u64)
                .into_par_iter()
                .map(|r| FieldSample::new(points.clone(), sampler.sample(seed.replica(r)), seed.replica(r), "exact"))
                .collect()
        }
        "walsh" => {
            if !cfg.params.is_critical() {
                return Err(CliError::config("method", "the walsh sampler needs m = a/2"));
            }
            let step = cfg.raw.f64_or("step", 2f64.powi(-7))?;
            if !(step > 0.0) {
                return Err(CliError::config("step", "must be positive"));
            }
            let spec = GridSpec::covering(&points, step, step);
            (0..cfg.replicas as u64)
                .into_par_iter()
                .map(|r| sample_grid_walsh(&points, spec, cfg.params.a, seed.replica(r)).map_err(keyed("points")))
                .collect::<Result<_, _>>()?
        }
        other => return Err(CliError::config("method", format!("expected exact or walsh, got `{other}`"))),
    };
    let art = Artifacts::new(cfg)?;
    art.csv("samples.csv", |out| FieldSample::write_csv(&samples, out))?;
    art.summary(cfg, json!({ "points": points.len(), "replicas": samples.len(), "method": method }))
}

fn picard(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let step = cfg.raw.f64_or("step", 2f64.powi(-6))?;
    if !(step > 0.0) {
        return Err(CliError::config("step", "must be positive"));
    }
    let horizon = cfg.params.horizon;
    let ns = (horizon / step).round() as usize;
    if ns == 0 || ((ns as f64) * step - horizon).abs() > 1e-9 * horizon {
        return Err(CliError::config("step", format!("T = {horizon} is not a multiple of the step {step}")));
    }
    let period = cfg.raw.f64_or("period", 4.0 * horizon)?;
    let ny = (period / step).round() as usize;
    if ((ny as f64) * step - period).abs() > 1e-9 * period || 2 * ns >= ny {
        return Err(CliError::config("period", format!("need a multiple of the step larger than 2T, got {period}")));
    }
    let tol = cfg.raw.f64_or("tol", kglab::reduction::DEFAULT_PICARD_TOL)?;
    let max_iter = cfg.raw.usize_or("max_iter", kglab::reduction::DEFAULT_PICARD_MAX_ITER)?;
    let spec = GridSpec::periodic(step, step, ns, ny);
    let seed = cfg.seed();
    let runs: Vec<(usize, bool, f64, f64, Vec<f64>)> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let (_, u_c) = sample_critical_field(spec, cfg.params.a, seed.replica(r))?;
            let (u, report) = picard_solve(&u_c, &cfg.params, tol, max_iter)?;
            let d = decompose(&u, &u_c)?;
            Ok((report.iterations, report.converged, d.statistic, d.bound(&cfg.params), report.residual_history))
        })
        .collect::<Result<_, kglab::KgError>>()?;
    let art = Artifacts::new(cfg)?;
    art.csv("picard_residuals.csv", |out| {
        writeln!(out, "replica_id,iteration,residual")?;
        for (r, run) in runs.iter().enumerate() {
            for (k, res) in run.4.iter().enumerate() {
                writeln!(out, "{r},{},{res:e}", k + 1)?;
            }
        }
        Ok(())
    })?;
    art.csv("picard_lipschitz.csv", |out| {
        writeln!(out, "replica_id,iterations,converged,statistic,bound")?;
        for (r, run) in runs.iter().enumerate() {
            writeln!(out, "{r},{},{},{:e},{:e}", run.0, run.1, run.2, run.3)?;
        }
        Ok(())
    })?;
    let converged = runs.iter().filter(|r| r.1).count();
    let within = runs.iter().filter(|r| r.2 <= r.3).count();
    println!("{converged}/{} converged; Lipschitz bound held in {within}", runs.len());
    art.summary(
        cfg,
        json!({
            "converged": converged,
            "within_bound": within,
            "lipschitz_constant": lipschitz_constant(&cfg.params),
            "contraction_bound": cfg.params.discriminant().abs() * horizon * horizon / 2.0,
        }),
    )
}

fn scales(cfg: &ExperimentConfig, lo: usize, hi: usize) -> Result<std::ops::RangeInclusive<u32>, CliError> {
    let n_min = cfg.raw.usize_or("n_min", lo)? as u32;
    let n_max = cfg.raw.usize_or("n_max", hi)? as u32;
    if n_min > n_max {
        return Err(CliError::config("n_min", format!("{n_min} exceeds n_max = {n_max}")));
    }
    Ok(n_min..=n_max)
}

fn summary_json(summary: &[kglab::regularity::ScaleSummary]) -> Value {
    serde_json::to_value(summary).expect("plain data serializes")
}

fn lil(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let point = CharCoords::new(cfg.raw.f64_or("w", 0.5)?, cfg.raw.f64_or("z", 1.0)?);
    let range = scales(cfg, 4, 20)?;
    let report = match cfg.raw.str_or("model", "field") {
        "field" => lil_experiment(point, range, &cfg.params, cfg.replicas, cfg.seed()).map_err(keyed("z"))?,
        "brownian" => lil_experiment_line(LineModel::Brownian, point.z, range, cfg.replicas, cfg.seed())?,
        other => return Err(CliError::config("model", format!("expected field or brownian, got `{other}`"))),
    };
    let art = Artifacts::new(cfg)?;
    art.csv("lil_records.csv", |out| write_records(&report.records, out))?;
    art.csv("lil_traces.csv", |out| {
        writeln!(out, "replica_id,n,running_max")?;
        for (r, trace) in report.traces.iter().enumerate() {
            for (n, v) in report.scales.iter().zip(trace) {
                writeln!(out, "{r},{n},{v:e}")?;
            }
        }
        Ok(())
    })?;
    art.summary(cfg, json!({ "location": report.location, "summary": summary_json(&report.summary) }))
}

fn mc(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let interval = (cfg.raw.f64_or("z_lo", 0.75)?, cfg.raw.f64_or("z_hi", 1.25)?);
    let w = cfg.raw.f64_or("w", 0.5)?;
    let range = scales(cfg, 8, 16)?;
    let per_shift = cfg.raw.usize_or("per_shift", DEFAULT_POINTS_PER_SHIFT)?;
    let seed = cfg.seed();
    let report = match cfg.raw.str_or("model", "field") {
        "field" => {
            if !cfg.params.is_critical() {
                return Err(CliError::config("model", "the field line sampler needs m = a/2"));
            }
            mc_experiment(interval, w, range, per_shift, &cfg.params, cfg.replicas, seed).map_err(keyed("z_hi"))?
        }
        "brownian" => mc_experiment_line(LineModel::Brownian, interval, range, per_shift, cfg.replicas, seed)?,
        "y" => {
            let t0 = cfg.raw.f64_or("t0", (1.0 / std::f64::consts::SQRT_2).ln_1p())?;
            mc_experiment_line(LineModel::Y { t0, a: cfg.params.a }, interval, range, per_shift, cfg.replicas, seed)
                .map_err(keyed("t0"))?
        }
        other => return Err(CliError::config("model", format!("expected field, brownian or y, got `{other}`"))),
    };
    let art = Artifacts::new(cfg)?;
    art.csv("mc_records.csv", |out| write_records(&report.records, out))?;
    art.summary(cfg, json!({ "interval": report.interval, "per_shift": report.per_shift, "summary": summary_json(&report.summary) }))
}

fn simlil(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let z0 = cfg.raw.f64_or("z", 1.0)?;
    let ws = cfg.raw.f64_list_or("w_list", &[0.25, 0.5, 0.75])?;
    let range = scales(cfg, 4, 20)?;
    let report = sim_lil_bound(z0, &ws, range, &cfg.params, cfg.replicas, cfg.seed()).map_err(keyed("w_list"))?;
    let art = Artifacts::new(cfg)?;
    art.csv("simlil_records.csv", |out| write_records(&report.records, out))?;
    art.summary(
        cfg,
        json!({ "w_grid": report.w_grid, "growth": report.growth, "bounded": report.bounded, "summary": summary_json(&report.summary) }),
    )
}

fn scan_config(cfg: &ExperimentConfig) -> Result<ScanConfig, CliError> {
    if !cfg.params.is_critical() {
        return Err(CliError::config("m", "the singularity scan needs m = a/2"));
    }
    Ok(ScanConfig {
        z_interval: (cfg.raw.f64_or("z_lo", 0.5)?, cfg.raw.f64_or("z_hi", 1.0)?),
        w0: cfg.raw.f64_or("w0", 4.0)?,
        n_star: cfg.raw.usize_or("n_star", 16)? as u32,
        a: cfg.params.a,
        null_runs: cfg.raw.usize_or("null_runs", 1000)?,
    })
}

/// The scanned segment, carried to `w_max`, must lie inside `[0, T]`.
fn check_scan_horizon(cfg: &ExperimentConfig, sc: &ScanConfig, w_max: f64) -> Result<(), CliError> {
    let t = (w_max + sc.z_interval.1) / std::f64::consts::SQRT_2 + kglab::regularity::scale(sc.n_star.max(4));
    if t > cfg.params.horizon {
        return Err(CliError::config("T", format!("the scan reaches t = {t:.4} beyond T = {}", cfg.params.horizon)));
    }
    Ok(())
}

fn run_scans(cfg: &ExperimentConfig, sc: ScanConfig) -> Result<Vec<ScanResult>, CliError> {
    let seed = cfg.seed();
    Ok((0..cfg.replicas as u64).into_par_iter().map(|r| singularity_scan(sc, seed.replica(r))).collect::<Result<_, _>>()?)
}

fn write_scans(art: &Artifacts, scans: &[ScanResult]) -> Result<(), CliError> {
    art.csv("scan.csv", |out| {
        writeln!(out, "replica_id,w0,z_hat,y_at_z_hat,dy_at_z_hat,r_at_w0,statistic,null_q95,exceeds_q95,x_term_ratio")?;
        for s in scans {
            writeln!(
                out,
                "{},{},{},{:e},{:e},{:e},{:e},{:e},{},{:e}",
                s.seed.replica_id,
                s.z_hat.w,
                s.z_hat.z,
                s.y_at_z_hat,
                s.dy_at_z_hat,
                s.r_at_w0,
                s.statistic,
                s.null_quantile(0.95).unwrap_or(f64::NAN),
                s.exceeds_null(0.95),
                s.x_term_ratio
            )?;
        }
        Ok(())
    })
}

fn scan(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let sc = scan_config(cfg)?;
    check_scan_horizon(cfg, &sc, sc.w0)?;
    let scans = run_scans(cfg, sc)?;
    let art = Artifacts::new(cfg)?;
    write_scans(&art, &scans)?;
    let hits = scans.iter().filter(|s| s.exceeds_null(0.95)).count();
    println!("statistic above the 95% null quantile in {hits}/{} runs", scans.len());
    art.summary(cfg, json!({ "runs": scans.len(), "exceed_q95": hits }))
}

fn propagate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let sc = scan_config(cfg)?;
    let ws = cfg.raw.f64_list_or("w_list", &[sc.w0 + 0.125, sc.w0 + 0.25, sc.w0 + 0.5])?;
    check_scan_horizon(cfg, &sc, ws.iter().copied().fold(sc.w0, f64::max))?;
    let scans = run_scans(cfg, sc)?;
    let seed = cfg.seed().derive(0x5052_4f50);
    let reports = scans
        .par_iter()
        .map(|s| propagation_experiment(s, &ws, seed.replica(s.seed.replica_id)).map_err(CliError::from))
        .collect::<Result<Vec<_>, _>>()?;
    let art = Artifacts::new(cfg)?;
    write_scans(&art, &scans)?;
    art.csv("propagate.csv", |out| {
        writeln!(out, "replica_id,w,statistic,null_q95,exceeds_q95,x_term_ratio")?;
        for (s, p) in scans.iter().zip(&reports) {
            for k in 0..p.w_values.len() {
                writeln!(
                    out,
                    "{},{},{:e},{:e},{},{:e}",
                    s.seed.replica_id, p.w_values[k], p.statistics[k], p.null_q95[k], p.exceeds[k], p.x_term_ratio[k]
                )?;
            }
        }
        Ok(())
    })?;
    let per_w: Vec<usize> = (0..ws.len()).map(|k| reports.iter().filter(|p| p.exceeds[k]).count()).collect();
    println!("propagated above the null quantile: {per_w:?} of {} runs", reports.len());
    art.summary(cfg, json!({ "runs": reports.len(), "w_values": ws, "exceed_q95": per_w }))
}
