//! One function per subcommand. Each fills in the report and returns the
//! failure that decides the exit code.

use std::path::Path;
use std::time::Duration;

use hotv_core::approxlab::{smooth_approximate, PiecewiseSignal};
use hotv_core::density::phi;
use hotv_core::diagnostics::{excess_map, staircase_metric, tv_limit_error};
use hotv_core::dual::certify;
use hotv_core::energy::eval_energy;
use hotv_core::pgm::{read_mask, read_pgm, write_pgm};
use hotv_core::solver::solve;
use hotv_core::tensorgrid::DiffOperator;
use hotv_core::{fixtures, Error, Mask, Problem, ScalarField};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::report::Report;

pub const EXIT_MATH: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn usage(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            kind,
            message: message.into(),
        }
    }

    pub fn math(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code: EXIT_MATH,
            kind,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let message = e.to_string();
        match e {
            Error::Domain(_) => Self::math("domain", message),
            Error::Size(_) => Self::math("size", message),
            Error::EmptyObserved => Self::math("empty-observed", message),
            Error::EmptyDisk { .. } => Self::math("empty-disk", message),
            Error::ExtentMismatch { .. } => Self::usage("extent-mismatch", message),
            Error::Pgm { .. } | Error::UnsupportedMagic(_) => Self::usage("pgm", message),
            Error::Io(_) => Self::usage("io", message),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Self::usage("io", e.to_string())
    }
}

type Outcome = Result<(), Failure>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveKind {
    Denoise,
    Inpaint,
    Certify,
}

fn load_image(cfg: &RunConfig) -> Result<ScalarField, Failure> {
    match &cfg.input {
        Some(p) => Ok(read_pgm(p)?),
        None => Ok(fixtures::noisy_piecewise_affine(
            cfg.fixture_n,
            cfg.fixture_noise,
            cfg.fixture_seed,
        )?),
    }
}

fn load_mask(cfg: &RunConfig, f: &ScalarField, kind: SolveKind) -> Result<Mask, Failure> {
    match (&cfg.mask, kind) {
        (Some(p), _) => Ok(read_mask(p, Some(f.extents()))?),
        (None, SolveKind::Inpaint) if cfg.input.is_none() => Ok(fixtures::square_hole(
            f.width(),
            f.height(),
            cfg.fixture_hole,
        )?),
        (None, SolveKind::Inpaint) => Err(Failure::usage("config", "inpaint needs a mask")),
        (None, _) => Ok(Mask::full(f.width(), f.height())),
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Outcome {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Failure::usage("io", e.to_string()))
}

pub fn run_solve(cfg: &RunConfig, kind: SolveKind, rep: &mut Report) -> Outcome {
    let f = load_image(cfg)?;
    let mask = load_mask(cfg, &f, kind)?;
    let holes = mask.hole_count();
    let pr = Problem::new(f.clone(), mask, cfg.lambda, cfg.density(f.dim()))?;
    let mut scfg = cfg.solve_config();
    scfg.track_gap |= kind == SolveKind::Certify;
    let (u, report) = solve(&pr, &scfg)?;
    rep.timing.solve_seconds = report.wall_time.as_secs_f64();
    rep.energy = Some(eval_energy(&pr, &u)?);
    let cert = certify(&pr, &u)?;
    rep.certificate = Some(cert);
    rep.solve = Some(report);
    if let Some(out) = &cfg.output {
        write_pgm(&u, out, cfg.maxval)?;
    }
    let max_change = u
        .data()
        .iter()
        .zip(f.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    rep.results = json!({
        "width": f.width(),
        "height": f.height(),
        "hole_pixels": holes,
        "max_change": max_change,
    });
    if kind == SolveKind::Certify && !cert.feasible {
        return Err(Failure::math(
            "certificate",
            "no feasible dual candidate was found",
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct DecayRow {
    rho: f64,
    mean: f64,
    max: f64,
}

pub fn run_excess(cfg: &RunConfig, rep: &mut Report) -> Outcome {
    let u = load_image(cfg)?;
    let interior = DiffOperator::new(cfg.m, u.width(), u.height(), u.h())?.interior();
    let stats = |values: &ScalarField| {
        let mut sum = 0.0;
        let mut max = 0.0_f64;
        let mut count = 0usize;
        for y in 0..u.height() {
            for x in 0..u.width() {
                if interior.contains(x, y) {
                    sum += values.get(x, y);
                    max = max.max(values.get(x, y));
                    count += 1;
                }
            }
        }
        (sum / count.max(1) as f64, max)
    };
    let mut decay = Vec::new();
    for &rho in &cfg.rhos {
        let (mean, max) = stats(&excess_map(&u, cfg.m, rho)?.values);
        decay.push(DecayRow { rho, mean, max });
    }
    let map = excess_map(&u, cfg.m, cfg.rho)?;
    let (mean, max) = stats(&map.values);
    let regular: Vec<bool> = (0..u.len())
        .map(|i| {
            let (x, y) = (i % u.width(), i / u.width());
            interior.contains(x, y) && map.values.data()[i] <= cfg.excess_threshold
        })
        .collect();
    let regular_count = regular.iter().filter(|&&r| r).count();
    if let Some(out) = &cfg.output {
        let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
        let img = map
            .values
            .with_data(map.values.data().iter().map(|v| v * scale).collect());
        write_pgm(&img, out, cfg.maxval)?;
    }
    if let Some(out) = &cfg.mask_out {
        let img = u.with_data(regular.iter().map(|&r| if r { 1.0 } else { 0.0 }).collect());
        write_pgm(&img, out, cfg.maxval)?;
    }
    if let Some(out) = &cfg.csv {
        write_rows(out, &decay)?;
    }
    rep.results = json!({
        "rho": cfg.rho,
        "mean": mean,
        "max": max,
        "regular_pixels": regular_count,
        "decay": decay,
    });
    Ok(())
}

#[derive(Serialize)]
struct CurveRow {
    mu: f64,
    r: f64,
    deviation: f64,
}

const CURVE_POINTS: usize = 100;

pub fn run_limit_study(cfg: &RunConfig, rep: &mut Report) -> Outcome {
    let mut summary = Vec::new();
    let mut curve = Vec::new();
    let mut violated = Vec::new();
    for &mu in &cfg.mus {
        let error = tv_limit_error(mu, cfg.r_max)?;
        let bound = 1.0 / (mu - 2.0);
        if error > bound {
            violated.push(mu);
        }
        summary.push(json!({ "mu": mu, "r_max": cfg.r_max, "error": error, "bound": bound }));
        for i in 0..=CURVE_POINTS {
            let r = cfg.r_max * i as f64 / CURVE_POINTS as f64;
            let deviation = ((mu - 1.0) * phi(mu, r)? - r).abs();
            curve.push(CurveRow { mu, r, deviation });
        }
    }
    if let Some(out) = &cfg.csv {
        write_rows(out, &curve)?;
    }
    rep.results = json!({ "limits": summary });
    if !violated.is_empty() {
        return Err(Failure::math(
            "bound",
            format!("limit bound exceeded for mu in {violated:?}"),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct ApproxRow {
    target: f64,
    achieved: f64,
    strict_distance: f64,
    lq_error: f64,
    tv_gap: f64,
    shells: usize,
    rounds: usize,
    failed: bool,
}

pub fn run_approx_demo(cfg: &RunConfig, rep: &mut Report) -> Outcome {
    let hat = PiecewiseSignal::hat();
    let acfg = cfg.approx_config();
    let mut rows = Vec::new();
    for &target in &cfg.targets {
        let a = smooth_approximate(&hat, target, &acfg)?;
        rows.push(ApproxRow {
            target,
            achieved: a.total_error,
            strict_distance: a.distance.total(),
            lq_error: a.lq_error,
            tv_gap: (a.approximant_tv - a.kink_mass).abs(),
            shells: a.shells.len(),
            rounds: a.rounds,
            failed: a.failed,
        });
    }
    if let Some(out) = &cfg.csv {
        write_rows(out, &rows)?;
    }
    let missed: Vec<f64> = rows
        .iter()
        .filter(|r| r.failed || r.achieved > r.target)
        .map(|r| r.target)
        .collect();
    rep.results = json!({ "signal": "hat", "kink_mass": hat.kink_mass(), "levels": rows });
    if !missed.is_empty() {
        return Err(Failure::math(
            "approximation",
            format!("targets not met: {missed:?}"),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct SignalRow {
    x: f64,
    f: f64,
    u_m1: f64,
    u_m2: f64,
}

fn staircase_input(cfg: &RunConfig) -> Result<(ScalarField, Value), Failure> {
    match &cfg.input {
        Some(p) => {
            let img = read_pgm(p)?;
            let row = cfg.row.unwrap_or(img.height() / 2);
            if row >= img.height() {
                return Err(Failure::usage(
                    "config",
                    format!("row {row} outside an image of height {}", img.height()),
                ));
            }
            let w = img.width();
            let data = img.data()[row * w..(row + 1) * w].to_vec();
            let f = ScalarField::new(w, 1, 1.0 / w as f64, data)?;
            Ok((f, json!({ "input": p, "row": row })))
        }
        None => Ok((
            fixtures::noisy_ramp(cfg.ramp_n, cfg.ramp_slope, cfg.ramp_noise, cfg.ramp_seed)?,
            json!("noisy ramp fixture"),
        )),
    }
}

pub fn run_staircase_compare(cfg: &RunConfig, rep: &mut Report) -> Outcome {
    let (f, source) = staircase_input(cfg)?;
    let mut runs = Vec::new();
    let mut solutions = Vec::new();
    let mut solve_time = Duration::ZERO;
    for m in 1..=2 {
        let density = hotv_core::DensityParams::new(cfg.mu, m, 1, 0.0)?;
        let pr = Problem::denoising(f.clone(), cfg.lambda, density)?;
        let (u, report) = solve(&pr, &cfg.solve_config())?;
        solve_time += report.wall_time;
        runs.push(json!({
            "m": m,
            "metric": staircase_metric(&u)?,
            "energy": eval_energy(&pr, &u)?,
            "solve": report,
        }));
        solutions.push(u);
    }
    rep.timing.solve_seconds = solve_time.as_secs_f64();
    if let Some(out) = &cfg.csv {
        let rows: Vec<SignalRow> = (0..f.len())
            .map(|i| SignalRow {
                x: i as f64 * f.h(),
                f: f.data()[i],
                u_m1: solutions[0].data()[i],
                u_m2: solutions[1].data()[i],
            })
            .collect();
        write_rows(out, &rows)?;
    }
    let jumps = |k: usize| runs[k]["metric"]["jump_count"].as_u64().unwrap_or(0);
    let fewer = jumps(1) < jumps(0);
    rep.results = json!({
        "source": source,
        "samples": f.len(),
        "runs": runs,
        "fewer_jumps_with_m2": fewer,
    });
    Ok(())
}
