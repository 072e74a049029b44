//! Run configuration: defaults, then a flat `key = value` file, then
//! command-line overrides.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use hotv_core::approxlab::{ApproxConfig, Hole, Side};
use hotv_core::{DensityParams, SolveConfig};
use serde::Serialize;

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(ConfigError(msg.into()))
}

/// Every tunable of every command. Serialized as the config echo of the
/// report, so the field order here is the order in the JSON.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub mu: f64,
    pub m: usize,
    pub lambda: f64,
    pub delta0: f64,
    pub delta_factor: f64,
    pub delta_min: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub track_gap: bool,
    pub input: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub mask_out: Option<PathBuf>,
    pub maxval: u16,
    pub fixture_n: usize,
    pub fixture_noise: f64,
    pub fixture_seed: u64,
    pub fixture_hole: usize,
    pub rho: f64,
    pub rhos: Vec<f64>,
    pub excess_threshold: f64,
    pub r_max: f64,
    pub mus: Vec<f64>,
    pub targets: Vec<f64>,
    pub hole_side: String,
    pub hole_length: f64,
    pub q: f64,
    pub min_shells: usize,
    pub row: Option<usize>,
    pub ramp_n: usize,
    pub ramp_slope: f64,
    pub ramp_noise: f64,
    pub ramp_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let solve = SolveConfig::default();
        let approx = ApproxConfig::default();
        Self {
            mu: 1.4,
            m: 2,
            lambda: 10.0,
            delta0: solve.delta0,
            delta_factor: solve.delta_factor,
            delta_min: solve.delta_min,
            tol: solve.tol,
            max_iter: solve.max_iter,
            seed: solve.seed,
            track_gap: false,
            input: None,
            mask: None,
            output: None,
            report: None,
            csv: None,
            mask_out: None,
            maxval: 255,
            fixture_n: 32,
            fixture_noise: 0.1,
            fixture_seed: 7,
            fixture_hole: 8,
            rho: 2.0,
            rhos: vec![1.0, 2.0, 4.0, 8.0],
            excess_threshold: 1e-3,
            r_max: 100.0,
            mus: vec![3.0, 5.0, 10.0, 20.0, 50.0, 100.0],
            targets: vec![1e-1, 1e-2, 1e-3],
            hole_side: "left".into(),
            hole_length: approx.hole.length,
            q: approx.q,
            min_shells: approx.min_shells,
            row: None,
            ramp_n: 128,
            ramp_slope: 10.0,
            ramp_noise: 0.5,
            ramp_seed: 9,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .or_else(|_| bad(format!("{key}: cannot parse {v:?}")))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

fn path(v: &str) -> Option<PathBuf> {
    match v {
        "" | "none" => None,
        p => Some(PathBuf::from(p)),
    }
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bad(format!("{key}: expected true or false, got {v:?}")),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let v = v.trim();
        match key.trim() {
            "mu" => self.mu = num(key, v)?,
            "m" => self.m = num(key, v)?,
            "lambda" => self.lambda = num(key, v)?,
            "delta0" => self.delta0 = num(key, v)?,
            "delta_factor" => self.delta_factor = num(key, v)?,
            "delta_min" => self.delta_min = num(key, v)?,
            "tol" => self.tol = num(key, v)?,
            "max_iter" => self.max_iter = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "track_gap" => self.track_gap = flag(key, v)?,
            "input" => self.input = path(v),
            "mask" => self.mask = path(v),
            "output" => self.output = path(v),
            "report" => self.report = path(v),
            "csv" => self.csv = path(v),
            "mask_out" => self.mask_out = path(v),
            "maxval" => self.maxval = num(key, v)?,
            "fixture_n" => self.fixture_n = num(key, v)?,
            "fixture_noise" => self.fixture_noise = num(key, v)?,
            "fixture_seed" => self.fixture_seed = num(key, v)?,
            "fixture_hole" => self.fixture_hole = num(key, v)?,
            "rho" => self.rho = num(key, v)?,
            "rhos" => self.rhos = list(key, v)?,
            "excess_threshold" => self.excess_threshold = num(key, v)?,
            "r_max" => self.r_max = num(key, v)?,
            "mus" => self.mus = list(key, v)?,
            "targets" => self.targets = list(key, v)?,
            "hole_side" => self.hole_side = v.to_ascii_lowercase(),
            "hole_length" => self.hole_length = num(key, v)?,
            "q" => self.q = num(key, v)?,
            "min_shells" => self.min_shells = num(key, v)?,
            "row" => {
                self.row = if v == "none" {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "ramp_n" => self.ramp_n = num(key, v)?,
            "ramp_slope" => self.ramp_slope = num(key, v)?,
            "ramp_noise" => self.ramp_noise = num(key, v)?,
            "ramp_seed" => self.ramp_seed = num(key, v)?,
            other => return bad(format!("unknown key {other:?}")),
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return bad(format!("{origin}:{}: expected key = value", lineno + 1));
            };
            self.set(k, v)
                .map_err(|e| ConfigError(format!("{origin}:{}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, p: &Path) -> Result<()> {
        let text = fs::read_to_string(p)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", p.display())))?;
        self.apply_text(&text, &p.display().to_string())
    }

    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        match kv.split_once('=') {
            Some((k, v)) => self.set(k, v),
            None => bad(format!("override {kv:?} is not key=value")),
        }
    }

    pub fn density(&self, n: usize) -> DensityParams {
        DensityParams::new(self.mu, self.m, n, 0.0).expect("validated")
    }

    pub fn solve_config(&self) -> SolveConfig {
        SolveConfig {
            tol: self.tol,
            max_iter: self.max_iter,
            delta0: self.delta0,
            delta_factor: self.delta_factor,
            delta_min: self.delta_min,
            seed: self.seed,
            track_gap: self.track_gap,
            record_trace: false,
        }
    }

    pub fn approx_config(&self) -> ApproxConfig {
        let side = if self.hole_side == "right" {
            Side::Right
        } else {
            Side::Left
        };
        ApproxConfig {
            hole: Hole::new(side, self.hole_length).expect("validated"),
            q: self.q,
            min_shells: self.min_shells,
        }
    }

    /// Domain checks shared by all commands.
    pub fn validate(&self) -> Result<()> {
        DensityParams::new(self.mu, self.m, 2, 0.0).map_err(|e| ConfigError(e.to_string()))?;
        self.solve_config()
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be positive, got {}", self.lambda));
        }
        if self.maxval == 0 {
            return bad("maxval must be at least 1");
        }
        if self.fixture_n < self.m + 1 || self.ramp_n < self.m + 1 {
            return bad(format!(
                "fixture sizes must be at least m + 1 = {}",
                self.m + 1
            ));
        }
        if self.fixture_hole >= self.fixture_n {
            return bad("fixture_hole must be smaller than fixture_n");
        }
        for (name, v) in [
            ("fixture_noise", self.fixture_noise),
            ("ramp_noise", self.ramp_noise),
            ("r_max", self.r_max),
            ("excess_threshold", self.excess_threshold),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !self.ramp_slope.is_finite() {
            return bad("ramp_slope must be finite");
        }
        if let Some(r) = std::iter::once(&self.rho)
            .chain(&self.rhos)
            .find(|r| !(**r >= 1.0 && r.is_finite()))
        {
            return bad(format!("disk radii must be at least one pixel, got {r}"));
        }
        if let Some(mu) = self.mus.iter().find(|mu| !(**mu > 2.0 && mu.is_finite())) {
            return bad(format!("limit-study exponents must exceed 2, got {mu}"));
        }
        if let Some(t) = self.targets.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return bad(format!("targets must be positive, got {t}"));
        }
        if self.hole_side != "left" && self.hole_side != "right" {
            return bad(format!(
                "hole_side must be left or right, got {:?}",
                self.hole_side
            ));
        }
        if !(0.0..1.0).contains(&self.hole_length) {
            return bad(format!(
                "hole_length must lie in [0, 1), got {}",
                self.hole_length
            ));
        }
        if !(self.q >= 1.0 && self.q.is_finite()) {
            return bad(format!("q must be finite and >= 1, got {}", self.q));
        }
        Ok(())
    }
}
