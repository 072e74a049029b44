//! Minimization of `J_δ` by accelerated gradient descent, and continuation
//! `δ ↓ δ_min` with warm starts.
//!
//! Each stage runs Nesterov's scheme with the fixed step `1/L` and a monotone
//! restart: a trial point that does not lower the energy resets the momentum
//! instead of being accepted.

use std::time::{Duration, Instant};

use serde::Serialize;

use crate::dual;
use crate::energy::{energy_with_delta, gradient_with_delta, lipschitz_bound_with, Problem};
use crate::error::{domain, Result};
use crate::sum;
use crate::tensorgrid::ScalarField;

/// Residual above `FLAG_FACTOR · tol` at the iteration cap flags the run.
pub const FLAG_FACTOR: f64 = 1e3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolveConfig {
    /// Relative gradient tolerance.
    pub tol: f64,
    /// Iteration cap per stage.
    pub max_iter: usize,
    pub delta0: f64,
    pub delta_factor: f64,
    pub delta_min: f64,
    /// Seed of the power iteration behind the step size.
    pub seed: u64,
    /// Certify every stage and record its relative duality gap.
    pub track_gap: bool,
    /// Keep the energy of every accepted iterate in the stage records.
    pub record_trace: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 20_000,
            delta0: 0.5,
            delta_factor: 0.25,
            delta_min: 1e-6,
            seed: crate::energy::DEFAULT_NORM_SEED,
            track_gap: false,
            record_trace: false,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return domain(format!("tol must be positive, got {}", self.tol));
        }
        if !(self.delta_min > 0.0 && self.delta_min <= self.delta0) || !self.delta0.is_finite() {
            return domain(format!(
                "need 0 < delta_min <= delta0, got delta_min={} delta0={}",
                self.delta_min, self.delta0
            ));
        }
        if !(self.delta_factor > 0.0 && self.delta_factor < 1.0) {
            return domain(format!(
                "delta_factor must lie in (0,1), got {}",
                self.delta_factor
            ));
        }
        if self.max_iter == 0 {
            return domain("max_iter must be at least 1");
        }
        Ok(())
    }

    /// `δ0, δ0·q, δ0·q², …` down to and ending with `δ_min`.
    pub fn schedule(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut d = self.delta0;
        while d > self.delta_min * (1.0 + 1e-12) {
            out.push(d);
            d *= self.delta_factor;
        }
        out.push(self.delta_min);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRecord {
    pub delta: f64,
    pub iterations: usize,
    /// `J_δ` at the stage result.
    pub energy: f64,
    /// `J` (no `δ` term) at the stage result.
    pub energy_unregularized: f64,
    pub grad_norm: f64,
    /// `‖∇J_δ‖ / (1 + λ h ‖f‖)`.
    pub relative_residual: f64,
    /// `δ h² Σ |Gu|²`.
    pub delta_energy: f64,
    pub converged: bool,
    pub restarts: usize,
    pub relative_gap: Option<f64>,
    #[serde(skip)]
    pub trace: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolveReport {
    pub stages: Vec<StageRecord>,
    pub total_iterations: usize,
    /// Some stage ended above `FLAG_FACTOR · tol`.
    pub flagged: bool,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl SolveReport {
    pub fn final_stage(&self) -> Option<&StageRecord> {
        self.stages.last()
    }
}

fn residual_scale(pr: &Problem) -> f64 {
    1.0 + pr.lambda() * pr.h() * pr.data_norm()
}

/// Minimize `J_δ` from `u0`.
pub fn minimize_stage(
    pr: &Problem,
    delta: f64,
    u0: &ScalarField,
    cfg: &SolveConfig,
) -> Result<(ScalarField, StageRecord)> {
    cfg.validate()?;
    if !(delta > 0.0) || !delta.is_finite() {
        return domain(format!("stage delta must be positive, got {delta}"));
    }
    pr.check_extents(u0)?;
    let step = 1.0 / lipschitz_bound_with(pr, delta, cfg.seed);
    let scale = residual_scale(pr);

    let mut x = u0.data().to_vec();
    let mut fx = energy_with_delta(pr, &x, delta).total;
    let mut gx = gradient_with_delta(pr, &x, delta);
    let mut y = x.clone();
    let mut y_is_x = true;
    let mut t = 1.0_f64;
    let mut iterations = 0;
    let mut restarts = 0;
    let mut trace = Vec::new();
    if cfg.record_trace {
        trace.push(fx);
    }
    let mut converged = false;
    loop {
        if sum::norm(&gx) / scale <= cfg.tol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }
        iterations += 1;
        let gy = if y_is_x {
            gx.clone()
        } else {
            gradient_with_delta(pr, &y, delta)
        };
        let z: Vec<f64> = y.iter().zip(&gy).map(|(a, g)| a - step * g).collect();
        let fz = energy_with_delta(pr, &z, delta).total;
        if fz <= fx {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            y = z.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
            y_is_x = beta == 0.0;
            x = z;
            fx = fz;
            gx = gradient_with_delta(pr, &x, delta);
            t = t_next;
            if cfg.record_trace {
                trace.push(fx);
            }
        } else if y_is_x {
            // a plain gradient step failed to descend: roundoff floor
            break;
        } else {
            restarts += 1;
            y.clone_from(&x);
            y_is_x = true;
            t = 1.0;
        }
    }

    let grad_norm = sum::norm(&gx);
    let e = energy_with_delta(pr, &x, delta);
    let u = u0.with_data(x);
    let record = StageRecord {
        delta,
        iterations,
        energy: e.total,
        energy_unregularized: e.regularizer + e.fidelity,
        grad_norm,
        relative_residual: grad_norm / scale,
        delta_energy: e.quadratic_delta,
        converged,
        restarts,
        relative_gap: None,
        trace,
    };
    Ok((u, record))
}

/// Continuation from the mean-filled data.
pub fn solve(pr: &Problem, cfg: &SolveConfig) -> Result<(ScalarField, SolveReport)> {
    solve_from(pr, &pr.initial_guess(), cfg)
}

/// Continuation over [`SolveConfig::schedule`], each stage warm-started from
/// the previous one.
pub fn solve_from(
    pr: &Problem,
    u0: &ScalarField,
    cfg: &SolveConfig,
) -> Result<(ScalarField, SolveReport)> {
    cfg.validate()?;
    pr.check_extents(u0)?;
    let start = Instant::now();
    let mut u = u0.clone();
    let mut stages = Vec::new();
    for delta in cfg.schedule() {
        let (next, mut record) = minimize_stage(pr, delta, &u, cfg)?;
        if cfg.track_gap {
            record.relative_gap = Some(dual::certify(pr, &next)?.relative_gap);
        }
        u = next;
        stages.push(record);
    }
    let total_iterations = stages.iter().map(|s| s.iterations).sum();
    let flagged = stages
        .iter()
        .any(|s| s.relative_residual > FLAG_FACTOR * cfg.tol);
    Ok((
        u,
        SolveReport {
            stages,
            total_iterations,
            flagged,
            wall_time: start.elapsed(),
        },
    ))
}
