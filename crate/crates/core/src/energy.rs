//! Primal energies `J` and `J_δ`, their gradients and step-size bounds.
//!
//! On a grid with spacing `h` every integral is a pixel sum weighted by the
//! cell area `h²`:
//!
//! ```text
//! J_δ[u] = h² Σ_p [Φ_μ(|Gu|_p) + δ |Gu|_p²] + λ/2 h² Σ_{p ∈ Ω−D} (u_p − f_p)²
//! ```
//!
//! Grids carry no singular part, so the relaxed functional with the
//! recession term coincides with `J` here.

use serde::Serialize;

use crate::density::DensityParams;
use crate::error::{domain, Error, Result};
use crate::sum::{self, Compensated};
use crate::tensorgrid::{analytic_norm_bound, power_iteration, DiffOperator, Mask, ScalarField};

/// Seed used by [`lipschitz_bound`] when none is given.
pub const DEFAULT_NORM_SEED: u64 = 0x5eed;

/// Data, mask, fidelity weight and density of a denoising/inpainting problem.
#[derive(Clone, Debug)]
pub struct Problem {
    f: ScalarField,
    mask: Mask,
    lambda: f64,
    density: DensityParams,
    op: DiffOperator,
}

impl Problem {
    pub fn new(f: ScalarField, mask: Mask, lambda: f64, density: DensityParams) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return domain(format!("lambda must be positive, got {lambda}"));
        }
        if mask.extents() != f.extents() {
            return Err(Error::ExtentMismatch {
                expected: f.extents(),
                got: mask.extents(),
            });
        }
        if mask.observed_count() == 0 {
            return Err(Error::EmptyObserved);
        }
        if density.n() != f.dim() {
            return domain(format!(
                "density dimension {} does not match a {}-dimensional grid",
                density.n(),
                f.dim()
            ));
        }
        let op = DiffOperator::for_field(density.m(), &f)?;
        Ok(Self {
            f,
            mask,
            lambda,
            density,
            op,
        })
    }

    /// Pure denoising, `D = ∅`.
    pub fn denoising(f: ScalarField, lambda: f64, density: DensityParams) -> Result<Self> {
        let mask = Mask::full(f.width(), f.height());
        Self::new(f, mask, lambda, density)
    }

    pub fn f(&self) -> &ScalarField {
        &self.f
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn density(&self) -> &DensityParams {
        &self.density
    }

    pub fn operator(&self) -> &DiffOperator {
        &self.op
    }

    pub fn h(&self) -> f64 {
        self.f.h()
    }

    pub fn cell_area(&self) -> f64 {
        self.f.h() * self.f.h()
    }

    /// Same data with another density (for example `δ = 0`).
    pub fn with_density(&self, density: DensityParams) -> Result<Self> {
        Self::new(self.f.clone(), self.mask.clone(), self.lambda, density)
    }

    /// `f` with the hole filled by the mean of the observed samples.
    pub fn initial_guess(&self) -> ScalarField {
        let obs = self.mask.observed();
        let mean = sum::sum(
            self.f
                .data()
                .iter()
                .zip(obs)
                .filter_map(|(&v, &o)| o.then_some(v)),
        ) / self.mask.observed_count() as f64;
        let data = self
            .f
            .data()
            .iter()
            .zip(obs)
            .map(|(&v, &o)| if o { v } else { mean })
            .collect();
        self.f.with_data(data)
    }

    /// Euclidean norm of `f` over the observed pixels.
    pub fn data_norm(&self) -> f64 {
        sum::sum(
            self.f
                .data()
                .iter()
                .zip(self.mask.observed())
                .filter_map(|(&v, &o)| o.then_some(v * v)),
        )
        .sqrt()
    }

    /// `(λ/2) h² Σ_{Ω−D} f²`, the energy of `u = 0`.
    pub fn zero_energy(&self) -> f64 {
        0.5 * self.lambda * self.cell_area() * self.data_norm().powi(2)
    }

    pub(crate) fn check_extents(&self, u: &ScalarField) -> Result<()> {
        if u.extents() != self.f.extents() {
            return Err(Error::ExtentMismatch {
                expected: self.f.extents(),
                got: u.extents(),
            });
        }
        Ok(())
    }
}

/// The three terms of `J_δ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub regularizer: f64,
    pub quadratic_delta: f64,
    pub fidelity: f64,
    pub total: f64,
}

/// `J_δ[u]` with the problem's own `δ`.
pub fn eval_energy(pr: &Problem, u: &ScalarField) -> Result<EnergyBreakdown> {
    pr.check_extents(u)?;
    Ok(energy_with_delta(pr, u.data(), pr.density.delta()))
}

pub(crate) fn energy_with_delta(pr: &Problem, u: &[f64], delta: f64) -> EnergyBreakdown {
    let planes = pr.op.apply(u);
    let shape = pr.op.shape();
    let mu = pr.density.mu();
    let area = pr.cell_area();
    let mut reg = Compensated::default();
    let mut quad = Compensated::default();
    for p in 0..u.len() {
        let mut r2 = 0.0;
        for (c, plane) in planes.iter().enumerate() {
            r2 += shape.weight(c) * plane[p] * plane[p];
        }
        reg.add(crate::density::phi_unchecked(mu, r2.sqrt()));
        quad.add(r2);
    }
    let mut fid = Compensated::default();
    for ((&v, &g), &o) in u.iter().zip(pr.f.data()).zip(pr.mask.observed()) {
        if o {
            fid.add((v - g) * (v - g));
        }
    }
    let regularizer = area * reg.value();
    let quadratic_delta = area * delta * quad.value();
    let fidelity = 0.5 * pr.lambda * area * fid.value();
    EnergyBreakdown {
        regularizer,
        quadratic_delta,
        fidelity,
        total: regularizer + quadratic_delta + fidelity,
    }
}

/// Exact gradient of [`eval_energy`]:
/// `h² [G^T(2δ Gu + DF(Gu)) + λ χ_{Ω−D} (u − f)]`.
pub fn grad_energy(pr: &Problem, u: &ScalarField) -> Result<ScalarField> {
    pr.check_extents(u)?;
    Ok(u.with_data(gradient_with_delta(pr, u.data(), pr.density.delta())))
}

pub(crate) fn gradient_with_delta(pr: &Problem, u: &[f64], delta: f64) -> Vec<f64> {
    let mut planes = pr.op.apply(u);
    let shape = pr.op.shape();
    let density = pr
        .density
        .with_delta(delta)
        .expect("stage delta validated by the caller");
    for p in 0..u.len() {
        let mut r2 = 0.0;
        for (c, plane) in planes.iter().enumerate() {
            r2 += shape.weight(c) * plane[p] * plane[p];
        }
        let g = density.gradient_factor(r2.sqrt());
        for plane in planes.iter_mut() {
            plane[p] *= g;
        }
    }
    let mut out = pr.op.transpose(&planes);
    let area = pr.cell_area();
    for (((o, &v), &fv), &obs) in out
        .iter_mut()
        .zip(u)
        .zip(pr.f.data())
        .zip(pr.mask.observed())
    {
        if obs {
            *o += pr.lambda * (v - fv);
        }
        *o *= area;
    }
    out
}

fn quantize_up(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let unit = (x.log2().floor() - 4.0).exp2();
    (x / unit).ceil() * unit
}

/// `‖G‖²` used for step sizes: the power-iteration estimate padded by 1%,
/// rounded up to four mantissa bits, and capped by the analytic bound. The
/// rounding makes the value independent of the seed in practice.
pub(crate) fn safe_norm_sq(op: &DiffOperator, seed: u64) -> f64 {
    let est = power_iteration(op, seed);
    let bound = analytic_norm_bound(op.shape().order(), op.shape().dim(), op.h());
    quantize_up(est * 1.01).min(bound)
}

/// `h² (‖G‖² (2δ + 1) + λ)`, a Lipschitz constant of `∇J_δ` (the Hessian of
/// `Φ_μ(|·|)` is bounded by `Φ''(0) = 1`).
pub fn lipschitz_bound(pr: &Problem) -> f64 {
    lipschitz_bound_with(pr, pr.density.delta(), DEFAULT_NORM_SEED)
}

pub fn lipschitz_bound_with(pr: &Problem, delta: f64, seed: u64) -> f64 {
    pr.cell_area() * (safe_norm_sq(&pr.op, seed) * (2.0 * delta + 1.0) + pr.lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(w: usize, h: usize, spacing: f64, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarField::from_fn(w, h, spacing, |_, _| rng.random::<f64>()).unwrap()
    }

    fn problem(w: usize, h: usize, m: usize, mu: f64, delta: f64, lambda: f64) -> Problem {
        let f = random(w, h, 1.0, 1);
        let dim = if h == 1 { 1 } else { 2 };
        let d = DensityParams::new(mu, m, dim, delta).unwrap();
        Problem::denoising(f, lambda, d).unwrap()
    }

    #[test]
    fn construction_errors() {
        let f = random(4, 4, 1.0, 1);
        let d = DensityParams::new(1.4, 2, 2, 0.0).unwrap();
        assert!(Problem::denoising(f.clone(), 0.0, d).is_err());
        assert!(Problem::denoising(f.clone(), -1.0, d).is_err());
        let m = Mask::full(3, 4);
        assert!(matches!(
            Problem::new(f.clone(), m, 1.0, d),
            Err(Error::ExtentMismatch { .. })
        ));
        let d1 = DensityParams::new(1.4, 2, 1, 0.0).unwrap();
        assert!(Problem::denoising(f, 1.0, d1).is_err());
    }

    #[test]
    fn constant_data_has_zero_energy() {
        let f = ScalarField::from_fn(6, 6, 1.0, |_, _| 0.3).unwrap();
        let d = DensityParams::new(1.4, 2, 2, 0.1).unwrap();
        let pr = Problem::denoising(f.clone(), 5.0, d).unwrap();
        assert_eq!(eval_energy(&pr, &f).unwrap().total, 0.0);
    }

    #[test]
    fn zero_field_energy_is_fidelity_of_data() {
        let f = random(5, 4, 0.5, 2);
        let mut obs = vec![true; 20];
        obs[3] = false;
        obs[7] = false;
        let mask = Mask::new(5, 4, obs.clone()).unwrap();
        let d = DensityParams::new(2.0, 2, 2, 0.2).unwrap();
        let pr = Problem::new(f.clone(), mask, 3.0, d).unwrap();
        let zero = ScalarField::zeros(5, 4, 0.5).unwrap();
        let e = eval_energy(&pr, &zero).unwrap();
        let expected: f64 = f
            .data()
            .iter()
            .zip(&obs)
            .filter(|(_, &o)| o)
            .map(|(v, _)| 1.5 * 0.25 * v * v)
            .sum();
        assert_eq!(e.regularizer, 0.0);
        assert!((e.total - expected).abs() < 1e-15);
        assert!((pr.zero_energy() - expected).abs() < 1e-15);
    }

    #[test]
    fn energy_matches_straight_line_evaluation() {
        // m = 1 on 8×8: Φ₂ of the forward-difference gradient, written out.
        let pr = problem(8, 8, 1, 2.0, 0.0, 2.0);
        let u = random(8, 8, 1.0, 7);
        let mut reg = 0.0;
        for y in 0..8 {
            for x in 0..8 {
                let gx = if x < 7 {
                    u.get(x + 1, y) - u.get(x, y)
                } else {
                    0.0
                };
                let gy = if y < 7 {
                    u.get(x, y + 1) - u.get(x, y)
                } else {
                    0.0
                };
                let r = (gx * gx + gy * gy).sqrt();
                reg += r - (1.0 + r).ln();
            }
        }
        let fid: f64 = u
            .data()
            .iter()
            .zip(pr.f().data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let e = eval_energy(&pr, &u).unwrap();
        assert!((e.regularizer - reg).abs() < 1e-12);
        assert!((e.fidelity - fid).abs() < 1e-12);
    }

    #[test]
    fn polynomial_data_is_stationary() {
        let f =
            ScalarField::from_fn(7, 6, 1.0, |x, y| 0.1 * x as f64 - 0.2 * y as f64 + 1.0).unwrap();
        let d = DensityParams::new(1.4, 2, 2, 0.0).unwrap();
        let pr = Problem::denoising(f.clone(), 1.0, d).unwrap();
        let g = grad_energy(&pr, &f).unwrap();
        assert!(g.max_abs() < 1e-14);
    }

    #[test]
    fn gradient_matches_directional_differences() {
        let pr = problem(9, 7, 2, 1.4, 0.05, 4.0);
        let u = random(9, 7, 1.0, 3);
        let g = grad_energy(&pr, &u).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let dir: Vec<f64> = (0..63).map(|_| rng.random::<f64>() - 0.5).collect();
            let eps = 1e-5;
            let plus = u.with_data(
                u.data()
                    .iter()
                    .zip(&dir)
                    .map(|(a, d)| a + eps * d)
                    .collect(),
            );
            let minus = u.with_data(
                u.data()
                    .iter()
                    .zip(&dir)
                    .map(|(a, d)| a - eps * d)
                    .collect(),
            );
            let fd = (eval_energy(&pr, &plus).unwrap().total
                - eval_energy(&pr, &minus).unwrap().total)
                / (2.0 * eps);
            let an: f64 = g.data().iter().zip(&dir).map(|(a, b)| a * b).sum();
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
        }
    }

    #[test]
    fn lipschitz_examples() {
        let pr = problem(32, 1, 1, 2.0, 0.0, 1.0);
        assert!(lipschitz_bound(&pr) <= 5.0);
        let a = lipschitz_bound_with(&pr, 0.1, 1);
        let b = lipschitz_bound_with(&pr, 0.2, 1);
        assert!(b > a);
        let pr2 = problem(32, 1, 1, 2.0, 0.0, 2.0);
        assert!(lipschitz_bound(&pr2) > lipschitz_bound(&pr));
    }

    #[test]
    fn quantization_rounds_up() {
        for x in [0.3, 1.0, 3.99, 63.2, 1000.0] {
            let q = quantize_up(x);
            assert!(q >= x && q <= x * 1.0625 + 1e-12);
        }
        assert_eq!(quantize_up(0.0), 0.0);
    }
}
