//! The μ-elliptic density family
//!
//! `Φ_μ(r) = ∫_0^r ∫_0^s (1+t)^{-μ} dt ds` for `μ > 1`, the radial integrand
//! `F(Z) = Φ_μ(|Z|)` on symmetric tensors, its derivatives, recession
//! function and convex conjugate, and the regularized `F_δ(Z) = δ|Z|² + F(Z)`.
//!
//! All closed forms are written through `expm1`/`ln_1p` so they stay accurate
//! for small arguments and across `μ = 2`, where the generic formula has a
//! removable `1/(μ−2)` singularity.

use serde::Serialize;

use crate::error::{domain, Result};
use crate::tensorgrid::SymTensor;

/// Below this distance from `μ = 2` the `1/(μ−2)` terms use a series.
const MU2_BAND: f64 = 1e-4;

/// Below this radius `Φ_μ` is summed from its Taylor series.
const SMALL_R: f64 = 1e-2;

/// `expm1(c·x)/c`, continuous at `c = 0` where it equals `x`.
fn expm1_over(c: f64, x: f64) -> f64 {
    if c.abs() > MU2_BAND {
        return (c * x).exp_m1() / c;
    }
    // Σ_{k≥1} c^{k−1} x^k / k!
    let mut term = x;
    let mut sum = x;
    for k in 2..60 {
        term *= c * x / k as f64;
        sum += term;
        if term.abs() <= f64::EPSILON * sum.abs() {
            break;
        }
    }
    sum
}

fn check(mu: f64, r: f64) -> Result<()> {
    if !(mu > 1.0) || !mu.is_finite() {
        return domain(format!("exponent mu must be > 1, got {mu}"));
    }
    if !(r >= 0.0) {
        return domain(format!("radius must be nonnegative, got {r}"));
    }
    Ok(())
}

pub(crate) fn phi_unchecked(mu: f64, r: f64) -> f64 {
    if r < SMALL_R {
        // Φ = Σ_k binom(−μ, k) r^{k+2} / ((k+1)(k+2))
        let mut coef = 1.0;
        let mut pow = r * r;
        let mut sum = 0.0;
        for k in 0..40 {
            let term = coef * pow / ((k + 1) * (k + 2)) as f64;
            sum += term;
            if term.abs() <= f64::EPSILON * sum.abs() {
                break;
            }
            coef *= -(mu + k as f64) / (k + 1) as f64;
            pow *= r;
        }
        return sum;
    }
    (r - expm1_over(2.0 - mu, r.ln_1p())) / (mu - 1.0)
}

fn dphi_unchecked(mu: f64, r: f64) -> f64 {
    -((1.0 - mu) * r.ln_1p()).exp_m1() / (mu - 1.0)
}

fn ddphi_unchecked(mu: f64, r: f64) -> f64 {
    (-mu * r.ln_1p()).exp()
}

/// `Φ'(r) / r`, with its limit 1 at the origin.
fn dphi_over_r(mu: f64, r: f64) -> f64 {
    if r == 0.0 {
        1.0
    } else {
        dphi_unchecked(mu, r) / r
    }
}

/// `Φ_μ(r)`.
pub fn phi(mu: f64, r: f64) -> Result<f64> {
    check(mu, r)?;
    Ok(phi_unchecked(mu, r))
}

/// `Φ_μ'(r) = (1 − (1+r)^{1−μ})/(μ−1)`, increasing with supremum `1/(μ−1)`.
pub fn dphi(mu: f64, r: f64) -> Result<f64> {
    check(mu, r)?;
    Ok(dphi_unchecked(mu, r))
}

/// `Φ_μ''(r) = (1+r)^{−μ}`.
pub fn ddphi(mu: f64, r: f64) -> Result<f64> {
    check(mu, r)?;
    Ok(ddphi_unchecked(mu, r))
}

/// Conjugate of the radial profile, `Φ*(s) = sup_r (s r − Φ_μ(r))`, for
/// `s ≥ 0`. With `a = μ−1` and `b = μ−2` it equals
/// `−s − expm1(b·ln(1−a s)/a)/b`.
pub fn phi_conjugate(mu: f64, s: f64) -> Result<f64> {
    check(mu, s)?;
    Ok(phi_conjugate_unchecked(mu, s))
}

fn phi_conjugate_unchecked(mu: f64, s: f64) -> f64 {
    let a = mu - 1.0;
    let w = 1.0 - a * s;
    if s == 0.0 {
        return 0.0;
    }
    if w < 0.0 {
        return f64::INFINITY;
    }
    if w == 0.0 {
        return if mu > 2.0 {
            1.0 / (a * (mu - 2.0))
        } else {
            f64::INFINITY
        };
    }
    let x = (-a * s).ln_1p() / a;
    -s - expm1_over(mu - 2.0, x)
}

/// Exponent, order, dimension and regularization weight of the integrand.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DensityParams {
    mu: f64,
    m: usize,
    n: usize,
    delta: f64,
}

impl DensityParams {
    pub fn new(mu: f64, m: usize, n: usize, delta: f64) -> Result<Self> {
        if !(mu > 1.0) || !mu.is_finite() {
            return domain(format!("exponent mu must be > 1, got {mu}"));
        }
        if !(1..=3).contains(&m) {
            return domain(format!("order m must be 1, 2 or 3, got {m}"));
        }
        if !(1..=2).contains(&n) {
            return domain(format!("dimension n must be 1 or 2, got {n}"));
        }
        if !(delta >= 0.0) || !delta.is_finite() {
            return domain(format!("delta must be finite and >= 0, got {delta}"));
        }
        Ok(Self { mu, m, n, delta })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(self.mu, self.m, self.n, delta)
    }

    pub fn growth(&self) -> GrowthConstants {
        GrowthConstants::new(self.mu)
    }

    /// Radial profile `Φ_μ(r) + δ r²`.
    pub fn profile(&self, r: f64) -> f64 {
        phi_unchecked(self.mu, r) + self.delta * r * r
    }

    /// Scalar `g(r)` such that `DF_δ(Z) = g(|Z|)·Z`.
    pub fn gradient_factor(&self, r: f64) -> f64 {
        dphi_over_r(self.mu, r) + 2.0 * self.delta
    }

    /// `F(Z)`, or `F_δ(Z)` when `δ > 0`.
    pub fn f_value(&self, z: &SymTensor) -> f64 {
        self.profile(z.norm())
    }

    /// `DF(Z) = Φ'(|Z|) Z/|Z|` (zero at the origin), plus `2δZ`.
    pub fn df(&self, z: &SymTensor) -> SymTensor {
        self.gradient_factor(z.norm()) * *z
    }

    /// `D²F(Z)[X]` from the radial/tangential split; `X` at the origin.
    pub fn d2f_apply(&self, z: &SymTensor, x: &SymTensor) -> SymTensor {
        let r = z.norm();
        let reg = 2.0 * self.delta * *x;
        if r == 0.0 {
            return *x + reg;
        }
        let zhat = (1.0 / r) * *z;
        let radial = zhat.dot(x);
        let tangential = dphi_over_r(self.mu, r);
        let curvature = ddphi_unchecked(self.mu, r);
        tangential * *x + ((curvature - tangential) * radial) * zhat + reg
    }

    /// `F^∞(Z) = |Z|/(μ−1)`; undefined (infinite) for `δ > 0`.
    pub fn f_recession(&self, z: &SymTensor) -> Result<f64> {
        if self.delta > 0.0 {
            return domain("recession function of F_delta is infinite for delta > 0");
        }
        Ok(z.norm() / (self.mu - 1.0))
    }

    /// `F*(κ)`; `+∞` outside the ball `|κ| ≤ 1/(μ−1)`.
    pub fn f_conjugate(&self, kappa: &SymTensor) -> Result<f64> {
        if self.delta > 0.0 {
            return domain("conjugate is only provided for the unregularized density");
        }
        Ok(phi_conjugate_unchecked(self.mu, kappa.norm()))
    }

    /// `Φ*(s)` for a pointwise norm `s`; used by the dual evaluation.
    pub(crate) fn conjugate_of_norm(&self, s: f64) -> f64 {
        phi_conjugate_unchecked(self.mu, s)
    }
}

/// Constants of the bounds `|DF| ≤ ν₁` and `ν₂|Z| − ν₃ ≤ F(Z) ≤ ν₁|Z|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GrowthConstants {
    pub nu1: f64,
    pub nu2: f64,
    pub nu3: f64,
    /// Radius of the conjugate's effective domain.
    pub s_max: f64,
}

impl GrowthConstants {
    /// `ν₃` is the smallest valid offset for `ν₂ = ν₁/2`: the supremum of
    /// `ν₂ r − Φ_μ(r)`, attained where `Φ'(r) = ν₂`, i.e. `r = 2^{1/(μ−1)} − 1`.
    pub fn new(mu: f64) -> Self {
        let a = mu - 1.0;
        let nu1 = 1.0 / a;
        let nu2 = 0.5 / a;
        let r_star = (std::f64::consts::LN_2 / a).exp_m1();
        let nu3 = if r_star.is_finite() {
            nu2 * r_star - phi_unchecked(mu, r_star)
        } else {
            f64::INFINITY
        };
        Self {
            nu1,
            nu2,
            nu3,
            s_max: nu1,
        }
    }
}
