//! One-dimensional smooth approximation of `BV^m` signals on `Ω = (0,1)`.
//!
//! A [`PiecewiseSignal`] has polynomial pieces of degree `< m`, so its
//! `m`-th derivative is a sum of atoms `a_i δ_{b_i}` at the breakpoints.
//! [`smooth_approximate`] builds
//!
//! ```text
//! φ = Σ_{j=2}^{J−1} ρ_{ε_j} ∗ (η_j u)(· + s_j) + (1 − ψ_{J−1}) u
//! ```
//!
//! from shells `Ω_i = (1/(i+1), 1 − 1/(i+1))`, smooth cutoffs `ψ_i` equal to
//! one on `Ω_i` and supported in `Ω_{i+1}`, the partition `η_j = ψ_j − ψ_{j−1}`,
//! sampling offsets `s_j` pointing from the hole `D` into `Ω − D`, and
//! mollification radii `ε_j ≤ |s_j|/2`. `J` is the first index whose outer
//! strip `Ω − Ω_{J−1}` carries no atom; there `u` is a polynomial and the
//! outer term is already smooth.
//!
//! Derivatives of `φ` are evaluated from the formula, the convolutions by
//! Gauss–Legendre rules split at the breakpoints, and the integrals of the
//! strict metric by composite Simpson rules refined around every feature.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use serde::Serialize;

use crate::error::{domain, Result};

/// Simpson panels per unit length away from features.
pub const BASE_PANELS: usize = 4096;
/// Simpson panels inside each feature window.
const FEATURE_PANELS: usize = 256;
/// Equal panels of the mollifier support, before breakpoint splits.
const MOLLIFIER_PANELS: usize = 4;
const GL_NODES: usize = 16;
/// Smallest mollification radius the quadrature can resolve near `x ~ 1`.
pub const EPS_FLOOR: f64 = 1e-11;
/// Global tightening rounds after the per-shell budgets are met.
const MAX_ROUNDS: usize = 8;
const MAX_ORDER: usize = 3;

/// Derivatives of orders `0..=3`; unused orders are zero.
pub type Derivs = [f64; MAX_ORDER + 1];

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, i| acc * i as f64)
}

/// Truncated Taylor expansion `Σ c_k (x − x₀)^k`, enough for `m ≤ 3`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Jet([f64; MAX_ORDER + 1]);

impl Jet {
    const ZERO: Jet = Jet([0.0; MAX_ORDER + 1]);
    const ONE: Jet = Jet([1.0, 0.0, 0.0, 0.0]);

    fn affine(value: f64, slope: f64) -> Jet {
        Jet([value, slope, 0.0, 0.0])
    }

    fn add(self, o: Jet) -> Jet {
        Jet(std::array::from_fn(|k| self.0[k] + o.0[k]))
    }

    fn sub(self, o: Jet) -> Jet {
        Jet(std::array::from_fn(|k| self.0[k] - o.0[k]))
    }

    fn mul(self, o: Jet) -> Jet {
        Jet(std::array::from_fn(|k| {
            (0..=k).map(|i| self.0[i] * o.0[k - i]).sum()
        }))
    }

    fn recip(self) -> Jet {
        let mut r = [0.0; MAX_ORDER + 1];
        r[0] = 1.0 / self.0[0];
        for k in 1..=MAX_ORDER {
            let s: f64 = (1..=k).map(|i| self.0[i] * r[k - i]).sum();
            r[k] = -s * r[0];
        }
        Jet(r)
    }

    fn exp(self) -> Jet {
        let mut e = [0.0; MAX_ORDER + 1];
        e[0] = self.0[0].exp();
        for k in 1..=MAX_ORDER {
            let s: f64 = (1..=k).map(|i| i as f64 * self.0[i] * e[k - i]).sum();
            e[k] = s / k as f64;
        }
        Jet(e)
    }

    fn derivatives(self) -> Derivs {
        std::array::from_fn(|k| self.0[k] * factorial(k))
    }
}

/// `exp(−1/t)` for `t > 0`, zero otherwise.
fn flat_bump(t: Jet) -> Jet {
    if t.0[0] <= 0.0 {
        return Jet::ZERO;
    }
    let neg_inv = t.recip();
    Jet(neg_inv.0.map(|c| -c)).exp()
}

/// Smooth step: 0 for `t ≤ 0`, 1 for `t ≥ 1`.
fn smooth_step(t: Jet) -> Jet {
    let a = flat_bump(t);
    if a == Jet::ZERO {
        return Jet::ZERO;
    }
    let b = flat_bump(Jet::ONE.sub(t));
    if b == Jet::ZERO {
        return Jet::ONE;
    }
    a.mul(a.add(b).recip())
}

/// Cutoff `ψ_i`: one on `Ω_i`, zero outside `Ω_{i+1}`; `ψ_1 = 0`.
fn psi(i: usize, x: f64) -> Jet {
    if i < 2 {
        return Jet::ZERO;
    }
    let alpha = 1.0 / (i + 2) as f64;
    let beta = 1.0 - alpha;
    let w = 1.0 / (i + 1) as f64 - alpha;
    if x <= alpha || x >= beta {
        return Jet::ZERO;
    }
    if x >= alpha + w && x <= beta - w {
        return Jet::ONE;
    }
    let left = smooth_step(Jet::affine((x - alpha) / w, 1.0 / w));
    let right = smooth_step(Jet::affine((beta - x) / w, -1.0 / w));
    left.mul(right)
}

fn eta(j: usize, x: f64) -> Jet {
    psi(j, x).sub(psi(j - 1, x))
}

/// Closed interval outside of which `η_j` vanishes, and the open core
/// `Ω_{j−1}` where it vanishes too.
fn eta_support(j: usize) -> ((f64, f64), (f64, f64)) {
    let lo = 1.0 / (j + 2) as f64;
    let core = 1.0 / j as f64;
    ((lo, 1.0 - lo), (core, 1.0 - core))
}

/// Symmetric bump `ρ(τ) ∝ exp(−1/(1−τ²))` on `(−1, 1)` with unit mass.
#[derive(Clone, Debug)]
struct Mollifier {
    norm: f64,
    rule: Vec<(f64, f64)>,
}

impl Mollifier {
    fn new() -> Self {
        let gl = GaussLegendre::new(NonZeroUsize::new(GL_NODES).expect("nonzero"));
        let rule: Vec<(f64, f64)> = gl.as_node_weight_pairs().to_vec();
        let panels = 64;
        let mut norm = 0.0;
        for p in 0..panels {
            let a = -1.0 + 2.0 * p as f64 / panels as f64;
            let b = a + 2.0 / panels as f64;
            norm += gl.integrate(a, b, raw_bump);
        }
        Self { norm, rule }
    }

    fn kernel(&self, t: f64, eps: f64) -> f64 {
        raw_bump(t / eps) / (self.norm * eps)
    }

    /// `∫ ρ_ε(t) g(y − t) dt` for a vector-valued `g` that may jump at `cuts`.
    /// The weights are rescaled to unit discrete mass, so constants are kept
    /// exactly whatever the splits.
    fn convolve(
        &self,
        y: f64,
        eps: f64,
        cuts: &[f64],
        mut g: impl FnMut(f64, &mut Derivs, f64),
    ) -> Derivs {
        let mut splits: Vec<f64> = (0..=MOLLIFIER_PANELS)
            .map(|p| -eps + 2.0 * eps * p as f64 / MOLLIFIER_PANELS as f64)
            .collect();
        for &b in cuts {
            let t = y - b;
            if t > -eps && t < eps {
                splits.push(t);
            }
        }
        splits.sort_by(f64::total_cmp);
        let mut acc = [0.0; MAX_ORDER + 1];
        let mut mass = 0.0;
        for w in splits.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for &(node, weight) in &self.rule {
                let t = mid + half * node;
                let k = half * weight * self.kernel(t, eps);
                mass += k;
                g(y - t, &mut acc, k);
            }
        }
        acc.map(|v| v / mass)
    }
}

fn raw_bump(tau: f64) -> f64 {
    if tau.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - tau * tau)).exp()
    }
}

/// Something a strict-metric integral can be evaluated on.
pub trait Profile {
    fn order(&self) -> usize;

    /// Derivatives `0..=m` at `x`; entry `m` is the density of the absolutely
    /// continuous part of the `m`-th derivative. `left` selects one-sided
    /// limits at jump points.
    fn derivatives(&self, x: f64, left: bool) -> Derivs;

    /// Singular part of the `m`-th derivative as `(position, mass)`.
    fn atoms(&self) -> Vec<(f64, f64)>;

    /// Points to split quadrature at, with a half-width of refinement.
    fn features(&self) -> Vec<(f64, f64)>;
}

/// Piecewise polynomial of degree `< m` with breakpoints in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseSignal {
    m: usize,
    breakpoints: Vec<f64>,
    /// Monomial coefficients, `m` per piece.
    pieces: Vec<Vec<f64>>,
    kinks: Vec<f64>,
}

fn poly_derivative(coeffs: &[f64], k: usize, x: f64) -> f64 {
    let mut acc = 0.0;
    for n in (k..coeffs.len()).rev() {
        acc = acc * x + coeffs[n] * factorial(n) / factorial(n - k);
    }
    acc
}

impl PiecewiseSignal {
    pub fn new(m: usize, breakpoints: Vec<f64>, pieces: Vec<Vec<f64>>) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&m) {
            return domain(format!("order m must be 1, 2 or 3, got {m}"));
        }
        if breakpoints.iter().any(|&b| !(b > 0.0 && b < 1.0))
            || breakpoints.windows(2).any(|w| w[1] <= w[0])
        {
            return domain("breakpoints must increase strictly inside (0,1)");
        }
        if pieces.len() != breakpoints.len() + 1 {
            return domain("need one more piece than breakpoints");
        }
        let mut padded = Vec::with_capacity(pieces.len());
        for p in pieces {
            if p.len() > m && p[m..].iter().any(|&c| c != 0.0) {
                return domain(format!("pieces must have degree below {m}"));
            }
            let mut q = p;
            q.resize(m, 0.0);
            padded.push(q);
        }
        let mut kinks = Vec::with_capacity(breakpoints.len());
        for (i, &b) in breakpoints.iter().enumerate() {
            for k in 0..m.saturating_sub(1) {
                let l = poly_derivative(&padded[i], k, b);
                let r = poly_derivative(&padded[i + 1], k, b);
                if (l - r).abs() > 1e-10 * (1.0 + l.abs().max(r.abs())) {
                    return domain(format!(
                        "derivative {k} jumps at breakpoint {b}; only order {} may jump",
                        m - 1
                    ));
                }
            }
            kinks.push(
                poly_derivative(&padded[i + 1], m - 1, b) - poly_derivative(&padded[i], m - 1, b),
            );
        }
        Ok(Self {
            m,
            breakpoints,
            pieces: padded,
            kinks,
        })
    }

    /// `P(x) + Σ a_i (x − b_i)_+^{m−1}/(m−1)!` with `P` given by monomial
    /// coefficients.
    pub fn from_kinks(m: usize, base: &[f64], kinks: &[(f64, f64)]) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&m) {
            return domain(format!("order m must be 1, 2 or 3, got {m}"));
        }
        let mut current = base.to_vec();
        current.resize(m.max(base.len()), 0.0);
        let mut pieces = vec![current.clone()];
        for &(b, a) in kinks {
            let d = m - 1;
            let scale = a / factorial(d);
            for n in 0..=d {
                current[n] += scale * binom(d, n) * (-b).powi((d - n) as i32);
            }
            pieces.push(current.clone());
        }
        Self::new(m, kinks.iter().map(|k| k.0).collect(), pieces)
    }

    /// `1/2 − |x − 1/2|`: one kink of mass 2 for `m = 2`.
    pub fn hat() -> Self {
        Self::from_kinks(2, &[0.0, 1.0], &[(0.5, -2.0)]).expect("valid fixture")
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Jumps `a_i` of the `(m−1)`-th derivative.
    pub fn kinks(&self) -> &[f64] {
        &self.kinks
    }

    /// `|D^m u|(Ω) = Σ |a_i|`.
    pub fn kink_mass(&self) -> f64 {
        self.kinks.iter().map(|a| a.abs()).sum()
    }

    fn piece(&self, x: f64, left: bool) -> &[f64] {
        let i = if left {
            self.breakpoints.partition_point(|&b| b < x)
        } else {
            self.breakpoints.partition_point(|&b| b <= x)
        };
        &self.pieces[i]
    }
}

impl Profile for PiecewiseSignal {
    fn order(&self) -> usize {
        self.m
    }

    fn derivatives(&self, x: f64, left: bool) -> Derivs {
        let p = self.piece(x, left);
        std::array::from_fn(|k| {
            if k < self.m {
                poly_derivative(p, k, x)
            } else {
                0.0
            }
        })
    }

    fn atoms(&self) -> Vec<(f64, f64)> {
        self.breakpoints
            .iter()
            .copied()
            .zip(self.kinks.iter().copied())
            .collect()
    }

    fn features(&self) -> Vec<(f64, f64)> {
        self.breakpoints.iter().map(|&b| (b, 0.0)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Side {
    Left,
    Right,
}

/// The unobserved interval: `(0, length)` or `(1 − length, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Hole {
    pub side: Side,
    pub length: f64,
}

impl Hole {
    pub fn new(side: Side, length: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&length) {
            return domain(format!("hole length must lie in [0,1), got {length}"));
        }
        Ok(Self { side, length })
    }

    /// `Ω − D` as a closed interval.
    pub fn observed(&self) -> (f64, f64) {
        match self.side {
            Side::Left => (self.length, 1.0),
            Side::Right => (0.0, 1.0 - self.length),
        }
    }

    /// Unit direction from `D` into `Ω − D`.
    pub fn inward(&self) -> f64 {
        match self.side {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StrictMetricValue {
    /// `‖u − v‖_{W^{m−1,1}}`.
    pub sobolev_part: f64,
    /// `| |D^m u|(Ω) − |D^m v|(Ω) |`.
    pub tv_gap: f64,
    /// Gap of `∫ √(1+|D^m ·|²) − 1` with atoms priced at their mass.
    pub area_gap: f64,
}

impl StrictMetricValue {
    pub fn total(&self) -> f64 {
        self.sobolev_part + self.tv_gap + self.area_gap
    }
}

/// Composite Simpson nodes on `[lo, hi]`, split at knots and refined inside
/// feature windows. Each node remembers from which side it sees its segment.
struct Quadrature {
    nodes: Vec<(f64, f64, bool)>,
}

impl Quadrature {
    fn new(lo: f64, hi: f64, features: &[(f64, f64)]) -> Self {
        let mut knots = vec![lo, hi];
        for &(c, r) in features {
            for k in [c - r, c, c + r] {
                if k > lo && k < hi {
                    knots.push(k);
                }
            }
        }
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let windows: Vec<(f64, f64)> = features
            .iter()
            .filter(|f| f.1 > 0.0)
            .map(|&(c, r)| (c - r, c + r))
            .collect();
        let mut nodes = Vec::new();
        for seg in knots.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let len = b - a;
            if len <= 0.0 {
                continue;
            }
            let mid = 0.5 * (a + b);
            let mut n = ((len * BASE_PANELS as f64).ceil() as usize).max(2);
            if windows.iter().any(|&(p, q)| mid > p && mid < q) {
                n = n.max(FEATURE_PANELS);
            }
            n += n % 2;
            let step = len / n as f64;
            for i in 0..=n {
                let w = match i {
                    0 => 1.0,
                    _ if i == n => 1.0,
                    _ if i % 2 == 1 => 4.0,
                    _ => 2.0,
                } * step
                    / 3.0;
                let x = if i == n { b } else { a + step * i as f64 };
                nodes.push((x, w, i == n));
            }
        }
        Self { nodes }
    }
}

/// Whether the Simpson segment owning this node lies in `Ω − D`; the
/// hole boundary is always a knot.
fn in_observed(x: f64, left: bool, observed: (f64, f64)) -> bool {
    if left {
        x > observed.0 && x <= observed.1
    } else {
        x >= observed.0 && x < observed.1
    }
}

fn area_density(g: f64) -> f64 {
    g * g / ((1.0 + g * g).sqrt() + 1.0)
}

fn atom_mass(p: &dyn Profile) -> f64 {
    p.atoms().iter().map(|a| a.1.abs()).sum()
}

struct Measured {
    metric: StrictMetricValue,
    lq: f64,
    tv_v: f64,
}

fn measure(u: &dyn Profile, v: &dyn Profile, observed: (f64, f64), q: f64) -> Measured {
    let m = u.order();
    let mut features = u.features();
    features.extend(v.features());
    features.push((observed.0, 0.0));
    features.push((observed.1, 0.0));
    let quad = Quadrature::new(0.0, 1.0, &features);
    let mut sob = 0.0;
    let (mut tv_u, mut tv_v) = (0.0, 0.0);
    let (mut area_u, mut area_v) = (0.0, 0.0);
    let mut lq = 0.0;
    for &(x, w, left) in &quad.nodes {
        let du = u.derivatives(x, left);
        let dv = v.derivatives(x, left);
        for k in 0..m {
            sob += w * (du[k] - dv[k]).abs();
        }
        tv_u += w * du[m].abs();
        tv_v += w * dv[m].abs();
        area_u += w * area_density(du[m]);
        area_v += w * area_density(dv[m]);
        let inside = in_observed(x, left, observed);
        if inside {
            lq += w * (du[0] - dv[0]).abs().powf(q);
        }
    }
    let (au, av) = (atom_mass(u), atom_mass(v));
    let tv_u = tv_u + au;
    let tv_v = tv_v + av;
    Measured {
        metric: StrictMetricValue {
            sobolev_part: sob,
            tv_gap: (tv_u - tv_v).abs(),
            area_gap: ((area_u + au) - (area_v + av)).abs(),
        },
        lq: lq.powf(1.0 / q),
        tv_v,
    }
}

/// Strict distance between two profiles of the same order.
pub fn strict_distance(u: &dyn Profile, v: &dyn Profile) -> Result<StrictMetricValue> {
    if u.order() != v.order() {
        return domain("profiles of different order");
    }
    Ok(measure(u, v, (0.0, 1.0), 1.0).metric)
}

/// `‖u − v‖_{L^q(Ω−D)}`.
pub fn lq_distance(u: &dyn Profile, v: &dyn Profile, hole: &Hole, q: f64) -> Result<f64> {
    if !(q >= 1.0) || !q.is_finite() {
        return domain(format!("q must be finite and >= 1, got {q}"));
    }
    Ok(measure(u, v, hole.observed(), q).lq)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ShellRecord {
    pub index: usize,
    /// Signed sampling offset `s_j`; its sign is the hole's inward direction.
    pub shift: f64,
    pub epsilon: f64,
    pub budget: f64,
    /// Measured `W^{m−1,1}` + regular `D^m` + `L^q(Ω−D)` error of this term.
    pub error: f64,
}

/// `φ` in closed form; evaluate with [`Profile::derivatives`].
#[derive(Clone, Debug)]
pub struct SmoothApproximant {
    u: PiecewiseSignal,
    outer: usize,
    shells: Vec<(usize, f64, f64)>,
    mollifier: Mollifier,
}

impl SmoothApproximant {
    /// Index `J` of the outer term `1 − ψ_{J−1}`.
    pub fn outer_index(&self) -> usize {
        self.outer
    }

    /// `(x, φ, φ', …, φ^{(m)})` on `n + 1` equispaced points of `[0, 1]`.
    pub fn sample(&self, n: usize) -> Vec<(f64, Vec<f64>)> {
        (0..=n)
            .map(|i| {
                let x = i as f64 / n as f64;
                let d = self.derivatives(x, false);
                (x, d[..=self.u.m].to_vec())
            })
            .collect()
    }

    /// Derivatives `0..=m` of `η_j u` at `z`, without atoms.
    fn shell_term(&self, j: usize, z: f64, left: bool) -> Derivs {
        let e = eta(j, z).derivatives();
        let du = self.u.derivatives(z, left);
        let m = self.u.m;
        std::array::from_fn(|k| {
            if k > m {
                return 0.0;
            }
            (0..=k.min(m - 1))
                .map(|l| binom(k, l) * e[k - l] * du[l])
                .sum()
        })
    }

    /// `(ρ_ε ∗ η_j u)^{(k)}(y)` for `k ≤ m`, regular parts only.
    fn shell_convolution(&self, j: usize, y: f64, eps: f64) -> Derivs {
        let ((lo, hi), (clo, chi)) = eta_support(j);
        if y + eps <= lo || y - eps >= hi || (y - eps >= clo && y + eps <= chi) {
            return [0.0; MAX_ORDER + 1];
        }
        self.mollifier
            .convolve(y, eps, &self.u.breakpoints, |z, acc, w| {
                let t = self.shell_term(j, z, false);
                for k in 0..=MAX_ORDER {
                    acc[k] += w * t[k];
                }
            })
    }

    fn shell_atoms(&self, j: usize, y: f64, eps: f64) -> f64 {
        self.u
            .breakpoints
            .iter()
            .zip(&self.u.kinks)
            .map(|(&b, &a)| {
                let t = y - b;
                if t.abs() >= eps {
                    0.0
                } else {
                    a * eta(j, b).0[0] * self.mollifier.kernel(t, eps)
                }
            })
            .sum()
    }

    fn outer_term(&self, x: f64, left: bool) -> Derivs {
        let p = psi(self.outer - 1, x);
        let one_minus = Jet::ONE.sub(p).derivatives();
        let du = self.u.derivatives(x, left);
        let m = self.u.m;
        std::array::from_fn(|k| {
            if k > m {
                return 0.0;
            }
            (0..=k.min(m - 1))
                .map(|l| binom(k, l) * one_minus[k - l] * du[l])
                .sum()
        })
    }

    /// Errors of shell `j` with offset `s` and radius `eps` against `η_j u`.
    fn shell_error(&self, j: usize, s: f64, eps: f64, observed: (f64, f64), q: f64) -> f64 {
        let m = self.u.m;
        let ((lo, hi), _) = eta_support(j);
        let reach = s.abs() + eps;
        let a = (lo - reach).max(0.0);
        let b = (hi + reach).min(1.0);
        let mut features: Vec<(f64, f64)> = vec![(observed.0, 0.0), (observed.1, 0.0)];
        for &bp in &self.u.breakpoints {
            features.push((bp, 0.0));
            features.push((bp - s, eps));
        }
        let quad = Quadrature::new(a, b, &features);
        let (mut sob, mut reg, mut lq) = (0.0, 0.0, 0.0);
        for &(x, w, left) in &quad.nodes {
            let conv = self.shell_convolution(j, x + s, eps);
            let exact = self.shell_term(j, x, left);
            for k in 0..m {
                sob += w * (conv[k] - exact[k]).abs();
            }
            reg += w * (conv[m] - exact[m]).abs();
            if in_observed(x, left, observed) {
                lq += w * (conv[0] - exact[0]).abs().powf(q);
            }
        }
        sob + reg + lq.powf(1.0 / q)
    }
}

impl Profile for SmoothApproximant {
    fn order(&self) -> usize {
        self.u.m
    }

    fn derivatives(&self, x: f64, left: bool) -> Derivs {
        let m = self.u.m;
        let mut out = self.outer_term(x, left);
        for &(j, s, eps) in &self.shells {
            let y = x + s;
            let c = self.shell_convolution(j, y, eps);
            for k in 0..=m {
                out[k] += c[k];
            }
            out[m] += self.shell_atoms(j, y, eps);
        }
        out
    }

    fn atoms(&self) -> Vec<(f64, f64)> {
        Vec::new()
    }

    fn features(&self) -> Vec<(f64, f64)> {
        let mut f = Vec::new();
        for &b in &self.u.breakpoints {
            f.push((b, 0.0));
            for &(_, s, eps) in &self.shells {
                f.push((b - s, eps));
            }
        }
        f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ApproxConfig {
    pub hole: Hole,
    /// Integrability exponent of the error on `Ω − D`.
    pub q: f64,
    /// Shells used even when the atoms would allow fewer.
    pub min_shells: usize,
}

impl Default for ApproxConfig {
    fn default() -> Self {
        Self {
            hole: Hole {
                side: Side::Left,
                length: 0.2,
            },
            q: 2.0,
            min_shells: 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Approximation {
    pub approximant: SmoothApproximant,
    pub target: f64,
    pub distance: StrictMetricValue,
    pub lq_error: f64,
    /// `distance.total() + lq_error`.
    pub total_error: f64,
    /// `∫ |φ^{(m)}|`.
    pub approximant_tv: f64,
    pub kink_mass: f64,
    pub shells: Vec<ShellRecord>,
    pub rounds: usize,
    pub failed: bool,
}

/// Smallest `J ≥ 2 + min_shells` with every breakpoint inside `Ω_{J−1}`.
fn outer_index(u: &PiecewiseSignal, min_shells: usize) -> usize {
    let mut j = 2;
    while u
        .breakpoints
        .iter()
        .any(|&b| !(b > 1.0 / j as f64 && b < 1.0 - 1.0 / j as f64))
    {
        j += 1;
    }
    j.max(2 + min_shells)
}

/// Smooth `φ` with strict distance plus `L^q(Ω−D)` error at most `target`.
pub fn smooth_approximate(
    u: &PiecewiseSignal,
    target: f64,
    cfg: &ApproxConfig,
) -> Result<Approximation> {
    if !(target > 0.0) || !target.is_finite() {
        return domain(format!("target must be positive, got {target}"));
    }
    if !(cfg.q >= 1.0) || !cfg.q.is_finite() {
        return domain(format!("q must be finite and >= 1, got {}", cfg.q));
    }
    Hole::new(cfg.hole.side, cfg.hole.length)?;
    let outer = outer_index(u, cfg.min_shells);
    let dir = cfg.hole.inward();
    let observed = cfg.hole.observed();
    let mut approx = SmoothApproximant {
        u: u.clone(),
        outer,
        shells: Vec::new(),
        mollifier: Mollifier::new(),
    };
    let mut failed = false;
    let mut records = Vec::new();
    for j in 2..outer {
        let budget = target * 0.5f64.powi(j as i32 + 2);
        let mut h = 0.5 / (j + 2) as f64;
        let mut error;
        loop {
            error = approx.shell_error(j, dir * h, 0.5 * h, observed, cfg.q);
            if error <= budget {
                break;
            }
            // errors shrink about linearly with the offset
            let factor = (0.5 * budget / error).clamp(1e-3, 0.5);
            h *= factor;
            if 0.5 * h < EPS_FLOOR {
                failed = true;
                break;
            }
        }
        approx.shells.push((j, dir * h, 0.5 * h));
        records.push(ShellRecord {
            index: j,
            shift: dir * h,
            epsilon: 0.5 * h,
            budget,
            error,
        });
    }

    let mut rounds = 0;
    let measured = loop {
        let meas = measure(u, &approx, observed, cfg.q);
        rounds += 1;
        if meas.metric.total() + meas.lq <= target || failed || rounds > MAX_ROUNDS {
            failed |= meas.metric.total() + meas.lq > target;
            break meas;
        }
        for shell in approx.shells.iter_mut() {
            shell.1 *= 0.25;
            shell.2 *= 0.25;
        }
        if approx.shells.iter().any(|s| s.2 < EPS_FLOOR) {
            failed = true;
        }
    };
    if rounds > 1 {
        for (rec, &(j, s, eps)) in records.iter_mut().zip(&approx.shells) {
            rec.shift = s;
            rec.epsilon = eps;
            rec.error = approx.shell_error(j, s, eps, observed, cfg.q);
        }
    }
    Ok(Approximation {
        target,
        distance: measured.metric,
        lq_error: measured.lq,
        total_error: measured.metric.total() + measured.lq,
        approximant_tv: measured.tv_v,
        kink_mass: u.kink_mass(),
        shells: records,
        rounds,
        failed,
        approximant: approx,
    })
}

/// Uniform samples `values[i] = v(x0 + i·dx)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledSignal {
    pub x0: f64,
    pub dx: f64,
    pub values: Vec<f64>,
}

impl SampledSignal {
    /// `n + 1` samples of `f` on `[0, 1]`.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Self {
        let dx = 1.0 / n as f64;
        Self {
            x0: 0.0,
            dx,
            values: (0..=n).map(|i| f(i as f64 * dx)).collect(),
        }
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }
}

/// Discrete convolution with the normalized bump of radius `epsilon`. The
/// result covers the samples whose whole window lies inside the input.
pub fn mollify(samples: &SampledSignal, epsilon: f64) -> Result<SampledSignal> {
    if !(epsilon >= 2.0 * samples.dx) || !epsilon.is_finite() {
        return domain(format!(
            "epsilon {epsilon} must span at least two sample spacings ({})",
            samples.dx
        ));
    }
    let reach = (epsilon / samples.dx).floor() as usize;
    let n = samples.values.len();
    if 2 * reach >= n {
        return domain(format!(
            "epsilon {epsilon} leaves no interior sample (margin violation)"
        ));
    }
    let weights: Vec<f64> = (0..=2 * reach)
        .map(|k| raw_bump((k as f64 - reach as f64) * samples.dx / epsilon))
        .collect();
    let total: f64 = weights.iter().sum();
    let values = (reach..n - reach)
        .map(|i| {
            weights
                .iter()
                .enumerate()
                .map(|(k, w)| w * samples.values[i + k - reach])
                .sum::<f64>()
                / total
        })
        .collect();
    Ok(SampledSignal {
        x0: samples.x(reach),
        dx: samples.dx,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hat_default() -> ApproxConfig {
        ApproxConfig::default()
    }

    #[test]
    fn smooth_step_derivatives_match_differences() {
        for t0 in [0.1, 0.3, 0.5, 0.77, 0.95] {
            let d = smooth_step(Jet::affine(t0, 1.0)).derivatives();
            for k in 1..=3 {
                let e = 1e-5;
                let f = |t: f64| smooth_step(Jet::affine(t, 1.0)).derivatives()[k - 1];
                let fd = (f(t0 + e) - f(t0 - e)) / (2.0 * e);
                assert!(
                    (fd - d[k]).abs() <= 1e-4 * (1.0 + d[k].abs()),
                    "k={k} t={t0}"
                );
            }
        }
        assert_eq!(smooth_step(Jet::affine(-0.5, 1.0)), Jet::ZERO);
        assert_eq!(smooth_step(Jet::affine(1.5, 1.0)), Jet::ONE);
    }

    #[test]
    fn shells_form_a_partition_of_unity() {
        for outer in [3usize, 5, 9] {
            for i in 1..200 {
                let x = i as f64 / 200.0;
                let mut total = Jet::ONE.sub(psi(outer - 1, x));
                for j in 2..outer {
                    total = total.add(eta(j, x));
                }
                let d = total.derivatives();
                assert!((d[0] - 1.0).abs() <= 1e-12);
                assert!(d[1..]
                    .iter()
                    .all(|v| v.abs() <= 1e-6 * (outer * outer) as f64));
            }
        }
        // η_j vanishes on the core Ω_{j−1} and outside Ω_{j+1}
        for j in 3..7 {
            let ((lo, hi), (clo, chi)) = eta_support(j);
            for x in [0.5 * lo, 0.5 * (clo + chi), 0.5 * (1.0 + hi)] {
                assert_eq!(eta(j, x).0[0], 0.0);
            }
        }
    }

    #[test]
    fn mollifier_has_unit_mass_and_is_even() {
        let m = Mollifier::new();
        let mass = m.convolve(0.3, 0.01, &[], |_, acc, w| acc[0] += w);
        assert!((mass[0] - 1.0).abs() <= 1e-15);
        let gl = GaussLegendre::new(NonZeroUsize::new(40).unwrap());
        let reference: f64 = (0..400)
            .map(|p| {
                let a = -1.0 + p as f64 / 200.0;
                gl.integrate(a, a + 1.0 / 200.0, raw_bump)
            })
            .sum();
        assert!((m.norm / reference - 1.0).abs() <= 1e-12);
        let second = m.convolve(0.3, 0.01, &[], |z, acc, w| acc[0] += w * (z - 0.3).powi(2));
        let exact: f64 = (0..400)
            .map(|p| {
                let a = -1.0 + p as f64 / 200.0;
                gl.integrate(a, a + 1.0 / 200.0, |t| t * t * raw_bump(t))
            })
            .sum::<f64>()
            / reference
            * 1e-4;
        assert!((second[0] / exact - 1.0).abs() <= 1e-7);
        assert_eq!(m.kernel(0.004, 0.01), m.kernel(-0.004, 0.01));
        let split = m.convolve(0.3, 0.01, &[0.305], |_, acc, w| acc[0] += w);
        assert!((split[0] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn signal_construction() {
        let hat = PiecewiseSignal::hat();
        assert_eq!(hat.kinks(), &[-2.0]);
        assert_eq!(hat.kink_mass(), 2.0);
        assert_eq!(hat.derivatives(0.25, false)[0], 0.25);
        assert_eq!(hat.derivatives(0.75, false)[0], 0.25);
        assert_eq!(hat.derivatives(0.5, true)[1], 1.0);
        assert_eq!(hat.derivatives(0.5, false)[1], -1.0);
        let cubic =
            PiecewiseSignal::from_kinks(3, &[1.0, 0.0, 2.0], &[(0.3, 4.0), (0.6, -1.0)]).unwrap();
        assert_eq!(cubic.kinks().len(), 2);
        assert!((cubic.kinks()[0] - 4.0).abs() < 1e-12);
        assert!(PiecewiseSignal::new(2, vec![0.5], vec![vec![0.0], vec![1.0]]).is_err());
        assert!(PiecewiseSignal::new(2, vec![0.5], vec![vec![0.0, 0.0, 1.0], vec![0.0]]).is_err());
        assert!(PiecewiseSignal::new(2, vec![1.5], vec![vec![0.0], vec![0.0]]).is_err());
    }

    #[test]
    fn strict_distance_examples() {
        let u = PiecewiseSignal::hat();
        let d = strict_distance(&u, &u).unwrap();
        assert_eq!(d.total(), 0.0);
        let v = PiecewiseSignal::from_kinks(2, &[0.0, 0.5], &[(0.5, -1.0)]).unwrap();
        let d = strict_distance(&u, &v).unwrap();
        assert!((d.tv_gap - 1.0).abs() <= 1e-14);
        assert!((d.area_gap - 1.0).abs() <= 1e-14);
        // ∫|u − v| + ∫|u' − v'| with u − v = x/2 on the left, (1−x)/2 on the right
        assert!((d.sobolev_part - (0.125 + 0.5)).abs() <= 1e-9, "{d:?}");
    }

    #[test]
    fn hole_directions_point_into_observed_part() {
        let u = PiecewiseSignal::hat();
        for (side, sign) in [(Side::Left, 1.0), (Side::Right, -1.0)] {
            let cfg = ApproxConfig {
                hole: Hole::new(side, 0.25).unwrap(),
                ..Default::default()
            };
            let a = smooth_approximate(&u, 0.1, &cfg).unwrap();
            assert!(!a.failed);
            for s in &a.shells {
                assert_eq!(s.shift.signum(), sign);
                assert!(s.epsilon <= 0.5 * s.shift.abs());
                assert!(s.shift.abs() + s.epsilon < 1.0 / (s.index + 2) as f64);
                assert!(s.error <= s.budget);
            }
        }
        assert!(Hole::new(Side::Left, 1.0).is_err());
    }

    #[test]
    fn polynomial_signal_needs_no_shells() {
        let u = PiecewiseSignal::from_kinks(2, &[0.3, -1.0], &[]).unwrap();
        let cfg = ApproxConfig {
            min_shells: 0,
            ..hat_default()
        };
        let a = smooth_approximate(&u, 1e-3, &cfg).unwrap();
        assert_eq!(a.approximant.outer_index(), 2);
        assert_eq!(a.total_error, 0.0);
        let b = smooth_approximate(&u, 1e-1, &hat_default()).unwrap();
        assert!(!b.failed && b.total_error <= 1e-1);
    }

    #[test]
    fn hat_approximation_meets_target() {
        let a = smooth_approximate(&PiecewiseSignal::hat(), 1e-2, &hat_default()).unwrap();
        assert!(!a.failed);
        assert!(a.total_error <= 1e-2, "{:?} {}", a.distance, a.lq_error);
        assert!((a.approximant_tv - 2.0).abs() <= 1e-2);
    }

    #[test]
    fn mollify_preserves_affine_data() {
        let c = SampledSignal::from_fn(200, |_| 3.5);
        let out = mollify(&c, 0.05).unwrap();
        assert!(out.values.iter().all(|v| (v - 3.5).abs() <= 1e-14));
        let l = SampledSignal::from_fn(200, |x| 2.0 * x - 1.0);
        let out = mollify(&l, 0.05).unwrap();
        for (i, v) in out.values.iter().enumerate() {
            assert!((v - (2.0 * out.x(i) - 1.0)).abs() <= 1e-13);
        }
        assert!(mollify(&l, 0.005).is_err());
        assert!(mollify(&l, 0.6).is_err());
    }

    #[test]
    fn mollified_hat_converges() {
        let hat = |x: f64| 0.5 - (x - 0.5).abs();
        let s = SampledSignal::from_fn(20_000, hat);
        let mut last = f64::INFINITY;
        for eps in [0.1, 0.05, 0.025, 0.0125] {
            let out = mollify(&s, eps).unwrap();
            let err: f64 = out
                .values
                .iter()
                .enumerate()
                .map(|(i, v)| (v - hat(out.x(i))).abs() * out.dx)
                .sum();
            assert!(err <= eps, "{eps}: {err}");
            assert!(err < last);
            last = err;
        }
    }
}
