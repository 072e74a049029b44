//! Regularity and model-behaviour diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::density::DensityParams;
use crate::error::{domain, Error, Result};
use crate::sum::Compensated;
use crate::tensorgrid::{for_each_disk_pixel, DiffOperator, ScalarField, SymTensor};

/// Upper end of the sampled `|Z|` range in [`ellipticity_probe`].
pub const PROBE_RADIUS: f64 = 1e4;

/// Grid points used by [`tv_limit_error`].
const TV_GRID: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ExcessMap {
    pub rho: f64,
    /// `E(x, ρ)` on interior pixels, zero elsewhere.
    pub values: ScalarField,
}

/// Mean squared oscillation of `∇^m u` over interior disks of radius `rho`.
pub fn excess_map(u: &ScalarField, m: usize, rho: f64) -> Result<ExcessMap> {
    if !(rho >= 1.0) || !rho.is_finite() {
        return domain(format!("disk radius must be at least one pixel, got {rho}"));
    }
    let op = DiffOperator::for_field(m, u)?;
    let interior = op.interior();
    if interior.is_empty() {
        return Err(Error::Size(format!(
            "{}x{} grid has no interior pixels for order {m}",
            u.width(),
            u.height()
        )));
    }
    let p = op.apply_field(u);
    let w = u.width();
    let mut values = vec![0.0; u.len()];
    for y in interior.y0..=interior.y1 {
        for x in interior.x0..=interior.x1 {
            let center = (x as usize, y as usize);
            let mut mean = SymTensor::zeros(p.shape());
            let mut count = 0usize;
            for_each_disk_pixel(
                &interior,
                center,
                rho,
                |i| {
                    mean = mean + p.at_index(i);
                    count += 1;
                },
                w,
            );
            mean = (1.0 / count as f64) * mean;
            let mut acc = Compensated::default();
            for_each_disk_pixel(
                &interior,
                center,
                rho,
                |i| {
                    let d = p.at_index(i) - mean;
                    acc.add(d.dot(&d));
                },
                w,
            );
            values[center.1 * w + center.0] = acc.value() / count as f64;
        }
    }
    Ok(ExcessMap {
        rho,
        values: u.with_data(values),
    })
}

/// `(1 + |Gu|)^{1−μ/2}`; needs `μ < 2` for a positive exponent.
pub fn phi_field(u: &ScalarField, p: &DensityParams) -> Result<ScalarField> {
    if !(p.mu() < 2.0) {
        return domain(format!("phi field needs mu < 2, got {}", p.mu()));
    }
    let op = DiffOperator::for_field(p.m(), u)?;
    let expo = 1.0 - 0.5 * p.mu();
    let norms = op.apply_field(u).pointwise_norms();
    Ok(u.with_data(norms.into_iter().map(|r| (1.0 + r).powf(expo)).collect()))
}

/// Discrete `W^{1,2}` seminorm `(h² Σ |∇φ|²)^{1/2}` over the pixels at least
/// `margin` away from the border.
pub fn w12_seminorm(phi: &ScalarField, margin: usize) -> f64 {
    let (w, hgt) = phi.extents();
    let inv_h = 1.0 / phi.h();
    let y_range = if phi.dim() == 1 {
        0..1
    } else {
        margin..hgt.saturating_sub(margin)
    };
    let x_end = w.saturating_sub(margin);
    let mut acc = Compensated::default();
    for y in y_range.clone() {
        for x in margin..x_end {
            if x + 1 < x_end {
                let d = (phi.get(x + 1, y) - phi.get(x, y)) * inv_h;
                acc.add(d * d);
            }
            if phi.dim() == 2 && y + 1 < y_range.end {
                let d = (phi.get(x, y + 1) - phi.get(x, y)) * inv_h;
                acc.add(d * d);
            }
        }
    }
    (phi.h() * phi.h() * acc.value()).sqrt()
}

/// The two normalized Hessian ratios at `(Z, X)`:
/// `D²F(Z)(X,X)(1+|Z|)^μ/|X|²` and `D²F(Z)(X,X)(1+|Z|)/|X|²`.
pub fn hessian_ratios(p: &DensityParams, z: &SymTensor, x: &SymTensor) -> (f64, f64) {
    let q = p.d2f_apply(z, x).dot(x) / x.dot(x);
    let r = z.norm();
    (q * (1.0 + r).powf(p.mu()), q * (1.0 + r))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EllipticityProbe {
    /// Smallest observed `D²F(Z)(X,X)(1+|Z|)^μ/|X|²`.
    pub nu4_measured: f64,
    /// Largest observed `D²F(Z)(X,X)(1+|Z|)/|X|²`.
    pub nu5_measured: f64,
    pub samples: usize,
}

/// Random `(Z, X)` pairs with `|Z| ∈ [0, 10⁴]`, half uniform in radius and
/// half log-uniform so that both small and large radii are covered.
pub fn ellipticity_probe(p: &DensityParams, samples: usize, seed: u64) -> Result<EllipticityProbe> {
    if p.delta() != 0.0 {
        return domain("ellipticity probe needs delta = 0");
    }
    let shape = crate::tensorgrid::TensorShape::new(p.m(), p.n())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_unit = |rng: &mut ChaCha8Rng| loop {
        let mut t = SymTensor::zeros(shape);
        for c in t.components_mut() {
            *c = 2.0 * rng.random::<f64>() - 1.0;
        }
        let n = t.norm();
        if n > 1e-3 {
            return (1.0 / n) * t;
        }
    };
    let mut nu4 = f64::INFINITY;
    let mut nu5 = 0.0_f64;
    for k in 0..samples {
        let radius = match k {
            0 => 0.0,
            _ if k % 2 == 0 => PROBE_RADIUS * rng.random::<f64>(),
            _ => (1e-6_f64.ln() + rng.random::<f64>() * (PROBE_RADIUS / 1e-6).ln()).exp(),
        };
        let z = radius * random_unit(&mut rng);
        let x = random_unit(&mut rng);
        let (a, b) = hessian_ratios(p, &z, &x);
        nu4 = nu4.min(a);
        nu5 = nu5.max(b);
    }
    Ok(EllipticityProbe {
        nu4_measured: nu4,
        nu5_measured: nu5,
        samples,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StaircaseMetric {
    pub jump_count: usize,
    /// `Σ |u'_{i+1} − u'_i|`, the total variation of the difference quotient.
    pub gradient_tv: f64,
    pub threshold: f64,
}

/// Counts sign changes among second differences above `3 × median |Δ²u|`.
/// A floor at the roundoff level of the data keeps exact ramps at zero.
pub fn staircase_metric(u: &ScalarField) -> Result<StaircaseMetric> {
    if u.dim() != 1 {
        return domain("staircase metric is defined for 1D signals");
    }
    let v = u.data();
    let d2: Vec<f64> = v.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect();
    let mut mags: Vec<f64> = d2.iter().map(|d| d.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let median = match mags.len() {
        0 => 0.0,
        n if n % 2 == 1 => mags[n / 2],
        n => 0.5 * (mags[n / 2 - 1] + mags[n / 2]),
    };
    let floor = 64.0 * f64::EPSILON * u.max_abs();
    let threshold = (3.0 * median).max(floor);
    let mut jump_count = 0;
    let mut last_sign = 0.0;
    for &d in &d2 {
        if d.abs() > threshold {
            let s = d.signum();
            if last_sign != 0.0 && s != last_sign {
                jump_count += 1;
            }
            last_sign = s;
        }
    }
    let gradient_tv = d2.iter().map(|d| d.abs()).sum::<f64>() / u.h();
    Ok(StaircaseMetric {
        jump_count,
        gradient_tv,
        threshold,
    })
}

/// `sup_{0 ≤ r ≤ r_max} |(μ−1)Φ_μ(r) − r|` on a uniform grid, with the
/// difference evaluated as `(1 − (1+r)^{2−μ})/(μ−2)` to avoid cancellation.
pub fn tv_limit_error(mu: f64, r_max: f64) -> Result<f64> {
    if !(mu > 2.0) || !mu.is_finite() {
        return domain(format!("TV limit study needs mu > 2, got {mu}"));
    }
    if !(r_max >= 0.0) || !r_max.is_finite() {
        return domain(format!("r_max must be finite and >= 0, got {r_max}"));
    }
    let mut sup = 0.0_f64;
    for i in 0..=TV_GRID {
        let r = r_max * i as f64 / TV_GRID as f64;
        sup = sup.max(tv_deviation(mu, r));
    }
    Ok(sup)
}

fn tv_deviation(mu: f64, r: f64) -> f64 {
    (-((2.0 - mu) * r.ln_1p()).exp_m1() / (mu - 2.0)).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::phi;
    use crate::tensorgrid::TensorShape;

    fn quadratic(w: usize, h: usize) -> ScalarField {
        ScalarField::from_fn(w, h, 1.0, |x, y| {
            let (x, y) = (x as f64, y as f64);
            0.5 * x * x - 0.3 * x * y + 0.2 * y * y + x - 2.0
        })
        .unwrap()
    }

    #[test]
    fn excess_of_quadratic_vanishes_and_ignores_affine_shifts() {
        let u = quadratic(12, 10);
        let e = excess_map(&u, 2, 2.5).unwrap();
        assert!(e.values.max_abs() <= 1e-14);
        let bumpy = ScalarField::from_fn(12, 10, 1.0, |x, y| ((x * y) as f64).sin()).unwrap();
        let shifted = bumpy.with_data(
            bumpy
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + 3.0 * (i % 12) as f64 - 1.5 * (i / 12) as f64 + 7.0)
                .collect(),
        );
        let a = excess_map(&bumpy, 2, 2.0).unwrap();
        let b = excess_map(&shifted, 2, 2.0).unwrap();
        for (x, y) in a.values.data().iter().zip(b.values.data()) {
            assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()));
            assert!(*x >= 0.0);
        }
    }

    #[test]
    fn excess_equals_disk_variance_identity() {
        let u = ScalarField::from_fn(9, 9, 1.0, |x, y| ((x * x + 2 * y) as f64).cos()).unwrap();
        let e = excess_map(&u, 2, 1.5).unwrap();
        let p = crate::tensorgrid::grad_m(&u, 2).unwrap();
        let interior = crate::tensorgrid::interior_rect(p.shape(), 9, 9);
        let (cx, cy) = (4usize, 4usize);
        let mut sq = 0.0;
        let mut n = 0.0;
        for y in interior.y0..=interior.y1 {
            for x in interior.x0..=interior.x1 {
                let (dx, dy) = (x as f64 - cx as f64, y as f64 - cy as f64);
                if dx * dx + dy * dy <= 2.25 {
                    let t = p.at(x as usize, y as usize);
                    sq += t.dot(&t);
                    n += 1.0;
                }
            }
        }
        let mean = crate::tensorgrid::disk_mean(&p, (cx, cy), 1.5).unwrap();
        let identity = sq / n - mean.dot(&mean);
        assert!((e.values.get(cx, cy) - identity).abs() <= 1e-12);
    }

    #[test]
    fn excess_peaks_on_a_kink_line() {
        let u = ScalarField::from_fn(15, 11, 1.0, |x, _| (x as f64 - 7.0).abs()).unwrap();
        let e = excess_map(&u, 2, 2.0).unwrap();
        let row: Vec<f64> = (0..15).map(|x| e.values.get(x, 5)).collect();
        assert!(row[7] > 0.0);
        assert_eq!(row[7], row.iter().cloned().fold(0.0, f64::max));
        assert_eq!(row[2], 0.0);
        assert!(row[5] < row[7] && row[4] <= row[5]);
    }

    #[test]
    fn excess_errors() {
        let u = quadratic(5, 5);
        assert!(excess_map(&u, 2, 0.5).is_err());
        assert!(matches!(
            excess_map(&quadratic(2, 2), 2, 1.0),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn phi_field_examples() {
        let d = DensityParams::new(1.4, 2, 2, 0.0).unwrap();
        let zero = ScalarField::zeros(6, 6, 1.0).unwrap();
        assert!(phi_field(&zero, &d)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 1.0));
        assert!(phi_field(&zero, &DensityParams::new(2.0, 2, 2, 0.0).unwrap()).is_err());
        let u = ScalarField::from_fn(6, 6, 1.0, |x, y| ((3 * x + y * y) as f64).sin()).unwrap();
        let phi = phi_field(&u, &d).unwrap();
        let norms = crate::tensorgrid::grad_m(&u, 2).unwrap().pointwise_norms();
        let top = norms.iter().cloned().fold(0.0, f64::max);
        for (v, r) in phi.data().iter().zip(&norms) {
            assert!((v - (1.0 + r).powf(0.3)).abs() <= 1e-15);
            assert!(*v >= 1.0 && *v <= (1.0 + top).powf(0.3) + 1e-15);
        }
        let near_one = DensityParams::new(1.0 + 1e-9, 2, 2, 0.0).unwrap();
        let phi1 = phi_field(&u, &near_one).unwrap();
        for (v, r) in phi1.data().iter().zip(&norms) {
            assert!((v - (1.0 + r).sqrt()).abs() <= 1e-8);
        }
        assert!(w12_seminorm(&phi, 1) > 0.0);
        assert_eq!(w12_seminorm(&zero, 1), 0.0);
    }

    #[test]
    fn probe_bounds() {
        for mu in [1.2, 1.4, 1.9] {
            let d = DensityParams::new(mu, 2, 2, 0.0).unwrap();
            let p = ellipticity_probe(&d, 2000, 3).unwrap();
            assert!(p.nu4_measured > 0.0 && p.nu4_measured <= 1.0);
            assert!(p.nu5_measured.is_finite() && p.nu5_measured >= 1.0);
        }
        assert!(ellipticity_probe(&DensityParams::new(1.4, 2, 2, 0.1).unwrap(), 10, 1).is_err());
    }

    #[test]
    fn probe_ratios_at_origin_and_radial() {
        let d = DensityParams::new(1.4, 2, 2, 0.0).unwrap();
        let shape = TensorShape::new(2, 2).unwrap();
        let x = SymTensor::from_components(shape, &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(hessian_ratios(&d, &SymTensor::zeros(shape), &x), (1.0, 1.0));
        for r in [0.1, 3.0, 250.0] {
            let z = (r / x.norm()) * x;
            let (a, _) = hessian_ratios(&d, &z, &x);
            assert!((a - 1.0).abs() <= 1e-12, "{a}");
        }
    }

    #[test]
    fn staircase_examples() {
        let ramp = ScalarField::from_fn(50, 1, 0.1, |x, _| 0.37 * x as f64 + 1.0).unwrap();
        assert_eq!(staircase_metric(&ramp).unwrap().jump_count, 0);
        for k in 1..6 {
            let stairs =
                ScalarField::from_fn(60, 1, 1.0, |x, _| ((x * (k + 1)) / 60) as f64).unwrap();
            assert!(staircase_metric(&stairs).unwrap().jump_count >= k);
        }
        assert!(staircase_metric(&ScalarField::zeros(4, 4, 1.0).unwrap()).is_err());
        let hat = ScalarField::from_fn(11, 1, 1.0, |x, _| -(x as f64 - 5.0).abs()).unwrap();
        assert_eq!(staircase_metric(&hat).unwrap().gradient_tv, 2.0);
    }

    #[test]
    fn tv_limit_bounds_and_monotonicity() {
        assert!(tv_limit_error(100.0, 100.0).unwrap() <= 1.0 / 98.0);
        assert!(tv_limit_error(10.0, 100.0).unwrap() <= 0.125);
        let mut last = f64::INFINITY;
        for mu in [2.5, 3.0, 5.0, 10.0, 40.0, 100.0] {
            let e = tv_limit_error(mu, 100.0).unwrap();
            assert!(e <= 1.0 / (mu - 2.0));
            assert!(e < last);
            last = e;
        }
        assert!(tv_limit_error(2.0, 1.0).is_err());
    }

    #[test]
    fn tv_deviation_matches_direct_evaluation() {
        for mu in [2.5, 10.0, 100.0] {
            for r in [0.0, 1e-3, 0.5, 7.0, 100.0] {
                let direct = ((mu - 1.0) * phi(mu, r).unwrap() - r).abs();
                assert!((direct - tv_deviation(mu, r)).abs() <= 1e-12 * (1.0 + r));
            }
        }
    }
}
