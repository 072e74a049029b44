//! Dual candidates, the dual functional `R` and duality-gap certificates.
//!
//! With `g = G^T κ` the discrete Lagrangian
//! `l(w, κ) = h² Σ [κ : Gw − F*(κ)] + λ/2 h² Σ_{Ω−D} (w − f)²`
//! has the closed-form infimum
//!
//! ```text
//! R[κ] = h² Σ_{Ω−D} [g f − g²/(2λ)] − h² Σ F*(κ)
//! ```
//!
//! when `g` vanishes on `D`, and `−∞` otherwise. A candidate is feasible when
//! additionally `|κ| < 1/(μ−1)` everywhere.

use serde::Serialize;

use crate::energy::{energy_with_delta, Problem};
use crate::error::Result;
use crate::sum::{self, Compensated};
use crate::tensorgrid::{ScalarField, SymTensorField};

/// Relative margin kept from the boundary of the conjugate's domain.
pub const FEASIBILITY_MARGIN: f64 = 1e-6;

/// Relative residual at which the hole correction is accepted.
const CG_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DualCandidate {
    pub kappa: SymTensorField,
    pub feasible: bool,
    /// `sup_p |κ_p| (μ−1)`.
    pub max_norm_ratio: f64,
    /// `sup_{p ∈ D} |(G^T κ)_p|`.
    pub divergence_residual_on_d: f64,
    /// `sup_p` of the pointwise change made by the radial clip.
    pub clip_magnitude: f64,
    /// `sup_p` of the pointwise change made after the clip.
    pub correction_norm: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Certificate {
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub relative_gap: f64,
    /// `sup_p |κ_p − DF((Gu)_p)|`.
    pub duality_relation_residual: f64,
    pub feasible: bool,
    pub max_norm_ratio: f64,
}

/// `DF(Gu)` pointwise; the `δ` part of the density is left out.
pub fn sigma_from_primal(pr: &Problem, u: &ScalarField) -> Result<SymTensorField> {
    pr.check_extents(u)?;
    let op = pr.operator();
    let density = pr.density().with_delta(0.0)?;
    let mut planes = op.apply(u.data());
    let shape = op.shape();
    for p in 0..u.len() {
        let r2: f64 = (0..shape.len())
            .map(|c| shape.weight(c) * planes[c][p] * planes[c][p])
            .sum();
        let g = density.gradient_factor(r2.sqrt());
        for plane in planes.iter_mut() {
            plane[p] *= g;
        }
    }
    SymTensorField::from_planes(u.width(), u.height(), u.h(), shape, planes)
}

fn sup_pointwise_diff(a: &SymTensorField, b: &SymTensorField) -> f64 {
    (0..a.pixel_count())
        .map(|i| (a.at_index(i) - b.at_index(i)).norm())
        .fold(0.0, f64::max)
}

/// Conjugate gradients for the semidefinite system `A y = b`.
fn conjugate_gradient(a: impl Fn(&[f64]) -> Vec<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let bnorm = sum::norm(b);
    let mut y = vec![0.0; n];
    if bnorm == 0.0 {
        return Some(y);
    }
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = sum::dot(&r, &r);
    for _ in 0..(20 * n + 100) {
        if rr.sqrt() <= CG_TOL * bnorm {
            return Some(y);
        }
        let ap = a(&p);
        let pap = sum::dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rr / pap;
        for i in 0..n {
            y[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_next = sum::dot(&r, &r);
        let beta = rr_next / rr;
        rr = rr_next;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    // accept a slightly looser residual; anything worse is a stall
    (rr.sqrt() <= 1e3 * CG_TOL * bnorm).then_some(y)
}

/// Radial clip to `(1 − ε)/(μ−1)`, then the least-norm correction making
/// `G^T κ` vanish on the hole, then a global rescale if the correction
/// pushed any pixel back over the bound.
pub fn project_feasible(pr: &Problem, kappa: &SymTensorField) -> Result<DualCandidate> {
    let op = pr.operator();
    if kappa.extents() != op.extents() || kappa.shape() != op.shape() {
        return Err(crate::Error::ExtentMismatch {
            expected: op.extents(),
            got: kappa.extents(),
        });
    }
    let a = pr.density().mu() - 1.0;
    let bound = (1.0 - FEASIBILITY_MARGIN) / a;

    let mut clipped = kappa.clone();
    for i in 0..clipped.pixel_count() {
        let t = clipped.at_index(i);
        let r = t.norm();
        if r > bound {
            clipped.set_index(i, &((bound / r) * t));
        }
    }
    let clip_magnitude = sup_pointwise_diff(kappa, &clipped);

    let holes = pr.mask().hole_indices();
    let mut out = clipped.clone();
    let mut solved = true;
    if !holes.is_empty() {
        let n = out.pixel_count();
        let g = op.transpose(out.planes());
        let rhs: Vec<f64> = holes.iter().map(|&i| g[i]).collect();
        let embed = |y: &[f64]| {
            let mut v = vec![0.0; n];
            for (&i, &val) in holes.iter().zip(y) {
                v[i] = val;
            }
            v
        };
        let normal = |y: &[f64]| {
            let w = op.normal(&embed(y));
            holes.iter().map(|&i| w[i]).collect::<Vec<f64>>()
        };
        match conjugate_gradient(normal, &rhs) {
            Some(y) => {
                let delta = op.apply(&embed(&y));
                for (plane, d) in out.planes_mut().iter_mut().zip(&delta) {
                    for (v, dv) in plane.iter_mut().zip(d) {
                        *v -= dv;
                    }
                }
            }
            None => solved = false,
        }
        let peak = out.pointwise_norms().into_iter().fold(0.0, f64::max);
        if peak > bound {
            let s = bound / peak;
            for plane in out.planes_mut() {
                plane.iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    let correction_norm = sup_pointwise_diff(&clipped, &out);
    let g = op.transpose(out.planes());
    let divergence_residual_on_d = holes.iter().map(|&i| g[i].abs()).fold(0.0, f64::max);
    let max_norm_ratio = out.pointwise_norms().into_iter().fold(0.0, f64::max) * a;
    Ok(DualCandidate {
        kappa: out,
        feasible: solved && max_norm_ratio < 1.0,
        max_norm_ratio,
        divergence_residual_on_d,
        clip_magnitude,
        correction_norm,
    })
}

/// `R[κ]`, or `−∞` for an infeasible candidate.
pub fn eval_dual(pr: &Problem, cand: &DualCandidate) -> f64 {
    if !cand.feasible {
        return f64::NEG_INFINITY;
    }
    let op = pr.operator();
    let g = op.transpose(cand.kappa.planes());
    let lambda = pr.lambda();
    let mut linear = Compensated::default();
    for ((&gv, &fv), &o) in g.iter().zip(pr.f().data()).zip(pr.mask().observed()) {
        if o {
            linear.add(gv * fv - gv * gv / (2.0 * lambda));
        }
    }
    let mut conj = Compensated::default();
    for s in cand.kappa.pointwise_norms() {
        conj.add(pr.density().conjugate_of_norm(s));
    }
    pr.cell_area() * (linear.value() - conj.value())
}

/// The discrete Lagrangian `l(w, κ)`, for checking `R` from above.
pub fn lagrangian(pr: &Problem, w: &ScalarField, kappa: &SymTensorField) -> Result<f64> {
    pr.check_extents(w)?;
    let op = pr.operator();
    let gw = op.apply(w.data());
    let shape = op.shape();
    let mut acc = Compensated::default();
    for p in 0..w.len() {
        let mut pair = 0.0;
        for c in 0..shape.len() {
            pair += shape.weight(c) * kappa.planes()[c][p] * gw[c][p];
        }
        let s = kappa.at_index(p).norm();
        acc.add(pair - pr.density().conjugate_of_norm(s));
    }
    for ((&wv, &fv), &o) in w.data().iter().zip(pr.f().data()).zip(pr.mask().observed()) {
        if o {
            acc.add(0.5 * pr.lambda() * (wv - fv) * (wv - fv));
        }
    }
    Ok(pr.cell_area() * acc.value())
}

/// Primal value `J[u]`, projected dual value, and their gap.
pub fn certify(pr: &Problem, u: &ScalarField) -> Result<Certificate> {
    let primal_value = {
        pr.check_extents(u)?;
        energy_with_delta(pr, u.data(), 0.0).total
    };
    let sigma = sigma_from_primal(pr, u)?;
    let cand = project_feasible(pr, &sigma)?;
    let dual_value = eval_dual(pr, &cand);
    let gap = primal_value - dual_value;
    let relative_gap = if gap == 0.0 {
        0.0
    } else {
        gap / primal_value.abs().max(f64::MIN_POSITIVE)
    };
    Ok(Certificate {
        primal_value,
        dual_value,
        gap,
        relative_gap,
        duality_relation_residual: sup_pointwise_diff(&cand.kappa, &sigma),
        feasible: cand.feasible,
        max_norm_ratio: cand.max_norm_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::DensityParams;
    use crate::solver::{solve, SolveConfig};
    use crate::tensorgrid::{Mask, TensorShape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn field(w: usize, h: usize, rng: &mut ChaCha8Rng, amp: f64) -> ScalarField {
        ScalarField::from_fn(w, h, 1.0, |_, _| amp * (rng.random::<f64>() - 0.5)).unwrap()
    }

    fn tensors(
        w: usize,
        h: usize,
        shape: TensorShape,
        rng: &mut ChaCha8Rng,
        amp: f64,
    ) -> SymTensorField {
        let planes = (0..shape.len())
            .map(|_| {
                (0..w * h)
                    .map(|_| amp * (rng.random::<f64>() - 0.5))
                    .collect()
            })
            .collect();
        SymTensorField::from_planes(w, h, 1.0, shape, planes).unwrap()
    }

    fn holed(w: usize, h: usize, mu: f64, rng: &mut ChaCha8Rng) -> Problem {
        let f = field(w, h, rng, 2.0);
        let obs = (0..w * h)
            .map(|i| !(i % w >= 2 && i % w < 5 && i / w >= 2 && i / w < 5))
            .collect();
        let mask = Mask::new(w, h, obs).unwrap();
        Problem::new(f, mask, 3.0, DensityParams::new(mu, 2, 2, 0.0).unwrap()).unwrap()
    }

    #[test]
    fn sigma_of_polynomial_vanishes_and_matches_df() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = DensityParams::new(1.5, 2, 2, 0.0).unwrap();
        let f = field(6, 6, &mut rng, 50.0);
        let pr = Problem::denoising(f.clone(), 1.0, d).unwrap();
        let s = sigma_from_primal(&pr, &f).unwrap();
        let z = pr.operator().apply_field(&f);
        for i in 0..36 {
            let expect = d.df(&z.at_index(i));
            assert!((s.at_index(i) - expect).norm() <= 1e-15);
            assert!(s.at_index(i).norm() < 2.0);
        }
        let lin = ScalarField::from_fn(6, 6, 1.0, |x, y| x as f64 + 2.0 * y as f64).unwrap();
        assert!(sigma_from_primal(&pr, &lin)
            .unwrap()
            .pointwise_norms()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn projection_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = DensityParams::new(1.4, 2, 2, 0.0).unwrap();
        let pr = Problem::denoising(field(6, 5, &mut rng, 1.0), 1.0, d).unwrap();
        let shape = pr.operator().shape();
        let small = tensors(6, 5, shape, &mut rng, 0.5);
        let c = project_feasible(&pr, &small).unwrap();
        assert_eq!(c.kappa, small);
        assert!(c.feasible);

        let mut big = small.clone();
        let t = big.at_index(3);
        big.set_index(3, &((2.0 / 0.4 / t.norm()) * t));
        let c = project_feasible(&pr, &big).unwrap();
        let bound = (1.0 - FEASIBILITY_MARGIN) / 0.4;
        assert!((c.kappa.at_index(3).norm() - bound).abs() <= 1e-12);
        assert!(c.max_norm_ratio < 1.0);
    }

    #[test]
    fn hole_correction_removes_divergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pr = holed(8, 8, 1.4, &mut rng);
        let k = tensors(8, 8, pr.operator().shape(), &mut rng, 5.0);
        let c = project_feasible(&pr, &k).unwrap();
        assert!(c.feasible);
        assert!(c.divergence_residual_on_d <= 1e-10);
        assert!(c.max_norm_ratio < 1.0);
    }

    #[test]
    fn zero_candidate_has_zero_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pr = holed(8, 8, 2.0, &mut rng);
        let zero = SymTensorField::zeros(8, 8, 1.0, pr.operator().shape());
        let c = project_feasible(&pr, &zero).unwrap();
        assert_eq!(eval_dual(&pr, &c), 0.0);
        let infeasible = DualCandidate {
            feasible: false,
            ..c
        };
        assert_eq!(eval_dual(&pr, &infeasible), f64::NEG_INFINITY);
    }

    #[test]
    fn dual_value_is_the_infimum_of_the_lagrangian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pr = holed(4, 4, 1.4, &mut rng);
        let c =
            project_feasible(&pr, &tensors(4, 4, pr.operator().shape(), &mut rng, 4.0)).unwrap();
        let r = eval_dual(&pr, &c);
        let g = pr.operator().transpose(c.kappa.planes());
        let wstar = pr.f().with_data(
            pr.f()
                .data()
                .iter()
                .zip(&g)
                .map(|(f, g)| f - g / pr.lambda())
                .collect(),
        );
        let at_min = lagrangian(&pr, &wstar, &c.kappa).unwrap();
        assert!((at_min - r).abs() <= 1e-10 * (1.0 + r.abs()));
        let mut best = f64::INFINITY;
        for _ in 0..2000 {
            let w = wstar.with_data(
                wstar
                    .data()
                    .iter()
                    .map(|v| v + 0.3 * (rng.random::<f64>() - 0.5))
                    .collect(),
            );
            let l = lagrangian(&pr, &w, &c.kappa).unwrap();
            assert!(l >= r - 1e-12);
            best = best.min(l);
        }
        assert!(best - r < 0.05);
    }

    #[test]
    fn constant_data_certifies_with_zero_gap() {
        let f = ScalarField::from_fn(8, 8, 1.0, |_, _| 0.4).unwrap();
        let pr = Problem::denoising(f, 5.0, DensityParams::new(1.4, 2, 2, 0.0).unwrap()).unwrap();
        let (u, _) = solve(&pr, &SolveConfig::default()).unwrap();
        let c = certify(&pr, &u).unwrap();
        assert_eq!(c.gap, 0.0);
        assert_eq!(c.relative_gap, 0.0);
    }

    #[test]
    fn converged_inpainting_has_small_gap() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pr = holed(10, 10, 1.4, &mut rng);
        let (u, _) = solve(&pr, &SolveConfig::default()).unwrap();
        let sigma = sigma_from_primal(&pr, &u).unwrap();
        let cand = project_feasible(&pr, &sigma).unwrap();
        let c = certify(&pr, &u).unwrap();
        assert!(c.feasible);
        assert!(c.gap >= -1e-10);
        assert!(c.relative_gap <= 1e-4, "{c:?}");
        assert!(cand.correction_norm <= 1e-6);
        assert!(c.duality_relation_residual <= cand.correction_norm + cand.clip_magnitude + 1e-15);
    }
}
