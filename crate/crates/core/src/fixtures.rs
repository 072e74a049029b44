//! Seeded synthetic inputs shared by the acceptance tests, the CLI and the
//! benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{domain, Result};
use crate::tensorgrid::{Mask, ScalarField};

/// Two affine pieces split along `x + y/2 = 0.6` in unit coordinates, values
/// in `[0, 1]`, on an `n × n` pixel grid.
pub fn piecewise_affine(n: usize) -> Result<ScalarField> {
    let s = 1.0 / n as f64;
    ScalarField::from_fn(n, n, 1.0, |x, y| {
        let (x, y) = (x as f64 * s, y as f64 * s);
        if x + 0.5 * y < 0.6 {
            0.2 + 0.5 * x + 0.3 * y
        } else {
            0.85 - 0.4 * x + 0.15 * y
        }
    })
}

/// `u` plus independent uniform noise on `[−amplitude, amplitude]`.
pub fn add_uniform_noise(u: &ScalarField, amplitude: f64, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    u.with_data(
        u.data()
            .iter()
            .map(|v| v + amplitude * (2.0 * rng.random::<f64>() - 1.0))
            .collect(),
    )
}

/// The noisy piecewise-affine test image.
pub fn noisy_piecewise_affine(n: usize, amplitude: f64, seed: u64) -> Result<ScalarField> {
    Ok(add_uniform_noise(&piecewise_affine(n)?, amplitude, seed))
}

/// Ramp `slope · x` on `[0, 1)` sampled at `n` points with uniform noise.
pub fn noisy_ramp(n: usize, slope: f64, amplitude: f64, seed: u64) -> Result<ScalarField> {
    let h = 1.0 / n as f64;
    let ramp = ScalarField::from_fn(n, 1, h, |x, _| slope * x as f64 * h)?;
    Ok(add_uniform_noise(&ramp, amplitude, seed))
}

/// Full mask with a centered `hole × hole` block unobserved.
pub fn square_hole(width: usize, height: usize, hole: usize) -> Result<Mask> {
    if hole > width || hole > height {
        return domain(format!(
            "{hole}x{hole} hole exceeds the {width}x{height} grid"
        ));
    }
    let (x0, y0) = ((width - hole) / 2, (height - hole) / 2);
    let obs = (0..width * height)
        .map(|i| {
            let (x, y) = (i % width, i / width);
            !(x >= x0 && x < x0 + hole && y >= y0 && y < y0 + hole)
        })
        .collect();
    Mask::new(width, height, obs)
}

/// Each pixel unobserved with probability `fraction`.
pub fn random_holes(width: usize, height: usize, fraction: f64, seed: u64) -> Result<Mask> {
    if !(0.0..1.0).contains(&fraction) {
        return domain(format!("hole fraction must lie in [0, 1), got {fraction}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mask::new(
        width,
        height,
        (0..width * height)
            .map(|_| rng.random::<f64>() >= fraction)
            .collect(),
    )
}
