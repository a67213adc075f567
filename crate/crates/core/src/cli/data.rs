//! Seeded random initial data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dynamics::{InitialData, Process};
use crate::history::{history_norm, InitialHistory, Profile};
use crate::kernel::length_scale;
use crate::spectral::{eigenvalue, SpectralField};

use super::HarnessError;

fn draw(rng: &mut ChaCha8Rng, n: usize, exponent: f64) -> SpectralField {
    SpectralField::from_coeffs(
        (1..=n)
            .map(|k| {
                let var = eigenvalue(k).powf(-exponent) / k as f64;
                Normal::new(0.0, var.sqrt()).expect("finite variance").sample(rng)
            })
            .collect(),
    )
}

/// Norm of `z_τ` in `H_τ` at regularity `σ`: `‖u‖²_{σ+1} + ‖v‖²_σ + ‖η‖²_{M^σ_τ}`, square-rooted.
pub fn initial_norm(process: &Process, z: &InitialData, sigma: f64) -> f64 {
    let kernel = process.config().kernel.as_ref();
    let mem = if kernel.is_zero() || process.quadrature().is_empty() {
        0.0
    } else {
        let n = z.u.len();
        history_norm(process.quadrature(), kernel, process.tau(), sigma, |s| {
            z.history.eval(s, n)
        })
    };
    (z.u.sigma_norm_sq(sigma + 1.0) + z.v.sigma_norm_sq(sigma) + mem).sqrt()
}

/// Coefficients drawn with variance `λ_k^{−(σ+1)}/k` for `u` and the history
/// amplitude, `λ_k^{−σ}/k` for `v`, history `s e^{−s/ℓ} v + (1 − e^{−s/ℓ})² ζ`
/// with `ℓ` the kernel length at `τ`, all rescaled to norm `radius` at regularity `σ`.
pub fn random_initial_data(
    process: &Process,
    sigma: f64,
    radius: f64,
    seed: u64,
) -> Result<InitialData, HarnessError> {
    if !(radius >= 0.0) {
        return Err(HarnessError::Usage(format!(
            "radius {radius} must be nonnegative"
        )));
    }
    let n = process.n_modes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = draw(&mut rng, n, sigma + 1.0);
    let v = draw(&mut rng, n, sigma);
    let zeta = draw(&mut rng, n, sigma + 1.0);
    let kernel = process.config().kernel.as_ref();
    let history = if kernel.is_zero() {
        InitialHistory::Zero
    } else {
        let ell = length_scale(kernel, process.tau()).map_err(|e| HarnessError::Numerical(e.to_string()))?;
        InitialHistory::Separable(vec![
            (Profile::RampExp { ell }, v.clone()),
            (Profile::Saturating { ell }, zeta.clone()),
        ])
    };
    let mut z = InitialData { u, v, history };
    let norm = initial_norm(process, &z, sigma);
    let c = if norm > 0.0 { radius / norm } else { 0.0 };
    z.u = z.u.scaled(c);
    z.v = z.v.scaled(c);
    if let InitialHistory::Separable(parts) = &mut z.history {
        for (_, f) in parts.iter_mut() {
            *f = f.scaled(c);
        }
    }
    Ok(z)
}
