//! Angle statistics of high-dimensional vectors under binarization.
//!
//! Two cosines matter here, for a standard-normal `v ∈ ℝⁿ`:
//!
//! - `ρ`, the cosine between two independent random vectors: mean 0,
//!   variance `1/n`, density `g(ρ) ∝ (1 − ρ²)^((n−3)/2)`;
//! - `η = v·θ(v) / (‖v‖·‖θ(v)‖) = Σ|vᵢ| / (‖v‖·√n)`, the cosine between a
//!   vector and its sign binarization. Its mean is
//!   `√(n/π)·Γ(n/2)/Γ((n+1)/2)`, which tends to `√(2/π)` (an angle of about
//!   37°) while the variance shrinks like `1/n`.
//!
//! Gamma ratios are never formed from `Γ` itself (it overflows near
//! `n ≈ 340`): small `n` goes through `ln Γ`, large `n` through the
//! asymptotic series of `Γ(z + ½)/Γ(z)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::{stats, Error, Result};

/// Samples per independently seeded stream in [`mc_angle_samples`].
const MC_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleStats {
    pub n: u64,
    pub mean_cosine: f64,
    pub variance_cosine: f64,
    pub mean_angle_deg: f64,
}

impl AngleStats {
    fn from_moments(n: u64, mean_cosine: f64, variance_cosine: f64) -> Self {
        Self {
            n,
            mean_cosine,
            variance_cosine,
            mean_angle_deg: mean_cosine.clamp(-1.0, 1.0).acos().to_degrees(),
        }
    }

    /// Standard deviation of the angle, by linearizing `arccos` at the mean.
    pub fn angle_std_deg(&self) -> f64 {
        let slope = (1.0 - self.mean_cosine * self.mean_cosine).sqrt();
        if slope == 0.0 {
            return 0.0;
        }
        (self.variance_cosine.sqrt() / slope).to_degrees()
    }
}

fn check_n(n: u64) -> Result<f64> {
    if n < 1 {
        return Err(Error::invalid("dimension n must be at least 1"));
    }
    Ok(n as f64)
}

/// Below this dimension the Gamma ratio is taken directly from `ln Γ`;
/// above it an asymptotic series avoids cancellation in the variance.
const SERIES_MIN_N: u64 = 100;

/// `Γ(z + ½) / (√z·Γ(z)) − 1` by its large-`z` expansion.
///
/// Truncation error is below 2e-15 for `z ≥ 50`.
fn gamma_half_ratio_minus_one(z: f64) -> f64 {
    let r = z.recip();
    r * (-1.0 / 8.0
        + r * (1.0 / 128.0
            + r * (5.0 / 1024.0
                + r * (-21.0 / 32768.0 + r * (-399.0 / 262144.0 + r * (869.0 / 4194304.0))))))
}

/// `E(η) = √n/√π · Γ(n/2)/Γ((n+1)/2)`.
pub fn expected_cosine_binarized(n: u64) -> Result<f64> {
    let nf = check_n(n)?;
    if n == 1 {
        return Ok(1.0);
    }
    if n >= SERIES_MIN_N {
        let delta = gamma_half_ratio_minus_one(nf / 2.0);
        return Ok((2.0 / std::f64::consts::PI).sqrt() / (1.0 + delta));
    }
    let log_ratio = ln_gamma(nf / 2.0) - ln_gamma((nf + 1.0) / 2.0);
    Ok((nf / std::f64::consts::PI).sqrt() * log_ratio.exp())
}

/// Exact `Var(η) = (1 − 2/π)/n + 2/π − E(η)²`.
///
/// For large `n` this behaves like `(1 − 3/π)/n`.
pub fn variance_cosine_binarized(n: u64) -> Result<f64> {
    let nf = check_n(n)?;
    if n == 1 {
        return Ok(0.0);
    }
    let two_over_pi = 2.0 / std::f64::consts::PI;
    if n >= SERIES_MIN_N {
        // E(η)² = (2/π)/S² with S = 1 + δ, so 2/π − E(η)² = (2/π)·δ(2 + δ)/S².
        let delta = gamma_half_ratio_minus_one(nf / 2.0);
        let s = 1.0 + delta;
        return Ok((1.0 - two_over_pi) / nf + two_over_pi * delta * (2.0 + delta) / (s * s));
    }
    let mean = expected_cosine_binarized(n)?;
    Ok(((1.0 - two_over_pi) / nf + two_over_pi - mean * mean).max(0.0))
}

pub fn binarized_cosine_stats(n: u64) -> Result<AngleStats> {
    Ok(AngleStats::from_moments(
        n,
        expected_cosine_binarized(n)?,
        variance_cosine_binarized(n)?,
    ))
}

/// `E(ρ) = 0`, `Var(ρ) = 1/n`.
pub fn random_pair_cosine_stats(n: u64) -> Result<AngleStats> {
    let nf = check_n(n)?;
    Ok(AngleStats::from_moments(n, 0.0, 1.0 / nf))
}

/// Density of `ρ`: `g(ρ) = Γ(n/2) / (√π·Γ((n−1)/2)) · (1 − ρ²)^((n−3)/2)`.
pub fn pdf_cosine_random(rho: f64, n: u64) -> Result<f64> {
    if n < 2 {
        return Err(Error::invalid("density of rho needs n >= 2"));
    }
    if !(-1.0..=1.0).contains(&rho) {
        return Err(Error::invalid(format!("rho = {rho} outside [-1, 1]")));
    }
    let nf = n as f64;
    let log_norm = ln_gamma(nf / 2.0)
        - ln_gamma((nf - 1.0) / 2.0)
        - 0.5 * std::f64::consts::PI.ln();
    let exponent = (nf - 3.0) / 2.0;
    if exponent == 0.0 {
        return Ok(log_norm.exp());
    }
    let base = 1.0 - rho * rho;
    if base == 0.0 {
        return Ok(if exponent > 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((log_norm + exponent * base.ln()).exp())
}

/// Monte Carlo draws of `ρ` and `η` for standard-normal vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McAngleSample {
    pub n: u64,
    pub num_samples: usize,
    pub seed: u64,
    pub rho_samples: Vec<f64>,
    pub eta_samples: Vec<f64>,
}

fn gaussian_into(rng: &mut ChaCha8Rng, buf: &mut [f64]) {
    for v in buf.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// Draw `num_samples` values of `ρ` (from independent pairs) and `η`.
///
/// The work is split into fixed-size chunks, each with its own ChaCha stream
/// derived from `(seed, chunk index)`, so the output does not depend on the
/// number of worker threads.
pub fn mc_angle_samples(n: u64, num_samples: usize, seed: u64) -> Result<McAngleSample> {
    check_n(n)?;
    if num_samples < 1 {
        return Err(Error::invalid("num_samples must be at least 1"));
    }
    let dim = usize::try_from(n).map_err(|_| Error::invalid("dimension too large"))?;
    let chunks = num_samples.div_ceil(MC_CHUNK);
    let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(chunk as u64);
            let count = MC_CHUNK.min(num_samples - chunk * MC_CHUNK);
            let mut v = vec![0.0; dim];
            let mut u = vec![0.0; dim];
            let mut rho = Vec::with_capacity(count);
            let mut eta = Vec::with_capacity(count);
            for _ in 0..count {
                gaussian_into(&mut rng, &mut v);
                gaussian_into(&mut rng, &mut u);
                let (mut vv, mut uu, mut uv, mut l1) = (0.0, 0.0, 0.0, 0.0);
                for (a, b) in v.iter().zip(&u) {
                    vv += a * a;
                    uu += b * b;
                    uv += a * b;
                    l1 += a.abs();
                }
                rho.push((uv / (vv.sqrt() * uu.sqrt())).clamp(-1.0, 1.0));
                eta.push((l1 / (vv.sqrt() * (dim as f64).sqrt())).clamp(0.0, 1.0));
            }
            (rho, eta)
        })
        .collect();
    let (mut rho_samples, mut eta_samples) = (Vec::with_capacity(num_samples), Vec::with_capacity(num_samples));
    for (r, e) in parts {
        rho_samples.extend(r);
        eta_samples.extend(e);
    }
    Ok(McAngleSample {
        n,
        num_samples,
        seed,
        rho_samples,
        eta_samples,
    })
}

impl McAngleSample {
    pub fn eta_mean(&self) -> f64 {
        stats::mean(&self.eta_samples)
    }

    pub fn eta_mean_std_error(&self) -> f64 {
        stats::std_error(&self.eta_samples)
    }

    pub fn eta_variance(&self) -> f64 {
        stats::sample_variance(&self.eta_samples)
    }

    pub fn rho_variance(&self) -> f64 {
        stats::sample_variance(&self.rho_samples)
    }

    /// Standard error of [`Self::rho_variance`], from the spread of squared deviations.
    pub fn rho_variance_std_error(&self) -> f64 {
        let m = stats::mean(&self.rho_samples);
        let sq: Vec<f64> = self.rho_samples.iter().map(|r| (r - m) * (r - m)).collect();
        stats::std_error(&sq)
    }

    pub fn eta_angles_deg(&self) -> Vec<f64> {
        self.eta_samples.iter().map(|e| e.acos().to_degrees()).collect()
    }

    pub fn rho_angles_deg(&self) -> Vec<f64> {
        self.rho_samples.iter().map(|r| r.acos().to_degrees()).collect()
    }

    pub fn eta_angle_std_deg(&self) -> f64 {
        stats::std_dev(&self.eta_angles_deg())
    }

    /// Compare the sample against the closed forms.
    pub fn check(&self) -> Result<TheoryCheck> {
        let eta_theory = expected_cosine_binarized(self.n)?;
        let rho_theory = random_pair_cosine_stats(self.n)?.variance_cosine;
        Ok(TheoryCheck {
            eta_z: z_score(self.eta_mean(), eta_theory, self.eta_mean_std_error()),
            rho_var_z: z_score(self.rho_variance(), rho_theory, self.rho_variance_std_error()),
        })
    }
}

fn z_score(observed: f64, expected: f64, sigma: f64) -> f64 {
    let diff = observed - expected;
    if sigma == 0.0 {
        // Degenerate samples (n = 1) must match exactly up to rounding.
        return if diff.abs() <= 1e-12 { 0.0 } else { f64::INFINITY };
    }
    diff / sigma
}

/// z-scores of a Monte Carlo sample against theory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TheoryCheck {
    pub eta_z: f64,
    pub rho_var_z: f64,
}

impl TheoryCheck {
    pub fn passes(&self, sigmas: f64) -> bool {
        self.eta_z.abs() <= sigmas && self.rho_var_z.abs() <= sigmas
    }
}

/// One line of the per-dimension angle table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AngleRow {
    pub n: u64,
    pub closed_form_mean: f64,
    pub closed_form_var: f64,
    pub mc_mean: f64,
    pub mc_var: f64,
    pub mc_angle_std_deg: f64,
}

impl AngleRow {
    pub fn from_sample(sample: &McAngleSample) -> Result<Self> {
        Ok(Self {
            n: sample.n,
            closed_form_mean: expected_cosine_binarized(sample.n)?,
            closed_form_var: variance_cosine_binarized(sample.n)?,
            mc_mean: sample.eta_mean(),
            mc_var: if sample.num_samples > 1 { sample.eta_variance() } else { 0.0 },
            mc_angle_std_deg: if sample.num_samples > 1 {
                sample.eta_angle_std_deg()
            } else {
                0.0
            },
        })
    }
}
