//! Forward diffusion and single-step reverse updates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::schedule::NoiseSchedule;
use crate::error::{Error, Result};
use crate::grid::LatentGrid;

/// Reverse-process family used by the sampler.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Deterministic update (no injected noise).
    #[default]
    Ddim,
    /// Ancestral update with posterior noise drawn from the run's stream.
    Ddpm,
}

/// `sqrt(alpha_bar) * z0 + sqrt(1 - alpha_bar) * eps` for an explicit coefficient.
pub fn q_sample(z0: &LatentGrid, eps: &LatentGrid, alpha_bar: f64) -> Result<LatentGrid> {
    let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    z0.zip_with(eps, "q_sample", |z, e| a * z + s * e)
}

/// Noises `z0` to timestep `t` with the given noise sample.
pub fn forward_diffuse(
    z0: &LatentGrid,
    t: usize,
    eps: &LatentGrid,
    schedule: &NoiseSchedule,
) -> Result<LatentGrid> {
    let ab = schedule.alpha_bar(t)?;
    q_sample(z0, eps, ab)
}

/// Clean-latent estimate implied by a noise prediction.
pub fn predict_z0(z_t: &LatentGrid, eps_hat: &LatentGrid, alpha_bar: f64) -> Result<LatentGrid> {
    let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    z_t.zip_with(eps_hat, "predict_z0", |z, e| (z - s * e) / a)
}

/// Deterministic re-projection from `alpha_bar_t` to `alpha_bar_prev`.
pub fn ddim_update(
    z_t: &LatentGrid,
    eps_hat: &LatentGrid,
    alpha_bar_t: f64,
    alpha_bar_prev: f64,
) -> Result<LatentGrid> {
    let z0_hat = predict_z0(z_t, eps_hat, alpha_bar_t)?;
    q_sample(&z0_hat, eps_hat, alpha_bar_prev)
}

fn check_eps(eps_hat: &LatentGrid) -> Result<()> {
    eps_hat.ensure_finite("predicted noise")
}

/// One deterministic step from `t` to `t - 1`.
pub fn reverse_step(
    z_t: &LatentGrid,
    eps_hat: &LatentGrid,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<LatentGrid> {
    if t == 0 {
        return Err(Error::InvalidArgument(
            "reverse_step needs t >= 1; t = 0 is already the last step".into(),
        ));
    }
    ddim_step(z_t, eps_hat, t, Some(t - 1), schedule)
}

/// Deterministic step from `t` to an arbitrary earlier timestep (`None` is
/// the clean end, `alpha_bar = 1`).
pub fn ddim_step(
    z_t: &LatentGrid,
    eps_hat: &LatentGrid,
    t: usize,
    prev: Option<usize>,
    schedule: &NoiseSchedule,
) -> Result<LatentGrid> {
    z_t.ensure_same_shape(eps_hat, "ddim_step")?;
    check_eps(eps_hat)?;
    if let Some(p) = prev {
        if p >= t {
            return Err(Error::InvalidArgument(format!(
                "previous timestep {p} must precede {t}"
            )));
        }
    }
    let ab_t = schedule.alpha_bar(t)?;
    let ab_prev = schedule.alpha_bar_or_one(prev)?;
    ddim_update(z_t, eps_hat, ab_t, ab_prev)
}

/// Ancestral step: posterior mean of `q(z_prev | z_t, z0_hat)` plus posterior
/// noise. At the clean end no noise is added.
pub fn ddpm_step<R: Rng + ?Sized>(
    z_t: &LatentGrid,
    eps_hat: &LatentGrid,
    t: usize,
    prev: Option<usize>,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<LatentGrid> {
    z_t.ensure_same_shape(eps_hat, "ddpm_step")?;
    check_eps(eps_hat)?;
    let ab_t = schedule.alpha_bar(t)?;
    let ab_prev = schedule.alpha_bar_or_one(prev)?;
    let z0_hat = predict_z0(z_t, eps_hat, ab_t)?;
    let alpha = ab_t / ab_prev;
    let beta = 1.0 - alpha;
    let c0 = ab_prev.sqrt() * beta / (1.0 - ab_t);
    let ct = alpha.sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
    let mean = z0_hat.zip_with(z_t, "ddpm_step", |x0, xt| c0 * x0 + ct * xt)?;
    match prev {
        None => Ok(mean),
        Some(_) => {
            let var = (1.0 - ab_prev) / (1.0 - ab_t) * beta;
            let (h, w, c) = mean.shape();
            let noise = LatentGrid::randn(h, w, c, rng);
            mean.zip_with(&noise, "ddpm_step", |m, n| m + var.sqrt() * n)
        }
    }
}

/// Evenly strided inference timesteps, descending, always ending at 0.
pub fn inference_timesteps(num_train_steps: usize, num_inference_steps: usize) -> Result<Vec<usize>> {
    if num_inference_steps == 0 || num_inference_steps > num_train_steps {
        return Err(Error::InvalidArgument(format!(
            "inference steps must be in 1..={num_train_steps}, got {num_inference_steps}"
        )));
    }
    let stride = num_train_steps / num_inference_steps;
    Ok((0..num_inference_steps).rev().map(|i| i * stride).collect())
}

/// How training draws timesteps for the samples of one update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestepSampling {
    /// Independent uniform draws over `0..T`.
    #[default]
    Uniform,
    /// Sample `i` of `n` is drawn uniformly from the `i`-th of `n` equal
    /// strata of `0..T`.
    Stratified,
}

/// Draws `n` training timesteps in `0..num_train_steps`.
pub fn draw_timesteps<R: Rng + ?Sized>(
    n: usize,
    num_train_steps: usize,
    kind: TimestepSampling,
    rng: &mut R,
) -> Vec<usize> {
    (0..n)
        .map(|i| match kind {
            TimestepSampling::Uniform => rng.random_range(0..num_train_steps),
            TimestepSampling::Stratified => {
                let lo = i * num_train_steps / n;
                let hi = ((i + 1) * num_train_steps / n).max(lo + 1);
                rng.random_range(lo..hi)
            }
        })
        .collect()
}
