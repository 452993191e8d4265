//! Desk-scale noise predictor with an exact hand-written backward pass.
//!
//! The prediction is the sum of two parts:
//!
//! * a closed-form prior head,
//!   `sqrt(1 - ab_t) * (z_t - sqrt(ab_t) * m(p)) / (ab_t * sd^2 + 1 - ab_t)`,
//!   which is the optimal noise estimate for latents distributed as
//!   `N(m(p), sd^2 I)`. The prompt-dependent template `m(p)` is
//!   `tanh(sum_q basis_q(y, x) * (W_q p + b_q))` over four low-frequency
//!   spatial basis functions, with `p` the mean-pooled prompt embedding.
//! * a small convolutional trunk conditioned on a sinusoidal timestep
//!   embedding and on `p`, with two injection sites for control residuals:
//!   after the first (input) block, which feeds the middle block, and after
//!   the middle block, which feeds the output projection.
//!
//! ```text
//! g   = W_c [temb(t); p] + b_c
//! a1  = tanh(conv1(z) + g)
//! mid = a1 + r_mid
//! a2  = tanh(conv2(mid))
//! up  = a2 + r_up
//! eps = prior(z, p, t) + conv_out(up)
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::codec::{ToyCodec, DEFAULT_RESOLUTION_FACTOR};
use crate::diffusion::nn::{tanh, tanh_backward, Conv2d};
use crate::diffusion::params::{ParamId, ParamSet};
use crate::diffusion::schedule::NoiseSchedule;
use crate::diffusion::text::{PromptEmbedding, ToyTextEncoder, DEFAULT_EMBED_DIM};
use crate::error::{shape_err, Error, Result};
use crate::grid::LatentGrid;

pub const TEMPLATE_BASIS: usize = 4;

/// Residual feature maps a control branch injects into the base predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlResiduals {
    pub mid: LatentGrid,
    pub up: LatentGrid,
}

/// ε-predictor interface used by the samplers.
pub trait NoisePredictor: Send + Sync {
    fn predict(
        &self,
        z_t: &LatentGrid,
        prompt: &PromptEmbedding,
        t: usize,
        control: Option<&ControlResiduals>,
    ) -> Result<LatentGrid>;

    fn latent_channels(&self) -> usize;
    fn embed_dim(&self) -> usize;
    fn parameter_count(&self) -> usize;
    /// Digest of all parameters; equal digests mean equal weights.
    fn checksum(&self) -> String;
    fn schedule(&self) -> &NoiseSchedule;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyConfig {
    pub latent_channels: usize,
    pub hidden: usize,
    pub embed_dim: usize,
    pub time_dim: usize,
    /// Spread of latents around the template assumed by the prior head.
    pub data_std: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            latent_channels: 4,
            hidden: 8,
            embed_dim: DEFAULT_EMBED_DIM,
            time_dim: 8,
            data_std: 0.25,
        }
    }
}

impl ToyConfig {
    pub fn cond_dim(&self) -> usize {
        self.time_dim + self.embed_dim
    }
}

/// Parameter handles of the conditioned two-block trunk shared by the base
/// predictor and its control-branch copy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct TrunkIds {
    pub cond_w: ParamId,
    pub cond_b: ParamId,
    pub conv1_w: ParamId,
    pub conv1_b: ParamId,
    pub conv2_w: ParamId,
    pub conv2_b: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Trunk {
    pub ids: TrunkIds,
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub hidden: usize,
    pub cond_dim: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct TrunkCache {
    pub x: LatentGrid,
    pub cond_in: Vec<f64>,
    pub a1: LatentGrid,
    pub mid: LatentGrid,
    pub a2: LatentGrid,
}

pub(crate) struct TrunkGrads {
    pub d_mid: LatentGrid,
    pub d_x: Option<LatentGrid>,
    pub d_cond_in: Vec<f64>,
}

impl Trunk {
    pub fn register(params: &mut ParamSet, prefix: &str, cfg: &ToyConfig) -> Self {
        let k = cfg.hidden;
        let conv1 = Conv2d::same3x3(cfg.latent_channels, k);
        let conv2 = Conv2d::same3x3(k, k);
        let ids = TrunkIds {
            cond_w: params.push(&format!("{prefix}cond.w"), &[k, cfg.cond_dim()]),
            cond_b: params.push(&format!("{prefix}cond.b"), &[k]),
            conv1_w: params.push(
                &format!("{prefix}conv1.w"),
                &[k, cfg.latent_channels, 3, 3],
            ),
            conv1_b: params.push(&format!("{prefix}conv1.b"), &[k]),
            conv2_w: params.push(&format!("{prefix}conv2.w"), &[k, k, 3, 3]),
            conv2_b: params.push(&format!("{prefix}conv2.b"), &[k]),
        };
        Self {
            ids,
            conv1,
            conv2,
            hidden: k,
            cond_dim: cfg.cond_dim(),
        }
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut ChaCha8Rng) {
        params.init_normal(self.ids.cond_w, 1.0 / (self.cond_dim as f64).sqrt(), rng);
        params.init_normal(self.ids.conv1_w, 1.0 / (self.conv1.fan_in() as f64).sqrt(), rng);
        params.init_normal(self.ids.conv2_w, 1.0 / (self.conv2.fan_in() as f64).sqrt(), rng);
    }

    pub fn forward(
        &self,
        params: &ParamSet,
        x: &LatentGrid,
        cond_in: Vec<f64>,
        r_mid: Option<&LatentGrid>,
    ) -> Result<TrunkCache> {
        let (cw, cb) = (params.get(self.ids.cond_w), params.get(self.ids.cond_b));
        let g: Vec<f64> = (0..self.hidden)
            .map(|k| {
                cb[k]
                    + cw[k * self.cond_dim..(k + 1) * self.cond_dim]
                        .iter()
                        .zip(&cond_in)
                        .map(|(w, c)| w * c)
                        .sum::<f64>()
            })
            .collect();
        let mut h1 = self
            .conv1
            .forward(x, params.get(self.ids.conv1_w), params.get(self.ids.conv1_b));
        for px in h1.data_mut().chunks_mut(self.hidden) {
            for (v, gk) in px.iter_mut().zip(&g) {
                *v += gk;
            }
        }
        let a1 = tanh(&h1);
        let mid = match r_mid {
            Some(r) => {
                a1.ensure_same_shape(r, "control residual (mid)")?;
                a1.add(r)?
            }
            None => a1.clone(),
        };
        let a2 = tanh(&self.conv2.forward(
            &mid,
            params.get(self.ids.conv2_w),
            params.get(self.ids.conv2_b),
        ));
        Ok(TrunkCache {
            x: x.clone(),
            cond_in,
            a1,
            mid,
            a2,
        })
    }

    /// Backward through the trunk. `d_a1_extra` is gradient reaching `a1`
    /// from outside the trunk (the branch readout); `grads`, when present,
    /// receives parameter gradients in the layout of `params`.
    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &TrunkCache,
        d_a2: &LatentGrid,
        d_a1_extra: Option<&LatentGrid>,
        mut grads: Option<&mut [f64]>,
        want_x: bool,
    ) -> TrunkGrads {
        let d_h2 = tanh_backward(&cache.a2, d_a2);
        let d_mid = self
            .conv2
            .backward(
                &cache.mid,
                params.get(self.ids.conv2_w),
                &d_h2,
                grads
                    .as_deref_mut()
                    .map(|g| params.grad_pair(g, self.ids.conv2_w, self.ids.conv2_b)),
                true,
            )
            .expect("input gradient requested");
        let d_a1 = match d_a1_extra {
            Some(extra) => d_mid.add(extra).expect("trunk shapes agree"),
            None => d_mid.clone(),
        };
        let d_h1 = tanh_backward(&cache.a1, &d_a1);
        let d_x = self.conv1.backward(
            &cache.x,
            params.get(self.ids.conv1_w),
            &d_h1,
            grads
                .as_deref_mut()
                .map(|g| params.grad_pair(g, self.ids.conv1_w, self.ids.conv1_b)),
            want_x,
        );
        let mut d_g = vec![0.0; self.hidden];
        for px in d_h1.data().chunks(self.hidden) {
            for (acc, v) in d_g.iter_mut().zip(px) {
                *acc += v;
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            let (dw, db) = params.grad_pair(g, self.ids.cond_w, self.ids.cond_b);
            for k in 0..self.hidden {
                db[k] += d_g[k];
                for (j, c) in cache.cond_in.iter().enumerate() {
                    dw[k * self.cond_dim + j] += d_g[k] * c;
                }
            }
        }
        let cw = params.get(self.ids.cond_w);
        let d_cond_in = (0..self.cond_dim)
            .map(|j| (0..self.hidden).map(|k| cw[k * self.cond_dim + j] * d_g[k]).sum())
            .collect();
        TrunkGrads {
            d_mid,
            d_x,
            d_cond_in,
        }
    }
}

/// Sinusoidal timestep features with smooth frequencies `pi * 2^k / T`.
pub(crate) fn time_embedding(t: usize, num_train_steps: usize, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let f = std::f64::consts::PI * 2f64.powi(k as i32) / num_train_steps as f64;
        out.push((f * t as f64).sin());
        out.push((f * t as f64).cos());
    }
    out
}

/// Template basis at a pixel: constant, x-ramp, y-ramp, saddle.
#[inline]
fn basis(y: usize, x: usize, h: usize, w: usize) -> [f64; TEMPLATE_BASIS] {
    let xn = 2.0 * (x as f64 + 0.5) / w as f64 - 1.0;
    let yn = 2.0 * (y as f64 + 0.5) / h as f64 - 1.0;
    [1.0, xn, yn, xn * yn]
}

#[derive(Clone, Copy, Debug)]
struct HeadIds {
    out_w: ParamId,
    out_b: ParamId,
    tmpl_w: ParamId,
    tmpl_b: ParamId,
}

/// Cached activations of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    trunk: TrunkCache,
    up: LatentGrid,
    template: LatentGrid,
    pooled: Vec<f64>,
    prompt_len: usize,
    alpha_bar: f64,
}

/// Prior-head coefficients `(scale on z_t, scale on m)` at `alpha_bar`.
fn prior_coefficients(alpha_bar: f64, data_std: f64) -> (f64, f64) {
    let (a, s) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let den = alpha_bar * data_std * data_std + 1.0 - alpha_bar;
    (s / den, s * a / den)
}

impl ForwardCache {
    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }
}

/// Gradients of a scalar loss with respect to everything the base predictor
/// touches.
#[derive(Clone, Debug)]
pub struct DenoiserGrads {
    /// Parameter gradients, present only when requested.
    pub params: Option<Vec<f64>>,
    /// Gradient with respect to the pooled prompt embedding.
    pub d_pooled: Vec<f64>,
    /// Gradients with respect to the two control residuals.
    pub d_residuals: ControlResiduals,
}

impl DenoiserGrads {
    /// Gradient with respect to one prompt token (pooling is a plain mean).
    pub fn d_token(&self, prompt_len: usize) -> Vec<f64> {
        self.d_pooled.iter().map(|g| g / prompt_len as f64).collect()
    }
}

/// The toy base predictor, with the noise schedule its prior head reads.
#[derive(Clone, Debug)]
pub struct ToyDenoiser {
    config: ToyConfig,
    seed: u64,
    schedule: NoiseSchedule,
    params: ParamSet,
    trunk: Trunk,
    head: HeadIds,
    out_conv: Conv2d,
}

/// Scale of the template weights; large enough that one prompt token moves
/// the template visibly.
const TEMPLATE_GAIN: f64 = 1.5;
const OUT_GAIN: f64 = 0.1;

impl ToyDenoiser {
    pub fn new(config: ToyConfig, schedule: NoiseSchedule, seed: u64) -> Self {
        let mut params = ParamSet::new();
        let trunk = Trunk::register(&mut params, "", &config);
        let (c, k, d) = (config.latent_channels, config.hidden, config.embed_dim);
        let head = HeadIds {
            out_w: params.push("out.w", &[c, k, 1, 1]),
            out_b: params.push("out.b", &[c]),
            tmpl_w: params.push("template.w", &[TEMPLATE_BASIS, c, d]),
            tmpl_b: params.push("template.b", &[TEMPLATE_BASIS, c]),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        trunk.init(&mut params, &mut rng);
        params.init_normal(head.out_w, OUT_GAIN / (k as f64).sqrt(), &mut rng);
        params.init_normal(head.tmpl_w, TEMPLATE_GAIN / (d as f64).sqrt(), &mut rng);
        params.init_normal(head.tmpl_b, 0.3, &mut rng);
        Self {
            config,
            seed,
            schedule,
            params,
            trunk,
            head,
            out_conv: Conv2d::pointwise(k, c),
        }
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable access for checkpoint loading and gradient probes.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub(crate) fn cond_input(&self, t: usize, pooled: &[f64]) -> Vec<f64> {
        let mut v = time_embedding(t, self.schedule.num_train_steps(), self.config.time_dim);
        v.extend_from_slice(pooled);
        v
    }

    /// Latent mean the prior head assumes for `prompt`.
    pub fn prior_mean(&self, prompt: &PromptEmbedding, height: usize, width: usize) -> Result<LatentGrid> {
        if prompt.dim() != self.config.embed_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.embed_dim,
                actual: prompt.dim(),
            });
        }
        Ok(self.template(&prompt.pooled(), height, width))
    }

    fn template(&self, pooled: &[f64], h: usize, w: usize) -> LatentGrid {
        let (c, d) = (self.config.latent_channels, self.config.embed_dim);
        let (tw, tb) = (self.params.get(self.head.tmpl_w), self.params.get(self.head.tmpl_b));
        // coefficient[q][c] = W_q,c · p + b_q,c
        let coef: Vec<f64> = (0..TEMPLATE_BASIS * c)
            .map(|qc| {
                tb[qc]
                    + tw[qc * d..(qc + 1) * d]
                        .iter()
                        .zip(pooled)
                        .map(|(a, b)| a * b)
                        .sum::<f64>()
            })
            .collect();
        let mut m = LatentGrid::zeros(h, w, c);
        for y in 0..h {
            for x in 0..w {
                let phi = basis(y, x, h, w);
                for ch in 0..c {
                    let pre: f64 = (0..TEMPLATE_BASIS).map(|q| phi[q] * coef[q * c + ch]).sum();
                    m.set(y, x, ch, pre.tanh());
                }
            }
        }
        m
    }

    fn check_inputs(
        &self,
        z_t: &LatentGrid,
        prompt: &PromptEmbedding,
        control: Option<&ControlResiduals>,
    ) -> Result<()> {
        if z_t.channels() != self.config.latent_channels {
            return Err(shape_err(
                "ToyDenoiser latent channels",
                self.config.latent_channels,
                z_t.channels(),
            ));
        }
        if prompt.dim() != self.config.embed_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.embed_dim,
                actual: prompt.dim(),
            });
        }
        if prompt.is_empty() {
            return Err(Error::EmptyInput("prompt embedding has no tokens".into()));
        }
        if let Some(r) = control {
            let want = (z_t.height(), z_t.width(), self.config.hidden);
            if r.mid.shape() != want || r.up.shape() != want {
                return Err(shape_err("control residuals", want, r.mid.shape()));
            }
        }
        Ok(())
    }

    /// Forward pass keeping the activations needed by [`Self::backward`].
    pub fn forward_cached(
        &self,
        z_t: &LatentGrid,
        prompt: &PromptEmbedding,
        t: usize,
        control: Option<&ControlResiduals>,
    ) -> Result<(LatentGrid, ForwardCache)> {
        self.check_inputs(z_t, prompt, control)?;
        let alpha_bar = self.schedule.alpha_bar(t)?;
        let pooled = prompt.pooled();
        let trunk = self.trunk.forward(
            &self.params,
            z_t,
            self.cond_input(t, &pooled),
            control.map(|r| &r.mid),
        )?;
        let up = match control {
            Some(r) => trunk.a2.add(&r.up)?,
            None => trunk.a2.clone(),
        };
        let o = self
            .out_conv
            .forward(&up, self.params.get(self.head.out_w), self.params.get(self.head.out_b));
        let (h, w) = (z_t.height(), z_t.width());
        let template = self.template(&pooled, h, w);
        let (cz, cm) = prior_coefficients(alpha_bar, self.config.data_std);
        let mut eps = o;
        for ((e, z), m) in eps
            .data_mut()
            .iter_mut()
            .zip(z_t.data())
            .zip(template.data())
        {
            *e += cz * z - cm * m;
        }
        Ok((
            eps,
            ForwardCache {
                trunk,
                up,
                template,
                pooled,
                prompt_len: prompt.len(),
                alpha_bar,
            },
        ))
    }

    /// Reverse-mode pass for `d_eps = dL/d(eps_hat)`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_eps: &LatentGrid,
        want_param_grads: bool,
    ) -> DenoiserGrads {
        let mut grads = want_param_grads.then(|| vec![0.0; self.params.len()]);
        let d_up = self
            .out_conv
            .backward(
                &cache.up,
                self.params.get(self.head.out_w),
                d_eps,
                grads
                    .as_deref_mut()
                    .map(|g| self.params.grad_pair(g, self.head.out_w, self.head.out_b)),
                true,
            )
            .expect("input gradient requested");
        let tg = self.trunk.backward(
            &self.params,
            &cache.trunk,
            &d_up,
            None,
            grads.as_deref_mut(),
            false,
        );
        let mut d_pooled = tg.d_cond_in[self.config.time_dim..].to_vec();

        // Template head: eps += -cm * m, m = tanh(pre).
        let (c, d) = (self.config.latent_channels, self.config.embed_dim);
        let (h, w) = (d_eps.height(), d_eps.width());
        let (_, sa) = prior_coefficients(cache.alpha_bar, self.config.data_std);
        let mut d_coef = vec![0.0; TEMPLATE_BASIS * c];
        for y in 0..h {
            for x in 0..w {
                let phi = basis(y, x, h, w);
                for ch in 0..c {
                    let m = cache.template.get(y, x, ch);
                    let d_pre = -sa * d_eps.get(y, x, ch) * (1.0 - m * m);
                    for q in 0..TEMPLATE_BASIS {
                        d_coef[q * c + ch] += phi[q] * d_pre;
                    }
                }
            }
        }
        let tw = self.params.get(self.head.tmpl_w);
        for (qc, dc) in d_coef.iter().enumerate() {
            for (j, dp) in d_pooled.iter_mut().enumerate() {
                *dp += tw[qc * d + j] * dc;
            }
        }
        if let Some(g) = grads.as_deref_mut() {
            let (dw, db) = self.params.grad_pair(g, self.head.tmpl_w, self.head.tmpl_b);
            for (qc, dc) in d_coef.iter().enumerate() {
                db[qc] += dc;
                for (j, p) in cache.pooled.iter().enumerate() {
                    dw[qc * d + j] += dc * p;
                }
            }
        }
        DenoiserGrads {
            params: grads,
            d_pooled,
            d_residuals: ControlResiduals {
                mid: tg.d_mid,
                up: d_up,
            },
        }
    }
}

impl NoisePredictor for ToyDenoiser {
    fn predict(
        &self,
        z_t: &LatentGrid,
        prompt: &PromptEmbedding,
        t: usize,
        control: Option<&ControlResiduals>,
    ) -> Result<LatentGrid> {
        self.forward_cached(z_t, prompt, t, control).map(|(eps, _)| eps)
    }

    fn latent_channels(&self) -> usize {
        self.config.latent_channels
    }

    fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn parameter_count(&self) -> usize {
        self.params.len()
    }

    fn checksum(&self) -> String {
        self.params.checksum()
    }

    fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }
}

/// Mean squared error and its gradient with respect to the prediction.
pub fn mse_loss(target: &LatentGrid, prediction: &LatentGrid) -> Result<(f64, LatentGrid)> {
    target.ensure_same_shape(prediction, "mse_loss")?;
    let n = target.len() as f64;
    let diff = prediction.sub(target)?;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.scale(2.0 / n)))
}

/// Every toy component, derived from one seed.
#[derive(Clone, Debug)]
pub struct ToyBackend {
    pub predictor: ToyDenoiser,
    pub codec: ToyCodec,
    pub text: ToyTextEncoder,
}

/// Builds the deterministic toy backend.
pub fn toy_backend(seed: u64, latent_channels: usize) -> Result<ToyBackend> {
    toy_backend_with(seed, latent_channels, NoiseSchedule::default())
}

pub fn toy_backend_with(
    seed: u64,
    latent_channels: usize,
    schedule: NoiseSchedule,
) -> Result<ToyBackend> {
    let config = ToyConfig {
        latent_channels,
        ..ToyConfig::default()
    };
    Ok(ToyBackend {
        predictor: ToyDenoiser::new(config, schedule, seed),
        codec: ToyCodec::new(DEFAULT_RESOLUTION_FACTOR, latent_channels)?,
        text: ToyTextEncoder::new(config.embed_dim, seed),
    })
}
