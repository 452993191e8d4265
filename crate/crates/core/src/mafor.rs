//! Trainable control branch conditioned on the bare face.
//!
//! The branch is a copy of the base predictor's trunk. Its input is the noisy
//! latent plus a hint computed from the condition image by a small strided
//! convolution stack; its two activations are read out through zero-initialized
//! 1×1 convolutions into the residual sites of the frozen base predictor.
//!
//! ```text
//! hint      = enc(c)                 stride-2 convs, tanh between them
//! a1', a2'  = trunk'(z_t + hint, t, p)
//! r_mid     = readout_mid(a1')       zero init
//! r_up      = readout_up(a2')        zero init
//! eps       = base(z_t, p, t, r_mid, r_up)
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataprep::PseudoPair;
use crate::diffusion::container::{load_params, push_params, Container};
use crate::diffusion::nn::{tanh, tanh_backward, Conv2d};
use crate::diffusion::params::{ParamId, ParamSet};
use crate::diffusion::sampling::q_sample;
use crate::diffusion::toy::{ControlResiduals, ForwardCache, Trunk, TrunkCache};
use crate::diffusion::{mse_loss, LatentCodec, NoisePredictor, PromptEmbedding, TextEncoder, ToyDenoiser};
use crate::error::{shape_err, Error, Result};
use crate::grid::{ImageGrid, LatentGrid, ValueRange};
use crate::optim::{Optimizer, OptimizerKind, TrainLog};

pub const BRANCH_KIND: &str = "control_branch";
pub const BRANCH_SCHEMA_VERSION: u32 = 1;
const HINT_WIDTH: usize = 8;

/// Condition image as a `(h, w, 3)` tensor in `[-1, 1]`.
pub fn condition_tensor(image: &ImageGrid) -> LatentGrid {
    let img = image.to_range(ValueRange::Signed);
    let (h, w) = img.dims();
    LatentGrid::from_vec(h, w, 3, img.data().to_vec()).expect("image data is h*w*3")
}

#[derive(Clone, Debug)]
struct HintLayer {
    conv: Conv2d,
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
pub struct HintCache {
    // Input to each layer; the last entry is the hint itself.
    inputs: Vec<LatentGrid>,
}

impl HintCache {
    pub fn hint(&self) -> &LatentGrid {
        self.inputs.last().expect("at least the input")
    }
}

/// Activations kept for [`ControlBranch::backward`].
#[derive(Clone, Debug)]
pub struct BranchCache {
    hint: Option<HintCache>,
    trunk: TrunkCache,
}

#[derive(Clone, Debug)]
pub struct ControlBranch {
    params: ParamSet,
    trunk: Trunk,
    readout: Conv2d,
    mid_w: ParamId,
    mid_b: ParamId,
    up_w: ParamId,
    up_b: ParamId,
    hint_layers: Vec<HintLayer>,
    resolution_factor: usize,
    base_checksum: String,
    seed: u64,
}

impl ControlBranch {
    /// Builds a branch for `base`: trunk weights are copied from the base,
    /// readouts start at zero, the hint stack is randomly initialized.
    pub fn new(base: &ToyDenoiser, resolution_factor: usize, seed: u64) -> Result<Self> {
        if resolution_factor < 2 || !resolution_factor.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "resolution factor must be a power of two >= 2, got {resolution_factor}"
            )));
        }
        let cfg = *base.config();
        let k = cfg.hidden;
        let mut params = ParamSet::new();
        let trunk = Trunk::register(&mut params, "branch.", &cfg);
        let mid_w = params.push("readout.mid.w", &[k, k, 1, 1]);
        let mid_b = params.push("readout.mid.b", &[k]);
        let up_w = params.push("readout.up.w", &[k, k, 1, 1]);
        let up_b = params.push("readout.up.b", &[k]);
        let stages = resolution_factor.trailing_zeros() as usize;
        let mut hint_layers = Vec::with_capacity(stages);
        for s in 0..stages {
            let cin = if s == 0 { 3 } else { HINT_WIDTH };
            let cout = if s + 1 == stages { cfg.latent_channels } else { HINT_WIDTH };
            let conv = Conv2d::down3x3(cin, cout);
            let w = params.push(&format!("hint.{s}.w"), &[cout, cin, 3, 3]);
            let b = params.push(&format!("hint.{s}.b"), &[cout]);
            hint_layers.push(HintLayer { conv, w, b });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &hint_layers {
            params.init_normal(layer.w, 1.0 / (layer.conv.fan_in() as f64).sqrt(), &mut rng);
        }
        for e in base.params().entries() {
            if let Some(id) = params.find(&format!("branch.{}", e.name)) {
                let src = &base.params().values()[e.offset..e.offset + e.len];
                params.get_mut(id).copy_from_slice(src);
            }
        }
        Ok(Self {
            params,
            trunk,
            readout: Conv2d::pointwise(k, k),
            mid_w,
            mid_b,
            up_w,
            up_b,
            hint_layers,
            resolution_factor,
            base_checksum: base.checksum(),
            seed,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn checksum(&self) -> String {
        self.params.checksum()
    }

    pub fn base_checksum(&self) -> &str {
        &self.base_checksum
    }

    pub fn resolution_factor(&self) -> usize {
        self.resolution_factor
    }

    /// Runs the condition encoder on a `(h, w, 3)` image tensor.
    pub fn encode_condition(&self, condition: &LatentGrid) -> Result<HintCache> {
        if condition.channels() != 3 {
            return Err(shape_err("condition channels", 3, condition.channels()));
        }
        let f = self.resolution_factor;
        if condition.height() % f != 0 || condition.width() % f != 0 {
            return Err(Error::InvalidArgument(format!(
                "condition {}x{} is not divisible by factor {f}",
                condition.height(),
                condition.width()
            )));
        }
        let mut inputs = vec![condition.clone()];
        let last = self.hint_layers.len() - 1;
        for (i, layer) in self.hint_layers.iter().enumerate() {
            let pre = layer.conv.forward(
                inputs.last().unwrap(),
                self.params.get(layer.w),
                self.params.get(layer.b),
            );
            inputs.push(if i == last { pre } else { tanh(&pre) });
        }
        Ok(HintCache { inputs })
    }

    /// Convenience: hint latent for a condition image.
    pub fn hint(&self, condition: &ImageGrid) -> Result<LatentGrid> {
        Ok(self.encode_condition(&condition_tensor(condition))?.hint().clone())
    }

    fn residuals_with(
        &self,
        base: &ToyDenoiser,
        z_t: &LatentGrid,
        prompt: &PromptEmbedding,
        t: usize,
        hint: &LatentGrid,
    ) -> Result<(ControlResiduals, TrunkCache)> {
        z_t.ensure_same_shape(hint, "control hint")?;
        let x = z_t.add(hint)?;
        let cache = self
            .trunk
            .forward(&self.params, &x, base.cond_input(t, &prompt.pooled()), None)?;
        let mid = self
            .readout
            .forward(&cache.a1, self.params.get(self.mid_w), self.params.get(self.mid_b));
        let up = self
            .readout
            .forward(&cache.a2, self.params.get(self.up_w), self.params.get(self.up_b));
        Ok((ControlResiduals { mid, up }, cache))
    }

    /// Residuals for a precomputed hint.
    pub fn residuals(
        &self,
        base: &ToyDenoiser,
        z_t: &LatentGrid,
        prompt: &PromptEmbedding,
        t: usize,
        hint: &LatentGrid,
    ) -> Result<ControlResiduals> {
        self.residuals_with(base, z_t, prompt, t, hint).map(|(r, _)| r)
    }

    /// Full forward from the condition tensor, keeping caches for training.
    pub fn forward(
        &self,
        base: &ToyDenoiser,
        z_t: &LatentGrid,
        prompt: &PromptEmbedding,
        t: usize,
        condition: &LatentGrid,
    ) -> Result<(ControlResiduals, BranchCache)> {
        let hint = self.encode_condition(condition)?;
        let (r, trunk) = self.residuals_with(base, z_t, prompt, t, hint.hint())?;
        Ok((
            r,
            BranchCache {
                hint: Some(hint),
                trunk,
            },
        ))
    }

    /// Gradient of the loss with respect to every branch parameter, given
    /// the base forward cache of the controlled prediction and `d_eps`.
    pub fn backward(
        &self,
        base: &ToyDenoiser,
        base_cache: &ForwardCache,
        cache: &BranchCache,
        d_eps: &LatentGrid,
    ) -> Vec<f64> {
        let d_r = base.backward(base_cache, d_eps, false).d_residuals;
        let mut grads = vec![0.0; self.params.len()];
        let p = &self.params;
        let d_a1 = self
            .readout
            .backward(
                &cache.trunk.a1,
                p.get(self.mid_w),
                &d_r.mid,
                Some(p.grad_pair(&mut grads, self.mid_w, self.mid_b)),
                true,
            )
            .expect("input gradient requested");
        let d_a2 = self
            .readout
            .backward(
                &cache.trunk.a2,
                p.get(self.up_w),
                &d_r.up,
                Some(p.grad_pair(&mut grads, self.up_w, self.up_b)),
                true,
            )
            .expect("input gradient requested");
        let want_hint = cache.hint.is_some();
        let tg = self
            .trunk
            .backward(p, &cache.trunk, &d_a2, Some(&d_a1), Some(&mut grads), want_hint);
        if let (Some(hint), Some(mut d)) = (&cache.hint, tg.d_x) {
            let last = self.hint_layers.len() - 1;
            for (i, layer) in self.hint_layers.iter().enumerate().rev() {
                let d_pre = if i == last {
                    d
                } else {
                    tanh_backward(&hint.inputs[i + 1], &d)
                };
                let next = layer.conv.backward(
                    &hint.inputs[i],
                    p.get(layer.w),
                    &d_pre,
                    Some(p.grad_pair(&mut grads, layer.w, layer.b)),
                    i > 0,
                );
                match next {
                    Some(n) => d = n,
                    None => break,
                }
            }
        }
        grads
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(
            BRANCH_KIND,
            serde_json::json!({
                "schema_version": BRANCH_SCHEMA_VERSION,
                "base_checksum": self.base_checksum,
                "resolution_factor": self.resolution_factor,
                "seed": self.seed,
            }),
        );
        push_params(&mut c, "", &self.params);
        c
    }

    /// Restores a branch saved with [`Self::to_container`]; the base
    /// predictor must be the one it was trained against.
    pub fn from_container(c: &Container, base: &ToyDenoiser) -> Result<Self> {
        c.expect_kind(BRANCH_KIND)?;
        let schema: u32 = c.meta_field("schema_version")?;
        if schema != BRANCH_SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                found: schema,
                supported: BRANCH_SCHEMA_VERSION,
            });
        }
        let expected: String = c.meta_field("base_checksum")?;
        if expected != base.checksum() {
            return Err(Error::InvalidArgument(
                "control branch was trained against a different base predictor".into(),
            ));
        }
        let mut branch = Self::new(base, c.meta_field("resolution_factor")?, c.meta_field("seed")?)?;
        load_params(c, "", &mut branch.params)?;
        Ok(branch)
    }
}

/// Base prediction, with control residuals when a branch and hint are given.
pub fn controlled_eps(
    base: &ToyDenoiser,
    branch: Option<(&ControlBranch, &LatentGrid)>,
    z_t: &LatentGrid,
    prompt: &PromptEmbedding,
    t: usize,
) -> Result<LatentGrid> {
    match branch {
        Some((b, hint)) => {
            let r = b.residuals(base, z_t, prompt, t, hint)?;
            base.predict(z_t, prompt, t, Some(&r))
        }
        None => base.predict(z_t, prompt, t, None),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaForTrainConfig {
    pub learning_rate: f64,
    pub grad_accum: usize,
    /// Number of optimizer updates.
    pub total_steps: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for MaForTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            grad_accum: 4,
            total_steps: 15_000,
            batch_size: 1,
            optimizer: OptimizerKind::Adam,
            seed: 0,
        }
    }
}

impl MaForTrainConfig {
    /// Short desk-scale run.
    pub fn toy() -> Self {
        Self {
            learning_rate: 1e-2,
            total_steps: 300,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.grad_accum == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "grad_accum and batch_size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One training example: the makeup latent and the bare-face condition.
#[derive(Clone, Debug)]
pub struct MaForSample {
    pub z0: LatentGrid,
    pub condition: LatentGrid,
}

pub fn prepare_samples(pairs: &[PseudoPair], codec: &dyn LatentCodec) -> Result<Vec<MaForSample>> {
    pairs
        .iter()
        .map(|p| {
            Ok(MaForSample {
                z0: codec.encode(&p.makeup)?,
                condition: condition_tensor(&p.naked),
            })
        })
        .collect()
}

/// Denoising loss of one sample at a given timestep and noise draw, with
/// the empty prompt. Returns the loss and the branch gradient.
pub fn sample_loss_and_grad(
    base: &ToyDenoiser,
    branch: &ControlBranch,
    empty_prompt: &PromptEmbedding,
    sample: &MaForSample,
    t: usize,
    noise: &LatentGrid,
) -> Result<(f64, Vec<f64>)> {
    let ab = base.schedule().alpha_bar(t)?;
    let z_t = q_sample(&sample.z0, noise, ab)?;
    let (r, bcache) = branch.forward(base, &z_t, empty_prompt, t, &sample.condition)?;
    let (eps_hat, cache) = base.forward_cached(&z_t, empty_prompt, t, Some(&r))?;
    let (loss, d_eps) = mse_loss(noise, &eps_hat)?;
    Ok((loss, branch.backward(base, &cache, &bcache, &d_eps)))
}

/// Trains `branch` on pseudo pairs with the base predictor and text encoder
/// frozen. `on_step` receives the update index and its mean loss.
pub fn train_mafor(
    base: &ToyDenoiser,
    text: &dyn TextEncoder,
    codec: &dyn LatentCodec,
    branch: &mut ControlBranch,
    pairs: &[PseudoPair],
    cfg: &MaForTrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<TrainLog> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("no training pairs".into()));
    }
    if branch.base_checksum() != base.checksum() {
        return Err(Error::InvalidArgument(
            "control branch belongs to a different base predictor".into(),
        ));
    }
    let samples = prepare_samples(pairs, codec)?;
    let empty = text.encode("")?;
    let num_t = base.schedule().num_train_steps();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, branch.parameter_count());
    let per_update = cfg.grad_accum * cfg.batch_size;
    let mut log = TrainLog::default();
    for step in 0..cfg.total_steps {
        let mut acc = vec![0.0; branch.parameter_count()];
        let mut loss_sum = 0.0;
        for _ in 0..per_update {
            let s = &samples[rng.random_range(0..samples.len())];
            let t = rng.random_range(0..num_t);
            let (h, w, c) = s.z0.shape();
            let noise = LatentGrid::randn(h, w, c, &mut rng);
            let (loss, g) = sample_loss_and_grad(base, branch, &empty, s, t, &noise)?;
            loss_sum += loss;
            for (a, v) in acc.iter_mut().zip(&g) {
                *a += v;
            }
        }
        let scale = 1.0 / per_update as f64;
        acc.iter_mut().for_each(|v| *v *= scale);
        let mean = loss_sum * scale;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("control-branch loss at update {step}")));
        }
        opt.step(branch.params.values_mut(), &acc);
        log.losses.push(mean);
        on_step(step, mean);
    }
    Ok(log)
}
