//! Masked inpainting sampler.
//!
//! Each step combines an unconditional (empty prompt) and a conditional
//! (style prompt) noise prediction with classifier-free guidance, both with
//! the control branch attached; takes one reverse step; then overwrites the
//! non-facial region with the bare-face latent noised to the new timestep.
//! The decoded image is finally blended back onto the input with the face
//! mask, so every pixel outside the mask is the input pixel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csl::{embed_prompt, PromptTemplate, StyleToken};
use crate::dataprep::{blend_naked, blur_mask, BlurConfig, FaceParser};
use crate::diffusion::sampling::{ddim_step, ddpm_step, inference_timesteps, q_sample};
use crate::diffusion::{
    LatentCodec, NoisePredictor, NoiseSchedule, PromptEmbedding, SamplerKind, TextEncoder, ToyDenoiser,
};
use crate::error::{shape_err, Error, Result};
use crate::grid::{ImageGrid, LatentGrid, Mask, MaskKind};
use crate::mafor::{controlled_eps, ControlBranch};

pub const MAX_GUIDANCE: f64 = 20.0;
pub const MIN_STEPS: usize = 10;
pub const MAX_STEPS: usize = 100;

/// Word used in place of the style token when style is switched off.
pub const PLAIN_STYLE_WORD: &str = "makeup";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub guidance_scale: f64,
    pub num_inference_steps: usize,
    pub seed: u64,
    pub use_final_blend: bool,
    pub use_mask_merge: bool,
    pub use_control: bool,
    pub use_style: bool,
    #[serde(default)]
    pub sampler: SamplerKind,
    /// Blur applied to the parsed face mask; defaults to the resolution-scaled
    /// pair-building blur.
    #[serde(default)]
    pub blur: Option<BlurConfig>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            guidance_scale: 7.5,
            num_inference_steps: 50,
            seed: 0,
            use_final_blend: true,
            use_mask_merge: true,
            use_control: true,
            use_style: true,
            sampler: SamplerKind::Ddim,
            blur: None,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.guidance_scale >= 0.0 && self.guidance_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "guidance scale must be finite and >= 0, got {}",
                self.guidance_scale
            )));
        }
        if self.num_inference_steps == 0 {
            return Err(Error::InvalidArgument("inference steps must be >= 1".into()));
        }
        Ok(())
    }

    /// Stricter range check used by user-facing entry points.
    pub fn validate_exposed_range(&self) -> Result<()> {
        self.validate()?;
        if self.guidance_scale > MAX_GUIDANCE {
            return Err(Error::InvalidArgument(format!(
                "guidance scale must be in [0, {MAX_GUIDANCE}], got {}",
                self.guidance_scale
            )));
        }
        if !(MIN_STEPS..=MAX_STEPS).contains(&self.num_inference_steps) {
            return Err(Error::InvalidArgument(format!(
                "inference steps must be in [{MIN_STEPS}, {MAX_STEPS}], got {}",
                self.num_inference_steps
            )));
        }
        Ok(())
    }
}

/// Area-average pooling of `mask` by `factor` in both directions.
pub fn downsample_mask(mask: &Mask, factor: usize) -> Result<Mask> {
    let (h, w) = mask.dims();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "mask {h}x{w} is not divisible by factor {factor}"
        )));
    }
    let area = (factor * factor) as f64;
    Mask::from_fn(h / factor, w / factor, MaskKind::LatentDownsampled, |y, x| {
        let mut acc = 0.0;
        for yy in y * factor..(y + 1) * factor {
            for xx in x * factor..(x + 1) * factor {
                acc += mask.get(yy, xx);
            }
        }
        (acc / area).clamp(0.0, 1.0)
    })
}

/// `eps_uncond + g * (eps_cond - eps_uncond)`, computed as
/// `(1 - g) * eps_uncond + g * eps_cond`. Exact at `g = 0` and `g = 1`.
pub fn cfg_combine(eps_uncond: &LatentGrid, eps_cond: &LatentGrid, g: f64) -> Result<LatentGrid> {
    eps_uncond.zip_with(eps_cond, "cfg_combine", |u, c| (1.0 - g) * u + g * c)
}

/// The condition latent diffused to `prev` with fresh noise; `None` is the
/// clean end of the chain and returns `c` itself.
pub fn noised_condition(
    c: &LatentGrid,
    prev: Option<usize>,
    schedule: &NoiseSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<LatentGrid> {
    let Some(t) = prev else {
        return Ok(c.clone());
    };
    let noise = LatentGrid::randn(c.height(), c.width(), c.channels(), rng);
    q_sample(c, &noise, schedule.alpha_bar(t)?)
}

/// `denoised * m + c_noised * (1 - m)`, with the mask broadcast over channels.
pub fn masked_merge(denoised: &LatentGrid, c_noised: &LatentGrid, latent_mask: &Mask) -> Result<LatentGrid> {
    denoised.ensure_same_shape(c_noised, "masked_merge")?;
    if latent_mask.dims() != (denoised.height(), denoised.width()) {
        return Err(shape_err(
            "masked_merge mask",
            (denoised.height(), denoised.width()),
            latent_mask.dims(),
        ));
    }
    let ch = denoised.channels();
    let mut out = denoised.clone();
    for ((o, c), i) in out.data_mut().iter_mut().zip(c_noised.data()).zip(0..) {
        let m = latent_mask.data()[i / ch];
        *o = *o * m + c * (1.0 - m);
    }
    Ok(out)
}

/// Components the sampler needs; all borrowed read-only.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub base: &'a ToyDenoiser,
    pub branch: Option<&'a ControlBranch>,
    pub text: &'a dyn TextEncoder,
    pub codec: &'a dyn LatentCodec,
    pub parser: &'a dyn FaceParser,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub t: usize,
    pub prev: Option<usize>,
    pub eps_norm: f64,
    pub z_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub config: GenerationConfig,
    pub timesteps: Vec<usize>,
    pub steps: Vec<StepDiagnostics>,
    pub mask_mean: f64,
    pub latent_mask_mean: f64,
    pub latent_mask_zero_cells: usize,
}

/// State after one step, kept only when tracing.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub t: usize,
    pub prev: Option<usize>,
    pub z_prev: LatentGrid,
    pub c_prev: Option<LatentGrid>,
}

#[derive(Clone, Debug)]
pub struct Generation {
    pub final_image: ImageGrid,
    pub generated: ImageGrid,
    pub mask: Mask,
    pub latent_mask: Mask,
    pub diagnostics: Diagnostics,
    pub trace: Option<Vec<StepTrace>>,
}

/// Step-by-step sampler over one generation.
pub struct Sampler<'a> {
    pipe: Pipeline<'a>,
    cfg: GenerationConfig,
    timesteps: Vec<usize>,
    index: usize,
    z: LatentGrid,
    condition_latent: LatentGrid,
    hint: Option<LatentGrid>,
    latent_mask: Mask,
    uncond: PromptEmbedding,
    cond: PromptEmbedding,
    rng: ChaCha8Rng,
    steps: Vec<StepDiagnostics>,
    trace: Option<Vec<StepTrace>>,
}

impl<'a> Sampler<'a> {
    pub fn new(
        pipe: Pipeline<'a>,
        naked: &ImageGrid,
        mask: &Mask,
        token: Option<&StyleToken>,
        template: &PromptTemplate,
        cfg: &GenerationConfig,
        keep_trace: bool,
    ) -> Result<Self> {
        cfg.validate()?;
        let schedule = pipe.base.schedule();
        let timesteps = inference_timesteps(schedule.num_train_steps(), cfg.num_inference_steps)?;
        if pipe.text.dim() != pipe.base.embed_dim() {
            return Err(Error::DimensionMismatch {
                expected: pipe.base.embed_dim(),
                actual: pipe.text.dim(),
            });
        }
        let condition_latent = pipe.codec.encode(naked)?;
        let latent_mask = downsample_mask(mask, pipe.codec.resolution_factor())?;
        let hint = if cfg.use_control {
            let branch = pipe.branch.ok_or_else(|| {
                Error::InvalidArgument("control is enabled but no control branch was given".into())
            })?;
            if branch.base_checksum() != pipe.base.checksum() {
                return Err(Error::InvalidArgument(
                    "control branch belongs to a different base predictor".into(),
                ));
            }
            Some(branch.hint(naked)?)
        } else {
            None
        };
        let cond = match (cfg.use_style, token) {
            (true, Some(tok)) => {
                tok.validate(pipe.text.dim())?;
                embed_prompt(pipe.text, template, tok)?
            }
            (true, None) => {
                return Err(Error::InvalidArgument(
                    "style is enabled but no style token was given".into(),
                ))
            }
            (false, _) => pipe.text.encode(&template.substitute(PLAIN_STYLE_WORD))?,
        };
        let uncond = pipe.text.encode("")?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (h, w, c) = condition_latent.shape();
        let z = LatentGrid::randn(h, w, c, &mut rng);
        Ok(Self {
            pipe,
            cfg: cfg.clone(),
            timesteps,
            index: 0,
            z,
            condition_latent,
            hint,
            latent_mask,
            uncond,
            cond,
            rng,
            steps: Vec::new(),
            trace: keep_trace.then(Vec::new),
        })
    }

    pub fn latent(&self) -> &LatentGrid {
        &self.z
    }

    pub fn condition_latent(&self) -> &LatentGrid {
        &self.condition_latent
    }

    pub fn latent_mask(&self) -> &Mask {
        &self.latent_mask
    }

    pub fn timesteps(&self) -> &[usize] {
        &self.timesteps
    }

    pub fn is_done(&self) -> bool {
        self.index >= self.timesteps.len()
    }

    fn eps(&self, prompt: &PromptEmbedding, t: usize) -> Result<LatentGrid> {
        let branch = match (self.pipe.branch, &self.hint) {
            (Some(b), Some(h)) => Some((b, h)),
            _ => None,
        };
        controlled_eps(self.pipe.base, branch, &self.z, prompt, t)
    }

    /// Advances one timestep; returns `false` once the chain is finished.
    pub fn step(&mut self) -> Result<bool> {
        if self.is_done() {
            return Ok(false);
        }
        let t = self.timesteps[self.index];
        let prev = self.timesteps.get(self.index + 1).copied();
        let schedule = self.pipe.base.schedule();
        let eps_u = self.eps(&self.uncond, t)?;
        let eps_c = self.eps(&self.cond, t)?;
        let eps = cfg_combine(&eps_u, &eps_c, self.cfg.guidance_scale)?;
        let denoised = match self.cfg.sampler {
            SamplerKind::Ddim => ddim_step(&self.z, &eps, t, prev, schedule)?,
            SamplerKind::Ddpm => ddpm_step(&self.z, &eps, t, prev, schedule, &mut self.rng)?,
        };
        let (z_next, c_prev) = if self.cfg.use_mask_merge {
            let c_prev = noised_condition(&self.condition_latent, prev, schedule, &mut self.rng)?;
            (masked_merge(&denoised, &c_prev, &self.latent_mask)?, Some(c_prev))
        } else {
            (denoised, None)
        };
        z_next.ensure_finite("sampler latent")?;
        self.steps.push(StepDiagnostics {
            t,
            prev,
            eps_norm: eps.l2_norm(),
            z_norm: z_next.l2_norm(),
        });
        if let Some(trace) = self.trace.as_mut() {
            trace.push(StepTrace {
                t,
                prev,
                z_prev: z_next.clone(),
                c_prev,
            });
        }
        self.z = z_next;
        self.index += 1;
        Ok(true)
    }

    /// Runs the remaining steps, decodes and applies the final blend.
    pub fn finish(mut self, naked: &ImageGrid, mask: Mask) -> Result<Generation> {
        while self.step()? {}
        let generated = self.pipe.codec.decode(&self.z)?;
        generated.ensure_same_dims(naked.dims(), "decoded image")?;
        let final_image = if self.cfg.use_final_blend {
            blend_naked(&generated, naked, &mask)?
        } else {
            generated.clone()
        };
        let diagnostics = Diagnostics {
            config: self.cfg.clone(),
            timesteps: self.timesteps.clone(),
            steps: self.steps,
            mask_mean: mask.mean(),
            latent_mask_mean: self.latent_mask.mean(),
            latent_mask_zero_cells: self.latent_mask.data().iter().filter(|&&v| v == 0.0).count(),
        };
        Ok(Generation {
            final_image,
            generated,
            mask,
            latent_mask: self.latent_mask,
            diagnostics,
            trace: self.trace,
        })
    }
}

/// Parses and blurs the face mask used for both the latent merge and the
/// final blend.
pub fn face_mask(parser: &dyn FaceParser, naked: &ImageGrid, blur: Option<BlurConfig>, source_id: &str) -> Result<Mask> {
    let face = parser.parse(naked, source_id)?;
    let blur = blur.unwrap_or_else(|| BlurConfig::for_resolution(naked.height()));
    blur_mask(&face, &blur)
}

/// Full generation for one bare face.
pub fn generate(
    pipe: Pipeline<'_>,
    naked: &ImageGrid,
    token: Option<&StyleToken>,
    template: &PromptTemplate,
    cfg: &GenerationConfig,
    keep_trace: bool,
) -> Result<Generation> {
    let mask = face_mask(pipe.parser, naked, cfg.blur, "input")?;
    let sampler = Sampler::new(pipe, naked, &mask, token, template, cfg, keep_trace)?;
    sampler.finish(naked, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csl::TrainingMeta;
    use crate::dataprep::{synth_faces, ToyFaceParser};
    use crate::diffusion::{toy_backend, ToyBackend};
    use proptest::prelude::*;
    use rand::Rng;

    fn field(vals: &[f64]) -> LatentGrid {
        LatentGrid::from_vec(vals.len(), 1, 1, vals.to_vec()).unwrap()
    }

    #[test]
    fn downsample_oracles() {
        let ones = Mask::from_fn(16, 16, MaskKind::Blurred, |_, _| 1.0).unwrap();
        assert!(downsample_mask(&ones, 8).unwrap().data().iter().all(|&v| v == 1.0));
        let half = Mask::from_fn(8, 8, MaskKind::Binary, |y, _| f64::from(u8::from(y < 4))).unwrap();
        assert_eq!(downsample_mask(&half, 8).unwrap().data(), &[0.5]);
        assert!(downsample_mask(&half, 3).is_err());
    }

    proptest! {
        #[test]
        fn downsample_preserves_mean(vals in proptest::collection::vec(0.0f64..=1.0, 16 * 16)) {
            let m = Mask::new(16, 16, vals, MaskKind::Blurred).unwrap();
            let d = downsample_mask(&m, 4).unwrap();
            prop_assert!((d.mean() - m.mean()).abs() < 1e-6);
        }

        #[test]
        fn cfg_is_affine(
            a in proptest::collection::vec(-3.0f64..3.0, 6),
            b in proptest::collection::vec(-3.0f64..3.0, 6),
            g in 0.0f64..20.0,
        ) {
            let (a, b) = (field(&a), field(&b));
            let lhs = cfg_combine(&a, &b, g).unwrap().add(&cfg_combine(&a, &b, 2.0 - g).unwrap()).unwrap();
            let rhs = cfg_combine(&a, &b, 1.0).unwrap().scale(2.0);
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-6);
        }

        #[test]
        fn cfg_endpoints_are_exact(
            a in proptest::collection::vec(-1e3f64..1e3, 6),
            b in proptest::collection::vec(-1e3f64..1e3, 6),
        ) {
            let (a, b) = (field(&a), field(&b));
            prop_assert_eq!(cfg_combine(&a, &b, 0.0).unwrap(), a.clone());
            prop_assert_eq!(cfg_combine(&a, &b, 1.0).unwrap(), b);
        }
    }

    #[test]
    fn cfg_endpoints_and_scalar_oracle() {
        let u = field(&[0.3, -1.0, 2.0]);
        let c = field(&[1.5, 0.25, -0.5]);
        assert_eq!(cfg_combine(&u, &c, 0.0).unwrap(), u);
        assert_eq!(cfg_combine(&u, &c, 1.0).unwrap(), c);
        let zero = field(&[0.0; 3]);
        let out = cfg_combine(&zero, &c, 7.5).unwrap();
        for (o, e) in out.data().iter().zip(c.data()) {
            assert_eq!(*o, 7.5 * e);
        }
        assert!(cfg_combine(&u, &field(&[0.0; 2]), 1.0).is_err());
    }

    #[test]
    fn merge_oracles() {
        let z = LatentGrid::from_vec(2, 2, 2, (0..8).map(f64::from).collect()).unwrap();
        let c = z.scale(-1.0);
        let ones = Mask::from_fn(2, 2, MaskKind::LatentDownsampled, |_, _| 1.0).unwrap();
        let zeros = Mask::from_fn(2, 2, MaskKind::LatentDownsampled, |_, _| 0.0).unwrap();
        assert_eq!(masked_merge(&z, &c, &ones).unwrap(), z);
        assert_eq!(masked_merge(&z, &c, &zeros).unwrap(), c);
        let m = Mask::new(2, 2, vec![0.25, 0.5, 0.0, 1.0], MaskKind::LatentDownsampled).unwrap();
        let out = masked_merge(&z, &c, &m).unwrap();
        for y in 0..2 {
            for x in 0..2 {
                for ch in 0..2 {
                    let mv = m.get(y, x);
                    let expected = z.get(y, x, ch) * mv + c.get(y, x, ch) * (1.0 - mv);
                    assert!((out.get(y, x, ch) - expected).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn noised_condition_statistics() {
        let be = toy_backend(0, 4).unwrap();
        let sched = be.predictor.schedule();
        let c = LatentGrid::filled(8, 8, 4, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(noised_condition(&c, None, sched, &mut rng).unwrap(), c);
        let t = 600;
        let ab = sched.alpha_bar(t).unwrap();
        let (mut sum, mut sq, mut n) = (0.0, 0.0, 0.0);
        for _ in 0..200 {
            let ct = noised_condition(&c, Some(t), sched, &mut rng).unwrap();
            for v in ct.data() {
                let r = v - ab.sqrt() * 0.7;
                sum += r;
                sq += r * r;
                n += 1.0;
            }
        }
        let var = sq / n - (sum / n).powi(2);
        assert!((var - (1.0 - ab)).abs() < 0.05 * (1.0 - ab), "{var} vs {}", 1.0 - ab);
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(
            noised_condition(&c, Some(t), sched, &mut r1).unwrap(),
            noised_condition(&c, Some(t), sched, &mut r2).unwrap()
        );
    }

    struct Fixture {
        be: ToyBackend,
        branch: ControlBranch,
        token: StyleToken,
        naked: ImageGrid,
    }

    fn fixture() -> Fixture {
        let be = toy_backend(3, 4).unwrap();
        let mut branch = ControlBranch::new(&be.predictor, 8, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for name in ["readout.mid.w", "readout.up.w"] {
            let id = branch.params().find(name).unwrap();
            branch.params_mut().init_normal(id, 0.5, &mut rng);
        }
        let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let token = StyleToken::new(v, &be.text, TrainingMeta::default()).unwrap();
        let naked = synth_faces(1, 4, 64).remove(0).naked;
        Fixture {
            be,
            branch,
            token,
            naked,
        }
    }

    fn run(f: &Fixture, cfg: &GenerationConfig, trace: bool) -> Generation {
        let parser = ToyFaceParser::default();
        let pipe = Pipeline {
            base: &f.be.predictor,
            branch: Some(&f.branch),
            text: &f.be.text,
            codec: &f.be.codec,
            parser: &parser,
        };
        generate(pipe, &f.naked, Some(&f.token), &PromptTemplate::default(), cfg, trace).unwrap()
    }

    fn outside_mad(img: &ImageGrid, reference: &ImageGrid, mask: &Mask) -> f64 {
        let (mut acc, mut n) = (0.0, 0usize);
        for y in 0..img.height() {
            for x in 0..img.width() {
                if mask.get(y, x) == 0.0 {
                    let (a, b) = (img.pixel(y, x), reference.pixel(y, x));
                    acc += (0..3).map(|c| (a[c] - b[c]).abs()).sum::<f64>() / 3.0;
                    n += 1;
                }
            }
        }
        acc / n as f64
    }

    #[test]
    fn final_blend_keeps_the_outside_exactly() {
        let f = fixture();
        let g = run(&f, &GenerationConfig::default(), false);
        let mut outside = 0;
        for y in 0..64 {
            for x in 0..64 {
                if g.mask.get(y, x) == 0.0 {
                    assert_eq!(g.final_image.pixel(y, x), f.naked.pixel(y, x));
                    outside += 1;
                }
            }
        }
        assert!(outside > 0);
    }

    #[test]
    fn merge_pins_the_outside_latent_at_every_step() {
        let f = fixture();
        let g = run(&f, &GenerationConfig::default(), true);
        let trace = g.trace.unwrap();
        assert_eq!(trace.len(), 50);
        let m = &g.latent_mask;
        assert!(m.data().iter().any(|&v| v == 0.0));
        for s in &trace {
            let c = s.c_prev.as_ref().unwrap();
            for y in 0..m.height() {
                for x in 0..m.width() {
                    if m.get(y, x) == 0.0 {
                        for ch in 0..4 {
                            assert_eq!(s.z_prev.get(y, x, ch), c.get(y, x, ch), "t={}", s.t);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic_and_prefix_stable() {
        let f = fixture();
        let cfg = GenerationConfig {
            sampler: SamplerKind::Ddpm,
            ..GenerationConfig::default()
        };
        let a = run(&f, &cfg, true);
        let b = run(&f, &cfg, true);
        assert_eq!(a.final_image, b.final_image);
        assert_eq!(a.diagnostics, b.diagnostics);

        let parser = ToyFaceParser::default();
        let pipe = Pipeline {
            base: &f.be.predictor,
            branch: Some(&f.branch),
            text: &f.be.text,
            codec: &f.be.codec,
            parser: &parser,
        };
        let mut s = Sampler::new(pipe, &f.naked, &a.mask, Some(&f.token), &PromptTemplate::default(), &cfg, false).unwrap();
        let full = a.trace.unwrap();
        for k in 0..7 {
            s.step().unwrap();
            assert_eq!(s.latent(), &full[k].z_prev);
        }
    }

    #[test]
    fn ablations_move_in_the_expected_direction() {
        let f = fixture();
        let on = run(&f, &GenerationConfig::default(), false);
        let no_blend = run(
            &f,
            &GenerationConfig {
                use_final_blend: false,
                ..GenerationConfig::default()
            },
            false,
        );
        assert_eq!(outside_mad(&on.final_image, &f.naked, &on.mask), 0.0);
        assert!(outside_mad(&no_blend.final_image, &f.naked, &on.mask) > 0.0);

        let no_merge = run(
            &f,
            &GenerationConfig {
                use_mask_merge: false,
                ..GenerationConfig::default()
            },
            false,
        );
        assert!(
            outside_mad(&no_merge.generated, &f.naked, &on.mask)
                > outside_mad(&on.generated, &f.naked, &on.mask)
        );

        let no_control = run(
            &f,
            &GenerationConfig {
                use_control: false,
                ..GenerationConfig::default()
            },
            false,
        );
        assert!(on.final_image.max_abs_diff(&no_control.final_image).unwrap() > 0.0);
    }

    #[test]
    fn config_validation() {
        let bad = GenerationConfig {
            guidance_scale: -1.0,
            ..GenerationConfig::default()
        };
        assert!(bad.validate().is_err());
        let wide = GenerationConfig {
            guidance_scale: 25.0,
            ..GenerationConfig::default()
        };
        assert!(wide.validate().is_ok());
        assert!(wide.validate_exposed_range().is_err());
        let few = GenerationConfig {
            num_inference_steps: 5,
            ..GenerationConfig::default()
        };
        assert!(few.validate_exposed_range().is_err());
    }

    #[test]
    fn missing_components_are_rejected() {
        let f = fixture();
        let parser = ToyFaceParser::default();
        let pipe = Pipeline {
            base: &f.be.predictor,
            branch: None,
            text: &f.be.text,
            codec: &f.be.codec,
            parser: &parser,
        };
        let t = PromptTemplate::default();
        assert!(generate(pipe, &f.naked, Some(&f.token), &t, &GenerationConfig::default(), false).is_err());
        let no_ctrl = GenerationConfig {
            use_control: false,
            ..GenerationConfig::default()
        };
        assert!(generate(pipe, &f.naked, None, &t, &no_ctrl, false).is_err());
        let plain = GenerationConfig {
            use_style: false,
            ..no_ctrl
        };
        assert!(generate(pipe, &f.naked, None, &t, &plain, false).is_ok());
    }
}
