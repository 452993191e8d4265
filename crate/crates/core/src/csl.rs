//! Style-token learning: optimize one placeholder embedding over a few
//! reference images with the frozen base predictor.
//!
//! Only the embedding vector is trained. No control-branch state is involved.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::container::Container;
use crate::diffusion::sampling::{draw_timesteps, q_sample, TimestepSampling};
use crate::diffusion::text::{tokenize, Token, PLACEHOLDER};
use crate::diffusion::{mse_loss, LatentCodec, NoisePredictor, PromptEmbedding, TextEncoder, ToyDenoiser};
use crate::error::{Error, Result};
use crate::grid::{ImageGrid, LatentGrid};
use crate::optim::{Optimizer, OptimizerKind, TrainLog};

pub const DEFAULT_TEMPLATE: &str = "a photo of a woman with <*> on face";
pub const DEFAULT_INIT_WORD: &str = "makeup";
pub const TOKEN_KIND: &str = "style_token";
pub const TOKEN_SCHEMA_VERSION: u32 = 1;

/// Prompt text with exactly one placeholder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    text: String,
    tokens: Vec<Token>,
    position: usize,
}

impl PromptTemplate {
    pub fn new(text: &str) -> Result<Self> {
        let tokens = tokenize(text);
        let slots: Vec<usize> = tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == Token::Placeholder)
            .map(|(i, _)| i)
            .collect();
        if slots.len() != 1 {
            return Err(Error::InvalidArgument(format!(
                "template must contain exactly one {PLACEHOLDER}, found {}",
                slots.len()
            )));
        }
        Ok(Self {
            text: text.to_string(),
            tokens,
            position: slots[0],
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    /// Token index of the placeholder.
    pub fn position(&self) -> usize {
        self.position
    }

    /// The template with the placeholder replaced by `word`.
    pub fn substitute(&self, word: &str) -> String {
        self.text.replacen(PLACEHOLDER, word, 1)
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new(DEFAULT_TEMPLATE).expect("default template is valid")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub reference_ids: Vec<String>,
    pub seed: u64,
    pub init_word: String,
}

/// A learned embedding bound to the placeholder string.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StyleToken {
    pub placeholder: String,
    pub embedding: Vec<f64>,
    pub encoder_fingerprint: String,
    pub training_meta: TrainingMeta,
}

impl StyleToken {
    pub fn new(embedding: Vec<f64>, encoder: &dyn TextEncoder, training_meta: TrainingMeta) -> Result<Self> {
        let token = Self {
            placeholder: PLACEHOLDER.to_string(),
            embedding,
            encoder_fingerprint: encoder.fingerprint(),
            training_meta,
        };
        token.validate(encoder.dim())?;
        Ok(token)
    }

    pub fn dim(&self) -> usize {
        self.embedding.len()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.embedding.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: self.embedding.len(),
            });
        }
        if self.embedding.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("style token embedding".into()));
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::new(
            TOKEN_KIND,
            serde_json::json!({
                "schema_version": TOKEN_SCHEMA_VERSION,
                "placeholder": self.placeholder,
                "dim": self.dim(),
                "encoder_fingerprint": self.encoder_fingerprint,
                "training_meta": self.training_meta,
            }),
        );
        c.push("embedding", &[self.dim()], self.embedding.clone());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        c.expect_kind(TOKEN_KIND)?;
        let schema: u32 = c.meta_field("schema_version")?;
        if schema != TOKEN_SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                found: schema,
                supported: TOKEN_SCHEMA_VERSION,
            });
        }
        let dim: usize = c.meta_field("dim")?;
        let t = c
            .tensor("embedding")
            .ok_or_else(|| Error::Corrupt("missing embedding tensor".into()))?;
        let token = Self {
            placeholder: c.meta_field("placeholder")?,
            embedding: t.data.clone(),
            encoder_fingerprint: c.meta_field("encoder_fingerprint")?,
            training_meta: c.meta_field("training_meta")?,
        };
        token.validate(dim)?;
        Ok(token)
    }
}

pub fn token_store(token: &StyleToken, path: &Path) -> Result<()> {
    token.to_container().write(path)
}

pub fn token_load(path: &Path) -> Result<StyleToken> {
    StyleToken::from_container(&Container::read(path)?)
}

/// Loads a token and checks it against the encoder it will be spliced into.
pub fn token_load_for(path: &Path, encoder: &dyn TextEncoder) -> Result<StyleToken> {
    let token = token_load(path)?;
    token.validate(encoder.dim())?;
    if token.encoder_fingerprint != encoder.fingerprint() {
        log::warn!(
            "style token was learned with encoder {}, using {}",
            token.encoder_fingerprint,
            encoder.fingerprint()
        );
    }
    Ok(token)
}

/// Template embedding with `vector` spliced in at the placeholder.
pub fn embed_with(encoder: &dyn TextEncoder, template: &PromptTemplate, vector: &[f64]) -> Result<PromptEmbedding> {
    encoder.embed_tokens(template.tokens(), Some(vector))
}

pub fn embed_prompt(encoder: &dyn TextEncoder, template: &PromptTemplate, token: &StyleToken) -> Result<PromptEmbedding> {
    embed_with(encoder, template, &token.embedding)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CslConfig {
    pub learning_rate: f64,
    pub total_steps: usize,
    pub batch_size: usize,
    pub timestep_sampling: TimestepSampling,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub init_word: String,
    pub flip_augment: bool,
}

impl Default for CslConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            total_steps: 5000,
            batch_size: 1,
            timestep_sampling: TimestepSampling::Uniform,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
            init_word: DEFAULT_INIT_WORD.to_string(),
            flip_augment: false,
        }
    }
}

impl CslConfig {
    /// Short desk-scale run.
    pub fn toy() -> Self {
        Self {
            learning_rate: 2.0,
            total_steps: 500,
            batch_size: 16,
            timestep_sampling: TimestepSampling::Stratified,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Loss and embedding gradient for one noised latent.
pub fn embedding_loss_and_grad(
    base: &ToyDenoiser,
    encoder: &dyn TextEncoder,
    template: &PromptTemplate,
    vector: &[f64],
    z0: &LatentGrid,
    t: usize,
    noise: &LatentGrid,
) -> Result<(f64, Vec<f64>)> {
    let prompt = embed_with(encoder, template, vector)?;
    let z_t = q_sample(z0, noise, base.schedule().alpha_bar(t)?)?;
    let (eps_hat, cache) = base.forward_cached(&z_t, &prompt, t, None)?;
    let (loss, d_eps) = mse_loss(noise, &eps_hat)?;
    let g = base.backward(&cache, &d_eps, false);
    Ok((loss, g.d_token(cache.prompt_len())))
}

/// Optimizes the placeholder embedding over reference latents. Returns the
/// final vector and the per-update losses.
pub fn learn_style_latents(
    base: &ToyDenoiser,
    encoder: &dyn TextEncoder,
    latents: &[LatentGrid],
    template: &PromptTemplate,
    cfg: &CslConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<(Vec<f64>, TrainLog)> {
    cfg.validate()?;
    if latents.is_empty() {
        return Err(Error::EmptyInput("no reference images".into()));
    }
    if encoder.dim() != base.embed_dim() {
        return Err(Error::DimensionMismatch {
            expected: base.embed_dim(),
            actual: encoder.dim(),
        });
    }
    let mut v = encoder.word_embedding(&cfg.init_word);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, v.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let num_t = base.schedule().num_train_steps();
    let mut log = TrainLog::default();
    for step in 0..cfg.total_steps {
        let mut grad = vec![0.0; v.len()];
        let mut loss_sum = 0.0;
        for t in draw_timesteps(cfg.batch_size, num_t, cfg.timestep_sampling, &mut rng) {
            let mut z0 = latents[rng.random_range(0..latents.len())].clone();
            if cfg.flip_augment && rng.random_bool(0.5) {
                z0 = flip_latent(&z0);
            }
            let (h, w, c) = z0.shape();
            let noise = LatentGrid::randn(h, w, c, &mut rng);
            let (loss, g) = embedding_loss_and_grad(base, encoder, template, &v, &z0, t, &noise)?;
            loss_sum += loss;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let scale = 1.0 / cfg.batch_size as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        let mean = loss_sum * scale;
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("style loss at update {step}")));
        }
        opt.step(&mut v, &grad);
        log.losses.push(mean);
        on_step(step, mean);
    }
    Ok((v, log))
}

fn flip_latent(z: &LatentGrid) -> LatentGrid {
    let (h, w, c) = z.shape();
    let mut out = LatentGrid::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.set(y, x, ch, z.get(y, w - 1 - x, ch));
            }
        }
    }
    out
}

/// Short content hash used to identify a reference image.
pub fn reference_id(image: &ImageGrid) -> String {
    let mut h = Sha256::new();
    for v in image.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(&h.finalize()[..6])
}

/// Learns a style token from reference images (already at model resolution).
pub fn learn_style(
    base: &ToyDenoiser,
    encoder: &dyn TextEncoder,
    codec: &dyn LatentCodec,
    references: &[ImageGrid],
    template: &PromptTemplate,
    cfg: &CslConfig,
    on_step: impl FnMut(usize, f64),
) -> Result<(StyleToken, TrainLog)> {
    if references.is_empty() {
        return Err(Error::EmptyInput("no reference images".into()));
    }
    if !(3..=5).contains(&references.len()) {
        log::warn!(
            "style learning expects 3 to 5 references, got {}",
            references.len()
        );
    }
    let latents = references
        .iter()
        .map(|r| codec.encode(r))
        .collect::<Result<Vec<_>>>()?;
    let (v, log) = learn_style_latents(base, encoder, &latents, template, cfg, on_step)?;
    let meta = TrainingMeta {
        steps: cfg.total_steps,
        learning_rate: cfg.learning_rate,
        optimizer: cfg.optimizer,
        reference_ids: references.iter().map(reference_id).collect(),
        seed: cfg.seed,
        init_word: cfg.init_word.clone(),
    };
    Ok((StyleToken::new(v, encoder, meta)?, log))
}

/// Reference latents drawn around the prior mean of the template with a
/// known embedding planted at the placeholder.
pub fn planted_latents(
    base: &ToyDenoiser,
    encoder: &dyn TextEncoder,
    template: &PromptTemplate,
    plant: &[f64],
    count: usize,
    dims: (usize, usize),
    noise_std: f64,
    seed: u64,
) -> Result<Vec<LatentGrid>> {
    let prompt = embed_with(encoder, template, plant)?;
    let mean = base.prior_mean(&prompt, dims.0, dims.1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let n = LatentGrid::randn(dims.0, dims.1, mean.channels(), &mut rng);
            mean.zip_with(&n, "planted", |m, e| m + noise_std * e).expect("same shape")
        })
        .collect())
}

/// Planted references decoded to images.
pub fn planted_references(
    base: &ToyDenoiser,
    encoder: &dyn TextEncoder,
    codec: &dyn LatentCodec,
    plant: &[f64],
    count: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<ImageGrid>> {
    let (h, w) = codec.latent_dims(size, size)?;
    let spread = base.config().data_std;
    planted_latents(base, encoder, &PromptTemplate::default(), plant, count, (h, w), spread, seed)?
        .iter()
        .map(|z| codec.decode(z))
        .collect()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}
