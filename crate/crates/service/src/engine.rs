//! Pipeline work executed by the job workers.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use makeup_core::csl::{learn_style, CslConfig, PromptTemplate, StyleToken, DEFAULT_TEMPLATE};
use makeup_core::dataprep::ToyFaceParser;
use makeup_core::diffusion::{
    toy_backend, Container, LatentCodec, SamplerKind, TimestepSampling, ToyBackend,
};
use makeup_core::eval::identity_integrity;
use makeup_core::grid::{ImageGrid, Mask, ValueRange};
use makeup_core::imageio::{center_crop_resize, decode_image, encode_png};
use makeup_core::maip::{generate, GenerationConfig, Pipeline};
use makeup_core::mafor::ControlBranch;
use makeup_core::optim::OptimizerKind;

use crate::store::{ArtifactKind, ArtifactStore};
use crate::ServiceConfig;

const LATENT_CHANNELS: usize = 4;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleOverrides {
    pub preset: Option<String>,
    pub steps: Option<usize>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub optimizer: Option<OptimizerKind>,
    pub timestep_sampling: Option<TimestepSampling>,
    pub seed: Option<u64>,
    pub init_word: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StyleRequest {
    pub reference_set_id: String,
    #[serde(default)]
    pub template: Option<String>,
    #[serde(default)]
    pub config: Option<StyleOverrides>,
}

fn default_guidance() -> f64 {
    7.5
}

fn default_steps() -> usize {
    50
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub face_image_id: String,
    #[serde(default)]
    pub style_token_id: Option<String>,
    #[serde(default = "default_guidance")]
    pub guidance_scale: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "yes")]
    pub use_final_blend: bool,
    #[serde(default = "yes")]
    pub use_mask_merge: bool,
    #[serde(default = "yes")]
    pub use_control: bool,
    #[serde(default = "yes")]
    pub use_style: bool,
    #[serde(default)]
    pub sampler: SamplerKind,
}

impl GenerateRequest {
    pub fn generation_config(&self) -> GenerationConfig {
        GenerationConfig {
            guidance_scale: self.guidance_scale,
            num_inference_steps: self.steps,
            seed: self.seed,
            use_final_blend: self.use_final_blend,
            use_mask_merge: self.use_mask_merge,
            use_control: self.use_control,
            use_style: self.use_style,
            sampler: self.sampler,
            blur: None,
        }
    }
}

/// Stored reference set: ids of its image artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSet {
    pub image_ids: Vec<String>,
}

pub struct Engine {
    backend: ToyBackend,
    branch: ControlBranch,
    image_size: usize,
    style_preset: String,
}

pub type WorkResult = Result<(Vec<String>, Value), String>;

impl Engine {
    pub fn new(config: &ServiceConfig) -> Result<Self, String> {
        let backend = toy_backend(config.backend_seed, LATENT_CHANNELS).map_err(|e| e.to_string())?;
        let branch = match &config.branch_path {
            Some(p) => {
                let c = Container::read(p).map_err(|e| format!("control branch {}: {e}", p.display()))?;
                ControlBranch::from_container(&c, &backend.predictor).map_err(|e| e.to_string())?
            }
            None => ControlBranch::new(&backend.predictor, backend.codec.resolution_factor(), 0)
                .map_err(|e| e.to_string())?,
        };
        Ok(Self {
            backend,
            branch,
            image_size: config.image_size,
            style_preset: config.style_preset.clone(),
        })
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    /// Style-learning config after applying request overrides.
    pub fn style_config(&self, o: &StyleOverrides) -> Result<CslConfig, String> {
        let preset = o.preset.as_deref().unwrap_or(&self.style_preset);
        let mut cfg = match preset {
            "toy" => CslConfig::toy(),
            "full" => CslConfig::default(),
            other => return Err(format!("unknown preset `{other}` (expected toy or full)")),
        };
        if let Some(v) = o.steps {
            cfg.total_steps = v;
        }
        if let Some(v) = o.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = o.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = o.optimizer {
            cfg.optimizer = v;
        }
        if let Some(v) = o.timestep_sampling {
            cfg.timestep_sampling = v;
        }
        if let Some(v) = o.seed {
            cfg.seed = v;
        }
        if let Some(v) = &o.init_word {
            cfg.init_word = v.clone();
        }
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    fn load_image(&self, store: &ArtifactStore, id: &str) -> Result<ImageGrid, String> {
        let (meta, bytes) = store
            .get(id)
            .map_err(|e| e.to_string())?
            .ok_or_else(|| format!("image `{id}` not found"))?;
        if meta.kind != ArtifactKind::Image {
            return Err(format!("artifact `{id}` is not an image"));
        }
        let img = decode_image(&bytes)?;
        Ok(if img.dims() == (self.image_size, self.image_size) {
            img
        } else {
            center_crop_resize(&img, self.image_size)
        })
    }

    pub fn learn_style(&self, store: &ArtifactStore, job_id: &str, req: &StyleRequest) -> WorkResult {
        let cfg = self.style_config(&req.config.clone().unwrap_or_default())?;
        let template_text = req.template.clone().unwrap_or_else(|| DEFAULT_TEMPLATE.to_string());
        let template = PromptTemplate::new(&template_text).map_err(|e| e.to_string())?;
        let (_, set_bytes) = store
            .get(&req.reference_set_id)
            .map_err(|e| e.to_string())?
            .ok_or_else(|| format!("reference set `{}` not found", req.reference_set_id))?;
        let set: ReferenceSet = serde_json::from_slice(&set_bytes).map_err(|e| e.to_string())?;
        let refs = set
            .image_ids
            .iter()
            .map(|id| self.load_image(store, id))
            .collect::<Result<Vec<_>, _>>()?;
        let be = &self.backend;
        let (token, log) =
            learn_style(&be.predictor, &be.text, &be.codec, &refs, &template, &cfg, |_, _| {})
                .map_err(|e| e.to_string())?;
        let meta = json!({
            "reference_set_id": req.reference_set_id,
            "template": template_text,
            "job_id": job_id,
            "training_meta": token.training_meta,
        });
        let stored = store
            .put(ArtifactKind::StyleToken, &token.to_container().to_bytes(), meta)
            .map_err(|e| e.to_string())?;
        let result = json!({
            "style_token_id": stored.id,
            "steps": log.losses.len(),
            "loss_first_decile": log.first_decile_mean(),
            "loss_last_decile": log.last_decile_mean(),
        });
        Ok((vec![stored.id], result))
    }

    pub fn load_style(&self, store: &ArtifactStore, id: &str) -> Result<(StyleToken, PromptTemplate), String> {
        let (meta, bytes) = store
            .get(id)
            .map_err(|e| e.to_string())?
            .ok_or_else(|| format!("style token `{id}` not found"))?;
        if meta.kind != ArtifactKind::StyleToken {
            return Err(format!("artifact `{id}` is not a style token"));
        }
        let container = Container::from_bytes(&bytes).map_err(|e| e.to_string())?;
        let token = StyleToken::from_container(&container).map_err(|e| e.to_string())?;
        let template = meta
            .meta
            .get("template")
            .and_then(Value::as_str)
            .unwrap_or(DEFAULT_TEMPLATE);
        Ok((token, PromptTemplate::new(template).map_err(|e| e.to_string())?))
    }

    pub fn generate(&self, store: &ArtifactStore, req: &GenerateRequest) -> WorkResult {
        let config = req.generation_config();
        let face = self.load_image(store, &req.face_image_id)?;
        let (token, template) = match (&req.style_token_id, config.use_style) {
            (Some(id), true) => {
                let (t, tpl) = self.load_style(store, id)?;
                (Some(t), tpl)
            }
            _ => (None, PromptTemplate::default()),
        };
        let parser = ToyFaceParser::default();
        let pipe = Pipeline {
            base: &self.backend.predictor,
            branch: Some(&self.branch),
            text: &self.backend.text,
            codec: &self.backend.codec,
            parser: &parser,
        };
        let g = generate(pipe, &face, token.as_ref(), &template, &config, false).map_err(|e| e.to_string())?;
        let integrity = identity_integrity(&g.final_image, &face, &g.mask).map_err(|e| e.to_string())?;
        let put_image = |img: &ImageGrid, role: &str| {
            store
                .put(ArtifactKind::Image, &encode_png(img), json!({ "role": role }))
                .map(|m| m.id)
                .map_err(|e| e.to_string())
        };
        let final_id = put_image(&g.final_image, "final")?;
        let generated_id = put_image(&g.generated, "generated")?;
        let mask_id = put_image(&mask_image(&g.mask), "mask")?;
        let diag_bytes = serde_json::to_vec_pretty(&g.diagnostics).map_err(|e| e.to_string())?;
        let diagnostics_id = store
            .put(ArtifactKind::Diagnostics, &diag_bytes, Value::Null)
            .map_err(|e| e.to_string())?
            .id;
        let result = json!({
            "final_image_id": final_id,
            "generated_image_id": generated_id,
            "mask_image_id": mask_id,
            "diagnostics_id": diagnostics_id,
            "config": config,
            "integrity": integrity,
        });
        Ok((vec![final_id, generated_id, mask_id, diagnostics_id], result))
    }
}

fn mask_image(mask: &Mask) -> ImageGrid {
    let data = mask.data().iter().flat_map(|&v| [v, v, v]).collect();
    ImageGrid::from_vec(mask.height(), mask.width(), data, ValueRange::Unit).expect("mask values are in [0, 1]")
}
