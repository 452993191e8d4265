//! Diffusion substrate: schedule, forward/reverse updates, codecs, the text
//! encoder adapter and the toy noise predictor.

pub mod codec;
pub mod container;
pub mod nn;
pub mod params;
pub mod sampling;
pub mod schedule;
pub mod text;
pub mod toy;

pub use codec::{LatentCodec, ToyCodec};
pub use container::Container;
pub use params::ParamSet;
pub use sampling::{
    ddim_step, ddpm_step, draw_timesteps, forward_diffuse, inference_timesteps, q_sample,
    reverse_step, SamplerKind, TimestepSampling,
};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleParams};
pub use text::{tokenize, PromptEmbedding, TextEncoder, Token, ToyTextEncoder, PLACEHOLDER};
pub use toy::{
    mse_loss, toy_backend, ControlResiduals, NoisePredictor, ToyBackend, ToyConfig, ToyDenoiser,
};
