//! Character-makeup generation on latent diffusion.
//!
//! The crate is organised along the pipeline:
//!
//! * [`diffusion`]: schedules, samplers and component interfaces, plus a
//!   deterministic toy backend used at desk scale.
//! * [`dataprep`]: pseudo-paired data from unpaired makeup photos.
//! * [`mafor`]: the trainable control branch conditioned on the bare face.
//! * [`csl`]: style-token learning from a handful of reference images.
//! * [`maip`]: the masked inpainting sampler with classifier-free guidance.
//! * [`eval`]: distribution and similarity metrics.

pub mod csl;
pub mod dataprep;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod grid;
pub mod imageio;
pub mod maip;
pub mod mafor;
pub mod optim;

pub use error::{Error, Result};
pub use grid::{ImageGrid, LatentGrid, Mask, MaskKind, ValueRange};
