//! Pseudo-paired training data from unpaired makeup photos.

pub mod blur;
pub mod demakeup;
pub mod pairs;
pub mod parse;
pub mod synth;

pub use blur::{blur_mask, gaussian_kernel, BlurConfig};
pub use demakeup::{Demakeup, PrecomputedDemakeup, ToyDemakeup};
pub use pairs::{
    blend_naked, build_pairs, list_images, make_pair, read_manifest, ManifestRecord, PairConfig, PairManifest,
    PseudoPair,
};
pub use parse::{FaceParser, LabelMapParser, ToyFaceParser, DEFAULT_FACIAL_LABELS};
pub use synth::{synth_faceless, synth_faces, FaceGeometry, MakeupStyle, SynthFace};
