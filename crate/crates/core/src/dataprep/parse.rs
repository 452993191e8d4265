//! Face parsing adapters: image → binary facial-region mask.

use std::collections::BTreeSet;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Mask, MaskKind};

pub trait FaceParser: Send + Sync {
    /// Returns a binary mask of the facial region, or
    /// [`Error::NoFaceDetected`] when the region is empty.
    fn parse(&self, image: &ImageGrid, source_id: &str) -> Result<Mask>;
}

/// Chroma test used by the toy parser and demakeup: toy backgrounds are
/// exactly gray, every face colour is not.
pub fn is_chromatic(p: [f64; 3], threshold: f64) -> bool {
    let spread = p[0].max(p[1]).max(p[2]) - p[0].min(p[1]).min(p[2]);
    spread > threshold
}

/// Parser for the procedural toy faces: the facial region is every
/// chromatic pixel.
#[derive(Clone, Copy, Debug)]
pub struct ToyFaceParser {
    pub threshold: f64,
}

impl Default for ToyFaceParser {
    fn default() -> Self {
        Self { threshold: 0.02 }
    }
}

impl FaceParser for ToyFaceParser {
    fn parse(&self, image: &ImageGrid, source_id: &str) -> Result<Mask> {
        let mask = Mask::from_fn(image.height(), image.width(), MaskKind::Binary, |y, x| {
            if is_chromatic(image.pixel(y, x), self.threshold) {
                1.0
            } else {
                0.0
            }
        })?;
        if mask.support() == 0 {
            return Err(Error::NoFaceDetected {
                source_id: source_id.to_string(),
            });
        }
        Ok(mask)
    }
}

/// Label ids treated as facial by default: skin, brows, eyes, nose, mouth
/// and lips in the common 19-class face-parsing convention.
pub const DEFAULT_FACIAL_LABELS: [u8; 9] = [1, 2, 3, 4, 5, 10, 11, 12, 13];

/// Adapter over label maps produced by an external face-parsing network.
/// Reads `{label_dir}/{source_id}.png` (8-bit, one label per pixel) and
/// resamples it to the image size with nearest-neighbour lookup.
#[derive(Clone, Debug)]
pub struct LabelMapParser {
    pub label_dir: PathBuf,
    pub facial_labels: BTreeSet<u8>,
}

impl LabelMapParser {
    pub fn new(label_dir: impl Into<PathBuf>) -> Self {
        Self {
            label_dir: label_dir.into(),
            facial_labels: DEFAULT_FACIAL_LABELS.into_iter().collect(),
        }
    }

    pub fn with_labels(mut self, labels: impl IntoIterator<Item = u8>) -> Self {
        self.facial_labels = labels.into_iter().collect();
        self
    }
}

impl FaceParser for LabelMapParser {
    fn parse(&self, image: &ImageGrid, source_id: &str) -> Result<Mask> {
        let path = self.label_dir.join(format!("{source_id}.png"));
        let labels = image::open(&path)
            .map_err(|e| Error::ImageRead {
                path: path.clone(),
                message: e.to_string(),
            })?
            .into_luma8();
        let (lw, lh) = (labels.width() as usize, labels.height() as usize);
        let (h, w) = image.dims();
        let mask = Mask::from_fn(h, w, MaskKind::Binary, |y, x| {
            let ly = (y * lh / h) as u32;
            let lx = (x * lw / w) as u32;
            if self.facial_labels.contains(&labels.get_pixel(lx, ly)[0]) {
                1.0
            } else {
                0.0
            }
        })?;
        if mask.support() == 0 {
            return Err(Error::NoFaceDetected {
                source_id: source_id.to_string(),
            });
        }
        Ok(mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::synth::{synth_faceless, synth_faces};

    #[test]
    fn toy_parser_recovers_the_disc() {
        let parser = ToyFaceParser::default();
        for f in synth_faces(8, 1, 64) {
            assert_eq!(parser.parse(&f.makeup, "x").unwrap(), f.mask);
            assert_eq!(parser.parse(&f.naked, "x").unwrap(), f.mask);
        }
    }

    #[test]
    fn faceless_images_are_rejected() {
        let err = ToyFaceParser::default()
            .parse(&synth_faceless(3, 32), "bg")
            .unwrap_err();
        assert!(matches!(err, Error::NoFaceDetected { source_id } if source_id == "bg"));
    }

    #[test]
    fn label_map_parser_selects_configured_labels() {
        let dir = tempfile::tempdir().unwrap();
        let mut map = image::GrayImage::new(4, 4);
        map.put_pixel(1, 1, image::Luma([1]));
        map.put_pixel(2, 2, image::Luma([17]));
        map.save(dir.path().join("a.png")).unwrap();
        let img = ImageGrid::filled(8, 8, [0.5; 3]);
        let m = LabelMapParser::new(dir.path()).parse(&img, "a").unwrap();
        assert_eq!(m.support(), 4);
        assert_eq!(m.get(2, 3), 1.0);
        let hair = LabelMapParser::new(dir.path()).with_labels([17]);
        assert_eq!(hair.parse(&img, "a").unwrap().get(5, 5), 1.0);
        let none = LabelMapParser::new(dir.path()).with_labels([9]);
        assert!(matches!(none.parse(&img, "a"), Err(Error::NoFaceDetected { .. })));
        assert!(matches!(
            LabelMapParser::new(dir.path()).parse(&img, "missing"),
            Err(Error::ImageRead { .. })
        ));
    }
}
