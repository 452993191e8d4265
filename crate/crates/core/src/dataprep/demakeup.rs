//! Demakeup adapters: makeup image → estimated bare face.

use std::collections::HashMap;
use std::path::PathBuf;

use crate::dataprep::parse::is_chromatic;
use crate::dataprep::synth::{paint_naked, FaceGeometry};
use crate::error::{Error, Result};
use crate::grid::ImageGrid;
use crate::imageio::read_image_resized;

pub trait Demakeup: Send + Sync {
    fn remove_makeup(&self, image: &ImageGrid, source_id: &str) -> Result<ImageGrid>;

    /// Processes a batch; output order follows input order.
    fn remove_makeup_batch(&self, images: &[(ImageGrid, String)]) -> Result<Vec<ImageGrid>> {
        images
            .iter()
            .map(|(img, id)| self.remove_makeup(img, id))
            .collect()
    }
}

/// Demakeup for the procedural toy faces. Locates the face disc from its
/// bounding box, takes the most frequent colour inside it as skin, and
/// repaints the bare face. Pixels outside the disc are untouched.
#[derive(Clone, Copy, Debug)]
pub struct ToyDemakeup {
    pub threshold: f64,
}

impl Default for ToyDemakeup {
    fn default() -> Self {
        Self { threshold: 0.02 }
    }
}

fn color_key(p: [f64; 3]) -> [u64; 3] {
    p.map(f64::to_bits)
}

impl Demakeup for ToyDemakeup {
    fn remove_makeup(&self, image: &ImageGrid, source_id: &str) -> Result<ImageGrid> {
        let (h, w) = image.dims();
        let (mut y0, mut y1, mut x0, mut x1) = (usize::MAX, 0, usize::MAX, 0);
        for y in 0..h {
            for x in 0..w {
                if is_chromatic(image.pixel(y, x), self.threshold) {
                    y0 = y0.min(y);
                    y1 = y1.max(y);
                    x0 = x0.min(x);
                    x1 = x1.max(x);
                }
            }
        }
        if y0 == usize::MAX {
            return Err(Error::DemakeupUnavailable(format!(
                "no face disc found in {source_id}"
            )));
        }
        let geo = FaceGeometry::from_bbox(y0, y1, x0, x1);
        let mut counts: HashMap<[u64; 3], (usize, [f64; 3])> = HashMap::new();
        for y in y0..=y1 {
            for x in x0..=x1 {
                if geo.contains(y, x) {
                    let p = image.pixel(y, x);
                    counts.entry(color_key(p)).or_insert((0, p)).0 += 1;
                }
            }
        }
        // Ties broken by colour bits so the result is independent of hash order.
        let skin = counts
            .into_iter()
            .max_by_key(|(k, (n, _))| (*n, *k))
            .map(|(_, (_, p))| p)
            .expect("disc is non-empty");
        let mut out = image.clone();
        paint_naked(&mut out, &geo, skin);
        Ok(out)
    }
}

/// Reads externally produced bare faces from `{dir}/{source_id}.png`.
#[derive(Clone, Debug)]
pub struct PrecomputedDemakeup {
    pub dir: PathBuf,
}

impl Demakeup for PrecomputedDemakeup {
    fn remove_makeup(&self, image: &ImageGrid, source_id: &str) -> Result<ImageGrid> {
        let path = self.dir.join(format!("{source_id}.png"));
        if !path.exists() {
            return Err(Error::DemakeupUnavailable(format!(
                "no precomputed output at {}",
                path.display()
            )));
        }
        let out = read_image_resized(&path, image.height())?;
        out.ensure_same_dims(image.dims(), "precomputed demakeup")?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::synth::{rgb, synth_faceless, synth_faces, SKIN_TONES};

    #[test]
    fn toy_demakeup_restores_the_bare_face_exactly() {
        for f in synth_faces(12, 8, 64) {
            let out = ToyDemakeup::default().remove_makeup(&f.makeup, "f").unwrap();
            assert_eq!(out, f.naked);
        }
    }

    #[test]
    fn red_lip_patch_becomes_natural_lip() {
        let f = &synth_faces(1, 3, 64)[0];
        let mut img = f.naked.clone();
        let geo = f.geometry;
        let red = [1.0, 0.0, 0.0];
        for y in 0..64 {
            for x in 0..64 {
                if geo.in_lips(y, x) {
                    img.set_pixel(y, x, red);
                }
            }
        }
        assert_ne!(img, f.naked);
        let out = ToyDemakeup::default().remove_makeup(&img, "lip").unwrap();
        assert_eq!(out, f.naked);
        assert!(SKIN_TONES.iter().any(|&s| rgb(s) == f.skin));
    }

    #[test]
    fn background_is_untouched_and_faceless_fails() {
        let f = &synth_faces(1, 4, 64)[0];
        let out = ToyDemakeup::default().remove_makeup(&f.makeup, "f").unwrap();
        for y in 0..64 {
            for x in 0..64 {
                if !f.geometry.contains(y, x) {
                    assert_eq!(out.pixel(y, x), f.makeup.pixel(y, x));
                }
            }
        }
        assert!(matches!(
            ToyDemakeup::default().remove_makeup(&synth_faceless(1, 32), "bg"),
            Err(Error::DemakeupUnavailable(_))
        ));
    }

    #[test]
    fn batch_preserves_order() {
        let faces = synth_faces(4, 5, 32);
        let batch: Vec<_> = faces
            .iter()
            .enumerate()
            .map(|(i, f)| (f.makeup.clone(), i.to_string()))
            .collect();
        let out = ToyDemakeup::default().remove_makeup_batch(&batch).unwrap();
        assert_eq!(out.len(), 4);
        for (o, f) in out.iter().zip(&faces) {
            assert_eq!(o, &f.naked);
        }
    }
}
