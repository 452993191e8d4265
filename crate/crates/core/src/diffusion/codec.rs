//! Image ↔ latent codecs.

use crate::error::{shape_err, Error, Result};
use crate::grid::{ImageGrid, LatentGrid, ValueRange};

pub const DEFAULT_RESOLUTION_FACTOR: usize = 8;

/// Maps images to latents at `1 / resolution_factor` resolution and back.
pub trait LatentCodec: Send + Sync {
    fn resolution_factor(&self) -> usize;
    fn latent_channels(&self) -> usize;
    fn encode(&self, image: &ImageGrid) -> Result<LatentGrid>;
    fn decode(&self, latent: &LatentGrid) -> Result<ImageGrid>;

    /// Latent dims for an image of the given dims.
    fn latent_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let f = self.resolution_factor();
        if height % f != 0 || width % f != 0 {
            return Err(Error::InvalidArgument(format!(
                "image {height}x{width} is not divisible by factor {f}"
            )));
        }
        Ok((height / f, width / f))
    }
}

/// Lossy desk-scale codec: block average-pool encode, nearest-neighbour
/// decode. Latent channels 0..3 carry the pooled RGB values in `[-1, 1]`;
/// any further channel carries pooled luma (mean of RGB). Decoding reads the
/// first three channels only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyCodec {
    factor: usize,
    channels: usize,
}

impl ToyCodec {
    pub fn new(factor: usize, channels: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidArgument("resolution factor must be positive".into()));
        }
        if channels < 3 {
            return Err(Error::InvalidArgument(
                "toy codec needs at least three latent channels".into(),
            ));
        }
        Ok(Self { factor, channels })
    }
}

impl LatentCodec for ToyCodec {
    fn resolution_factor(&self) -> usize {
        self.factor
    }

    fn latent_channels(&self) -> usize {
        self.channels
    }

    fn encode(&self, image: &ImageGrid) -> Result<LatentGrid> {
        let (h, w) = self.latent_dims(image.height(), image.width())?;
        let img = image.to_range(ValueRange::Signed);
        let f = self.factor;
        let area = (f * f) as f64;
        let mut out = LatentGrid::zeros(h, w, self.channels);
        for ly in 0..h {
            for lx in 0..w {
                let mut acc = [0.0; 3];
                for y in ly * f..(ly + 1) * f {
                    for x in lx * f..(lx + 1) * f {
                        let p = img.pixel(y, x);
                        for c in 0..3 {
                            acc[c] += p[c];
                        }
                    }
                }
                let rgb = acc.map(|v| v / area);
                let luma = (rgb[0] + rgb[1] + rgb[2]) / 3.0;
                for c in 0..self.channels {
                    out.set(ly, lx, c, if c < 3 { rgb[c] } else { luma });
                }
            }
        }
        Ok(out)
    }

    fn decode(&self, latent: &LatentGrid) -> Result<ImageGrid> {
        if latent.channels() != self.channels {
            return Err(shape_err(
                "ToyCodec::decode channels",
                self.channels,
                latent.channels(),
            ));
        }
        latent.ensure_finite("latent passed to decode")?;
        let f = self.factor;
        let (h, w) = (latent.height() * f, latent.width() * f);
        let mut img = ImageGrid::filled(h, w, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                let (ly, lx) = (y / f, x / f);
                let rgb = [0, 1, 2].map(|c| (latent.get(ly, lx, c).clamp(-1.0, 1.0) + 1.0) * 0.5);
                img.set_pixel(y, x, rgb);
            }
        }
        Ok(img)
    }
}
