//! Procedural toy faces for desk-scale runs.
//!
//! A face is a skin-coloured disc on a grayscale background with two eye
//! dots and a lip ellipse. The makeup variant recolours the lips, adds
//! eyeshadow rings and blends blush onto the cheeks. Every colour is a
//! multiple of 1/255, so the images survive an 8-bit PNG round trip exactly.
//!
//! Disc centre and radius are integers; with pixel centres at `+0.5` the
//! rasterised disc is then symmetric, and its bounding box recovers the
//! geometry exactly (see [`FaceGeometry::from_bbox`]).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{ImageGrid, Mask, MaskKind};

pub const SKIN_TONES: [[u8; 3]; 5] = [
    [245, 204, 176],
    [222, 171, 133],
    [194, 145, 107],
    [141, 97, 66],
    [250, 219, 199],
];
pub const EYE_COLOR: [u8; 3] = [64, 38, 26];
pub const LIP_COLOR: [u8; 3] = [204, 128, 128];

pub fn rgb(c: [u8; 3]) -> [f64; 3] {
    c.map(|v| f64::from(v) / 255.0)
}

fn quantize(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

/// Integer disc geometry in pixel-corner coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FaceGeometry {
    pub cy: i64,
    pub cx: i64,
    pub radius: i64,
}

impl FaceGeometry {
    #[inline]
    pub fn contains(&self, y: usize, x: usize) -> bool {
        let dy = y as f64 + 0.5 - self.cy as f64;
        let dx = x as f64 + 0.5 - self.cx as f64;
        dy * dy + dx * dx <= (self.radius * self.radius) as f64
    }

    /// Recovers the geometry from the inclusive bounding box of the disc.
    pub fn from_bbox(y0: usize, y1: usize, x0: usize, x1: usize) -> Self {
        Self {
            cy: ((y0 + y1 + 1) / 2) as i64,
            cx: ((x0 + x1 + 1) / 2) as i64,
            radius: ((x1 - x0 + 1) / 2) as i64,
        }
    }

    // Offsets below are fractions of the radius.
    fn at(&self, dy: f64, dx: f64) -> (f64, f64) {
        let r = self.radius as f64;
        (self.cy as f64 + dy * r, self.cx as f64 + dx * r)
    }

    fn within(&self, y: usize, x: usize, centre: (f64, f64), ry: f64, rx: f64) -> bool {
        let r = self.radius as f64;
        let ny = (y as f64 + 0.5 - centre.0) / (ry * r);
        let nx = (x as f64 + 0.5 - centre.1) / (rx * r);
        ny * ny + nx * nx <= 1.0
    }

    pub fn in_eye(&self, y: usize, x: usize) -> bool {
        [-0.38, 0.38]
            .iter()
            .any(|&dx| self.within(y, x, self.at(-0.2, dx), 0.12, 0.12))
    }

    pub fn in_eyeshadow(&self, y: usize, x: usize) -> bool {
        [-0.38, 0.38]
            .iter()
            .any(|&dx| self.within(y, x, self.at(-0.2, dx), 0.24, 0.24))
    }

    pub fn in_lips(&self, y: usize, x: usize) -> bool {
        self.within(y, x, self.at(0.45, 0.0), 0.12, 0.4)
    }

    pub fn in_cheek(&self, y: usize, x: usize) -> bool {
        [-0.5, 0.5]
            .iter()
            .any(|&dx| self.within(y, x, self.at(0.15, dx), 0.15, 0.15))
    }

    pub fn mask(&self, height: usize, width: usize) -> Mask {
        Mask::from_fn(height, width, MaskKind::Binary, |y, x| {
            if self.contains(y, x) {
                1.0
            } else {
                0.0
            }
        })
        .expect("binary values")
    }
}

/// Makeup colours applied on top of a naked face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MakeupStyle {
    pub lipstick: [f64; 3],
    pub eyeshadow: [f64; 3],
    pub blush: [f64; 3],
}

/// HSV → RGB with `h` in degrees.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = (h.rem_euclid(360.0)) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

impl MakeupStyle {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let color = |rng: &mut R| {
            let h = rng.random_range(0.0..360.0);
            let s = rng.random_range(0.6..0.9);
            let v = rng.random_range(0.6..0.9);
            quantize(hsv_to_rgb(h, s, v))
        };
        Self {
            lipstick: color(rng),
            eyeshadow: color(rng),
            blush: color(rng),
        }
    }
}

/// One generated sample.
#[derive(Clone, Debug)]
pub struct SynthFace {
    pub makeup: ImageGrid,
    pub naked: ImageGrid,
    pub mask: Mask,
    pub geometry: FaceGeometry,
    pub skin: [f64; 3],
    pub style: MakeupStyle,
}

/// Grayscale background texture; every value is a multiple of 1/255.
pub fn background(size: usize, rng: &mut ChaCha8Rng) -> ImageGrid {
    let base = rng.random_range(0.25..0.6);
    let fy = rng.random_range(0.5..3.0);
    let fx = rng.random_range(0.5..3.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut img = ImageGrid::filled(size, size, [0.0; 3]);
    for y in 0..size {
        for x in 0..size {
            let t = (fy * y as f64 / size as f64 + fx * x as f64 / size as f64) * std::f64::consts::TAU;
            let v = quantize([base + 0.15 * (t + phase).sin(); 3]);
            img.set_pixel(y, x, v);
        }
    }
    img
}

/// Paints the naked face onto `img`.
pub fn paint_naked(img: &mut ImageGrid, geo: &FaceGeometry, skin: [f64; 3]) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            if !geo.contains(y, x) {
                continue;
            }
            let c = if geo.in_eye(y, x) {
                rgb(EYE_COLOR)
            } else if geo.in_lips(y, x) {
                rgb(LIP_COLOR)
            } else {
                skin
            };
            img.set_pixel(y, x, c);
        }
    }
}

/// Paints the makeup variant onto `img`.
pub fn paint_makeup(img: &mut ImageGrid, geo: &FaceGeometry, skin: [f64; 3], style: &MakeupStyle) {
    for y in 0..img.height() {
        for x in 0..img.width() {
            if !geo.contains(y, x) {
                continue;
            }
            let c = if geo.in_eye(y, x) {
                rgb(EYE_COLOR)
            } else if geo.in_lips(y, x) {
                style.lipstick
            } else if geo.in_eyeshadow(y, x) {
                style.eyeshadow
            } else if geo.in_cheek(y, x) {
                quantize([0, 1, 2].map(|i| 0.5 * (skin[i] + style.blush[i])))
            } else {
                skin
            };
            img.set_pixel(y, x, c);
        }
    }
}

/// Generates `n` toy faces of `size × size`, deterministically in `seed`.
pub fn synth_faces(n: usize, seed: u64, size: usize) -> Vec<SynthFace> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| synth_one(&mut rng, size)).collect()
}

fn synth_one(rng: &mut ChaCha8Rng, size: usize) -> SynthFace {
    let s = size as i64;
    let radius = ((s as f64) * rng.random_range(0.26..0.32)).round().max(2.0) as i64;
    let jitter = (s / 16).max(0);
    let cy = s / 2 + rng.random_range(-jitter..=jitter);
    let cx = s / 2 + rng.random_range(-jitter..=jitter);
    let geometry = FaceGeometry { cy, cx, radius };
    let skin = rgb(SKIN_TONES[rng.random_range(0..SKIN_TONES.len())]);
    let style = MakeupStyle::random(rng);
    let bg = background(size, rng);
    let mut naked = bg.clone();
    paint_naked(&mut naked, &geometry, skin);
    let mut makeup = bg;
    paint_makeup(&mut makeup, &geometry, skin, &style);
    SynthFace {
        makeup,
        naked,
        mask: geometry.mask(size, size),
        geometry,
        skin,
        style,
    }
}

/// A background-only image with no face, for skip-path tests.
pub fn synth_faceless(seed: u64, size: usize) -> ImageGrid {
    background(size, &mut ChaCha8Rng::seed_from_u64(seed))
}
