//! Separable Gaussian blur for face masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Mask, MaskKind};

/// Kernel size and standard deviation, in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlurConfig {
    pub kernel_size: usize,
    pub sigma: f64,
}

const REFERENCE_RESOLUTION: f64 = 512.0;
const REFERENCE_KERNEL: f64 = 15.0;
const REFERENCE_SIGMA: f64 = 5.0;

impl BlurConfig {
    /// Kernel 15 / sigma 5 at 512 px, scaled linearly with resolution.
    /// The kernel size is rounded up to the next odd number, minimum 3.
    pub fn for_resolution(size: usize) -> Self {
        let scale = size as f64 / REFERENCE_RESOLUTION;
        let mut k = (REFERENCE_KERNEL * scale).round().max(3.0) as usize;
        if k % 2 == 0 {
            k += 1;
        }
        Self {
            kernel_size: k,
            sigma: REFERENCE_SIGMA * scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "blur kernel size must be odd and positive, got {}",
                self.kernel_size
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "blur sigma must be positive, got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

impl Default for BlurConfig {
    fn default() -> Self {
        Self {
            kernel_size: 15,
            sigma: 5.0,
        }
    }
}

/// Normalized 1-D Gaussian weights of length `kernel_size`.
pub fn gaussian_kernel(cfg: &BlurConfig) -> Vec<f64> {
    let r = (cfg.kernel_size / 2) as f64;
    let w: Vec<f64> = (0..cfg.kernel_size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * cfg.sigma * cfg.sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

fn convolve_axis(src: &[f64], h: usize, w: usize, k: &[f64], horizontal: bool) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, wj) in k.iter().enumerate() {
                let off = j as isize - r;
                let v = if horizontal {
                    src[y * w + reflect101(x as isize + off, w)]
                } else {
                    src[reflect101(y as isize + off, h) * w + x]
                };
                acc += wj * v;
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Blurs `mask` and clips the result to `[0, 1]`.
pub fn blur_mask(mask: &Mask, cfg: &BlurConfig) -> Result<Mask> {
    cfg.validate()?;
    let (h, w) = mask.dims();
    let k = gaussian_kernel(cfg);
    let tmp = convolve_axis(mask.data(), h, w, &k, true);
    let out = convolve_axis(&tmp, h, w, &k, false);
    Mask::new(
        h,
        w,
        out.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        MaskKind::Blurred,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn impulse(size: usize, y: usize, x: usize) -> Mask {
        Mask::from_fn(size, size, MaskKind::Binary, |yy, xx| {
            f64::from(u8::from(yy == y && xx == x))
        })
        .unwrap()
    }

    #[test]
    fn impulse_centre_matches_2d_gaussian() {
        let cfg = BlurConfig {
            kernel_size: 3,
            sigma: 1.0,
        };
        let out = blur_mask(&impulse(7, 3, 3), &cfg).unwrap();
        // Direct 2-D kernel, normalized over the 3x3 window.
        let mut total = 0.0;
        for dy in -1i32..=1 {
            for dx in -1i32..=1 {
                total += (-f64::from(dy * dy + dx * dx) / 2.0).exp();
            }
        }
        assert!((out.get(3, 3) - 1.0 / total).abs() < 1e-12);
        assert!((out.get(2, 2) - (-1.0f64).exp() / total).abs() < 1e-12);
    }

    #[test]
    fn default_scaling() {
        assert_eq!(BlurConfig::for_resolution(512), BlurConfig::default());
        let small = BlurConfig::for_resolution(64);
        assert_eq!(small.kernel_size, 3);
        assert!((small.sigma - 0.625).abs() < 1e-12);
        assert_eq!(BlurConfig::for_resolution(256).kernel_size, 9);
    }

    #[test]
    fn rejects_even_kernels() {
        let m = impulse(4, 1, 1);
        let cfg = BlurConfig {
            kernel_size: 4,
            sigma: 1.0,
        };
        assert!(blur_mask(&m, &cfg).is_err());
    }

    #[test]
    fn reflect_indices() {
        let idx: Vec<usize> = (-3..7).map(|i| reflect101(i, 4)).collect();
        assert_eq!(idx, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
    }

    fn mask_strategy() -> impl Strategy<Value = Mask> {
        (2usize..12, 2usize..12).prop_flat_map(|(h, w)| {
            proptest::collection::vec(0u8..=1, h * w).prop_map(move |bits| {
                Mask::new(
                    h,
                    w,
                    bits.into_iter().map(f64::from).collect(),
                    MaskKind::Binary,
                )
                .unwrap()
            })
        })
    }

    proptest! {
        #[test]
        fn blur_stays_in_unit_interval_and_commutes_with_flip(
            m in mask_strategy(),
            half in 0usize..4,
            sigma in 0.3f64..4.0,
        ) {
            let cfg = BlurConfig { kernel_size: 2 * half + 1, sigma };
            let b = blur_mask(&m, &cfg).unwrap();
            prop_assert!(b.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let a = blur_mask(&m.flip_horizontal(), &cfg).unwrap();
            let c = b.flip_horizontal();
            for (x, y) in a.data().iter().zip(c.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn interior_mass_is_preserved(y in 3usize..9, x in 3usize..9, sigma in 0.3f64..3.0) {
            let cfg = BlurConfig { kernel_size: 5, sigma };
            let b = blur_mask(&impulse(12, y, x), &cfg).unwrap();
            prop_assert!((b.sum() - 1.0).abs() < 1e-12);
        }
    }
}
