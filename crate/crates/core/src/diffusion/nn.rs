//! Minimal 2-D convolution with hand-written backward pass.
//!
//! Weight layout is `[out][in][ky][kx]`, zero padding.

use crate::grid::LatentGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    pub const fn same3x3(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub const fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: 1,
            stride: 1,
            padding: 0,
        }
    }

    pub const fn down3x3(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: 3,
            stride: 2,
            padding: 1,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_dims(&self, height: usize, width: usize) -> (usize, usize) {
        (
            (height + 2 * self.padding - self.kernel) / self.stride + 1,
            (width + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    #[inline]
    fn w_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx
    }

    // Maps an output coordinate and kernel tap to an input coordinate,
    // or None when it falls in the zero padding.
    #[inline]
    fn source(&self, out: usize, tap: usize, extent: usize) -> Option<usize> {
        let pos = (out * self.stride + tap) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    pub fn forward(&self, x: &LatentGrid, weight: &[f64], bias: &[f64]) -> LatentGrid {
        debug_assert_eq!(x.channels(), self.in_channels);
        debug_assert_eq!(weight.len(), self.weight_len());
        debug_assert_eq!(bias.len(), self.out_channels);
        let (h, w) = (x.height(), x.width());
        let (ho, wo) = self.output_dims(h, w);
        let mut out = LatentGrid::zeros(ho, wo, self.out_channels);
        let xd = x.data();
        let od = out.data_mut();
        for oy in 0..ho {
            for ox in 0..wo {
                let obase = (oy * wo + ox) * self.out_channels;
                od[obase..obase + self.out_channels].copy_from_slice(bias);
                for ky in 0..self.kernel {
                    let Some(iy) = self.source(oy, ky, h) else { continue };
                    for kx in 0..self.kernel {
                        let Some(ix) = self.source(ox, kx, w) else { continue };
                        let ibase = (iy * w + ix) * self.in_channels;
                        for o in 0..self.out_channels {
                            let mut acc = 0.0;
                            for i in 0..self.in_channels {
                                acc += weight[self.w_index(o, i, ky, kx)] * xd[ibase + i];
                            }
                            od[obase + o] += acc;
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight and bias gradients into `d_weight` / `d_bias` and
    /// returns the gradient with respect to the input when `want_input` is set.
    pub fn backward(
        &self,
        x: &LatentGrid,
        weight: &[f64],
        d_out: &LatentGrid,
        d_weight: Option<(&mut [f64], &mut [f64])>,
        want_input: bool,
    ) -> Option<LatentGrid> {
        let (h, w) = (x.height(), x.width());
        let (ho, wo) = (d_out.height(), d_out.width());
        let xd = x.data();
        let dd = d_out.data();
        let mut d_x = want_input.then(|| LatentGrid::zeros(h, w, self.in_channels));
        let mut d_params = d_weight;
        for oy in 0..ho {
            for ox in 0..wo {
                let obase = (oy * wo + ox) * self.out_channels;
                if let Some((_, db)) = d_params.as_mut() {
                    for o in 0..self.out_channels {
                        db[o] += dd[obase + o];
                    }
                }
                for ky in 0..self.kernel {
                    let Some(iy) = self.source(oy, ky, h) else { continue };
                    for kx in 0..self.kernel {
                        let Some(ix) = self.source(ox, kx, w) else { continue };
                        let ibase = (iy * w + ix) * self.in_channels;
                        for o in 0..self.out_channels {
                            let g = dd[obase + o];
                            if g == 0.0 {
                                continue;
                            }
                            if let Some((dw, _)) = d_params.as_mut() {
                                for i in 0..self.in_channels {
                                    dw[self.w_index(o, i, ky, kx)] += g * xd[ibase + i];
                                }
                            }
                            if let Some(dx) = d_x.as_mut() {
                                let dxd = dx.data_mut();
                                for i in 0..self.in_channels {
                                    dxd[ibase + i] += g * weight[self.w_index(o, i, ky, kx)];
                                }
                            }
                        }
                    }
                }
            }
        }
        d_x
    }
}

/// `tanh` applied elementwise.
pub fn tanh(x: &LatentGrid) -> LatentGrid {
    x.map(f64::tanh)
}

/// Backward of `y = tanh(x)` given the forward output `y`.
pub fn tanh_backward(y: &LatentGrid, d_y: &LatentGrid) -> LatentGrid {
    y.zip_with(d_y, "tanh_backward", |y, g| g * (1.0 - y * y))
        .expect("tanh backward shapes agree by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(conv: &Conv2d, x: &LatentGrid, w: &[f64], b: &[f64], probe: &LatentGrid) -> f64 {
        let y = conv.forward(x, w, b);
        y.data().iter().zip(probe.data()).map(|(a, p)| a * p).sum()
    }

    // Central-difference check of every parameter and input element.
    fn check(conv: Conv2d, h: usize, w: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = LatentGrid::randn(h, w, conv.in_channels, &mut rng);
        let weight = LatentGrid::randn(conv.weight_len(), 1, 1, &mut rng).into_vec();
        let bias = LatentGrid::randn(conv.out_channels, 1, 1, &mut rng).into_vec();
        let (ho, wo) = conv.output_dims(h, w);
        let probe = LatentGrid::randn(ho, wo, conv.out_channels, &mut rng);

        let mut dw = vec![0.0; weight.len()];
        let mut db = vec![0.0; bias.len()];
        let dx = conv
            .backward(&x, &weight, &probe, Some((&mut dw, &mut db)), true)
            .unwrap();

        let eps = 1e-6;
        for k in 0..weight.len() {
            let (mut p, mut m) = (weight.clone(), weight.clone());
            p[k] += eps;
            m[k] -= eps;
            let fd = (loss(&conv, &x, &p, &bias, &probe) - loss(&conv, &x, &m, &bias, &probe))
                / (2.0 * eps);
            assert!((fd - dw[k]).abs() < 1e-6, "weight {k}: fd {fd} vs {}", dw[k]);
        }
        for k in 0..bias.len() {
            let (mut p, mut m) = (bias.clone(), bias.clone());
            p[k] += eps;
            m[k] -= eps;
            let fd = (loss(&conv, &x, &weight, &p, &probe) - loss(&conv, &x, &weight, &m, &probe))
                / (2.0 * eps);
            assert!((fd - db[k]).abs() < 1e-6);
        }
        for k in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p.data_mut()[k] += eps;
            m.data_mut()[k] -= eps;
            let fd = (loss(&conv, &p, &weight, &bias, &probe)
                - loss(&conv, &m, &weight, &bias, &probe))
                / (2.0 * eps);
            assert!((fd - dx.data()[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn same_conv_gradients_match_finite_differences() {
        check(Conv2d::same3x3(2, 3), 4, 5);
    }

    #[test]
    fn strided_conv_gradients_match_finite_differences() {
        check(Conv2d::down3x3(3, 2), 6, 6);
    }

    #[test]
    fn pointwise_conv_gradients_match_finite_differences() {
        check(Conv2d::pointwise(3, 2), 3, 3);
    }

    #[test]
    fn strided_output_halves_even_inputs() {
        assert_eq!(Conv2d::down3x3(3, 8).output_dims(64, 64), (32, 32));
        assert_eq!(Conv2d::down3x3(3, 8).output_dims(8, 8), (4, 4));
    }
}
