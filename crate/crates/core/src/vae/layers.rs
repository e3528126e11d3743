//! Convolution, transposed convolution and dense layers with explicit
//! backward passes.
//!
//! Activations use a channel-major batch layout `[C, N, H, W]`, which makes
//! every convolution a single GEMM over the whole batch. All spatial layers
//! use kernel 4, stride 2, padding 1: convolutions halve H and W, transposed
//! convolutions double them.

use rand::Rng;

use super::scalar::{gemm, Real};

pub const KERNEL: usize = 4;
const KK: usize = KERNEL * KERNEL;

/// Unfolds `[c, n, h, w]` into columns `[c·16, n·(h/2)·(w/2)]`.
pub fn im2col<T: Real>(x: &[T], c: usize, n: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let p = n * ho * wo;
    let mut cols = vec![T::zero(); c * KK * p];
    for ci in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[((ci * KK) + ky * KERNEL + kx) * p..][..p];
                for b in 0..n {
                    let src = &x[(ci * n + b) * h * w..][..h * w];
                    for oy in 0..ho {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * w..][..w];
                        let dst = &mut row[(b * ho + oy) * wo..][..wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters columns back onto `[c, n, h, w]`.
pub fn col2im<T: Real>(cols: &[T], c: usize, n: usize, h: usize, w: usize) -> Vec<T> {
    let (ho, wo) = (h / 2, w / 2);
    let p = n * ho * wo;
    let mut x = vec![T::zero(); c * n * h * w];
    for ci in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[((ci * KK) + ky * KERNEL + kx) * p..][..p];
                for b in 0..n {
                    let dst = &mut x[(ci * n + b) * h * w..][..h * w];
                    for oy in 0..ho {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * w..][..w];
                        let src = &row[(b * ho + oy) * wo..][..wo];
                        for (ox, s) in src.iter().enumerate() {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                dst_row[ix as usize] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

fn uniform_init<T: Real>(rng: &mut impl Rng, len: usize, fan_in: usize) -> Vec<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..len)
        .map(|_| T::lit(rng.random_range(-bound..bound)))
        .collect()
}

/// Adds `bias[c]` to every element of channel `c` in a `[c, rest]` buffer.
fn add_channel_bias<T: Real>(out: &mut [T], bias: &[T]) {
    let per = out.len() / bias.len();
    for (chunk, &b) in out.chunks_exact_mut(per).zip(bias) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_channel_sums<T: Real>(grad: &[T], db: &mut [T]) {
    let per = grad.len() / db.len();
    for (chunk, d) in grad.chunks_exact(per).zip(db.iter_mut()) {
        *d += chunk.iter().copied().sum::<T>();
    }
}

/// Stride-2 convolution; weight `[out, in, 4, 4]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_channels * KK;
        Self {
            in_channels,
            out_channels,
            weight: uniform_init(rng, out_channels * fan_in, fan_in),
            bias: uniform_init(rng, out_channels, fan_in),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
            ..*self
        }
    }

    /// Returns `(output [out, n, h/2, w/2], input columns)`.
    pub fn forward(&self, x: &[T], n: usize, h: usize, w: usize) -> (Vec<T>, Vec<T>) {
        let cols = im2col(x, self.in_channels, n, h, w);
        let p = n * (h / 2) * (w / 2);
        let k = self.in_channels * KK;
        let mut out = vec![T::zero(); self.out_channels * p];
        gemm(self.out_channels, k, p, &self.weight, false, &cols, false, T::zero(), &mut out);
        add_channel_bias(&mut out, &self.bias);
        (out, cols)
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient when `need_input` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        dout: &[T],
        cols: &[T],
        n: usize,
        h: usize,
        w: usize,
        grads: Option<&mut Conv2d<T>>,
        need_input: bool,
    ) -> Option<Vec<T>> {
        let p = n * (h / 2) * (w / 2);
        let k = self.in_channels * KK;
        if let Some(g) = grads {
            gemm(self.out_channels, p, k, dout, false, cols, true, T::one(), &mut g.weight);
            accumulate_channel_sums(dout, &mut g.bias);
        }
        if !need_input {
            return None;
        }
        let mut dcols = vec![T::zero(); k * p];
        gemm(k, self.out_channels, p, &self.weight, true, dout, false, T::zero(), &mut dcols);
        Some(col2im(&dcols, self.in_channels, n, h, w))
    }
}

/// Stride-2 transposed convolution; weight `[in, out, 4, 4]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Self {
        let fan_in = out_channels * KK;
        Self {
            in_channels,
            out_channels,
            weight: uniform_init(rng, in_channels * out_channels * KK, fan_in),
            bias: uniform_init(rng, out_channels, fan_in),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
            ..*self
        }
    }

    /// Input `[in, n, h, w]` to output `[out, n, 2h, 2w]`.
    pub fn forward(&self, x: &[T], n: usize, h: usize, w: usize) -> Vec<T> {
        let p = n * h * w;
        let k = self.out_channels * KK;
        let mut cols = vec![T::zero(); k * p];
        gemm(k, self.in_channels, p, &self.weight, true, x, false, T::zero(), &mut cols);
        let mut out = col2im(&cols, self.out_channels, n, 2 * h, 2 * w);
        add_channel_bias(&mut out, &self.bias);
        out
    }

    /// `x` is the forward input; `dout` is `[out, n, 2h, 2w]`.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        dout: &[T],
        x: &[T],
        n: usize,
        h: usize,
        w: usize,
        grads: Option<&mut ConvTranspose2d<T>>,
        need_input: bool,
    ) -> Option<Vec<T>> {
        let p = n * h * w;
        let k = self.out_channels * KK;
        let dcols = im2col(dout, self.out_channels, n, 2 * h, 2 * w);
        if let Some(g) = grads {
            gemm(self.in_channels, p, k, x, false, &dcols, true, T::one(), &mut g.weight);
            accumulate_channel_sums(dout, &mut g.bias);
        }
        if !need_input {
            return None;
        }
        let mut dx = vec![T::zero(); self.in_channels * p];
        gemm(self.in_channels, k, p, &self.weight, false, &dcols, false, T::zero(), &mut dx);
        Some(dx)
    }
}

/// Dense layer `y = x·Wᵀ + b`; weight `[out, in]`, activations `[n, features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        Self {
            in_features,
            out_features,
            weight: uniform_init(rng, in_features * out_features, in_features),
            bias: uniform_init(rng, out_features, in_features),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
            ..*self
        }
    }

    pub fn forward(&self, x: &[T], n: usize) -> Vec<T> {
        let mut y = vec![T::zero(); n * self.out_features];
        gemm(n, self.in_features, self.out_features, x, false, &self.weight, true, T::zero(), &mut y);
        for row in y.chunks_exact_mut(self.out_features) {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += *b;
            }
        }
        y
    }

    pub fn backward(
        &self,
        dy: &[T],
        x: &[T],
        n: usize,
        grads: Option<&mut Linear<T>>,
        need_input: bool,
    ) -> Option<Vec<T>> {
        if let Some(g) = grads {
            gemm(self.out_features, n, self.in_features, dy, true, x, false, T::one(), &mut g.weight);
            for row in dy.chunks_exact(self.out_features) {
                for (d, v) in g.bias.iter_mut().zip(row) {
                    *d += *v;
                }
            }
        }
        if !need_input {
            return None;
        }
        let mut dx = vec![T::zero(); n * self.in_features];
        gemm(n, self.out_features, self.in_features, dy, false, &self.weight, false, T::zero(), &mut dx);
        Some(dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::derive_rng;

    /// Direct (loop) stride-2 convolution used as an independent oracle.
    fn conv_direct(layer: &Conv2d<f64>, x: &[f64], n: usize, h: usize, w: usize) -> Vec<f64> {
        let (ho, wo) = (h / 2, w / 2);
        let mut out = vec![0.0; layer.out_channels * n * ho * wo];
        for co in 0..layer.out_channels {
            for b in 0..n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = layer.bias[co];
                        for ci in 0..layer.in_channels {
                            for ky in 0..4 {
                                for kx in 0..4 {
                                    let iy = (2 * oy + ky) as isize - 1;
                                    let ix = (2 * ox + kx) as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += layer.weight[((co * layer.in_channels + ci) * 4 + ky) * 4 + kx]
                                        * x[((ci * n + b) * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        out[((co * n + b) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_gemm_matches_direct_loops() {
        let mut rng = derive_rng(1, "conv-test", &[]);
        let layer = Conv2d::<f64>::new(3, 5, &mut rng);
        let (n, h, w) = (2, 8, 6);
        let x: Vec<f64> = (0..3 * n * h * w).map(|i| ((i * 37 % 17) as f64 - 8.0) / 7.0).collect();
        let (out, _) = layer.forward(&x, n, h, w);
        let want = conv_direct(&layer, &x, n, h, w);
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let (c, n, h, w) = (2, 3, 6, 8);
        let x: Vec<f64> = (0..c * n * h * w).map(|i| (i as f64 * 0.13).sin()).collect();
        let cols = im2col(&x, c, n, h, w);
        let y: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.29).cos()).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let back = col2im(&y, c, n, h, w);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn transposed_conv_doubles_spatial_size() {
        let mut rng = derive_rng(2, "convt-test", &[]);
        let layer = ConvTranspose2d::<f64>::new(4, 2, &mut rng);
        let x = vec![0.5; 4 * 3 * 5 * 7];
        let out = layer.forward(&x, 3, 5, 7);
        assert_eq!(out.len(), 2 * 3 * 10 * 14);
    }
}
