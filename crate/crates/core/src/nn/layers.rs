//! Forward and backward kernels for the layer types the backbones use.

use super::Scalar;

/// Activation shape in channel-major order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width }
    }

    pub fn flat(len: usize) -> Self {
        Self { channels: len, height: 1, width: 1 }
    }

    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn plane(&self) -> usize {
        self.height * self.width
    }
}

/// 3x3 convolution, stride 1, zero padding 1, followed by ReLU.
/// Weights are laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv3x3<T> {
    pub fn forward(&self, input: &[T], shape: Shape) -> Vec<T> {
        let (h, w) = (shape.height, shape.width);
        let plane = shape.plane();
        let mut out = vec![T::zero(); self.out_channels * plane];
        for oc in 0..self.out_channels {
            let dst = &mut out[oc * plane..(oc + 1) * plane];
            dst.fill(self.bias[oc]);
            for ic in 0..self.in_channels {
                let src = &input[ic * plane..(ic + 1) * plane];
                let k = &self.weight[(oc * self.in_channels + ic) * 9..][..9];
                for ky in 0..3 {
                    let (y_lo, y_hi) = valid_range(h, ky);
                    for kx in 0..3 {
                        let wv = k[ky * 3 + kx];
                        let (x_lo, x_hi) = valid_range(w, kx);
                        for y in y_lo..y_hi {
                            let sy = y + ky - 1;
                            let d = &mut dst[y * w + x_lo..y * w + x_hi];
                            let s = &src[sy * w + x_lo + kx - 1..sy * w + x_hi + kx - 1];
                            for (o, &i) in d.iter_mut().zip(s) {
                                *o = *o + wv * i;
                            }
                        }
                    }
                }
            }
            for v in dst.iter_mut() {
                if *v < T::zero() {
                    *v = T::zero();
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients and, when `grad_input` is given,
    /// the gradient with respect to the layer input.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        input: &[T],
        output: &[T],
        grad_output: &[T],
        shape: Shape,
        grad_weight: &mut [T],
        grad_bias: &mut [T],
        mut grad_input: Option<&mut [T]>,
    ) {
        let (h, w) = (shape.height, shape.width);
        let plane = shape.plane();
        let mut dz = vec![T::zero(); plane];
        for oc in 0..self.out_channels {
            let out_plane = &output[oc * plane..(oc + 1) * plane];
            let g_plane = &grad_output[oc * plane..(oc + 1) * plane];
            let mut any = false;
            for ((d, &o), &g) in dz.iter_mut().zip(out_plane).zip(g_plane) {
                *d = if o > T::zero() { g } else { T::zero() };
                any |= *d != T::zero();
            }
            if !any {
                continue;
            }
            grad_bias[oc] = grad_bias[oc] + dz.iter().copied().fold(T::zero(), |a, b| a + b);
            for ic in 0..self.in_channels {
                let src = &input[ic * plane..(ic + 1) * plane];
                let base = (oc * self.in_channels + ic) * 9;
                for ky in 0..3 {
                    let (y_lo, y_hi) = valid_range(h, ky);
                    for kx in 0..3 {
                        let (x_lo, x_hi) = valid_range(w, kx);
                        let mut acc = T::zero();
                        for y in y_lo..y_hi {
                            let sy = y + ky - 1;
                            let d = &dz[y * w + x_lo..y * w + x_hi];
                            let s = &src[sy * w + x_lo + kx - 1..sy * w + x_hi + kx - 1];
                            for (&a, &b) in d.iter().zip(s) {
                                acc = acc + a * b;
                            }
                        }
                        grad_weight[base + ky * 3 + kx] = grad_weight[base + ky * 3 + kx] + acc;
                    }
                }
                if let Some(gi) = grad_input.as_deref_mut() {
                    let gi_plane = &mut gi[ic * plane..(ic + 1) * plane];
                    for ky in 0..3 {
                        let (y_lo, y_hi) = valid_range(h, ky);
                        for kx in 0..3 {
                            let wv = self.weight[base + ky * 3 + kx];
                            let (x_lo, x_hi) = valid_range(w, kx);
                            for y in y_lo..y_hi {
                                let sy = y + ky - 1;
                                let d = &dz[y * w + x_lo..y * w + x_hi];
                                let g = &mut gi_plane[sy * w + x_lo + kx - 1..sy * w + x_hi + kx - 1];
                                for (o, &a) in g.iter_mut().zip(d) {
                                    *o = *o + wv * a;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Output positions `[lo, hi)` along one axis whose kernel tap `k` lands inside the input.
fn valid_range(len: usize, k: usize) -> (usize, usize) {
    let lo = if k == 0 { 1 } else { 0 };
    let hi = if k == 2 { len.saturating_sub(1) } else { len };
    (lo.min(hi), hi)
}

/// Fully connected layer, weights laid out `[out][in]`, optional ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub relu: bool,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn forward(&self, input: &[T]) -> Vec<T> {
        self.weight
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, &b)| {
                let z = row.iter().zip(input).fold(b, |acc, (&w, &x)| acc + w * x);
                if self.relu && z < T::zero() {
                    T::zero()
                } else {
                    z
                }
            })
            .collect()
    }

    pub fn backward(
        &self,
        input: &[T],
        output: &[T],
        grad_output: &[T],
        grad_weight: &mut [T],
        grad_bias: &mut [T],
        grad_input: Option<&mut [T]>,
    ) {
        let dz: Vec<T> = grad_output
            .iter()
            .zip(output)
            .map(|(&g, &o)| if self.relu && o <= T::zero() { T::zero() } else { g })
            .collect();
        for (o, &d) in dz.iter().enumerate() {
            if d == T::zero() {
                continue;
            }
            grad_bias[o] = grad_bias[o] + d;
            let gw = &mut grad_weight[o * self.inputs..(o + 1) * self.inputs];
            for (g, &x) in gw.iter_mut().zip(input) {
                *g = *g + d * x;
            }
        }
        if let Some(gi) = grad_input {
            for (o, &d) in dz.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
                for (g, &wv) in gi.iter_mut().zip(row) {
                    *g = *g + d * wv;
                }
            }
        }
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
/// Returns the pooled values and, per output, the flat index of the winning input.
pub fn max_pool2<T: Scalar>(input: &[T], shape: Shape) -> (Vec<T>, Vec<usize>) {
    let (oh, ow) = (shape.height / 2, shape.width / 2);
    let mut out = Vec::with_capacity(shape.channels * oh * ow);
    let mut idx = Vec::with_capacity(out.capacity());
    for c in 0..shape.channels {
        let base = c * shape.plane();
        for y in 0..oh {
            for x in 0..ow {
                let mut best = base + 2 * y * shape.width + 2 * x;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * shape.width + 2 * x + dx;
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                idx.push(best);
            }
        }
    }
    (out, idx)
}

/// Bin boundaries of adaptive pooling from `len` inputs to `bins` outputs.
fn adaptive_bins(len: usize, bins: usize) -> Vec<(usize, usize)> {
    (0..bins).map(|i| (i * len / bins, ((i + 1) * len).div_ceil(bins))).collect()
}

/// Adaptive average pooling to a fixed `side`x`side` grid per channel.
pub fn adaptive_avg_pool<T: Scalar>(input: &[T], shape: Shape, side: usize) -> Vec<T> {
    let rows = adaptive_bins(shape.height, side);
    let cols = adaptive_bins(shape.width, side);
    let mut out = Vec::with_capacity(shape.channels * side * side);
    for c in 0..shape.channels {
        let base = c * shape.plane();
        for &(y0, y1) in &rows {
            for &(x0, x1) in &cols {
                let mut acc = T::zero();
                for y in y0..y1 {
                    for x in x0..x1 {
                        acc = acc + input[base + y * shape.width + x];
                    }
                }
                out.push(acc / T::from((y1 - y0) * (x1 - x0)).unwrap());
            }
        }
    }
    out
}

pub fn adaptive_avg_pool_backward<T: Scalar>(grad_output: &[T], shape: Shape, side: usize, grad_input: &mut [T]) {
    let rows = adaptive_bins(shape.height, side);
    let cols = adaptive_bins(shape.width, side);
    let mut k = 0;
    for c in 0..shape.channels {
        let base = c * shape.plane();
        for &(y0, y1) in &rows {
            for &(x0, x1) in &cols {
                let g = grad_output[k] / T::from((y1 - y0) * (x1 - x0)).unwrap();
                k += 1;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let i = base + y * shape.width + x;
                        grad_input[i] = grad_input[i] + g;
                    }
                }
            }
        }
    }
}
