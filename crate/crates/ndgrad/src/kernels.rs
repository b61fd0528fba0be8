//! Dense and SAME-padded convolution kernels on NHWC batches.
//!
//! Convolution kernels are stored `[kh, kw, c_in, c_out]`. A transposed
//! convolution with kernel `[kh, kw, c_out, c_in]` is the exact adjoint of the
//! convolution with the same kernel, mapping `[h, w]` back to `[h*s, w*s]`.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Padding of one spatial axis under the SAME rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamePad {
    pub out: usize,
    /// Zeros before the first input element; the remainder goes after.
    pub before: usize,
}

pub fn same_pad(input: usize, kernel: usize, stride: usize) -> SamePad {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    SamePad {
        out,
        before: total / 2,
    }
}

/// Geometry of one convolution, shared by forward and backward passes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_c: usize,
    pub stride: usize,
    pub rows: SamePad,
    pub cols: SamePad,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize) -> Result<Self> {
        let mismatch = || Error::ShapeMismatch {
            op: "conv2d_same",
            lhs: input.to_vec(),
            rhs: kernel.to_vec(),
        };
        if input.len() != 4 || kernel.len() != 4 || stride == 0 {
            return Err(mismatch());
        }
        let (batch, in_h, in_w, in_c) = (input[0], input[1], input[2], input[3]);
        let (k_h, k_w, k_c, out_c) = (kernel[0], kernel[1], kernel[2], kernel[3]);
        if k_c != in_c || k_h > in_h || k_w > in_w {
            return Err(mismatch());
        }
        Ok(Self {
            batch,
            in_h,
            in_w,
            in_c,
            k_h,
            k_w,
            out_c,
            stride,
            rows: same_pad(in_h, k_h, stride),
            cols: same_pad(in_w, k_w, stride),
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.rows.out, self.cols.out, self.out_c]
    }

    pub fn in_shape(&self) -> [usize; 4] {
        [self.batch, self.in_h, self.in_w, self.in_c]
    }

    fn patch_len(&self) -> usize {
        self.k_h * self.k_w * self.in_c
    }

    fn out_positions(&self) -> usize {
        self.batch * self.rows.out * self.cols.out
    }

    /// Input coordinate for output index `o` and kernel tap `k`, if inside the image.
    #[inline]
    fn src(o: usize, k: usize, pad: SamePad, stride: usize, len: usize) -> Option<usize> {
        let p = (o * stride + k).checked_sub(pad.before)?;
        (p < len).then_some(p)
    }

    /// Valid kernel taps `[k0, k1)` for output index `o` and the first input
    /// coordinate they hit; taps in range read consecutive inputs.
    #[inline]
    fn tap_range(o: usize, k: usize, pad: SamePad, stride: usize, len: usize) -> (usize, usize, usize) {
        let start = o * stride;
        let k0 = pad.before.saturating_sub(start).min(k);
        let k1 = (len + pad.before).saturating_sub(start).min(k).max(k0);
        (k0, k1, start + k0 - pad.before.min(start + k0))
    }
}

/// Unfold every receptive field into a row: `[positions, kh*kw*c_in]`.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.patch_len();
    let mut cols = vec![T::zero(); g.out_positions() * patch];
    let image_len = g.in_h * g.in_w * g.in_c;
    for (n, block) in cols.chunks_exact_mut(g.rows.out * g.cols.out * patch).enumerate() {
        let image = &x[n * image_len..(n + 1) * image_len];
        for oy in 0..g.rows.out {
            for ox in 0..g.cols.out {
                let row = oy * g.cols.out + ox;
                let dst = &mut block[row * patch..(row + 1) * patch];
                let (kx0, kx1, ix0) = ConvGeom::tap_range(ox, g.k_w, g.cols, g.stride, g.in_w);
                let span = (kx1 - kx0) * g.in_c;
                if span == 0 {
                    continue;
                }
                for ky in 0..g.k_h {
                    let Some(iy) = ConvGeom::src(oy, ky, g.rows, g.stride, g.in_h) else {
                        continue;
                    };
                    let s = (iy * g.in_w + ix0) * g.in_c;
                    let d = (ky * g.k_w + kx0) * g.in_c;
                    dst[d..d + span].copy_from_slice(&image[s..s + span]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add rows back into an image batch.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.patch_len();
    let image_len = g.in_h * g.in_w * g.in_c;
    let mut x = vec![T::zero(); g.batch * image_len];
    for (n, image) in x.chunks_exact_mut(image_len).enumerate() {
        let block = &cols[n * g.rows.out * g.cols.out * patch..];
        for oy in 0..g.rows.out {
            for ox in 0..g.cols.out {
                let row = oy * g.cols.out + ox;
                let src = &block[row * patch..(row + 1) * patch];
                let (kx0, kx1, ix0) = ConvGeom::tap_range(ox, g.k_w, g.cols, g.stride, g.in_w);
                let span = (kx1 - kx0) * g.in_c;
                if span == 0 {
                    continue;
                }
                for ky in 0..g.k_h {
                    let Some(iy) = ConvGeom::src(oy, ky, g.rows, g.stride, g.in_h) else {
                        continue;
                    };
                    let d = (iy * g.in_w + ix0) * g.in_c;
                    let s = (ky * g.k_w + kx0) * g.in_c;
                    for (o, &v) in image[d..d + span].iter_mut().zip(&src[s..s + span]) {
                        *o += v;
                    }
                }
            }
        }
    }
    x
}

/// `out[m,n] (+)= a[m,k] · b[k,n]`, all row-major.
pub fn matmul<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, k as isize, 1, b, n as isize, 1, beta, out, n as isize, 1);
}

/// `out[m,n] (+)= a[m,k] · b[n,k]ᵀ`.
pub fn matmul_bt<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, k as isize, 1, b, 1, k as isize, beta, out, n as isize, 1);
}

/// `out[m,n] (+)= a[k,m]ᵀ · b[k,n]`.
pub fn matmul_at<T: Real>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), a, 1, m as isize, b, n as isize, 1, beta, out, n as isize, 1);
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_exact_mut(bias.len()) {
        for (o, &b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn bias_grad<T: Real>(dy: &[T], channels: usize) -> Vec<T> {
    let mut db = vec![T::zero(); channels];
    for row in dy.chunks_exact(channels) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    db
}

fn check_bias(bias: Option<&Tensor<impl Real>>, channels: usize, op: &'static str) -> Result<()> {
    match bias {
        Some(b) if b.len() != channels => Err(Error::ShapeMismatch {
            op,
            lhs: b.shape().to_vec(),
            rhs: vec![channels],
        }),
        _ => Ok(()),
    }
}

/// Batched SAME convolution. Returns the output and the unfolded input (kept for the backward pass).
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<(Tensor<T>, ConvGeom, Vec<T>)> {
    let g = ConvGeom::new(x.shape(), kernel.shape(), stride)?;
    check_bias(bias, g.out_c, "conv2d_same")?;
    let cols = im2col(x.data(), &g);
    let mut out = vec![T::zero(); g.out_positions() * g.out_c];
    matmul(&cols, kernel.data(), &mut out, g.out_positions(), g.patch_len(), g.out_c, false);
    if let Some(b) = bias {
        add_bias(&mut out, b.data());
    }
    Ok((Tensor::new(g.out_shape().to_vec(), out)?, g, cols))
}

pub struct ConvGrads<T> {
    pub input: Vec<T>,
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
}

pub fn conv2d_backward<T: Real>(g: &ConvGeom, cols: &[T], kernel: &[T], dy: &[T], need_input: bool) -> ConvGrads<T> {
    let positions = g.out_positions();
    let patch = g.patch_len();
    let mut dk = vec![T::zero(); patch * g.out_c];
    matmul_at(cols, dy, &mut dk, patch, positions, g.out_c, false);
    let input = if need_input {
        let mut dcols = vec![T::zero(); positions * patch];
        matmul_bt(dy, kernel, &mut dcols, positions, g.out_c, patch, false);
        col2im(&dcols, g)
    } else {
        Vec::new()
    };
    ConvGrads {
        input,
        kernel: dk,
        bias: bias_grad(dy, g.out_c),
    }
}

/// Geometry of a transposed convolution `[n,h,w,c_in] -> [n,h*s,w*s,c_out]` with kernel
/// `[kh,kw,c_out,c_in]`, expressed as the forward convolution it is the adjoint of.
pub fn conv_transpose_geom(input: &[usize], kernel: &[usize], stride: usize) -> Result<ConvGeom> {
    let mismatch = || Error::ShapeMismatch {
        op: "conv_transpose_same",
        lhs: input.to_vec(),
        rhs: kernel.to_vec(),
    };
    if input.len() != 4 || kernel.len() != 4 || stride == 0 || kernel[3] != input[3] {
        return Err(mismatch());
    }
    let big = [input[0], input[1] * stride, input[2] * stride, kernel[2]];
    let g = ConvGeom::new(&big, kernel, stride).map_err(|_| mismatch())?;
    debug_assert_eq!((g.rows.out, g.cols.out), (input[1], input[2]));
    Ok(g)
}

pub fn conv_transpose_forward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<(Tensor<T>, ConvGeom)> {
    let g = conv_transpose_geom(x.shape(), kernel.shape(), stride)?;
    check_bias(bias, g.in_c, "conv_transpose_same")?;
    let positions = g.out_positions();
    let mut dcols = vec![T::zero(); positions * g.patch_len()];
    matmul_bt(x.data(), kernel.data(), &mut dcols, positions, g.out_c, g.patch_len(), false);
    let mut out = col2im(&dcols, &g);
    if let Some(b) = bias {
        add_bias(&mut out, b.data());
    }
    Ok((Tensor::new(g.in_shape().to_vec(), out)?, g))
}

pub fn conv_transpose_backward<T: Real>(g: &ConvGeom, x: &[T], kernel: &[T], dy: &[T]) -> ConvGrads<T> {
    let positions = g.out_positions();
    let patch = g.patch_len();
    let cols = im2col(dy, g);
    let mut dx = vec![T::zero(); positions * g.out_c];
    matmul(&cols, kernel, &mut dx, positions, patch, g.out_c, false);
    let mut dk = vec![T::zero(); patch * g.out_c];
    matmul_at(&cols, x, &mut dk, patch, positions, g.out_c, false);
    ConvGrads {
        input: dx,
        kernel: dk,
        bias: bias_grad(dy, g.in_c),
    }
}

/// Batched affine map: `[n, in] · [in, out] + b`.
pub fn dense_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (n, input, output) = dense_dims(x.shape(), w.shape())?;
    check_bias(bias, output, "dense")?;
    let mut out = vec![T::zero(); n * output];
    matmul(x.data(), w.data(), &mut out, n, input, output, false);
    if let Some(b) = bias {
        add_bias(&mut out, b.data());
    }
    Tensor::new(vec![n, output], out)
}

pub fn dense_dims(x: &[usize], w: &[usize]) -> Result<(usize, usize, usize)> {
    let mismatch = || Error::ShapeMismatch {
        op: "dense",
        lhs: x.to_vec(),
        rhs: w.to_vec(),
    };
    if w.len() != 2 || x.is_empty() {
        return Err(mismatch());
    }
    let input = w[0];
    let (n, features) = if x.len() == 1 {
        (1, x[0])
    } else {
        (x[0], x[1..].iter().product())
    };
    if features != input {
        return Err(mismatch());
    }
    Ok((n, input, w[1]))
}

/// Single-image SAME convolution on `[h, w, c_in]`, no bias.
pub fn conv2d_same<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "conv2d_same",
            lhs: s.to_vec(),
            rhs: kernel.shape().to_vec(),
        });
    }
    let batched = input.reshape(&[1, s[0], s[1], s[2]])?;
    let (out, g, _) = conv2d_forward(&batched, kernel, None, stride)?;
    out.reshape(&[g.rows.out, g.cols.out, g.out_c])
}

/// Single-vector affine map.
pub fn dense<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let out = dense_forward(input, weights, Some(bias))?;
    out.reshape(&[out.shape()[1]])
}

/// Max-stabilised softmax of one logit vector together with its entropy `-Σ p ln p`.
pub fn softmax_and_entropy<T: Real>(logits: &[T]) -> (Vec<T>, T) {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let log_total = total.ln();
    let mut entropy = T::zero();
    let probs = exps
        .iter()
        .zip(logits)
        .map(|(&e, &l)| {
            let p = e / total;
            if p > T::zero() {
                entropy -= p * (l - max - log_total);
            }
            p
        })
        .collect();
    (probs, entropy)
}

/// Row-wise log-softmax over the last axis of a `[rows, cols]` buffer.
pub fn log_softmax_rows<T: Real>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(cols) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        out.extend(row.iter().map(|&v| v - lse));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_pad_matches_ceil_rule() {
        assert_eq!(same_pad(88, 8, 4), SamePad { out: 22, before: 2 });
        assert_eq!(same_pad(22, 4, 2), SamePad { out: 11, before: 1 });
        assert_eq!(same_pad(11, 3, 1), SamePad { out: 11, before: 1 });
        // odd total padding puts the extra zero after
        assert_eq!(same_pad(4, 2, 1), SamePad { out: 4, before: 0 });
    }

    #[test]
    fn conv_88_stride_4_gives_22() {
        let x = Tensor::<f64>::zeros(&[88, 88, 4]);
        let k = Tensor::<f64>::zeros(&[8, 8, 4, 16]);
        let y = conv2d_same(&x, &k, 4).unwrap();
        assert_eq!(y.shape(), &[22, 22, 16]);
    }

    #[test]
    fn identity_kernel_on_single_pixel() {
        let x = Tensor::new(vec![1, 1, 1], vec![3.5f64]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(conv2d_same(&x, &k, 1).unwrap().data(), &[3.5]);
    }

    #[test]
    fn ones_conv_center_and_corner() {
        let x = Tensor::<f64>::full(&[3, 3, 1], 1.0);
        let k = Tensor::<f64>::full(&[3, 3, 1, 1], 1.0);
        let y = conv2d_same(&x, &k, 1).unwrap();
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_shape_mismatch_names_both_shapes() {
        let x = Tensor::<f64>::zeros(&[5, 5, 3]);
        let k = Tensor::<f64>::zeros(&[3, 3, 2, 4]);
        let msg = conv2d_same(&x, &k, 1).unwrap_err().to_string();
        assert!(msg.contains("[1, 5, 5, 3]") && msg.contains("[3, 3, 2, 4]"), "{msg}");
    }

    #[test]
    fn dense_examples() {
        let zero = Tensor::<f64>::zeros(&[3]);
        let w = Tensor::from_fn(&[3, 2], |i| i as f64);
        assert_eq!(dense(&zero, &w, &Tensor::zeros(&[2])).unwrap().data(), &[0.0, 0.0]);

        let x = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(dense(&x, &eye, &Tensor::zeros(&[3])).unwrap().data(), x.data());

        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 2.0]).unwrap();
        let b = Tensor::new(vec![2], vec![1.0, 1.0]).unwrap();
        assert_eq!(dense(&x, &w, &b).unwrap().data(), &[2.0, 5.0]);

        assert!(dense(&x, &Tensor::zeros(&[3, 2]), &b).is_err());
    }

    #[test]
    fn softmax_uniform_and_peaked() {
        let (p, h) = softmax_and_entropy(&[0.3f64; 4]);
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-12));
        assert!((h - 4f64.ln()).abs() < 1e-12);
        assert!((h - 1.38629).abs() < 1e-5);

        let (p, h) = softmax_and_entropy(&[1000.0f64, 0.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(h.abs() < 1e-12);

        let (a, _) = softmax_and_entropy(&[0.1f64, -2.0, 3.0]);
        let (b, _) = softmax_and_entropy(&[50.1f64, 48.0, 53.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    /// Brute-force transposed convolution: scatter each input pixel through the kernel.
    fn naive_conv_transpose(x: &[f64], xs: [usize; 4], k: &[f64], ks: [usize; 4], s: usize) -> Vec<f64> {
        let (n, h, w, ci) = (xs[0], xs[1], xs[2], xs[3]);
        let (kh, kw, co) = (ks[0], ks[1], ks[2]);
        let (oh, ow) = (h * s, w * s);
        let pr = same_pad(oh, kh, s).before;
        let pc = same_pad(ow, kw, s).before;
        let mut y = vec![0.0; n * oh * ow * co];
        for b in 0..n {
            for iy in 0..h {
                for ix in 0..w {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let oy = (iy * s + ky) as isize - pr as isize;
                            let ox = (ix * s + kx) as isize - pc as isize;
                            if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                continue;
                            }
                            for c_out in 0..co {
                                for c_in in 0..ci {
                                    y[((b * oh + oy as usize) * ow + ox as usize) * co + c_out] += x
                                        [((b * h + iy) * w + ix) * ci + c_in]
                                        * k[((ky * kw + kx) * co + c_out) * ci + c_in];
                                }
                            }
                        }
                    }
                }
            }
        }
        y
    }

    #[test]
    fn transpose_conv_matches_scatter_oracle() {
        let xs = [2, 3, 3, 2];
        let ks = [4, 4, 3, 2];
        let x = Tensor::from_fn(&xs, |i| ((i * 7) % 11) as f64 - 5.0);
        let k = Tensor::from_fn(&ks, |i| ((i * 5) % 13) as f64 * 0.1 - 0.6);
        let (y, _) = conv_transpose_forward(&x, &k, None, 2).unwrap();
        assert_eq!(y.shape(), &[2, 6, 6, 3]);
        let oracle = naive_conv_transpose(x.data(), xs, k.data(), ks, 2);
        for (a, b) in y.data().iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
