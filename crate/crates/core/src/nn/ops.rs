use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use super::gemm::{gemm_rows, Rows};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Spatial size of every convolution kernel.
pub const KERNEL: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `out_ch x in_ch x 5 x 5`, row-major.
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernels: vec![0.0; out_ch * in_ch * KERNEL * KERNEL],
            bias: vec![0.0; out_ch],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernels.len() != self.out_ch * self.in_ch * KERNEL * KERNEL
            || self.bias.len() != self.out_ch
        {
            return Err(Error::Shape(format!(
                "conv {}->{} has {} kernel values and {} biases",
                self.in_ch,
                self.out_ch,
                self.kernels.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseParams {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.inputs * self.outputs || self.bias.len() != self.outputs {
            return Err(Error::Shape(format!(
                "dense {}->{} has {} weights and {} biases",
                self.inputs,
                self.outputs,
                self.weights.len(),
                self.bias.len()
            )));
        }
        Ok(())
    }
}

// Slice kernels. Every reduction runs in a fixed order, so results are
// bit-reproducible regardless of how the compiler vectorizes the loops.

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product over four interleaved partial sums, combined at the end.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for l in 0..4 {
            lanes[l] += a[4 * i + l] * b[4 * i + l];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

thread_local! {
    static SCRATCH: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

/// Reusable per-thread buffer of at least `len` values. Contents are
/// unspecified; callers overwrite every element they read back.
fn scratch(len: usize) -> Vec<f64> {
    let mut v = SCRATCH.with(|pool| pool.borrow_mut().pop()).unwrap_or_default();
    if v.len() < len {
        v.resize(len, 0.0);
    }
    v
}

fn recycle(v: Vec<f64>) {
    SCRATCH.with(|pool| pool.borrow_mut().push(v));
}

/// Unrolls every 5x5 receptive field of a `c x h x w` input into a row-major
/// `(c*25) x (oh*ow)` matrix whose row stride is a multiple of 8. Padding
/// columns are left unspecified.
fn im2col(input: &[f64], c: usize, h: usize, w: usize) -> (Vec<f64>, usize) {
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    let stride = (oh * ow).next_multiple_of(8);
    let mut col = scratch(c * KERNEL * KERNEL * stride);
    for ic in 0..c {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut col[((ic * KERNEL + ky) * KERNEL + kx) * stride..];
                for y in 0..oh {
                    let src = &input[ic * h * w + (y + ky) * w + kx..][..ow];
                    row[y * ow..(y + 1) * ow].copy_from_slice(src);
                }
            }
        }
    }
    (col, stride)
}

/// Valid cross-correlation of one `in_ch x h x w` example. For each output
/// pixel the sum runs over input channel, kernel row, kernel column (all
/// ascending) and the bias is added last.
pub(crate) fn conv_forward_into(input: &[f64], h: usize, w: usize, p: &ConvParams, out: &mut [f64]) {
    let pixels = (h - KERNEL + 1) * (w - KERNEL + 1);
    let taps = p.in_ch * KERNEL * KERNEL;
    let (col, stride) = im2col(input, p.in_ch, h, w);
    let (mut ao, mut bo) = (Vec::new(), Vec::new());
    let kernels = Rows::strided(&p.kernels, &mut ao, p.out_ch, taps);
    let col_rows = Rows::strided(&col, &mut bo, taps, stride);
    let out = &mut out[..p.out_ch * pixels];
    gemm_rows::<4, 8>(taps, &kernels, &col_rows, pixels, out);
    recycle(col);
    for (plane, &b) in out.chunks_exact_mut(pixels).zip(&p.bias) {
        for v in plane {
            *v += b;
        }
    }
}

/// Accumulates kernel and bias gradients and, when requested, the input
/// gradient of one example.
pub(crate) fn conv_backward_acc(
    input: &[f64],
    h: usize,
    w: usize,
    p: &ConvParams,
    grad_out: &[f64],
    grad_kernels: &mut [f64],
    grad_bias: &mut [f64],
    grad_input: Option<&mut [f64]>,
) {
    const NR_K: usize = 4;
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    let pixels = oh * ow;
    let taps = p.in_ch * KERNEL * KERNEL;
    let grad_out = &grad_out[..p.out_ch * pixels];
    for (gb, g) in grad_bias.iter_mut().zip(grad_out.chunks_exact(pixels)) {
        *gb += g.iter().sum::<f64>();
    }

    // Kernel gradient, computed transposed: (taps x pixels) . (pixels x out_ch).
    let (col, stride) = im2col(input, p.in_ch, h, w);
    let oc_stride = p.out_ch.next_multiple_of(NR_K);
    let mut grad_t = scratch(pixels * oc_stride);
    for (oc, g) in grad_out.chunks_exact(pixels).enumerate() {
        for (px, &v) in g.iter().enumerate() {
            grad_t[px * oc_stride + oc] = v;
        }
    }
    let (mut ao, mut bo) = (Vec::new(), Vec::new());
    let col_rows = Rows::strided(&col, &mut ao, taps, stride);
    let grad_rows = Rows::strided(&grad_t, &mut bo, pixels, oc_stride);
    let mut kernel_t = scratch(taps * p.out_ch);
    gemm_rows::<8, NR_K>(pixels, &col_rows, &grad_rows, p.out_ch, &mut kernel_t[..taps * p.out_ch]);
    for t in 0..taps {
        for oc in 0..p.out_ch {
            grad_kernels[oc * taps + t] += kernel_t[t * p.out_ch + oc];
        }
    }
    recycle(kernel_t);
    recycle(grad_t);
    recycle(col);

    if let Some(gin) = grad_input {
        // Gradient w.r.t. the unrolled input, folded back onto the image.
        let mut kernels_t = scratch(taps * p.out_ch);
        for oc in 0..p.out_ch {
            for t in 0..taps {
                kernels_t[t * p.out_ch + oc] = p.kernels[oc * taps + t];
            }
        }
        let g_stride = pixels.next_multiple_of(8);
        let mut g_padded = scratch(p.out_ch * g_stride);
        for (oc, g) in grad_out.chunks_exact(pixels).enumerate() {
            g_padded[oc * g_stride..oc * g_stride + pixels].copy_from_slice(g);
        }
        let kt_rows = Rows::strided(&kernels_t, &mut ao, taps, p.out_ch);
        let g_rows = Rows::strided(&g_padded, &mut bo, p.out_ch, g_stride);
        let mut grad_col = scratch(taps * pixels);
        gemm_rows::<4, 8>(p.out_ch, &kt_rows, &g_rows, pixels, &mut grad_col[..taps * pixels]);
        for ic in 0..p.in_ch {
            let plane = &mut gin[ic * h * w..(ic + 1) * h * w];
            for ky in 0..KERNEL {
                for kx in 0..KERNEL {
                    let t = (ic * KERNEL + ky) * KERNEL + kx;
                    for y in 0..oh {
                        let src = &grad_col[t * pixels + y * ow..][..ow];
                        let dst = &mut plane[(y + ky) * w + kx..][..ow];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += s;
                        }
                    }
                }
            }
        }
        recycle(grad_col);
        recycle(g_padded);
        recycle(kernels_t);
    }
}

pub(crate) fn pool_forward_into(input: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        let src = &input[ch * h * w..];
        let dst = &mut out[ch * oh * ow..];
        for y in 0..oh {
            let top = &src[2 * y * w..];
            let bottom = &src[(2 * y + 1) * w..];
            for x in 0..ow {
                dst[y * ow + x] =
                    (top[2 * x] + top[2 * x + 1] + bottom[2 * x] + bottom[2 * x + 1]) * 0.25;
            }
        }
    }
}

/// Writes (not accumulates) the input gradient of 2x2 average pooling.
pub(crate) fn pool_backward_into(grad_out: &[f64], c: usize, h: usize, w: usize, grad_in: &mut [f64]) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        let g = &grad_out[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut grad_in[ch * h * w..(ch + 1) * h * w];
        for (rows, g_row) in dst.chunks_exact_mut(2 * w).zip(g.chunks_exact(ow)) {
            let (top, bottom) = rows.split_at_mut(w);
            for ((t, b), &v) in top.chunks_exact_mut(2).zip(bottom.chunks_exact_mut(2)).zip(g_row) {
                let q = 0.25 * v;
                t.fill(q);
                b.fill(q);
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn dense_forward_into(input: &[f64], p: &DenseParams, out: &mut [f64]) {
    for (o, y) in out.iter_mut().enumerate() {
        *y = dot(&p.weights[o * p.inputs..(o + 1) * p.inputs], input) + p.bias[o];
    }
}

pub(crate) fn dense_backward_acc(
    input: &[f64],
    p: &DenseParams,
    grad_out: &[f64],
    grad_weights: &mut [f64],
    grad_bias: &mut [f64],
    grad_input: Option<&mut [f64]>,
) {
    for (o, &g) in grad_out.iter().enumerate() {
        grad_bias[o] += g;
        axpy(g, input, &mut grad_weights[o * p.inputs..(o + 1) * p.inputs]);
    }
    if let Some(gin) = grad_input {
        for (o, &g) in grad_out.iter().enumerate() {
            axpy(g, &p.weights[o * p.inputs..(o + 1) * p.inputs], gin);
        }
    }
}

// Tensor-level operations over a batch.

fn require_rank4(t: &Tensor, what: &str) -> Result<(usize, usize, usize, usize)> {
    if t.dims().len() != 4 {
        return Err(Error::Shape(format!("{what} expects n x c x h x w, got {:?}", t.dims())));
    }
    Ok(t.nchw())
}

pub fn conv2d_forward(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    params.validate()?;
    let (n, c, h, w) = require_rank4(input, "conv2d")?;
    if c != params.in_ch {
        return Err(Error::Shape(format!(
            "conv expects {} input channels, got {c}",
            params.in_ch
        )));
    }
    if h < KERNEL || w < KERNEL {
        return Err(Error::Shape(format!("input {h}x{w} smaller than the 5x5 kernel")));
    }
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    let per_in = c * h * w;
    let per_out = params.out_ch * oh * ow;
    let mut out = vec![0.0; n * per_out];
    for i in 0..n {
        conv_forward_into(
            &input.data()[i * per_in..(i + 1) * per_in],
            h,
            w,
            params,
            &mut out[i * per_out..(i + 1) * per_out],
        );
    }
    Ok(Tensor::from_parts(vec![n, params.out_ch, oh, ow], out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients summed over the batch.
pub fn conv2d_backward(input: &Tensor, params: &ConvParams, grad_out: &Tensor) -> Result<ConvGrads> {
    let expected = conv2d_forward(input, params)?;
    if expected.dims() != grad_out.dims() {
        return Err(Error::Shape(format!(
            "conv output gradient {:?} does not match output {:?}",
            grad_out.dims(),
            expected.dims()
        )));
    }
    let (n, c, h, w) = input.nchw();
    let per_in = c * h * w;
    let per_out = grad_out.len() / n.max(1);
    let mut gin = vec![0.0; input.len()];
    let mut gk = vec![0.0; params.kernels.len()];
    let mut gb = vec![0.0; params.out_ch];
    for i in 0..n {
        conv_backward_acc(
            &input.data()[i * per_in..(i + 1) * per_in],
            h,
            w,
            params,
            &grad_out.data()[i * per_out..(i + 1) * per_out],
            &mut gk,
            &mut gb,
            Some(&mut gin[i * per_in..(i + 1) * per_in]),
        );
    }
    Ok(ConvGrads {
        input: Tensor::from_parts(input.dims().to_vec(), gin),
        kernels: gk,
        bias: gb,
    })
}

pub fn avgpool2_forward(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = require_rank4(input, "avgpool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("average pooling needs even dims, got {h}x{w}")));
    }
    let mut out = vec![0.0; input.len() / 4];
    pool_forward_into(input.data(), n * c, h, w, &mut out);
    Ok(Tensor::from_parts(vec![n, c, h / 2, w / 2], out))
}

pub fn avgpool2_backward(grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, oh, ow) = require_rank4(grad_out, "avgpool2 backward")?;
    let mut gin = vec![0.0; grad_out.len() * 4];
    pool_backward_into(grad_out.data(), n * c, 2 * oh, 2 * ow, &mut gin);
    Ok(Tensor::from_parts(vec![n, c, 2 * oh, 2 * ow], gin))
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    Tensor::from_parts(x.dims().to_vec(), x.data().iter().map(|&v| sigmoid_scalar(v)).collect())
}

/// Input gradient given the sigmoid's own output.
pub fn sigmoid_backward(output: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if output.dims() != grad_out.dims() {
        return Err(Error::Shape("sigmoid gradient shape mismatch".into()));
    }
    Ok(Tensor::from_parts(
        output.dims().to_vec(),
        output
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&s, &g)| g * s * (1.0 - s))
            .collect(),
    ))
}

/// `y = W x + b` per example; the input is read as `n x inputs`.
pub fn fc_forward(input: &Tensor, params: &DenseParams) -> Result<Tensor> {
    params.validate()?;
    let n = batch_rows(input, params.inputs)?;
    let mut out = vec![0.0; n * params.outputs];
    for i in 0..n {
        dense_forward_into(
            &input.data()[i * params.inputs..(i + 1) * params.inputs],
            params,
            &mut out[i * params.outputs..(i + 1) * params.outputs],
        );
    }
    Ok(Tensor::from_parts(vec![n, params.outputs], out))
}

fn batch_rows(input: &Tensor, inputs: usize) -> Result<usize> {
    let n = if input.dims().len() == 1 { 1 } else { input.dims()[0] };
    if n * inputs != input.len() {
        return Err(Error::Shape(format!(
            "dense layer expects {inputs} inputs per example, got tensor {:?}",
            input.dims()
        )));
    }
    Ok(n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

pub fn fc_backward(input: &Tensor, params: &DenseParams, grad_out: &Tensor) -> Result<DenseGrads> {
    params.validate()?;
    let n = batch_rows(input, params.inputs)?;
    if grad_out.len() != n * params.outputs {
        return Err(Error::Shape("dense output gradient shape mismatch".into()));
    }
    let mut gin = vec![0.0; input.len()];
    let mut gw = vec![0.0; params.weights.len()];
    let mut gb = vec![0.0; params.outputs];
    for i in 0..n {
        dense_backward_acc(
            &input.data()[i * params.inputs..(i + 1) * params.inputs],
            params,
            &grad_out.data()[i * params.outputs..(i + 1) * params.outputs],
            &mut gw,
            &mut gb,
            Some(&mut gin[i * params.inputs..(i + 1) * params.inputs]),
        );
    }
    Ok(DenseGrads {
        input: Tensor::from_parts(input.dims().to_vec(), gin),
        weights: gw,
        bias: gb,
    })
}

/// `(1/2) sum (pred - target)^2` and its gradient `pred - target`.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    let (loss, grad) = mse_slices(pred.data(), target.data());
    Ok((loss, Tensor::from_parts(pred.dims().to_vec(), grad)))
}

pub(crate) fn mse_slices(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let grad: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p - t).collect();
    let loss = 0.5 * grad.iter().map(|d| d * d).sum::<f64>();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Xoshiro256StarStar;

    fn random_tensor(dims: &[usize], rng: &mut Xoshiro256StarStar) -> Tensor {
        Tensor::from_fn(dims, |_| rng.uniform(-1.0, 1.0))
    }

    fn random_conv(in_ch: usize, out_ch: usize, rng: &mut Xoshiro256StarStar) -> ConvParams {
        let mut p = ConvParams::zeros(in_ch, out_ch);
        p.kernels.iter_mut().for_each(|v| *v = rng.uniform(-0.5, 0.5));
        p.bias.iter_mut().for_each(|v| *v = rng.uniform(-0.5, 0.5));
        p
    }

    /// Direct sum over (ic, ky, kx) per output pixel, bias added last.
    fn conv_oracle(input: &Tensor, p: &ConvParams) -> Vec<f64> {
        let (n, c, h, w) = input.nchw();
        let (oh, ow) = (h - 4, w - 4);
        let mut out = Vec::new();
        for i in 0..n {
            for oc in 0..p.out_ch {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for ky in 0..5 {
                                for kx in 0..5 {
                                    let v = input.data()[((i * c + ic) * h + y + ky) * w + x + kx];
                                    acc = p.kernels[((oc * c + ic) * 5 + ky) * 5 + kx].mul_add(v, acc);
                                }
                            }
                        }
                        out.push(acc + p.bias[oc]);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_sum_of_ones() {
        let input = Tensor::from_fn(&[1, 1, 5, 5], |_| 1.0);
        let mut p = ConvParams::zeros(1, 1);
        p.kernels.fill(1.0);
        let out = conv2d_forward(&input, &p).unwrap();
        assert_eq!(out.dims(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[25.0]);
    }

    #[test]
    fn conv_delta_kernel_crops() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(1);
        let input = random_tensor(&[1, 1, 9, 7], &mut rng);
        let mut p = ConvParams::zeros(1, 1);
        p.kernels[0] = 1.0;
        let out = conv2d_forward(&input, &p).unwrap();
        assert_eq!(out.dims(), &[1, 1, 5, 3]);
        for y in 0..5 {
            for x in 0..3 {
                assert_eq!(out.data()[y * 3 + x], input.data()[y * 7 + x]);
            }
        }
    }

    #[test]
    fn conv_matches_fused_direct_sum_exactly() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(2);
        let input = random_tensor(&[1, 2, 8, 8], &mut rng);
        let p = random_conv(2, 3, &mut rng);
        let out = conv2d_forward(&input, &p).unwrap();
        assert_eq!(out.dims(), &[1, 3, 4, 4]);
        assert_eq!(out.data(), conv_oracle(&input, &p).as_slice());

        let batch = random_tensor(&[3, 2, 12, 10], &mut rng);
        let out = conv2d_forward(&batch, &p).unwrap();
        assert_eq!(out.data(), conv_oracle(&batch, &p).as_slice());
    }

    #[test]
    fn conv_shape_errors() {
        let p = ConvParams::zeros(2, 3);
        assert!(conv2d_forward(&Tensor::zeros(&[1, 1, 8, 8]), &p).is_err());
        assert!(conv2d_forward(&Tensor::zeros(&[1, 2, 4, 8]), &p).is_err());
        assert!(conv2d_forward(&Tensor::zeros(&[2, 8, 8]), &p).is_err());
    }

    #[test]
    fn pooling_cases() {
        let t = Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(avgpool2_forward(&t).unwrap().data(), &[2.5]);

        let c = Tensor::from_fn(&[2, 3, 6, 4], |_| 0.3);
        let out = avgpool2_forward(&c).unwrap();
        assert_eq!(out.dims(), &[2, 3, 3, 2]);
        assert!(out.data().iter().all(|v| (v - 0.3).abs() < 1e-15));

        let big = Tensor::zeros(&[1, 9, 24, 24]);
        assert_eq!(avgpool2_forward(&big).unwrap().dims(), &[1, 9, 12, 12]);
        assert!(avgpool2_forward(&Tensor::zeros(&[1, 1, 5, 4])).is_err());
    }

    #[test]
    fn sigmoid_values() {
        let t = Tensor::new(&[3], vec![0.0, -50.0, 50.0]).unwrap();
        let s = sigmoid(&t);
        assert_eq!(s.data()[0], 0.5);
        assert!(s.data()[1] < 1e-20);
        assert!((s.data()[2] - 1.0).abs() < 1e-15);

        for &x in &[-3.0, -0.4, 0.0, 0.7, 2.5] {
            let sx = sigmoid_scalar(x);
            let eps = 1e-5;
            let fd = (sigmoid_scalar(x + eps) - sigmoid_scalar(x - eps)) / (2.0 * eps);
            let analytic = sigmoid_backward(
                &Tensor::new(&[1], vec![sx]).unwrap(),
                &Tensor::new(&[1], vec![1.0]).unwrap(),
            )
            .unwrap()
            .data()[0];
            assert!((analytic - sx * (1.0 - sx)).abs() < 1e-15);
            assert!((analytic - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn dense_cases() {
        let x = Tensor::new(&[3], vec![1.5, -2.0, 0.25]).unwrap();
        let mut id = DenseParams::zeros(3, 3);
        for i in 0..3 {
            id.weights[i * 3 + i] = 1.0;
        }
        assert_eq!(fc_forward(&x, &id).unwrap().data(), x.data());

        let mut zb = DenseParams::zeros(3, 2);
        zb.bias = vec![1.0, 2.0];
        assert_eq!(fc_forward(&x, &zb).unwrap().data(), &[1.0, 2.0]);

        let w = vec![
            0.5, -1.0, 2.0, 0.0, //
            1.0, 1.0, 1.0, 1.0, //
            -0.25, 0.0, 3.0, -2.0,
        ];
        let p = DenseParams { inputs: 4, outputs: 3, weights: w, bias: vec![0.1, -0.2, 0.3] };
        let x = Tensor::new(&[4], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        // Hand multiplication.
        let expected = [0.5 - 2.0 - 2.0 + 0.1, 1.0 + 2.0 - 1.0 + 0.5 - 0.2, -0.25 - 3.0 - 1.0 + 0.3];
        let y = fc_forward(&x, &p).unwrap();
        for (a, b) in y.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(fc_forward(&Tensor::zeros(&[5]), &p).is_err());
    }

    #[test]
    fn mse_cases() {
        let p = Tensor::new(&[2], vec![1.0, 0.0]).unwrap();
        let t = Tensor::new(&[2], vec![0.0, 1.0]).unwrap();
        assert_eq!(mse_loss(&p, &p).unwrap().0, 0.0);
        let (loss, grad) = mse_loss(&p, &t).unwrap();
        assert_eq!(loss, 1.0);
        assert_eq!(grad.data(), &[1.0, -1.0]);
        assert!(mse_loss(&p, &Tensor::zeros(&[3])).is_err());

        let pred = vec![0.3, 0.9, -0.2];
        let target = vec![0.0, 1.0, 0.0];
        let (_, g) = mse_slices(&pred, &target);
        for i in 0..3 {
            let eps = 1e-6;
            let mut up = pred.clone();
            up[i] += eps;
            let mut down = pred.clone();
            down[i] -= eps;
            let fd = (mse_slices(&up, &target).0 - mse_slices(&down, &target).0) / (2.0 * eps);
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn dot_handles_tails() {
        let a: Vec<f64> = (0..11).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 + i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert_eq!(dot(&a, &b), naive);
    }
}

