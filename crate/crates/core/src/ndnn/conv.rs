use std::ops::Range;
use crate::error::{Error, Result};
use crate::ndnn::Tensor;
use crate::scalar::Scalar;

/// 2-D convolution with "same" zero padding (`pad = kernel / 2`).
///
/// The kernel is stored as `[x, x, Cin, Cout]`, which flattens to a
/// `(x*x*Cin) x Cout` matrix that multiplies an im2col patch matrix directly.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Output extent of a "same"-padded convolution: `ceil(input / stride)`.
pub fn same_output_size(input: usize, stride: usize) -> usize {
    input.div_ceil(stride)
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(kernel: Tensor<T>, bias: Tensor<T>, stride: usize) -> Result<Self> {
        let ks = kernel.shape();
        if ks.len() != 4 || ks[0] != ks[1] || ks[0] % 2 == 0 {
            return Err(Error::invalid(format!(
                "conv kernel must be [x, x, Cin, Cout] with odd x, got {ks:?}"
            )));
        }
        if bias.shape() != [ks[3]] {
            return Err(Error::invalid(format!(
                "conv bias shape {:?} does not match Cout {}",
                bias.shape(),
                ks[3]
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv stride must be positive"));
        }
        Ok(ConvLayer {
            kernel,
            bias,
            stride,
        })
    }

    pub fn zeros(size: usize, in_channels: usize, out_channels: usize, stride: usize) -> Result<Self> {
        Self::new(
            Tensor::zeros(&[size, size, in_channels, out_channels]),
            Tensor::zeros(&[out_channels]),
            stride,
        )
    }

    pub fn size(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[3]
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    fn geometry(&self, input: &Tensor<T>) -> Result<Geometry> {
        let s = input.shape();
        if s.len() != 4 {
            return Err(Error::invalid(format!("conv2d expects [N, H, W, C], got {s:?}")));
        }
        if s[3] != self.in_channels() {
            return Err(Error::invalid(format!(
                "conv2d channel mismatch: input has {}, kernel expects {}",
                s[3],
                self.in_channels()
            )));
        }
        Ok(Geometry {
            batch: s[0],
            h: s[1],
            w: s[2],
            cin: s[3],
            k: self.size(),
            stride: self.stride,
            oh: same_output_size(s[1], self.stride),
            ow: same_output_size(s[2], self.stride),
            cout: self.out_channels(),
        })
    }
}

const BLOCK_ELEMS: usize = 1 << 16;

#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    cout: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.k * self.k * self.cin
    }

    fn rows(&self) -> usize {
        self.oh * self.ow
    }

    /// Output pixels per im2col block, sized so a block stays cache-resident.
    fn block(&self) -> usize {
        (BLOCK_ELEMS / self.patch()).clamp(1, self.rows())
    }
}

/// Input columns `[ix0, ix1)` touched by kernel columns `[kx0, kx1)` for
/// output column `ox`; the kernel row reads one contiguous run of pixels.
fn column_span(g: &Geometry, ox: usize) -> (usize, usize, usize) {
    let pad = g.k / 2;
    let left = ox * g.stride;
    let kx0 = pad.saturating_sub(left);
    let kx1 = g.k.min(g.w + pad - left);
    (kx0, kx1, left + kx0 - pad)
}

/// Fills `cols` with the receptive fields of output pixels `rows` (row-major
/// over the output grid) of one image, one `patch`-wide row per pixel.
fn im2col<T: Scalar>(g: &Geometry, image: &[T], rows: Range<usize>, cols: &mut [T]) {
    let pad = (g.k / 2) as isize;
    let patch = g.patch();
    let krow = g.k * g.cin;
    let first = rows.start;
    for r in rows {
        let (oy, ox) = (r / g.ow, r % g.ow);
        {
            let row = &mut cols[(r - first) * patch..][..patch];
            let (kx0, kx1, ix0) = column_span(g, ox);
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - pad;
                let dst = &mut row[ky * krow..][..krow];
                if iy < 0 || iy >= g.h as isize || kx0 >= kx1 {
                    dst.fill(T::zero());
                    continue;
                }
                dst[..kx0 * g.cin].fill(T::zero());
                dst[kx1 * g.cin..].fill(T::zero());
                let src = (iy as usize * g.w + ix0) * g.cin;
                dst[kx0 * g.cin..kx1 * g.cin].copy_from_slice(&image[src..src + (kx1 - kx0) * g.cin]);
            }
        }
    }
}

/// Scatter-adds the patch gradients of output pixels `rows` back onto the
/// image gradient.
fn col2im<T: Scalar>(g: &Geometry, cols: &[T], rows: Range<usize>, image: &mut [T]) {
    let pad = (g.k / 2) as isize;
    let patch = g.patch();
    let krow = g.k * g.cin;
    let first = rows.start;
    for r in rows {
        let (oy, ox) = (r / g.ow, r % g.ow);
        {
            let row = &cols[(r - first) * patch..][..patch];
            let (kx0, kx1, ix0) = column_span(g, ox);
            if kx0 >= kx1 {
                continue;
            }
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - pad;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                let src = &row[ky * krow + kx0 * g.cin..ky * krow + kx1 * g.cin];
                let start = (iy as usize * g.w + ix0) * g.cin;
                for (d, &s) in image[start..start + src.len()].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
    }
}

/// Output-channel count up to which convolution skips im2col and computes
/// each output as short dot products over contiguous input runs.
const DIRECT_MAX_COUT: usize = 4;

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (d, &v) in y.iter_mut().zip(x) {
        *d += alpha * v;
    }
}

/// Kernel as `[Cout, x, x*Cin]` so one kernel row is contiguous.
fn transpose_kernel<T: Scalar>(g: &Geometry, kernel: &[T]) -> Vec<T> {
    let patch = g.patch();
    let mut out = vec![T::zero(); patch * g.cout];
    for p in 0..patch {
        for co in 0..g.cout {
            out[co * patch + p] = kernel[p * g.cout + co];
        }
    }
    out
}

/// Calls `f(output pixel, ky, kx0, kx1, input offset)` for every in-bounds
/// kernel row of one image.
fn for_each_run(g: &Geometry, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let pad = (g.k / 2) as isize;
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let (kx0, kx1, ix0) = column_span(g, ox);
            if kx0 >= kx1 {
                continue;
            }
            for ky in 0..g.k {
                let iy = (oy * g.stride + ky) as isize - pad;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                f(oy * g.ow + ox, ky, kx0, kx1, (iy as usize * g.w + ix0) * g.cin);
            }
        }
    }
}

fn conv2d_direct<T: Scalar>(g: &Geometry, input: &[T], kernel: &[T], bias: &[T], out: &mut [T]) {
    let kt = transpose_kernel(g, kernel);
    let (patch, krow) = (g.patch(), g.k * g.cin);
    let in_per = g.h * g.w * g.cin;
    let out_per = g.rows() * g.cout;
    for n in 0..g.batch {
        let image = &input[n * in_per..][..in_per];
        let dst = &mut out[n * out_per..][..out_per];
        for row in dst.chunks_exact_mut(g.cout) {
            row.copy_from_slice(bias);
        }
        for_each_run(g, |r, ky, kx0, kx1, src| {
            let run = &image[src..src + (kx1 - kx0) * g.cin];
            for co in 0..g.cout {
                let k = &kt[co * patch + ky * krow + kx0 * g.cin..][..run.len()];
                dst[r * g.cout + co] += dot(run, k);
            }
        });
    }
}

fn conv2d_direct_backward<T: Scalar>(
    g: &Geometry,
    grad_out: &[T],
    input: &[T],
    kernel: &[T],
    grad_kernel: &mut [T],
    mut grad_input: Option<&mut [T]>,
) {
    let kt = transpose_kernel(g, kernel);
    let mut gkt = vec![T::zero(); kt.len()];
    let (patch, krow) = (g.patch(), g.k * g.cin);
    let in_per = g.h * g.w * g.cin;
    let out_per = g.rows() * g.cout;
    for n in 0..g.batch {
        let image = &input[n * in_per..][..in_per];
        let go = &grad_out[n * out_per..][..out_per];
        let mut gi = grad_input.as_deref_mut().map(|gi| &mut gi[n * in_per..][..in_per]);
        for_each_run(g, |r, ky, kx0, kx1, src| {
            let len = (kx1 - kx0) * g.cin;
            let run = &image[src..src + len];
            for co in 0..g.cout {
                let dy = go[r * g.cout + co];
                let off = co * patch + ky * krow + kx0 * g.cin;
                axpy(dy, run, &mut gkt[off..off + len]);
                if let Some(gi) = gi.as_deref_mut() {
                    axpy(dy, &kt[off..off + len], &mut gi[src..src + len]);
                }
            }
        });
    }
    for p in 0..patch {
        for co in 0..g.cout {
            grad_kernel[p * g.cout + co] += gkt[co * patch + p];
        }
    }
}

/// Cross-correlation of `input` (`[N, H, W, Cin]`) with `layer`, plus bias.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    let g = layer.geometry(input)?;
    let mut out = Tensor::zeros(&[g.batch, g.oh, g.ow, g.cout]);
    let block = g.block();
    let mut cols = vec![T::zero(); block * g.patch()];
    let in_per = g.h * g.w * g.cin;
    let out_per = g.rows() * g.cout;
    let bias = layer.bias.data();
    if g.cout <= DIRECT_MAX_COUT {
        conv2d_direct(&g, input.data(), layer.kernel.data(), bias, out.data_mut());
        return Ok(out);
    }
    for n in 0..g.batch {
        let image = &input.data()[n * in_per..][..in_per];
        let dst = &mut out.data_mut()[n * out_per..][..out_per];
        for row in dst.chunks_exact_mut(g.cout) {
            row.copy_from_slice(bias);
        }
        for start in (0..g.rows()).step_by(block) {
            let end = (start + block).min(g.rows());
            let m = end - start;
            im2col(&g, image, start..end, &mut cols);
            // Y^T = K^T * cols^T keeps the long dimension on the gemm's N axis
            T::gemm(
                g.cout,
                g.patch(),
                m,
                T::one(),
                layer.kernel.data(),
                (1, g.cout as isize),
                &cols[..m * g.patch()],
                (1, g.patch() as isize),
                T::one(),
                &mut dst[start * g.cout..end * g.cout],
                (1, g.cout as isize),
            );
        }
    }
    Ok(out)
}

/// Exact gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    layer: &ConvLayer<T>,
) -> Result<ConvGrads<T>> {
    conv2d_backward_impl(grad_out, input, layer, true)
}

/// As [`conv2d_backward`] but skips the input gradient (first layer of a network).
pub fn conv2d_backward_params<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    layer: &ConvLayer<T>,
) -> Result<ConvGrads<T>> {
    conv2d_backward_impl(grad_out, input, layer, false)
}

fn conv2d_backward_impl<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    layer: &ConvLayer<T>,
    want_input: bool,
) -> Result<ConvGrads<T>> {
    let g = layer.geometry(input)?;
    grad_out.expect_shape(&[g.batch, g.oh, g.ow, g.cout])?;
    let mut grad_kernel = Tensor::zeros(layer.kernel.shape());
    let mut grad_bias = Tensor::zeros(&[g.cout]);
    let mut grad_input = want_input.then(|| Tensor::zeros(input.shape()));
    if g.cout <= DIRECT_MAX_COUT {
        for row in grad_out.data().chunks_exact(g.cout) {
            for (b, &v) in grad_bias.data_mut().iter_mut().zip(row) {
                *b += v;
            }
        }
        conv2d_direct_backward(
            &g,
            grad_out.data(),
            input.data(),
            layer.kernel.data(),
            grad_kernel.data_mut(),
            grad_input.as_mut().map(|t| t.data_mut()),
        );
        return Ok(ConvGrads {
            input: grad_input,
            kernel: grad_kernel,
            bias: grad_bias,
        });
    }
    let block = g.block();
    let mut cols = vec![T::zero(); block * g.patch()];
    let mut grad_cols = vec![T::zero(); if want_input { block * g.patch() } else { 0 }];
    let in_per = g.h * g.w * g.cin;
    let out_per = g.rows() * g.cout;
    for n in 0..g.batch {
        let go = &grad_out.data()[n * out_per..][..out_per];
        for row in go.chunks_exact(g.cout) {
            for (b, &v) in grad_bias.data_mut().iter_mut().zip(row) {
                *b += v;
            }
        }
        let image = &input.data()[n * in_per..][..in_per];
        for start in (0..g.rows()).step_by(block) {
            let end = (start + block).min(g.rows());
            let m = end - start;
            let go_block = &go[start * g.cout..end * g.cout];
            im2col(&g, image, start..end, &mut cols);
            // dK += cols^T * dY
            T::gemm(
                g.patch(),
                m,
                g.cout,
                T::one(),
                &cols[..m * g.patch()],
                (1, g.patch() as isize),
                go_block,
                (g.cout as isize, 1),
                T::one(),
                grad_kernel.data_mut(),
                (g.cout as isize, 1),
            );
            if let Some(gi) = grad_input.as_mut() {
                // dcols = dY * K^T
                T::gemm(
                    m,
                    g.cout,
                    g.patch(),
                    T::one(),
                    go_block,
                    (g.cout as isize, 1),
                    layer.kernel.data(),
                    (1, g.cout as isize),
                    T::zero(),
                    &mut grad_cols[..m * g.patch()],
                    (g.patch() as isize, 1),
                );
                col2im(&g, &grad_cols[..m * g.patch()], start..end, &mut gi.data_mut()[n * in_per..][..in_per]);
            }
        }
    }
    Ok(ConvGrads {
        input: grad_input,
        kernel: grad_kernel,
        bias: grad_bias,
    })
}
