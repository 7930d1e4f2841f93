use rand::Rng;

use super::{init_weight, Layer, Mode, Param};
use crate::exec::kernel_exec;
use crate::tensor::{gemm, MatRef, Real, Tensor};

/// Output length of a convolution along one axis.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

/// Geometry of a convolution over one image plane, in the forward sense:
/// an input of `channels x height x width` produces `out_h x out_w` positions.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfold `batch` images into a `[C*k*k, batch*out_h*out_w]` matrix.
fn im2col<T: Real>(x: &[T], batch: usize, g: &Geometry) -> Vec<T> {
    let cols = batch * g.positions();
    let mut col = vec![T::zero(); g.rows() * cols];
    let plane = g.height * g.width;
    let image = g.channels * plane;
    kernel_exec().for_chunks_mut(&mut col, cols, |r, row| {
        let c = r / (g.kernel * g.kernel);
        let ky = (r / g.kernel) % g.kernel;
        let kx = r % g.kernel;
        for b in 0..batch {
            let src = &x[b * image + c * plane..b * image + (c + 1) * plane];
            let dst = &mut row[b * g.positions()..(b + 1) * g.positions()];
            for oy in 0..g.out_h {
                let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                let line = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                if iy < 0 || iy >= g.height as isize {
                    continue;
                }
                let src_row = &src[iy as usize * g.width..(iy as usize + 1) * g.width];
                for (ox, v) in line.iter_mut().enumerate() {
                    let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                    if ix >= 0 && ix < g.width as isize {
                        *v = src_row[ix as usize];
                    }
                }
            }
        }
    });
    col
}

/// Fold a `[C*k*k, batch*out_h*out_w]` matrix back onto images, summing
/// overlapping contributions. The result has shape `[batch, C, H, W]`.
fn col2im<T: Real>(col: &[T], batch: usize, g: &Geometry) -> Vec<T> {
    let plane = g.height * g.width;
    let cols = batch * g.positions();
    let mut out = vec![T::zero(); batch * g.channels * plane];
    kernel_exec().for_chunks_mut(&mut out, plane, |idx, dst| {
        let b = idx / g.channels;
        let c = idx % g.channels;
        for ky in 0..g.kernel {
            for kx in 0..g.kernel {
                let r = (c * g.kernel + ky) * g.kernel + kx;
                let src = &col[r * cols + b * g.positions()..r * cols + (b + 1) * g.positions()];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let line = &src[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    });
    out
}

/// `[N, C, L]` -> `[C, N*L]`.
fn to_channel_major<T: Real>(x: &[T], n: usize, c: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            out[ch * n * l + b * l..ch * n * l + (b + 1) * l]
                .copy_from_slice(&x[(b * c + ch) * l..(b * c + ch + 1) * l]);
        }
    }
    out
}

/// `[C, N*L]` -> `[N, C, L]`.
fn to_batch_major<T: Real>(x: &[T], n: usize, c: usize, l: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ch in 0..c {
        for b in 0..n {
            out[(b * c + ch) * l..(b * c + ch + 1) * l]
                .copy_from_slice(&x[ch * n * l + b * l..ch * n * l + (b + 1) * l]);
        }
    }
    out
}

fn bias_grad<T: Real>(dy: &[T], n: usize, c: usize, l: usize, grad: &mut [T]) {
    for b in 0..n {
        for (ch, g) in grad.iter_mut().enumerate().take(c) {
            *g += dy[(b * c + ch) * l..(b * c + ch + 1) * l].iter().copied().sum::<T>();
        }
    }
}

/// 2-D convolution with square kernels, weight layout `[out, in, k, k]`.
pub struct Conv2d<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    /// Skip the input gradient (first layer of a network).
    pub input_grad: bool,
    cache: Option<(Tensor<T>, Geometry)>,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        Conv2d {
            weight: init_weight(&[out_ch, in_ch, kernel, kernel], rng),
            bias: Param::new(Tensor::zeros(&[out_ch])),
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            input_grad: true,
            cache: None,
        }
    }

    /// Size-preserving convolution for odd kernels at stride 1, halving at stride 2.
    pub fn same<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, rng: &mut R) -> Self {
        Self::new(in_ch, out_ch, kernel, stride, kernel / 2, rng)
    }

    pub fn without_input_grad(mut self) -> Self {
        self.input_grad = false;
        self
    }

    fn geometry(&self, h: usize, w: usize) -> Geometry {
        Geometry {
            channels: self.in_ch,
            height: h,
            width: w,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            out_h: conv_out_size(h, self.kernel, self.stride, self.pad),
            out_w: conv_out_size(w, self.kernel, self.stride, self.pad),
        }
    }
}

impl<T: Real> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Tensor<T> {
        let [n, c, h, w] = x.dims4().expect("conv input must be NCHW");
        assert_eq!(c, self.in_ch, "conv expects {} input channels, got {c}", self.in_ch);
        let g = self.geometry(h, w);
        let col = im2col(x.data(), n, &g);
        let l = g.positions();
        let mut out = vec![T::zero(); self.out_ch * n * l];
        gemm(
            T::one(),
            MatRef::new(self.weight.value.data(), self.out_ch, g.rows()),
            MatRef::new(&col, g.rows(), n * l),
            T::zero(),
            &mut out,
        );
        let mut y = to_batch_major(&out, n, self.out_ch, l);
        let bias = self.bias.value.data();
        for (i, chunk) in y.chunks_mut(l).enumerate() {
            let b = bias[i % self.out_ch];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        self.cache = Some((x.clone(), g));
        Tensor::from_vec(&[n, self.out_ch, g.out_h, g.out_w], y).unwrap()
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (x, g) = self.cache.as_ref().expect("conv backward before forward");
        let n = x.shape()[0];
        let l = g.positions();
        bias_grad(dy.data(), n, self.out_ch, l, self.bias.grad.data_mut());
        let dmat = to_channel_major(dy.data(), n, self.out_ch, l);
        let col = im2col(x.data(), n, g);
        gemm(
            T::one(),
            MatRef::new(&dmat, self.out_ch, n * l),
            MatRef::new(&col, g.rows(), n * l).t(),
            T::one(),
            self.weight.grad.data_mut(),
        );
        if !self.input_grad {
            return Tensor::zeros(x.shape());
        }
        let mut dcol = col;
        gemm(
            T::one(),
            MatRef::new(self.weight.value.data(), self.out_ch, g.rows()).t(),
            MatRef::new(&dmat, self.out_ch, n * l),
            T::zero(),
            &mut dcol,
        );
        Tensor::from_vec(x.shape(), col2im(&dcol, n, g)).unwrap()
    }

    fn describe(&self) -> String {
        format!("conv({},s{},{})", self.kernel, self.stride, self.out_ch)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

/// Transposed convolution, weight layout `[in, out, k, k]`.
///
/// Output size is `(H-1)*stride - 2*pad + kernel + output_pad`; with
/// kernel 3, stride 2, pad 1 and output_pad 1 every stage exactly doubles.
pub struct ConvTranspose2d<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    output_pad: usize,
    cache: Option<(Tensor<T>, Geometry)>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        output_pad: usize,
        rng: &mut R,
    ) -> Self {
        ConvTranspose2d {
            weight: init_weight(&[in_ch, out_ch, kernel, kernel], rng),
            bias: Param::new(Tensor::zeros(&[out_ch])),
            in_ch,
            out_ch,
            kernel,
            stride,
            pad,
            output_pad,
            cache: None,
        }
    }

    /// Exact ×2 upsampling stage with a 3×3 kernel.
    pub fn doubling<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, rng: &mut R) -> Self {
        Self::new(in_ch, out_ch, 3, 2, 1, 1, rng)
    }

    fn geometry(&self, h: usize, w: usize) -> Geometry {
        let oh = (h - 1) * self.stride + self.kernel + self.output_pad - 2 * self.pad;
        let ow = (w - 1) * self.stride + self.kernel + self.output_pad - 2 * self.pad;
        Geometry {
            channels: self.out_ch,
            height: oh,
            width: ow,
            kernel: self.kernel,
            stride: self.stride,
            pad: self.pad,
            out_h: h,
            out_w: w,
        }
    }
}

impl<T: Real> Layer<T> for ConvTranspose2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Tensor<T> {
        let [n, c, h, w] = x.dims4().expect("transposed conv input must be NCHW");
        assert_eq!(c, self.in_ch);
        let g = self.geometry(h, w);
        let l = h * w;
        let xmat = to_channel_major(x.data(), n, c, l);
        let mut col = vec![T::zero(); g.rows() * n * l];
        gemm(
            T::one(),
            MatRef::new(self.weight.value.data(), self.in_ch, g.rows()).t(),
            MatRef::new(&xmat, self.in_ch, n * l),
            T::zero(),
            &mut col,
        );
        let mut y = col2im(&col, n, &g);
        let plane = g.height * g.width;
        let bias = self.bias.value.data();
        for (i, chunk) in y.chunks_mut(plane).enumerate() {
            let b = bias[i % self.out_ch];
            chunk.iter_mut().for_each(|v| *v += b);
        }
        self.cache = Some((x.clone(), g));
        Tensor::from_vec(&[n, self.out_ch, g.height, g.width], y).unwrap()
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (x, g) = self.cache.as_ref().expect("backward before forward");
        let n = x.shape()[0];
        let l = g.positions();
        bias_grad(dy.data(), n, self.out_ch, g.height * g.width, self.bias.grad.data_mut());
        let dcol = im2col(dy.data(), n, g);
        let xmat = to_channel_major(x.data(), n, self.in_ch, l);
        gemm(
            T::one(),
            MatRef::new(&xmat, self.in_ch, n * l),
            MatRef::new(&dcol, g.rows(), n * l).t(),
            T::one(),
            self.weight.grad.data_mut(),
        );
        let mut dxmat = vec![T::zero(); self.in_ch * n * l];
        gemm(
            T::one(),
            MatRef::new(self.weight.value.data(), self.in_ch, g.rows()),
            MatRef::new(&dcol, g.rows(), n * l),
            T::zero(),
            &mut dxmat,
        );
        Tensor::from_vec(x.shape(), to_batch_major(&dxmat, n, self.in_ch, l)).unwrap()
    }

    fn describe(&self) -> String {
        format!("convT({},s1/{},{})", self.kernel, self.stride, self.out_ch)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}
