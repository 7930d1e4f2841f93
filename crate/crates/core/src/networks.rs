//! Encoder, permutation classifier, generator tail and patch discriminator.
//!
//! Pixels are in `[-1, 1]`. Pieces of an image are encoded independently
//! and their feature blocks tiled into one `n x n` feature grid, so no
//! receptive field crosses a piece boundary before the warp.

use std::cell::Cell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    Activation, BatchNorm2d, Conv2d, ConvTranspose2d, Flatten, Linear, MaxPool2d, Mode, Param, Residual,
    Sequential,
};
use crate::puzzle::GridSpec;
use crate::tensor::{Real, Tensor};

pub const FEATURE_CHANNELS: usize = 256;
/// Spatial reduction of the encoder.
pub const DOWNSAMPLE: usize = 4;
pub const RESIDUAL_BLOCKS: usize = 8;
pub const HIDDEN_UNITS: usize = 4096;
const CLASSIFIER_CHANNELS: [usize; 3] = [256, 384, 384];

/// Per-piece feature side for a piece size.
pub fn feature_side(piece_px: usize) -> Result<usize> {
    if piece_px % DOWNSAMPLE != 0 || piece_px == 0 {
        return Err(Error::Config(format!(
            "piece size {piece_px} must be a positive multiple of {DOWNSAMPLE}"
        )));
    }
    Ok(piece_px / DOWNSAMPLE)
}

thread_local! {
    static GENERATOR_FORWARDS: Cell<u64> = const { Cell::new(0) };
    static DISCRIMINATOR_FORWARDS: Cell<u64> = const { Cell::new(0) };
}

/// `(generator, discriminator)` forward passes run on the current thread.
pub fn adversarial_forwards_on_this_thread() -> (u64, u64) {
    (
        GENERATOR_FORWARDS.with(|c| c.get()),
        DISCRIMINATOR_FORWARDS.with(|c| c.get()),
    )
}

fn bump(counter: &'static std::thread::LocalKey<Cell<u64>>) {
    counter.with(|c| c.set(c.get() + 1));
}

/// Deterministic per-component generator so components initialise independently.
pub fn component_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Shared access to a component's layer stack.
pub trait Component<T: Real> {
    /// Prefix of checkpoint keys.
    const NAME: &'static str;

    fn layers(&mut self) -> &mut Sequential<T>;

    /// Visit parameters under `<component>.<layer_index>.<param>` keys.
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.layers()
            .visit_params(&mut |k, p| f(&format!("{}.{k}", Self::NAME), p));
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.layers()
            .visit_buffers(&mut |k, b| f(&format!("{}.{k}", Self::NAME), b));
    }

    fn zero_grad(&mut self) {
        self.layers().visit_params(&mut |_, p| p.zero_grad());
    }

    fn param_count(&mut self) -> usize {
        let mut total = 0;
        self.layers().visit_params(&mut |_, p| total += p.value.len());
        total
    }
}

/// Arrange per-piece maps `[B*n², C, f, f]` into grids `[B, C, n*f, n*f]`.
pub fn tile<T: Real>(pieces: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    let [bn, c, f, f2] = pieces.dims4()?;
    let cells = n * n;
    if bn % cells != 0 || f != f2 {
        return Err(Error::Shape(format!(
            "cannot tile {bn} maps of {f}x{f2} into {n}x{n} grids"
        )));
    }
    let b = bn / cells;
    let side = n * f;
    let src = pieces.data();
    let mut out = vec![T::zero(); src.len()];
    for img in 0..b {
        for cell in 0..cells {
            let (r, col) = (cell / n, cell % n);
            for ch in 0..c {
                for y in 0..f {
                    let s = (((img * cells + cell) * c + ch) * f + y) * f;
                    let d = ((img * c + ch) * side + r * f + y) * side + col * f;
                    out[d..d + f].copy_from_slice(&src[s..s + f]);
                }
            }
        }
    }
    Tensor::from_vec(&[b, c, side, side], out)
}

/// Inverse of [`tile`].
pub fn untile<T: Real>(grid: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
    let [b, c, side, side2] = grid.dims4()?;
    if side != side2 || side % n != 0 {
        return Err(Error::Shape(format!(
            "feature grid {side}x{side2} is not divisible into {n}x{n} blocks"
        )));
    }
    let f = side / n;
    let cells = n * n;
    let src = grid.data();
    let mut out = vec![T::zero(); src.len()];
    for img in 0..b {
        for cell in 0..cells {
            let (r, col) = (cell / n, cell % n);
            for ch in 0..c {
                for y in 0..f {
                    let d = (((img * cells + cell) * c + ch) * f + y) * f;
                    let s = ((img * c + ch) * side + r * f + y) * side + col * f;
                    out[d..d + f].copy_from_slice(&src[s..s + f]);
                }
            }
        }
    }
    Tensor::from_vec(&[b * cells, c, f, f], out)
}

fn conv_bn_act<T: Real, R: Rng>(
    net: &mut Sequential<T>,
    cin: usize,
    cout: usize,
    k: usize,
    act: Activation<T>,
    rng: &mut R,
) {
    net.push(Conv2d::same(cin, cout, k, 1, rng))
        .push(BatchNorm2d::new(cout))
        .push(act);
}

pub struct Encoder<T: Real = f32> {
    pub net: Sequential<T>,
    pub n: usize,
}

impl<T: Real> Encoder<T> {
    pub fn new<R: Rng>(n: usize, rng: &mut R) -> Self {
        let mut net = Sequential::new();
        conv_bn_act(&mut net, 3, 64, 7, Activation::relu(), rng);
        net.push(Conv2d::same(64, 128, 3, 2, rng));
        conv_bn_act(&mut net, 128, 128, 3, Activation::relu(), rng);
        net.push(Conv2d::same(128, 256, 3, 2, rng));
        conv_bn_act(&mut net, 256, FEATURE_CHANNELS, 3, Activation::relu(), rng);
        Encoder { net, n }
    }

    /// Pieces `[B*n², 3, p, p]` in row-major cell order to `[B, 256, n*f, n*f]`.
    pub fn forward(&mut self, pieces: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.forward_traced(pieces, mode, None)
    }

    pub fn forward_traced(
        &mut self,
        pieces: &Tensor<T>,
        mode: Mode,
        trace: Option<&mut Vec<(String, Vec<usize>)>>,
    ) -> Result<Tensor<T>> {
        let [bn, c, _, _] = pieces.dims4()?;
        let cells = self.n * self.n;
        if bn % cells != 0 || c != 3 {
            return Err(Error::Shape(format!(
                "encoder expects [B*{cells}, 3, p, p] pieces, got {:?}",
                pieces.shape()
            )));
        }
        let per_piece = self.net.forward_traced(pieces, mode, trace);
        tile(&per_piece, self.n)
    }

    /// Gradient with respect to the pieces.
    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let per_piece = untile(grad, self.n)?;
        Ok(self.net.backward(&per_piece))
    }
}

impl<T: Real> Component<T> for Encoder<T> {
    const NAME: &'static str = "encoder";
    fn layers(&mut self) -> &mut Sequential<T> {
        &mut self.net
    }
}

/// Spatial size after one classifier stage (stride-2 conv, ceil-mode pool).
pub fn classifier_stage_size(input: usize) -> usize {
    MaxPool2d::out_size(crate::nn::conv_out_size(input, 3, 2, 1))
}

pub struct Classifier<T: Real = f32> {
    pub net: Sequential<T>,
    pub classes: usize,
}

impl<T: Real> Classifier<T> {
    pub fn new<R: Rng>(feature_grid: usize, classes: usize, rng: &mut R) -> Self {
        let mut net = Sequential::new();
        let mut cin = FEATURE_CHANNELS;
        let mut side = feature_grid;
        for cout in CLASSIFIER_CHANNELS {
            net.push(Conv2d::same(cin, cout, 3, 2, rng))
                .push(Activation::relu())
                .push(MaxPool2d::new());
            cin = cout;
            side = classifier_stage_size(side);
        }
        net.push(Flatten::default())
            .push(Linear::new(cin * side * side, HIDDEN_UNITS, rng))
            .push(Linear::new(HIDDEN_UNITS, classes, rng));
        Classifier { net, classes }
    }

    /// Raw logits `[B, P]`.
    pub fn forward(&mut self, features: &Tensor<T>, mode: Mode) -> Tensor<T> {
        self.net.forward(features, mode)
    }

    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Tensor<T> {
        self.net.backward(grad_logits)
    }
}

impl<T: Real> Component<T> for Classifier<T> {
    const NAME: &'static str = "classifier";
    fn layers(&mut self) -> &mut Sequential<T> {
        &mut self.net
    }
}

/// Residual blocks followed by the upsampling decoder.
pub struct Generator<T: Real = f32> {
    pub net: Sequential<T>,
}

impl<T: Real> Generator<T> {
    pub fn new<R: Rng>(rng: &mut R) -> Self {
        let mut net = Sequential::new();
        for _ in 0..RESIDUAL_BLOCKS {
            let mut body = Sequential::new();
            conv_bn_act(&mut body, FEATURE_CHANNELS, FEATURE_CHANNELS, 3, Activation::relu(), rng);
            body.push(Conv2d::same(FEATURE_CHANNELS, FEATURE_CHANNELS, 3, 1, rng))
                .push(BatchNorm2d::new(FEATURE_CHANNELS));
            net.push(Residual::new(body));
        }
        net.push(ConvTranspose2d::doubling(FEATURE_CHANNELS, 128, rng));
        conv_bn_act(&mut net, 128, 128, 3, Activation::relu(), rng);
        net.push(ConvTranspose2d::doubling(128, 64, rng));
        conv_bn_act(&mut net, 64, 64, 3, Activation::relu(), rng);
        net.push(Conv2d::same(64, 3, 7, 1, rng)).push(Activation::tanh());
        Generator { net }
    }

    /// `[B, 256, H_f, W_f]` to an image `[B, 3, 4*H_f, 4*W_f]` in `[-1, 1]`.
    pub fn forward(&mut self, features: &Tensor<T>, mode: Mode) -> Tensor<T> {
        bump(&GENERATOR_FORWARDS);
        self.net.forward(features, mode)
    }

    pub fn backward(&mut self, grad_image: &Tensor<T>) -> Tensor<T> {
        self.net.backward(grad_image)
    }
}

impl<T: Real> Component<T> for Generator<T> {
    const NAME: &'static str = "generator";
    fn layers(&mut self) -> &mut Sequential<T> {
        &mut self.net
    }
}

/// Patch discriminator producing one logit per 4x4 image patch.
pub struct Discriminator<T: Real = f32> {
    pub net: Sequential<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn new<R: Rng>(rng: &mut R) -> Self {
        let mut net = Sequential::new();
        let lrelu = Activation::leaky_relu;
        net.push(Conv2d::same(3, 32, 3, 1, rng)).push(lrelu());
        net.push(Conv2d::same(32, 64, 3, 2, rng)).push(lrelu());
        conv_bn_act(&mut net, 64, 64, 3, lrelu(), rng);
        net.push(Conv2d::same(64, 128, 3, 2, rng)).push(lrelu());
        conv_bn_act(&mut net, 128, 128, 3, lrelu(), rng);
        conv_bn_act(&mut net, 128, 256, 3, lrelu(), rng);
        net.push(Conv2d::same(256, 1, 3, 1, rng));
        Discriminator { net }
    }

    /// `[B, 3, H, W]` to patch logits `[B, 1, H/4, W/4]`.
    pub fn forward(&mut self, image: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let [_, c, h, w] = image.dims4()?;
        if c != 3 || h % DOWNSAMPLE != 0 || w % DOWNSAMPLE != 0 {
            return Err(Error::Shape(format!(
                "discriminator needs [B, 3, H, W] with H and W divisible by {DOWNSAMPLE}, got {:?}",
                image.shape()
            )));
        }
        bump(&DISCRIMINATOR_FORWARDS);
        Ok(self.net.forward(image, mode))
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        self.net.backward(grad)
    }
}

impl<T: Real> Component<T> for Discriminator<T> {
    const NAME: &'static str = "discriminator";
    fn layers(&mut self) -> &mut Sequential<T> {
        &mut self.net
    }
}

/// All four components for one grid size and class count.
pub struct JigsawNet<T: Real = f32> {
    pub encoder: Encoder<T>,
    pub classifier: Classifier<T>,
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub grid: GridSpec,
    pub classes: usize,
}

impl<T: Real> JigsawNet<T> {
    pub fn new(grid: GridSpec, classes: usize, seed: u64) -> Result<Self> {
        grid.validate()?;
        if classes == 0 {
            return Err(Error::Config("class count must be positive".into()));
        }
        let f = feature_side(grid.piece_px)?;
        Ok(JigsawNet {
            encoder: Encoder::new(grid.n, &mut component_rng(seed, 1)),
            classifier: Classifier::new(grid.n * f, classes, &mut component_rng(seed, 2)),
            generator: Generator::new(&mut component_rng(seed, 3)),
            discriminator: Discriminator::new(&mut component_rng(seed, 4)),
            grid,
            classes,
        })
    }

    pub fn feature_grid(&self) -> usize {
        self.grid.n * (self.grid.piece_px / DOWNSAMPLE)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.encoder.visit_params(f);
        self.classifier.visit_params(f);
        self.generator.visit_params(f);
        self.discriminator.visit_params(f);
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.encoder.visit_buffers(f);
        self.classifier.visit_buffers(f);
        self.generator.visit_buffers(f);
        self.discriminator.visit_buffers(f);
    }

    /// Parameter counts per component, in declaration order.
    pub fn param_counts(&mut self) -> [(&'static str, usize); 4] {
        [
            (Encoder::<T>::NAME, self.encoder.param_count()),
            (Classifier::<T>::NAME, self.classifier.param_count()),
            (Generator::<T>::NAME, self.generator.param_count()),
            (Discriminator::<T>::NAME, self.discriminator.param_count()),
        ]
    }

    /// Run every component once in evaluation mode on zeros and record each
    /// layer's output shape as `(component, layer, shape)`.
    pub fn shape_audit(&mut self, batch: usize) -> Result<Vec<(String, String, Vec<usize>)>> {
        let g = self.grid;
        let pieces = Tensor::zeros(&[batch * g.cells(), 3, g.piece_px, g.piece_px]);
        let mut out = Vec::new();
        let mut push = |name: &str, trace: Vec<(String, Vec<usize>)>| {
            out.extend(trace.into_iter().map(|(l, s)| (name.to_string(), l, s)));
        };
        let mut trace = Vec::new();
        let features = self.encoder.forward_traced(&pieces, Mode::Eval, Some(&mut trace))?;
        trace.push(("tile".into(), features.shape().to_vec()));
        push(Encoder::<T>::NAME, std::mem::take(&mut trace));
        self.classifier.net.forward_traced(&features, Mode::Eval, Some(&mut trace));
        push(Classifier::<T>::NAME, std::mem::take(&mut trace));
        let image = self.generator.net.forward_traced(&features, Mode::Eval, Some(&mut trace));
        push(Generator::<T>::NAME, std::mem::take(&mut trace));
        self.discriminator.net.forward_traced(&image, Mode::Eval, Some(&mut trace));
        push(Discriminator::<T>::NAME, trace);
        Ok(out)
    }
}

/// Encoder and classifier only: everything needed to solve a puzzle.
pub struct InferenceModel {
    pub encoder: Encoder<f32>,
    pub classifier: Classifier<f32>,
    pub grid: GridSpec,
    pub classes: usize,
}

impl InferenceModel {
    pub fn from_net(net: JigsawNet<f32>) -> Self {
        InferenceModel {
            encoder: net.encoder,
            classifier: net.classifier,
            grid: net.grid,
            classes: net.classes,
        }
    }

    /// Logits `[B, P]` for pieces `[B*n², 3, p, p]`, using running statistics.
    pub fn logits(&mut self, pieces: &Tensor<f32>) -> Result<Tensor<f32>> {
        let features = self.encoder.forward(pieces, Mode::Eval)?;
        Ok(self.classifier.forward(&features, Mode::Eval))
    }

    /// Most likely class per image (lowest index on ties).
    pub fn predict(&mut self, pieces: &Tensor<f32>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(pieces)?))
    }
}

/// Row-wise argmax of a `[B, P]` tensor, lowest index on ties.
pub fn argmax_rows<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let p = logits.shape()[1];
    logits
        .data()
        .chunks(p)
        .map(|row| {
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}
