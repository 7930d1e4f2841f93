//! Layers with hand-written backward passes.
//!
//! Each layer caches what its backward pass needs during `forward`, and
//! `backward` accumulates parameter gradients into [`Param::grad`] and
//! returns the gradient with respect to the layer input. A layer is
//! therefore used strictly as forward, backward, forward, backward, ...

mod act;
mod adam;
mod conv;
mod linear;
mod norm;
mod pool;
mod residual;

pub use act::{Activation, ActivationKind};
pub use adam::{Adam, AdamConfig, AdamMoments};
pub use conv::{conv_out_size, Conv2d, ConvTranspose2d};
pub use linear::{Flatten, Linear};
pub use norm::BatchNorm2d;
pub use pool::MaxPool2d;
pub use residual::Residual;

use rand::Rng;

use crate::tensor::{Real, Tensor};

/// Forward-pass behaviour of stateful layers (batch norm).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics updated.
    Train,
    /// Batch statistics; running statistics left untouched.
    TrainNoTrack,
    /// Running statistics.
    Eval,
}

impl Mode {
    pub fn uses_batch_stats(self) -> bool {
        !matches!(self, Mode::Eval)
    }
}

/// A trainable array and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T: Real = f32> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Weight initialisation: N(0, 0.02²).
pub const INIT_STD: f64 = 0.02;

pub(crate) fn init_weight<T: Real, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Param<T> {
    Param::new(Tensor::randn(shape, INIT_STD, rng))
}

pub trait Layer<T: Real>: Send {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T>;

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T>;

    /// Short description used in shape audits, e.g. `conv(3,s2,128)`.
    fn describe(&self) -> String;

    fn visit_params(&mut self, _f: &mut dyn FnMut(&str, &mut Param<T>)) {}

    /// Non-trainable state (batch-norm running statistics).
    fn visit_buffers(&mut self, _f: &mut dyn FnMut(&str, &mut Tensor<T>)) {}
}

/// Ordered stack of layers. Parameter keys are `<layer_index>.<param>`.
pub struct Sequential<T: Real> {
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Real> Default for Sequential<T> {
    fn default() -> Self {
        Sequential { layers: Vec::new() }
    }
}

impl<T: Real> Sequential<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Layer<T> + 'static) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn describe(&self) -> String {
        self.layers.iter().map(|l| l.describe()).collect::<Vec<_>>().join("+")
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        self.forward_traced(x, mode, None)
    }

    /// Forward pass that also records `(layer description, output shape)`.
    pub fn forward_traced(
        &mut self,
        x: &Tensor<T>,
        mode: Mode,
        mut trace: Option<&mut Vec<(String, Vec<usize>)>>,
    ) -> Tensor<T> {
        let mut h = x.clone();
        for layer in self.layers.iter_mut() {
            h = layer.forward(&h, mode);
            if let Some(t) = trace.as_deref_mut() {
                t.push((layer.describe(), h.shape().to_vec()));
            }
        }
        h
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let mut g = dy.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g);
        }
        g
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_params(&mut |name, p| f(&format!("{i}.{name}"), p));
        }
    }

    pub fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_buffers(&mut |name, b| f(&format!("{i}.{name}"), b));
        }
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite differences against a layer's analytic backward pass.

    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Checks d(sum(y * w))/dx and d/dparams for a random projection `w`.
    /// Returns the worst relative error seen.
    pub fn check_layer(layer: &mut dyn Layer<f64>, x: &Tensor<f64>, mode: Mode, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = layer.forward(x, mode);
        let w = Tensor::<f64>::randn(y.shape(), 1.0, &mut rng);
        let loss = |layer: &mut dyn Layer<f64>, x: &Tensor<f64>| -> f64 {
            let y = layer.forward(x, mode);
            y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
        };

        layer.visit_params(&mut |_, p| p.zero_grad());
        layer.forward(x, mode);
        let dx = layer.backward(&w);

        let h = 1e-6;
        let mut worst: f64 = 0.0;
        let mut rel = |analytic: f64, numeric: f64| {
            let denom = analytic.abs().max(numeric.abs()).max(1e-7);
            worst = worst.max((analytic - numeric).abs() / denom);
        };

        let mut xp = x.clone();
        for i in 0..x.len() {
            let orig = xp.data()[i];
            xp.data_mut()[i] = orig + h;
            let lp = loss(layer, &xp);
            xp.data_mut()[i] = orig - h;
            let lm = loss(layer, &xp);
            xp.data_mut()[i] = orig;
            rel(dx.data()[i], (lp - lm) / (2.0 * h));
        }

        let mut names = Vec::new();
        let mut grads = Vec::new();
        layer.visit_params(&mut |n, p| {
            names.push(n.to_string());
            grads.push(p.grad.clone());
        });
        for (pi, name) in names.iter().enumerate() {
            for i in 0..grads[pi].len() {
                bump_param(layer, name, i, h);
                let lp = loss(layer, x);
                bump_param(layer, name, i, -2.0 * h);
                let lm = loss(layer, x);
                bump_param(layer, name, i, h);
                rel(grads[pi].data()[i], (lp - lm) / (2.0 * h));
            }
        }
        worst
    }

    fn bump_param(layer: &mut dyn Layer<f64>, name: &str, i: usize, delta: f64) {
        layer.visit_params(&mut |n, p| {
            if n == name {
                p.value.data_mut()[i] += delta;
            }
        });
    }
}
