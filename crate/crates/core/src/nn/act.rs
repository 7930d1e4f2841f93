use super::{Layer, Mode};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Relu,
    /// Leaky ReLU with the given negative slope.
    LeakyRelu(f64),
    Tanh,
}

/// Elementwise nonlinearity.
pub struct Activation<T: Real> {
    kind: ActivationKind,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Activation<T> {
    pub fn new(kind: ActivationKind) -> Self {
        Activation { kind, cache: None }
    }

    pub fn relu() -> Self {
        Self::new(ActivationKind::Relu)
    }

    pub fn leaky_relu() -> Self {
        Self::new(ActivationKind::LeakyRelu(0.2))
    }

    pub fn tanh() -> Self {
        Self::new(ActivationKind::Tanh)
    }
}

impl<T: Real> Layer<T> for Activation<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Tensor<T> {
        let y = match self.kind {
            ActivationKind::Relu => x.map(|v| v.max(T::zero())),
            ActivationKind::LeakyRelu(slope) => {
                let s = T::from_f64_lossy(slope);
                x.map(|v| if v > T::zero() { v } else { v * s })
            }
            ActivationKind::Tanh => x.map(|v| v.tanh()),
        };
        // ReLU variants only need the sign pattern, which the output keeps.
        self.cache = Some(match self.kind {
            ActivationKind::Tanh => y.clone(),
            _ => x.clone(),
        });
        y
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let saved = self.cache.as_ref().expect("backward before forward");
        let mut dx = dy.clone();
        match self.kind {
            ActivationKind::Relu => {
                for (g, &x) in dx.data_mut().iter_mut().zip(saved.data()) {
                    if x <= T::zero() {
                        *g = T::zero();
                    }
                }
            }
            ActivationKind::LeakyRelu(slope) => {
                let s = T::from_f64_lossy(slope);
                for (g, &x) in dx.data_mut().iter_mut().zip(saved.data()) {
                    if x <= T::zero() {
                        *g = *g * s;
                    }
                }
            }
            ActivationKind::Tanh => {
                for (g, &y) in dx.data_mut().iter_mut().zip(saved.data()) {
                    *g = *g * (T::one() - y * y);
                }
            }
        }
        dx
    }

    fn describe(&self) -> String {
        match self.kind {
            ActivationKind::Relu => "relu".into(),
            ActivationKind::LeakyRelu(_) => "lrelu".into(),
            ActivationKind::Tanh => "tanh".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_layer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn activations_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // keep inputs away from the kink at zero
        let x = Tensor::<f64>::randn(&[2, 3, 2, 2], 1.0, &mut rng)
            .map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        for kind in [ActivationKind::Relu, ActivationKind::LeakyRelu(0.2), ActivationKind::Tanh] {
            let mut a = Activation::<f64>::new(kind);
            assert!(check_layer(&mut a, &x, Mode::Train, 6) < 1e-7, "{kind:?}");
        }
    }
}
