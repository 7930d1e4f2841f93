use rand::Rng;

use super::{init_weight, Layer, Mode, Param};
use crate::tensor::{gemm, MatRef, Real, Tensor};

/// Fully connected layer, weight layout `[out, in]`.
pub struct Linear<T: Real> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    in_features: usize,
    out_features: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        Linear {
            weight: init_weight(&[out_features, in_features], rng),
            bias: Param::new(Tensor::zeros(&[out_features])),
            in_features,
            out_features,
            cache: None,
        }
    }
}

impl<T: Real> Layer<T> for Linear<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Tensor<T> {
        let n = x.shape()[0];
        assert_eq!(x.len(), n * self.in_features, "linear input width mismatch");
        let mut y = vec![T::zero(); n * self.out_features];
        for row in y.chunks_mut(self.out_features) {
            row.copy_from_slice(self.bias.value.data());
        }
        gemm(
            T::one(),
            MatRef::new(x.data(), n, self.in_features),
            MatRef::new(self.weight.value.data(), self.out_features, self.in_features).t(),
            T::one(),
            &mut y,
        );
        self.cache = Some(x.clone());
        Tensor::from_vec(&[n, self.out_features], y).unwrap()
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.cache.as_ref().expect("backward before forward");
        let n = x.shape()[0];
        for row in dy.data().chunks(self.out_features) {
            for (g, &d) in self.bias.grad.data_mut().iter_mut().zip(row) {
                *g += d;
            }
        }
        gemm(
            T::one(),
            MatRef::new(dy.data(), n, self.out_features).t(),
            MatRef::new(x.data(), n, self.in_features),
            T::one(),
            self.weight.grad.data_mut(),
        );
        let mut dx = vec![T::zero(); n * self.in_features];
        gemm(
            T::one(),
            MatRef::new(dy.data(), n, self.out_features),
            MatRef::new(self.weight.value.data(), self.out_features, self.in_features),
            T::zero(),
            &mut dx,
        );
        Tensor::from_vec(x.shape(), dx).unwrap()
    }

    fn describe(&self) -> String {
        format!("fc({})", self.out_features)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

/// `[N, ...]` -> `[N, rest]`.
#[derive(Default)]
pub struct Flatten {
    shape: Vec<usize>,
}

impl<T: Real> Layer<T> for Flatten {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Tensor<T> {
        self.shape = x.shape().to_vec();
        let n = self.shape[0];
        x.clone().reshape(&[n, x.len() / n.max(1)]).unwrap()
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        dy.clone().reshape(&self.shape).unwrap()
    }

    fn describe(&self) -> String {
        "flatten".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_layer;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut fc = Linear::<f64>::new(6, 4, &mut rng);
        fc.weight.value = Tensor::randn(&[4, 6], 1.0, &mut rng);
        fc.bias.value = Tensor::randn(&[4], 1.0, &mut rng);
        let x = Tensor::<f64>::randn(&[3, 6], 1.0, &mut rng);
        assert!(check_layer(&mut fc, &x, Mode::Train, 4) < 1e-7);
    }
}
