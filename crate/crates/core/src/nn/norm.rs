use super::{Layer, Mode, Param};
use crate::tensor::{Real, Tensor};

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

/// Per-channel batch normalisation over `N x H x W`.
pub struct BatchNorm2d<T: Real> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    channels: usize,
    cache: Option<Cache<T>>,
}

struct Cache<T: Real> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    shape: [usize; 4],
    batch_stats: bool,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            channels,
            cache: None,
        }
    }
}

impl<T: Real> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let shape = x.dims4().expect("batch norm input must be NCHW");
        let [n, c, h, w] = shape;
        assert_eq!(c, self.channels);
        let l = h * w;
        let count = T::from_usize(n * l).unwrap();
        let eps = T::from_f64_lossy(EPS);
        let mut xhat = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); c];
        let mut y = vec![T::zero(); x.len()];
        let data = x.data();
        for ch in 0..c {
            let (mean, var) = if mode.uses_batch_stats() {
                let mut sum = T::zero();
                for b in 0..n {
                    sum += data[(b * c + ch) * l..(b * c + ch + 1) * l].iter().copied().sum::<T>();
                }
                let mean = sum / count;
                let mut sq = T::zero();
                for b in 0..n {
                    for &v in &data[(b * c + ch) * l..(b * c + ch + 1) * l] {
                        sq += (v - mean) * (v - mean);
                    }
                }
                let var = sq / count;
                if mode == Mode::Train {
                    let m = T::from_f64_lossy(MOMENTUM);
                    let unbiased = if n * l > 1 {
                        sq / T::from_usize(n * l - 1).unwrap()
                    } else {
                        var
                    };
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = (T::one() - m) * *rm + m * mean;
                    let rv = &mut self.running_var.data_mut()[ch];
                    *rv = (T::one() - m) * *rv + m * unbiased;
                }
                (mean, var)
            } else {
                (self.running_mean.data()[ch], self.running_var.data()[ch])
            };
            let is = T::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            let g = self.gamma.value.data()[ch];
            let bta = self.beta.value.data()[ch];
            for b in 0..n {
                let base = (b * c + ch) * l;
                for i in base..base + l {
                    let xh = (data[i] - mean) * is;
                    xhat[i] = xh;
                    y[i] = g * xh + bta;
                }
            }
        }
        self.cache = Some(Cache {
            xhat,
            inv_std,
            shape,
            batch_stats: mode.uses_batch_stats(),
        });
        Tensor::from_vec(&shape, y).unwrap()
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let cache = self.cache.as_ref().expect("backward before forward");
        let [n, c, h, w] = cache.shape;
        let l = h * w;
        let count = T::from_usize(n * l).unwrap();
        let d = dy.data();
        let mut dx = vec![T::zero(); dy.len()];
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for b in 0..n {
                let base = (b * c + ch) * l;
                for i in base..base + l {
                    sum_dy += d[i];
                    sum_dy_xhat += d[i] * cache.xhat[i];
                }
            }
            self.gamma.grad.data_mut()[ch] += sum_dy_xhat;
            self.beta.grad.data_mut()[ch] += sum_dy;
            let g = self.gamma.value.data()[ch];
            let is = cache.inv_std[ch];
            for b in 0..n {
                let base = (b * c + ch) * l;
                for i in base..base + l {
                    dx[i] = if cache.batch_stats {
                        g * is * (d[i] - sum_dy / count - cache.xhat[i] * sum_dy_xhat / count)
                    } else {
                        g * is * d[i]
                    };
                }
            }
        }
        Tensor::from_vec(&cache.shape, dx).unwrap()
    }

    fn describe(&self) -> String {
        format!("bn({})", self.channels)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f("weight", &mut self.gamma);
        f("bias", &mut self.beta);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f("running_mean", &mut self.running_mean);
        f("running_var", &mut self.running_var);
    }
}
