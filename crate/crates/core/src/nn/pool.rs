use super::{Layer, Mode};
use crate::tensor::{Real, Tensor};

/// 2×2 max pooling with stride 2 in ceil mode: a trailing odd row or column
/// forms a clipped window instead of being dropped.
pub struct MaxPool2d {
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl Default for MaxPool2d {
    fn default() -> Self {
        MaxPool2d { cache: None }
    }
}

impl MaxPool2d {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn out_size(input: usize) -> usize {
        input.div_ceil(2)
    }
}

impl<T: Real> Layer<T> for MaxPool2d {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Tensor<T> {
        let [n, c, h, w] = x.dims4().expect("pool input must be NCHW");
        let (oh, ow) = (Self::out_size(h), Self::out_size(w));
        let mut y = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        let data = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for iy in 2 * oy..(2 * oy + 2).min(h) {
                        for ix in 2 * ox..(2 * ox + 2).min(w) {
                            let idx = base + iy * w + ix;
                            if data[idx] > data[best] {
                                best = idx;
                            }
                        }
                    }
                    y.push(data[best]);
                    argmax.push(best);
                }
            }
        }
        self.cache = Some((argmax, x.shape().to_vec()));
        Tensor::from_vec(&[n, c, oh, ow], y).unwrap()
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (argmax, shape) = self.cache.as_ref().expect("backward before forward");
        let mut dx = Tensor::zeros(shape);
        for (&idx, &g) in argmax.iter().zip(dy.data()) {
            dx.data_mut()[idx] += g;
        }
        dx
    }

    fn describe(&self) -> String {
        "maxpool(s2)".into()
    }
}
