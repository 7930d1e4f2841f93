use super::{Layer, Mode, Param, Sequential};
use crate::tensor::{Real, Tensor};

/// `x + body(x)`.
pub struct Residual<T: Real> {
    pub body: Sequential<T>,
}

impl<T: Real> Residual<T> {
    pub fn new(body: Sequential<T>) -> Self {
        Residual { body }
    }
}

impl<T: Real> Layer<T> for Residual<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let mut y = self.body.forward(x, mode);
        y.add_assign(x);
        y
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let mut dx = self.body.backward(dy);
        dx.add_assign(dy);
        dx
    }

    fn describe(&self) -> String {
        format!("residual[{}]", self.body.describe())
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.body.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.body.visit_buffers(f);
    }
}
