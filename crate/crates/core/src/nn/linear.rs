use rand::Rng;

use super::params::{join, Params};
use super::tensor::{axpy, dot};
use super::Tensor;
use crate::error::{Error, Result};

/// Affine map `y = W x + b` with `W` stored `out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            w: Tensor::zeros(&[output, input]),
            b: Tensor::zeros(&[output]),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Linear {
            w: Tensor::uniform(&[output, input], bound, rng),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn forward_into(&self, x: &[f64], y: &mut [f64]) {
        let inp = self.input_dim();
        let wd = self.w.data();
        for (o, yo) in y.iter_mut().enumerate() {
            *yo = self.b.data()[o] + dot(&wd[o * inp..(o + 1) * inp], x);
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(format!(
                "linear expects input of width {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let mut y = vec![0.0; self.output_dim()];
        self.forward_into(x, &mut y);
        Ok(y)
    }

    /// Row-wise application to an `n × in` matrix.
    pub fn forward_seq(&self, xs: &Tensor) -> Result<Tensor> {
        if xs.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "linear expects rows of width {}, got {}",
                self.input_dim(),
                xs.cols()
            )));
        }
        let mut out = Tensor::zeros(&[xs.rows(), self.output_dim()]);
        for i in 0..xs.rows() {
            self.forward_into(xs.row(i), out.row_mut(i));
        }
        Ok(out)
    }

    /// Accumulates parameter gradients into `grads` and adds `W^T dy` into `dx`.
    pub fn backward_into(&self, x: &[f64], dy: &[f64], grads: &mut Linear, dx: Option<&mut [f64]>) {
        let inp = self.input_dim();
        {
            let gw = grads.w.data_mut();
            for (o, &g) in dy.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, x, &mut gw[o * inp..(o + 1) * inp]);
                }
            }
        }
        axpy(1.0, dy, grads.b.data_mut());
        if let Some(dx) = dx {
            let wd = self.w.data();
            for (o, &g) in dy.iter().enumerate() {
                if g != 0.0 {
                    axpy(g, &wd[o * inp..(o + 1) * inp], dx);
                }
            }
        }
    }

    pub fn backward_seq(&self, xs: &Tensor, dys: &Tensor, grads: &mut Linear) -> Tensor {
        let mut dx = Tensor::zeros(&[xs.rows(), self.input_dim()]);
        for i in 0..xs.rows() {
            self.backward_into(xs.row(i), dys.row(i), grads, Some(dx.row_mut(i)));
        }
        dx
    }
}

impl Params for Linear {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(join(prefix, "w"), &self.w);
        f(join(prefix, "b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(join(prefix, "w"), &mut self.w);
        f(join(prefix, "b"), &mut self.b);
    }
}
