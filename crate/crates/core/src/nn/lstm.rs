//! LSTM cells and bidirectional layers with hand-written backward passes.
//!
//! Cell equations, with `u = [x; h_prev]`:
//!
//! ```text
//! i = σ(W_i u + b_i)    f = σ(W_f u + b_f)    o = σ(W_o u + b_o)
//! g = tanh(W_g u + b_g)
//! c = f ⊙ c_prev + i ⊙ g
//! h = o ⊙ tanh(c)
//! ```

use rand::Rng;

use super::activation::sigmoid;
use super::linear::Linear;
use super::params::{join, Params};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub input_gate: Linear,
    pub forget_gate: Linear,
    pub output_gate: Linear,
    pub candidate: Linear,
}

/// Everything the backward pass needs from one forward step.
#[derive(Clone, Debug)]
pub struct CellTrace {
    pub u: Vec<f64>,
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let gate = || Linear::zeros(input + hidden, hidden);
        LstmCell {
            input_gate: gate(),
            forget_gate: gate(),
            output_gate: gate(),
            candidate: gate(),
        }
    }

    /// Glorot-uniform weights over `(input + hidden) → hidden`, forget bias 1.
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut cell = LstmCell {
            input_gate: Linear::init(input + hidden, hidden, rng),
            forget_gate: Linear::init(input + hidden, hidden, rng),
            output_gate: Linear::init(input + hidden, hidden, rng),
            candidate: Linear::init(input + hidden, hidden, rng),
        };
        cell.forget_gate.b.fill(1.0);
        cell
    }

    pub fn hidden_dim(&self) -> usize {
        self.input_gate.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.input_gate.input_dim() - self.hidden_dim()
    }

    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> CellTrace {
        let hd = self.hidden_dim();
        let mut u = Vec::with_capacity(x.len() + hd);
        u.extend_from_slice(x);
        u.extend_from_slice(h_prev);

        let mut i = vec![0.0; hd];
        let mut f = vec![0.0; hd];
        let mut o = vec![0.0; hd];
        let mut g = vec![0.0; hd];
        self.input_gate.forward_into(&u, &mut i);
        self.forget_gate.forward_into(&u, &mut f);
        self.output_gate.forward_into(&u, &mut o);
        self.candidate.forward_into(&u, &mut g);

        let mut c = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for k in 0..hd {
            i[k] = sigmoid(i[k]);
            f[k] = sigmoid(f[k]);
            o[k] = sigmoid(o[k]);
            g[k] = g[k].tanh();
            c[k] = f[k] * c_prev[k] + i[k] * g[k];
            tanh_c[k] = c[k].tanh();
            h[k] = o[k] * tanh_c[k];
        }
        CellTrace { u, i, f, o, g, c, tanh_c, h }
    }

    /// Backward through one step. `dh`/`dc` are gradients arriving at this
    /// step's outputs; returns `(dx, dh_prev, dc_prev)`.
    pub fn step_backward(
        &self,
        trace: &CellTrace,
        c_prev: &[f64],
        dh: &[f64],
        dc: &[f64],
        grads: &mut LstmCell,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim();
        let mut da_i = vec![0.0; hd];
        let mut da_f = vec![0.0; hd];
        let mut da_o = vec![0.0; hd];
        let mut da_g = vec![0.0; hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let (i, f, o, g, tc) = (trace.i[k], trace.f[k], trace.o[k], trace.g[k], trace.tanh_c[k]);
            let d_o = dh[k] * tc;
            let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
            da_i[k] = dct * g * i * (1.0 - i);
            da_f[k] = dct * c_prev[k] * f * (1.0 - f);
            da_o[k] = d_o * o * (1.0 - o);
            da_g[k] = dct * i * (1.0 - g * g);
            dc_prev[k] = dct * f;
        }
        let mut du = vec![0.0; trace.u.len()];
        self.input_gate
            .backward_into(&trace.u, &da_i, &mut grads.input_gate, Some(&mut du));
        self.forget_gate
            .backward_into(&trace.u, &da_f, &mut grads.forget_gate, Some(&mut du));
        self.output_gate
            .backward_into(&trace.u, &da_o, &mut grads.output_gate, Some(&mut du));
        self.candidate
            .backward_into(&trace.u, &da_g, &mut grads.candidate, Some(&mut du));
        let dh_prev = du.split_off(self.input_dim());
        (du, dh_prev, dc_prev)
    }

    /// Runs the cell left to right over the rows of `xs`.
    pub fn run(&self, xs: &Tensor, h0: &[f64], c0: &[f64]) -> Result<SequenceTrace> {
        if xs.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "lstm expects inputs of width {}, got {}",
                self.input_dim(),
                xs.cols()
            )));
        }
        let hd = self.hidden_dim();
        let n = xs.rows();
        let mut steps = Vec::with_capacity(n);
        let mut hs = Tensor::zeros(&[n, hd]);
        let mut h = h0.to_vec();
        let mut c = c0.to_vec();
        for t in 0..n {
            let tr = self.step(xs.row(t), &h, &c);
            hs.row_mut(t).copy_from_slice(&tr.h);
            h.clone_from(&tr.h);
            c.clone_from(&tr.c);
            steps.push(tr);
        }
        Ok(SequenceTrace {
            steps,
            c0: c0.to_vec(),
            hs,
        })
    }

    /// Backpropagates `dhs` (gradient on every emitted hidden state) through a
    /// recorded run; returns `(dxs, dh0, dc0)`.
    pub fn run_backward(
        &self,
        trace: &SequenceTrace,
        dhs: &Tensor,
        grads: &mut LstmCell,
    ) -> (Tensor, Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim();
        let n = trace.steps.len();
        let mut dxs = Tensor::zeros(&[n, self.input_dim()]);
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        for t in (0..n).rev() {
            let c_prev = if t == 0 { &trace.c0 } else { &trace.steps[t - 1].c };
            let mut dh = dhs.row(t).to_vec();
            for (a, b) in dh.iter_mut().zip(&dh_next) {
                *a += b;
            }
            let (dx, dhp, dcp) = self.step_backward(&trace.steps[t], c_prev, &dh, &dc_next, grads);
            dxs.row_mut(t).copy_from_slice(&dx);
            dh_next = dhp;
            dc_next = dcp;
        }
        (dxs, dh_next, dc_next)
    }
}

/// Record of a unidirectional run.
#[derive(Clone, Debug)]
pub struct SequenceTrace {
    pub steps: Vec<CellTrace>,
    pub c0: Vec<f64>,
    /// Emitted hidden states, one row per step.
    pub hs: Tensor,
}

impl Params for LstmCell {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.input_gate.visit(&join(prefix, "input"), f);
        self.forget_gate.visit(&join(prefix, "forget"), f);
        self.output_gate.visit(&join(prefix, "output"), f);
        self.candidate.visit(&join(prefix, "candidate"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.input_gate.visit_mut(&join(prefix, "input"), f);
        self.forget_gate.visit_mut(&join(prefix, "forget"), f);
        self.output_gate.visit_mut(&join(prefix, "output"), f);
        self.candidate.visit_mut(&join(prefix, "candidate"), f);
    }
}

/// One bidirectional layer: independent forward and reverse cells whose
/// outputs are concatenated per position.
#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmLayer {
    pub forward: LstmCell,
    pub reverse: LstmCell,
}

#[derive(Clone, Debug)]
pub struct BiLstmTrace {
    fwd: SequenceTrace,
    rev: SequenceTrace,
    pub output: Tensor,
}

impl BiLstmLayer {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        BiLstmLayer {
            forward: LstmCell::init(input, hidden, rng),
            reverse: LstmCell::init(input, hidden, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.forward.hidden_dim()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim()
    }

    /// Position `i` of the output is `[fwd after x_0..x_i ; rev after x_{n-1}..x_i]`.
    pub fn forward(&self, xs: &Tensor) -> Result<BiLstmTrace> {
        if xs.rows() == 0 {
            return Err(Error::Empty("bilstm input sequence"));
        }
        let hd = self.hidden_dim();
        let zeros = vec![0.0; hd];
        let fwd = self.forward.run(xs, &zeros, &zeros)?;
        let rev = self.reverse.run(&xs.reversed_rows(), &zeros, &zeros)?;
        let output = Tensor::hcat(&fwd.hs, &rev.hs.reversed_rows())?;
        Ok(BiLstmTrace { fwd, rev, output })
    }

    pub fn backward(&self, trace: &BiLstmTrace, dout: &Tensor, grads: &mut BiLstmLayer) -> Tensor {
        let (d_fwd, d_rev) = dout.hsplit(self.hidden_dim());
        let (dx_f, _, _) = self.forward.run_backward(&trace.fwd, &d_fwd, &mut grads.forward);
        let (dx_r, _, _) =
            self.reverse
                .run_backward(&trace.rev, &d_rev.reversed_rows(), &mut grads.reverse);
        let mut dx = dx_f;
        dx.add_assign(&dx_r.reversed_rows());
        dx
    }
}

impl Params for BiLstmLayer {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.forward.visit(&join(prefix, "fwd"), f);
        self.reverse.visit(&join(prefix, "rev"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.forward.visit_mut(&join(prefix, "fwd"), f);
        self.reverse.visit_mut(&join(prefix, "rev"), f);
    }
}

/// Stack of bidirectional layers.
pub fn bilstm_stack_forward(layers: &[BiLstmLayer], xs: &Tensor) -> Result<Vec<BiLstmTrace>> {
    let mut traces: Vec<BiLstmTrace> = Vec::with_capacity(layers.len());
    for layer in layers {
        let input = traces.last().map_or(xs, |t| &t.output);
        let tr = layer.forward(input)?;
        traces.push(tr);
    }
    Ok(traces)
}

pub fn bilstm_stack_backward(
    layers: &[BiLstmLayer],
    traces: &[BiLstmTrace],
    dout: &Tensor,
    grads: &mut [BiLstmLayer],
) -> Tensor {
    let mut d = dout.clone();
    for (k, layer) in layers.iter().enumerate().rev() {
        d = layer.backward(&traces[k], &d, &mut grads[k]);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::grad_check;
    use crate::nn::tensor::dot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_zero_state() {
        let mut cell = LstmCell::zeros(3, 2);
        cell.forget_gate.b.fill(1.0);
        let tr = cell.step(&[0.4, -1.0, 2.0], &[0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(tr.c, vec![0.0, 0.0]);
        assert_eq!(tr.h, vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_carries_cell() {
        let mut cell = LstmCell::zeros(1, 1);
        cell.forget_gate.b.fill(50.0);
        cell.input_gate.b.fill(0.3);
        cell.candidate.b.fill(0.2);
        let tr = cell.step(&[0.0], &[0.0], &[0.7]);
        let input_term = sigmoid(0.3) * 0.2f64.tanh();
        assert!((tr.c[0] - (0.7 + input_term)).abs() < 1e-12);
    }

    #[test]
    fn cell_step_gradients_all_groups() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (inp, hd) = (3, 4);
            let cell = LstmCell::init(inp, hd, &mut rng);
            let x = Tensor::uniform(&[inp], 1.0, &mut rng);
            let h = Tensor::uniform(&[hd], 1.0, &mut rng);
            let c = Tensor::uniform(&[hd], 1.0, &mut rng);
            let ph = Tensor::uniform(&[hd], 1.0, &mut rng);
            let pc = Tensor::uniform(&[hd], 1.0, &mut rng);
            let inputs = (cell, (x, h), c);
            let err = grad_check(
                &inputs,
                |(cell, (x, h), c)| {
                    let tr = cell.step(x.data(), h.data(), c.data());
                    dot(&tr.h, ph.data()) + dot(&tr.c, pc.data())
                },
                |(cell, (x, h), c)| {
                    let tr = cell.step(x.data(), h.data(), c.data());
                    let mut g = cell.zeros_like();
                    let (dx, dh, dc) = cell.step_backward(&tr, c.data(), ph.data(), pc.data(), &mut g);
                    (
                        g,
                        (
                            Tensor::from_vec(&[inp], dx).unwrap(),
                            Tensor::from_vec(&[hd], dh).unwrap(),
                        ),
                        Tensor::from_vec(&[hd], dc).unwrap(),
                    )
                },
                1e-5,
            );
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn length_one_sees_one_step_each_way() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let layer = BiLstmLayer::init(2, 3, &mut rng);
        let xs = Tensor::from_vec(&[1, 2], vec![0.5, -0.5]).unwrap();
        let tr = layer.forward(&xs).unwrap();
        let f = layer.forward.step(xs.row(0), &[0.0; 3], &[0.0; 3]);
        let r = layer.reverse.step(xs.row(0), &[0.0; 3], &[0.0; 3]);
        assert_eq!(&tr.output.row(0)[..3], &f.h[..]);
        assert_eq!(&tr.output.row(0)[3..], &r.h[..]);
    }

    #[test]
    fn tied_directions_on_palindrome_are_mirror_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cell = LstmCell::init(2, 3, &mut rng);
        let layer = BiLstmLayer {
            forward: cell.clone(),
            reverse: cell,
        };
        let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.3, 0.3], vec![0.0, 1.0], vec![1.0, 0.0]];
        let xs = Tensor::from_rows(&rows).unwrap();
        let out = layer.forward(&xs).unwrap().output;
        let n = out.rows();
        for i in 0..n {
            let a = out.row(i);
            let b = out.row(n - 1 - i);
            for k in 0..3 {
                assert!((a[k] - b[3 + k]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn two_layer_stack_gradients() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let layers = vec![BiLstmLayer::init(3, 2, &mut rng), BiLstmLayer::init(4, 2, &mut rng)];
            let xs = Tensor::uniform(&[4, 3], 1.0, &mut rng);
            let probe = Tensor::uniform(&[4, 4], 1.0, &mut rng);
            let err = grad_check(
                &(layers, xs),
                |(layers, xs)| {
                    let tr = bilstm_stack_forward(layers, xs).unwrap();
                    dot(tr.last().unwrap().output.data(), probe.data())
                },
                |(layers, xs)| {
                    let tr = bilstm_stack_forward(layers, xs).unwrap();
                    let mut g = layers.zeros_like();
                    let dx = bilstm_stack_backward(layers, &tr, &probe, &mut g);
                    (g, dx)
                },
                1e-5,
            );
            assert!(err <= 1e-4, "seed {seed}: {err}");
        }
    }
}
