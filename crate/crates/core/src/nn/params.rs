use super::Tensor;

/// A fixed collection of named parameter tensors.
///
/// The same type doubles as its own gradient buffer: `zeros_like` gives an
/// accumulator with matching shapes, and visiting order is stable so Adam
/// moments and checkpoints can be addressed positionally.
pub trait Params: Clone {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor));

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, t| t.fill(0.0));
        z
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        self.visit("", &mut |_, t| out.push(t));
        out
    }

    fn named(&self, prefix: &str) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit(prefix, &mut |n, t| out.push((n, t.clone())));
        out
    }

    fn accumulate(&mut self, other: &Self) {
        let others = other.tensors();
        let mut i = 0;
        self.visit_mut("", &mut |_, t| {
            t.add_assign(others[i]);
            i += 1;
        });
    }

    fn scale_all(&mut self, s: f64) {
        self.visit_mut("", &mut |_, t| t.scale(s));
    }

    fn num_values(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.all_finite())
    }

    /// Flattened copy of every value, in visiting order.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for t in self.tensors() {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Overwrites every value from a flat slice produced by `flatten`.
    fn unflatten(&mut self, flat: &[f64]) {
        let mut off = 0;
        self.visit_mut("", &mut |_, t| {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        });
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<P: Params> Params for Vec<P> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        for (i, p) in self.iter().enumerate() {
            p.visit(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        for (i, p) in self.iter_mut().enumerate() {
            p.visit_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl Params for Tensor {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(prefix.to_string(), self);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(prefix.to_string(), self);
    }
}
