//! Central finite-difference gradient checking.

use super::params::Params;

/// Relative error between an analytic and a numeric derivative.
///
/// The denominator is `max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic(inputs)` against central differences
/// `(f(x+h) - f(x-h)) / 2h` for every coordinate of `inputs` and returns the
/// largest relative error net of rounding noise (see [`GradCheckReport`]).
pub fn grad_check<P, F, G>(inputs: &P, f: F, analytic: G, h: f64) -> f64
where
    P: Params,
    F: Fn(&P) -> f64,
    G: Fn(&P) -> P,
{
    grad_check_report(inputs, f, analytic, h).max_net_error
}

/// Outcome of a gradient check with the worst coordinate located.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Plain `|a - n| / max(|a|, |n|, 1e-8)`.
    pub max_error: f64,
    /// Same, after subtracting the rounding bound `4ε·max|f(x±h)| / 2h` of
    /// the difference quotient from `|a - n|`. Differs from `max_error` only
    /// for derivatives so small that the quotient is dominated by noise.
    pub max_net_error: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub coordinates: usize,
    /// Coordinates where the one-sided slopes disagree: the function has a
    /// kink there and the comparison is meaningless.
    pub kinks: Vec<usize>,
}

pub fn grad_check_report<P, F, G>(inputs: &P, f: F, analytic: G, h: f64) -> GradCheckReport
where
    P: Params,
    F: Fn(&P) -> f64,
    G: Fn(&P) -> P,
{
    let grads = analytic(inputs).flatten();
    let base = inputs.flatten();
    let mut probe = inputs.clone();
    let mut flat = base.clone();
    let centre = f(inputs);
    let mut report = GradCheckReport {
        max_error: 0.0,
        max_net_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        coordinates: base.len(),
        kinks: Vec::new(),
    };
    for k in 0..base.len() {
        flat[k] = base[k] + h;
        probe.unflatten(&flat);
        let up = f(&probe);
        flat[k] = base[k] - h;
        probe.unflatten(&flat);
        let down = f(&probe);
        flat[k] = base[k];
        let numeric = (up - down) / (2.0 * h);
        let (right, left) = ((up - centre) / h, (centre - down) / h);
        if (right - left).abs() > 1e-2 * numeric.abs().max(1.0) {
            report.kinks.push(k);
        }
        let err = relative_error(grads[k], numeric);
        if err > report.max_error || err.is_nan() {
            report.max_error = if err.is_nan() { f64::INFINITY } else { err };
        }
        let noise = 4.0 * f64::EPSILON * up.abs().max(down.abs()) / (2.0 * h);
        let denom = grads[k].abs().max(numeric.abs()).max(1e-8);
        let net = ((grads[k] - numeric).abs() - noise).max(0.0) / denom;
        if net > report.max_net_error || net.is_nan() {
            report.max_net_error = if net.is_nan() { f64::INFINITY } else { net };
            report.worst_index = k;
            report.worst_analytic = grads[k];
            report.worst_numeric = numeric;
        }
    }
    report
}

impl<A: Params, B: Params> Params for (A, B) {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a super::Tensor)) {
        self.0.visit(&super::params::join(prefix, "0"), f);
        self.1.visit(&super::params::join(prefix, "1"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut super::Tensor)) {
        self.0.visit_mut(&super::params::join(prefix, "0"), f);
        self.1.visit_mut(&super::params::join(prefix, "1"), f);
    }
}

impl<A: Params, B: Params, C: Params> Params for (A, B, C) {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a super::Tensor)) {
        self.0.visit(&super::params::join(prefix, "0"), f);
        self.1.visit(&super::params::join(prefix, "1"), f);
        self.2.visit(&super::params::join(prefix, "2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut super::Tensor)) {
        self.0.visit_mut(&super::params::join(prefix, "0"), f);
        self.1.visit_mut(&super::params::join(prefix, "1"), f);
        self.2.visit_mut(&super::params::join(prefix, "2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn square_at_three() {
        let x = Tensor::from_vec(&[1], vec![3.0]).unwrap();
        let err = grad_check(
            &x,
            |t: &Tensor| t.data()[0] * t.data()[0],
            |t: &Tensor| Tensor::from_vec(&[1], vec![2.0 * t.data()[0]]).unwrap(),
            1e-5,
        );
        assert!(err < 1e-9);
    }

    #[test]
    fn l1_kink_at_zero_is_flagged() {
        let x = Tensor::from_vec(&[1], vec![0.0]).unwrap();
        let sign = |v: f64| if v == 0.0 { 0.0 } else { v.signum() };
        let report = grad_check_report(
            &x,
            |t: &Tensor| t.data()[0].abs(),
            |t: &Tensor| Tensor::from_vec(&[1], vec![sign(t.data()[0])]).unwrap(),
            1e-5,
        );
        assert_eq!(report.kinks, vec![0]);
    }

    #[test]
    fn rounding_noise_is_discounted() {
        // true slope 1e-9 on a function of size 1e6: the quotient is all noise
        let x = Tensor::from_vec(&[1], vec![0.25]).unwrap();
        let report = grad_check_report(
            &x,
            |t: &Tensor| 1e6 + 1e-9 * t.data()[0],
            |_: &Tensor| Tensor::from_vec(&[1], vec![1e-9]).unwrap(),
            1e-5,
        );
        assert!(report.max_error > 1e-4);
        assert_eq!(report.max_net_error, 0.0);
        // a wrong derivative of ordinary size is still caught
        let bad = grad_check(
            &x,
            |t: &Tensor| 3.0 * t.data()[0],
            |_: &Tensor| Tensor::from_vec(&[1], vec![3.01]).unwrap(),
            1e-5,
        );
        assert!(bad > 1e-3);
    }

    #[test]
    fn smooth_function_has_no_kinks() {
        let x = Tensor::from_vec(&[2], vec![0.3, -1.2]).unwrap();
        let report = grad_check_report(
            &x,
            |t: &Tensor| t.data()[0].sin() * t.data()[1].exp(),
            |t: &Tensor| {
                let (a, b) = (t.data()[0], t.data()[1]);
                Tensor::from_vec(&[2], vec![a.cos() * b.exp(), a.sin() * b.exp()]).unwrap()
            },
            1e-5,
        );
        assert!(report.kinks.is_empty());
        assert!(report.max_error < 1e-8);
    }
}
