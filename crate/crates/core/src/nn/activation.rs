//! Scalar and row-wise nonlinearities.

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln σ(x)`
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// In-place softmax with max subtraction.
pub fn softmax_in_place(xs: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - m).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// In-place log-softmax with max subtraction.
pub fn log_softmax_in_place(xs: &mut [f64]) {
    let lse = logsumexp(xs);
    for x in xs.iter_mut() {
        *x -= lse;
    }
}

/// Backward of a softmax row: returns d(logits) given probabilities and d(probs).
pub fn softmax_backward(probs: &[f64], dprobs: &[f64], dlogits: &mut [f64]) {
    let inner: f64 = probs.iter().zip(dprobs).map(|(p, g)| p * g).sum();
    for ((d, p), g) in dlogits.iter_mut().zip(probs).zip(dprobs) {
        *d = p * (g - inner);
    }
}
