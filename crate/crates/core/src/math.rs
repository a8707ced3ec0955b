//! Scalar helpers shared by every module.

/// Lower clamp bound for probabilities that enter a logarithm or logit.
pub const PROB_EPS: f64 = 1e-6;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Derivative of the logistic function expressed through its value.
#[inline]
pub fn sigmoid_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s)
}

#[inline]
pub fn logit(p: f64) -> f64 {
    libm::log(p / (1.0 - p))
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Three-valued sign with `sign(0) = 0`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Two-valued sign with `sign(0) = +1`, used wherever a label must be chosen.
#[inline]
pub fn sign_nonzero(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Cross-entropy of a predicted probability `p` against a target probability
/// `target`, with `p` clamped away from 0 and 1.
#[inline]
pub fn cross_entropy(target: f64, p: f64) -> f64 {
    let p = clamp_prob(p);
    -(target * libm::log(p) + (1.0 - target) * libm::log(1.0 - p))
}

/// Log-loss of a signed-correctness response in `[-1, 1]` against the true
/// label. The signed value maps to the probability of the correct label.
#[inline]
pub fn signed_log_loss(signed: f64) -> f64 {
    -libm::log(clamp_prob(0.5 * (1.0 + signed)))
}

/// Derivative of [`signed_log_loss`] with respect to the signed value.
/// Zero where the clamp is active.
#[inline]
pub fn signed_log_loss_grad(signed: f64) -> f64 {
    let p = 0.5 * (1.0 + signed);
    if p <= PROB_EPS || p >= 1.0 - PROB_EPS {
        0.0
    } else {
        -0.5 / p
    }
}

/// `max(x, 1 - x)`: confidence toward whichever label `x` favours.
#[inline]
pub fn bar(x: f64) -> f64 {
    if x > 1.0 - x {
        x
    } else {
        1.0 - x
    }
}

/// `n` points uniformly spaced on `[lo, hi]`, exact at both ends.
pub fn linspace(lo: f64, hi: f64, n: usize) -> alloc::vec::Vec<f64> {
    match n {
        0 => alloc::vec::Vec::new(),
        1 => alloc::vec![lo],
        _ => {
            let last = (n - 1) as f64;
            (0..n)
                .map(|i| {
                    let t = i as f64 / last;
                    lo + (hi - lo) * t
                })
                .collect()
        }
    }
}

/// Grid on `[-1, 1]` that is exactly antisymmetric: `g[i] == -g[n-1-i]`.
pub fn symmetric_unit_grid(n: usize) -> alloc::vec::Vec<f64> {
    if n == 1 {
        return alloc::vec![0.0];
    }
    let half = (n - 1) as f64 / 2.0;
    (0..n).map(|i| (i as f64 - half) / half).collect()
}
