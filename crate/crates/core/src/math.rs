//! Scalar math helpers routed through `libm` so the crate builds without std.

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

#[inline]
pub fn powi(base: f64, n: u64) -> f64 {
    libm::pow(base, n as f64)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + exp(-x))
    } else {
        let e = exp(x);
        e / (1.0 + e)
    }
}

/// `ln(sigmoid(x))` without overflow for large negative `x`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -ln(1.0 + exp(-x))
    } else {
        x - ln(1.0 + exp(x))
    }
}

/// Binary cross-entropy between `sigmoid(logit)` and a 0/1 target.
#[inline]
pub fn bce_with_logit(logit: f64, target: f64) -> f64 {
    // CE = -t*ln(s) - (1-t)*ln(1-s), written in logit form for stability.
    -(target * log_sigmoid(logit) + (1.0 - target) * log_sigmoid(-logit))
}

/// In-place softmax of a row of logits.
pub fn softmax_in_place(row: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for &v in row.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = exp(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// `ln(softmax(row)[index])`, computed stably.
pub fn log_softmax_at(row: &[f64], index: usize) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &v in row.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = 0.0;
    for &v in row.iter() {
        sum += exp(v - max);
    }
    row[index] - max - ln(sum)
}
