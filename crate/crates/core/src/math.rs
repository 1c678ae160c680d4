//! Scalar helpers shared by the model, sampler and objective code.
//!
//! The logistic function and softplus switch to asymptotic forms once
//! `|x|` exceeds [`STABLE_SWITCH`]; beyond that point the neglected term is
//! below the absolute double-precision rounding of values of order one.

pub const STABLE_SWITCH: f64 = 30.0;

/// `e^x / (1 + e^x)`.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x > STABLE_SWITCH {
        1.0 - (-x).exp()
    } else if x < -STABLE_SWITCH {
        x.exp()
    } else {
        1.0 / (1.0 + (-x).exp())
    }
}

/// `ln(1 + e^x)`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > STABLE_SWITCH {
        x + (-x).exp()
    } else if x < -STABLE_SWITCH {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln sig(x) = -softplus(-x)`.
#[inline]
pub fn ln_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

pub fn log_sum_exp<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let iter = values.into_iter();
    let max = iter.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || !max.is_finite() {
        return max;
    }
    let sum: f64 = iter.map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Running mean and unbiased variance (Welford). Identical inputs yield a
/// variance of exactly zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased (n - 1) variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).max(0.0)
        }
    }
}
