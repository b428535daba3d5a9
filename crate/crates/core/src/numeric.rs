//! Log-space arithmetic helpers shared by the oracles and message passing.

/// `log(exp(a) + exp(b))` without overflow; `-inf` entries behave as zero mass.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `log Σ exp(v)` over a slice; empty slices and all `-inf` give `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        if v > hi {
            hi = v;
        }
    }
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for &v in values {
        sum += (v - hi).exp();
    }
    hi + sum.ln()
}

/// Streaming log-sum-exp accumulator for loops that cannot collect a slice.
#[derive(Debug, Clone, Copy)]
pub struct LogSumAcc {
    hi: f64,
    sum: f64,
}

impl LogSumAcc {
    pub fn new() -> Self {
        LogSumAcc {
            hi: f64::NEG_INFINITY,
            sum: 0.0,
        }
    }

    pub fn add(&mut self, v: f64) {
        if v == f64::NEG_INFINITY {
            return;
        }
        if v <= self.hi {
            self.sum += (v - self.hi).exp();
        } else {
            self.sum = self.sum * (self.hi - v).exp() + 1.0;
            self.hi = v;
        }
    }

    pub fn value(&self) -> f64 {
        if self.hi == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.hi + self.sum.ln()
        }
    }
}

impl Default for LogSumAcc {
    fn default() -> Self {
        Self::new()
    }
}

/// Shannon entropy of a probability vector in nats; `0 log 0` counts as 0.
pub fn entropy(probs: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in probs {
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    h
}

/// Normalizes a log-space table in place and returns its log normalizer.
pub fn normalize_log(table: &mut [f64]) -> f64 {
    let z = log_sum_exp(table);
    if z == f64::NEG_INFINITY {
        // No mass anywhere; leave as-is.
        return z;
    }
    for v in table.iter_mut() {
        *v -= z;
    }
    z
}

/// Converts a normalized log-space table into linear probabilities.
pub fn exp_table(table: &[f64]) -> Vec<f64> {
    table.iter().map(|&v| v.exp()).collect()
}

/// Index of the maximum entry, ties broken toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
