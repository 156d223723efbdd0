//! Small numeric helpers shared across modules: compensated summation for
//! order-independent-to-rounding reductions, and log-space weight statistics
//! for exponential-tilt estimators.

/// Kahan-compensated sum over a fixed iteration order.
///
/// All per-path reductions in this crate go through this (or
/// [`WeightStats`]) so that results are deterministic and the accumulated
/// rounding stays near machine epsilon even for millions of terms.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Mean of a slice via compensated summation.
pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    kahan_sum(values.iter().copied()) / values.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    kahan_sum(values.iter().map(|v| (v - m) * (v - m))) / (n - 1) as f64
}

/// Standard error of the sample mean.
pub fn standard_error(values: &[f64]) -> f64 {
    (sample_variance(values) / values.len() as f64).sqrt()
}

/// Log-space statistics of exponential weights `w_p = exp(-s_p)`.
///
/// All quantities are computed after subtracting `max_p(-s_p)`, so they are
/// immune to overflow/underflow of the raw exponentials and invariant (up to
/// rounding) under a constant shift of `s`.
#[derive(Debug, Clone)]
pub struct WeightStats {
    /// `max_p(-s_p)`, the subtracted log offset.
    pub log_offset: f64,
    /// Scaled weights `exp(-s_p - log_offset)`, each in (0, 1].
    pub scaled: Vec<f64>,
    /// Sum of scaled weights.
    pub sum: f64,
    /// Sum of squared scaled weights.
    pub sum_sq: f64,
}

impl WeightStats {
    /// Compute from per-path exponents `s` (weights are `exp(-s)`).
    pub fn from_exponents(s: &[f64]) -> Self {
        let log_offset = s.iter().fold(f64::NEG_INFINITY, |acc, &v| acc.max(-v));
        let scaled: Vec<f64> = s.iter().map(|&v| (-v - log_offset).exp()).collect();
        let sum = kahan_sum(scaled.iter().copied());
        let sum_sq = kahan_sum(scaled.iter().map(|w| w * w));
        WeightStats {
            log_offset,
            scaled,
            sum,
            sum_sq,
        }
    }

    pub fn len(&self) -> usize {
        self.scaled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scaled.is_empty()
    }

    /// Effective sample size `(sum w)^2 / sum w^2`.
    pub fn ess(&self) -> f64 {
        if self.sum_sq == 0.0 {
            return 0.0;
        }
        self.sum * self.sum / self.sum_sq
    }

    /// `log((1/M) sum_p exp(-s_p))` — the stabilized log of the mean weight.
    pub fn log_mean(&self) -> f64 {
        self.log_offset + (self.sum / self.len() as f64).ln()
    }

    /// Normalized weights summing to 1.
    pub fn normalized(&self) -> Vec<f64> {
        self.scaled.iter().map(|w| w / self.sum).collect()
    }

    /// Log of the normalized weights.
    pub fn normalized_log(&self) -> Vec<f64> {
        let log_sum = self.log_offset + self.sum.ln();
        self.scaled
            .iter()
            .map(|w| w.ln() + self.log_offset - log_sum)
            .collect()
    }

    /// Self-normalized weighted mean of `values` and its delta-method
    /// standard error: `sum(wn_p^2 (y_p - mean)^2).sqrt()` with normalized
    /// weights `wn`.
    pub fn weighted_mean_se(&self, values: &[f64]) -> (f64, f64) {
        debug_assert_eq!(values.len(), self.len());
        let m = kahan_sum(
            self.scaled
                .iter()
                .zip(values)
                .map(|(w, y)| w / self.sum * y),
        );
        let var = kahan_sum(
            self.scaled
                .iter()
                .zip(values)
                .map(|(w, y)| (w / self.sum) * (w / self.sum) * (y - m) * (y - m)),
        );
        (m, var.sqrt())
    }
}
