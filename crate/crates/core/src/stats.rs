//! Small numeric helpers shared across modules.

use std::f64::consts::PI;

use crate::special::ln_gamma_unchecked;

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let max = a.max(b);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + ((a - max).exp() + (b - max).exp()).ln()
}

/// `ln(exp(a) - exp(b))` for `a >= b`.
pub fn log_diff_exp(a: f64, b: f64) -> f64 {
    if b == f64::NEG_INFINITY {
        return a;
    }
    if b >= a {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(xs: &[f64], prob: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, prob)
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

pub fn normal_logpdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + variance.ln() + d * d / variance)
}

/// Log density of the half-t distribution with `nu` degrees of freedom and scale `scale`
/// on `x >= 0`; `-inf` for negative `x`.
pub fn half_t_logpdf(x: f64, nu: f64, scale: f64) -> f64 {
    if x < 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = x / scale;
    std::f64::consts::LN_2 + ln_gamma_unchecked(0.5 * (nu + 1.0))
        - ln_gamma_unchecked(0.5 * nu)
        - 0.5 * (nu * PI).ln()
        - scale.ln()
        - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lse_handles_infinities() {
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            f64::NEG_INFINITY
        );
        assert_abs_diff_eq!(log_sum_exp(&[0.0, 0.0]), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(
            log_add_exp(1000.0, 1000.0),
            1000.0 + 2f64.ln(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(log_diff_exp(2f64.ln(), 0.0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn half_t_at_zero_is_twice_t() {
        let nu: f64 = 3.0;
        let s = 2f64.sqrt();
        let t0 = ln_gamma_unchecked(2.0) - ln_gamma_unchecked(1.5) - 0.5 * (nu * PI).ln() - s.ln();
        assert_abs_diff_eq!(half_t_logpdf(0.0, nu, s), t0 + 2f64.ln(), epsilon = 1e-14);
        assert_eq!(half_t_logpdf(-0.1, nu, s), f64::NEG_INFINITY);
    }

    #[test]
    fn interpolated_quantiles() {
        let xs = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(median(&xs), 3.0);
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 5.0);
        assert_abs_diff_eq!(quantile(&xs, 0.125), 1.5, epsilon = 1e-15);
    }
}
