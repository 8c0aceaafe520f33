//! Exact binomial confidence limits (Clopper-Pearson), found by bisection
//! on the binomial tail.

use statrs::distribution::{Binomial, Discrete, DiscreteCDF};

use crate::error::{invalid, Result};

/// Bisection stops once the bracket is narrower than this.
const BRACKET_TOL: f64 = 1e-14;

fn check_confidence(confidence: f64) -> Result<()> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(invalid(format!("confidence {confidence} must lie in (0, 1)")));
    }
    Ok(())
}

/// `P(X <= k)` for `X ~ Binomial(m, p)`.
pub fn cdf(k: u64, m: u64, p: f64) -> f64 {
    if k >= m {
        return 1.0;
    }
    Binomial::new(p, m).expect("p in [0,1]").cdf(k)
}

/// `P(X >= k)` for `X ~ Binomial(m, p)`.
pub fn sf_inclusive(k: u64, m: u64, p: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let b = Binomial::new(p, m).expect("p in [0,1]");
    // 1 - cdf(k-1) loses precision in the far tail; add the pmf term back
    (1.0 - b.cdf(k - 1)).max(b.pmf(k))
}

/// Solves `f(p) = level` for a monotone `f` on `[0, 1]`. `decreasing` gives
/// the direction. Returns the endpoint of the final bracket that keeps the
/// limit conservative (`upper` selects the larger end).
fn bisect(f: impl Fn(f64) -> f64, level: f64, decreasing: bool, upper: bool) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        if hi - lo < BRACKET_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let above = f(mid) > level;
        if above == decreasing {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if upper {
        hi
    } else {
        lo
    }
}

/// Largest `p` with `P(X <= errors; p) >= tail`.
pub fn upper_limit(errors: u64, m: u64, tail: f64) -> f64 {
    if errors >= m {
        return 1.0;
    }
    bisect(|p| cdf(errors, m, p), tail, true, true)
}

/// Smallest `p` with `P(X >= errors; p) >= tail`.
pub fn lower_limit(errors: u64, m: u64, tail: f64) -> f64 {
    if errors == 0 {
        return 0.0;
    }
    bisect(|p| sf_inclusive(errors, m, p), tail, false, false)
}

/// One-sided exact upper confidence limit on a Bernoulli mean.
pub fn one_sided_upper(errors: u64, m: u64, confidence: f64) -> Result<f64> {
    check_confidence(confidence)?;
    if m == 0 || errors > m {
        return Err(invalid(format!("need 0 <= errors <= m and m > 0, got {errors}/{m}")));
    }
    Ok(upper_limit(errors, m, 1.0 - confidence))
}

/// Two-sided exact (Clopper-Pearson) interval.
pub fn clopper_pearson(errors: u64, m: u64, confidence: f64) -> Result<(f64, f64)> {
    check_confidence(confidence)?;
    if m == 0 || errors > m {
        return Err(invalid(format!("need 0 <= errors <= m and m > 0, got {errors}/{m}")));
    }
    let tail = 0.5 * (1.0 - confidence);
    Ok((lower_limit(errors, m, tail), upper_limit(errors, m, tail)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_errors_closed_form() {
        // (1 - p)^100 = 0.01
        let expected = 1.0 - 0.01f64.powf(0.01);
        let got = one_sided_upper(0, 100, 0.99).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        assert!((got - 0.04501).abs() < 1e-3);

        let (lo, hi) = clopper_pearson(0, 100, 0.99).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.005f64.powf(0.01))).abs() < 1e-9);
        assert!((hi - 0.052).abs() < 1e-3);
    }

    #[test]
    fn all_errors() {
        let (lo, hi) = clopper_pearson(100, 100, 0.99).unwrap();
        assert_eq!(hi, 1.0);
        assert!((lo - 0.005f64.powf(0.01)).abs() < 1e-9);
    }

    #[test]
    fn level_is_met() {
        for &(k, m) in &[(3u64, 50u64), (17, 200), (1, 10), (99, 100)] {
            let (lo, hi) = clopper_pearson(k, m, 0.95).unwrap();
            assert!(lo <= k as f64 / m as f64 && k as f64 / m as f64 <= hi);
            assert!((cdf(k, m, hi) - 0.025).abs() < 1e-10);
            assert!((sf_inclusive(k, m, lo) - 0.025).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_bad_confidence() {
        assert!(one_sided_upper(0, 10, 1.0).is_err());
        assert!(clopper_pearson(0, 10, 0.0).is_err());
        assert!(clopper_pearson(11, 10, 0.9).is_err());
    }
}
