//! Scalar distribution functions and multiple-testing helpers.

use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
#[allow(clippy::excessive_precision)]
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Γ(x)` for `x > 0` (Lanczos approximation, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Reflection keeps the approximation in its accurate range.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularised upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_p_series(a, x)
    } else {
        gamma_q_continued_fraction(a, x)
    }
}

fn gamma_p_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..100_000 {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * 1e-17 {
            break;
        }
    }
    (sum.ln() - x + a * x.ln() - ln_gamma(a)).exp()
}

fn gamma_q_continued_fraction(a: f64, x: f64) -> f64 {
    // Modified Lentz evaluation.
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..100_000 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Upper-tail probability `P(X > x)` for `X ~ χ²(df)`.
pub fn chi2_sf(x: f64, df: usize) -> Result<f64> {
    if df == 0 {
        return Err(Error::InvalidInput("chi-square degrees of freedom must be positive".into()));
    }
    if x.is_nan() || x < 0.0 {
        return Err(Error::InvalidInput(format!("chi-square argument must be nonnegative, got {x}")));
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    Ok(gamma_q(0.5 * df as f64, 0.5 * x).clamp(0.0, 1.0))
}

/// Quantile `x` with `P(X <= x) = prob` for `X ~ χ²(df)`, by bisection on [`chi2_sf`].
pub fn chi2_quantile(prob: f64, df: usize) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::InvalidInput(format!("probability must lie in (0, 1), got {prob}")));
    }
    let target = 1.0 - prob;
    let mut hi = df as f64 + 10.0 * (2.0 * df as f64).sqrt() + 10.0;
    while chi2_sf(hi, df)? > target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_sf(mid, df)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Benjamini-Hochberg adjusted p-values, returned in input order.
///
/// `p_(i) * m / i` over ascending ranks, followed by a running minimum from
/// the largest rank down and a cap at 1.
pub fn bh_adjust(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0_f64;
    for rank in (0..m).rev() {
        let idx = order[rank];
        running = running.min(p[idx] * m as f64 / (rank + 1) as f64);
        adjusted[idx] = running.min(1.0);
    }
    adjusted
}

/// Exact (Clopper-Pearson) two-sided confidence interval for a binomial rate.
pub fn clopper_pearson(successes: usize, trials: usize, level: f64) -> Result<(f64, f64)> {
    if trials == 0 || successes > trials {
        return Err(Error::InvalidInput(format!("invalid binomial counts {successes}/{trials}")));
    }
    let alpha = 1.0 - level;
    let (k, n) = (successes as f64, trials as f64);
    let beta_q = |a: f64, b: f64, p: f64| -> Result<f64> {
        Beta::new(a, b).map(|d| d.inverse_cdf(p)).map_err(|e| Error::InvalidInput(format!("beta quantile: {e}")))
    };
    let lower = if successes == 0 { 0.0 } else { beta_q(k, n - k + 1.0, alpha / 2.0)? };
    let upper = if successes == trials { 1.0 } else { beta_q(k + 1.0, n - k, 1.0 - alpha / 2.0)? };
    Ok((lower, upper))
}

/// Kolmogorov-Smirnov distance between the sample and Uniform(0, 1).
pub fn ks_uniform_distance(sample: &[f64]) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &v)| {
            let v = v.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - v).max(v - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" definition).
pub fn empirical_quantile(sample: &[f64], prob: f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}
