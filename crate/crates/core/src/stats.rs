//! Beta and chi-square quantiles, Clopper-Pearson exact binomial intervals
//! and Goodman simultaneous multinomial intervals.
//!
//! Everything is computed in-crate: the regularized incomplete beta and
//! gamma functions are evaluated by series and modified-Lentz continued
//! fractions, and the quantiles by Newton iteration kept inside a shrinking
//! bisection bracket.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 500;
/// Bracket width at which root finding stops.
const ROOT_TOLERANCE: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl ConfidenceInterval {
    /// The uninformative interval reported before any observation.
    pub fn full(level: f64) -> Self {
        Self {
            lower: 0.0,
            upper: 1.0,
            level,
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

/// ln Γ(x) for x > 0 (Lanczos, g = 7, nine terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    #[allow(clippy::excessive_precision)]
    const COEF: [f64; 9] = [
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
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn check_shapes(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "beta shapes must be positive, got ({a}, {b})"
        )));
    }
    Ok(())
}

/// Continued fraction for I_x(a, b), valid for x < (a+1)/(a+b+2).
fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function I_x(a, b).
pub fn regularized_beta(x: f64, a: f64, b: f64) -> Result<f64> {
    check_shapes(a, b)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidArgument(format!("x must lie in [0, 1], got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let front = (a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b)).exp();
    Ok(if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(x, a, b) / a
    } else {
        1.0 - front * beta_cf(1.0 - x, b, a) / b
    })
}

fn beta_density(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    ((a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta(a, b)).exp()
}

/// Newton's method confined to a bracket `[lo, hi]` where `f(lo) < 0 < f(hi)`
/// for an increasing `f`. Falls back to bisection whenever a Newton step
/// leaves the bracket.
fn bracketed_newton(
    mut lo: f64,
    mut hi: f64,
    start: f64,
    f: impl Fn(f64) -> f64,
    slope: impl Fn(f64) -> f64,
) -> f64 {
    let mut x = if start > lo && start < hi { start } else { 0.5 * (lo + hi) };
    for _ in 0..MAX_ITER {
        let fx = f(x);
        if fx == 0.0 {
            return x;
        }
        if fx < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= ROOT_TOLERANCE * hi.abs().max(1.0) {
            break;
        }
        let d = slope(x);
        let newton = if d > 0.0 && d.is_finite() { x - fx / d } else { f64::NAN };
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - x).abs() <= ROOT_TOLERANCE * x.abs().max(TINY) {
            return next;
        }
        x = next;
    }
    0.5 * (lo + hi)
}

/// Inverse of the regularized incomplete beta function: the x with
/// I_x(a, b) = p.
pub fn beta_quantile(p: f64, a: f64, b: f64) -> Result<f64> {
    check_shapes(a, b)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("probability must lie in [0, 1], got {p}")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let cdf = |x: f64| regularized_beta(x, a, b).expect("shapes checked") - p;
    Ok(bracketed_newton(0.0, 1.0, a / (a + b), cdf, |x| beta_density(x, a, b)))
}

/// Lower regularized gamma P(a, x) by series.
fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * EPS {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Upper regularized gamma Q(a, x) by continued fraction.
fn gamma_cf(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// (P(a, x), Q(a, x)), each computed on its accurate side.
fn regularized_gamma(a: f64, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    if x < a + 1.0 {
        let p = gamma_series(a, x);
        (p, 1.0 - p)
    } else {
        let q = gamma_cf(a, x);
        (1.0 - q, q)
    }
}

fn check_df(df: f64) -> Result<()> {
    if !(df > 0.0 && df.is_finite()) {
        return Err(Error::InvalidArgument(format!("degrees of freedom must be positive, got {df}")));
    }
    Ok(())
}

pub fn chi_square_cdf(x: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    Ok(regularized_gamma(0.5 * df, 0.5 * x).0)
}

fn chi_square_density(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let k = 0.5 * df;
    ((k - 1.0) * x.ln() - 0.5 * x - k * std::f64::consts::LN_2 - ln_gamma(k)).exp()
}

/// The q with P(X ≤ q) = p for X ~ χ²(df).
pub fn chi_square_quantile(p: f64, df: f64) -> Result<f64> {
    check_df(df)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("probability must lie in (0, 1), got {p}")));
    }
    let k = 0.5 * df;
    let mut hi = df.max(1.0);
    while regularized_gamma(k, 0.5 * hi).0 < p {
        hi *= 2.0;
    }
    // Solve on the smaller tail so that p near 1 keeps full precision.
    let q = if p <= 0.5 {
        bracketed_newton(0.0, hi, df, |x| regularized_gamma(k, 0.5 * x).0 - p, |x| {
            chi_square_density(x, df)
        })
    } else {
        let tail = 1.0 - p;
        bracketed_newton(0.0, hi, df, |x| tail - regularized_gamma(k, 0.5 * x).1, |x| {
            chi_square_density(x, df)
        })
    };
    Ok(q)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Exact (Clopper-Pearson) interval for m successes out of n trials.
pub fn clopper_pearson(m: u64, n: u64, alpha: f64) -> Result<ConfidenceInterval> {
    check_alpha(alpha)?;
    if n == 0 {
        return Err(Error::InvalidArgument("no trials".into()));
    }
    if m > n {
        return Err(Error::InvalidArgument(format!("{m} successes exceed {n} trials")));
    }
    let (mf, nf) = (m as f64, n as f64);
    let lower = if m == 0 {
        0.0
    } else {
        beta_quantile(alpha / 2.0, mf, nf - mf + 1.0)?
    };
    let upper = if m == n {
        1.0
    } else {
        beta_quantile(1.0 - alpha / 2.0, mf + 1.0, nf - mf)?
    };
    Ok(ConfidenceInterval {
        lower,
        upper,
        level: 1.0 - alpha,
    })
}

/// Goodman's simultaneous intervals for multinomial class counts, using the
/// χ²(1) quantile at 1 − α/k.
pub fn goodman_intervals(counts: &[u64], alpha: f64) -> Result<Vec<ConfidenceInterval>> {
    check_alpha(alpha)?;
    let k = counts.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least two classes, got {k}")));
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::InvalidArgument("no observations".into()));
    }
    let b = chi_square_quantile(1.0 - alpha / k as f64, 1.0)?;
    let nf = n as f64;
    Ok(counts
        .iter()
        .map(|&x| {
            let x = x as f64;
            let centre = b + 2.0 * x;
            let spread = (b * (b + 4.0 * x * (nf - x) / nf)).sqrt();
            let denom = 2.0 * (nf + b);
            // The bounds are exactly 0 and 1 at the extremes; avoid rounding.
            let lower = if x == 0.0 { 0.0 } else { ((centre - spread) / denom).clamp(0.0, 1.0) };
            let upper = if x == nf { 1.0 } else { ((centre + spread) / denom).clamp(0.0, 1.0) };
            ConfidenceInterval {
                lower,
                upper,
                level: 1.0 - alpha,
            }
        })
        .collect())
}
