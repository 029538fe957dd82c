//! Descriptive statistics, Pearson correlation and the Student-t
//! distribution.
//!
//! The t-distribution is evaluated through the regularized incomplete beta
//! function (continued-fraction expansion, modified Lentz), and inverted by
//! a bracketed Newton/bisection search.

use crate::error::{Error, Result};

/// Neumaier-compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for x in iter {
            acc.add(x);
        }
        acc
    }
}

pub fn sum(xs: &[f64]) -> f64 {
    xs.iter().copied().collect::<KahanSum>().total()
}

pub fn mean(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("mean of an empty sample"));
    }
    Ok(sum(xs) / xs.len() as f64)
}

/// Sample standard deviation (n - 1 denominator), two-pass.
pub fn sample_std(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::EmptyInput("standard deviation needs at least two values"));
    }
    let m = mean(xs)?;
    let ss = xs.iter().map(|x| (x - m) * (x - m)).collect::<KahanSum>().total();
    Ok((ss / (xs.len() - 1) as f64).sqrt())
}

pub fn median(xs: &[f64]) -> Result<f64> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("median of an empty sample"));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Linear-interpolation quantile of an already sorted sample
/// (the "type 7" definition).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid("ys", "samples differ in length"));
    }
    if xs.len() < 2 {
        return Err(Error::EmptyInput("correlation needs at least two pairs"));
    }
    let mx = mean(xs)?;
    let my = mean(ys)?;
    let mut sxy = KahanSum::new();
    let mut sxx = KahanSum::new();
    let mut syy = KahanSum::new();
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy.add(dx * dy);
        sxx.add(dx * dx);
        syy.add(dy * dy);
    }
    let (sxx, syy) = (sxx.total(), syy.total());
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("a sample has zero variance"));
    }
    let r = sxy.total() / (sxx.sqrt() * syy.sqrt());
    // exactly collinear data can land a couple of ulps short of ±1
    if 1.0 - r.abs() <= 4.0 * f64::EPSILON {
        return Ok(r.signum());
    }
    Ok(r.clamp(-1.0, 1.0))
}

/// t statistic of a Pearson coefficient: r·√(n−2)/√(1−r²).
/// |r| = 1 maps to a signed infinity.
pub fn t_from_r(r: f64, n: usize) -> f64 {
    let df = n as f64 - 2.0;
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return if r > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    r * df.sqrt() / denom.sqrt()
}

/// Inverse of [`t_from_r`]: r = t/√(t² + df).
pub fn r_from_t(t: f64, df: f64) -> f64 {
    t / (t * t + df).sqrt()
}

/// ln Γ(x) for x > 0 (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized incomplete beta I_x(a, b).
pub fn inc_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    // The continued fraction converges fast for x < (a+1)/(a+b+2);
    // use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) otherwise.
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(x, a, b) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(1.0 - x, b, a) / b
    }
}

fn beta_cf(x: f64, a: f64, b: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
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
    for m in 1..10_000 {
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

/// Student-t cumulative distribution function.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let x = df / (df + t * t);
    let tail = 0.5 * inc_beta(x, 0.5 * df, 0.5);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Two-tailed P(|T| > |t|), computed from the tail directly so that tiny
/// probabilities keep their precision.
pub fn student_t_two_tailed(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    inc_beta(df / (df + t * t), 0.5 * df, 0.5)
}

/// Upper-tail quantile: the t with P(T > t) = `upper_tail` for
/// `upper_tail` in (0, 0.5].
pub fn student_t_upper_quantile(upper_tail: f64, df: f64) -> Result<f64> {
    if !(upper_tail > 0.0 && upper_tail <= 0.5) {
        return Err(Error::invalid(
            "p",
            format!("tail probability {upper_tail} outside (0, 0.5]"),
        ));
    }
    if df.is_nan() || df <= 0.0 {
        return Err(Error::invalid(
            "df",
            format!("degrees of freedom {df} must be positive"),
        ));
    }
    // P(T > t) = 0.5 * I_{df/(df+t²)}(df/2, 1/2); solve for the beta argument
    // by bisection on t, which is monotone.
    let tail = |t: f64| 0.5 * inc_beta(df / (df + t * t), 0.5 * df, 0.5);
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    while tail(hi) > upper_tail {
        hi *= 2.0;
        if hi > 1e300 {
            return Err(Error::Numerical("t quantile bracket diverged".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if tail(mid) > upper_tail {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Two-tailed critical Pearson r at significance `alpha_level` for a sample
/// of `n` pairs: r* = t*/√(t*² + n − 2).
pub fn critical_r(n: usize, alpha_level: f64) -> Result<f64> {
    if n < 3 {
        return Err(Error::invalid("n", "critical r needs n >= 3"));
    }
    if !(alpha_level > 0.0 && alpha_level < 1.0) {
        return Err(Error::invalid(
            "alpha_level",
            format!("{alpha_level} is not a probability in (0, 1)"),
        ));
    }
    let df = (n - 2) as f64;
    let t_star = student_t_upper_quantile(alpha_level / 2.0, df)?;
    Ok(r_from_t(t_star, df))
}
