//! Special-function helpers shared by the families and the test statistics.

use statrs::function::erf;
use statrs::function::gamma;

/// Natural log of the gamma function.
pub fn ln_gamma(x: f64) -> f64 {
    gamma::ln_gamma(x)
}

/// Digamma function.
pub fn digamma(x: f64) -> f64 {
    gamma::digamma(x)
}

/// Trigamma function via recurrence plus the asymptotic series.
pub fn trigamma(x: f64) -> f64 {
    let mut x = x;
    let mut acc = 0.0;
    // shift the argument above 20 so the truncated expansion is exact to
    // double precision
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/(2x^2) + 1/(6x^3) - 1/(30x^5) + 1/(42x^7) - 1/(30x^9)
    acc + inv * (1.0 + inv * (0.5 + inv * (1.0 / 6.0 + inv2 * (-1.0 / 30.0 + inv2 * (1.0 / 42.0 - inv2 / 30.0)))))
}

/// Survival function of the chi-square distribution with `k` degrees of freedom.
pub fn chi_square_sf(x: f64, k: usize) -> f64 {
    assert!(x >= 0.0 && k >= 1, "chi-square sf needs x >= 0, k >= 1");
    if x == 0.0 {
        return 1.0;
    }
    // regularized upper incomplete gamma Q(k/2, x/2)
    gamma::gamma_ur(0.5 * k as f64, 0.5 * x)
}

/// Standard normal cumulative distribution function.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// log of the standard normal CDF, stable far into the lower tail.
pub fn std_normal_log_cdf(z: f64) -> f64 {
    if z > -10.0 {
        std_normal_cdf(z).ln()
    } else {
        // asymptotic expansion of Mills ratio:
        // ln Phi(z) ~ -z^2/2 - ln(-z sqrt(2 pi)) + ln(1 - 1/z^2 + 3/z^4)
        let z2 = z * z;
        -0.5 * z2 - (-z * (2.0 * std::f64::consts::PI).sqrt()).ln()
            + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// Regularized lower incomplete gamma P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        gamma::gamma_lr(a, x)
    }
}
