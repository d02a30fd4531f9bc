//! Laplace distribution discretized onto unit-width integer bins.
//!
//! The bin of symbol `x` covers `[x - 1/2, x + 1/2]`. With `u = x - mu` and scale
//! `b`, its mass is
//!
//! ```text
//! |u| >= 1/2:  1/2 * exp(-(|u| - 1/2) / b) * (1 - exp(-1/b))
//! |u| <  1/2:  1 - 1/2 * exp(-(1/2 + u) / b) - 1/2 * exp(-(1/2 - u) / b)
//! ```
//!
//! Both branches are evaluated through `expm1` so that neither wide nor
//! narrow scales lose precision to cancellation.

/// Laplace CDF.
pub fn cdf(y: f64, mu: f64, b: f64) -> f64 {
    let t = (y - mu) / b;
    if t < 0.0 {
        0.5 * t.exp()
    } else {
        1.0 - 0.5 * (-t).exp()
    }
}

/// Laplace density.
pub fn pdf(y: f64, mu: f64, b: f64) -> f64 {
    (-(y - mu).abs() / b).exp() / (2.0 * b)
}

/// Natural log of the bin mass at offset `u = x - mu`.
pub fn bin_log_prob(u: f64, b: f64) -> f64 {
    let a = u.abs();
    if a >= 0.5 {
        0.5f64.ln() - (a - 0.5) / b + (-(-1.0 / b).exp_m1()).ln()
    } else {
        let p = -0.5 * ((-(0.5 + a) / b).exp_m1() + (-(0.5 - a) / b).exp_m1());
        p.ln()
    }
}

/// Bin mass at offset `u`.
pub fn bin_prob(u: f64, b: f64) -> f64 {
    bin_log_prob(u, b).exp()
}

/// Gradient of [`bin_log_prob`] with respect to `(mu, b)`.
pub fn bin_log_prob_grad(u: f64, b: f64) -> (f64, f64) {
    let a = u.abs();
    if a >= 0.5 {
        let d_mu = u.signum() / b;
        let d_b = (a - 0.5) / (b * b) - 1.0 / (b * b * (1.0 / b).exp_m1());
        (d_mu, d_b)
    } else {
        let e_hi = (-(u + 0.5) / b).exp();
        let e_lo = (-(0.5 - u) / b).exp();
        let p = -0.5 * ((-(0.5 + u) / b).exp_m1() + (-(0.5 - u) / b).exp_m1());
        let dp_mu = -(0.5 / b) * (e_hi - e_lo);
        let dp_b = -(0.5 / (b * b)) * ((u + 0.5) * e_hi + (0.5 - u) * e_lo);
        (dp_mu / p, dp_b / p)
    }
}

/// Code length in bits of each symbol under its own `(mu, b)`.
pub fn bits(x: &[f64], mu: &[f64], b: &[f64]) -> f64 {
    x.iter()
        .zip(mu)
        .zip(b)
        .map(|((&x, &m), &s)| -bin_log_prob(x - m, s) / std::f64::consts::LN_2)
        .sum()
}
