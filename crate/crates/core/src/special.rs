//! Scalar special functions and stable log-domain helpers used across the
//! crate: `ln_gamma`, `digamma`, `trigamma`, softplus/sigmoid pairs, and
//! log-sum-exp. All routines are plain `f64` and accurate to well beyond the
//! tolerances the estimation code relies on (digamma ~1e-14 for x ≥ 1e-3).

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// ln(2π).
pub const LN_2PI: f64 = 1.837_877_066_409_345_6;

/// Lanczos coefficients (g = 7, 9 terms).
const LANCZOS: [f64; 9] = [
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

/// Natural log of the gamma function for x > 0 (Lanczos approximation,
/// relative error around 1e-13).
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma requires x > 0, got {x}");
    if x < 0.5 {
        // Reflection keeps the approximation in its accurate range.
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + 7.5;
    0.5 * LN_2PI + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Digamma ψ(x) for x > 0: upward recurrence into the asymptotic regime,
/// then a Bernoulli-series tail.
pub fn digamma(x: f64) -> f64 {
    assert!(x > 0.0, "digamma requires x > 0, got {x}");
    let mut x = x;
    let mut acc = 0.0;
    // Shift far enough that the truncated Bernoulli tail is below 1e-13.
    while x < 10.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // ψ(x) ≈ ln x − 1/(2x) − Σ B_{2n}/(2n x^{2n})
    acc + x.ln() - 0.5 * inv
        - inv2
            * (1.0 / 12.0
                - inv2
                    * (1.0 / 120.0
                        - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))))
}

/// Trigamma ψ′(x) for x > 0, same recurrence/asymptotic scheme as `digamma`.
pub fn trigamma(x: f64) -> f64 {
    assert!(x > 0.0, "trigamma requires x > 0, got {x}");
    let mut x = x;
    let mut acc = 0.0;
    while x < 14.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // ψ′(x) ≈ 1/x + 1/(2x²) + Σ B_{2n}/x^{2n+1}
    acc + inv
        + inv2
            * (0.5
                + inv
                    * (1.0 / 6.0
                        - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0)))))
}

/// ln(1 + e^x) without overflow on either tail.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of `softplus` on (0, ∞): y ↦ ln(e^y − 1).
pub fn softplus_inv(y: f64) -> f64 {
    assert!(y > 0.0, "softplus_inv requires y > 0, got {y}");
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Logistic function, evaluated on the numerically safe branch.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln σ(x) = −softplus(−x).
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Log of the sum of exponentials, shifted by the maximum for stability.
/// Returns −∞ on an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// x·ln(x) with the continuous-extension convention 0·ln 0 = 0.
pub fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// x·l where l is a (possibly −∞) log value; a zero coefficient annihilates
/// the term exactly, matching the gating convention of the objective.
pub fn mul_log(x: f64, l: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * l
    }
}
