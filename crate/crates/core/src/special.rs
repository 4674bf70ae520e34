//! Scalar special functions: gamma, error function and Bessel functions of
//! real order.
//!
//! Bessel evaluation uses ascending series below `z ~ 15` (`z ~ 2` for K)
//! and asymptotic/continued-fraction expansions above, so that non-integer
//! orders coming from derivative recurrences are handled uniformly.

use std::f64::consts::PI;

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0` (Lanczos approximation).
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma requires x > 0, got {x}");
    if x < 0.5 {
        // reflection: Gamma(x) Gamma(1-x) = pi / sin(pi x)
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, &c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Gamma function for real `x` (poles at non-positive integers).
pub fn gamma(x: f64) -> f64 {
    if x > 0.0 {
        ln_gamma(x).exp()
    } else {
        assert!(
            x.fract() != 0.0,
            "gamma pole at non-positive integer {x}"
        );
        PI / ((PI * x).sin() * ln_gamma(1.0 - x).exp())
    }
}

/// Complementary error function, full double accuracy.
///
/// Taylor series of erf for |x| < 2.5, Legendre continued fraction beyond.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.5 {
        1.0 - erf_series(x)
    } else {
        erfc_cf(x)
    }
}

/// Error function.
pub fn erf(x: f64) -> f64 {
    if x.abs() < 2.5 {
        if x >= 0.0 {
            erf_series(x)
        } else {
            -erf_series(-x)
        }
    } else {
        1.0 - erfc(x).min(2.0)
    }
}

fn erf_series(x: f64) -> f64 {
    // erf(x) = 2/sqrt(pi) sum_k (-1)^k x^{2k+1} / (k! (2k+1))
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    for k in 1..200 {
        let k = k as f64;
        term *= -x2 / k;
        let del = term / (2.0 * k + 1.0);
        sum += del;
        if del.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    2.0 / PI.sqrt() * sum
}

fn erfc_cf(x: f64) -> f64 {
    // Legendre continued fraction
    // sqrt(pi) e^{x^2} erfc(x) = 1/(x + (1/2)/(x + (2/2)/(x + (3/2)/(x + ...))))
    // evaluated with the modified Lentz algorithm.
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0f64;
    for k in 1..300 {
        let a = 0.5 * k as f64;
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = x + a / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (PI.sqrt() * f)
}

/// Standard normal cumulative distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

const BESSEL_EPS: f64 = 1e-16;
const BESSEL_MAXIT: usize = 20_000;

// Taylor coefficients of 1/Gamma(1+z) used for the mu -> 0 limit of the
// Temme auxiliaries.
const INV_GAMMA_C1: f64 = 0.577_215_664_901_532_9;
const INV_GAMMA_C3: f64 = -0.042_002_635_034_095_24;

/// Temme auxiliaries: gam1 = [1/G(1-mu) - 1/G(1+mu)]/(2 mu),
/// gam2 = [1/G(1-mu) + 1/G(1+mu)]/2, plus 1/G(1+mu) and 1/G(1-mu).
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let gampl = 1.0 / gamma(1.0 + mu);
    let gammi = 1.0 / gamma(1.0 - mu);
    let gam1 = if mu.abs() < 1e-5 {
        -(INV_GAMMA_C1 + INV_GAMMA_C3 * mu * mu)
    } else {
        (gammi - gampl) / (2.0 * mu)
    };
    let gam2 = 0.5 * (gammi + gampl);
    (gam1, gam2, gampl, gammi)
}

/// Modified Bessel function of the second kind `K_nu(x)` for real order
/// `nu >= 0` and `x > 0`.
///
/// Temme series for `x <= 2`, Steed continued fraction for `x > 2`, then
/// stable upward recurrence in the order.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    assert!(nu >= 0.0, "bessel_k: order must be non-negative, got {nu}");
    assert!(x > 0.0, "bessel_k: argument must be positive, got {x}");
    let n = (nu + 0.5).floor() as usize;
    let mu = nu - n as f64;
    let mu2 = mu * mu;
    let xi = 1.0 / x;

    let (mut k_mu, mut k_mu1) = if x <= 2.0 {
        // Temme's series around order mu in [-1/2, 1/2).
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < BESSEL_EPS {
            1.0
        } else {
            pimu / pimu.sin()
        };
        let mut d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < BESSEL_EPS {
            1.0
        } else {
            e.sinh() / e
        };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let e = e.exp();
        let mut p = 0.5 * e / gampl;
        let mut q = 0.5 / (e * gammi);
        let mut c = 1.0;
        d = x2 * x2;
        let mut sum1 = p;
        let mut converged = false;
        for i in 1..=BESSEL_MAXIT {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= d / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            let del1 = c * (p - fi * ff);
            sum1 += del1;
            if del.abs() < sum.abs() * BESSEL_EPS {
                converged = true;
                break;
            }
        }
        assert!(converged, "bessel_k series failed to converge");
        (sum, sum1 * 2.0 * xi)
    } else {
        // Steed's continued fraction CF2.
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut h = d;
        let mut delh = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        let mut converged = false;
        for i in 2..=BESSEL_MAXIT {
            a -= 2.0 * (i as f64 - 1.0);
            c = -a * c / i as f64;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < BESSEL_EPS {
                converged = true;
                break;
            }
        }
        assert!(converged, "bessel_k continued fraction failed to converge");
        h = a1 * h;
        let k_mu = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
        let k_mu1 = k_mu * (mu + x + 0.5 - h) * xi;
        (k_mu, k_mu1)
    };

    for i in 1..=n {
        let k_next = (mu + i as f64) * 2.0 * xi * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = k_next;
    }
    k_mu
}

/// Bessel function of the first kind `J_nu(x)` for real order `nu >= -0.5`
/// and `x >= 0` (ascending series below the crossover, Hankel asymptotic
/// expansion above).
pub fn bessel_j(nu: f64, x: f64) -> f64 {
    assert!(nu >= -0.5, "bessel_j: order must be >= -1/2, got {nu}");
    assert!(x >= 0.0, "bessel_j: argument must be non-negative, got {x}");
    if x == 0.0 {
        return if nu == 0.0 {
            1.0
        } else if nu > 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
    }
    if x < BESSEL_J_CROSSOVER {
        bessel_j_series(nu, x)
    } else {
        bessel_j_asymptotic(nu, x)
    }
}

const BESSEL_J_CROSSOVER: f64 = 15.0;

fn bessel_j_series(nu: f64, x: f64) -> f64 {
    // J_nu(x) = (x/2)^nu sum_k (-x^2/4)^k / (k! Gamma(nu+k+1))
    let half = 0.5 * x;
    let t0 = (nu * half.ln() - ln_gamma(nu + 1.0)).exp();
    let m = -half * half;
    let mut term = t0;
    let mut sum = t0;
    for k in 1..400 {
        let k = k as f64;
        term *= m / (k * (nu + k));
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(t0.abs() * 1e-4) {
            break;
        }
    }
    sum
}

fn bessel_j_asymptotic(nu: f64, x: f64) -> f64 {
    // Hankel expansion: J_nu ~ sqrt(2/(pi x)) [P cos(chi) - Q sin(chi)],
    // chi = x - (nu/2 + 1/4) pi. Terms are summed until they stop
    // decreasing (optimal truncation of the divergent series).
    let mu4 = 4.0 * nu * nu;
    let chi = x - (0.5 * nu + 0.25) * PI;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0f64;
    let mut prev = f64::INFINITY;
    for k in 1..60 {
        let k = k as f64;
        term *= (mu4 - (2.0 * k - 1.0) * (2.0 * k - 1.0)) / (8.0 * k * x);
        if term.abs() > prev {
            break;
        }
        prev = term.abs();
        let j = k as usize;
        match j % 4 {
            1 => q += term,
            2 => p -= term,
            3 => q -= term,
            _ => p += term,
        }
        if term.abs() < 1e-17 {
            break;
        }
    }
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// Entire-function form `f_mu(r) = r^{-mu/2} J_mu(sqrt r)`, smooth at `r = 0`.
///
/// Ascending series in `r` for small arguments (no 0/0 at the origin),
/// otherwise evaluated through `bessel_j`.
pub fn bessel_j_scaled(mu: f64, r: f64) -> f64 {
    assert!(r >= 0.0);
    let z = r.sqrt();
    if z < BESSEL_J_CROSSOVER {
        // f_mu(r) = 2^{-mu} sum_k (-r/4)^k / (k! Gamma(mu+k+1))
        let mut term = (-(mu * 2.0f64.ln()) - ln_gamma(mu + 1.0)).exp();
        let mut sum = term;
        let m = -0.25 * r;
        for k in 1..400 {
            let k = k as f64;
            term *= m / (k * (mu + k));
            sum += term;
            if term.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        sum
    } else {
        z.powf(-mu) * bessel_j_asymptotic(mu, z)
    }
}

/// Decaying form `g_mu(r) = r^{mu/2} K_{|mu|}(sqrt r)` for `r > 0` (signed
/// power, absolute order), the shape produced by repeated differentiation
/// of the Matern covariance.
pub fn bessel_k_scaled(mu: f64, r: f64) -> f64 {
    assert!(r > 0.0);
    let z = r.sqrt();
    z.powf(mu) * bessel_k(mu.abs(), z)
}
