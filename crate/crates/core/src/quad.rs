//! Numerical helpers: adaptive Simpson quadrature, monotone cubic
//! interpolation, least-squares line fits and the Anderson-Darling
//! normality test.

use crate::error::{CritError, Result};

/// Adaptive Simpson integration of `f` on `[a, b]` to relative tolerance
/// `rel_tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, rel_tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    rel_tol: f64,
    depth: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * rel_tol * (left + right).abs().max(1e-300) {
        left + right + delta / 15.0
    } else {
        simpson_rec(f, a, m, fa, flm, fm, left, rel_tol, depth - 1)
            + simpson_rec(f, m, b, fm, frm, fb, right, rel_tol, depth - 1)
    }
}

/// Monotone (Fritsch-Carlson) cubic Hermite interpolant through the given
/// knots; clamps to the end values outside the abscissa range.
pub struct MonotoneCubic {
    xs: Vec<f64>,
    ys: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(xs: &[f64], ys: &[f64]) -> Self {
        assert_eq!(xs.len(), ys.len());
        assert!(xs.len() >= 2, "need at least two knots");
        assert!(
            xs.windows(2).all(|w| w[0] < w[1]),
            "abscissae must be strictly increasing"
        );
        let n = xs.len();
        let mut secants = vec![0.0; n - 1];
        for i in 0..n - 1 {
            secants[i] = (ys[i + 1] - ys[i]) / (xs[i + 1] - xs[i]);
        }
        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        slopes[n - 1] = secants[n - 2];
        for i in 1..n - 1 {
            slopes[i] = if secants[i - 1] * secants[i] <= 0.0 {
                0.0
            } else {
                0.5 * (secants[i - 1] + secants[i])
            };
        }
        // Fritsch-Carlson limiter
        for i in 0..n - 1 {
            if secants[i] == 0.0 {
                slopes[i] = 0.0;
                slopes[i + 1] = 0.0;
            } else {
                let alpha = slopes[i] / secants[i];
                let beta = slopes[i + 1] / secants[i];
                let s = alpha * alpha + beta * beta;
                if s > 9.0 {
                    let tau = 3.0 / s.sqrt();
                    slopes[i] = tau * alpha * secants[i];
                    slopes[i + 1] = tau * beta * secants[i];
                }
            }
        }
        Self { xs: xs.to_vec(), ys: ys.to_vec(), slopes }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = match self
            .xs
            .binary_search_by(|v| v.partial_cmp(&x).unwrap())
        {
            Ok(i) => return self.ys[i],
            Err(i) => i - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[i]
            + h10 * h * self.slopes[i]
            + h01 * self.ys[i + 1]
            + h11 * h * self.slopes[i + 1]
    }
}

/// Ordinary least squares fit y = intercept + slope x.
#[derive(Debug, Clone, Copy)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// standard error of the slope
    pub slope_stderr: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    assert!(xs.len() >= 2);
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - intercept - slope * x;
            r * r
        })
        .sum();
    let dof = (n - 2.0).max(1.0);
    LineFit { slope, intercept, slope_stderr: (ssr / dof / sxx).sqrt() }
}

/// Anderson-Darling normality test with estimated mean and variance
/// (case 3); returns the modified statistic and its p-value via the
/// D'Agostino-Stephens approximation.
pub fn anderson_darling_normal(samples: &[f64]) -> Result<AndersonDarling> {
    let n = samples.len();
    if n < 8 {
        return Err(CritError::InvalidConfig(
            "Anderson-Darling test needs at least 8 samples".into(),
        ));
    }
    let nf = n as f64;
    let mean = samples.iter().sum::<f64>() / nf;
    let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (nf - 1.0);
    if var <= 0.0 {
        return Err(CritError::InvalidConfig("zero-variance sample".into()));
    }
    let sd = var.sqrt();
    let mut z: Vec<f64> = samples.iter().map(|x| (x - mean) / sd).collect();
    z.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut a2 = 0.0;
    for i in 0..n {
        let phi_i = crate::special::normal_cdf(z[i]).clamp(1e-15, 1.0 - 1e-15);
        let phi_rev = crate::special::normal_cdf(z[n - 1 - i]).clamp(1e-15, 1.0 - 1e-15);
        a2 += (2.0 * i as f64 + 1.0) * (phi_i.ln() + (1.0 - phi_rev).ln());
    }
    let a2 = -nf - a2 / nf;
    let a2_star = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let p = if a2_star >= 0.6 {
        (1.2937 - 5.709 * a2_star + 0.0186 * a2_star * a2_star).exp()
    } else if a2_star > 0.34 {
        (0.9177 - 4.279 * a2_star - 1.38 * a2_star * a2_star).exp()
    } else if a2_star > 0.2 {
        1.0 - (-8.318 + 42.796 * a2_star - 59.938 * a2_star * a2_star).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a2_star - 223.73 * a2_star * a2_star).exp()
    };
    Ok(AndersonDarling { statistic: a2_star, p_value: p.clamp(0.0, 1.0) })
}

#[derive(Debug, Clone, Copy)]
pub struct AndersonDarling {
    pub statistic: f64,
    pub p_value: f64,
}

/// Nodes and weights of the n-point Gauss-Hermite rule for integrals
/// against the standard normal density: `E f(Z) ~ sum w_i f(x_i)`.
///
/// Golub-Welsch on the Jacobi matrix of the probabilists' Hermite
/// polynomials (tridiagonal with off-diagonal sqrt(k)).
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut jac = nalgebra::DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = jac.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let q0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], q0 * q0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}
