//! Joint Gaussian laws of field derivatives at k points: assembly from the
//! covariance model, Schur-complement conditioning on vanishing gradients,
//! multivariate normal sampling and GOE sampling.

use crate::covmodels::CovarianceModel;
use crate::error::{CritError, Result};
use crate::linalg::{cholesky_with_jitter, schur_complement, MvnSampler};
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Index of the (i, j) Hessian entry (i <= j) in the row-major
/// upper-triangle half-vectorization (h_11, h_12, ..., h_1d, h_22, ...).
pub fn halfvec_index(i: usize, j: usize, d: usize) -> usize {
    debug_assert!(i <= j && j < d);
    i * d - i * (i + 1) / 2 + j
}

/// Number of half-vectorized Hessian entries in dimension d.
pub fn halfvec_len(d: usize) -> usize {
    d * (d + 1) / 2
}

/// Dimension of the per-point derivative stack (gradient + half-vectorized
/// Hessian).
pub fn deriv_block_dim(d: usize) -> usize {
    d + halfvec_len(d)
}

/// Zero-mean Gaussian law of stacked gradients and half-vectorized
/// Hessians at k points, ordered `[grad(t_1), ..., grad(t_k), hess(t_1),
/// ..., hess(t_k)]`.
#[derive(Debug, Clone)]
pub struct JointDerivativeGaussian {
    d: usize,
    points: Vec<Vec<f64>>,
    cov: DMatrix<f64>,
}

impl JointDerivativeGaussian {
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Row of the `axis` gradient component at point `p`.
    pub fn grad_index(&self, p: usize, axis: usize) -> usize {
        debug_assert!(p < self.points.len() && axis < self.d);
        p * self.d + axis
    }

    /// Row of the (i, j) Hessian component (i <= j) at point `p`.
    pub fn hess_index(&self, p: usize, i: usize, j: usize) -> usize {
        let k = self.points.len();
        k * self.d + p * halfvec_len(self.d) + halfvec_index(i, j, self.d)
    }

    pub fn gradient_rows(&self) -> Vec<usize> {
        (0..self.points.len() * self.d).collect()
    }

    pub fn hessian_rows(&self) -> Vec<usize> {
        let k = self.points.len();
        (k * self.d..k * deriv_block_dim(self.d)).collect()
    }

    /// Covariance of the stacked gradient vector alone.
    pub fn gradient_block(&self) -> DMatrix<f64> {
        let rows = self.gradient_rows();
        self.cov.select_rows(&rows).select_columns(&rows)
    }

    /// Density at the origin of the stacked gradient vector.
    pub fn gradient_density_at_zero(&self) -> Result<f64> {
        crate::linalg::mvn_density_at_zero(&self.gradient_block(), "gradient block")
    }

    /// Covariance reordered to the per-point interleaved layout
    /// `[grad(t_1), hess(t_1), grad(t_2), hess(t_2), ...]` used by the
    /// Hermite-expansion machinery.
    pub fn interleaved_cov(&self) -> DMatrix<f64> {
        let k = self.points.len();
        let d = self.d;
        let h = halfvec_len(d);
        let dd = deriv_block_dim(d);
        let mut perm = Vec::with_capacity(k * dd);
        for p in 0..k {
            for a in 0..d {
                perm.push(p * d + a);
            }
            for l in 0..h {
                perm.push(k * d + p * h + l);
            }
        }
        self.cov.select_rows(&perm).select_columns(&perm)
    }
}

/// Builds the joint law of (gradients, Hessians) at the given points.
///
/// Entries are `Cov(d^a X(s), d^b X(t)) = (-1)^{|a|} d^{a+b} c(t-s)`,
/// assembled from mixed partials of the covariance function. Degeneracy is
/// not checked here; operations that factorize the matrix raise
/// `DegenerateJoint` when it is structurally singular.
pub fn assemble_joint(
    model: &CovarianceModel,
    points: &[Vec<f64>],
) -> Result<JointDerivativeGaussian> {
    let d = model.dim();
    let k = points.len();
    assert!(k >= 1, "need at least one point");
    for p in points {
        assert_eq!(p.len(), d, "point dimension mismatch");
    }
    for a in 0..k {
        for b in (a + 1)..k {
            let dist2: f64 = points[a]
                .iter()
                .zip(&points[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            assert!(dist2 > 0.0, "points must be pairwise distinct");
        }
    }

    // per-row derivative descriptor: (point, multi-index, order)
    let h = halfvec_len(d);
    let n = k * deriv_block_dim(d);
    let mut descr: Vec<(usize, Vec<usize>)> = Vec::with_capacity(n);
    for p in 0..k {
        for axis in 0..d {
            let mut alpha = vec![0usize; d];
            alpha[axis] = 1;
            descr.push((p, alpha));
        }
    }
    for p in 0..k {
        for i in 0..d {
            for j in i..d {
                let mut alpha = vec![0usize; d];
                alpha[i] += 1;
                alpha[j] += 1;
                descr.push((p, alpha));
            }
        }
    }
    debug_assert_eq!(descr.len(), k * d + k * h);

    let mut cov = DMatrix::zeros(n, n);
    for r in 0..n {
        let (pr, ref ar) = descr[r];
        let order_r: usize = ar.iter().sum();
        let sign = if order_r % 2 == 0 { 1.0 } else { -1.0 };
        for c in r..n {
            let (pc, ref ac) = descr[c];
            let lag: Vec<f64> = points[pc]
                .iter()
                .zip(&points[pr])
                .map(|(x, y)| x - y)
                .collect();
            let alpha: Vec<usize> = ar.iter().zip(ac).map(|(x, y)| x + y).collect();
            let v = sign * model.partial_c(&alpha, &lag)?;
            cov[(r, c)] = v;
            cov[(c, r)] = v;
        }
    }
    Ok(JointDerivativeGaussian { d, points: points.to_vec(), cov })
}

/// Conditional Gaussian law produced by Schur-complement conditioning.
#[derive(Debug, Clone)]
pub struct ConditionalGaussian {
    cov: DMatrix<f64>,
    context: String,
}

impl ConditionalGaussian {
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn context(&self) -> &str {
        &self.context
    }

    pub fn sampler(&self) -> Result<MvnSampler> {
        MvnSampler::new(&self.cov)
    }
}

/// Law of all Hessians given that every gradient vanishes: the Schur
/// complement `S_HH - S_HG S_GG^{-1} S_GH` (the conditional mean is zero).
pub fn condition_hessians_on_zero_gradients(
    joint: &JointDerivativeGaussian,
) -> Result<ConditionalGaussian> {
    let keep = joint.hessian_rows();
    let cond = joint.gradient_rows();
    let cov = schur_complement(
        joint.cov(),
        &keep,
        &cond,
        "conditioning Hessians on zero gradients",
    )?;
    Ok(ConditionalGaussian {
        cov,
        context: format!(
            "hessians at {} points given zero gradients",
            joint.n_points()
        ),
    })
}

/// Closed-form density at the origin of the two-point gradient vector
/// `(X'(0), X'(r e_1))`:
/// `(2 pi)^{-d} 2^{1-d} {c2'(0)^2 - c2'(r^2)^2}^{(1-d)/2} {c1''(0)^2 - c1''(r)^2}^{-1/2}`.
pub fn density_at_zero_gradients(model: &CovarianceModel, r: f64) -> Result<f64> {
    let check = model.check_pairwise_nondegeneracy(r)?;
    if !check.ok {
        return Err(CritError::DegenerateJoint(format!(
            "two-point gradient law degenerate at r = {r} (margins {}, {})",
            check.margin1, check.margin2
        )));
    }
    let d = model.dim() as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    Ok(two_pi.powf(-d)
        * 2.0f64.powf(1.0 - d)
        * check.margin1.powf(0.5 * (1.0 - d))
        * check.margin2.powf(-0.5))
}

/// A GOE draw summarized by its ordered eigenvalues.
#[derive(Debug, Clone)]
pub struct GOESample {
    pub size: usize,
    /// Ascending eigenvalues.
    pub eigenvalues: Vec<f64>,
}

/// Samples an m x m GOE matrix (diagonal variance 1, off-diagonal 1/2) and
/// returns its ordered eigenvalues.
pub fn sample_goe<R: Rng + ?Sized>(m: usize, rng: &mut R) -> GOESample {
    assert!(m >= 1);
    let eigenvalues = sample_goe_eigenvalues(m, rng);
    GOESample { size: m, eigenvalues }
}

/// Eigenvalue-only fast path used by the intensity Monte Carlo loop.
pub fn sample_goe_eigenvalues<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Vec<f64> {
    if m == 1 {
        return vec![rng.sample(StandardNormal)];
    }
    let off = 0.5f64.sqrt();
    if m == 2 {
        let a: f64 = rng.sample(StandardNormal);
        let c: f64 = rng.sample(StandardNormal);
        let b: f64 = off * rng.sample::<f64, _>(StandardNormal);
        let tr = a + c;
        let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        return vec![0.5 * tr - disc, 0.5 * tr + disc];
    }
    let mut mat = DMatrix::zeros(m, m);
    for i in 0..m {
        mat[(i, i)] = rng.sample::<f64, _>(StandardNormal);
        for j in (i + 1)..m {
            let v = off * rng.sample::<f64, _>(StandardNormal);
            mat[(i, j)] = v;
            mat[(j, i)] = v;
        }
    }
    let mut vals: Vec<f64> = mat.symmetric_eigen().eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    vals
}

/// Validates that a covariance is positive definite under the jitter
/// policy (used by tests and the CLI diagnostics).
pub fn validate_pd(cov: &DMatrix<f64>, context: &str) -> Result<()> {
    cholesky_with_jitter(cov, context).map(|_| ())
}
