//! Symmetric-matrix helpers shared by the joint-law and sampling code:
//! jittered Cholesky, symmetric square roots, Schur complements and
//! multivariate normal sampling.

use crate::error::{CritError, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

/// Relative jitter added once to the diagonal before declaring a matrix
/// structurally degenerate.
pub const JITTER_REL: f64 = 1e-10;

/// Cholesky factorization with the library-wide jitter policy.
///
/// A matrix whose smallest eigenvalue does not clear the jitter scale
/// `JITTER_REL * trace/dim` is structurally degenerate (e.g. the
/// sine-cosine gradient pair at r in pi*phi*Z). Above that scale the
/// matrix is genuinely positive definite and a single diagonal jitter
/// repairs any roundoff-induced factorization failure.
pub fn cholesky_with_jitter(mat: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    let n = mat.nrows();
    let threshold = JITTER_REL * mat.trace() / n as f64;
    let min_eig = mat
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !(min_eig > threshold) {
        return Err(CritError::DegenerateJoint(format!(
            "{context}: smallest eigenvalue {min_eig} at or below jitter scale {threshold}"
        )));
    }
    if let Some(chol) = Cholesky::new(mat.clone()) {
        return Ok(chol);
    }
    let mut jittered = mat.clone();
    for i in 0..n {
        jittered[(i, i)] += threshold;
    }
    Cholesky::new(jittered).ok_or_else(|| {
        CritError::DegenerateJoint(format!("{context}: Cholesky failed beyond jitter"))
    })
}

/// Symmetric (spectral) square root of a PSD matrix. Eigenvalues in
/// `[-tol, 0)` are clamped to zero; more negative ones are an error.
pub fn sym_sqrt(mat: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let n = mat.nrows();
    let eig = mat.clone().symmetric_eigen();
    let tol = JITTER_REL * mat.trace().abs().max(1.0);
    let mut vals = DVector::zeros(n);
    for i in 0..n {
        let l = eig.eigenvalues[i];
        if l < -tol {
            return Err(CritError::DegenerateJoint(format!(
                "{context}: eigenvalue {l} below PSD tolerance"
            )));
        }
        // eigenvalues at roundoff scale are exact zeros of the law;
        // sqrt would otherwise leak mass into the null space
        vals[i] = if l < tol { 0.0 } else { l.sqrt() };
    }
    let mut scaled = eig.eigenvectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= vals[j];
    }
    Ok(&scaled * eig.eigenvectors.transpose())
}

/// Symmetric inverse square root of a positive definite matrix.
pub fn sym_inv_sqrt(mat: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    let n = mat.nrows();
    let eig = mat.clone().symmetric_eigen();
    let tol = JITTER_REL * mat.trace().abs().max(1.0);
    let mut vals = DVector::zeros(n);
    for i in 0..n {
        let l = eig.eigenvalues[i];
        if l <= tol {
            return Err(CritError::DegenerateJoint(format!(
                "{context}: eigenvalue {l} too small for inverse square root"
            )));
        }
        vals[i] = 1.0 / l.sqrt();
    }
    let mut scaled = eig.eigenvectors.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= vals[j];
    }
    Ok(&scaled * eig.eigenvectors.transpose())
}

/// Schur complement `S_kk - S_kc S_cc^{-1} S_ck` of the covariance `mat`
/// restricted to index sets `keep` and `cond`.
pub fn schur_complement(
    mat: &DMatrix<f64>,
    keep: &[usize],
    cond: &[usize],
    context: &str,
) -> Result<DMatrix<f64>> {
    let s_kk = mat.select_rows(keep).select_columns(keep);
    let s_kc = mat.select_rows(keep).select_columns(cond);
    let s_cc = mat.select_rows(cond).select_columns(cond);
    let chol = cholesky_with_jitter(&s_cc, context)?;
    let solved = chol.solve(&s_kc.transpose());
    Ok(&s_kk - &s_kc * solved)
}

/// Density at the origin of a centered multivariate normal with the given
/// covariance: `(2 pi)^{-n/2} det(cov)^{-1/2}`.
pub fn mvn_density_at_zero(cov: &DMatrix<f64>, context: &str) -> Result<f64> {
    let n = cov.nrows() as f64;
    let chol = cholesky_with_jitter(cov, context)?;
    let half_log_det: f64 = chol.l().diagonal().iter().map(|x| x.ln()).sum();
    Ok((-0.5 * n * (2.0 * std::f64::consts::PI).ln() - half_log_det).exp())
}

/// Draws from a centered multivariate normal with fixed covariance.
///
/// Uses the symmetric square root so that rank-deficient PSD covariances
/// (projections, conditioned laws) are sampled exactly.
pub struct MvnSampler {
    factor: DMatrix<f64>,
    dim: usize,
}

impl MvnSampler {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        assert_eq!(cov.nrows(), cov.ncols());
        let factor = sym_sqrt(cov, "mvn sampler")?;
        Ok(Self { factor, dim: cov.nrows() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// One draw appended into `out` (must have length `dim`).
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        // out = factor * z, accumulated column-wise
        out.fill(0.0);
        for j in 0..self.dim {
            let z: f64 = rng.sample(StandardNormal);
            let col = self.factor.column(j);
            for i in 0..self.dim {
                out[i] += col[i] * z;
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(rng, &mut out);
        DVector::from_vec(out)
    }
}

/// Determinant of a small symmetric matrix given in half-vectorized
/// row-major upper-triangle order, by LU with partial pivoting.
pub fn halfvec_det(halfvec: &[f64], d: usize) -> f64 {
    debug_assert_eq!(halfvec.len(), d * (d + 1) / 2);
    match d {
        1 => halfvec[0],
        2 => halfvec[0] * halfvec[2] - halfvec[1] * halfvec[1],
        _ => {
            let mut m = vec![0.0; d * d];
            let mut idx = 0;
            for i in 0..d {
                for j in i..d {
                    m[i * d + j] = halfvec[idx];
                    m[j * d + i] = halfvec[idx];
                    idx += 1;
                }
            }
            lu_det(&mut m, d)
        }
    }
}

fn lu_det(m: &mut [f64], n: usize) -> f64 {
    let mut det = 1.0;
    for k in 0..n {
        let mut piv = k;
        let mut max = m[k * n + k].abs();
        for i in (k + 1)..n {
            let v = m[i * n + k].abs();
            if v > max {
                max = v;
                piv = i;
            }
        }
        if max == 0.0 {
            return 0.0;
        }
        if piv != k {
            for j in 0..n {
                m.swap(k * n + j, piv * n + j);
            }
            det = -det;
        }
        det *= m[k * n + k];
        for i in (k + 1)..n {
            let f = m[i * n + k] / m[k * n + k];
            for j in (k + 1)..n {
                m[i * n + j] -= f * m[k * n + j];
            }
        }
    }
    det
}

/// Eigenvalues (ascending) of a small symmetric matrix from its half
/// vectorization.
pub fn halfvec_eigenvalues(halfvec: &[f64], d: usize) -> Vec<f64> {
    debug_assert_eq!(halfvec.len(), d * (d + 1) / 2);
    match d {
        1 => vec![halfvec[0]],
        2 => {
            let (a, b, c) = (halfvec[0], halfvec[1], halfvec[2]);
            let tr = a + c;
            let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            vec![0.5 * tr - disc, 0.5 * tr + disc]
        }
        _ => {
            let mut m = DMatrix::zeros(d, d);
            let mut idx = 0;
            for i in 0..d {
                for j in i..d {
                    m[(i, j)] = halfvec[idx];
                    m[(j, i)] = halfvec[idx];
                    idx += 1;
                }
            }
            let mut vals: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().copied().collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sym_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let s = sym_sqrt(&m, "test").unwrap();
        let back = &s * &s;
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(back[(i, j)], m[(i, j)], epsilon = 1e-12);
            }
        }
        let inv_s = sym_inv_sqrt(&m, "test").unwrap();
        let ident = &inv_s * &m * &inv_s;
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(ident[(i, j)], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn mvn_identity_sample_covariance() {
        let n = 100_000;
        let cov = DMatrix::identity(3, 3);
        let sampler = MvnSampler::new(&cov).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut acc = DMatrix::zeros(3, 3);
        let mut x = [0.0; 3];
        for _ in 0..n {
            sampler.sample_into(&mut rng, &mut x);
            for i in 0..3 {
                for j in 0..3 {
                    acc[(i, j)] += x[i] * x[j];
                }
            }
        }
        acc /= n as f64;
        let band = 4.0 / (n as f64).sqrt();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                // var of x_i x_j estimate is 1+delta_ij
                assert!((acc[(i, j)] - want).abs() < band * 1.5);
            }
        }
    }

    #[test]
    fn mvn_projection_stays_in_column_space() {
        // projection onto span{(1,1,0)/sqrt2, (0,0,1)}
        let v = DVector::from_vec(vec![1.0, 1.0, 0.0]) / 2.0f64.sqrt();
        let w = DVector::from_vec(vec![0.0, 0.0, 1.0]);
        let proj = &v * v.transpose() + &w * w.transpose();
        let sampler = MvnSampler::new(&proj).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = sampler.sample(&mut rng);
            // residual after projecting back
            let r = &x - &proj * &x;
            assert!(r.norm() < 1e-8, "draw left the column space");
        }
    }

    #[test]
    fn schur_matches_inverse_block() {
        let m = DMatrix::from_row_slice(
            4,
            4,
            &[
                4.0, 1.0, 0.5, 0.2, 1.0, 3.0, 0.1, 0.4, 0.5, 0.1, 2.0, 0.3, 0.2, 0.4, 0.3, 1.5,
            ],
        );
        let s = schur_complement(&m, &[0, 1], &[2, 3], "test").unwrap();
        // the (keep,keep) block of the inverse equals the inverse of the Schur complement
        let m_inv = m.clone().try_inverse().unwrap();
        let kk_inv = m_inv.select_rows(&[0usize, 1]).select_columns(&[0usize, 1]);
        let s_inv = s.try_inverse().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(kk_inv[(i, j)], s_inv[(i, j)], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn density_matches_explicit_formula() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let det: f64 = 2.0 * 1.0 - 0.09;
        let want = 1.0 / (2.0 * std::f64::consts::PI * det.sqrt());
        assert_relative_eq!(
            mvn_density_at_zero(&cov, "test").unwrap(),
            want,
            max_relative = 1e-12
        );
    }

    #[test]
    fn halfvec_det_and_eigs() {
        // [[2, 1], [1, 3]]
        let hv = [2.0, 1.0, 3.0];
        assert_relative_eq!(halfvec_det(&hv, 2), 5.0, epsilon = 1e-14);
        let e = halfvec_eigenvalues(&hv, 2);
        assert_relative_eq!(e[0] * e[1], 5.0, epsilon = 1e-12);
        assert_relative_eq!(e[0] + e[1], 5.0, epsilon = 1e-12);
        // 3x3 through the LU path
        let hv3 = [2.0, 0.5, 0.1, 1.5, 0.2, 1.0];
        let e3 = halfvec_eigenvalues(&hv3, 3);
        let det3: f64 = e3.iter().product();
        assert_relative_eq!(halfvec_det(&hv3, 3), det3, max_relative = 1e-10);
    }
}

