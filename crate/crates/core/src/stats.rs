//! Estimators on point patterns (intensity, modified K-function), the
//! Hermite-expansion machinery behind their asymptotics (coefficients,
//! Mehler covariances, truncated limiting variances) and the CLT
//! replication harness.

use crate::covmodels::CovarianceModel;
use crate::critpoints::{extract, ExtractionConfig, PointPattern};
use crate::error::{CritError, Result};
use crate::fieldsim::{simulate_spectral, Window};
use crate::gaussjoint::{
    assemble_joint, condition_hessians_on_zero_gradients, density_at_zero_gradients,
    deriv_block_dim, halfvec_len,
};
use crate::kacrice::{
    classify_hessian, intensity_closed_form, kfun_eta_curve, pcf_curve, pcf_lower_cutoff,
    IndexSet,
};
use crate::linalg::{sym_inv_sqrt, MvnSampler};
use crate::mc::{mc_mean_vec, McEstimate};
use crate::quad::anderson_darling_normal;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Natural unbiased intensity estimator `N_L(W) / |W|`.
pub fn rho_hat(pattern: &PointPattern, l_set: &IndexSet) -> f64 {
    let n = pattern
        .points
        .iter()
        .filter(|p| l_set.contains(p.index))
        .count();
    n as f64 / pattern.window.volume()
}

/// Translation edge-corrected estimator of the modified Ripley
/// K-function at a single distance.
pub fn k_hat_eta(pattern: &PointPattern, l_set: &IndexSet, eta: f64, r: f64) -> Result<f64> {
    Ok(k_hat_eta_multi(pattern, l_set, eta, &[r])?[0])
}

/// `k_hat_eta` evaluated at several distances in one pair-enumeration
/// pass. Distances must be increasing; all must satisfy
/// `eta < r < min window side`.
pub fn k_hat_eta_multi(
    pattern: &PointPattern,
    l_set: &IndexSet,
    eta: f64,
    rs: &[f64],
) -> Result<Vec<f64>> {
    assert!(!rs.is_empty());
    assert!(rs.windows(2).all(|w| w[0] < w[1]), "distances must increase");
    let r_max = *rs.last().unwrap();
    assert!(
        0.0 < eta && eta < rs[0],
        "need 0 < eta < r (eta = {eta}, r = {})",
        rs[0]
    );
    let window = &pattern.window;
    assert!(
        r_max < window.min_side(),
        "r = {r_max} must stay below the window side"
    );
    let rho = rho_hat(pattern, l_set);
    if rho == 0.0 {
        return Err(CritError::EmptyPattern);
    }
    let d = pattern.dim();
    let pts: Vec<&[f64]> = pattern
        .points
        .iter()
        .filter(|p| l_set.contains(p.index))
        .map(|p| p.location.as_slice())
        .collect();

    // cell grid of side r_max for exact O(N) neighbor enumeration
    let mut counts = vec![0usize; d];
    for a in 0..d {
        counts[a] = ((window.side(a) / r_max).floor() as usize).max(1);
    }
    let cell_of = |p: &[f64]| -> usize {
        let mut flat = 0;
        for a in 0..d {
            let k = (((p[a] - window.lower()[a]) / window.side(a)) * counts[a] as f64)
                .floor() as usize;
            flat = flat * counts[a] + k.min(counts[a] - 1);
        }
        flat
    };
    let n_cells: usize = counts.iter().product();
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); n_cells];
    for (i, p) in pts.iter().enumerate() {
        cells[cell_of(p)].push(i);
    }

    // per-distance accumulation: unordered pairs counted once, doubled at
    // the end (the estimator sums over ordered pairs)
    let mut bins = vec![0.0; rs.len()];
    let mut neighbor_cells = Vec::new();
    for (flat, members) in cells.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        // decode cell coordinates
        let mut idx = flat;
        let mut coord = vec![0usize; d];
        for a in (0..d).rev() {
            coord[a] = idx % counts[a];
            idx /= counts[a];
        }
        neighbor_cells.clear();
        let mut offs = vec![0isize; d];
        collect_neighbors(&coord, &counts, &mut offs, 0, &mut neighbor_cells);
        for &i in members {
            for &ncell in &neighbor_cells {
                for &j in &cells[ncell] {
                    if ncell == flat && j <= i {
                        continue;
                    }
                    if ncell < flat {
                        continue; // each unordered cell pair visited once
                    }
                    let dist = euclid(pts[i], pts[j]);
                    if dist < eta || dist > r_max {
                        continue;
                    }
                    let mut weight = 1.0;
                    for a in 0..d {
                        weight *= window.side(a) - (pts[i][a] - pts[j][a]).abs();
                    }
                    let w = 1.0 / weight;
                    let bin = rs.partition_point(|&rr| rr < dist);
                    if bin < rs.len() {
                        bins[bin] += w;
                    }
                }
            }
        }
    }
    // cumulative over distances, ordered pairs = 2 x unordered
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(rs.len());
    for b in bins {
        acc += b;
        out.push(2.0 * acc / (rho * rho));
    }
    Ok(out)
}

fn collect_neighbors(
    coord: &[usize],
    counts: &[usize],
    offs: &mut Vec<isize>,
    axis: usize,
    out: &mut Vec<usize>,
) {
    if axis == coord.len() {
        let mut flat = 0;
        for a in 0..coord.len() {
            let c = coord[a] as isize + offs[a];
            if c < 0 || c >= counts[a] as isize {
                return;
            }
            flat = flat * counts[a] + c as usize;
        }
        out.push(flat);
        return;
    }
    for o in -1..=1isize {
        offs[axis] = o;
        collect_neighbors(coord, counts, offs, axis + 1, out);
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Linear statistic `sum_{t in pattern} phi(t)` (test-function driven).
pub fn linear_statistic(pattern: &PointPattern, phi: impl Fn(&[f64]) -> f64) -> f64 {
    pattern.points.iter().map(|p| phi(&p.location)).sum()
}

/// Probabilists' Hermite polynomial `H_n(x)` (orthogonal with
/// `E H_n(Z)^2 = n!`), three-term recurrence.
pub fn hermite_poly(n: usize, x: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let mut hm = 1.0;
    let mut h = x;
    for k in 1..n {
        let next = x * h - k as f64 * hm;
        hm = h;
        h = next;
    }
    h
}

/// Tensor Hermite polynomial `prod_i H_{a_i}(y_i)`.
pub fn hermite_tensor(a: &[usize], y: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), y.len());
    a.iter().zip(y).map(|(&n, &x)| hermite_poly(n, x)).product()
}

/// `H_n(0)`: zero for odd n, `(-1)^{n/2} (n-1)!!` for even n.
pub fn hermite_at_zero(n: usize) -> f64 {
    if n % 2 == 1 {
        return 0.0;
    }
    let mut v = 1.0;
    let mut k = 1;
    while 2 * k <= n {
        v *= -(2.0 * k as f64 - 1.0);
        k += 1;
    }
    v
}

/// All multi-indices of the given length with total degree `degree`.
pub fn multi_indices(len: usize, degree: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; len];
    fn rec(pos: usize, remaining: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos + 1 == cur.len() {
            cur[pos] = remaining;
            out.push(cur.clone());
            return;
        }
        for v in 0..=remaining {
            cur[pos] = v;
            rec(pos + 1, remaining - v, cur, out);
        }
    }
    rec(0, degree, &mut cur, &mut out);
    out
}

/// Factorial of a multi-index, `prod a_i!`.
pub fn multi_factorial(a: &[usize]) -> f64 {
    a.iter()
        .map(|&n| (1..=n).map(|k| k as f64).product::<f64>())
        .product()
}

/// Hermite coefficient d_a of the one-point chaos expansion, estimated by
/// Monte Carlo over unconditional Hessian draws.
///
/// `a` has length `D = d + d(d+1)/2`, split into gradient and Hessian
/// parts; any odd gradient degree gives an exact zero.
pub fn hermite_coeff_da(
    model: &CovarianceModel,
    l_set: &IndexSet,
    a: &[usize],
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    let d = model.dim();
    let h = halfvec_len(d);
    assert_eq!(a.len(), d + h, "multi-index must have length D = d + d(d+1)/2");
    let (a_grad, a_hess) = a.split_at(d);
    let grad_factor: f64 = a_grad.iter().map(|&n| hermite_at_zero(n)).product();
    if grad_factor == 0.0 {
        return Ok(McEstimate { value: 0.0, stderr: 0.0 });
    }
    let l2 = model.spectral_moment(2)?;
    let joint = assemble_joint(model, &[vec![0.0; d]])?;
    let rows = joint.hessian_rows();
    let sigma2 = joint.cov().select_rows(&rows).select_columns(&rows);
    let s_inv = sym_inv_sqrt(&sigma2, "hessian standardization")?;
    let sampler = MvnSampler::new(&sigma2)?;

    let density = (2.0 * std::f64::consts::PI * l2).powf(-0.5 * d as f64);
    let scale = grad_factor * density / multi_factorial(a);

    let est = mc_mean_vec(n_mc, seed, &format!("da:{a:?}"), |rng, n| {
        let mut hv = vec![0.0; h];
        let mut y = vec![0.0; h];
        let mut acc = 0.0;
        for _ in 0..n {
            sampler.sample_into(rng, &mut hv);
            if let Some((det, idx)) = classify_hessian(&hv, d) {
                if l_set.contains(idx) {
                    // y = S^{-1/2} hv
                    for (i, yi) in y.iter_mut().enumerate() {
                        *yi = (0..h).map(|j| s_inv[(i, j)] * hv[j]).sum();
                    }
                    acc += hermite_tensor(a_hess, &y) * det;
                }
            }
        }
        vec![acc / n as f64]
    })[0];
    Ok(McEstimate { value: scale * est.value, stderr: scale.abs() * est.stderr })
}

/// Hermite coefficient d_a(r) of the two-point chaos expansion, by Monte
/// Carlo over the conditional Hessian-pair law. `a` has length `2D`.
pub fn hermite_coeff_da_r(
    model: &CovarianceModel,
    l_set: &IndexSet,
    a: &[usize],
    r: f64,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    let d = model.dim();
    let h = halfvec_len(d);
    let dd = deriv_block_dim(d);
    assert_eq!(a.len(), 2 * dd, "multi-index must have length 2D");
    let f_v = density_at_zero_gradients(model, r)?;
    let mut p1 = vec![0.0; d];
    p1[0] = r;
    let joint = assemble_joint(model, &[vec![0.0; d], p1])?;
    let cond = condition_hessians_on_zero_gradients(&joint)?;
    let sampler = cond.sampler()?;
    let inter = joint.interleaved_cov();
    let s_inv = sym_inv_sqrt(&inter, "two-point standardization")?;
    // columns of S^{-1/2} hitting the Hessian slots of (0, H1, 0, H2)
    let hess_slots: Vec<usize> = (0..2)
        .flat_map(|p| (0..h).map(move |l| p * dd + d + l))
        .collect();

    let scale = f_v / multi_factorial(a);
    let est = mc_mean_vec(n_mc, seed, &format!("dar:{a:?}@{r}"), |rng, n| {
        let mut hv = vec![0.0; 2 * h];
        let mut y = vec![0.0; 2 * dd];
        let mut acc = 0.0;
        for _ in 0..n {
            sampler.sample_into(rng, &mut hv);
            let c0 = classify_hessian(&hv[..h], d);
            let c1 = classify_hessian(&hv[h..], d);
            if let (Some((det0, idx0)), Some((det1, idx1))) = (c0, c1) {
                if l_set.contains(idx0) && l_set.contains(idx1) {
                    for (i, yi) in y.iter_mut().enumerate() {
                        *yi = hess_slots
                            .iter()
                            .enumerate()
                            .map(|(jj, &col)| s_inv[(i, col)] * hv[jj])
                            .sum();
                    }
                    acc += hermite_tensor(a, &y) * det0 * det1;
                }
            }
        }
        vec![acc / n as f64]
    })[0];
    Ok(McEstimate { value: scale * est.value, stderr: scale.abs() * est.stderr })
}

/// Mehler covariance `gamma_{a,b}(lag) = E[H_a(Y(0)) H_b(Y(lag))]` of
/// standardized derivative vectors, via the sum over non-negative integer
/// matrices with margins `a` and `b`.
pub fn mehler_gamma(
    model: &CovarianceModel,
    a: &[usize],
    b: &[usize],
    lag: &[f64],
) -> Result<f64> {
    let d = model.dim();
    let dd = deriv_block_dim(d);
    assert_eq!(a.len(), dd);
    assert_eq!(b.len(), dd);
    assert_eq!(lag.len(), d);
    let qa: usize = a.iter().sum();
    let qb: usize = b.iter().sum();
    if qa != qb {
        return Ok(0.0);
    }
    let r = standardized_cross_cov(model, lag)?;
    let mut total = 0.0;
    let fact = multi_factorial(a) * multi_factorial(b);
    // row-by-row recursive enumeration of matrices with row sums a and
    // column sums b
    fn rec(
        row: usize,
        a: &[usize],
        col_rem: &mut Vec<usize>,
        r: &DMatrix<f64>,
        weight: f64,
        total: &mut f64,
    ) {
        if row == a.len() {
            *total += weight;
            return;
        }
        // distribute a[row] over columns within remaining capacities
        fn fill(
            col: usize,
            remaining: usize,
            row: usize,
            col_rem: &mut Vec<usize>,
            r: &DMatrix<f64>,
            weight: f64,
            a: &[usize],
            total: &mut f64,
        ) {
            if col + 1 == col_rem.len() {
                if remaining <= col_rem[col] {
                    let mut w = weight;
                    let rc = r[(row, col)];
                    for k in 0..remaining {
                        w *= rc / (k + 1) as f64;
                    }
                    col_rem[col] -= remaining;
                    rec(row + 1, a, col_rem, r, w, total);
                    col_rem[col] += remaining;
                }
                return;
            }
            let cap = remaining.min(col_rem[col]);
            for m in 0..=cap {
                let mut w = weight;
                let rc = r[(row, col)];
                for k in 0..m {
                    w *= rc / (k + 1) as f64;
                }
                col_rem[col] -= m;
                fill(col + 1, remaining - m, row, col_rem, r, w, a, total);
                col_rem[col] += m;
            }
        }
        fill(0, a[row], row, col_rem, r, weight, a, total);
    }
    let mut col_rem = b.to_vec();
    rec(0, a, &mut col_rem, &r, 1.0, &mut total);
    Ok(fact * total)
}

/// Cross-covariance `E[Y(0) Y(lag)^T]` of the standardized derivative
/// vectors `Y(t) = Sigma(0)^{-1/2} (X'(t), X''(t))`.
fn standardized_cross_cov(model: &CovarianceModel, lag: &[f64]) -> Result<DMatrix<f64>> {
    let d = model.dim();
    let dd = deriv_block_dim(d);
    let joint = assemble_joint(model, &[vec![0.0; d], lag.to_vec()])?;
    let inter = joint.interleaved_cov();
    let sigma0 = inter.view((0, 0), (dd, dd)).into_owned();
    let cross = inter.view((0, dd), (dd, dd)).into_owned();
    let s_inv = sym_inv_sqrt(&sigma0, "one-point standardization")?;
    Ok(&s_inv * cross * &s_inv)
}

/// Truncated limiting variance of the counting statistic (`phi_1` with
/// unit L2 norm): `sum_{q <= q_max} sum_{|a|=|b|=q} d_a d_b
/// int_{|t| <= r_max} gamma_{a,b}(t) dt`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AsymptoticVariance {
    pub value: f64,
    /// per-chaos contributions (q, value)
    pub per_q: Vec<(usize, f64)>,
    /// magnitude of the last chaos contribution, a truncation proxy
    pub truncation_proxy: f64,
}

pub fn asymptotic_variance_phi1(
    model: &CovarianceModel,
    l_set: &IndexSet,
    q_max: usize,
    r_max: f64,
    n_mc: usize,
    seed: u64,
) -> Result<AsymptoticVariance> {
    let d = model.dim();
    assert!(d <= 2, "asymptotic variance implemented for d <= 2 (cost)");
    let check = model.check_integrability();
    if !check.ok {
        return Err(CritError::IntegrabilityViolation(
            "covariance tail not integrable (random wave model)".into(),
        ));
    }
    let dd = deriv_block_dim(d);
    let symmetric = l_set.is_symmetric();
    let mut per_q = Vec::new();
    let mut value = 0.0;
    for q in 1..=q_max {
        if symmetric && q % 2 == 1 {
            continue;
        }
        let indices = multi_indices(dd, q);
        // MC coefficients (shared seed stream per index)
        let mut coeffs = Vec::with_capacity(indices.len());
        for (i, a) in indices.iter().enumerate() {
            coeffs.push(hermite_coeff_da(model, l_set, a, n_mc, seed ^ (i as u64) << 8)?.value);
        }
        let contribution = integrate_gamma_pairs(model, &indices, &coeffs, r_max)?;
        per_q.push((q, contribution));
        value += contribution;
    }
    let truncation_proxy = per_q.last().map(|&(_, v)| v.abs()).unwrap_or(0.0);
    Ok(AsymptoticVariance { value, per_q, truncation_proxy })
}

fn integrate_gamma_pairs(
    model: &CovarianceModel,
    indices: &[Vec<usize>],
    coeffs: &[f64],
    r_max: f64,
) -> Result<f64> {
    let d = model.dim();
    let cutoff = pcf_lower_cutoff(model).min(0.1 * r_max);
    // sum_{a,b} d_a d_b gamma_{a,b}(t) evaluated at one lag
    let sum_at = |lag: &[f64]| -> Result<f64> {
        let r = standardized_cross_cov(model, lag)?;
        let mut s = 0.0;
        for (i, a) in indices.iter().enumerate() {
            if coeffs[i] == 0.0 {
                continue;
            }
            for (j, b) in indices.iter().enumerate() {
                if coeffs[j] == 0.0 {
                    continue;
                }
                s += coeffs[i] * coeffs[j] * mehler_pairs(a, b, &r);
            }
        }
        Ok(s)
    };
    match d {
        1 => {
            // int_{-r}^{r} = 2 int_0^r by symmetry of the pair sum
            let n = 400;
            let mut total = 0.0;
            let mut prev = sum_at(&[cutoff])?;
            let mut prev_t = cutoff;
            for k in 1..=n {
                let t = cutoff + (r_max - cutoff) * k as f64 / n as f64;
                let cur = sum_at(&[t])?;
                total += 0.5 * (prev + cur) * (t - prev_t);
                prev = cur;
                prev_t = t;
            }
            // head below the cutoff: value roughly constant
            total += prev_t.min(cutoff) * 0.0 + cutoff * sum_at(&[cutoff])?;
            Ok(2.0 * total)
        }
        2 => {
            let n_theta = 16;
            let n_rad = 80;
            let mut total = 0.0;
            for it in 0..n_theta {
                let theta = std::f64::consts::PI * (it as f64 + 0.5) / n_theta as f64;
                // integrand has period pi in theta by parity of the sum
                let (c, s) = theta.sin_cos();
                let mut prev = cutoff * sum_at(&[cutoff * c, cutoff * s])?;
                let mut prev_t = cutoff;
                let mut radial = cutoff * 0.5 * prev;
                for k in 1..=n_rad {
                    let z = cutoff + (r_max - cutoff) * k as f64 / n_rad as f64;
                    let cur = z * sum_at(&[z * c, z * s])?;
                    radial += 0.5 * (prev + cur) * (z - prev_t);
                    prev = cur;
                    prev_t = z;
                }
                total += radial;
            }
            Ok(2.0 * std::f64::consts::PI / n_theta as f64 * total)
        }
        _ => unreachable!(),
    }
}

/// Mehler sum with a precomputed cross-covariance matrix.
fn mehler_pairs(a: &[usize], b: &[usize], r: &DMatrix<f64>) -> f64 {
    let qa: usize = a.iter().sum();
    let qb: usize = b.iter().sum();
    if qa != qb {
        return 0.0;
    }
    let mut total = 0.0;
    fn rec(
        row: usize,
        a: &[usize],
        col_rem: &mut Vec<usize>,
        r: &DMatrix<f64>,
        weight: f64,
        total: &mut f64,
    ) {
        if row == a.len() {
            *total += weight;
            return;
        }
        fn fill(
            col: usize,
            remaining: usize,
            row: usize,
            col_rem: &mut Vec<usize>,
            r: &DMatrix<f64>,
            weight: f64,
            a: &[usize],
            total: &mut f64,
        ) {
            if col + 1 == col_rem.len() {
                if remaining <= col_rem[col] {
                    let mut w = weight;
                    let rc = r[(row, col)];
                    for k in 0..remaining {
                        w *= rc / (k + 1) as f64;
                    }
                    col_rem[col] -= remaining;
                    rec(row + 1, a, col_rem, r, w, total);
                    col_rem[col] += remaining;
                }
                return;
            }
            let cap = remaining.min(col_rem[col]);
            for m in 0..=cap {
                let mut w = weight;
                let rc = r[(row, col)];
                for k in 0..m {
                    w *= rc / (k + 1) as f64;
                }
                col_rem[col] -= m;
                fill(col + 1, remaining - m, row, col_rem, r, w, a, total);
                col_rem[col] += m;
            }
        }
        fill(0, a[row], row, col_rem, r, weight, a, total);
    }
    let mut col_rem = b.to_vec();
    rec(0, a, &mut col_rem, r, 1.0, &mut total);
    multi_factorial(a) * multi_factorial(b) * total
}

/// Replication report of the CLT experiment for the intensity and
/// modified-K estimators across growing windows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CltReport {
    pub model: CovarianceModel,
    pub l_set: String,
    pub eta: f64,
    pub r_list: Vec<f64>,
    pub n_values: Vec<usize>,
    pub replicates: usize,
    pub n_terms: usize,
    pub seed: u64,
    pub statistics: Vec<CltStatReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CltStatReport {
    pub name: String,
    /// population target of the statistic
    pub target: f64,
    /// mean of (estimate - target) per window size
    pub bias_by_n: Vec<f64>,
    /// |bias| / standard error of the mean, per window size
    pub bias_sigmas_by_n: Vec<f64>,
    /// n^d * Var(estimate) per window size
    pub scaled_variance_by_n: Vec<f64>,
    /// Anderson-Darling normality p-value per window size
    pub ad_p_value_by_n: Vec<f64>,
    /// successive ratios of scaled variances (stabilization diagnostic)
    pub stabilization_ratios: Vec<f64>,
}

/// Default shell inner radius: well below the typical inter-point
/// distance, above the pcf numerical cutoff.
pub fn default_eta(rho: f64, d: usize) -> f64 {
    0.05 * rho.powf(-1.0 / d as f64)
}

/// Runs the replication harness: for each window size n, simulate,
/// extract, estimate, and summarize bias / scaled variance / normality of
/// `rho_hat` and `k_hat_eta(r_i)`.
#[allow(clippy::too_many_arguments)]
pub fn clt_experiment(
    model: &CovarianceModel,
    l_set: &IndexSet,
    eta: f64,
    r_list: &[f64],
    n_list: &[usize],
    replicates: usize,
    n_terms: usize,
    seed: u64,
) -> Result<CltReport> {
    let d = model.dim();
    assert!(!n_list.is_empty() && !r_list.is_empty());
    assert!(replicates >= 100, "need at least 100 replicates");
    let rho = intensity_closed_form(model, l_set)?;

    // reference K values from a dedicated pcf curve
    let r_hi = r_list.last().unwrap() * 1.05;
    let cutoff = pcf_lower_cutoff(model);
    let grid: Vec<f64> = (0..=120)
        .map(|i| eta.min(cutoff) * 0.5 + (r_hi - eta.min(cutoff) * 0.5) * i as f64 / 120.0)
        .collect();
    let curve = pcf_curve(model, l_set, l_set, &grid, 200_000, seed ^ 0x9E37)?;
    let k_targets: Vec<f64> = r_list
        .iter()
        .map(|&r| kfun_eta_curve(&curve, eta, r))
        .collect();

    let n_stats = 1 + r_list.len();
    let mut stat_samples: Vec<Vec<Vec<f64>>> =
        vec![vec![Vec::with_capacity(replicates); n_list.len()]; n_stats];

    for (ni, &n) in n_list.iter().enumerate() {
        let window = Window::centered(d, n as f64);
        let config = ExtractionConfig::for_model(model, &window)?;
        // replicate seeds shared across window sizes: the same underlying
        // field realization is observed in nested windows, which removes
        // most of the noise from the variance-stabilization ratios
        let results: Vec<Result<Vec<f64>>> = (0..replicates)
            .into_par_iter()
            .map(|rep| {
                let rep_seed = seed ^ (rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                let field = simulate_spectral(model, n_terms, &window, rep_seed);
                let report = extract(&field, &window, &config)?;
                let pattern = &report.pattern;
                let mut row = vec![rho_hat(pattern, l_set)];
                match k_hat_eta_multi(pattern, l_set, eta, r_list) {
                    Ok(ks) => row.extend(ks),
                    Err(CritError::EmptyPattern) => {
                        row.extend(std::iter::repeat(0.0).take(r_list.len()))
                    }
                    Err(e) => return Err(e),
                }
                Ok(row)
            })
            .collect();
        for res in results {
            let row = res?;
            for (si, v) in row.into_iter().enumerate() {
                stat_samples[si][ni].push(v);
            }
        }
    }

    let vol_scale: Vec<f64> = n_list.iter().map(|&n| (n as f64).powi(d as i32)).collect();
    let mut statistics = Vec::new();
    for si in 0..n_stats {
        let (name, target) = if si == 0 {
            ("rho_hat".to_string(), rho)
        } else {
            (format!("k_hat@r={}", r_list[si - 1]), k_targets[si - 1])
        };
        let mut bias = Vec::new();
        let mut bias_sig = Vec::new();
        let mut scaled_var = Vec::new();
        let mut ad_p = Vec::new();
        for ni in 0..n_list.len() {
            let xs = &stat_samples[si][ni];
            let m = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / m;
            let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0);
            let se = (var / m).sqrt();
            bias.push(mean - target);
            bias_sig.push((mean - target).abs() / se.max(f64::MIN_POSITIVE));
            scaled_var.push(vol_scale[ni] * var);
            ad_p.push(anderson_darling_normal(xs)?.p_value);
        }
        let ratios = scaled_var
            .windows(2)
            .map(|w| w[1] / w[0])
            .collect();
        statistics.push(CltStatReport {
            name,
            target,
            bias_by_n: bias,
            bias_sigmas_by_n: bias_sig,
            scaled_variance_by_n: scaled_var,
            ad_p_value_by_n: ad_p,
            stabilization_ratios: ratios,
        });
    }

    Ok(CltReport {
        model: *model,
        l_set: l_set.to_string(),
        eta,
        r_list: r_list.to_vec(),
        n_values: n_list.to_vec(),
        replicates,
        n_terms,
        seed,
        statistics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::stream_rng;
    use crate::critpoints::CriticalPoint;
    use crate::kacrice::model_with_intensity;
    use crate::quad::gauss_hermite;
    use crate::Family;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn toy_pattern(locs: &[(f64, f64)], window: Window) -> PointPattern {
        PointPattern {
            window,
            points: locs
                .iter()
                .map(|&(x, y)| CriticalPoint {
                    location: vec![x, y],
                    index: 2,
                    value: 0.0,
                    det_hessian: 1.0,
                    residual: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn rho_hat_basics() {
        let w = Window::unit(2);
        let empty = PointPattern { window: w.clone(), points: vec![] };
        assert_eq!(rho_hat(&empty, &IndexSet::all(2)), 0.0);
        let p = toy_pattern(&[(0.2, 0.2), (0.8, 0.5), (0.5, 0.9)], w);
        assert_eq!(rho_hat(&p, &IndexSet::all(2)), 3.0);
        assert_eq!(rho_hat(&p, &IndexSet::minima(2)), 0.0);
        // translation invariance of pattern + window together
        let w2 = Window::new(vec![5.0, 5.0], vec![6.0, 6.0]);
        let p2 = toy_pattern(&[(5.2, 5.2), (5.8, 5.5), (5.5, 5.9)], w2);
        assert_eq!(rho_hat(&p2, &IndexSet::all(2)), 3.0);
    }

    #[test]
    fn k_hat_hand_computed_example() {
        // two points at axis-aligned distance 0.5 in the unit square
        let p = toy_pattern(&[(0.2, 0.5), (0.7, 0.5)], Window::unit(2));
        let k = k_hat_eta(&p, &IndexSet::all(2), 0.1, 0.6).unwrap();
        assert_relative_eq!(k, 1.0, max_relative = 1e-12);
        // r below the pair distance: zero
        let k = k_hat_eta(&p, &IndexSet::all(2), 0.1, 0.4).unwrap();
        assert_eq!(k, 0.0);
        // nondecreasing in r
        let ks = k_hat_eta_multi(&p, &IndexSet::all(2), 0.1, &[0.3, 0.45, 0.55, 0.8])
            .unwrap();
        assert!(ks.windows(2).all(|w| w[0] <= w[1]));
        // empty pattern errors
        let empty = PointPattern { window: Window::unit(2), points: vec![] };
        assert!(matches!(
            k_hat_eta(&empty, &IndexSet::all(2), 0.1, 0.5),
            Err(CritError::EmptyPattern)
        ));
    }

    #[test]
    fn k_hat_cell_grid_matches_brute_force() {
        use rand::Rng;
        let mut rng = stream_rng(3, "khat-brute", 0);
        let window = Window::unit(2);
        let locs: Vec<(f64, f64)> = (0..120)
            .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
            .collect();
        let p = toy_pattern(&locs, window.clone());
        let eta = 0.02;
        let r = 0.3;
        let fast = k_hat_eta(&p, &IndexSet::all(2), eta, r).unwrap();
        // brute force over ordered pairs
        let rho = 120.0;
        let mut acc = 0.0;
        for i in 0..locs.len() {
            for j in 0..locs.len() {
                if i == j {
                    continue;
                }
                let dx = locs[i].0 - locs[j].0;
                let dy = locs[i].1 - locs[j].1;
                let dist = (dx * dx + dy * dy).sqrt();
                if dist >= eta && dist <= r {
                    acc += 1.0 / ((1.0 - dx.abs()) * (1.0 - dy.abs()));
                }
            }
        }
        let brute = acc / (rho * rho);
        assert_relative_eq!(fast, brute, max_relative = 1e-12);
    }

    #[test]
    fn hermite_polynomials() {
        assert_eq!(hermite_poly(2, 2.0), 3.0); // x^2 - 1
        assert_eq!(hermite_poly(3, 1.0), -2.0); // x^3 - 3x
        assert_eq!(hermite_at_zero(2), -1.0);
        assert_eq!(hermite_at_zero(4), 3.0);
        assert_eq!(hermite_at_zero(3), 0.0);
        // orthogonality under the standard normal by Gauss-Hermite
        let (nodes, weights) = gauss_hermite(48);
        let dot = |m: usize, n: usize| -> f64 {
            nodes
                .iter()
                .zip(&weights)
                .map(|(&x, &w)| w * hermite_poly(m, x) * hermite_poly(n, x))
                .sum()
        };
        assert_abs_diff_eq!(dot(3, 3), 6.0, epsilon = 1e-8);
        assert_abs_diff_eq!(dot(2, 3), 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(dot(5, 5), 120.0, epsilon = 1e-6);
    }

    #[test]
    fn hermite_scaled_moment_bound() {
        // E[H_n(sigma Y)^2]/n! bounded by kappa (2p)^{4n} (1 v sigma)^{2n}
        // with p = 1 (inequality check only)
        let (nodes, weights) = gauss_hermite(64);
        let sigma = 0.5;
        for n in [2usize, 4, 8] {
            let m: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(&x, &w)| {
                    let h = hermite_poly(n, sigma * x);
                    w * h * h
                })
                .sum();
            let nfact: f64 = (1..=n).map(|k| k as f64).product();
            let bound = 2.0f64.powi(4 * n as i32); // kappa = 1, sigma < 1
            assert!(
                m / nfact <= bound,
                "scaled Hermite moment {} exceeds bound {}",
                m / nfact,
                bound
            );
        }
    }

    #[test]
    fn multi_index_enumeration() {
        let idx = multi_indices(3, 2);
        assert_eq!(idx.len(), 6); // C(2+2,2)
        assert!(idx.iter().all(|a| a.iter().sum::<usize>() == 2));
        assert_eq!(multi_factorial(&[3, 0, 2]), 12.0);
    }

    #[test]
    fn coeff_a_zero_is_intensity() {
        let model = CovarianceModel::gaussian_limit(1, 1.0);
        for l_set in [IndexSet::all(1), IndexSet::maxima(1)] {
            let rho = intensity_closed_form(&model, &l_set).unwrap();
            let d0 = hermite_coeff_da(&model, &l_set, &[0, 0], 200_000, 5).unwrap();
            assert!(
                d0.sigmas_from(rho) < 4.0,
                "d_0 = {} +- {} vs rho = {rho}",
                d0.value,
                d0.stderr
            );
        }
    }

    #[test]
    fn coeff_quadrature_oracle_d1() {
        // d = 1, pure Hessian index a = (0, 2), L = maxima: closed 1-d
        // integral E[H_2(Z) |sqrt(l4) Z| 1(Z < 0)] via Gauss-Hermite
        let model = CovarianceModel::gaussian_limit(1, 1.0);
        let l_set = IndexSet::maxima(1);
        let l2 = model.spectral_moment(2).unwrap();
        let l4 = model.spectral_moment(4).unwrap();
        let (nodes, weights) = gauss_hermite(256);
        let integral: f64 = nodes
            .iter()
            .zip(&weights)
            .filter(|(&x, _)| x < 0.0)
            .map(|(&x, &w)| w * hermite_poly(2, x) * (l4.sqrt() * x).abs())
            .sum();
        let want = integral / (2.0 * std::f64::consts::PI * l2).sqrt() / 2.0; // 1/a! = 1/2
        let got = hermite_coeff_da(&model, &l_set, &[0, 2], 400_000, 11).unwrap();
        assert!(
            got.sigmas_from(want) < 4.0,
            "d_(0,2) = {} +- {} vs quadrature {want}",
            got.value,
            got.stderr
        );
    }

    #[test]
    fn coeff_odd_gradient_degree_is_structural_zero() {
        let model = CovarianceModel::gaussian_limit(1, 1.0);
        let got =
            hermite_coeff_da(&model, &IndexSet::all(1), &[1, 2], 1000, 3).unwrap();
        assert_eq!(got.value, 0.0);
        assert_eq!(got.stderr, 0.0);
    }

    #[test]
    fn coeff_odd_total_degree_vanishes_for_symmetric_l() {
        let model = CovarianceModel::gaussian_limit(1, 1.0);
        // |a| = 3 odd with even gradient part: zero only by the symmetry
        // argument, so it must come out as an MC zero
        for l_set in [IndexSet::all(1), IndexSet::extrema(1)] {
            let got = hermite_coeff_da(&model, &l_set, &[0, 3], 300_000, 7).unwrap();
            assert!(
                got.value.abs() < 3.0 * got.stderr + 1e-12,
                "odd coefficient {} +- {} should vanish",
                got.value,
                got.stderr
            );
        }
        // non-symmetric L has genuinely non-zero odd coefficients
        // (degree 1: E[Z |Z| 1(Z<0)] = -1/2)
        let got = hermite_coeff_da(&model, &IndexSet::maxima(1), &[0, 1], 300_000, 7)
            .unwrap();
        assert!(got.value.abs() > 5.0 * got.stderr, "{got:?}");
    }

    #[test]
    fn coeff_da_r_reduces_to_pcf() {
        // a = 0: d_0(r) = rho^2 g(r)
        let model = CovarianceModel::gaussian_limit(1, 1.0);
        let l_set = IndexSet::all(1);
        let r = 0.8;
        let rho = intensity_closed_form(&model, &l_set).unwrap();
        let a0 = vec![0usize; 4];
        let d0 = hermite_coeff_da_r(&model, &l_set, &a0, r, 300_000, 13).unwrap();
        let g = crate::kacrice::pcf_mc(&model, &l_set, &l_set, r, 300_000, 14).unwrap();
        let want = rho * rho * g.value;
        let band = 4.0 * (d0.stderr + rho * rho * g.stderr);
        assert!(
            (d0.value - want).abs() < band,
            "d_0(r) = {} vs rho^2 g = {want}",
            d0.value
        );
    }

    #[test]
    fn coeff_da_r_odd_degree_vanishes_for_symmetric_l() {
        let model = CovarianceModel::gaussian_limit(1, 1.0);
        let l_set = IndexSet::all(1);
        let mut a = vec![0usize; 4];
        a[1] = 1; // hessian slot of the first point, |a| = 1
        let got = hermite_coeff_da_r(&model, &l_set, &a, 0.7, 300_000, 15).unwrap();
        assert!(got.value.abs() < 3.0 * got.stderr + 1e-12);
    }

    #[test]
    fn mehler_gamma_matches_mc() {
        let model = CovarianceModel::gaussian_limit(1, 1.0);
        let lag = [0.6];
        let dd = deriv_block_dim(1);
        // all index pairs with |a| = |b| <= 3
        let mut pairs = Vec::new();
        for q in 1..=3usize {
            let idx = multi_indices(dd, q);
            for a in &idx {
                for b in &idx {
                    pairs.push((a.clone(), b.clone()));
                }
            }
        }
        let exact: Vec<f64> = pairs
            .iter()
            .map(|(a, b)| mehler_gamma(&model, a, b, &lag).unwrap())
            .collect();

        // MC oracle: sample the joint derivative vector at {0, lag},
        // standardize per point, average Hermite products
        let joint =
            assemble_joint(&model, &[vec![0.0], lag.to_vec()]).unwrap();
        let inter = joint.interleaved_cov();
        let sampler = MvnSampler::new(&inter).unwrap();
        let sigma0 = inter.view((0, 0), (dd, dd)).into_owned();
        let s_inv = sym_inv_sqrt(&sigma0, "test").unwrap();
        let n = 1_000_000;
        let mut rng = stream_rng(19, "mehler-mc", 0);
        let mut acc = vec![0.0; pairs.len()];
        let mut acc2 = vec![0.0; pairs.len()];
        let mut x = vec![0.0; 2 * dd];
        let mut y0 = vec![0.0; dd];
        let mut y1 = vec![0.0; dd];
        for _ in 0..n {
            sampler.sample_into(&mut rng, &mut x);
            for i in 0..dd {
                y0[i] = (0..dd).map(|j| s_inv[(i, j)] * x[j]).sum();
                y1[i] = (0..dd).map(|j| s_inv[(i, j)] * x[dd + j]).sum();
            }
            for (k, (a, b)) in pairs.iter().enumerate() {
                let v = hermite_tensor(a, &y0) * hermite_tensor(b, &y1);
                acc[k] += v;
                acc2[k] += v * v;
            }
        }
        for (k, (a, b)) in pairs.iter().enumerate() {
            let mean = acc[k] / n as f64;
            let sd = (acc2[k] / n as f64 - mean * mean).sqrt();
            let se = sd / (n as f64).sqrt();
            assert!(
                (mean - exact[k]).abs() < 4.0 * se + 1e-9,
                "gamma_{a:?},{b:?}: mc {mean} vs mehler {}",
                exact[k]
            );
        }
    }

    #[test]
    fn mehler_gamma_order_one_and_decay() {
        let model = CovarianceModel::matern(1, 3.5, 1.0);
        let dd = deriv_block_dim(1);
        // |a| = |b| = 1: gamma equals the standardized cross-covariance
        let r_mat = standardized_cross_cov(&model, &[0.8]).unwrap();
        for i in 0..dd {
            for j in 0..dd {
                let mut a = vec![0; dd];
                let mut b = vec![0; dd];
                a[i] = 1;
                b[j] = 1;
                let g = mehler_gamma(&model, &a, &b, &[0.8]).unwrap();
                assert_relative_eq!(g, r_mat[(i, j)], epsilon = 1e-12);
            }
        }
        // mismatched degrees vanish identically
        assert_eq!(mehler_gamma(&model, &[1, 0], &[1, 1], &[0.8]).unwrap(), 0.0);
        // decay with distance
        let near = mehler_gamma(&model, &[2, 0], &[2, 0], &[0.5]).unwrap();
        let far = mehler_gamma(&model, &[2, 0], &[2, 0], &[8.0]).unwrap();
        assert!(far.abs() < 1e-3 * near.abs());
    }

    #[test]
    fn asymptotic_variance_rejects_rwm() {
        let model = CovarianceModel::random_wave(2, 1.0);
        let err = asymptotic_variance_phi1(&model, &IndexSet::all(2), 2, 5.0, 10_000, 1);
        assert!(matches!(err, Err(CritError::IntegrabilityViolation(_))));
    }

    #[test]
    fn clt_bias_and_khat_campbell_light() {
        // small replication harness: unbiasedness of rho_hat and near-
        // unbiasedness of k_hat against the Campbell targets
        let l_set = IndexSet::all(1);
        let model =
            model_with_intensity(Family::GaussianLimit, 1, None, &l_set, 2.0).unwrap();
        let report = clt_experiment(
            &model,
            &l_set,
            0.05,
            &[0.3],
            &[12],
            150,
            1024,
            77,
        )
        .unwrap();
        let rho_stat = &report.statistics[0];
        assert!(
            rho_stat.bias_sigmas_by_n[0] < 4.0,
            "rho_hat bias {} sigma",
            rho_stat.bias_sigmas_by_n[0]
        );
        let k_stat = &report.statistics[1];
        assert!(
            k_stat.bias_sigmas_by_n[0] < 4.0,
            "k_hat bias {} sigma (target {})",
            k_stat.bias_sigmas_by_n[0],
            k_stat.target
        );
    }
}
