//! Moment characteristics of critical point processes: intensities (closed
//! form and GOE Monte Carlo), pair and cross-pair correlation functions,
//! K-functions, the repulsion index, small-distance slope fits and k-th
//! order intensities.

use crate::covmodels::{CovarianceModel, Family};
use crate::error::{CritError, Result};
use crate::gaussjoint::{
    assemble_joint, condition_hessians_on_zero_gradients, density_at_zero_gradients,
    halfvec_len, sample_goe_eigenvalues,
};
use crate::linalg::{halfvec_det, halfvec_eigenvalues, MvnSampler};
use crate::mc::{mc_mean_vec, McEstimate};
use crate::quad::{adaptive_simpson, fit_line, LineFit, MonotoneCubic};
use crate::special::{gamma, ln_gamma};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// Relative share of local minima (and maxima) among all critical points
/// in dimension 4. Table entries for d <= 3 are exact algebraic numbers;
/// this one is a frozen high-precision GOE Monte Carlo constant (4e8
/// samples, standard error 3e-6), consistent with the exact
/// rho_1 = rho_3 = rho_total/4.
const D4_EXTREME_FRACTION: f64 = 0.059_886_3;

/// Subset of critical point indices {0, ..., d} selecting a point process.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSet {
    d: usize,
    members: BTreeSet<usize>,
}

impl IndexSet {
    pub fn new(d: usize, members: impl IntoIterator<Item = usize>) -> Self {
        let members: BTreeSet<usize> = members.into_iter().collect();
        assert!(!members.is_empty(), "index set must be nonempty");
        assert!(
            members.iter().all(|&l| l <= d),
            "index out of range 0..={d}"
        );
        Self { d, members }
    }

    /// All critical points, {0, ..., d}.
    pub fn all(d: usize) -> Self {
        Self::new(d, 0..=d)
    }

    /// Local minima, {0}.
    pub fn minima(d: usize) -> Self {
        Self::new(d, [0])
    }

    /// Local maxima, {d}.
    pub fn maxima(d: usize) -> Self {
        Self::new(d, [d])
    }

    /// Local extrema, {0, d}.
    pub fn extrema(d: usize) -> Self {
        Self::new(d, [0, d])
    }

    /// Saddle points, {1, ..., d-1} (requires d >= 2).
    pub fn saddles(d: usize) -> Self {
        assert!(d >= 2, "saddles need d >= 2");
        Self::new(d, 1..d)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn contains(&self, l: usize) -> bool {
        self.members.contains(&l)
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().copied()
    }

    /// Symmetric sets (l in L implies d - l in L) have Hermite expansions
    /// supported on even chaoses only.
    pub fn is_symmetric(&self) -> bool {
        self.members.iter().all(|&l| self.members.contains(&(self.d - l)))
    }
}

impl fmt::Display for IndexSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.members.len() == self.d + 1 {
            return write!(f, "0:{}", self.d);
        }
        let parts: Vec<String> = self.members.iter().map(|l| l.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Surface area of the unit sphere in R^d.
pub fn sphere_surface(d: usize) -> f64 {
    2.0 * std::f64::consts::PI.powf(0.5 * d as f64) / gamma(0.5 * d as f64)
}

/// Volume of the unit ball in R^d.
pub fn ball_volume(d: usize) -> f64 {
    std::f64::consts::PI.powf(0.5 * d as f64) / gamma(0.5 * d as f64 + 1.0)
}

/// Per-index fractions rho_l / rho_{0:d} for d <= 4.
pub fn intensity_fractions(d: usize) -> Result<Vec<f64>> {
    match d {
        1 => Ok(vec![0.5, 0.5]),
        2 => Ok(vec![0.25, 0.5, 0.25]),
        3 => {
            let s = 6.0 * 6.0f64.sqrt();
            let lo = (29.0 - s) / 116.0;
            let hi = (29.0 + s) / 116.0;
            Ok(vec![lo, hi, hi, lo])
        }
        4 => {
            let c0 = D4_EXTREME_FRACTION;
            Ok(vec![c0, 0.25, 0.5 - 2.0 * c0, 0.25, c0])
        }
        _ => Err(CritError::UnsupportedDimension(d)),
    }
}

/// Coefficient A_d with rho_{0:d} = A_d (lambda_4 / 3 lambda_2)^{d/2}.
pub fn intensity_total_coeff(d: usize) -> Result<f64> {
    use std::f64::consts::PI;
    let sqrt3 = 3.0f64.sqrt();
    match d {
        1 => Ok(sqrt3 / PI),
        2 => Ok(2.0 / (PI * sqrt3)),
        3 => Ok(29.0 / (6.0 * PI * PI * sqrt3)),
        4 => Ok(25.0 / (6.0 * PI * PI * sqrt3)),
        _ => Err(CritError::UnsupportedDimension(d)),
    }
}

/// Closed-form intensity rho_L for d <= 4.
pub fn intensity_closed_form(model: &CovarianceModel, l_set: &IndexSet) -> Result<f64> {
    let d = model.dim();
    assert_eq!(l_set.dim(), d, "index set dimension mismatch");
    let mr = model.moment_ratio()?;
    let fractions = intensity_fractions(d)?;
    let total = intensity_total_coeff(d)? * mr.powf(0.5 * d as f64);
    Ok(l_set.members().map(|l| fractions[l] * total).sum())
}

/// Kac-Rice GOE prefactor: rho_l = prefactor(d, mr) * E exp(-mu_{l+1}^2/2)
/// with mu the ordered eigenvalues of a (d+1)x(d+1) GOE matrix.
fn goe_prefactor(d: usize, mr: f64) -> f64 {
    use std::f64::consts::PI;
    let df = d as f64;
    // kappa_d / kappa_{d+1} = sqrt(2 pi) Gamma((d+3)/2) / Gamma(3/2)
    let kappa_ratio =
        (2.0 * PI).sqrt() * (ln_gamma(0.5 * (df + 3.0)) - ln_gamma(1.5)).exp();
    kappa_ratio / ((df + 1.0) * PI.powf(0.5 * (df + 1.0))) * mr.powf(0.5 * df)
}

/// Monte Carlo intensity of every index l = 0..d in one pass over shared
/// GOE samples.
pub fn intensity_goe_mc_all(
    model: &CovarianceModel,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    let d = model.dim();
    let mr = model.moment_ratio()?;
    let pref = goe_prefactor(d, mr);
    let m = d + 1;
    let ests = mc_mean_vec(n_samples, seed, "goe-intensity", |rng, n| {
        let mut acc = vec![0.0; m];
        for _ in 0..n {
            let eigs = sample_goe_eigenvalues(m, rng);
            for (l, &mu) in eigs.iter().enumerate() {
                acc[l] += (-0.5 * mu * mu).exp();
            }
        }
        acc.iter().map(|a| a / n as f64).collect()
    });
    Ok(ests
        .into_iter()
        .map(|e| McEstimate { value: pref * e.value, stderr: pref * e.stderr })
        .collect())
}

/// Monte Carlo intensity of critical points with index `l`.
pub fn intensity_goe_mc(
    model: &CovarianceModel,
    l: usize,
    n_samples: usize,
    seed: u64,
) -> Result<McEstimate> {
    assert!(l <= model.dim());
    Ok(intensity_goe_mc_all(model, n_samples, seed)?[l])
}

/// Scale parameter phi achieving `rho_L = target_rho` for the given family
/// (inverts the closed-form intensity through the moment ratio).
pub fn scale_for_intensity(
    family: Family,
    d: usize,
    nu: Option<f64>,
    l_set: &IndexSet,
    target_rho: f64,
) -> Result<f64> {
    assert!(target_rho > 0.0);
    assert_eq!(l_set.dim(), d);
    let fractions = intensity_fractions(d)?;
    let frac: f64 = l_set.members().map(|l| fractions[l]).sum();
    let coeff = intensity_total_coeff(d)? * frac;
    let mr = (target_rho / coeff).powf(2.0 / d as f64);
    match family {
        Family::GaussianLimit => Ok(mr.powf(-0.5)),
        Family::Matern => {
            let nu = nu.ok_or_else(|| {
                CritError::InvalidConfig("matern scale inversion needs nu".into())
            })?;
            if nu <= 2.0 {
                return Err(CritError::InsufficientSmoothness(format!(
                    "moment ratio needs nu > 2, got {nu}"
                )));
            }
            Ok((nu / ((nu - 2.0) * mr)).sqrt())
        }
        Family::RandomWave => Ok((d as f64 / ((d as f64 + 2.0) * mr)).sqrt()),
    }
}

/// Convenience constructor: a model of the given family scaled so that
/// rho_L hits the target.
pub fn model_with_intensity(
    family: Family,
    d: usize,
    nu: Option<f64>,
    l_set: &IndexSet,
    target_rho: f64,
) -> Result<CovarianceModel> {
    let phi = scale_for_intensity(family, d, nu, l_set, target_rho)?;
    Ok(match family {
        Family::Matern => CovarianceModel::matern(d, nu.unwrap(), phi),
        Family::GaussianLimit => CovarianceModel::gaussian_limit(d, phi),
        Family::RandomWave => CovarianceModel::random_wave(d, phi),
    })
}

/// Classification of a half-vectorized Hessian draw: absolute determinant
/// and index, or `None` when an eigenvalue sits below the Morse threshold
/// (the draw is discarded and counted).
pub fn classify_hessian(halfvec: &[f64], d: usize) -> Option<(f64, usize)> {
    let eigs = halfvec_eigenvalues(halfvec, d);
    let norm = eigs.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let thr = 1e-10 * norm;
    if eigs.iter().any(|e| e.abs() <= thr) {
        return None;
    }
    let index = eigs.iter().filter(|&&e| e < 0.0).count();
    let det = halfvec_det(halfvec, d).abs();
    Some((det, index))
}

/// Two-point conditional workspace shared by pcf evaluations at one
/// distance: the density factor and a sampler for the conditional law of
/// the two Hessians given vanishing gradients.
pub struct TwoPointConditional {
    d: usize,
    h: usize,
    pub density_factor: f64,
    sampler: MvnSampler,
}

impl TwoPointConditional {
    pub fn prepare(model: &CovarianceModel, r: f64) -> Result<Self> {
        let d = model.dim();
        let f_v = density_at_zero_gradients(model, r)?;
        let mut p0 = vec![0.0; d];
        let mut p1 = vec![0.0; d];
        p1[0] = r;
        p0[0] = 0.0;
        let joint = assemble_joint(model, &[p0, p1])?;
        let cond = condition_hessians_on_zero_gradients(&joint)?;
        let sampler = cond.sampler()?;
        Ok(Self { d, h: halfvec_len(d), density_factor: f_v, sampler })
    }

    /// One conditional draw of the Hessian pair, classified. Returns
    /// `(det0, idx0, det1, idx1)` or `None` on a Morse-threshold discard.
    pub fn draw<R: rand::Rng + ?Sized>(
        &self,
        rng: &mut R,
        buf: &mut [f64],
    ) -> Option<(f64, usize, f64, usize)> {
        self.sampler.sample_into(rng, buf);
        let (det0, idx0) = classify_hessian(&buf[..self.h], self.d)?;
        let (det1, idx1) = classify_hessian(&buf[self.h..], self.d)?;
        Some((det0, idx0, det1, idx1))
    }

    pub fn buf_len(&self) -> usize {
        2 * self.h
    }
}

/// Monte Carlo cross pair correlation g_{L,L'}(r).
pub fn pcf_mc(
    model: &CovarianceModel,
    l_set: &IndexSet,
    lp_set: &IndexSet,
    r: f64,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    let work = TwoPointConditional::prepare(model, r)?;
    let rho_l = intensity_closed_form(model, l_set)?;
    let rho_lp = intensity_closed_form(model, lp_set)?;
    let (mean, discarded) = conditional_product_mean(&work, l_set, lp_set, n_mc, seed, r);
    warn_on_discards(discarded, n_mc, r);
    let scale = work.density_factor / (rho_l * rho_lp);
    Ok(McEstimate { value: scale * mean.value, stderr: scale * mean.stderr })
}

fn conditional_product_mean(
    work: &TwoPointConditional,
    l_set: &IndexSet,
    lp_set: &IndexSet,
    n_mc: usize,
    seed: u64,
    r: f64,
) -> (McEstimate, u64) {
    use std::sync::atomic::{AtomicU64, Ordering};
    let discarded = AtomicU64::new(0);
    let label = format!("pcf:{l_set}|{lp_set}@{r}");
    let est = mc_mean_vec(n_mc, seed, &label, |rng, n| {
        let mut buf = vec![0.0; work.buf_len()];
        let mut acc = 0.0;
        let mut miss = 0u64;
        for _ in 0..n {
            match work.draw(rng, &mut buf) {
                Some((det0, idx0, det1, idx1)) => {
                    if l_set.contains(idx0) && lp_set.contains(idx1) {
                        acc += det0 * det1;
                    }
                }
                None => miss += 1,
            }
        }
        discarded.fetch_add(miss, Ordering::Relaxed);
        vec![acc / n as f64]
    })[0];
    (est, discarded.into_inner())
}

fn warn_on_discards(discarded: u64, n: usize, r: f64) {
    if (discarded as f64) > 1e-4 * n as f64 {
        eprintln!(
            "warning: {discarded} of {n} conditional Hessian draws at r = {r} \
             hit the Morse threshold and were discarded"
        );
    }
}

/// Tabulated summary function r -> (value, standard error) with the
/// configuration that produced it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryCurve {
    pub abscissae: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub meta: CurveMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveMeta {
    pub model: CovarianceModel,
    pub l_set: String,
    pub lp_set: String,
    pub n_mc: usize,
    pub seed: u64,
    pub kind: String,
}

impl SummaryCurve {
    /// Serializes as CSV with a leading `# {json}` metadata line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("# ");
        out.push_str(&serde_json::to_string(&self.meta).expect("meta serializes"));
        out.push('\n');
        out.push_str("r,value,stderr\n");
        for i in 0..self.abscissae.len() {
            out.push_str(&format!(
                "{:.17e},{:.17e},{:.17e}\n",
                self.abscissae[i], self.values[i], self.stderr[i]
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let meta_line = lines
            .next()
            .ok_or_else(|| CritError::InvalidConfig("empty curve file".into()))?;
        let meta: CurveMeta = serde_json::from_str(
            meta_line.trim_start_matches('#').trim(),
        )
        .map_err(|e| CritError::InvalidConfig(format!("bad curve metadata: {e}")))?;
        let header = lines.next().unwrap_or("");
        if header.trim() != "r,value,stderr" {
            return Err(CritError::InvalidConfig(format!(
                "unexpected curve header {header:?}"
            )));
        }
        let mut abscissae = Vec::new();
        let mut values = Vec::new();
        let mut stderr = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(CritError::InvalidConfig(format!("bad curve row {line:?}")));
            }
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| {
                    CritError::InvalidConfig(format!("bad number {s:?}: {e}"))
                })
            };
            abscissae.push(parse(cols[0])?);
            values.push(parse(cols[1])?);
            stderr.push(parse(cols[2])?);
        }
        Ok(Self { abscissae, values, stderr, meta })
    }

    pub fn interpolator(&self) -> MonotoneCubic {
        MonotoneCubic::new(&self.abscissae, &self.values)
    }
}

/// Numerical lower cutoff below which the two-point conditioning is
/// replaced by the small-r power law.
pub fn pcf_lower_cutoff(model: &CovarianceModel) -> f64 {
    1e-3 * model.phi()
}

/// Small-r exponent of g_{L,L'}(r) ~ c r^alpha (asymptotics of the pair
/// correlation at the origin).
pub fn smallr_exponent(l_set: &IndexSet, lp_set: &IndexSet, d: usize) -> f64 {
    let df = d as f64;
    let full: Vec<usize> = (0..=d).collect();
    let is_full = |s: &IndexSet| s.members().collect::<Vec<_>>() == full;
    if is_full(l_set) || is_full(lp_set) {
        return 2.0 - df;
    }
    let l: Vec<usize> = l_set.members().collect();
    let lp: Vec<usize> = lp_set.members().collect();
    if l == lp {
        if l.len() == 1 {
            // single index: O(r^{5-d}) for extrema (d = 2: r^3 for all)
            return if d == 2 { 3.0 } else { 5.0 - df };
        }
        if l == [0, d] {
            return (2.0 * df - 1.0).min(5.0 - df);
        }
        return 2.0 - df;
    }
    if l.len() == 1 && lp.len() == 1 {
        let (a, b) = (l[0].min(lp[0]), l[0].max(lp[0]));
        if a == 0 && b == d && d >= 2 {
            return 2.0 * df - 1.0;
        }
        if b == a + 1 {
            return 2.0 - df;
        }
    }
    2.0 - df
}

/// Pointwise Monte Carlo pcf curve over a grid of distances. Abscissae
/// below the numerical cutoff are extrapolated with the small-r power law.
pub fn pcf_curve(
    model: &CovarianceModel,
    l_set: &IndexSet,
    lp_set: &IndexSet,
    r_grid: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<SummaryCurve> {
    assert!(
        r_grid.windows(2).all(|w| w[0] < w[1]),
        "r grid must be strictly increasing"
    );
    let cutoff = pcf_lower_cutoff(model);
    let mut values = vec![0.0; r_grid.len()];
    let mut stderr = vec![0.0; r_grid.len()];
    let mut first_valid = None;
    for (i, &r) in r_grid.iter().enumerate() {
        if r < cutoff {
            continue;
        }
        let est = pcf_mc(model, l_set, lp_set, r, n_mc, seed)?;
        values[i] = est.value;
        stderr[i] = est.stderr;
        if first_valid.is_none() {
            first_valid = Some(i);
        }
    }
    if let Some(i0) = first_valid {
        let alpha = smallr_exponent(l_set, lp_set, model.dim());
        for i in 0..i0 {
            let ratio = (r_grid[i] / r_grid[i0]).powf(alpha);
            values[i] = values[i0] * ratio;
            stderr[i] = stderr[i0] * ratio;
        }
    } else if !r_grid.is_empty() {
        return Err(CritError::InvalidConfig(format!(
            "entire r grid lies below the pcf cutoff {cutoff}"
        )));
    }
    Ok(SummaryCurve {
        abscissae: r_grid.to_vec(),
        values,
        stderr,
        meta: CurveMeta {
            model: *model,
            l_set: l_set.to_string(),
            lp_set: lp_set.to_string(),
            n_mc,
            seed,
            kind: "pcf".into(),
        },
    })
}

/// Modified Ripley K-function from an arbitrary pair correlation function:
/// `K_{eta,L}(r) = s_{d-1} int_eta^r z^{d-1} g(z) dz`.
pub fn kfun_eta_g(g: &dyn Fn(f64) -> f64, d: usize, eta: f64, r: f64) -> f64 {
    assert!(0.0 < eta && eta < r, "need 0 < eta < r");
    let dm1 = (d - 1) as i32;
    sphere_surface(d) * adaptive_simpson(&|z: f64| z.powi(dm1) * g(z), eta, r, 1e-6)
}

/// Modified Ripley K-function by quadrature over an interpolated pcf
/// curve.
pub fn kfun_eta_curve(curve: &SummaryCurve, eta: f64, r: f64) -> f64 {
    let d = curve.meta.model.dim();
    let interp = curve.interpolator();
    kfun_eta_g(&|z| interp.eval(z), d, eta, r)
}

/// Repulsion index `I_L(r) = 1 + rho^{-1} s_{d-1} int_0^r z^{d-1} (g-1) dz`
/// from a pcf curve; the segment below the first abscissa is integrated
/// analytically with the small-r power law `g(z) = g(r0) (z/r0)^alpha`.
pub fn repulsion_index_curve(curve: &SummaryCurve, rho: f64, alpha: f64, r: f64) -> f64 {
    let d = curve.meta.model.dim();
    let df = d as f64;
    let r0 = curve.abscissae[0].min(r);
    let interp = curve.interpolator();
    let mut integral = 0.0;
    // analytic head: int_0^{r0} z^{d-1} (g0 (z/r0)^alpha - 1) dz
    let g0 = interp.eval(r0);
    integral += g0 * r0.powf(df) / (df + alpha) - r0.powf(df) / df;
    if r > r0 {
        integral += adaptive_simpson(
            &|z: f64| z.powf(df - 1.0) * (interp.eval(z) - 1.0),
            r0,
            r,
            1e-6,
        );
    }
    1.0 + sphere_surface(d) / rho * integral
}

/// Least-squares slope of log g against log r restricted to the window.
pub fn smallr_slope(curve: &SummaryCurve, window: (f64, f64)) -> Result<LineFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, &r) in curve.abscissae.iter().enumerate() {
        if r >= window.0 && r <= window.1 {
            let v = curve.values[i];
            if v <= 0.0 {
                return Err(CritError::NonPositiveValues);
            }
            xs.push(r.ln());
            ys.push(v.ln());
        }
    }
    if xs.len() < 2 {
        return Err(CritError::InvalidConfig(
            "slope window contains fewer than two curve points".into(),
        ));
    }
    Ok(fit_line(&xs, &ys))
}

/// k-th order intensity by Monte Carlo over the k-point conditional
/// Hessian law (Kac-Rice with all gradients conditioned to zero).
pub fn intensity_k_mc(
    model: &CovarianceModel,
    l_set: &IndexSet,
    points: &[Vec<f64>],
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    let d = model.dim();
    let k = points.len();
    let h = halfvec_len(d);
    let joint = assemble_joint(model, points)?;
    let f_v = joint.gradient_density_at_zero()?;
    let cond = condition_hessians_on_zero_gradients(&joint)?;
    let sampler = cond.sampler()?;
    use std::sync::atomic::{AtomicU64, Ordering};
    let discarded = AtomicU64::new(0);
    let est = mc_mean_vec(n_mc, seed, "intensity-k", |rng, n| {
        let mut buf = vec![0.0; k * h];
        let mut acc = 0.0;
        let mut miss = 0u64;
        'outer: for _ in 0..n {
            sampler.sample_into(rng, &mut buf);
            let mut prod = 1.0;
            for p in 0..k {
                match classify_hessian(&buf[p * h..(p + 1) * h], d) {
                    Some((det, idx)) => {
                        if !l_set.contains(idx) {
                            continue 'outer;
                        }
                        prod *= det;
                    }
                    None => {
                        miss += 1;
                        continue 'outer;
                    }
                }
            }
            acc += prod;
        }
        discarded.fetch_add(miss, Ordering::Relaxed);
        vec![acc / n as f64]
    })[0];
    warn_on_discards(discarded.into_inner(), n_mc, f64::NAN);
    Ok(McEstimate { value: f_v * est.value, stderr: f_v * est.stderr })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn index_set_basics() {
        let l = IndexSet::all(2);
        assert!(l.is_symmetric());
        assert_eq!(l.to_string(), "0:2");
        let l = IndexSet::extrema(3);
        assert!(l.is_symmetric());
        assert_eq!(l.to_string(), "0,3");
        let l = IndexSet::maxima(2);
        assert!(!l.is_symmetric());
        let l = IndexSet::new(2, [1]);
        assert!(l.is_symmetric());
        assert!(IndexSet::saddles(3).is_symmetric());
    }

    #[test]
    fn table1_values() {
        // d = 1, unit moment ratio
        let m = unit_ratio_model(1);
        let all = intensity_closed_form(&m, &IndexSet::all(1)).unwrap();
        assert_relative_eq!(all, 3.0f64.sqrt() / std::f64::consts::PI, max_relative = 1e-12);
        let min = intensity_closed_form(&m, &IndexSet::minima(1)).unwrap();
        assert_relative_eq!(min, all / 2.0, max_relative = 1e-12);

        let m = unit_ratio_model(2);
        let all = intensity_closed_form(&m, &IndexSet::all(2)).unwrap();
        assert_relative_eq!(
            all,
            2.0 / (std::f64::consts::PI * 3.0f64.sqrt()),
            max_relative = 1e-12
        );
        let max = intensity_closed_form(&m, &IndexSet::maxima(2)).unwrap();
        assert_relative_eq!(max, all / 4.0, max_relative = 1e-12);

        let m = unit_ratio_model(3);
        let all = intensity_closed_form(&m, &IndexSet::all(3)).unwrap();
        let min = intensity_closed_form(&m, &IndexSet::minima(3)).unwrap();
        assert_relative_eq!(min / all, 0.12330225468362869, max_relative = 1e-10);

        // partition for every supported dimension
        for d in 1..=4usize {
            let m = unit_ratio_model(d);
            let total = intensity_closed_form(&m, &IndexSet::all(d)).unwrap();
            let sum: f64 = (0..=d)
                .map(|l| intensity_closed_form(&m, &IndexSet::new(d, [l])).unwrap())
                .sum();
            assert_relative_eq!(total, sum, max_relative = 1e-12);
        }
    }

    /// Gaussian-limit model with lambda_4/(3 lambda_2) = 1.
    fn unit_ratio_model(d: usize) -> CovarianceModel {
        CovarianceModel::gaussian_limit(d, 1.0)
    }

    #[test]
    fn goe_mc_matches_closed_form() {
        for d in 1..=3usize {
            let m = unit_ratio_model(d);
            let ests = intensity_goe_mc_all(&m, 200_000, 99).unwrap();
            for l in 0..=d {
                let want = intensity_closed_form(&m, &IndexSet::new(d, [l])).unwrap();
                let sig = ests[l].sigmas_from(want);
                assert!(
                    sig < 4.0,
                    "d={d} l={l}: mc {} vs closed {}, {} sigma",
                    ests[l].value,
                    want,
                    sig
                );
            }
            // negation symmetry of the GOE spectrum
            for l in 0..=d / 2 {
                let diff = (ests[l].value - ests[d - l].value).abs();
                let band = 4.0 * (ests[l].stderr + ests[d - l].stderr);
                assert!(diff < band.max(1e-12));
            }
        }
    }

    #[test]
    fn scale_inversion_round_trips() {
        let cases = [
            (Family::GaussianLimit, 2, None, IndexSet::all(2), 100.0),
            (Family::Matern, 1, Some(3.0), IndexSet::all(1), 100.0),
            (Family::RandomWave, 2, None, IndexSet::maxima(2), 100.0),
            (Family::Matern, 3, Some(4.5), IndexSet::extrema(3), 42.0),
        ];
        for (family, d, nu, l_set, target) in cases {
            let model = model_with_intensity(family, d, nu, &l_set, target).unwrap();
            let back = intensity_closed_form(&model, &l_set).unwrap();
            assert_relative_eq!(back, target, max_relative = 1e-10);
        }
        // explicit phi for the documented d=2 Gaussian case
        let phi = scale_for_intensity(
            Family::GaussianLimit,
            2,
            None,
            &IndexSet::all(2),
            100.0,
        )
        .unwrap();
        let want = (2.0 / (100.0 * std::f64::consts::PI * 3.0f64.sqrt())).sqrt();
        assert_relative_eq!(phi, want, max_relative = 1e-12);
    }

    #[test]
    fn pcf_long_range_independence() {
        // g -> 1 at separations of several correlation lengths
        let l_set = IndexSet::all(2);
        let model =
            model_with_intensity(Family::GaussianLimit, 2, None, &l_set, 100.0).unwrap();
        let r = 5.0 / 100.0f64.sqrt();
        let est = pcf_mc(&model, &l_set, &l_set, r, 200_000, 4).unwrap();
        assert!(
            est.sigmas_from(1.0) < 4.0,
            "g({r}) = {} +- {}",
            est.value,
            est.stderr
        );
    }

    #[test]
    fn pcf_symmetry_in_l_sets() {
        let model = CovarianceModel::gaussian_limit(2, 1.0);
        let l_max = IndexSet::maxima(2);
        let l_min = IndexSet::minima(2);
        let r = 0.8;
        let a = pcf_mc(&model, &l_max, &l_min, r, 150_000, 21).unwrap();
        let b = pcf_mc(&model, &l_min, &l_max, r, 150_000, 22).unwrap();
        let band = 4.0 * (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
        assert!((a.value - b.value).abs() < band);
    }

    #[test]
    fn pcf_second_order_additivity() {
        // rho_{L u L'}^2 g_{L u L'} = rho_L^2 g_L + 2 rho_L rho_L' g_{L,L'}
        //                              + rho_L'^2 g_L' for disjoint L, L'
        let model = CovarianceModel::gaussian_limit(1, 1.0);
        let l0 = IndexSet::minima(1);
        let l1 = IndexSet::maxima(1);
        let both = IndexSet::all(1);
        let r = 0.6;
        let n = 200_000;
        let rho0 = intensity_closed_form(&model, &l0).unwrap();
        let rho1 = intensity_closed_form(&model, &l1).unwrap();
        let rho01 = intensity_closed_form(&model, &both).unwrap();
        let g00 = pcf_mc(&model, &l0, &l0, r, n, 1).unwrap();
        let g11 = pcf_mc(&model, &l1, &l1, r, n, 2).unwrap();
        let g01 = pcf_mc(&model, &l0, &l1, r, n, 3).unwrap();
        let gboth = pcf_mc(&model, &both, &both, r, n, 5).unwrap();
        let lhs = rho01 * rho01 * gboth.value;
        let rhs = rho0 * rho0 * g00.value
            + 2.0 * rho0 * rho1 * g01.value
            + rho1 * rho1 * g11.value;
        let band = 4.0
            * (rho01.powi(2) * gboth.stderr
                + rho0.powi(2) * g00.stderr
                + 2.0 * rho0 * rho1 * g01.stderr
                + rho1.powi(2) * g11.stderr);
        assert!(
            (lhs - rhs).abs() < band,
            "additivity violated: {lhs} vs {rhs} (band {band})"
        );
    }

    #[test]
    fn kfun_poisson_reference() {
        // g == 1 gives the shell volume v_d (r^d - eta^d)
        for d in 1..=3usize {
            let k = kfun_eta_g(&|_| 1.0, d, 0.1, 0.8);
            let want = ball_volume(d) * (0.8f64.powi(d as i32) - 0.1f64.powi(d as i32));
            assert_relative_eq!(k, want, max_relative = 1e-8);
        }
    }

    #[test]
    fn repulsion_index_identities() {
        // g == 1 curve: I_L(r) = 1 for all r
        let model = CovarianceModel::gaussian_limit(2, 1.0);
        let xs: Vec<f64> = (1..=60).map(|i| 0.02 * i as f64).collect();
        let ones = vec![1.0; xs.len()];
        let curve = SummaryCurve {
            abscissae: xs.clone(),
            values: ones.clone(),
            stderr: vec![0.0; xs.len()],
            meta: CurveMeta {
                model,
                l_set: "0:2".into(),
                lp_set: "0:2".into(),
                n_mc: 0,
                seed: 0,
                kind: "pcf".into(),
            },
        };
        let i_l = repulsion_index_curve(&curve, 5.0, 0.0, 0.9);
        assert_relative_eq!(i_l, 1.0, epsilon = 1e-8);

        // consistency with the K-function route on a non-trivial curve:
        // I_L(r) = 1 + rho^{-1} { K_L(r) - v_d r^d } with K integrated
        // from eta -> 0 (power-law head shared by both sides)
        let values: Vec<f64> = xs.iter().map(|&r| 1.0 - (-3.0 * r).exp()).collect();
        let curve2 = SummaryCurve { values, ..curve.clone() };
        let rho = 7.0;
        let r = 1.0;
        let alpha = 1.0; // the synthetic curve is ~ 3r near 0
        let i_l = repulsion_index_curve(&curve2, rho, alpha, r);
        let interp = curve2.interpolator();
        let d = 2;
        // K from 0 to r with the same analytic head
        let r0 = xs[0];
        let head = interp.eval(r0) * r0.powi(d as i32) / (d as f64 + alpha);
        let k_full = sphere_surface(d)
            * (head
                + adaptive_simpson(
                    &|z: f64| z.powi(d as i32 - 1) * interp.eval(z),
                    r0,
                    r,
                    1e-8,
                ));
        let want = 1.0 + (k_full - ball_volume(d) * r.powi(d as i32)) / rho;
        assert_relative_eq!(i_l, want, epsilon = 1e-6);
    }

    #[test]
    fn slope_fit_on_synthetic_power_law() {
        let model = CovarianceModel::gaussian_limit(1, 1.0);
        let xs: Vec<f64> = (1..=30).map(|i| 0.01 * i as f64).collect();
        let values: Vec<f64> = xs.iter().map(|&r| 2.7 * r).collect();
        let curve = SummaryCurve {
            abscissae: xs.clone(),
            values,
            stderr: vec![0.0; xs.len()],
            meta: CurveMeta {
                model,
                l_set: "0:1".into(),
                lp_set: "0:1".into(),
                n_mc: 0,
                seed: 0,
                kind: "pcf".into(),
            },
        };
        let fit = smallr_slope(&curve, (0.005, 0.35)).unwrap();
        assert_abs_diff_eq!(fit.slope, 1.0, epsilon = 1e-12);
        // negative values in window are rejected
        let mut bad = curve.clone();
        bad.values[3] = -0.1;
        assert!(matches!(
            smallr_slope(&bad, (0.005, 0.35)),
            Err(CritError::NonPositiveValues)
        ));
    }

    #[test]
    fn smallr_exponents_table() {
        assert_eq!(smallr_exponent(&IndexSet::all(1), &IndexSet::all(1), 1), 1.0);
        assert_eq!(smallr_exponent(&IndexSet::all(2), &IndexSet::all(2), 2), 0.0);
        assert_eq!(smallr_exponent(&IndexSet::all(3), &IndexSet::all(3), 3), -1.0);
        assert_eq!(
            smallr_exponent(&IndexSet::extrema(2), &IndexSet::extrema(2), 2),
            3.0
        );
        assert_eq!(
            smallr_exponent(&IndexSet::maxima(2), &IndexSet::maxima(2), 2),
            3.0
        );
        assert_eq!(
            smallr_exponent(&IndexSet::minima(2), &IndexSet::maxima(2), 2),
            3.0
        );
        assert_eq!(
            smallr_exponent(&IndexSet::minima(3), &IndexSet::new(3, [1]), 3),
            -1.0
        );
    }

    #[test]
    fn intensity_k_reductions() {
        let model = CovarianceModel::gaussian_limit(1, 1.0);
        let l_set = IndexSet::all(1);
        // k = 1 reduces to the intensity
        let est = intensity_k_mc(&model, &l_set, &[vec![0.0]], 200_000, 8).unwrap();
        let rho = intensity_closed_form(&model, &l_set).unwrap();
        assert!(est.sigmas_from(rho) < 4.0, "{} vs {rho}", est.value);
        // k = 2 reduces to rho^2 g(r)
        let r = 0.7;
        let est2 =
            intensity_k_mc(&model, &l_set, &[vec![0.0], vec![r]], 200_000, 9).unwrap();
        let g = pcf_mc(&model, &l_set, &l_set, r, 200_000, 10).unwrap();
        let want = rho * rho * g.value;
        let band = 4.0 * (est2.stderr + rho * rho * g.stderr);
        assert!((est2.value - want).abs() < band);
        // k = 3 at large separations factorizes into rho^3
        let est3 = intensity_k_mc(
            &model,
            &l_set,
            &[vec![0.0], vec![8.0], vec![16.0]],
            200_000,
            11,
        )
        .unwrap();
        assert!(est3.sigmas_from(rho.powi(3)) < 4.0);
    }

    #[test]
    fn isotropy_of_two_point_layout() {
        // second-order intensity is invariant under rotating the pair axis
        let model = CovarianceModel::gaussian_limit(2, 1.0);
        let l_set = IndexSet::all(2);
        let r = 0.9;
        let e1 = intensity_k_mc(
            &model,
            &l_set,
            &[vec![0.0, 0.0], vec![r, 0.0]],
            150_000,
            13,
        )
        .unwrap();
        let ang: f64 = 0.83;
        let rot = intensity_k_mc(
            &model,
            &l_set,
            &[vec![0.0, 0.0], vec![r * ang.cos(), r * ang.sin()]],
            150_000,
            14,
        )
        .unwrap();
        let band = 4.0 * (e1.stderr * e1.stderr + rot.stderr * rot.stderr).sqrt();
        assert!((e1.value - rot.value).abs() < band);
    }

    #[test]
    fn curve_csv_round_trip() {
        let model = CovarianceModel::matern(2, 3.5, 0.21);
        let curve = SummaryCurve {
            abscissae: vec![0.1, 0.2, 0.3],
            values: vec![0.5, 0.9, 1.01],
            stderr: vec![0.01, 0.01, 0.02],
            meta: CurveMeta {
                model,
                l_set: "2".into(),
                lp_set: "2".into(),
                n_mc: 1000,
                seed: 7,
                kind: "pcf".into(),
            },
        };
        let csv = curve.to_csv();
        let back = SummaryCurve::from_csv(&csv).unwrap();
        assert_eq!(back.abscissae, curve.abscissae);
        assert_eq!(back.values, curve.values);
        assert_eq!(back.meta.seed, 7);
        assert_eq!(back.meta.model.dim(), 2);
    }
}
