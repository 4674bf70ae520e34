//! Approximate simulation of the Gaussian random field on a box window:
//! the spectral method (sum of randomized cosines with exact covariance)
//! and exact lattice simulation followed by kernel smoothing. Both
//! representations expose analytic values, gradients and Hessians.

use crate::covmodels::{CovarianceModel, Family};
use crate::error::{CritError, Result};
use crate::gaussjoint::{halfvec_index, halfvec_len};
use crate::linalg::JITTER_REL;
use crate::mc::stream_rng;
use crate::quad::adaptive_simpson;
use crate::special::gamma;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Axis-aligned box domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Window {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        assert!(
            lower.iter().zip(&upper).all(|(l, u)| l < u),
            "window must have positive extent in every axis"
        );
        Self { lower, upper }
    }

    /// The unit cube [0, 1]^d.
    pub fn unit(d: usize) -> Self {
        Self::new(vec![0.0; d], vec![1.0; d])
    }

    /// The centered cube [-side/2, side/2]^d.
    pub fn centered(d: usize, side: f64) -> Self {
        assert!(side > 0.0);
        Self::new(vec![-0.5 * side; d], vec![0.5 * side; d])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i)).product()
    }

    pub fn diameter(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i) * self.side(i)).sum::<f64>().sqrt()
    }

    pub fn min_side(&self) -> f64 {
        (0..self.dim()).map(|i| self.side(i)).fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, t: &[f64]) -> bool {
        t.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (l, u))| *x >= *l && *x <= *u)
    }

    /// Window shrunk by `margin` on every face (empty margins rejected).
    pub fn eroded(&self, margin: f64) -> Result<Window> {
        let lower: Vec<f64> = self.lower.iter().map(|l| l + margin).collect();
        let upper: Vec<f64> = self.upper.iter().map(|u| u - margin).collect();
        if lower.iter().zip(&upper).any(|(l, u)| l >= u) {
            return Err(CritError::InvalidConfig(format!(
                "erosion margin {margin} swallows the window"
            )));
        }
        Ok(Window { lower, upper })
    }

    /// Componentwise clamp of a point into the window.
    pub fn clamp(&self, t: &mut [f64]) {
        for (x, (l, u)) in t.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *x = x.clamp(*l, *u);
        }
    }
}

/// A twice-differentiable field realization with analytic derivatives.
///
/// `value/gradient/hessian` are total functions of the representation; the
/// checked wrappers below enforce the evaluation window. Hessians use the
/// row-major upper-triangle half-vectorization.
pub trait SmoothField: Sync {
    fn dim(&self) -> usize;
    /// Region on which the representation is a faithful approximation.
    fn window(&self) -> &Window;
    fn value(&self, t: &[f64]) -> f64;
    fn gradient(&self, t: &[f64], out: &mut [f64]);
    fn hessian(&self, t: &[f64], out: &mut [f64]);
    /// Fused evaluation used by Newton iterations.
    fn eval_all(&self, t: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        self.gradient(t, grad);
        self.hessian(t, hess);
        self.value(t)
    }
}

/// Window-checked field evaluation.
pub fn evaluate(field: &dyn SmoothField, t: &[f64]) -> Result<f64> {
    if !field.window().contains(t) {
        return Err(CritError::OutOfWindow);
    }
    Ok(field.value(t))
}

/// Window-checked gradient.
pub fn gradient(field: &dyn SmoothField, t: &[f64]) -> Result<Vec<f64>> {
    if !field.window().contains(t) {
        return Err(CritError::OutOfWindow);
    }
    let mut g = vec![0.0; field.dim()];
    field.gradient(t, &mut g);
    Ok(g)
}

/// Window-checked half-vectorized Hessian.
pub fn hessian(field: &dyn SmoothField, t: &[f64]) -> Result<Vec<f64>> {
    if !field.window().contains(t) {
        return Err(CritError::OutOfWindow);
    }
    let mut h = vec![0.0; halfvec_len(field.dim())];
    field.hessian(t, &mut h);
    Ok(h)
}

/// One draw from the spectral measure of the model.
pub fn sample_spectral_frequency<R: Rng + ?Sized>(
    model: &CovarianceModel,
    rng: &mut R,
    out: &mut [f64],
) {
    let d = model.dim();
    debug_assert_eq!(out.len(), d);
    let phi = model.phi();
    match model.family() {
        Family::GaussianLimit => {
            // V ~ N(0, phi^{-2} I): characteristic function exp(-r^2/(2 phi^2))
            for v in out.iter_mut() {
                *v = rng.sample::<f64, _>(StandardNormal) / phi;
            }
        }
        Family::Matern => {
            // scaled multivariate Student-t with 2 nu degrees of freedom:
            // V = Z / (phi sqrt(S)), S ~ chi2(2 nu) / (2 nu)
            let nu = model.nu();
            let chi = ChiSquared::new(2.0 * nu).expect("2 nu > 0");
            let s = chi.sample(rng) / (2.0 * nu);
            let scale = 1.0 / (phi * s.sqrt());
            for v in out.iter_mut() {
                *v = scale * rng.sample::<f64, _>(StandardNormal);
            }
        }
        Family::RandomWave => {
            // uniform on the sphere of radius sqrt(d)/phi
            let radius = (d as f64).sqrt() / phi;
            loop {
                let mut norm2 = 0.0;
                for v in out.iter_mut() {
                    *v = rng.sample::<f64, _>(StandardNormal);
                    norm2 += *v * *v;
                }
                if norm2 > 1e-24 {
                    let scale = radius / norm2.sqrt();
                    for v in out.iter_mut() {
                        *v *= scale;
                    }
                    return;
                }
            }
        }
    }
}

/// Spectral-method realization: `X(t) = n^{-1/2} sum_i a_i cos(U_i + t.V_i)`
/// with `a_i = sqrt(-2 log W_i)`. The covariance is exactly `c` for every
/// number of terms; the joint law approaches Gaussian as terms grow.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralField {
    model: CovarianceModel,
    window: Window,
    seed: u64,
    amplitudes: Vec<f64>,
    phases: Vec<f64>,
    /// flattened n_terms x d frequencies
    frequencies: Vec<f64>,
}

impl SpectralField {
    pub fn n_terms(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Assembles a realization from explicit draws (deterministic fields
    /// for tests and diagnostics).
    pub fn from_parts(
        model: CovarianceModel,
        window: Window,
        amplitudes: Vec<f64>,
        phases: Vec<f64>,
        frequencies: Vec<f64>,
    ) -> Self {
        assert_eq!(amplitudes.len(), phases.len());
        assert_eq!(frequencies.len(), amplitudes.len() * model.dim());
        assert_eq!(window.dim(), model.dim());
        Self { model, window, seed: 0, amplitudes, phases, frequencies }
    }
}

/// Simulates a spectral realization with `n_terms` cosine terms.
pub fn simulate_spectral(
    model: &CovarianceModel,
    n_terms: usize,
    window: &Window,
    seed: u64,
) -> SpectralField {
    assert!(n_terms >= 1);
    assert_eq!(window.dim(), model.dim());
    let d = model.dim();
    let mut rng = stream_rng(seed, "spectral-field", 0);
    let mut amplitudes = Vec::with_capacity(n_terms);
    let mut phases = Vec::with_capacity(n_terms);
    let mut frequencies = vec![0.0; n_terms * d];
    for i in 0..n_terms {
        let w: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        amplitudes.push((-2.0 * w.ln()).sqrt());
        phases.push(rng.random::<f64>() * 2.0 * std::f64::consts::PI);
        sample_spectral_frequency(model, &mut rng, &mut frequencies[i * d..(i + 1) * d]);
    }
    SpectralField {
        model: *model,
        window: window.clone(),
        seed,
        amplitudes,
        phases,
        frequencies,
    }
}

impl SmoothField for SpectralField {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn window(&self) -> &Window {
        &self.window
    }

    fn value(&self, t: &[f64]) -> f64 {
        let d = self.dim();
        let norm = 1.0 / (self.n_terms() as f64).sqrt();
        let mut acc = 0.0;
        for i in 0..self.n_terms() {
            let v = &self.frequencies[i * d..(i + 1) * d];
            let arg = self.phases[i] + dot(t, v);
            acc += self.amplitudes[i] * arg.cos();
        }
        norm * acc
    }

    fn gradient(&self, t: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let norm = 1.0 / (self.n_terms() as f64).sqrt();
        out.fill(0.0);
        for i in 0..self.n_terms() {
            let v = &self.frequencies[i * d..(i + 1) * d];
            let arg = self.phases[i] + dot(t, v);
            let s = self.amplitudes[i] * arg.sin();
            for (o, vi) in out.iter_mut().zip(v) {
                *o -= s * vi;
            }
        }
        for o in out.iter_mut() {
            *o *= norm;
        }
    }

    fn hessian(&self, t: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let norm = 1.0 / (self.n_terms() as f64).sqrt();
        out.fill(0.0);
        for i in 0..self.n_terms() {
            let v = &self.frequencies[i * d..(i + 1) * d];
            let arg = self.phases[i] + dot(t, v);
            let c = self.amplitudes[i] * arg.cos();
            let mut idx = 0;
            for a in 0..d {
                for b in a..d {
                    out[idx] -= c * v[a] * v[b];
                    idx += 1;
                }
            }
        }
        for o in out.iter_mut() {
            *o *= norm;
        }
    }

    fn eval_all(&self, t: &[f64], grad: &mut [f64], hess: &mut [f64]) -> f64 {
        let d = self.dim();
        let norm = 1.0 / (self.n_terms() as f64).sqrt();
        grad.fill(0.0);
        hess.fill(0.0);
        let mut val = 0.0;
        for i in 0..self.n_terms() {
            let v = &self.frequencies[i * d..(i + 1) * d];
            let arg = self.phases[i] + dot(t, v);
            let (s, c) = arg.sin_cos();
            let a = self.amplitudes[i];
            val += a * c;
            let sa = a * s;
            let ca = a * c;
            for (g, vi) in grad.iter_mut().zip(v) {
                *g -= sa * vi;
            }
            let mut idx = 0;
            for p in 0..d {
                for q in p..d {
                    hess[idx] -= ca * v[p] * v[q];
                    idx += 1;
                }
            }
        }
        for g in grad.iter_mut() {
            *g *= norm;
        }
        for h in hess.iter_mut() {
            *h *= norm;
        }
        norm * val
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Default cap on the number of lattice points (the covariance matrix is
/// dense; memory and Cholesky cost scale as the square and cube).
pub const LATTICE_POINT_CAP: usize = 1 << 12;

/// Exact Gaussian draw at arbitrary pairwise distinct points by dense
/// Cholesky of the covariance matrix from `c1`.
pub fn simulate_on_points(
    model: &CovarianceModel,
    points: &[Vec<f64>],
    seed: u64,
) -> Result<Vec<f64>> {
    let n = points.len();
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        cov[(i, i)] = 1.0;
        for j in (i + 1)..n {
            let dist = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let c = model.c1(dist);
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    let chol = lattice_cholesky(cov)?;
    let mut rng = stream_rng(seed, "lattice-field", 0);
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok((chol.l() * z).iter().copied().collect())
}

/// Lenient PSD factorization for lattice Gram matrices: smooth covariances
/// produce numerically rank-deficient matrices whose tiny eigenvalues are
/// legitimate; jitter is escalated once before giving up.
fn lattice_cholesky(cov: DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    let n = cov.nrows();
    let jitter = JITTER_REL * cov.trace() / n as f64;
    if let Some(ch) = Cholesky::new(cov.clone()) {
        return Ok(ch);
    }
    for boost in [1.0, 100.0] {
        let mut jittered = cov.clone();
        for i in 0..n {
            jittered[(i, i)] += boost * jitter;
        }
        if let Some(ch) = Cholesky::new(jittered) {
            return Ok(ch);
        }
    }
    Err(CritError::DegenerateJoint(
        "lattice covariance numerically singular beyond jitter".into(),
    ))
}

/// Exact simulation on the half-offset lattice `{i/n}` intersected with
/// the window (spacing `1/n` per axis, points at cell centers).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticeSimulation {
    model: CovarianceModel,
    window: Window,
    /// lattice refinement: spacing is 1/n
    pub n: usize,
    seed: u64,
    /// per-axis point counts
    counts: Vec<usize>,
    /// per-axis first lattice coordinate
    origins: Vec<f64>,
    /// row-major values over the grid
    values: Vec<f64>,
}

impl LatticeSimulation {
    /// Wraps externally produced values on the standard half-offset grid
    /// (row-major over per-axis counts floor(side * n)); used to re-sample
    /// a fixed realization at several refinements.
    pub fn from_grid_values(
        model: CovarianceModel,
        window: Window,
        n: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let d = window.dim();
        let mut counts = Vec::with_capacity(d);
        let mut origins = Vec::with_capacity(d);
        for axis in 0..d {
            counts.push(((window.side(axis) * n as f64).floor() as usize).max(1));
            origins.push(window.lower()[axis] + 0.5 / n as f64);
        }
        let total: usize = counts.iter().product();
        if values.len() != total {
            return Err(CritError::InvalidConfig(format!(
                "expected {total} grid values, got {}",
                values.len()
            )));
        }
        Ok(Self { model, window, n, seed: 0, counts, origins, values })
    }

    /// Grid points in row-major order.
    pub fn grid_points(&self) -> Vec<Vec<f64>> {
        (0..self.values.len()).map(|i| self.point(i)).collect()
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn n_points(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn coord(&self, axis: usize, idx: usize) -> f64 {
        self.origins[axis] + idx as f64 / self.n as f64
    }

    fn point(&self, flat: usize) -> Vec<f64> {
        let d = self.window.dim();
        let mut idx = flat;
        let mut out = vec![0.0; d];
        for axis in (0..d).rev() {
            out[axis] = self.coord(axis, idx % self.counts[axis]);
            idx /= self.counts[axis];
        }
        out
    }
}

/// Draws the exact lattice Gaussian vector for refinement `n`.
pub fn simulate_lattice(
    model: &CovarianceModel,
    n: usize,
    window: &Window,
    seed: u64,
) -> Result<LatticeSimulation> {
    assert!(n >= 1);
    assert_eq!(window.dim(), model.dim());
    let d = model.dim();
    let mut counts = Vec::with_capacity(d);
    let mut origins = Vec::with_capacity(d);
    for axis in 0..d {
        // lattice points l + (k + 1/2)/n inside [l, u]
        let m = (window.side(axis) * n as f64).floor() as usize;
        let m = m.max(1);
        counts.push(m);
        origins.push(window.lower()[axis] + 0.5 / n as f64);
    }
    let total: usize = counts.iter().product();
    if total > LATTICE_POINT_CAP {
        return Err(CritError::LatticeTooLarge { requested: total, cap: LATTICE_POINT_CAP });
    }
    let mut sim = LatticeSimulation {
        model: *model,
        window: window.clone(),
        n,
        seed,
        counts,
        origins,
        values: Vec::new(),
    };
    let points: Vec<Vec<f64>> = (0..total).map(|i| sim.point(i)).collect();
    sim.values = simulate_on_points(model, &points, seed)?;
    Ok(sim)
}

/// Smooth compactly supported bump density `C exp(-1/(1 - |x|^2))` on the
/// unit ball, normalized to integrate to one.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BumpKernel {
    d: usize,
    norm: f64,
}

impl BumpKernel {
    pub fn new(d: usize) -> Self {
        // s_{d-1} int_0^1 r^{d-1} exp(-1/(1-r^2)) dr
        let dm1 = (d - 1) as i32;
        let surface = 2.0 * std::f64::consts::PI.powf(0.5 * d as f64) / gamma(0.5 * d as f64);
        let integral = surface
            * adaptive_simpson(
                &|r: f64| {
                    let s = r * r;
                    if s >= 1.0 {
                        0.0
                    } else {
                        r.powi(dm1) * (-1.0 / (1.0 - s)).exp()
                    }
                },
                0.0,
                1.0,
                1e-12,
            );
        Self { d, norm: 1.0 / integral }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let s = dot(x, x);
        if s >= 1.0 {
            return 0.0;
        }
        self.norm * (-1.0 / (1.0 - s)).exp()
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let s = dot(x, x);
        if s >= 1.0 {
            out.fill(0.0);
            return;
        }
        let k = self.norm * (-1.0 / (1.0 - s)).exp();
        let w = 1.0 - s;
        for (o, xi) in out.iter_mut().zip(x) {
            *o = k * (-2.0 * xi / (w * w));
        }
    }

    pub fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = self.d;
        let s = dot(x, x);
        if s >= 1.0 {
            out.fill(0.0);
            return;
        }
        let k = self.norm * (-1.0 / (1.0 - s)).exp();
        let w = 1.0 - s;
        let w2 = w * w;
        let w3 = w2 * w;
        let mut idx = 0;
        for i in 0..d {
            let ui = -2.0 * x[i] / w2;
            for j in i..d {
                let uj = -2.0 * x[j] / w2;
                let uij = if i == j { -2.0 / w2 } else { 0.0 } - 8.0 * x[i] * x[j] / w3;
                out[idx] = k * (ui * uj + uij);
                idx += 1;
            }
        }
    }
}

/// Default smoothing bandwidth `xi_n = n^{-1/(d+4)}`, satisfying the
/// convergence rates `xi -> 0` and `n^{-1} xi^{-d-3} -> 0`.
pub fn default_bandwidth(n: usize, d: usize) -> f64 {
    (n as f64).powf(-1.0 / (d as f64 + 4.0))
}

/// Kernel-smoothed version of an exact lattice draw:
/// `X_n(t) = sum_x n^{-d} k_xi(t - x) X(x)`, evaluated on the window
/// eroded by the kernel support.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatticeSmoothedField {
    lattice: LatticeSimulation,
    kernel: BumpKernel,
    pub xi: f64,
    eroded: Window,
}

/// Builds the smoothed field, enforcing the bandwidth rate
/// `n^{-1} xi^{-d-3} <= 1`.
pub fn smooth_lattice(lattice: LatticeSimulation, xi: f64) -> Result<LatticeSmoothedField> {
    assert!(xi > 0.0);
    let d = lattice.window().dim();
    let n = lattice.n;
    let rate = xi.powi(-(d as i32) - 3) / n as f64;
    if rate > 1.0 {
        return Err(CritError::BandwidthRateViolation { n, xi, rate });
    }
    let eroded = lattice.window().eroded(xi)?;
    Ok(LatticeSmoothedField { kernel: BumpKernel::new(d), lattice, xi, eroded })
}

impl LatticeSmoothedField {
    pub fn lattice(&self) -> &LatticeSimulation {
        &self.lattice
    }

    /// Applies `f(weighted kernel argument, lattice value)` over the
    /// lattice points inside the support box of `t`.
    fn fold_support(&self, t: &[f64], mut f: impl FnMut(&[f64], f64)) {
        let d = self.lattice.window.dim();
        let n = self.lattice.n as f64;
        // per-axis index ranges with |t_a - x_a| <= xi
        let mut lo = vec![0usize; d];
        let mut hi = vec![0usize; d];
        for a in 0..d {
            let first = ((t[a] - self.xi - self.lattice.origins[a]) * n).ceil() as isize;
            let last = ((t[a] + self.xi - self.lattice.origins[a]) * n).floor() as isize;
            let first = first.max(0);
            let last = last.min(self.lattice.counts[a] as isize - 1);
            if first > last {
                return;
            }
            lo[a] = first as usize;
            hi[a] = last as usize;
        }
        let mut idx = lo.clone();
        let mut arg = vec![0.0; d];
        loop {
            let mut flat = 0;
            for a in 0..d {
                flat = flat * self.lattice.counts[a] + idx[a];
            }
            for a in 0..d {
                arg[a] = (t[a] - self.lattice.coord(a, idx[a])) / self.xi;
            }
            f(&arg, self.lattice.values[flat]);
            // advance the multi-index
            let mut a = d;
            loop {
                if a == 0 {
                    return;
                }
                a -= 1;
                if idx[a] < hi[a] {
                    idx[a] += 1;
                    for b in (a + 1)..d {
                        idx[b] = lo[b];
                    }
                    break;
                }
            }
        }
    }
}

impl SmoothField for LatticeSmoothedField {
    fn dim(&self) -> usize {
        self.lattice.window.dim()
    }

    fn window(&self) -> &Window {
        &self.eroded
    }

    fn value(&self, t: &[f64]) -> f64 {
        let d = self.dim();
        let scale = (self.lattice.n as f64).powi(-(d as i32)) * self.xi.powi(-(d as i32));
        let mut acc = 0.0;
        self.fold_support(t, |arg, v| {
            acc += self.kernel.value(arg) * v;
        });
        scale * acc
    }

    fn gradient(&self, t: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let scale =
            (self.lattice.n as f64).powi(-(d as i32)) * self.xi.powi(-(d as i32) - 1);
        out.fill(0.0);
        let mut g = vec![0.0; d];
        self.fold_support(t, |arg, v| {
            self.kernel.gradient(arg, &mut g);
            for (o, gi) in out.iter_mut().zip(&g) {
                *o += gi * v;
            }
        });
        for o in out.iter_mut() {
            *o *= scale;
        }
    }

    fn hessian(&self, t: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let h = halfvec_len(d);
        let scale =
            (self.lattice.n as f64).powi(-(d as i32)) * self.xi.powi(-(d as i32) - 2);
        out.fill(0.0);
        let mut hh = vec![0.0; h];
        self.fold_support(t, |arg, v| {
            self.kernel.hessian(arg, &mut hh);
            for (o, hi) in out.iter_mut().zip(&hh) {
                *o += hi * v;
            }
        });
        for o in out.iter_mut() {
            *o *= scale;
        }
    }
}

/// Deterministic separable cosine field `prod_i cos(2 pi f t_i)` with
/// fully known critical points; a fixture for extraction tests and CLI
/// diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CosineTestField {
    d: usize,
    freq: f64,
    window: Window,
}

impl CosineTestField {
    pub fn new(d: usize, freq: f64, window: Window) -> Self {
        assert_eq!(window.dim(), d);
        Self { d, freq, window }
    }
}

impl SmoothField for CosineTestField {
    fn dim(&self) -> usize {
        self.d
    }

    fn window(&self) -> &Window {
        &self.window
    }

    fn value(&self, t: &[f64]) -> f64 {
        let w = 2.0 * std::f64::consts::PI * self.freq;
        t.iter().map(|x| (w * x).cos()).product()
    }

    fn gradient(&self, t: &[f64], out: &mut [f64]) {
        let w = 2.0 * std::f64::consts::PI * self.freq;
        for i in 0..self.d {
            let mut g = 1.0;
            for (j, x) in t.iter().enumerate() {
                g *= if i == j { -w * (w * x).sin() } else { (w * x).cos() };
            }
            out[i] = g;
        }
    }

    fn hessian(&self, t: &[f64], out: &mut [f64]) {
        let w = 2.0 * std::f64::consts::PI * self.freq;
        for i in 0..self.d {
            for j in i..self.d {
                let mut h = 1.0;
                for (k, x) in t.iter().enumerate() {
                    h *= if k == i && k == j {
                        -w * w * (w * x).cos()
                    } else if k == i || k == j {
                        -w * (w * x).sin()
                    } else {
                        (w * x).cos()
                    };
                }
                out[halfvec_index(i, j, self.d)] = h;
            }
        }
    }
}

/// Serializable container for replaying realizations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum FieldRealization {
    Spectral(SpectralField),
    Lattice(LatticeSmoothedField),
    Cosine(CosineTestField),
}

impl FieldRealization {
    pub fn as_field(&self) -> &dyn SmoothField {
        match self {
            FieldRealization::Spectral(f) => f,
            FieldRealization::Lattice(f) => f,
            FieldRealization::Cosine(f) => f,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("realization serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| CritError::InvalidConfig(format!("bad realization JSON: {e}")))
    }
}
