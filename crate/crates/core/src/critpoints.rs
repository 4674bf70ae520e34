//! Extraction of critical points from a simulated field realization:
//! damped Newton iterations on the gradient from a grid of seeds,
//! deduplication, boundary filtering and Hessian-index classification.

use crate::covmodels::CovarianceModel;
use crate::error::{CritError, Result};
use crate::fieldsim::{SmoothField, Window};
use crate::gaussjoint::halfvec_len;
use crate::kacrice::{intensity_closed_form, IndexSet};
use crate::linalg::{halfvec_det, halfvec_eigenvalues};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One extracted critical point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: Vec<f64>,
    /// number of negative Hessian eigenvalues
    pub index: usize,
    pub value: f64,
    pub det_hessian: f64,
    /// gradient norm at the accepted root
    pub residual: f64,
}

/// A finite critical point pattern in a box window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointPattern {
    pub window: Window,
    pub points: Vec<CriticalPoint>,
}

impl PointPattern {
    pub fn dim(&self) -> usize {
        self.window.dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Tally N_l for l = 0..d.
    pub fn counts_by_index(&self) -> Vec<usize> {
        let mut counts = vec![0; self.dim() + 1];
        for p in &self.points {
            counts[p.index] += 1;
        }
        counts
    }

    /// Subset with index in L; the window is preserved.
    pub fn filter_indices(&self, l_set: &IndexSet) -> PointPattern {
        assert_eq!(l_set.dim(), self.dim());
        PointPattern {
            window: self.window.clone(),
            points: self
                .points
                .iter()
                .filter(|p| l_set.contains(p.index))
                .cloned()
                .collect(),
        }
    }

    /// CSV serialization: header `x1,...,xd,index,value,det_hessian`, one
    /// row per point. The window travels in a JSON sidecar.
    pub fn to_csv(&self) -> String {
        let d = self.dim();
        let mut out = String::new();
        for i in 1..=d {
            out.push_str(&format!("x{i},"));
        }
        out.push_str("index,value,det_hessian\n");
        for p in &self.points {
            for x in &p.location {
                out.push_str(&format!("{x:.17e},"));
            }
            out.push_str(&format!(
                "{},{:.17e},{:.17e}\n",
                p.index, p.value, p.det_hessian
            ));
        }
        out
    }

    pub fn from_csv(text: &str, window: Window) -> Result<PointPattern> {
        let d = window.dim();
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CritError::InvalidConfig("empty pattern file".into()))?;
        let expected: String = (1..=d).map(|i| format!("x{i},")).collect::<String>()
            + "index,value,det_hessian";
        if header.trim() != expected {
            return Err(CritError::InvalidConfig(format!(
                "unexpected pattern header {header:?}"
            )));
        }
        let mut points = Vec::new();
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != d + 3 {
                return Err(CritError::InvalidConfig(format!("bad pattern row {line:?}")));
            }
            let fparse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| CritError::InvalidConfig(format!("bad number {s:?}: {e}")))
            };
            let location: Vec<f64> =
                cols[..d].iter().map(|s| fparse(s)).collect::<Result<_>>()?;
            let index: usize = cols[d].trim().parse().map_err(|e| {
                CritError::InvalidConfig(format!("bad index {:?}: {e}", cols[d]))
            })?;
            points.push(CriticalPoint {
                location,
                index,
                value: fparse(cols[d + 1])?,
                det_hessian: fparse(cols[d + 2])?,
                residual: 0.0,
            });
        }
        Ok(PointPattern { window, points })
    }
}

/// Extraction configuration. `for_model` derives scale-aware defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub seeds_per_axis: usize,
    pub newton_max_iter: usize,
    /// gradient-norm acceptance tolerance
    pub newton_tol: f64,
    pub dedup_radius: f64,
    pub boundary_margin: f64,
    /// |det H| floor below which a root is rejected as non-Morse
    pub morse_tol: f64,
}

impl ExtractionConfig {
    /// Defaults driven by the model's intensity and derivative scales:
    /// roughly two seeds per expected inter-point spacing per axis,
    /// gradient tolerance relative to sqrt(lambda_2), Morse floor relative
    /// to the determinant scale lambda_4^{d/2}.
    pub fn for_model(model: &CovarianceModel, window: &Window) -> Result<Self> {
        let d = model.dim();
        let rho = intensity_closed_form(model, &IndexSet::all(d))?;
        let side = window.min_side();
        let seeds_per_axis =
            ((2.0 * rho.powf(1.0 / d as f64) * side).ceil() as usize).max(3);
        let l2 = model.spectral_moment(2)?;
        let l4 = model.spectral_moment(4)?;
        Ok(Self {
            seeds_per_axis,
            newton_max_iter: 60,
            newton_tol: 1e-9 * l2.sqrt(),
            dedup_radius: 1e-4 * window.diameter(),
            boundary_margin: 1e-3 * side,
            morse_tol: 1e-10 * l4.powf(0.5 * d as f64),
        })
    }

    /// Same defaults with an explicit seed density override.
    pub fn with_seeds_per_axis(mut self, seeds: usize) -> Self {
        self.seeds_per_axis = seeds.max(2);
        self
    }
}

/// Extraction report: the pattern plus convergence statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub pattern: PointPattern,
    pub seeds: usize,
    pub converged: usize,
    pub non_converged: usize,
    /// converged roots rejected by the Morse determinant floor
    pub rejected_non_morse: usize,
    /// roots merged by deduplication
    pub merged: usize,
    /// roots discarded within the boundary margin
    pub boundary_discarded: usize,
}

struct RawRoot {
    location: Vec<f64>,
    residual: f64,
}

/// Finds the critical points of `field` inside `window` by damped Newton
/// iterations on the gradient from a regular grid of seeds.
///
/// Converged roots are deduplicated within `dedup_radius` (keeping the
/// smaller residual), roots within `boundary_margin` of the boundary are
/// discarded, and roots with `|det H| < morse_tol` are rejected and
/// counted. More than 1% of seeds hitting non-Morse roots is an error.
pub fn extract(
    field: &dyn SmoothField,
    window: &Window,
    config: &ExtractionConfig,
) -> Result<ExtractionReport> {
    let d = field.dim();
    assert_eq!(window.dim(), d);
    let h = halfvec_len(d);

    // regular seed grid, offset half a cell from the boundary
    let m = config.seeds_per_axis;
    let n_seeds = m.pow(d as u32);
    let seeds: Vec<Vec<f64>> = (0..n_seeds)
        .map(|flat| {
            let mut idx = flat;
            let mut t = vec![0.0; d];
            for axis in (0..d).rev() {
                let k = idx % m;
                idx /= m;
                t[axis] = window.lower()[axis]
                    + window.side(axis) * (k as f64 + 0.5) / m as f64;
            }
            t
        })
        .collect();

    let roots: Vec<Option<RawRoot>> = seeds
        .par_iter()
        .map(|seed| newton_root(field, window, config, seed))
        .collect();

    let converged = roots.iter().flatten().count();
    let non_converged = n_seeds - converged;

    // deduplicate in seed order, keeping the smaller residual
    let mut dedup: Vec<RawRoot> = Vec::new();
    let mut merged = 0usize;
    for root in roots.into_iter().flatten() {
        match dedup.iter_mut().find(|r| {
            dist(&r.location, &root.location) < config.dedup_radius
        }) {
            Some(existing) => {
                merged += 1;
                if root.residual < existing.residual {
                    *existing = root;
                }
            }
            None => dedup.push(root),
        }
    }

    // boundary filter and classification
    let inner = window.eroded(config.boundary_margin)?;
    let mut boundary_discarded = 0usize;
    let mut rejected_non_morse = 0usize;
    let mut points = Vec::new();
    let mut hess = vec![0.0; h];
    let mut grad = vec![0.0; d];
    for root in dedup {
        if !inner.contains(&root.location) {
            boundary_discarded += 1;
            continue;
        }
        let value = field.eval_all(&root.location, &mut grad, &mut hess);
        let det = halfvec_det(&hess, d);
        if det.abs() < config.morse_tol {
            rejected_non_morse += 1;
            continue;
        }
        let index = halfvec_eigenvalues(&hess, d)
            .iter()
            .filter(|&&e| e < 0.0)
            .count();
        points.push(CriticalPoint {
            location: root.location,
            index,
            value,
            det_hessian: det,
            residual: norm(&grad),
        });
    }

    if rejected_non_morse * 100 > n_seeds {
        return Err(CritError::DegenerateField(format!(
            "{rejected_non_morse} of {n_seeds} seeds converged to non-Morse roots"
        )));
    }

    Ok(ExtractionReport {
        pattern: PointPattern { window: window.clone(), points },
        seeds: n_seeds,
        converged,
        non_converged,
        rejected_non_morse,
        merged,
        boundary_discarded,
    })
}

/// Damped Newton on the gradient map: step solves H s = -g, backtracking
/// halves the step until the gradient norm decreases (plain Newton
/// diverges from saddles of the gradient map). Iterates are clamped into
/// the window.
fn newton_root(
    field: &dyn SmoothField,
    window: &Window,
    config: &ExtractionConfig,
    seed: &[f64],
) -> Option<RawRoot> {
    let d = field.dim();
    let h = halfvec_len(d);
    let mut t = seed.to_vec();
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; h];
    field.eval_all(&t, &mut grad, &mut hess);
    let mut gnorm = norm(&grad);
    for _ in 0..config.newton_max_iter {
        if gnorm < config.newton_tol {
            return Some(RawRoot { location: t, residual: gnorm });
        }
        // full Hessian solve for the Newton step
        let mut mat = DMatrix::zeros(d, d);
        let mut idx = 0;
        for i in 0..d {
            for j in i..d {
                mat[(i, j)] = hess[idx];
                mat[(j, i)] = hess[idx];
                idx += 1;
            }
        }
        let rhs = DVector::from_column_slice(&grad);
        let step = match mat.lu().solve(&rhs) {
            Some(s) => s,
            None => return None,
        };
        // backtracking on the gradient norm, factor 1/2, max 30 halvings
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut cand = t.clone();
            for i in 0..d {
                cand[i] -= lambda * step[i];
            }
            window.clamp(&mut cand);
            field.eval_all(&cand, &mut grad, &mut hess);
            let cnorm = norm(&grad);
            if cnorm < gnorm {
                t = cand;
                gnorm = cnorm;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            return None;
        }
    }
    if gnorm < config.newton_tol {
        Some(RawRoot { location: t, residual: gnorm })
    } else {
        None
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covmodels::CovarianceModel;
    use crate::fieldsim::{simulate_spectral, CosineTestField, SmoothField};
    use crate::kacrice::model_with_intensity;
    use crate::Family;
    use approx::assert_abs_diff_eq;

    fn cosine_config() -> ExtractionConfig {
        ExtractionConfig {
            seeds_per_axis: 8,
            newton_max_iter: 60,
            newton_tol: 1e-10,
            dedup_radius: 1e-4,
            boundary_margin: 1e-3,
            morse_tol: 1e-6,
        }
    }

    #[test]
    fn cosine_field_critical_lattice() {
        // f = cos(2 pi x) cos(2 pi y) on [0.1, 0.9]^2: critical points at
        // (k/2, l/2) interior: 0.5 alone per axis is a root of sin at
        // x in {0.5}, plus extrema at x in {0.5}... full lattice is
        // {0.25k}: gradient zero where sin(2 pi x) = 0 or partner factors
        // vanish; the classical critical set is x, y in {0.5} union
        // saddle combinations at quarter points
        let field = CosineTestField::new(
            2,
            1.0,
            crate::fieldsim::Window::new(vec![0.1, 0.1], vec![0.9, 0.9]),
        );
        let window = field.window().clone();
        let report = extract(&field, &window, &cosine_config()).unwrap();
        let pattern = &report.pattern;
        // analytic critical points of cos(2pi x) cos(2pi y) in (0.1, 0.9)^2:
        // gradient zero iff (sin(2pi x) = 0 or cos(2pi y) = 0) and
        // (sin(2pi y) = 0 or cos(2pi x) = 0):
        //  - sin = 0 at x = 0.5; cos = 0 at x in {0.25, 0.75}
        // points: (0.5, 0.5) extremum; (0.25/0.75, 0.25/0.75) saddles
        let mut expected: Vec<(f64, f64, usize)> = vec![(0.5, 0.5, 2)];
        for &x in &[0.25, 0.75] {
            for &y in &[0.25, 0.75] {
                expected.push((x, y, 1));
            }
        }
        assert_eq!(pattern.len(), expected.len(), "{:?}", pattern.points);
        for (x, y, idx) in expected {
            let found = pattern
                .points
                .iter()
                .find(|p| dist(&p.location, &[x, y]) < 1e-8)
                .unwrap_or_else(|| panic!("missing critical point ({x},{y})"));
            assert_eq!(found.index, idx, "index at ({x},{y})");
        }
        // the maximum at (0.5,0.5) has value cos(pi)cos(pi) = 1
        let center = pattern
            .points
            .iter()
            .find(|p| dist(&p.location, &[0.5, 0.5]) < 1e-8)
            .unwrap();
        assert_abs_diff_eq!(center.value, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn filter_and_counts() {
        let field = CosineTestField::new(
            2,
            1.0,
            crate::fieldsim::Window::new(vec![0.1, 0.1], vec![0.9, 0.9]),
        );
        let window = field.window().clone();
        let pattern = extract(&field, &window, &cosine_config()).unwrap().pattern;
        let counts = pattern.counts_by_index();
        assert_eq!(counts, vec![0, 4, 1]);
        let maxima = pattern.filter_indices(&IndexSet::maxima(2));
        assert_eq!(maxima.len(), 1);
        let all = pattern.filter_indices(&IndexSet::all(2));
        assert_eq!(all.len(), pattern.len());
        // disjoint sets partition the full filter
        let saddles = pattern.filter_indices(&IndexSet::new(2, [1]));
        let extrema = pattern.filter_indices(&IndexSet::extrema(2));
        assert_eq!(saddles.len() + extrema.len(), pattern.len());
        // empty pattern tallies to zeros
        let empty = PointPattern { window, points: vec![] };
        assert_eq!(empty.counts_by_index(), vec![0, 0, 0]);
    }

    #[test]
    fn extraction_is_deterministic_and_consistent() {
        let model = CovarianceModel::gaussian_limit(1, 0.15);
        let window = crate::fieldsim::Window::unit(1);
        let field = simulate_spectral(&model, 512, &window, 99);
        let config = ExtractionConfig::for_model(&model, &window).unwrap();
        let r1 = extract(&field, &window, &config).unwrap();
        let r2 = extract(&field, &window, &config).unwrap();
        assert_eq!(r1.pattern.len(), r2.pattern.len());
        for (a, b) in r1.pattern.points.iter().zip(&r2.pattern.points) {
            assert_eq!(a.location, b.location);
            assert_eq!(a.index, b.index);
        }
        // every reported point satisfies the acceptance thresholds
        for p in &r1.pattern.points {
            assert!(p.residual < config.newton_tol);
            assert!(p.det_hessian.abs() > config.morse_tol);
        }
        // d = 1: indices alternate along the line (min / max interleave)
        let mut sorted = r1.pattern.points.clone();
        sorted.sort_by(|a, b| a.location[0].partial_cmp(&b.location[0]).unwrap());
        for w in sorted.windows(2) {
            assert_ne!(
                w[0].index, w[1].index,
                "consecutive critical points with equal index"
            );
        }
        let counts = r1.pattern.counts_by_index();
        assert!(counts[0].abs_diff(counts[1]) <= 1);
    }

    #[test]
    fn negation_flips_indices() {
        struct Negated<'a, F: SmoothField>(&'a F);
        impl<F: SmoothField> SmoothField for Negated<'_, F> {
            fn dim(&self) -> usize {
                self.0.dim()
            }
            fn window(&self) -> &crate::fieldsim::Window {
                self.0.window()
            }
            fn value(&self, t: &[f64]) -> f64 {
                -self.0.value(t)
            }
            fn gradient(&self, t: &[f64], out: &mut [f64]) {
                self.0.gradient(t, out);
                out.iter_mut().for_each(|x| *x = -*x);
            }
            fn hessian(&self, t: &[f64], out: &mut [f64]) {
                self.0.hessian(t, out);
                out.iter_mut().for_each(|x| *x = -*x);
            }
        }

        let model = CovarianceModel::gaussian_limit(2, 0.35);
        let window = crate::fieldsim::Window::unit(2);
        let field = simulate_spectral(&model, 512, &window, 5);
        let config = ExtractionConfig::for_model(&model, &window).unwrap();
        let pos = extract(&field, &window, &config).unwrap().pattern;
        let neg = extract(&Negated(&field), &window, &config).unwrap().pattern;
        assert_eq!(pos.len(), neg.len());
        let mut matched = 0;
        for p in &pos.points {
            if let Some(q) = neg
                .points
                .iter()
                .find(|q| dist(&q.location, &p.location) < 1e-6)
            {
                assert_eq!(q.index, 2 - p.index, "negation must flip the index");
                matched += 1;
            }
        }
        assert_eq!(matched, pos.len());
    }

    #[test]
    fn mean_count_matches_kac_rice() {
        // ensemble mean number of critical points ~ rho * |W|
        let l_all = IndexSet::all(1);
        let model =
            model_with_intensity(Family::GaussianLimit, 1, None, &l_all, 20.0).unwrap();
        let window = crate::fieldsim::Window::unit(1);
        let config = ExtractionConfig::for_model(&model, &window).unwrap();
        let n_rep = 200;
        let mut total = 0usize;
        let mut total_sq = 0.0;
        for rep in 0..n_rep {
            let field = simulate_spectral(&model, 1024, &window, 3_000 + rep);
            let n = extract(&field, &window, &config).unwrap().pattern.len();
            total += n;
            total_sq += (n * n) as f64;
        }
        let mean = total as f64 / n_rep as f64;
        let var = total_sq / n_rep as f64 - mean * mean;
        let se = (var / n_rep as f64).sqrt();
        assert!(
            (mean - 20.0).abs() < 3.0 * se + 0.2,
            "mean count {mean} vs 20 (se {se})"
        );
    }

    #[test]
    fn pattern_csv_round_trip() {
        let field = CosineTestField::new(
            2,
            1.0,
            crate::fieldsim::Window::new(vec![0.1, 0.1], vec![0.9, 0.9]),
        );
        let window = field.window().clone();
        let pattern = extract(&field, &window, &cosine_config()).unwrap().pattern;
        let csv = pattern.to_csv();
        let back = PointPattern::from_csv(&csv, window).unwrap();
        assert_eq!(back.len(), pattern.len());
        for (a, b) in back.points.iter().zip(&pattern.points) {
            assert_eq!(a.location, b.location);
            assert_eq!(a.index, b.index);
            assert_eq!(a.det_hessian, b.det_hessian);
        }
    }
}
