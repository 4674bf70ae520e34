//! Cross-module consistency oracles: the joint derivative law against
//! empirical covariances of simulated fields, the convergence of
//! lattice-smoothed re-simulations of a fixed realization, and the
//! replication-based variance identities of linear statistics.

use critpp_core::covmodels::CovarianceModel;
use critpp_core::critpoints::{extract, ExtractionConfig};
use critpp_core::fieldsim::{
    default_bandwidth, simulate_spectral, smooth_lattice, LatticeSimulation, SmoothField,
    Window,
};
use critpp_core::gaussjoint::{assemble_joint, deriv_block_dim, halfvec_len};
use critpp_core::kacrice::{model_with_intensity, IndexSet};
use critpp_core::stats::{asymptotic_variance_phi1, linear_statistic};
use critpp_core::Family;

/// The assembled joint covariance of (gradients, Hessians) at two points
/// must match the empirical covariance of spectral-method simulations.
#[test]
fn joint_law_matches_simulated_derivatives() {
    let model = CovarianceModel::gaussian_limit(2, 1.0);
    let points = vec![vec![0.3, 0.4], vec![1.0, 0.4]];
    let joint = assemble_joint(&model, &points).unwrap();
    let d = 2;
    let h = halfvec_len(d);
    let dim = points.len() * deriv_block_dim(d);

    let window = Window::new(vec![0.0, 0.0], vec![2.0, 2.0]);
    let n_rep = 100_000;
    let mut acc = vec![0.0; dim * dim];
    let mut acc2 = vec![0.0; dim * dim];
    let mut stacked = vec![0.0; dim];
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; h];
    for rep in 0..n_rep {
        // moderate term count: the covariance is exact for any count
        let field = simulate_spectral(&model, 32, &window, 90_000 + rep as u64);
        for (p, t) in points.iter().enumerate() {
            field.eval_all(t, &mut grad, &mut hess);
            stacked[p * d..(p + 1) * d].copy_from_slice(&grad);
            let off = points.len() * d + p * h;
            stacked[off..off + h].copy_from_slice(&hess);
        }
        for i in 0..dim {
            for j in 0..dim {
                let v = stacked[i] * stacked[j];
                acc[i * dim + j] += v;
                acc2[i * dim + j] += v * v;
            }
        }
    }
    for i in 0..dim {
        for j in 0..dim {
            let mean = acc[i * dim + j] / n_rep as f64;
            let var = acc2[i * dim + j] / n_rep as f64 - mean * mean;
            let se = (var / n_rep as f64).sqrt();
            let want = joint.cov()[(i, j)];
            assert!(
                (mean - want).abs() <= 4.0 * se + 1e-12,
                "cov[{i},{j}]: empirical {mean} vs assembled {want} (se {se})"
            );
        }
    }
}

/// Re-simulating a fixed smooth realization on finer lattices and
/// smoothing must reproduce its critical points: counts stabilize and
/// matched displacements decrease.
#[test]
fn lattice_resimulation_recovers_critical_points() {
    let model = CovarianceModel::gaussian_limit(1, 0.8);
    let side = 8.0;
    let window = Window::new(vec![0.0], vec![side]);
    // the fixed "truth": one spectral realization with many terms
    let truth = simulate_spectral(&model, 2048, &window, 123);

    // common extraction region: eroded by the coarsest bandwidth
    let ns = [32usize, 64, 128];
    let xi_max = default_bandwidth(ns[0], 1);
    let inner = window.eroded(xi_max * 1.05).unwrap();
    let config = ExtractionConfig::for_model(&model, &inner)
        .unwrap()
        .with_seeds_per_axis(64);

    let reference = extract(&truth, &inner, &config).unwrap().pattern;
    assert!(
        reference.len() >= 3,
        "reference realization should have a few critical points"
    );

    let mut max_disp = Vec::new();
    for &n in &ns {
        let m = (side * n as f64) as usize;
        let values: Vec<f64> = (0..m)
            .map(|k| truth.value(&[(k as f64 + 0.5) / n as f64]))
            .collect();
        let sim =
            LatticeSimulation::from_grid_values(model, window.clone(), n, values).unwrap();
        let smoothed = smooth_lattice(sim, default_bandwidth(n, 1)).unwrap();
        let pattern = extract(&smoothed, &inner, &config).unwrap().pattern;
        // the count stabilizes once the bandwidth resolves the field
        if n >= 64 {
            assert_eq!(
                pattern.len(),
                reference.len(),
                "count must stabilize at n = {n}"
            );
            // indices agree for matched points
            for p in &reference.points {
                let matched = pattern
                    .points
                    .iter()
                    .min_by(|a, b| {
                        (a.location[0] - p.location[0])
                            .abs()
                            .partial_cmp(&(b.location[0] - p.location[0]).abs())
                            .unwrap()
                    })
                    .unwrap();
                assert_eq!(matched.index, p.index);
            }
        }
        // matching distance: worst displacement of a reference point
        let mut worst = 0.0f64;
        for p in &reference.points {
            let best = pattern
                .points
                .iter()
                .map(|q| (q.location[0] - p.location[0]).abs())
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(best);
        }
        max_disp.push(worst);
    }
    assert!(
        max_disp[0] > max_disp[1] && max_disp[1] > max_disp[2],
        "matched displacement should decrease: {max_disp:?}"
    );
}

/// Variance-ratio identity of linear statistics: restricting the counting
/// statistic to the left half-window halves the limiting variance.
#[test]
fn linear_statistic_variance_ratio() {
    let l_set = IndexSet::all(1);
    let model = model_with_intensity(Family::GaussianLimit, 1, None, &l_set, 2.0).unwrap();
    let n = 14usize;
    let window = Window::centered(1, n as f64);
    let config = ExtractionConfig::for_model(&model, &window).unwrap();
    let n_rep = 400;
    let mut counts = Vec::with_capacity(n_rep);
    let mut halves = Vec::with_capacity(n_rep);
    for rep in 0..n_rep {
        let field = simulate_spectral(&model, 1024, &window, 40_000 + rep as u64);
        let pattern = extract(&field, &window, &config).unwrap().pattern;
        counts.push(pattern.len() as f64);
        halves.push(linear_statistic(&pattern, |t| f64::from(t[0] < 0.0)));
    }
    let var = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let ratio = var(&halves) / var(&counts);
    assert!(
        (ratio - 0.5).abs() < 0.1,
        "variance ratio {ratio} should approach 1/2"
    );
}

/// Parseval monotonicity: the truncated Hermite-series variance of the
/// counting statistic stays below the empirical scaled variance.
#[test]
fn truncated_series_variance_below_empirical() {
    let l_set = IndexSet::all(1);
    let model = model_with_intensity(Family::GaussianLimit, 1, None, &l_set, 2.0).unwrap();
    let trunc = asymptotic_variance_phi1(&model, &l_set, 4, 6.0 * model.phi(), 150_000, 5)
        .unwrap();
    assert!(trunc.value > 0.0, "truncated variance must be positive");
    // chaos contributions must shrink
    assert!(trunc.per_q.len() == 2);
    assert!(
        trunc.per_q[1].1.abs() < trunc.per_q[0].1.abs(),
        "chaos contributions should decrease: {:?}",
        trunc.per_q
    );

    let n = 16usize;
    let window = Window::centered(1, n as f64);
    let config = ExtractionConfig::for_model(&model, &window).unwrap();
    let n_rep = 300;
    let mut counts = Vec::with_capacity(n_rep);
    for rep in 0..n_rep {
        let field = simulate_spectral(&model, 1024, &window, 61_000 + rep as u64);
        let pattern = extract(&field, &window, &config).unwrap().pattern;
        counts.push(pattern.len() as f64);
    }
    let mean = counts.iter().sum::<f64>() / n_rep as f64;
    let var =
        counts.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n_rep - 1) as f64;
    let scaled = var / n as f64;
    // se of a variance estimate ~ var sqrt(2/(reps-1))
    let se = scaled * (2.0 / (n_rep as f64 - 1.0)).sqrt();
    assert!(
        trunc.value <= scaled + 3.0 * se,
        "truncated series {} should not exceed empirical {} (se {})",
        trunc.value,
        scaled,
        se
    );
}
