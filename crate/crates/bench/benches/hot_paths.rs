use criterion::{black_box, criterion_group, criterion_main, Criterion};
use critpp_core::covmodels::CovarianceModel;
use critpp_core::fieldsim::{simulate_spectral, SmoothField, Window};
use critpp_core::gaussjoint::sample_goe_eigenvalues;
use critpp_core::kacrice::{pcf_mc, IndexSet, TwoPointConditional};
use critpp_core::mc::stream_rng;
use critpp_core::special::{bessel_j, bessel_k};

fn bench_bessel(c: &mut Criterion) {
    let mut group = c.benchmark_group("bessel");
    group.bench_function("k_series_branch", |b| {
        b.iter(|| bessel_k(black_box(3.5), black_box(1.3)))
    });
    group.bench_function("k_cf_branch", |b| {
        b.iter(|| bessel_k(black_box(3.5), black_box(7.0)))
    });
    group.bench_function("j_series_branch", |b| {
        b.iter(|| bessel_j(black_box(2.0), black_box(6.0)))
    });
    group.bench_function("j_asymptotic_branch", |b| {
        b.iter(|| bessel_j(black_box(2.0), black_box(40.0)))
    });
    group.finish();
}

fn bench_covariance(c: &mut Criterion) {
    let matern = CovarianceModel::matern(2, 3.5, 0.7);
    let mut group = c.benchmark_group("covmodel");
    group.bench_function("matern_c2_deriv", |b| {
        b.iter(|| matern.c2_deriv(black_box(2), black_box(0.4)).unwrap())
    });
    group.bench_function("matern_partial_c_order4", |b| {
        b.iter(|| matern.partial_c(black_box(&[2, 2]), black_box(&[0.3, 0.2])).unwrap())
    });
    group.finish();
}

fn bench_goe(c: &mut Criterion) {
    let mut group = c.benchmark_group("goe");
    for m in [2usize, 3, 5] {
        group.bench_function(format!("eigenvalues_m{m}"), |b| {
            let mut rng = stream_rng(1, "bench-goe", 0);
            b.iter(|| sample_goe_eigenvalues(black_box(m), &mut rng))
        });
    }
    group.finish();
}

fn bench_pcf(c: &mut Criterion) {
    let model = CovarianceModel::gaussian_limit(2, 1.0);
    let l_all = IndexSet::all(2);
    let mut group = c.benchmark_group("pcf");
    group.bench_function("prepare_conditional", |b| {
        b.iter(|| TwoPointConditional::prepare(black_box(&model), black_box(0.7)).unwrap())
    });
    group.sample_size(10);
    group.bench_function("pcf_mc_100k_d2", |b| {
        b.iter(|| pcf_mc(&model, &l_all, &l_all, black_box(0.7), 100_000, 3).unwrap())
    });
    group.finish();
}

fn bench_field_eval(c: &mut Criterion) {
    let model = CovarianceModel::gaussian_limit(2, 0.1);
    let window = Window::unit(2);
    let field = simulate_spectral(&model, 4096, &window, 7);
    let mut grad = [0.0; 2];
    let mut hess = [0.0; 3];
    c.bench_function("spectral_eval_all_4096_terms", |b| {
        b.iter(|| field.eval_all(black_box(&[0.4, 0.6]), &mut grad, &mut hess))
    });
}

criterion_group!(
    benches,
    bench_bessel,
    bench_covariance,
    bench_goe,
    bench_pcf,
    bench_field_eval
);
criterion_main!(benches);
