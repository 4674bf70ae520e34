use critpp_core::critpoints::{extract, ExtractionConfig};
use critpp_core::fieldsim::{simulate_spectral, Window};
use critpp_core::kacrice::{model_with_intensity, pcf_curve, IndexSet};
use critpp_core::quad::adaptive_simpson;
use critpp_core::Family;

fn main() {
    let l = IndexSet::all(2);
    let model = model_with_intensity(Family::GaussianLimit, 2, None, &l, 100.0).unwrap();
    let window = Window::unit(2);

    // dense pcf for the prediction
    let grid: Vec<f64> = (0..40).map(|i| 0.004 + (0.08 - 0.004) * i as f64 / 39.0).collect();
    let dense = pcf_curve(&model, &l, &l, &grid, 1_000_000, 0xAB).unwrap();
    let interp = dense.interpolator();
    // expected unordered pairs with both ends in W: rho^2/2 * 2pi int z g(z) w(z) dz,
    // w(z) = 1 - 4z/pi + z^2/pi for the unit square
    let pred = 100.0f64 * 100.0 / 2.0
        * 2.0
        * std::f64::consts::PI
        * adaptive_simpson(
            &|z: f64| {
                let w = 1.0 - 4.0 * z / std::f64::consts::PI
                    + z * z / std::f64::consts::PI;
                z * interp.eval(z) * w
            },
            0.005,
            0.05,
            1e-9,
        );
    println!("edge-exact prediction of unordered close pairs = {pred:.3}");

    let base = ExtractionConfig::for_model(&model, &window).unwrap();
    let config = base.with_seeds_per_axis(40);
    for n_terms in [4096usize, 16384] {
        let n_rep = 24;
        let mut total = 0.0;
        let mut close = 0.0;
        for rep in 0..n_rep {
            let field = simulate_spectral(&model, n_terms, &window, 0xE0_0000 + rep);
            let p = extract(&field, &window, &config).unwrap().pattern;
            total += p.len() as f64;
            for i in 0..p.len() {
                for j in (i + 1)..p.len() {
                    let dx = p.points[i].location[0] - p.points[j].location[0];
                    let dy = p.points[i].location[1] - p.points[j].location[1];
                    let dist = (dx * dx + dy * dy).sqrt();
                    if (0.005..=0.05).contains(&dist) {
                        close += 1.0;
                    }
                }
            }
        }
        println!(
            "n_terms {n_terms}: mean count {:.2}, close pairs {:.2}",
            total / n_rep as f64,
            close / n_rep as f64
        );
    }
}
