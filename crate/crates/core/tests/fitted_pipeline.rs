//! Fit a small signature model to rough Bergomi paths, then reduce and
//! simulate it through the public API.

use faer::Mat;
use sigred_core::balanced::{balance_pair, deterministic_output, reduce, reduced_deterministic_output, DEFAULT_RANK_TOL};
use sigred_core::gramians::GramianPair;
use sigred_core::market::{fit_signature_model, simulate_rough_bergomi, FitConfig, RoughBergomiConfig};
use sigred_core::pricing::{terminal_outputs, SimulationGrid};
use sigred_core::{LinearSde, SignatureSde};

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn fitted_rough_bergomi_model_reduces_and_simulates() {
    let model = RoughBergomiConfig::default();
    let batch = simulate_rough_bergomi(&model, 1.0, 64, 1500, 11).unwrap();
    let mut cfg = FitConfig::new(3, 3);
    cfg.stride = 4;
    let fit = fit_signature_model(&batch, &cfg).unwrap();
    assert!(fit.validation_relative_rmse() < 0.1, "{}", fit.validation_relative_rmse());

    let l = Mat::from_fn(1, fit.coefficients().len(), |_, j| fit.coefficients()[j]);
    let sys = SignatureSde::assemble(3, 3, model.noise_covariance().unwrap(), l, None).unwrap();
    let gp = GramianPair::compute(&sys, 1.0).unwrap();
    let bal = balance_pair(&gp, DEFAULT_RANK_TOL).unwrap();
    let r = bal.rank();
    assert!(r < sys.n());
    let red = reduce(&sys, &bal, r).unwrap();

    // E[S_T] two ways: Monte Carlo of the linear SDE and L e^{TA} z
    let exact = deterministic_output(&sys, 1.0)[0];
    let grid = SimulationGrid::new(1.0, 128, 20000, 3).unwrap();
    let out = terminal_outputs(&[&sys as &dyn LinearSde, &red], &grid).unwrap();
    let (mean, se) = mean_se(&out[0]);
    assert!((mean - exact).abs() < 4.0 * se + 1e-3 * exact.abs(), "MC {mean} ± {se} vs {exact}");

    // the reduced system at the rank follows the full one path by path
    let worst = out[0].iter().zip(&out[1]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-8, "{worst}");
    assert!((reduced_deterministic_output(&red, 1.0)[0] - exact).abs() < 1e-10);

    // the fitted price is close to a martingale started at s0
    assert!((exact - model.s0).abs() < 0.05, "{exact}");
}
