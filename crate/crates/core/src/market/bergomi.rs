use faer::Mat;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{check_correlation, check_grid, path_rng, PathBatch, SimulatedPath};
use crate::error::{Error, Result};
use crate::linalg;
use crate::system::NoiseCovariance;

/// Two-factor Bergomi model with a flat initial forward variance curve.
#[derive(Clone, Debug, PartialEq)]
pub struct BergomiConfig {
    pub omega: f64,
    pub k1: f64,
    pub k2: f64,
    /// Weight of the first factor; the second gets `1 − theta1`.
    pub theta1: f64,
    pub rho12: f64,
    pub rho_s1: f64,
    pub rho_s2: f64,
    pub s0: f64,
    pub xi0: f64,
}

impl Default for BergomiConfig {
    fn default() -> Self {
        BergomiConfig {
            omega: 3.0,
            k1: 2.63,
            k2: 0.42,
            theta1: 0.69,
            rho12: 0.7,
            rho_s1: -0.9,
            rho_s2: -0.9,
            s0: 1.0,
            xi0: 0.04,
        }
    }
}

impl BergomiConfig {
    /// Correlation of `(Z, W¹, W²)`, row-major.
    pub fn correlation(&self) -> [f64; 9] {
        [
            1.0,
            self.rho_s1,
            self.rho_s2,
            self.rho_s1,
            1.0,
            self.rho12,
            self.rho_s2,
            self.rho12,
            1.0,
        ]
    }

    /// Covariance of the signature letters 2, 3, 4 = `Z, W¹, W²`.
    pub fn noise_covariance(&self) -> Result<NoiseCovariance> {
        NoiseCovariance::from_correlation(3, self.correlation().to_vec())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.xi0 > 0.0) || !(self.s0 > 0.0) {
            return Err(Error::InvalidArgument("xi0 and s0 must be positive".into()));
        }
        if !(self.k1 > 0.0) || !(self.k2 > 0.0) {
            return Err(Error::InvalidArgument("mean-reversion rates must be positive".into()));
        }
        if !self.omega.is_finite() || self.omega < 0.0 || !self.theta1.is_finite() {
            return Err(Error::InvalidArgument("omega must be nonnegative and theta1 finite".into()));
        }
        check_correlation(3, &self.correlation())
    }

    fn weights(&self) -> [f64; 2] {
        [self.theta1, 1.0 - self.theta1]
    }

    fn rates(&self) -> [f64; 2] {
        [self.k1, self.k2]
    }

    /// Normalisation `ω / √(Σ w_i w_j ρ_ij)`.
    pub fn alpha(&self) -> f64 {
        let w = self.weights();
        let norm = w[0] * w[0] + w[1] * w[1] + 2.0 * w[0] * w[1] * self.rho12;
        if self.omega == 0.0 {
            0.0
        } else {
            self.omega / norm.sqrt()
        }
    }

    /// `Var[Σ w_i Y_i(t)]` for the OU factors started at zero.
    pub fn factor_variance(&self, t: f64) -> f64 {
        let (w, k) = (self.weights(), self.rates());
        let rho = [[1.0, self.rho12], [self.rho12, 1.0]];
        let mut out = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let kk = k[i] + k[j];
                out += w[i] * w[j] * rho[i][j] * (1.0 - (-kk * t).exp()) / kk;
            }
        }
        out
    }

    /// Covariance of `(ΔZ, ΔW¹, ΔW², I¹, I²)` over one step `h`, where
    /// `I^i = ∫ e^{−k_i(t+h−s)} dW^i_s` is the OU innovation.
    fn step_covariance(&self, h: f64) -> Mat<f64> {
        let corr = self.correlation();
        let c = |a: usize, b: usize| corr[a * 3 + b];
        let k = self.rates();
        Mat::from_fn(5, 5, |a, b| match (a < 3, b < 3) {
            (true, true) => c(a, b) * h,
            (true, false) => c(a, b - 2) * (1.0 - (-k[b - 3] * h).exp()) / k[b - 3],
            (false, true) => c(a - 2, b) * (1.0 - (-k[a - 3] * h).exp()) / k[a - 3],
            (false, false) => {
                let kk = k[a - 3] + k[b - 3];
                c(a - 2, b - 2) * (1.0 - (-kk * h).exp()) / kk
            }
        })
    }
}

/// Bergomi paths with exact OU factor updates and log-Euler spot.
pub fn simulate_bergomi(cfg: &BergomiConfig, horizon: f64, steps: usize, n_paths: usize, seed: u64) -> Result<PathBatch> {
    cfg.validate()?;
    check_grid(horizon, steps, n_paths)?;
    let h = horizon / steps as f64;
    let (factor, clipped) = linalg::gaussian_factor(&cfg.step_covariance(h))?;
    if clipped {
        log::warn!("Bergomi step covariance is singular; using a clipped eigen-factor");
    }
    let decay = cfg.rates().map(|k| (-k * h).exp());
    let w = cfg.weights();
    let alpha = cfg.alpha();
    let compensator: Vec<f64> = (0..=steps).map(|s| 0.5 * alpha * alpha * cfg.factor_variance(s as f64 * h)).collect();

    let paths = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(seed, path);
            let mut spot = Vec::with_capacity(steps + 1);
            let mut variance = Vec::with_capacity(steps + 1);
            let mut increments = Vec::with_capacity(3 * steps);
            let mut y = [0.0f64; 2];
            let mut log_s = cfg.s0.ln();
            spot.push(cfg.s0);
            variance.push(cfg.xi0);
            let mut xi = [0.0f64; 5];
            let mut g = [0.0f64; 5];
            for step in 0..steps {
                let v = variance[step];
                for x in xi.iter_mut() {
                    *x = StandardNormal.sample(&mut rng);
                }
                for (i, gi) in g.iter_mut().enumerate() {
                    let width = if clipped { 5 } else { i + 1 };
                    *gi = (0..width).map(|j| factor[(i, j)] * xi[j]).sum();
                }
                increments.extend_from_slice(&g[..3]);
                log_s += -0.5 * v * h + v.sqrt() * g[0];
                y[0] = decay[0] * y[0] + g[3];
                y[1] = decay[1] * y[1] + g[4];
                let next_v = cfg.xi0 * (alpha * (w[0] * y[0] + w[1] * y[1]) - compensator[step + 1]).exp();
                let s = log_s.exp();
                if !s.is_finite() || !next_v.is_finite() {
                    return Err(Error::NonFinite { path, step: step + 1 });
                }
                spot.push(s);
                variance.push(next_v);
            }
            Ok(SimulatedPath { spot, variance, increments })
        })
        .collect::<Result<Vec<_>>>()?;
    PathBatch::from_paths(steps, horizon, 3, paths)
}

#[cfg(test)]
mod tests {
    use super::super::test_support::mean_se;
    use super::*;
    use crate::pricing::bs_call;

    fn call_prices(spots: &[f64], strike: f64) -> Vec<f64> {
        spots.iter().map(|s| (s - strike).max(0.0)).collect()
    }

    #[test]
    fn table_defaults_are_valid() {
        let cfg = BergomiConfig::default();
        assert_eq!((cfg.omega, cfg.k1, cfg.k2, cfg.theta1), (3.0, 2.63, 0.42, 0.69));
        assert_eq!((cfg.rho12, cfg.rho_s1, cfg.rho_s2, cfg.s0, cfg.xi0), (0.7, -0.9, -0.9, 1.0, 0.04));
        cfg.validate().unwrap();
        let bad = BergomiConfig { rho_s1: -0.9, rho_s2: 0.9, rho12: 0.7, ..cfg.clone() };
        assert!(bad.validate().is_err());
        assert!(BergomiConfig { xi0: 0.0, ..cfg }.validate().is_err());
    }

    #[test]
    fn step_covariance_matches_quadrature() {
        let cfg = BergomiConfig::default();
        let h = 0.3;
        let cov = cfg.step_covariance(h);
        // midpoint rule for ∫_0^h e^{-k(h-s)} ds and ∫_0^h e^{-(k1+k2)(h-s)} ds
        let n = 200_000;
        let ds = h / n as f64;
        let (mut i1, mut i12) = (0.0, 0.0);
        for s in 0..n {
            let u = h - (s as f64 + 0.5) * ds;
            i1 += (-cfg.k1 * u).exp() * ds;
            i12 += (-(cfg.k1 + cfg.k2) * u).exp() * ds;
        }
        assert!((cov[(0, 3)] - cfg.rho_s1 * i1).abs() < 1e-10);
        assert!((cov[(4, 3)] - cfg.rho12 * i12).abs() < 1e-10);
        assert!((cov[(1, 3)] - i1).abs() < 1e-10);
        assert_eq!(cov[(2, 2)], h);
        assert_eq!(linalg::asymmetry(&cov), 0.0);
    }

    #[test]
    fn zero_vol_of_vol_is_black_scholes() {
        let cfg = BergomiConfig { omega: 0.0, ..Default::default() };
        let batch = simulate_bergomi(&cfg, 1.0, 16, 100_000, 17).unwrap();
        assert!(batch.variance_data().iter().all(|&v| v == cfg.xi0));
        let payoff = call_prices(&batch.terminal_spots(), 1.0);
        let (price, se) = mean_se(&payoff);
        let exact = bs_call(1.0, 1.0, 1.0, 0.2);
        assert!((price - exact).abs() < 3.0 * se, "{price} vs {exact} ± {se}");
    }

    #[test]
    fn martingale_and_flat_forward_variance() {
        let cfg = BergomiConfig::default();
        let batch = simulate_bergomi(&cfg, 1.0, 64, 20_000, 3).unwrap();
        let (mean, se) = mean_se(&batch.terminal_spots());
        assert!((mean - cfg.s0).abs() < 3.0 * se, "{mean} ± {se}");
        for step in [1, 16, 40, 64] {
            let v: Vec<f64> = (0..batch.n_paths()).map(|p| batch.variance(p)[step]).collect();
            let (mean, se) = mean_se(&v);
            assert!((mean - cfg.xi0).abs() < 3.0 * se, "step {step}: {mean} ± {se}");
        }
    }

    #[test]
    fn increments_have_the_driver_covariance() {
        let cfg = BergomiConfig::default();
        let batch = simulate_bergomi(&cfg, 1.0, 8, 20_000, 5).unwrap();
        let h = batch.dt();
        let pairs: Vec<(f64, f64)> = (0..batch.n_paths()).map(|p| {
            let inc = batch.increment(p, 3);
            (inc[0], inc[2])
        }).collect();
        let prod: Vec<f64> = pairs.iter().map(|(a, b)| a * b / h).collect();
        let (mean, se) = mean_se(&prod);
        assert!((mean - cfg.rho_s2).abs() < 4.0 * se);
    }

    #[test]
    fn reproducible_and_thread_independent() {
        let cfg = BergomiConfig::default();
        let a = simulate_bergomi(&cfg, 0.5, 10, 50, 99).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| simulate_bergomi(&cfg, 0.5, 10, 50, 99).unwrap());
        assert_eq!(a, b);
        let c = simulate_bergomi(&cfg, 0.5, 10, 50, 100).unwrap();
        assert_ne!(a, c);
        assert!(simulate_bergomi(&cfg, 0.5, 0, 50, 1).is_err());
    }
}
