use faer::Mat;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{check_correlation, check_grid, path_rng, PathBatch, SimulatedPath};
use crate::error::{Error, Result};
use crate::gramians::gauss_legendre;
use crate::linalg;
use crate::system::NoiseCovariance;

/// Largest grid for the exact joint covariance.
pub const MAX_ROUGH_STEPS: usize = 2048;

/// Rough Bergomi model with a flat forward variance curve.
#[derive(Clone, Debug, PartialEq)]
pub struct RoughBergomiConfig {
    pub hurst: f64,
    pub eta: f64,
    pub rho: f64,
    pub s0: f64,
    pub xi0: f64,
}

impl Default for RoughBergomiConfig {
    fn default() -> Self {
        RoughBergomiConfig { hurst: 0.3, eta: 2.3, rho: -0.9, s0: 1.0, xi0: 0.04 }
    }
}

impl RoughBergomiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(Error::InvalidArgument(format!("Hurst index {} outside (0, 1)", self.hurst)));
        }
        if !(self.xi0 > 0.0) || !(self.s0 > 0.0) {
            return Err(Error::InvalidArgument("xi0 and s0 must be positive".into()));
        }
        if !self.eta.is_finite() {
            return Err(Error::InvalidArgument("eta must be finite".into()));
        }
        check_correlation(2, &self.correlation())
    }

    /// Correlation of `(Z, W)`, row-major.
    pub fn correlation(&self) -> [f64; 4] {
        [1.0, self.rho, self.rho, 1.0]
    }

    /// Covariance of the signature letters 2, 3 = `Z, W`.
    pub fn noise_covariance(&self) -> Result<NoiseCovariance> {
        NoiseCovariance::from_correlation(2, self.correlation().to_vec())
    }
}

/// `Cov(Ŵ_t, Ŵ_s)` for `Ŵ_t = √(2H) ∫_0^t (t−u)^{H−½} dW_u`.
pub fn rl_covariance(t: f64, s: f64, hurst: f64) -> f64 {
    let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
    if lo <= 0.0 {
        return 0.0;
    }
    if lo == hi {
        return lo.powf(2.0 * hurst);
    }
    // with w = y^{H+½}, y = lo − u, the integrand loses its endpoint singularity
    let a = hurst + 0.5;
    let gap = hi - lo;
    let upper = lo.powf(a);
    let f = |w: f64| (gap + w.powf(1.0 / a)).powf(hurst - 0.5);
    let (x, wts) = gauss_legendre(10);
    let panel = |lo_w: f64, hi_w: f64| {
        let (mid, half) = (0.5 * (lo_w + hi_w), 0.5 * (hi_w - lo_w));
        x.iter().zip(&wts).map(|(x, w)| w * half * f(mid + half * x)).sum::<f64>()
    };
    let mut total = 0.0;
    let mut right = upper;
    // halve towards w = 0 until the remaining panel is smooth at the scale of the gap
    for _ in 0..60 {
        if right.powf(1.0 / a) < 1e-8 * gap {
            break;
        }
        let left = 0.5 * right;
        total += panel(left, right);
        right = left;
    }
    total += panel(0.0, right);
    2.0 * hurst / a * total
}

/// `Cov(Ŵ_t, W_b − W_a)` for `a < b`.
pub fn rl_increment_covariance(t: f64, a: f64, b: f64, hurst: f64) -> f64 {
    if t <= a {
        return 0.0;
    }
    let e = hurst + 0.5;
    (2.0 * hurst).sqrt() / e * ((t - a).powf(e) - (t - b.min(t)).powf(e))
}

/// Joint covariance of `(ΔW_1..ΔW_M, Ŵ_{t_1}..Ŵ_{t_M})` on a uniform grid.
fn joint_covariance(horizon: f64, steps: usize, hurst: f64) -> Mat<f64> {
    let h = horizon / steps as f64;
    let node = |k: usize| (k + 1) as f64 * h;
    let mut cov = Mat::<f64>::zeros(2 * steps, 2 * steps);
    for j in 0..steps {
        cov[(j, j)] = h;
    }
    for k in 0..steps {
        for j in 0..steps {
            let c = rl_increment_covariance(node(k), j as f64 * h, (j + 1) as f64 * h, hurst);
            cov[(steps + k, j)] = c;
            cov[(j, steps + k)] = c;
        }
        for l in 0..=k {
            let c = rl_covariance(node(k), node(l), hurst);
            cov[(steps + k, steps + l)] = c;
            cov[(steps + l, steps + k)] = c;
        }
    }
    cov
}

/// Rough Bergomi paths from an exact factorisation of the joint Gaussian
/// covariance, with log-Euler spot.
pub fn simulate_rough_bergomi(
    cfg: &RoughBergomiConfig,
    horizon: f64,
    steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathBatch> {
    cfg.validate()?;
    check_grid(horizon, steps, n_paths)?;
    if steps > MAX_ROUGH_STEPS {
        return Err(Error::InvalidArgument(format!(
            "{steps} steps exceed the exact-covariance limit of {MAX_ROUGH_STEPS}"
        )));
    }
    let h = horizon / steps as f64;
    let (factor, clipped) = linalg::gaussian_factor(&joint_covariance(horizon, steps, cfg.hurst))?;
    if clipped {
        log::warn!("rough Bergomi covariance is numerically indefinite; negative eigenvalues clipped");
    }
    let dim = 2 * steps;
    let perp = (1.0 - cfg.rho * cfg.rho).max(0.0).sqrt();
    let compensator: Vec<f64> = (1..=steps)
        .map(|k| 0.5 * cfg.eta * cfg.eta * (k as f64 * h).powf(2.0 * cfg.hurst))
        .collect();

    let paths = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(seed, path);
            let xi: Vec<f64> = (0..dim + steps).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut g = vec![0.0; dim];
            for (j, &x) in xi[..dim].iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let start = if clipped { 0 } else { j };
                let col = factor.col(j).try_as_col_major().expect("contiguous").as_slice();
                for i in start..dim {
                    g[i] += col[i] * x;
                }
            }
            let (dw, rl) = g.split_at(steps);
            let mut spot = Vec::with_capacity(steps + 1);
            let mut variance = Vec::with_capacity(steps + 1);
            let mut increments = Vec::with_capacity(2 * steps);
            let mut log_s = cfg.s0.ln();
            spot.push(cfg.s0);
            variance.push(cfg.xi0);
            for step in 0..steps {
                let dz = cfg.rho * dw[step] + perp * h.sqrt() * xi[dim + step];
                increments.push(dz);
                increments.push(dw[step]);
                let v = variance[step];
                log_s += -0.5 * v * h + v.sqrt() * dz;
                let next_v = cfg.xi0 * (cfg.eta * rl[step] - compensator[step]).exp();
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
    PathBatch::from_paths(steps, horizon, 2, paths)
}
