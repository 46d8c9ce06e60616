//! Ground-truth stochastic volatility simulators and the regression that
//! turns their paths into a signature price model.

mod bergomi;
mod fit;
mod rough_bergomi;

pub use bergomi::{simulate_bergomi, BergomiConfig};
pub use fit::{fit_signature_model, ridge_sweep, FitConfig, FittedSignatureModel, SweepPoint};
pub use rough_bergomi::{rl_covariance, rl_increment_covariance, simulate_rough_bergomi, RoughBergomiConfig, MAX_ROUGH_STEPS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::PathSample;

/// Independent stream for one path: the result does not depend on how paths
/// are spread over threads.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Simulated spot, variance and Brownian increments on a uniform grid.
///
/// `increments` holds, per path and step, the increments of the Brownian
/// letters `2..=d` of the signature driver in letter order.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBatch {
    n_paths: usize,
    steps: usize,
    horizon: f64,
    noise_dim: usize,
    spot: Vec<f64>,
    variance: Vec<f64>,
    increments: Vec<f64>,
}

impl PathBatch {
    pub fn new(
        n_paths: usize,
        steps: usize,
        horizon: f64,
        noise_dim: usize,
        spot: Vec<f64>,
        variance: Vec<f64>,
        increments: Vec<f64>,
    ) -> Result<Self> {
        if spot.len() != n_paths * (steps + 1)
            || variance.len() != n_paths * (steps + 1)
            || increments.len() != n_paths * steps * noise_dim
        {
            return Err(Error::Shape(format!(
                "path batch of {n_paths} paths, {steps} steps and {noise_dim} noises has mismatched arrays"
            )));
        }
        if !(horizon > 0.0) || steps == 0 {
            return Err(Error::InvalidArgument("path batch needs a positive horizon and at least one step".into()));
        }
        Ok(PathBatch { n_paths, steps, horizon, noise_dim, spot, variance, increments })
    }

    fn from_paths(steps: usize, horizon: f64, noise_dim: usize, paths: Vec<SimulatedPath>) -> Result<Self> {
        let n_paths = paths.len();
        let mut spot = Vec::with_capacity(n_paths * (steps + 1));
        let mut variance = Vec::with_capacity(n_paths * (steps + 1));
        let mut increments = Vec::with_capacity(n_paths * steps * noise_dim);
        for p in paths {
            spot.extend(p.spot);
            variance.extend(p.variance);
            increments.extend(p.increments);
        }
        PathBatch::new(n_paths, steps, horizon, noise_dim, spot, variance, increments)
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Number of Brownian letters; the signature alphabet has one more.
    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn time(&self, step: usize) -> f64 {
        self.horizon * step as f64 / self.steps as f64
    }

    pub fn spot(&self, path: usize) -> &[f64] {
        &self.spot[path * (self.steps + 1)..(path + 1) * (self.steps + 1)]
    }

    pub fn variance(&self, path: usize) -> &[f64] {
        &self.variance[path * (self.steps + 1)..(path + 1) * (self.steps + 1)]
    }

    pub fn increments(&self, path: usize) -> &[f64] {
        let len = self.steps * self.noise_dim;
        &self.increments[path * len..(path + 1) * len]
    }

    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let start = step * self.noise_dim;
        &self.increments(path)[start..start + self.noise_dim]
    }

    pub fn spot_data(&self) -> &[f64] {
        &self.spot
    }

    pub fn variance_data(&self) -> &[f64] {
        &self.variance
    }

    pub fn increment_data(&self) -> &[f64] {
        &self.increments
    }

    /// Time-extended driver `(t, B^2, .., B^d)` at the grid nodes.
    pub fn driver_path(&self, path: usize) -> PathSample {
        let mut values = Vec::with_capacity(self.steps + 1);
        let mut state = vec![0.0; self.noise_dim + 1];
        values.push(state.clone());
        for step in 0..self.steps {
            state[0] = self.time(step + 1);
            for (s, dx) in state[1..].iter_mut().zip(self.increment(path, step)) {
                *s += dx;
            }
            values.push(state.clone());
        }
        let times = (0..=self.steps).map(|k| self.time(k)).collect();
        PathSample::new(times, values).expect("uniform grid is increasing")
    }

    /// Terminal spot of every path.
    pub fn terminal_spots(&self) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.spot(p)[self.steps]).collect()
    }
}

struct SimulatedPath {
    spot: Vec<f64>,
    variance: Vec<f64>,
    increments: Vec<f64>,
}

fn check_grid(horizon: f64, steps: usize, n_paths: usize) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    if steps == 0 || n_paths == 0 {
        return Err(Error::InvalidArgument("need at least one step and one path".into()));
    }
    Ok(())
}

/// 3×3 or 2×2 correlation matrices with the PSD test used for both models.
fn check_correlation(size: usize, entries: &[f64]) -> Result<()> {
    crate::system::NoiseCovariance::from_correlation(size, entries.to_vec()).map(|_| ())
}

#[cfg(test)]
pub(crate) mod test_support {
    /// Mean and standard error of a sample.
    pub fn mean_se(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }
}
