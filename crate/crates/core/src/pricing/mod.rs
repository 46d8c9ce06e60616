//! Euler–Maruyama for the full and reduced linear systems, the shared-noise
//! output error, and European call pricing with implied volatilities.

mod options;

pub use options::{
    bs_call, bs_vega, implied_vol, iv_error_report, price_european_call, strike_grid, CallPrices, IVSmile, IvErrorPoint,
    IV_BRACKET, IV_PRICE_TOL, STRIKES_PER_MATURITY,
};

use faer::Mat;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::market::path_rng;
use crate::system::{LinearSde, NoiseCovariance};

/// Uniform time grid with a path count and the seed of the Brownian drivers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationGrid {
    horizon: f64,
    steps: usize,
    n_paths: usize,
    seed: u64,
}

impl SimulationGrid {
    pub fn new(horizon: f64, steps: usize, n_paths: usize, seed: u64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 || n_paths == 0 {
            return Err(Error::InvalidArgument("grid needs at least one step and one path".into()));
        }
        Ok(SimulationGrid { horizon, steps, n_paths, seed })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

/// Increments `ΔB` of letters `2..=d` for one path, step-major.
fn path_increments(factor: &Mat<f64>, grid: &SimulationGrid, path: usize) -> Vec<f64> {
    let k = factor.nrows();
    let sqrt_h = grid.dt().sqrt();
    let mut rng = path_rng(grid.seed, path);
    let mut xi = vec![0.0; k];
    let mut out = Vec::with_capacity(grid.steps * k);
    for _ in 0..grid.steps {
        for x in xi.iter_mut() {
            *x = StandardNormal.sample(&mut rng);
        }
        for i in 0..k {
            out.push(sqrt_h * (0..k).map(|j| factor[(i, j)] * xi[j]).sum::<f64>());
        }
    }
    out
}

/// Brownian increments with covariance `K h` for the whole grid, laid out as
/// `(path, step, letter − 2)`. These are the increments every simulation
/// with the same grid consumes.
pub fn brownian_increments(cov: &NoiseCovariance, grid: &SimulationGrid) -> Result<Vec<f64>> {
    let factor = cov.factor()?;
    let per_path: Vec<Vec<f64>> = (0..grid.n_paths).into_par_iter().map(|p| path_increments(&factor, grid, p)).collect();
    Ok(per_path.concat())
}

/// One Euler path. `visit(step, x)` sees the state at every node.
fn euler_path<S: LinearSde + ?Sized>(
    sys: &S,
    h: f64,
    steps: usize,
    increments: &[f64],
    path: usize,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let k = sys.letters() - 1;
    let mut x = sys.initial_state().to_vec();
    let mut next = vec![0.0; x.len()];
    visit(0, &x);
    for step in 0..steps {
        next.copy_from_slice(&x);
        sys.drift_add(&x, &mut next, h);
        for (j, &db) in increments[step * k..(step + 1) * k].iter().enumerate() {
            if db != 0.0 {
                sys.letter_add(j + 2, &x, &mut next, db);
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { path, step: step + 1 });
        }
        std::mem::swap(&mut x, &mut next);
        visit(step + 1, &x);
    }
    Ok(())
}

fn check_shared_noise(sys: &dyn LinearSde, grid: &SimulationGrid, shared: Option<&[f64]>) -> Result<()> {
    let k = sys.letters() - 1;
    if sys.covariance().size() != k {
        return Err(Error::Shape(format!("{} noise letters but a {}x{} covariance", k, sys.covariance().size(), sys.covariance().size())));
    }
    if let Some(noise) = shared {
        if noise.len() != grid.n_paths * grid.steps * k {
            return Err(Error::Shape(format!(
                "shared noise has {} entries, expected {} paths × {} steps × {} letters",
                noise.len(),
                grid.n_paths,
                grid.steps,
                k
            )));
        }
    }
    Ok(())
}

/// Outputs `𝒴 = L𝒳` (and optionally the states) on every grid node.
#[derive(Clone, Debug, PartialEq)]
pub struct SdeSimulation {
    n_paths: usize,
    steps: usize,
    output_dim: usize,
    state_dim: usize,
    outputs: Vec<f64>,
    states: Option<Vec<f64>>,
}

impl SdeSimulation {
    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn output(&self, path: usize, step: usize) -> &[f64] {
        let start = (path * (self.steps + 1) + step) * self.output_dim;
        &self.outputs[start..start + self.output_dim]
    }

    pub fn state(&self, path: usize, step: usize) -> Option<&[f64]> {
        let start = (path * (self.steps + 1) + step) * self.state_dim;
        self.states.as_ref().map(|s| &s[start..start + self.state_dim])
    }

    /// First output coordinate at the horizon, per path.
    pub fn terminal(&self) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.output(p, self.steps)[0]).collect()
    }
}

/// Euler–Maruyama `x ← x + A x h + Σ_i N_i x ΔBⁱ`. Without `shared` the
/// increments come from the grid seed.
pub fn simulate_linear_sde(
    sys: &dyn LinearSde,
    grid: &SimulationGrid,
    shared: Option<&[f64]>,
    keep_states: bool,
) -> Result<SdeSimulation> {
    check_shared_noise(sys, grid, shared)?;
    let k = sys.letters() - 1;
    let factor = sys.covariance().factor()?;
    let (p, n) = (sys.output_dim(), sys.state_dim());
    let per_path = (0..grid.n_paths)
        .into_par_iter()
        .map(|path| {
            let own;
            let inc = match shared {
                Some(noise) => &noise[path * grid.steps * k..(path + 1) * grid.steps * k],
                None => {
                    own = path_increments(&factor, grid, path);
                    &own[..]
                }
            };
            let mut outputs = Vec::with_capacity((grid.steps + 1) * p);
            let mut states = Vec::with_capacity(if keep_states { (grid.steps + 1) * n } else { 0 });
            let mut y = vec![0.0; p];
            euler_path(sys, grid.dt(), grid.steps, inc, path, |_, x| {
                sys.output(x, &mut y);
                outputs.extend_from_slice(&y);
                if keep_states {
                    states.extend_from_slice(x);
                }
            })?;
            Ok((outputs, states))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut outputs = Vec::with_capacity(grid.n_paths * (grid.steps + 1) * p);
    let mut states = Vec::new();
    for (o, s) in per_path {
        outputs.extend(o);
        states.extend(s);
    }
    Ok(SdeSimulation {
        n_paths: grid.n_paths,
        steps: grid.steps,
        output_dim: p,
        state_dim: n,
        outputs,
        states: keep_states.then_some(states),
    })
}

/// Terminal first output of several systems driven by the same increments.
pub fn terminal_outputs(systems: &[&dyn LinearSde], grid: &SimulationGrid) -> Result<Vec<Vec<f64>>> {
    let first = systems.first().ok_or_else(|| Error::InvalidArgument("no systems to simulate".into()))?;
    for s in systems {
        check_same_noise(*first, *s)?;
        if s.output_dim() == 0 {
            return Err(Error::Shape("system has no output".into()));
        }
    }
    let factor = first.covariance().factor()?;
    let per_path = (0..grid.n_paths)
        .into_par_iter()
        .map(|path| {
            let inc = path_increments(&factor, grid, path);
            systems
                .iter()
                .map(|sys| {
                    let mut y = vec![0.0; sys.output_dim()];
                    let mut last = 0.0;
                    euler_path(*sys, grid.dt(), grid.steps, &inc, path, |step, x| {
                        if step == grid.steps {
                            sys.output(x, &mut y);
                            last = y[0];
                        }
                    })?;
                    Ok(last)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((0..systems.len()).map(|s| per_path.iter().map(|row| row[s]).collect()).collect())
}

fn check_same_noise(a: &dyn LinearSde, b: &dyn LinearSde) -> Result<()> {
    if a.letters() != b.letters() || a.output_dim() != b.output_dim() {
        return Err(Error::Shape(format!(
            "systems differ in alphabet ({} vs {}) or output dimension ({} vs {})",
            a.letters(),
            b.letters(),
            a.output_dim(),
            b.output_dim()
        )));
    }
    let (ka, kb) = (a.covariance().entries(), b.covariance().entries());
    let scale = ka.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if ka.iter().zip(kb).any(|(x, y)| (x - y).abs() > 1e-12 * scale) {
        return Err(Error::InvalidArgument("systems must share the noise covariance".into()));
    }
    Ok(())
}

/// Monte Carlo estimate of `√(E∫₀ᵀ‖𝒴_t − 𝒴̃_t‖² dt)` for one reduced system.
#[derive(Clone, Debug, PartialEq)]
pub struct L2Error {
    pub error: f64,
    /// Delta-method standard error of `error`.
    pub std_error: f64,
    /// `√(E∫‖𝒴_t‖² dt)` of the full system on the same paths.
    pub output_norm: f64,
    /// `√(E‖𝒴_t − 𝒴̃_t‖²)` on every grid node.
    pub profile: Vec<f64>,
}

impl L2Error {
    pub fn relative(&self) -> f64 {
        self.error / self.output_norm
    }
}

fn trapezoid(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    h * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1]))
}

/// Pathwise comparison of the full system with each reduced one, all driven
/// by identical increments. Time integrals use the trapezoidal rule.
pub fn l2_output_error(full: &dyn LinearSde, reduced: &[&dyn LinearSde], grid: &SimulationGrid) -> Result<Vec<L2Error>> {
    for r in reduced {
        check_same_noise(full, *r)?;
    }
    let factor = full.covariance().factor()?;
    let nodes = grid.steps + 1;
    let p = full.output_dim();
    // per path: ∫‖𝒴‖², then per reduced system ∫‖𝒴 − 𝒴̃‖² and the node-wise squares
    let per_path = (0..grid.n_paths)
        .into_par_iter()
        .map(|path| {
            let inc = path_increments(&factor, grid, path);
            let mut y_full = vec![0.0; nodes * p];
            let mut y = vec![0.0; p];
            euler_path(full, grid.dt(), grid.steps, &inc, path, |step, x| {
                full.output(x, &mut y);
                y_full[step * p..(step + 1) * p].copy_from_slice(&y);
            })?;
            let sq: Vec<f64> = y_full.chunks(p).map(|v| v.iter().map(|a| a * a).sum()).collect();
            let norm = trapezoid(&sq, grid.dt());
            let mut diffs = Vec::with_capacity(reduced.len());
            for r in reduced {
                let mut d2 = vec![0.0; nodes];
                euler_path(*r, grid.dt(), grid.steps, &inc, path, |step, x| {
                    r.output(x, &mut y);
                    d2[step] = y.iter().zip(&y_full[step * p..(step + 1) * p]).map(|(a, b)| (a - b) * (a - b)).sum();
                })?;
                diffs.push((trapezoid(&d2, grid.dt()), d2));
            }
            Ok((norm, diffs))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = grid.n_paths as f64;
    let norm = per_path.iter().map(|(v, _)| v).sum::<f64>() / n;
    Ok((0..reduced.len())
        .map(|r| {
            let j: Vec<f64> = per_path.iter().map(|(_, d)| d[r].0).collect();
            let mean = j.iter().sum::<f64>() / n;
            let var = if grid.n_paths > 1 { j.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
            let error = mean.sqrt();
            let std_error = if error > 0.0 { (var / n).sqrt() / (2.0 * error) } else { 0.0 };
            let profile = (0..nodes).map(|s| (per_path.iter().map(|(_, d)| d[r].1[s]).sum::<f64>() / n).sqrt()).collect();
            L2Error { error, std_error, output_norm: norm.sqrt(), profile }
        })
        .collect())
}
