use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, Par};
use rayon::prelude::*;

use super::PathBatch;
use crate::error::{Error, Result};
use crate::linalg;
use crate::tensor::SignatureWalker;
use crate::words::{BasisOrder, LinearFunctional};

/// Feature rows per block of the normal-equation accumulation.
const BLOCK_ROWS: usize = 4096;

/// Ridge regression of price paths on signature features of the driver.
#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    pub d: usize,
    pub m: usize,
    /// `None` selects `1e-8 · mean(y²)` on the training targets.
    pub lambda: Option<f64>,
    /// Leading fraction of paths used for training; the rest validate.
    pub train_fraction: f64,
    /// Use every `stride`-th grid time, starting at `t = 0`.
    pub stride: usize,
}

impl FitConfig {
    pub fn new(d: usize, m: usize) -> Self {
        FitConfig { d, m, lambda: None, train_fraction: 0.8, stride: 1 }
    }

    fn validate(&self, batch: &PathBatch) -> Result<BasisOrder> {
        if batch.noise_dim() + 1 != self.d {
            return Err(Error::Shape(format!(
                "driver has {} Brownian letters but the alphabet has size {}",
                batch.noise_dim(),
                self.d
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!("train fraction {} outside (0, 1)", self.train_fraction)));
        }
        if self.stride == 0 || self.stride > batch.steps() {
            return Err(Error::InvalidArgument(format!("stride {} for {} steps", self.stride, batch.steps())));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::InvalidArgument(format!("ridge parameter {l} must be nonnegative")));
            }
        }
        BasisOrder::new(self.d, self.m)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FittedSignatureModel {
    order: BasisOrder,
    coefficients: Vec<f64>,
    lambda: f64,
    train_rmse: f64,
    validation_rmse: f64,
    target_rms: f64,
    train_samples: usize,
    validation_samples: usize,
}

impl FittedSignatureModel {
    pub fn order(&self) -> &BasisOrder {
        &self.order
    }

    /// `ℓ` in the basis order.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn functional(&self) -> LinearFunctional {
        LinearFunctional::from_dense(&self.order, &self.coefficients).expect("dimension checked at fit")
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn train_rmse(&self) -> f64 {
        self.train_rmse
    }

    pub fn validation_rmse(&self) -> f64 {
        self.validation_rmse
    }

    /// Validation RMSE over the root mean square of the validation targets.
    pub fn validation_relative_rmse(&self) -> f64 {
        self.validation_rmse / self.target_rms
    }

    pub fn train_samples(&self) -> usize {
        self.train_samples
    }

    pub fn validation_samples(&self) -> usize {
        self.validation_samples
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub lambda: f64,
    pub train_rmse: f64,
    pub validation_rmse: f64,
}

fn sample_steps(steps: usize, stride: usize) -> Vec<usize> {
    (0..=steps).step_by(stride).collect()
}

/// Signature features and spot targets of one path at the sampled steps.
fn path_features(batch: &PathBatch, order: BasisOrder, path: usize, samples: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = order.n();
    let mut features = Vec::with_capacity(samples.len() * n);
    let mut targets = Vec::with_capacity(samples.len());
    let mut walker = SignatureWalker::new(order);
    let mut dx = vec![0.0; order.d()];
    dx[0] = batch.dt();
    let spot = batch.spot(path);
    let mut step = 0;
    for &s in samples {
        while step < s {
            dx[1..].copy_from_slice(batch.increment(path, step));
            walker.advance(&dx);
            step += 1;
        }
        features.extend_from_slice(walker.current().coeffs());
        targets.push(spot[s]);
    }
    (features, targets)
}

/// `ΦᵀΦ`, `Φᵀy`, `yᵀy` and the row count over a range of paths.
struct NormalEquations {
    gram: Mat<f64>,
    rhs: Vec<f64>,
    yy: f64,
    rows: usize,
}

fn accumulate(batch: &PathBatch, order: BasisOrder, paths: std::ops::Range<usize>, samples: &[usize]) -> NormalEquations {
    let n = order.n();
    let per_path = samples.len();
    let chunk = (BLOCK_ROWS / per_path).max(1);
    let mut gram = Mat::<f64>::zeros(n, n);
    let mut rhs = Mat::<f64>::zeros(n, 1);
    let mut yy = 0.0;
    let mut rows = 0;
    let all: Vec<usize> = paths.collect();
    for block in all.chunks(chunk) {
        let data: Vec<(Vec<f64>, Vec<f64>)> =
            block.par_iter().map(|&p| path_features(batch, order, p, samples)).collect();
        let r = block.len() * per_path;
        let phi = Mat::from_fn(r, n, |i, j| data[i / per_path].0[(i % per_path) * n + j]);
        let y = Mat::from_fn(r, 1, |i, _| data[i / per_path].1[i % per_path]);
        matmul(gram.as_mut(), Accum::Add, phi.transpose(), phi.as_ref(), 1.0, Par::Seq);
        matmul(rhs.as_mut(), Accum::Add, phi.transpose(), y.as_ref(), 1.0, Par::Seq);
        yy += data.iter().flat_map(|(_, t)| t).map(|t| t * t).sum::<f64>();
        rows += r;
    }
    linalg::symmetrize(&mut gram);
    NormalEquations { gram, rhs: linalg::column(&rhs, 0), yy, rows }
}

fn ridge_solve(eq: &NormalEquations, lambda: f64) -> Result<Vec<f64>> {
    let mut g = eq.gram.clone();
    for i in 0..g.nrows() {
        g[(i, i)] += lambda;
    }
    linalg::solve_psd(&g, &eq.rhs)
}

/// RMSE from the normal-equation moments; loses accuracy when the residual is
/// tiny compared with the targets.
fn quadratic_rmse(eq: &NormalEquations, coeffs: &[f64]) -> f64 {
    let g_l = linalg::mat_vec(&eq.gram, coeffs);
    let sse = linalg::dot(coeffs, &g_l) - 2.0 * linalg::dot(coeffs, &eq.rhs) + eq.yy;
    (sse.max(0.0) / eq.rows as f64).sqrt()
}

/// RMSE from recomputed predictions, and the RMS of the targets.
fn residual_rmse(batch: &PathBatch, order: BasisOrder, paths: std::ops::Range<usize>, samples: &[usize], coeffs: &[f64]) -> (f64, f64) {
    let n = order.n();
    let per_path: Vec<(f64, f64, usize)> = paths
        .into_par_iter()
        .map(|p| {
            let (phi, y) = path_features(batch, order, p, samples);
            let mut sse = 0.0;
            for (row, t) in phi.chunks(n).zip(&y) {
                let r = linalg::dot(row, coeffs) - t;
                sse += r * r;
            }
            (sse, y.iter().map(|t| t * t).sum::<f64>(), y.len())
        })
        .collect();
    // summed in path order so the result does not depend on the thread count
    let (sse, yy, count) = per_path.iter().fold((0.0, 0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    ((sse / count as f64).sqrt(), (yy / count as f64).sqrt())
}

fn split(batch: &PathBatch, cfg: &FitConfig) -> Result<usize> {
    let train = (batch.n_paths() as f64 * cfg.train_fraction).round() as usize;
    if train == 0 || train == batch.n_paths() {
        return Err(Error::InvalidArgument(format!(
            "{} paths cannot be split {:.2}/{:.2}",
            batch.n_paths(),
            cfg.train_fraction,
            1.0 - cfg.train_fraction
        )));
    }
    Ok(train)
}

/// Fits a single time-independent `ℓ` with `S_t ≈ ⟨ℓ, 𝕏_{0,t}⟩` jointly over
/// all sampled grid times of the training paths.
pub fn fit_signature_model(batch: &PathBatch, cfg: &FitConfig) -> Result<FittedSignatureModel> {
    let order = cfg.validate(batch)?;
    let train = split(batch, cfg)?;
    let samples = sample_steps(batch.steps(), cfg.stride);
    let eq = accumulate(batch, order, 0..train, &samples);
    let lambda = cfg.lambda.unwrap_or(1e-8 * eq.yy / eq.rows as f64);
    let coefficients = ridge_solve(&eq, lambda)?;
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::LinAlg("ridge solution is not finite".into()));
    }
    let (train_rmse, _) = residual_rmse(batch, order, 0..train, &samples, &coefficients);
    let (validation_rmse, target_rms) = residual_rmse(batch, order, train..batch.n_paths(), &samples, &coefficients);
    Ok(FittedSignatureModel {
        order,
        coefficients,
        lambda,
        train_rmse,
        validation_rmse,
        target_rms,
        train_samples: eq.rows,
        validation_samples: (batch.n_paths() - train) * samples.len(),
    })
}

/// Train and validation RMSE for each ridge parameter, sharing one pass of
/// feature accumulation. `cfg.lambda` is ignored.
pub fn ridge_sweep(batch: &PathBatch, cfg: &FitConfig, lambdas: &[f64]) -> Result<Vec<SweepPoint>> {
    let order = cfg.validate(batch)?;
    let train = split(batch, cfg)?;
    let samples = sample_steps(batch.steps(), cfg.stride);
    let eq_train = accumulate(batch, order, 0..train, &samples);
    let eq_val = accumulate(batch, order, train..batch.n_paths(), &samples);
    lambdas
        .iter()
        .map(|&lambda| {
            if !(lambda >= 0.0) {
                return Err(Error::InvalidArgument(format!("ridge parameter {lambda} must be nonnegative")));
            }
            let coeffs = ridge_solve(&eq_train, lambda)?;
            Ok(SweepPoint {
                lambda,
                train_rmse: quadratic_rmse(&eq_train, &coeffs),
                validation_rmse: quadratic_rmse(&eq_val, &coeffs),
            })
        })
        .collect()
}
