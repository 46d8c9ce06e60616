use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, PriceBound, Result};

pub const STRIKES_PER_MATURITY: usize = 21;

/// Volatility bracket of the implied-volatility solver.
pub const IV_BRACKET: (f64, f64) = (1e-6, 5.0);

/// Price residual at which the implied-volatility solver stops.
pub const IV_PRICE_TOL: f64 = 1e-12;

const IV_MAX_ITER: usize = 200;

/// `K_j = (0.8 + 0.02 j)^{√T}`, `j = 0..=20`.
pub fn strike_grid(maturity: f64) -> Result<Vec<f64>> {
    if !(maturity > 0.0 && maturity.is_finite()) {
        return Err(Error::InvalidArgument(format!("maturity must be positive, got {maturity}")));
    }
    let e = maturity.sqrt();
    Ok((0..STRIKES_PER_MATURITY).map(|j| (0.8 + 0.02 * j as f64).powf(e)).collect())
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn d1_d2(s0: f64, strike: f64, maturity: f64, sigma: f64) -> (f64, f64) {
    let sd = sigma * maturity.sqrt();
    let d1 = ((s0 / strike).ln() + 0.5 * sd * sd) / sd;
    (d1, d1 - sd)
}

/// Time value `C − max(S0 − K, 0)`: the call out of the money, the put in
/// the money.
fn time_value(s0: f64, strike: f64, maturity: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 || maturity <= 0.0 {
        return 0.0;
    }
    let (d1, d2) = d1_d2(s0, strike, maturity, sigma);
    if s0 >= strike {
        (strike * norm_cdf(-d2) - s0 * norm_cdf(-d1)).max(0.0)
    } else {
        (s0 * norm_cdf(d1) - strike * norm_cdf(d2)).max(0.0)
    }
}

/// Black–Scholes call at zero rate, assembled as intrinsic plus time value
/// so that the time value stays accurate in the money.
pub fn bs_call(s0: f64, strike: f64, maturity: f64, sigma: f64) -> f64 {
    (s0 - strike).max(0.0) + time_value(s0, strike, maturity, sigma)
}

pub fn bs_vega(s0: f64, strike: f64, maturity: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 || maturity <= 0.0 {
        return 0.0;
    }
    let (d1, _) = d1_d2(s0, strike, maturity, sigma);
    s0 * norm_pdf(d1) * maturity.sqrt()
}

/// Black–Scholes volatility reproducing `price`. Newton steps on the log of
/// the time value, kept inside a bisection bracket on [`IV_BRACKET`].
pub fn implied_vol(price: f64, s0: f64, strike: f64, maturity: f64) -> Result<f64> {
    if !(s0 > 0.0 && strike > 0.0 && maturity > 0.0) {
        return Err(Error::InvalidArgument(format!("need positive spot, strike and maturity, got {s0}, {strike}, {maturity}")));
    }
    let intrinsic = (s0 - strike).max(0.0);
    if !(price > intrinsic) {
        return Err(Error::PriceOutOfBounds { price, bound: PriceBound::Intrinsic(intrinsic) });
    }
    if !(price < s0) {
        return Err(Error::PriceOutOfBounds { price, bound: PriceBound::Spot(s0) });
    }
    let target = (price - intrinsic).ln();
    let g = |sigma: f64| time_value(s0, strike, maturity, sigma).ln() - target;
    let (mut lo, mut hi) = IV_BRACKET;
    if g(lo) > 0.0 || g(hi) < 0.0 {
        return Err(Error::BracketFailure { lo, hi });
    }
    // Brenner–Subrahmanyam start, clamped into the bracket
    let mut sigma = ((2.0 * PI / maturity).sqrt() * price / s0).clamp(lo, hi);
    for _ in 0..IV_MAX_ITER {
        let r = g(sigma);
        if r == 0.0 {
            break;
        }
        if r > 0.0 {
            hi = sigma;
        } else {
            lo = sigma;
        }
        let tv = time_value(s0, strike, maturity, sigma);
        let slope = bs_vega(s0, strike, maturity, sigma) / tv;
        let newton = sigma - r / slope;
        let next = if slope.is_finite() && slope > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        let step = (next - sigma).abs();
        sigma = next;
        if step <= 4.0 * f64::EPSILON * sigma || hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    if (bs_call(s0, strike, maturity, sigma) - price).abs() <= IV_PRICE_TOL {
        Ok(sigma)
    } else {
        Err(Error::BracketFailure { lo, hi })
    }
}

/// Monte Carlo call prices and standard errors per strike.
#[derive(Clone, Debug, PartialEq)]
pub struct CallPrices {
    pub prices: Vec<f64>,
    pub std_errors: Vec<f64>,
}

/// Sample mean of `max(S_T − K, 0)` with the standard error `std/√n`.
pub fn price_european_call(samples: &[f64], strikes: &[f64]) -> Result<CallPrices> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no terminal samples".into()));
    }
    if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite { path: i, step: 0 });
    }
    let n = samples.len() as f64;
    let mut prices = Vec::with_capacity(strikes.len());
    let mut std_errors = Vec::with_capacity(strikes.len());
    for &k in strikes {
        let payoff: Vec<f64> = samples.iter().map(|s| (s - k).max(0.0)).collect();
        let mean = payoff.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 { payoff.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
        prices.push(mean);
        std_errors.push((var / n).sqrt());
    }
    Ok(CallPrices { prices, std_errors })
}

/// Prices and implied volatilities on one maturity. Strikes whose price
/// cannot be inverted carry `None` and are counted in `failures`.
#[derive(Clone, Debug, PartialEq)]
pub struct IVSmile {
    pub maturity: f64,
    pub s0: f64,
    pub strikes: Vec<f64>,
    pub prices: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub ivs: Vec<Option<f64>>,
    /// Price standard error over vega.
    pub iv_std_errors: Vec<Option<f64>>,
    pub failures: usize,
}

impl IVSmile {
    pub fn from_samples(maturity: f64, s0: f64, samples: &[f64], strikes: &[f64]) -> Result<Self> {
        if strikes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument("strikes must be strictly increasing".into()));
        }
        let CallPrices { prices, std_errors } = price_european_call(samples, strikes)?;
        let mut ivs = Vec::with_capacity(strikes.len());
        let mut iv_std_errors = Vec::with_capacity(strikes.len());
        let mut failures = 0;
        for ((&k, &p), &se) in strikes.iter().zip(&prices).zip(&std_errors) {
            match implied_vol(p, s0, k, maturity) {
                Ok(iv) => {
                    ivs.push(Some(iv));
                    iv_std_errors.push(Some(se / bs_vega(s0, k, maturity, iv)));
                }
                Err(e) => {
                    log::debug!("no implied vol at T = {maturity}, K = {k}: {e}");
                    ivs.push(None);
                    iv_std_errors.push(None);
                    failures += 1;
                }
            }
        }
        Ok(IVSmile { maturity, s0, strikes: strikes.to_vec(), prices, std_errors, ivs, iv_std_errors, failures })
    }

    /// Strikes where the price violates monotonicity in `K` by more than two
    /// combined standard errors.
    pub fn monotonicity_flags(&self) -> Vec<usize> {
        (1..self.prices.len())
            .filter(|&i| {
                let tol = 2.0 * (self.std_errors[i].powi(2) + self.std_errors[i - 1].powi(2)).sqrt();
                self.prices[i] > self.prices[i - 1] + tol
            })
            .collect()
    }
}

/// `|IV_full − IV_red| / IV_full` with the error bar
/// `√(se_full² + se_red²) / IV_full`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IvErrorPoint {
    pub strike: f64,
    pub relative_error: Option<f64>,
    pub error_bar: Option<f64>,
}

pub fn iv_error_report(full: &IVSmile, reduced: &IVSmile) -> Result<Vec<IvErrorPoint>> {
    if full.strikes != reduced.strikes || full.maturity != reduced.maturity {
        return Err(Error::InvalidArgument("smiles must share maturity and strikes".into()));
    }
    Ok((0..full.strikes.len())
        .map(|i| {
            let (relative_error, error_bar) = match (full.ivs[i], reduced.ivs[i], full.iv_std_errors[i], reduced.iv_std_errors[i]) {
                (Some(f), Some(r), Some(sf), Some(sr)) => (Some((f - r).abs() / f), Some((sf * sf + sr * sr).sqrt() / f)),
                _ => (None, None),
            };
            IvErrorPoint { strike: full.strikes[i], relative_error, error_bar }
        })
        .collect())
}
