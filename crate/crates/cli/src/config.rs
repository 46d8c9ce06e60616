//! Pipeline configuration: a sectioned `key = value` file (TOML syntax).
//!
//! ```text
//! [model]          kind = "bergomi" | "rough_bergomi"
//! [bergomi]        omega k1 k2 theta1 rho12 rho_s1 rho_s2 s0 xi0   (all optional)
//! [rough_bergomi]  hurst eta rho s0 xi0                            (all optional)
//! [signature]      d m covariance functional
//! [fitting]        paths steps horizon stride train_fraction lambda
//! [reduction]      horizon rank_tol orders l2_paths l2_steps
//! [pricing]        maturities paths steps_per_unit orders
//! [io]             out seed
//! ```
//!
//! `signature.covariance` is required: either `"model"` (the correlation of
//! the configured market model) or the row-major `(d−1)×(d−1)` correlation of
//! the Brownian letters. `signature.functional` optionally names a file of
//! `word value` lines that replaces the fitted output functional.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use serde::{Deserialize, Serialize};
use sigred_core::market::{BergomiConfig, RoughBergomiConfig};
use sigred_core::{dim_truncated, NoiseCovariance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Bergomi,
    RoughBergomi,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BergomiSection {
    pub omega: f64,
    pub k1: f64,
    pub k2: f64,
    pub theta1: f64,
    pub rho12: f64,
    pub rho_s1: f64,
    pub rho_s2: f64,
    pub s0: f64,
    pub xi0: f64,
}

impl Default for BergomiSection {
    fn default() -> Self {
        let c = BergomiConfig::default();
        BergomiSection {
            omega: c.omega,
            k1: c.k1,
            k2: c.k2,
            theta1: c.theta1,
            rho12: c.rho12,
            rho_s1: c.rho_s1,
            rho_s2: c.rho_s2,
            s0: c.s0,
            xi0: c.xi0,
        }
    }
}

impl BergomiSection {
    pub fn to_model(&self) -> BergomiConfig {
        BergomiConfig {
            omega: self.omega,
            k1: self.k1,
            k2: self.k2,
            theta1: self.theta1,
            rho12: self.rho12,
            rho_s1: self.rho_s1,
            rho_s2: self.rho_s2,
            s0: self.s0,
            xi0: self.xi0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoughBergomiSection {
    pub hurst: f64,
    pub eta: f64,
    pub rho: f64,
    pub s0: f64,
    pub xi0: f64,
}

impl Default for RoughBergomiSection {
    fn default() -> Self {
        let c = RoughBergomiConfig::default();
        RoughBergomiSection { hurst: c.hurst, eta: c.eta, rho: c.rho, s0: c.s0, xi0: c.xi0 }
    }
}

impl RoughBergomiSection {
    pub fn to_model(&self) -> RoughBergomiConfig {
        RoughBergomiConfig { hurst: self.hurst, eta: self.eta, rho: self.rho, s0: self.s0, xi0: self.xi0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovarianceSpec {
    Named(String),
    Matrix(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignatureSection {
    pub d: usize,
    pub m: usize,
    pub covariance: Option<CovarianceSpec>,
    #[serde(default)]
    pub functional: Option<PathBuf>,
}

fn default_fraction() -> f64 {
    0.8
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittingSection {
    pub paths: usize,
    pub steps: usize,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "one_usize")]
    pub stride: usize,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub lambda: Option<f64>,
}

fn default_rank_tol() -> f64 {
    sigred_core::balanced::DEFAULT_RANK_TOL
}

fn default_l2_paths() -> usize {
    1000
}

fn default_l2_steps() -> usize {
    256
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReductionSection {
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    pub orders: Vec<usize>,
    #[serde(default = "default_l2_paths")]
    pub l2_paths: usize,
    #[serde(default = "default_l2_steps")]
    pub l2_steps: usize,
}

fn default_steps_per_unit() -> usize {
    256
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingSection {
    pub maturities: Vec<f64>,
    pub paths: usize,
    #[serde(default = "default_steps_per_unit")]
    pub steps_per_unit: usize,
    /// Reduced orders to price; defaults to `reduction.orders`.
    #[serde(default)]
    pub orders: Option<Vec<usize>>,
}

fn default_out() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl Default for IoSection {
    fn default() -> Self {
        IoSection { out: default_out(), seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub bergomi: BergomiSection,
    #[serde(default)]
    pub rough_bergomi: RoughBergomiSection,
    pub signature: SignatureSection,
    pub fitting: FittingSection,
    pub reduction: ReductionSection,
    pub pricing: PricingSection,
    #[serde(default)]
    pub io: IoSection,
}

/// 1-based line of `key` inside `[section]`, or of the section header when
/// the key is absent.
pub fn locate(source: &str, section: &str, key: Option<&str>) -> Option<usize> {
    let header = format!("[{section}]");
    let mut in_section = false;
    let mut header_line = None;
    for (i, line) in source.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            in_section = t == header;
            if in_section {
                header_line = Some(i + 1);
            }
            continue;
        }
        if in_section {
            if let Some(k) = key {
                let name = t.split('=').next().unwrap_or("").trim();
                if name == k && t.contains('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    header_line
}

impl PipelineConfig {
    pub fn parse(source: &str, origin: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(source).map_err(|e| {
            let line = e
                .span()
                .map(|s| source[..s.start.min(source.len())].matches('\n').count() + 1)
                .map(|l| format!(":{l}"))
                .unwrap_or_default();
            anyhow!("{origin}{line}: {}", e.message())
        })?;
        cfg.validate().map_err(|(section, key, msg)| {
            let line = locate(source, section, key).map(|l| format!(":{l}")).unwrap_or_default();
            let field = match key {
                Some(k) => format!("{section}.{k}"),
                None => section.to_string(),
            };
            anyhow!("{origin}{line}: {field}: {msg}")
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let source = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&source, &path.display().to_string())
    }

    /// Letters of the model's driver, time included.
    pub fn model_letters(&self) -> usize {
        match self.model.kind {
            ModelKind::Bergomi => 4,
            ModelKind::RoughBergomi => 3,
        }
    }

    pub fn s0(&self) -> f64 {
        match self.model.kind {
            ModelKind::Bergomi => self.bergomi.s0,
            ModelKind::RoughBergomi => self.rough_bergomi.s0,
        }
    }

    pub fn state_dim(&self) -> usize {
        dim_truncated(self.signature.d, self.signature.m).expect("validated")
    }

    pub fn pricing_orders(&self) -> &[usize] {
        self.pricing.orders.as_deref().unwrap_or(&self.reduction.orders)
    }

    /// The covariance `K` of the Brownian letters.
    pub fn covariance(&self) -> Result<NoiseCovariance> {
        let size = self.signature.d - 1;
        let spec = self
            .signature
            .covariance
            .as_ref()
            .ok_or_else(|| anyhow!("signature.covariance is missing"))?;
        Ok(match spec {
            CovarianceSpec::Named(_) => match self.model.kind {
                ModelKind::Bergomi => self.bergomi.to_model().noise_covariance()?,
                ModelKind::RoughBergomi => self.rough_bergomi.to_model().noise_covariance()?,
            },
            CovarianceSpec::Matrix(v) => NoiseCovariance::from_correlation(size, v.clone())?,
        })
    }

    fn validate(&self) -> std::result::Result<(), (&'static str, Option<&'static str>, String)> {
        let err = |s: &'static str, k: &'static str, msg: String| Err((s, Some(k), msg));
        match self.model.kind {
            ModelKind::Bergomi => {
                if let Err(e) = self.bergomi.to_model().validate() {
                    return Err(("bergomi", None, e.to_string()));
                }
            }
            ModelKind::RoughBergomi => {
                if let Err(e) = self.rough_bergomi.to_model().validate() {
                    return Err(("rough_bergomi", None, e.to_string()));
                }
            }
        }
        let sig = &self.signature;
        if sig.d != self.model_letters() {
            return err(
                "signature",
                "d",
                format!("the model drives {} letters (time included), got d = {}", self.model_letters(), sig.d),
            );
        }
        if sig.m == 0 {
            return err("signature", "m", "truncation level must be at least 1".into());
        }
        let n = match dim_truncated(sig.d, sig.m) {
            Ok(n) => n,
            Err(e) => return err("signature", "m", e.to_string()),
        };
        match &sig.covariance {
            None => {
                return err(
                    "signature",
                    "covariance",
                    "missing; set \"model\" or a row-major correlation of the Brownian letters".into(),
                )
            }
            Some(CovarianceSpec::Named(name)) if name != "model" => {
                return err("signature", "covariance", format!("unknown value {name:?}; expected \"model\" or a matrix"))
            }
            Some(CovarianceSpec::Matrix(v)) => {
                if let Err(e) = NoiseCovariance::from_correlation(sig.d - 1, v.clone()) {
                    return err("signature", "covariance", e.to_string());
                }
            }
            _ => {}
        }
        let fit = &self.fitting;
        if fit.paths < 2 {
            return err("fitting", "paths", "need at least 2 paths".into());
        }
        if fit.steps == 0 {
            return err("fitting", "steps", "need at least one step".into());
        }
        if !(fit.horizon > 0.0 && fit.horizon.is_finite()) {
            return err("fitting", "horizon", format!("must be positive, got {}", fit.horizon));
        }
        if fit.stride == 0 || fit.stride > fit.steps {
            return err("fitting", "stride", format!("must lie in 1..={}", fit.steps));
        }
        if !(fit.train_fraction > 0.0 && fit.train_fraction < 1.0) {
            return err("fitting", "train_fraction", "must lie in (0, 1)".into());
        }
        if let Some(l) = fit.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return err("fitting", "lambda", format!("must be nonnegative, got {l}"));
            }
        }
        let red = &self.reduction;
        if !(red.horizon > 0.0 && red.horizon.is_finite()) {
            return err("reduction", "horizon", format!("must be positive, got {}", red.horizon));
        }
        if !(red.rank_tol > 0.0 && red.rank_tol < 1.0) {
            return err("reduction", "rank_tol", "must lie in (0, 1)".into());
        }
        if let Some(&k) = red.orders.iter().find(|&&k| k == 0 || k > n) {
            return err("reduction", "orders", format!("order {k} outside [1, {n}]"));
        }
        if red.l2_paths == 0 || red.l2_steps == 0 {
            return err("reduction", "l2_paths", "L² paths and steps must be positive".into());
        }
        let pr = &self.pricing;
        if pr.maturities.is_empty() {
            return err("pricing", "maturities", "list at least one maturity".into());
        }
        if let Some(&t) = pr.maturities.iter().find(|&&t| !(t > 0.0 && t.is_finite())) {
            return err("pricing", "maturities", format!("maturity {t} must be positive"));
        }
        if let Some(&t) = pr.maturities.iter().find(|&&t| t > fit.horizon) {
            return err("pricing", "maturities", format!("maturity {t} beyond the fitted horizon {}", fit.horizon));
        }
        if pr.paths < 2 {
            return err("pricing", "paths", "need at least 2 paths".into());
        }
        if pr.steps_per_unit == 0 {
            return err("pricing", "steps_per_unit", "must be positive".into());
        }
        if let Some(orders) = &pr.orders {
            if let Some(&k) = orders.iter().find(|&&k| k == 0 || k > n) {
                return err("pricing", "orders", format!("order {k} outside [1, {n}]"));
            }
            if let Some(&k) = orders.iter().find(|k| !red.orders.contains(k)) {
                return err("pricing", "orders", format!("order {k} is not among reduction.orders"));
            }
        }
        Ok(())
    }

    /// Canonical TOML text of a section, the input to artifact stamps.
    pub fn section_text(&self, section: &str) -> String {
        let text = match section {
            "model" => match self.model.kind {
                ModelKind::Bergomi => toml::to_string(&self.bergomi),
                ModelKind::RoughBergomi => toml::to_string(&self.rough_bergomi),
            }
            .map(|params| format!("kind = {:?}\n{params}", self.model.kind)),
            "signature" => toml::to_string(&self.signature),
            "fitting" => toml::to_string(&self.fitting),
            "reduction" => toml::to_string(&self.reduction),
            "pricing" => toml::to_string(&self.pricing),
            _ => panic!("unknown section {section}"),
        };
        text.unwrap_or_else(|e| panic!("serializing {section}: {e}"))
    }
}

/// Sorted, duplicate-free copy of an order list.
pub fn dedup_orders(orders: &[usize]) -> Vec<usize> {
    let mut v = orders.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    pub const BERGOMI: &str = r#"
[model]
kind = "bergomi"

[signature]
d = 4
m = 5
covariance = "model"

[fitting]
paths = 100
steps = 64
stride = 8

[reduction]
orders = [1, 4, 11]

[pricing]
maturities = [0.0833333333, 0.5, 1.0]
paths = 1000

[io]
out = "run"
seed = 7
"#;

    #[test]
    fn parses_example() {
        let cfg = PipelineConfig::parse(BERGOMI, "cfg").unwrap();
        assert_eq!(cfg.state_dim(), 1365);
        assert_eq!(cfg.bergomi, BergomiSection::default());
        assert_eq!(cfg.reduction.rank_tol, 1e-12);
        assert_eq!(cfg.pricing_orders(), &[1, 4, 11]);
        assert_eq!(cfg.covariance().unwrap().size(), 3);
    }

    #[test]
    fn missing_covariance_names_field_and_line() {
        let src = BERGOMI.replace("covariance = \"model\"\n", "");
        let e = PipelineConfig::parse(&src, "cfg").unwrap_err().to_string();
        assert!(e.contains("signature.covariance"), "{e}");
        let header = src.lines().position(|l| l.trim() == "[signature]").unwrap() + 1;
        assert!(e.starts_with(&format!("cfg:{header}:")), "{e}");
    }

    #[test]
    fn unknown_key_is_line_precise() {
        let src = BERGOMI.replace("stride = 8", "stride = 8\nstrid = 3");
        let e = PipelineConfig::parse(&src, "cfg").unwrap_err().to_string();
        let line = src.lines().position(|l| l.starts_with("strid ")).unwrap() + 1;
        assert!(e.starts_with(&format!("cfg:{line}:")), "{e}");
        assert!(e.contains("strid"), "{e}");
    }

    #[test]
    fn semantic_errors_point_at_key() {
        let src = BERGOMI.replace("orders = [1, 4, 11]", "orders = [1, 4, 2000]");
        let e = PipelineConfig::parse(&src, "cfg").unwrap_err().to_string();
        let line = src.lines().position(|l| l.starts_with("orders")).unwrap() + 1;
        assert!(e.starts_with(&format!("cfg:{line}: reduction.orders")), "{e}");

        let src = BERGOMI.replace("d = 4", "d = 3");
        let e = PipelineConfig::parse(&src, "cfg").unwrap_err().to_string();
        assert!(e.contains("signature.d"), "{e}");

        let src = BERGOMI.replace("0.5, 1.0]", "0.5, 1.5]");
        let e = PipelineConfig::parse(&src, "cfg").unwrap_err().to_string();
        assert!(e.contains("pricing.maturities"), "{e}");

        let src = BERGOMI.replace("paths = 1000", "paths = 1000\norders = [4, 5]");
        let e = PipelineConfig::parse(&src, "cfg").unwrap_err().to_string();
        let line = src.lines().position(|l| l == "orders = [4, 5]").unwrap() + 1;
        assert!(e.starts_with(&format!("cfg:{line}: pricing.orders: order 5")), "{e}");

        let src = BERGOMI.replace("covariance = \"model\"", "covariance = [1.0, 0.2, 0.2, 1.0]");
        let e = PipelineConfig::parse(&src, "cfg").unwrap_err().to_string();
        assert!(e.contains("signature.covariance"), "{e}");
    }

    #[test]
    fn explicit_covariance() {
        let src = BERGOMI.replace(
            "covariance = \"model\"",
            "covariance = [1.0, 0.1, 0.0, 0.1, 1.0, 0.0, 0.0, 0.0, 1.0]",
        );
        let cfg = PipelineConfig::parse(&src, "cfg").unwrap();
        assert_eq!(cfg.covariance().unwrap().k(2, 3), 0.1);
    }

    #[test]
    fn section_text_tracks_changes() {
        let a = PipelineConfig::parse(BERGOMI, "cfg").unwrap();
        let b = PipelineConfig::parse(&BERGOMI.replace("paths = 1000", "paths = 2000"), "cfg").unwrap();
        for section in ["model", "signature", "fitting", "reduction"] {
            assert_eq!(a.section_text(section), b.section_text(section));
        }
        assert_ne!(a.section_text("pricing"), b.section_text("pricing"));
    }
}
