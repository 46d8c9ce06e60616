//! Consolidated figures, their data, and the run summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use crate::config::{ModelKind, PipelineConfig};
use crate::pipeline::{fmt, read_csv, BALANCE, IV_ERRORS, L2, SMILES, SPECTRUM};
use crate::svg::{Chart, Series};

pub const REPORT_DIR: &str = "report";

/// Relative L² error accepted as exact at the balanced rank.
pub const EXACT_L2: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct L2Row {
    pub order: usize,
    pub error: f64,
    pub std_error: f64,
    pub relative: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SmileRow {
    pub system: String,
    pub maturity: f64,
    pub strike: f64,
    pub price: f64,
    pub std_error: f64,
    pub iv: Option<f64>,
    pub iv_std_error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IvRow {
    pub order: usize,
    pub maturity: f64,
    pub strike: f64,
    pub relative_error: Option<f64>,
    pub error_bar: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunData {
    pub n: usize,
    pub rank: usize,
    pub cutoff_level: f64,
    pub cutoff_index: usize,
    /// `σ_k / σ_1`.
    pub spectrum: Vec<f64>,
    pub l2: Vec<L2Row>,
    pub smiles: Vec<SmileRow>,
    pub iv_errors: Vec<IvRow>,
}

const REQUIRED: [(&str, &str); 5] =
    [(SPECTRUM, "gramians"), (BALANCE, "gramians"), (L2, "reduce"), (SMILES, "price"), (IV_ERRORS, "price")];

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| anyhow!("{what}: cannot parse {s:?}: {e}"))
}

fn req(v: Option<f64>, what: &str) -> Result<f64> {
    v.ok_or_else(|| anyhow!("{what}: empty cell"))
}

impl RunData {
    pub fn load(dir: &Path) -> Result<Self> {
        let missing: Vec<String> = REQUIRED
            .iter()
            .filter(|(f, _)| !dir.join(f).exists())
            .map(|(f, cmd)| format!("  {f} (from `sigred {cmd}`)"))
            .collect();
        if !missing.is_empty() {
            bail!("{} lacks required artifacts:\n{}", dir.display(), missing.join("\n"));
        }
        let balance = fs::read_to_string(dir.join(BALANCE)).with_context(|| format!("reading {BALANCE}"))?;
        let kv: BTreeMap<&str, &str> = balance.lines().filter_map(|l| l.split_once(' ')).collect();
        let get = |k: &str| kv.get(k).copied().ok_or_else(|| anyhow!("{BALANCE}: missing {k}"));

        let spec = read_csv(&dir.join(SPECTRUM), "gramians")?;
        let spectrum = spec.floats("relative")?.into_iter().map(|v| req(v, SPECTRUM)).collect::<Result<_>>()?;

        let t = read_csv(&dir.join(L2), "reduce")?;
        let (e, se, rel) = (t.floats("l2_error")?, t.floats("stderr")?, t.floats("relative_error")?);
        let oc = t.column("n_tilde")?;
        let l2 = (0..t.rows.len())
            .map(|i| {
                Ok(L2Row {
                    order: parse(&t.rows[i][oc], L2)?,
                    error: req(e[i], L2)?,
                    std_error: req(se[i], L2)?,
                    relative: req(rel[i], L2)?,
                })
            })
            .collect::<Result<_>>()?;

        let t = read_csv(&dir.join(SMILES), "price")?;
        let sc = t.column("system")?;
        let (mt, k, p, se, iv, ivse) = (
            t.floats("T")?,
            t.floats("K")?,
            t.floats("price")?,
            t.floats("stderr")?,
            t.floats("iv")?,
            t.floats("iv_stderr")?,
        );
        let smiles = (0..t.rows.len())
            .map(|i| {
                Ok(SmileRow {
                    system: t.rows[i][sc].clone(),
                    maturity: req(mt[i], SMILES)?,
                    strike: req(k[i], SMILES)?,
                    price: req(p[i], SMILES)?,
                    std_error: req(se[i], SMILES)?,
                    iv: iv[i],
                    iv_std_error: ivse[i],
                })
            })
            .collect::<Result<_>>()?;

        let t = read_csv(&dir.join(IV_ERRORS), "price")?;
        let oc = t.column("n_tilde")?;
        let (mt, k, re, bar) = (t.floats("T")?, t.floats("K")?, t.floats("relative_error")?, t.floats("error_bar")?);
        let iv_errors = (0..t.rows.len())
            .map(|i| {
                Ok(IvRow {
                    order: parse(&t.rows[i][oc], IV_ERRORS)?,
                    maturity: req(mt[i], IV_ERRORS)?,
                    strike: req(k[i], IV_ERRORS)?,
                    relative_error: re[i],
                    error_bar: bar[i],
                })
            })
            .collect::<Result<_>>()?;

        Ok(RunData {
            n: parse(get("n")?, BALANCE)?,
            rank: parse(get("rank")?, BALANCE)?,
            cutoff_level: parse(get("cutoff_level")?, BALANCE)?,
            cutoff_index: parse(get("cutoff_index")?, BALANCE)?,
            spectrum,
            l2,
            smiles,
            iv_errors,
        })
    }

    pub fn maturities(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.smiles.iter().map(|r| r.maturity).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub fn priced_orders(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.iv_errors.iter().map(|r| r.order).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Largest IV relative error of one order over every strike and maturity,
    /// with the number of strikes lacking an implied volatility.
    pub fn max_iv_error(&self, order: usize) -> (f64, usize) {
        let rows = self.iv_errors.iter().filter(|r| r.order == order);
        let mut max: f64 = 0.0;
        let mut missing = 0;
        for r in rows {
            match r.relative_error {
                Some(e) => max = max.max(e),
                None => missing += 1,
            }
        }
        (max, missing)
    }

    /// Strikes of one order whose IV error exceeds the combined error bar.
    pub fn outside_bars(&self, order: usize) -> usize {
        self.iv_errors
            .iter()
            .filter(|r| r.order == order)
            .filter(|r| matches!((r.relative_error, r.error_bar), (Some(e), Some(b)) if e > b))
            .count()
    }

    pub fn l2_at(&self, order: usize) -> Option<&L2Row> {
        self.l2.iter().find(|r| r.order == order)
    }

    /// Order that represents the cut-off index: `k*` itself, or the rank
    /// when `k*` lies beyond it.
    pub fn cutoff_order(&self) -> usize {
        self.cutoff_index.min(self.rank)
    }
}

/// One checked statement about a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub target: String,
    pub observed: String,
    pub pass: bool,
}

impl Check {
    fn new(name: &str, target: impl Into<String>, observed: impl Into<String>, pass: bool) -> Self {
        Check { name: name.into(), target: target.into(), observed: observed.into(), pass }
    }

    pub fn line(&self) -> String {
        format!(
            "[{}] {}: target {}; observed {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.target,
            self.observed
        )
    }
}

/// σ strictly decreasing up to the rank.
pub fn check_spectrum_decay(d: &RunData) -> Check {
    let s = &d.spectrum[..d.rank.min(d.spectrum.len())];
    let bad = s.windows(2).position(|w| !(w[1] < w[0]));
    let observed = match bad {
        Some(i) => format!("σ_{} ≥ σ_{}", i + 2, i + 1),
        None => format!("strict over k = 1..{}", s.len()),
    };
    Check::new("spectrum decay", "σ_k strictly decreasing up to the rank", observed, bad.is_none())
}

/// Each step of the L² curve may rise by at most twice the combined
/// standard error of the two estimates.
pub fn check_l2_monotone(d: &RunData) -> Check {
    let mut worst = f64::NEG_INFINITY;
    let mut at = 0;
    for w in d.l2.windows(2) {
        let slack = 2.0 * (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        let excess = (w[1].error - w[0].error) - slack;
        if excess > worst {
            worst = excess;
            at = w[1].order;
        }
    }
    let pass = d.l2.len() < 2 || worst <= 0.0;
    let observed = if d.l2.len() < 2 {
        "single order".to_string()
    } else {
        format!("largest rise beyond 2 SE {:.3e} at ñ = {at}", worst)
    };
    Check::new("L² error monotone in ñ", "nonincreasing within 2 standard errors", observed, pass)
}

pub fn check_exact_at_rank(d: &RunData) -> Check {
    let rel = d.l2_at(d.rank).map(|r| r.relative).unwrap_or(f64::INFINITY);
    let outside = d.outside_bars(d.rank);
    let (iv, _) = d.max_iv_error(d.rank);
    Check::new(
        "exactness at the rank",
        format!("relative L² ≤ {EXACT_L2:e} and IV errors inside error bars at ñ = {}", d.rank),
        format!("relative L² {rel:.3e}, max IV error {iv:.3e}, {outside} strikes outside bars"),
        rel <= EXACT_L2 && outside == 0 && d.priced_orders().contains(&d.rank),
    )
}

/// The largest IV error over the smile shrinks from the smallest priced
/// order to the rank, and no step grows by more than the widest error bar.
pub fn check_smile_convergence(d: &RunData) -> Check {
    let orders = d.priced_orders();
    let widest = d.iv_errors.iter().filter_map(|r| r.error_bar).fold(0.0, f64::max);
    let maxes: Vec<f64> = orders.iter().map(|&k| d.max_iv_error(k).0).collect();
    let shrinks = maxes.len() >= 2 && maxes[maxes.len() - 1] < maxes[0];
    let steps_ok = maxes.windows(2).all(|w| w[1] <= w[0] + widest);
    let observed = orders
        .iter()
        .zip(&maxes)
        .map(|(k, m)| format!("ñ={k}: {m:.2e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Check::new(
        "smile convergence",
        format!("max IV error decreasing in ñ up to the widest error bar {widest:.2e}"),
        observed,
        shrinks && steps_ok,
    )
}

/// The property core: binding whatever the fitted functional.
pub fn property_checks(d: &RunData) -> Vec<Check> {
    vec![check_spectrum_decay(d), check_l2_monotone(d), check_exact_at_rank(d), check_smile_convergence(d)]
}

fn iv_check(d: &RunData, name: &str, order: usize, bound: f64, note: &str) -> Check {
    if !d.priced_orders().contains(&order) {
        return Check::new(name, format!("≤ {bound:e} {note}"), format!("ñ = {order} not priced"), false);
    }
    let (max, missing) = d.max_iv_error(order);
    Check::new(
        name,
        format!("≤ {bound:e} {note}"),
        format!("max {max:.3e} over all strikes ({missing} without IV)"),
        max <= bound && missing == 0,
    )
}

/// Published reference figures for the configured model. They depend on the
/// output functional, so a fitted functional may legitimately miss them.
pub fn reference_targets(kind: ModelKind, d: &RunData) -> Vec<Check> {
    match kind {
        ModelKind::Bergomi => {
            let k = d.cutoff_index;
            let mut v = vec![Check::new(
                "cut-off index k*",
                format!("σ_k* < {:e}·σ_1 with k* in 20..=40 (reference 28)", d.cutoff_level),
                format!("k* = {k}, rank {}", d.rank),
                (20..=40).contains(&k),
            )];
            let ko = d.cutoff_order();
            let outside = d.outside_bars(ko);
            v.push(Check::new(
                "IV error at k*",
                "inside combined error bars at every strike",
                format!("ñ = {ko}: {outside} strikes outside"),
                outside == 0 && d.priced_orders().contains(&ko),
            ));
            v.push(iv_check(d, "IV error at ñ = 11", 11, 1e-2, "(reference order 1e-4)"));
            v
        }
        ModelKind::RoughBergomi => {
            let k = d.cutoff_index;
            let mut v = vec![Check::new(
                "cut-off index k*",
                format!("σ_k < {:e}·σ_1 for k ≥ k*, k* ≤ 70 (reference 56)", d.cutoff_level),
                format!("k* = {k}, rank {}", d.rank),
                k <= 70,
            )];
            let above: Vec<&L2Row> = d.l2.iter().filter(|r| r.order > 10).collect();
            let worst = above.iter().map(|r| r.relative).fold(0.0, f64::max);
            v.push(Check::new(
                "L² error for ñ > 10",
                "relative error < 1e-2",
                format!("max {worst:.3e} over ñ = {:?}", above.iter().map(|r| r.order).collect::<Vec<_>>()),
                !above.is_empty() && worst < 1e-2,
            ));
            v.push(iv_check(d, "IV error at ñ = 15", 15, 1e-2, ""));
            v
        }
    }
}

fn write_pair(dir: &Path, stem: &str, csv: &str, chart: &Chart) -> Result<()> {
    fs::write(dir.join(format!("{stem}.csv")), csv).with_context(|| format!("writing {stem}.csv"))?;
    fs::write(dir.join(format!("{stem}.svg")), chart.to_svg()).with_context(|| format!("writing {stem}.svg"))
}

fn cell(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// Wide table: one `x` column, one column per series, blank where absent.
fn wide_csv(x_name: &str, series: &[Series]) -> String {
    let mut xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let mut out = String::new();
    let names: Vec<&str> = series.iter().map(|s| s.label.as_str()).collect();
    let _ = writeln!(out, "{x_name},{}", names.join(","));
    for x in xs {
        let cells: Vec<String> =
            series.iter().map(|s| cell(s.points.iter().find(|p| p.0 == x).map(|p| p.1))).collect();
        let _ = writeln!(out, "{},{}", fmt(x), cells.join(","));
    }
    out
}

fn series_name(order: &str) -> String {
    if order == "full" {
        "full".into()
    } else {
        format!("n{order}")
    }
}

pub fn write_report(dir: &Path, cfg: &PipelineConfig) -> Result<()> {
    let d = RunData::load(dir)?;
    let out = dir.join(REPORT_DIR);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let spectrum = Series {
        label: "sigma_rel".into(),
        points: d.spectrum.iter().enumerate().map(|(k, s)| ((k + 1) as f64, *s)).collect(),
    };
    let chart = Chart {
        title: "Normalized singular values".into(),
        x_label: "k".into(),
        y_label: "σ_k / σ_1".into(),
        log_x: false,
        log_y: true,
        series: vec![spectrum],
    };
    write_pair(&out, "spectrum", &wide_csv("k", &chart.series), &chart)?;

    let l2 = vec![
        Series { label: "relative_l2".into(), points: d.l2.iter().map(|r| (r.order as f64, r.relative)).collect() },
        Series { label: "l2".into(), points: d.l2.iter().map(|r| (r.order as f64, r.error)).collect() },
        Series { label: "std_error".into(), points: d.l2.iter().map(|r| (r.order as f64, r.std_error)).collect() },
    ];
    let chart = Chart {
        title: "L² output error of reduced systems".into(),
        x_label: "ñ".into(),
        y_label: "error".into(),
        log_x: false,
        log_y: true,
        series: l2,
    };
    write_pair(&out, "l2", &wide_csv("n_tilde", &chart.series), &chart)?;

    for (i, t) in d.maturities().into_iter().enumerate() {
        let mut systems: Vec<String> = Vec::new();
        for r in d.smiles.iter().filter(|r| r.maturity == t) {
            if !systems.contains(&r.system) {
                systems.push(r.system.clone());
            }
        }
        let smiles: Vec<Series> = systems
            .iter()
            .map(|s| Series {
                label: series_name(s),
                points: d
                    .smiles
                    .iter()
                    .filter(|r| r.maturity == t && &r.system == s)
                    .filter_map(|r| r.iv.map(|v| (r.strike, v)))
                    .collect(),
            })
            .collect();
        let chart = Chart {
            title: format!("Implied volatility, T = {t:.4}"),
            x_label: "strike".into(),
            y_label: "implied volatility".into(),
            log_x: false,
            log_y: false,
            series: smiles,
        };
        write_pair(&out, &format!("smile_T{}", i + 1), &wide_csv("strike", &chart.series), &chart)?;

        let mut errors: Vec<Series> = d
            .priced_orders()
            .into_iter()
            .map(|k| Series {
                label: format!("n{k}"),
                points: d
                    .iv_errors
                    .iter()
                    .filter(|r| r.maturity == t && r.order == k)
                    .filter_map(|r| r.relative_error.map(|e| (r.strike, e)))
                    .collect(),
            })
            .collect();
        errors.push(Series {
            label: "error_bar_rank".into(),
            points: d
                .iv_errors
                .iter()
                .filter(|r| r.maturity == t && r.order == d.rank)
                .filter_map(|r| r.error_bar.map(|b| (r.strike, b)))
                .collect(),
        });
        let chart = Chart {
            title: format!("IV relative error, T = {t:.4}"),
            x_label: "strike".into(),
            y_label: "relative error".into(),
            log_x: false,
            log_y: true,
            series: errors,
        };
        write_pair(&out, &format!("iv_error_T{}", i + 1), &wide_csv("strike", &chart.series), &chart)?;
    }

    let mut s = String::new();
    let _ = writeln!(s, "model {:?}", cfg.model.kind);
    let _ = writeln!(s, "state dimension n = {}", d.n);
    let _ = writeln!(s, "balanced rank {}", d.rank);
    let _ = writeln!(s, "cut-off index k* = {} (first σ_k < {:e}·σ_1)", d.cutoff_index, d.cutoff_level);
    let _ = writeln!(s);
    let _ = writeln!(s, "L² error by order:");
    for r in &d.l2 {
        let _ = writeln!(s, "  ñ = {:>4}: {:.4e} ± {:.1e} (relative {:.4e})", r.order, r.error, r.std_error, r.relative);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "largest IV relative error by order:");
    for k in d.priced_orders() {
        let (m, missing) = d.max_iv_error(k);
        let _ = writeln!(s, "  ñ = {k:>4}: {m:.4e}, {} strikes outside error bars, {missing} without IV", d.outside_bars(k));
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "properties:");
    for c in property_checks(&d) {
        let _ = writeln!(s, "  {}", c.line());
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "reference targets (depend on the output functional):");
    for c in reference_targets(cfg.model.kind, &d) {
        let _ = writeln!(s, "  {}", c.line());
    }
    fs::write(out.join("summary.txt"), s).context("writing summary.txt")?;
    log::info!("report written to {}", out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> RunData {
        let iv = |order, e: f64, b: f64| IvRow { order, maturity: 1.0, strike: 1.0, relative_error: Some(e), error_bar: Some(b) };
        RunData {
            n: 40,
            rank: 8,
            cutoff_level: 1e-8,
            cutoff_index: 9,
            spectrum: vec![1.0, 0.5, 0.1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-14],
            l2: vec![
                L2Row { order: 1, error: 0.1, std_error: 1e-3, relative: 0.1 },
                L2Row { order: 4, error: 0.01, std_error: 1e-4, relative: 0.01 },
                L2Row { order: 8, error: 1e-9, std_error: 1e-10, relative: 1e-9 },
            ],
            smiles: vec![],
            iv_errors: vec![iv(1, 0.05, 1e-3), iv(4, 0.004, 1e-3), iv(8, 1e-12, 1e-3)],
        }
    }

    #[test]
    fn property_core_passes_on_clean_data() {
        let d = data();
        for c in property_checks(&d) {
            assert!(c.pass, "{}", c.line());
        }
        assert_eq!(d.cutoff_order(), 8);
    }

    #[test]
    fn violations_are_detected() {
        let mut d = data();
        d.l2[1].error = 0.2;
        assert!(!check_l2_monotone(&d).pass);
        let mut d = data();
        d.spectrum[3] = 0.1;
        assert!(!check_spectrum_decay(&d).pass);
        let mut d = data();
        d.iv_errors[2].relative_error = Some(0.01);
        assert!(!check_exact_at_rank(&d).pass);
        let mut d = data();
        d.iv_errors[2].relative_error = Some(0.06);
        assert!(!check_smile_convergence(&d).pass);
    }

    #[test]
    fn reference_targets_report_misses() {
        let d = data();
        let checks = reference_targets(ModelKind::Bergomi, &d);
        assert!(!checks[0].pass);
        assert!(checks[1].pass);
        assert!(!checks[2].pass);
        assert!(checks[2].observed.contains("not priced"));
    }

    #[test]
    fn empty_directory_lists_required_files() {
        let dir = tempfile::tempdir().unwrap();
        let e = RunData::load(dir.path()).unwrap_err().to_string();
        for (f, cmd) in REQUIRED {
            assert!(e.contains(f) && e.contains(&format!("sigred {cmd}")), "{e}");
        }
    }

    #[test]
    fn wide_csv_blanks_missing_points() {
        let s = vec![
            Series { label: "a".into(), points: vec![(1.0, 0.5), (2.0, 0.25)] },
            Series { label: "b".into(), points: vec![(2.0, 1.0)] },
        ];
        assert_eq!(wide_csv("x", &s), "x,a,b\n1,0.5,\n2,0.25,1\n");
    }
}
