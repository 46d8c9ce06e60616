//! The file-based pipeline behind each subcommand.
//!
//! ```text
//! simulate  → paths.bin
//! fit       → fit.txt
//! build     → system.txt
//! gramians  → gramian_P.bin gramian_Q.bin spectrum.csv balance.txt
//! reduce    → reduced/order_<k>.txt l2.csv
//! price     → smiles.csv iv_errors.csv
//! report    → report/
//! ```

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use sigred_core::balanced::{balance_pair, reduce, BalancingResult, ReducedSystem};
use sigred_core::gramians::GramianPair;
use sigred_core::io::{read_gramian, read_path_batch, read_system, write_gramian, write_path_batch, write_reduced, write_system, StoredSystem};
use sigred_core::market::{fit_signature_model, simulate_bergomi, simulate_rough_bergomi, FitConfig, FittedSignatureModel, PathBatch};
use sigred_core::pricing::{iv_error_report, l2_output_error, strike_grid, terminal_outputs, IVSmile, SimulationGrid};
use sigred_core::{linalg, BasisOrder, LinearSde, SignatureSde, Word};

use crate::config::{dedup_orders, ModelKind, PipelineConfig};
use crate::stamp::{check_input, digest, is_current, write_stamp};

/// Relative level that defines the spectrum cut-off index `k*`.
pub const CUTOFF_LEVEL: f64 = 1e-8;

pub const PATHS: &str = "paths.bin";
pub const FIT: &str = "fit.txt";
pub const SYSTEM: &str = "system.txt";
pub const GRAMIAN_P: &str = "gramian_P.bin";
pub const GRAMIAN_Q: &str = "gramian_Q.bin";
pub const SPECTRUM: &str = "spectrum.csv";
pub const BALANCE: &str = "balance.txt";
pub const REDUCED_DIR: &str = "reduced";
pub const L2: &str = "l2.csv";
pub const SMILES: &str = "smiles.csv";
pub const IV_ERRORS: &str = "iv_errors.csv";

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    pub seed: u64,
    pub force: bool,
}

/// Shortest round-trip text of a float.
pub fn fmt(x: f64) -> String {
    format!("{x}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

/// Writes through a temporary name so an interrupted run leaves no partial
/// artifact under the final name.
fn write_artifact(path: &Path, stamp: &str, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("partial");
    {
        let mut w = create(&tmp)?;
        body(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    write_stamp(path, stamp)
}

pub fn reduced_name(order: usize) -> String {
    format!("{REDUCED_DIR}/order_{order}.txt")
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig, out: Option<PathBuf>, seed: Option<u64>, force: bool) -> Self {
        let out = out.unwrap_or_else(|| cfg.io.out.clone());
        let seed = seed.unwrap_or(cfg.io.seed);
        Pipeline { cfg, out, seed, force }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn seed_text(&self) -> String {
        format!("seed={}", self.seed)
    }

    pub fn simulate_stamp(&self) -> String {
        let f = &self.cfg.fitting;
        let grid = format!("paths={} steps={} horizon={:?}", f.paths, f.steps, f.horizon);
        digest(&["simulate", &self.cfg.section_text("model"), &grid, &self.seed_text()])
    }

    pub fn fit_stamp(&self) -> String {
        let sig = format!("d={} m={}", self.cfg.signature.d, self.cfg.signature.m);
        digest(&["fit", &self.simulate_stamp(), &sig, &self.cfg.section_text("fitting")])
    }

    /// A supplied functional replaces the fit; its content enters the stamp.
    pub fn build_stamp(&self) -> Result<String> {
        let source = match &self.cfg.signature.functional {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading functional {}", p.display()))?;
                digest(&["functional", &text])
            }
            None => self.fit_stamp(),
        };
        Ok(digest(&["build", &source, &self.cfg.section_text("model"), &self.cfg.section_text("signature")]))
    }

    pub fn gramians_stamp(&self) -> Result<String> {
        let red = &self.cfg.reduction;
        let knobs = format!("horizon={} rank_tol={}", red.horizon, red.rank_tol);
        Ok(digest(&["gramians", &self.build_stamp()?, &knobs]))
    }

    pub fn reduce_stamp(&self) -> Result<String> {
        Ok(digest(&["reduce", &self.gramians_stamp()?, &self.cfg.section_text("reduction"), &self.seed_text()]))
    }

    pub fn price_stamp(&self) -> Result<String> {
        Ok(digest(&["price", &self.reduce_stamp()?, &self.cfg.section_text("pricing"), &self.seed_text()]))
    }

    fn up_to_date(&self, outputs: &[&str], stamp: &str) -> bool {
        if self.force {
            return false;
        }
        let current = outputs.iter().all(|o| is_current(&self.path(o), stamp));
        if current {
            log::info!("{} up to date", outputs.join(", "));
        }
        current
    }

    pub fn simulate(&self) -> Result<()> {
        let stamp = self.simulate_stamp();
        if self.up_to_date(&[PATHS], &stamp) {
            return Ok(());
        }
        let f = &self.cfg.fitting;
        let batch = match self.cfg.model.kind {
            ModelKind::Bergomi => simulate_bergomi(&self.cfg.bergomi.to_model(), f.horizon, f.steps, f.paths, self.seed)?,
            ModelKind::RoughBergomi => {
                simulate_rough_bergomi(&self.cfg.rough_bergomi.to_model(), f.horizon, f.steps, f.paths, self.seed)?
            }
        };
        write_artifact(&self.path(PATHS), &stamp, |w| Ok(write_path_batch(w, &batch)?))?;
        log::info!("simulated {} paths of {} steps", f.paths, f.steps);
        Ok(())
    }

    pub fn load_paths(&self) -> Result<PathBatch> {
        let p = self.path(PATHS);
        check_input(&p, &self.simulate_stamp(), "simulate", self.force)?;
        Ok(read_path_batch(&mut open(&p)?)?)
    }

    pub fn fit(&self) -> Result<()> {
        let stamp = self.fit_stamp();
        if self.up_to_date(&[FIT], &stamp) {
            return Ok(());
        }
        let batch = self.load_paths()?;
        let f = &self.cfg.fitting;
        let fc = FitConfig {
            lambda: f.lambda,
            train_fraction: f.train_fraction,
            stride: f.stride,
            ..FitConfig::new(self.cfg.signature.d, self.cfg.signature.m)
        };
        let model = fit_signature_model(&batch, &fc)?;
        log::info!(
            "fit: lambda {:e}, validation RMSE {:.3e} ({:.3e} relative)",
            model.lambda(),
            model.validation_rmse(),
            model.validation_relative_rmse()
        );
        write_artifact(&self.path(FIT), &stamp, |w| write_fit(w, &model))
    }

    fn output_functional(&self) -> Result<Vec<f64>> {
        let order = BasisOrder::new(self.cfg.signature.d, self.cfg.signature.m)?;
        match &self.cfg.signature.functional {
            Some(p) => read_functional(&mut open(p)?, &order).with_context(|| format!("in {}", p.display())),
            None => {
                let p = self.path(FIT);
                check_input(&p, &self.fit_stamp(), "fit", self.force)?;
                read_functional(&mut open(&p)?, &order).with_context(|| format!("in {}", p.display()))
            }
        }
    }

    pub fn build(&self) -> Result<()> {
        let stamp = self.build_stamp()?;
        if self.up_to_date(&[SYSTEM], &stamp) {
            return Ok(());
        }
        let coeffs = self.output_functional()?;
        let sig = &self.cfg.signature;
        let l = linalg::from_rows(1, coeffs.len(), &coeffs);
        let sys = SignatureSde::assemble(sig.d, sig.m, self.cfg.covariance()?, l, None)?;
        write_artifact(&self.path(SYSTEM), &stamp, |w| Ok(write_system(w, &sys)?))?;
        log::info!("built system with n = {}", sys.n());
        Ok(())
    }

    pub fn load_system(&self) -> Result<SignatureSde> {
        let p = self.path(SYSTEM);
        check_input(&p, &self.build_stamp()?, "build", self.force)?;
        match read_system(open(&p)?).with_context(|| format!("in {}", p.display()))? {
            StoredSystem::Full(s) => Ok(s),
            StoredSystem::Reduced { .. } => bail!("{} holds a reduced system", p.display()),
        }
    }

    pub fn gramians(&self) -> Result<()> {
        let stamp = self.gramians_stamp()?;
        let outputs = [GRAMIAN_P, GRAMIAN_Q, SPECTRUM, BALANCE];
        if self.up_to_date(&outputs, &stamp) {
            return Ok(());
        }
        let sys = self.load_system()?;
        let horizon = self.cfg.reduction.horizon;
        let gp = GramianPair::compute(&sys, horizon)?;
        let bal = balance_pair(&gp, self.cfg.reduction.rank_tol)?;
        write_artifact(&self.path(GRAMIAN_P), &stamp, |w| Ok(write_gramian(w, gp.p(), horizon)?))?;
        write_artifact(&self.path(GRAMIAN_Q), &stamp, |w| Ok(write_gramian(w, gp.q(), horizon)?))?;
        write_artifact(&self.path(SPECTRUM), &stamp, |w| write_spectrum(w, &bal))?;
        write_artifact(&self.path(BALANCE), &stamp, |w| {
            writeln!(w, "n {}", sys.n())?;
            writeln!(w, "horizon {}", fmt(horizon))?;
            writeln!(w, "rank_tol {}", fmt(bal.rank_tol))?;
            writeln!(w, "rank {}", bal.rank())?;
            writeln!(w, "cutoff_level {}", fmt(CUTOFF_LEVEL))?;
            writeln!(w, "cutoff_index {}", bal.cutoff_index(CUTOFF_LEVEL))?;
            Ok(())
        })?;
        log::info!("balanced rank {}, cut-off index {}", bal.rank(), bal.cutoff_index(CUTOFF_LEVEL));
        Ok(())
    }

    fn load_balancing(&self, sys: &SignatureSde) -> Result<BalancingResult> {
        let stamp = self.gramians_stamp()?;
        let pp = self.path(GRAMIAN_P);
        let qp = self.path(GRAMIAN_Q);
        check_input(&pp, &stamp, "gramians", self.force)?;
        check_input(&qp, &stamp, "gramians", self.force)?;
        let (p, h) = read_gramian(&mut open(&pp)?)?;
        let (q, _) = read_gramian(&mut open(&qp)?)?;
        if p.nrows() != sys.n() {
            bail!("{} has size {}, the system has n = {}", pp.display(), p.nrows(), sys.n());
        }
        let gp = GramianPair::new(p, q, h)?;
        Ok(balance_pair(&gp, self.cfg.reduction.rank_tol)?)
    }

    /// Orders actually reduced: the configured list clipped to the rank, plus
    /// the rank itself.
    pub fn effective_orders(requested: &[usize], rank: usize) -> Vec<usize> {
        let mut v: Vec<usize> = requested.iter().copied().filter(|&k| k <= rank).collect();
        v.push(rank);
        dedup_orders(&v)
    }

    pub fn reduce(&self) -> Result<()> {
        let stamp = self.reduce_stamp()?;
        if self.up_to_date(&[L2], &stamp) {
            return Ok(());
        }
        let sys = self.load_system()?;
        let bal = self.load_balancing(&sys)?;
        let red = &self.cfg.reduction;
        for &k in red.orders.iter().filter(|&&k| k > bal.rank()) {
            log::warn!("order {k} exceeds the balanced rank {}; skipped", bal.rank());
        }
        let orders = Self::effective_orders(&red.orders, bal.rank());
        let reduced: Vec<ReducedSystem> = orders.iter().map(|&k| reduce(&sys, &bal, k)).collect::<sigred_core::Result<_>>()?;
        for (k, r) in orders.iter().zip(&reduced) {
            write_artifact(&self.path(&reduced_name(*k)), &stamp, |w| Ok(write_reduced(w, r, sys.m())?))?;
        }
        let grid = SimulationGrid::new(red.horizon, red.l2_steps, red.l2_paths, self.seed.wrapping_add(1))?;
        let refs: Vec<&dyn LinearSde> = reduced.iter().map(|r| r as &dyn LinearSde).collect();
        let errors = l2_output_error(&sys, &refs, &grid)?;
        write_artifact(&self.path(L2), &stamp, |w| {
            writeln!(w, "n_tilde,l2_error,stderr,relative_error,output_norm")?;
            for (k, e) in orders.iter().zip(&errors) {
                writeln!(w, "{k},{},{},{},{}", fmt(e.error), fmt(e.std_error), fmt(e.relative()), fmt(e.output_norm))?;
            }
            Ok(())
        })?;
        log::info!("reduced to orders {orders:?}");
        Ok(())
    }

    /// Reduced orders present on disk for this configuration, ascending.
    pub fn reduced_orders(&self) -> Result<Vec<usize>> {
        let l2 = read_csv(&self.path(L2), "reduce")?;
        l2.rows.iter().map(|r| r[0].parse::<usize>().map_err(|e| anyhow!("{L2}: {e}"))).collect()
    }

    pub fn price(&self) -> Result<()> {
        let stamp = self.price_stamp()?;
        if self.up_to_date(&[SMILES, IV_ERRORS], &stamp) {
            return Ok(());
        }
        let sys = self.load_system()?;
        let reduce_stamp = self.reduce_stamp()?;
        check_input(&self.path(L2), &reduce_stamp, "reduce", self.force)?;
        let available = self.reduced_orders()?;
        let rank = *available.last().ok_or_else(|| anyhow!("{L2} lists no reduced systems"))?;
        let orders = Self::effective_orders(self.cfg.pricing_orders(), rank);
        let orders: Vec<usize> = orders.into_iter().filter(|k| available.contains(k)).collect();
        let mut reduced = Vec::with_capacity(orders.len());
        for &k in &orders {
            let p = self.path(&reduced_name(k));
            check_input(&p, &reduce_stamp, "reduce", self.force)?;
            match read_system(open(&p)?).with_context(|| format!("in {}", p.display()))? {
                StoredSystem::Reduced { system, .. } => reduced.push(system),
                StoredSystem::Full(_) => bail!("{} holds a full system", p.display()),
            }
        }
        let pr = &self.cfg.pricing;
        let s0 = self.cfg.s0();
        let mut smiles_out = Vec::new();
        let mut errors_out = Vec::new();
        for (i, &t) in pr.maturities.iter().enumerate() {
            let steps = ((pr.steps_per_unit as f64 * t).round() as usize).max(1);
            let grid = SimulationGrid::new(t, steps, pr.paths, self.seed.wrapping_add(2 + i as u64))?;
            let mut systems: Vec<&dyn LinearSde> = vec![&sys];
            systems.extend(reduced.iter().map(|r| r as &dyn LinearSde));
            let outputs = terminal_outputs(&systems, &grid)?;
            let strikes = strike_grid(t)?;
            let smiles: Vec<IVSmile> =
                outputs.iter().map(|o| IVSmile::from_samples(t, s0, o, &strikes)).collect::<sigred_core::Result<_>>()?;
            if smiles[0].failures > 0 {
                log::warn!("T = {t}: {} strikes of the full smile have no implied volatility", smiles[0].failures);
            }
            let labels = std::iter::once("full".to_string()).chain(orders.iter().map(|k| k.to_string()));
            for (label, smile) in labels.zip(&smiles) {
                smiles_out.push((label, smile.clone()));
            }
            for (k, smile) in orders.iter().zip(&smiles[1..]) {
                errors_out.push((*k, t, iv_error_report(&smiles[0], smile)?));
            }
        }
        let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
        write_artifact(&self.path(SMILES), &stamp, |w| {
            writeln!(w, "system,T,K,price,stderr,iv,iv_stderr")?;
            for (label, s) in &smiles_out {
                for i in 0..s.strikes.len() {
                    writeln!(
                        w,
                        "{label},{},{},{},{},{},{}",
                        fmt(s.maturity),
                        fmt(s.strikes[i]),
                        fmt(s.prices[i]),
                        fmt(s.std_errors[i]),
                        opt(s.ivs[i]),
                        opt(s.iv_std_errors[i])
                    )?;
                }
            }
            Ok(())
        })?;
        write_artifact(&self.path(IV_ERRORS), &stamp, |w| {
            writeln!(w, "n_tilde,T,K,relative_error,error_bar")?;
            for (k, t, pts) in &errors_out {
                for p in pts {
                    writeln!(w, "{k},{},{},{},{}", fmt(*t), fmt(p.strike), opt(p.relative_error), opt(p.error_bar))?;
                }
            }
            Ok(())
        })?;
        log::info!("priced {} maturities for orders {orders:?}", pr.maturities.len());
        Ok(())
    }

    /// Every stage in order.
    pub fn run_all(&self) -> Result<()> {
        if self.cfg.signature.functional.is_none() {
            self.simulate()?;
            self.fit()?;
        }
        self.build()?;
        self.gramians()?;
        self.reduce()?;
        self.price()?;
        crate::report::write_report(&self.out, &self.cfg)
    }
}

fn write_spectrum(w: &mut impl Write, bal: &BalancingResult) -> Result<()> {
    writeln!(w, "k,sigma,relative")?;
    let top = bal.spectrum[0];
    for (k, s) in bal.spectrum.iter().enumerate() {
        writeln!(w, "{},{},{}", k + 1, fmt(*s), fmt(s / top))?;
    }
    Ok(())
}

pub fn write_fit(w: &mut impl Write, model: &FittedSignatureModel) -> Result<()> {
    let order = model.order();
    writeln!(w, "# lambda {}", fmt(model.lambda()))?;
    writeln!(w, "# train_rmse {}", fmt(model.train_rmse()))?;
    writeln!(w, "# validation_rmse {}", fmt(model.validation_rmse()))?;
    writeln!(w, "# validation_relative_rmse {}", fmt(model.validation_relative_rmse()))?;
    writeln!(w, "# train_samples {}", model.train_samples())?;
    writeln!(w, "# validation_samples {}", model.validation_samples())?;
    writeln!(w, "d {} m {}", order.d(), order.m())?;
    for (word, c) in order.words().zip(model.coefficients()) {
        writeln!(w, "{} {}", word.label(order.d()), fmt(*c))?;
    }
    Ok(())
}

/// Dense coefficients from `word value` lines. Comment lines start with `#`;
/// an optional `d D m M` line must match the order. Missing words are zero.
pub fn read_functional(input: &mut impl BufRead, order: &BasisOrder) -> Result<Vec<f64>> {
    let mut dense = vec![0.0; order.n()];
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = t.split_whitespace().collect();
        let at = || format!("line {}", i + 1);
        if parts.first() == Some(&"d") {
            let ok = parts.len() == 4
                && parts[1].parse::<usize>().ok() == Some(order.d())
                && parts[2] == "m"
                && parts[3].parse::<usize>().ok() == Some(order.m());
            if !ok {
                bail!("{}: header {t:?} does not match d = {}, m = {}", at(), order.d(), order.m());
            }
            continue;
        }
        if parts.len() != 2 {
            bail!("{}: expected 'word value', got {t:?}", at());
        }
        let word = Word::parse_label(parts[0], order.d()).with_context(at)?;
        let idx = order.word_to_index(&word).with_context(at)?;
        dense[idx] = parts[1].parse::<f64>().map_err(|e| anyhow!("{}: {e}", at()))?;
    }
    Ok(dense)
}

/// A small CSV table: header plus string cells.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| anyhow!("no column {name:?}"))
    }

    /// Parsed numeric column; empty cells become `None`.
    pub fn floats(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .map(|r| if r[c].is_empty() { Ok(None) } else { r[c].parse::<f64>().map(Some).map_err(|e| anyhow!("{name}: {e}")) })
            .collect()
    }
}

pub fn read_csv(path: &Path, producer: &str) -> Result<Table> {
    if !path.exists() {
        bail!("missing {}; run `sigred {producer}` first", path.display());
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap_or("").split(',').map(str::to_string).collect();
    let rows = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').map(str::to_string).collect()).collect();
    Ok(Table { header, rows })
}
