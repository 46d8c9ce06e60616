//! File formats: a text format shared by full and reduced systems, and
//! little-endian binary arrays for Gramians and path batches.
//!
//! System text layout, one item per line:
//!
//! ```text
//! sigred-system 1
//! kind full|reduced
//! d <letters> m <truncation> n <state dim> p <outputs>
//! N <letter> <nnz>     followed by nnz lines "row col value"
//! A <nnz>              followed by nnz lines "row col value"
//! K                    followed by d−1 rows
//! z                    followed by one row of n values
//! L                    followed by p rows of n values
//! ```
//!
//! Values use the shortest representation that parses back to the same
//! double, so a write/read cycle is bit-exact.

use std::io::{BufRead, Read, Write};

use faer::Mat;

use crate::balanced::ReducedSystem;
use crate::error::{Error, Result};
use crate::market::PathBatch;
use crate::sparse::SparseMatrix;
use crate::system::{LinearSde, NoiseCovariance, SignatureSde};
use crate::words::BasisOrder;

const SYSTEM_MAGIC: &str = "sigred-system 1";
const BATCH_MAGIC: &[u8; 8] = b"SGRPATH1";

/// Either kind of system as read back from a file.
#[derive(Clone, Debug)]
pub enum StoredSystem {
    Full(SignatureSde),
    Reduced { m: usize, system: ReducedSystem },
}

impl StoredSystem {
    pub fn as_sde(&self) -> &dyn LinearSde {
        match self {
            StoredSystem::Full(s) => s,
            StoredSystem::Reduced { system, .. } => system,
        }
    }
}

fn write_row(out: &mut impl Write, values: impl IntoIterator<Item = f64>) -> std::io::Result<()> {
    let row: Vec<String> = values.into_iter().map(|v| v.to_string()).collect();
    writeln!(out, "{}", row.join(" "))
}

fn write_triplets(out: &mut impl Write, entries: &[(usize, usize, f64)]) -> std::io::Result<()> {
    for (i, j, v) in entries {
        writeln!(out, "{i} {j} {v}")?;
    }
    Ok(())
}

fn dense_triplets(m: &Mat<f64>) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)] != 0.0 {
                out.push((i, j, m[(i, j)]));
            }
        }
    }
    out
}

fn write_common(out: &mut impl Write, kind: &str, d: usize, m: usize, n: usize, p: usize) -> std::io::Result<()> {
    writeln!(out, "{SYSTEM_MAGIC}")?;
    writeln!(out, "kind {kind}")?;
    writeln!(out, "d {d} m {m} n {n} p {p}")
}

fn write_tail(out: &mut impl Write, cov: &NoiseCovariance, z: &[f64], l: &Mat<f64>) -> std::io::Result<()> {
    writeln!(out, "K")?;
    for i in 0..cov.size() {
        write_row(out, (0..cov.size()).map(|j| cov.get(i, j)))?;
    }
    writeln!(out, "z")?;
    write_row(out, z.iter().copied())?;
    writeln!(out, "L")?;
    for i in 0..l.nrows() {
        write_row(out, (0..l.ncols()).map(|j| l[(i, j)]))?;
    }
    Ok(())
}

pub fn write_system(out: &mut impl Write, sys: &SignatureSde) -> Result<()> {
    write_common(out, "full", sys.d(), sys.m(), sys.n(), sys.p())?;
    for (i, n) in sys.n_mats().iter().enumerate() {
        writeln!(out, "N {} {}", i + 1, n.nnz())?;
        write_triplets(out, n.entries())?;
    }
    writeln!(out, "A {}", sys.drift().nnz())?;
    write_triplets(out, sys.drift().entries())?;
    write_tail(out, sys.cov(), sys.z(), sys.output_matrix())?;
    Ok(())
}

/// `m` is the truncation level of the system the reduction came from.
pub fn write_reduced(out: &mut impl Write, sys: &ReducedSystem, m: usize) -> Result<()> {
    write_common(out, "reduced", sys.n_mats().len(), m, sys.order(), sys.output_matrix().nrows())?;
    for (i, n) in sys.n_mats().iter().enumerate() {
        let t = dense_triplets(n);
        writeln!(out, "N {} {}", i + 1, t.len())?;
        write_triplets(out, &t)?;
    }
    let t = dense_triplets(sys.a());
    writeln!(out, "A {}", t.len())?;
    write_triplets(out, &t)?;
    write_tail(out, sys.cov(), sys.z(), sys.output_matrix())?;
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<String> {
        self.line += 1;
        match self.inner.next() {
            Some(l) => Ok(l?),
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { line: self.line, msg: msg.into() }
    }

    fn numbers<T: std::str::FromStr>(&mut self, expected: usize) -> Result<Vec<T>> {
        let text = self.next()?;
        let values = text
            .split_whitespace()
            .map(|t| t.parse::<T>().map_err(|_| self.err(format!("cannot parse '{t}'"))))
            .collect::<Result<Vec<T>>>()?;
        if values.len() != expected {
            return Err(self.err(format!("expected {expected} values, found {}", values.len())));
        }
        Ok(values)
    }

    /// `<keyword> <value>...` with the keyword checked.
    fn keyed(&mut self, keyword: &str, count: usize) -> Result<Vec<usize>> {
        let text = self.next()?;
        let mut parts = text.split_whitespace();
        if parts.next() != Some(keyword) {
            return Err(self.err(format!("expected '{keyword}'")));
        }
        let values = parts
            .map(|t| t.parse::<usize>().map_err(|_| self.err(format!("cannot parse '{t}' after '{keyword}'"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != count {
            return Err(self.err(format!("'{keyword}' takes {count} values")));
        }
        Ok(values)
    }

    fn triplets(&mut self, count: usize, n: usize) -> Result<Vec<(usize, usize, f64)>> {
        (0..count)
            .map(|_| {
                let text = self.next()?;
                let parts: Vec<&str> = text.split_whitespace().collect();
                if parts.len() != 3 {
                    return Err(self.err("triplet needs 'row col value'"));
                }
                let i: usize = parts[0].parse().map_err(|_| self.err("bad row index"))?;
                let j: usize = parts[1].parse().map_err(|_| self.err("bad column index"))?;
                let v: f64 = parts[2].parse().map_err(|_| self.err("bad value"))?;
                if i >= n || j >= n {
                    return Err(self.err(format!("index ({i}, {j}) outside {n}x{n}")));
                }
                Ok((i, j, v))
            })
            .collect()
    }
}

pub fn read_system(input: impl BufRead) -> Result<StoredSystem> {
    let mut lines = Lines { inner: input.lines(), line: 0 };
    if lines.next()?.trim() != SYSTEM_MAGIC {
        return Err(lines.err(format!("missing '{SYSTEM_MAGIC}' header")));
    }
    let kind = lines.next()?;
    let full = match kind.trim() {
        "kind full" => true,
        "kind reduced" => false,
        _ => return Err(lines.err("expected 'kind full' or 'kind reduced'")),
    };
    let header = lines.next()?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 8 || parts[0] != "d" || parts[2] != "m" || parts[4] != "n" || parts[6] != "p" {
        return Err(lines.err("expected 'd <d> m <m> n <n> p <p>'"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse { line: 3, msg: format!("cannot parse '{s}'") });
    let (d, m, n, p) = (num(parts[1])?, num(parts[3])?, num(parts[5])?, num(parts[7])?);
    if d == 0 {
        return Err(lines.err("alphabet must be nonempty"));
    }
    let mut n_mats = Vec::with_capacity(d);
    for letter in 1..=d {
        let head = lines.keyed("N", 2)?;
        if head[0] != letter {
            return Err(lines.err(format!("expected matrix N {letter}")));
        }
        n_mats.push(SparseMatrix::from_triplets(n, n, lines.triplets(head[1], n)?)?);
    }
    let nnz = lines.keyed("A", 1)?[0];
    let drift = SparseMatrix::from_triplets(n, n, lines.triplets(nnz, n)?)?;
    lines.keyed("K", 0)?;
    let mut k = Vec::with_capacity((d - 1) * (d - 1));
    for _ in 0..d - 1 {
        k.extend(lines.numbers::<f64>(d - 1)?);
    }
    let cov = NoiseCovariance::new(d - 1, k)?;
    lines.keyed("z", 0)?;
    let z = lines.numbers::<f64>(n)?;
    lines.keyed("L", 0)?;
    let mut l = Vec::with_capacity(p * n);
    for _ in 0..p {
        l.extend(lines.numbers::<f64>(n)?);
    }
    let output = crate::linalg::from_rows(p, n, &l);
    if full {
        let order = BasisOrder::new(d, m)?;
        if order.n() != n {
            return Err(Error::Parse { line: 3, msg: format!("n = {n} does not match d = {d}, m = {m}") });
        }
        Ok(StoredSystem::Full(SignatureSde::from_parts(order, n_mats, cov, drift, z, output)?))
    } else {
        let system = ReducedSystem::new(drift.to_dense(), n_mats.iter().map(SparseMatrix::to_dense).collect(), z, output, cov)?;
        Ok(StoredSystem::Reduced { m, system })
    }
}

/// 16-byte header `(n as u64, horizon as f64)`, then row-major doubles.
pub fn write_gramian(out: &mut impl Write, m: &Mat<f64>, horizon: f64) -> Result<()> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Shape("Gramian must be square".into()));
    }
    out.write_all(&(n as u64).to_le_bytes())?;
    out.write_all(&horizon.to_le_bytes())?;
    let mut buf = Vec::with_capacity(n * 8);
    for i in 0..n {
        buf.clear();
        for j in 0..n {
            buf.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_u64(input: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    input.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s(input: &mut impl Read, count: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    input.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub fn read_gramian(input: &mut impl Read) -> Result<(Mat<f64>, f64)> {
    let n = read_u64(input)? as usize;
    let horizon = f64::from_bits(read_u64(input)?);
    let data = read_f64s(input, n * n)?;
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(Error::Shape("trailing bytes after the Gramian".into()));
    }
    Ok((crate::linalg::from_rows(n, n, &data), horizon))
}

/// Magic, `(n_paths, steps, noise_dim)` as u64, horizon, then spot,
/// variance and increment arrays.
pub fn write_path_batch(out: &mut impl Write, batch: &PathBatch) -> Result<()> {
    out.write_all(BATCH_MAGIC)?;
    for v in [batch.n_paths(), batch.steps(), batch.noise_dim()] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    out.write_all(&batch.horizon().to_le_bytes())?;
    for data in [batch.spot_data(), batch.variance_data(), batch.increment_data()] {
        let mut buf = Vec::with_capacity(data.len() * 8);
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_path_batch(input: &mut impl Read) -> Result<PathBatch> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != BATCH_MAGIC {
        return Err(Error::Shape("not a path batch file".into()));
    }
    let n_paths = read_u64(input)? as usize;
    let steps = read_u64(input)? as usize;
    let noise_dim = read_u64(input)? as usize;
    let horizon = f64::from_bits(read_u64(input)?);
    let spot = read_f64s(input, n_paths * (steps + 1))?;
    let variance = read_f64s(input, n_paths * (steps + 1))?;
    let increments = read_f64s(input, n_paths * steps * noise_dim)?;
    PathBatch::new(n_paths, steps, horizon, noise_dim, spot, variance, increments)
}
