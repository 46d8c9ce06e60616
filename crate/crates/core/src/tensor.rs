//! Truncated tensors and signatures of piecewise-linear paths.
//!
//! A straight segment with increment `Δx` has signature `exp(Δx)`, whose
//! level-`k` block is `Δx^{⊗k}/k!`. Signatures of piecewise-linear paths are
//! Chen products of segment exponentials.

use crate::error::{Error, Result};
use crate::words::BasisOrder;

/// Dense coefficients over all words of length `<= m`, in [`BasisOrder`] layout.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedTensor {
    order: BasisOrder,
    coeffs: Vec<f64>,
}

impl TruncatedTensor {
    pub fn zeros(order: BasisOrder) -> Self {
        TruncatedTensor { order, coeffs: vec![0.0; order.n()] }
    }

    /// The unit `(1, 0, ..., 0)`, i.e. the signature of a constant path.
    pub fn unit(order: BasisOrder) -> Self {
        let mut t = Self::zeros(order);
        t.coeffs[0] = 1.0;
        t
    }

    pub fn from_coeffs(order: BasisOrder, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != order.n() {
            return Err(Error::Shape(format!(
                "{} coefficients for a basis of dimension {}",
                coeffs.len(),
                order.n()
            )));
        }
        Ok(TruncatedTensor { order, coeffs })
    }

    pub fn order(&self) -> &BasisOrder {
        &self.order
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn level(&self, k: usize) -> &[f64] {
        &self.coeffs[self.order.level_range(k)]
    }

    /// Right-multiplies in place by `exp(dx)`.
    pub fn mul_exp_in_place(&mut self, dx: &[f64]) {
        let mut scratch = ExpScratch::new(&self.order);
        mul_exp_in_place(&self.order, &mut self.coeffs, dx, &mut scratch);
    }
}

/// Scratch space for [`mul_exp_in_place`], sized for the top level.
#[derive(Clone, Debug)]
pub struct ExpScratch {
    acc: Vec<f64>,
    next: Vec<f64>,
}

impl ExpScratch {
    pub fn new(order: &BasisOrder) -> Self {
        let top = order.level_size(order.m());
        ExpScratch { acc: vec![0.0; top], next: vec![0.0; top] }
    }
}

/// `coeffs ← coeffs ⊗ exp(dx)` truncated at level `m`.
///
/// Level `k` of the product is `Σ_j S_{k-j} ⊗ dx^{⊗j}/j!`, evaluated by the
/// Horner scheme `(((S_0 dx/k + S_1) dx/(k-1) + S_2) ... + S_{k-1}) dx/1 + S_k`.
/// Levels are updated from the top down so lower levels are still unmodified
/// when they are read.
pub fn mul_exp_in_place(order: &BasisOrder, coeffs: &mut [f64], dx: &[f64], scratch: &mut ExpScratch) {
    let d = order.d();
    assert_eq!(dx.len(), d, "increment dimension must equal the alphabet size");
    for k in (1..=order.m()).rev() {
        let s0 = coeffs[0];
        let inv_k = 1.0 / k as f64;
        for (a, &x) in scratch.acc[..d].iter_mut().zip(dx) {
            *a = s0 * x * inv_k;
        }
        for i in 1..k {
            let len = order.level_size(i);
            let range = order.level_range(i);
            for (a, &s) in scratch.acc[..len].iter_mut().zip(&coeffs[range]) {
                *a += s;
            }
            let scale = 1.0 / (k - i) as f64;
            for (u, &a) in scratch.acc[..len].iter().enumerate() {
                let a = a * scale;
                for (slot, &x) in scratch.next[u * d..(u + 1) * d].iter_mut().zip(dx) {
                    *slot = a * x;
                }
            }
            std::mem::swap(&mut scratch.acc, &mut scratch.next);
        }
        let range = order.level_range(k);
        for (c, &a) in coeffs[range].iter_mut().zip(scratch.acc.iter()) {
            *c += a;
        }
    }
}

/// Signature of a straight segment with increment `dx`.
pub fn segment_exponential(dx: &[f64], order: BasisOrder) -> TruncatedTensor {
    let mut t = TruncatedTensor::unit(order);
    t.mul_exp_in_place(dx);
    t
}

/// Truncated tensor product: level `k` of the result is `Σ_{i+j=k} a_i ⊗ b_j`.
pub fn chen_concat(a: &TruncatedTensor, b: &TruncatedTensor) -> Result<TruncatedTensor> {
    if a.order != b.order {
        return Err(Error::Shape(format!(
            "tensor orders differ: {:?} vs {:?}",
            a.order, b.order
        )));
    }
    let order = a.order;
    let mut out = TruncatedTensor::zeros(order);
    for k in 0..=order.m() {
        let out_range = order.level_range(k);
        let out_level = &mut out.coeffs[out_range];
        for i in 0..=k {
            let j = k - i;
            let a_level = a.level(i);
            let b_level = b.level(j);
            let width = b_level.len();
            for (u, &x) in a_level.iter().enumerate() {
                if x == 0.0 {
                    continue;
                }
                let block = &mut out_level[u * width..(u + 1) * width];
                for (slot, &y) in block.iter_mut().zip(b_level) {
                    *slot += x * y;
                }
            }
        }
    }
    Ok(out)
}

/// A time-extended path sampled on a grid: `values[j][0] == times[j]`.
#[derive(Clone, Debug)]
pub struct PathSample {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
}

impl PathSample {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} times and {} samples",
                times.len(),
                values.len()
            )));
        }
        let d = values[0].len();
        if d == 0 {
            return Err(Error::InvalidArgument("path samples must have at least one coordinate".into()));
        }
        for (j, (t, v)) in times.iter().zip(&values).enumerate() {
            if v.len() != d {
                return Err(Error::Shape(format!("sample {j} has dimension {}, expected {d}", v.len())));
            }
            if v[0] != *t {
                return Err(Error::InvalidArgument(format!(
                    "sample {j}: first coordinate {} differs from grid time {t}",
                    v[0]
                )));
            }
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("time grid must be strictly increasing".into()));
        }
        Ok(PathSample { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }
}

/// Running signature `S(t_0), S(t_1), ...` of a piecewise-linear path.
#[derive(Clone, Debug)]
pub struct SignatureWalker {
    state: TruncatedTensor,
    scratch: ExpScratch,
}

impl SignatureWalker {
    pub fn new(order: BasisOrder) -> Self {
        SignatureWalker {
            state: TruncatedTensor::unit(order),
            scratch: ExpScratch::new(&order),
        }
    }

    /// Starts from an arbitrary tensor instead of the unit.
    pub fn starting_at(state: TruncatedTensor) -> Self {
        let scratch = ExpScratch::new(state.order());
        SignatureWalker { state, scratch }
    }

    pub fn advance(&mut self, dx: &[f64]) {
        let order = self.state.order;
        mul_exp_in_place(&order, &mut self.state.coeffs, dx, &mut self.scratch);
    }

    pub fn current(&self) -> &TruncatedTensor {
        &self.state
    }
}

/// Signatures `S_{0,t_j}` at every grid time of `path`.
pub fn path_signature_stream(path: &PathSample, order: BasisOrder) -> Result<Vec<TruncatedTensor>> {
    if path.dim() != order.d() {
        return Err(Error::Shape(format!(
            "path dimension {} differs from alphabet size {}",
            path.dim(),
            order.d()
        )));
    }
    let mut walker = SignatureWalker::new(order);
    let mut out = Vec::with_capacity(path.times.len());
    out.push(walker.current().clone());
    let mut dx = vec![0.0; order.d()];
    for w in path.values.windows(2) {
        for (slot, (b, a)) in dx.iter_mut().zip(w[1].iter().zip(&w[0])) {
            *slot = b - a;
        }
        walker.advance(&dx);
        out.push(walker.current().clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::words::{shuffle, LinearFunctional, Word};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    /// Iterated integrals of a piecewise-linear path by brute-force nested
    /// Riemann sums: `I_w(t_{j+1}) = I_w(t_j) + I_{w'}(mid) * dx^{last}` on a
    /// fine sub-grid, which converges to the exact signature.
    fn quadrature_signature(points: &[Vec<f64>], order: BasisOrder, substeps: usize) -> Vec<f64> {
        let n = order.n();
        let mut coeffs = vec![0.0; n];
        coeffs[0] = 1.0;
        let words: Vec<Word> = order.words().collect();
        for seg in points.windows(2) {
            let delta: Vec<f64> = seg[1].iter().zip(&seg[0]).map(|(b, a)| (b - a) / substeps as f64).collect();
            for _ in 0..substeps {
                // midpoint rule for each word from its prefix, using the prefix
                // value at the midpoint (average of before/after), resolved by
                // updating longer words first.
                let old = coeffs.clone();
                let mut new = old.clone();
                for len in 1..=order.m() {
                    for idx in order.level_range(len) {
                        let w = &words[idx];
                        let prefix: Vec<usize> = w.letters().take(len - 1).collect();
                        let pidx = order.word_to_index(&Word::new(prefix)).unwrap();
                        let last = w.last().unwrap() - 1;
                        let mid = 0.5 * (old[pidx] + new[pidx]);
                        new[idx] = old[idx] + mid * delta[last];
                    }
                }
                coeffs = new;
            }
        }
        coeffs
    }

    #[test]
    fn straight_line_examples() {
        let order = BasisOrder::new(2, 2).unwrap();
        let t = segment_exponential(&[1.0, 0.0], order);
        assert_eq!(t.coeffs(), &[1.0, 1.0, 0.0, 0.5, 0.0, 0.0, 0.0]);
        let t = segment_exponential(&[0.0, 0.0], order);
        assert_eq!(t, TruncatedTensor::unit(order));
    }

    #[test]
    fn segment_matches_quadrature() {
        let order = BasisOrder::new(2, 3).unwrap();
        let dx = [0.3, -0.2];
        let exact = segment_exponential(&dx, order);
        let quad = quadrature_signature(&[vec![0.0, 0.0], dx.to_vec()], order, 10_000);
        for (a, b) in exact.coeffs().iter().zip(&quad) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn two_segments_match_quadrature() {
        let order = BasisOrder::new(3, 3).unwrap();
        let pts = vec![vec![0.0, 0.0, 0.0], vec![0.5, 0.4, -0.1], vec![1.0, -0.3, 0.6]];
        let a = segment_exponential(&[0.5, 0.4, -0.1], order);
        let b = segment_exponential(&[0.5, -0.7, 0.7], order);
        let ab = chen_concat(&a, &b).unwrap();
        let quad = quadrature_signature(&pts, order, 4_000);
        for (x, y) in ab.coeffs().iter().zip(&quad) {
            assert!((x - y).abs() < 1e-8, "{x} vs {y}");
        }
        let path = PathSample::new(vec![0.0, 0.5, 1.0], pts).unwrap();
        let stream = path_signature_stream(&path, order).unwrap();
        for (x, y) in stream[2].coeffs().iter().zip(ab.coeffs()) {
            assert!(close(*x, *y, 1e-14));
        }
    }

    fn random_group_like(order: BasisOrder, rng: &mut ChaCha8Rng) -> TruncatedTensor {
        let mut t = TruncatedTensor::unit(order);
        for _ in 0..3 {
            let dx: Vec<f64> = (0..order.d()).map(|_| rng.random_range(-1.0..1.0)).collect();
            t.mul_exp_in_place(&dx);
        }
        t
    }

    #[test]
    fn chen_product_unit_and_associativity() {
        let order = BasisOrder::new(3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let unit = TruncatedTensor::unit(order);
        for _ in 0..10 {
            let a = random_group_like(order, &mut rng);
            let b = random_group_like(order, &mut rng);
            let c = random_group_like(order, &mut rng);
            assert_eq!(chen_concat(&a, &unit).unwrap(), a);
            assert_eq!(chen_concat(&unit, &a).unwrap(), a);
            let left = chen_concat(&chen_concat(&a, &b).unwrap(), &c).unwrap();
            let right = chen_concat(&a, &chen_concat(&b, &c).unwrap()).unwrap();
            for (x, y) in left.coeffs().iter().zip(right.coeffs()) {
                assert!(close(*x, *y, 1e-12));
            }
        }
        let other = TruncatedTensor::unit(BasisOrder::new(2, 4).unwrap());
        assert!(chen_concat(&unit, &other).is_err());
    }

    #[test]
    fn horner_update_equals_full_product() {
        let order = BasisOrder::new(3, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_group_like(order, &mut rng);
        let dx = [0.2, -0.7, 0.4];
        let full = chen_concat(&a, &segment_exponential(&dx, order)).unwrap();
        let mut fast = a.clone();
        fast.mul_exp_in_place(&dx);
        for (x, y) in full.coeffs().iter().zip(fast.coeffs()) {
            assert!(close(*x, *y, 1e-14));
        }
    }

    #[test]
    fn time_coordinates() {
        let order = BasisOrder::new(2, 3).unwrap();
        let times: Vec<f64> = (0..=10).map(|j| j as f64 * 0.13).collect();
        let values: Vec<Vec<f64>> = times.iter().map(|&t| vec![t, (3.0 * t).sin()]).collect();
        let path = PathSample::new(times.clone(), values).unwrap();
        let stream = path_signature_stream(&path, order).unwrap();
        let big_t = *times.last().unwrap();
        let s = stream.last().unwrap();
        let one = LinearFunctional::from_word(Word::from([1]));
        let one_one = LinearFunctional::from_word(Word::from([1, 1]));
        assert!(close(one.apply(s).unwrap(), big_t, 1e-14));
        assert!(close(one_one.apply(s).unwrap(), big_t * big_t / 2.0, 1e-14));
        assert_eq!(LinearFunctional::from_word(Word::empty()).apply(s).unwrap(), 1.0);
        let deep = LinearFunctional::from_word(Word::from([1, 1, 1, 1]));
        assert!(matches!(deep.apply(s), Err(Error::TruncationMismatch { .. })));
    }

    #[test]
    fn collinear_stream_is_single_exponential() {
        let order = BasisOrder::new(2, 4).unwrap();
        let times = vec![0.0, 0.25, 0.5, 1.0];
        let values: Vec<Vec<f64>> = times.iter().map(|&t| vec![t, -2.0 * t]).collect();
        let path = PathSample::new(times.clone(), values.clone()).unwrap();
        let stream = path_signature_stream(&path, order).unwrap();
        for (j, s) in stream.iter().enumerate() {
            let direct = segment_exponential(&values[j], order);
            for (x, y) in s.coeffs().iter().zip(direct.coeffs()) {
                assert!(close(*x, *y, 1e-13));
            }
        }
    }

    #[test]
    fn path_validation() {
        assert!(PathSample::new(vec![0.0, 1.0], vec![vec![0.0, 1.0], vec![1.5, 0.0]]).is_err());
        assert!(PathSample::new(vec![0.0, 0.0], vec![vec![0.0], vec![0.0]]).is_err());
        assert!(PathSample::new(vec![0.0], vec![]).is_err());
    }

    #[test]
    fn shuffle_identity_on_random_paths() {
        let order = BasisOrder::new(3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_group_like(order, &mut rng);
        let words: Vec<Word> = order.words().filter(|w| w.len() <= 2).collect();
        for u in &words {
            for v in &words {
                let lhs = LinearFunctional::from_word(u.clone()).apply(&s).unwrap()
                    * LinearFunctional::from_word(v.clone()).apply(&s).unwrap();
                let rhs = shuffle(u, v).apply(&s).unwrap();
                assert!(close(lhs, rhs, 1e-12), "{u:?} {v:?}: {lhs} vs {rhs}");
            }
        }
    }
}
