//! Words over the alphabet `{1..d}`, the coordinate system of the truncated
//! tensor algebra `T^m(R^d)`, and linear functionals on it.
//!
//! Coordinates are ordered by word length first and lexicographically within
//! a length. With 0-based global indices this gives the closed forms
//!
//! ```text
//! index(∅)      = 0
//! index(w · i)  = 1 + d · index(w) + (i - 1)
//! ```
//!
//! so appending a letter is an affine map on indices. Every matrix layout in
//! the crate inherits this ordering.

use std::cmp::Ordering;
use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::TruncatedTensor;

/// Label used for the empty word in text formats.
pub const EMPTY_WORD_LABEL: &str = "∅";

/// A multi-index `(i_1, ..., i_k)` with letters in `1..=d`.
///
/// Ordered by length first, then lexicographically, which matches the basis
/// ordering of [`BasisOrder`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Word(Vec<u16>);

impl Word {
    pub fn empty() -> Self {
        Word(Vec::new())
    }

    /// Builds a word from 1-based letters. Letters are validated against an
    /// alphabet only when the word is used with a [`BasisOrder`].
    pub fn new<I: IntoIterator<Item = usize>>(letters: I) -> Self {
        Word(letters.into_iter().map(|l| l as u16).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn letters(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.0.iter().map(|&l| l as usize)
    }

    pub fn last(&self) -> Option<usize> {
        self.0.last().map(|&l| l as usize)
    }

    pub fn push(&mut self, letter: usize) {
        self.0.push(letter as u16);
    }

    pub fn concat(&self, other: &Word) -> Word {
        let mut letters = self.0.clone();
        letters.extend_from_slice(&other.0);
        Word(letters)
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        for letter in self.letters() {
            if letter == 0 || letter > d {
                return Err(Error::LetterOutOfRange { letter, d });
            }
        }
        Ok(())
    }

    /// Text label: `"121"` for `d <= 9`, `"1,12,3"` otherwise, `"∅"` when empty.
    pub fn label(&self, d: usize) -> String {
        if self.is_empty() {
            return EMPTY_WORD_LABEL.to_string();
        }
        let sep = if d <= 9 { "" } else { "," };
        self.letters()
            .map(|l| l.to_string())
            .collect::<Vec<_>>()
            .join(sep)
    }

    /// Inverse of [`Word::label`].
    pub fn parse_label(label: &str, d: usize) -> Result<Word> {
        let label = label.trim();
        if label.is_empty() || label == EMPTY_WORD_LABEL {
            return Ok(Word::empty());
        }
        let bad = || Error::InvalidArgument(format!("malformed word label {label:?}"));
        let word = if d <= 9 {
            let letters = label
                .chars()
                .map(|c| c.to_digit(10).map(|v| v as usize).ok_or_else(bad))
                .collect::<Result<Vec<_>>>()?;
            Word::new(letters)
        } else {
            let letters = label
                .split(',')
                .map(|s| s.trim().parse::<usize>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            Word::new(letters)
        };
        word.validate(d)?;
        Ok(word)
    }
}

impl Ord for Word {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .len()
            .cmp(&other.0.len())
            .then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Word {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<const K: usize> From<[usize; K]> for Word {
    fn from(letters: [usize; K]) -> Self {
        Word::new(letters)
    }
}

/// `Σ_{k=0}^{m} d^k`, the dimension of `T^m(R^d)`.
pub fn dim_truncated(d: usize, m: usize) -> Result<usize> {
    if d == 0 {
        return Err(Error::InvalidArgument("alphabet size d must be at least 1".into()));
    }
    let overflow = || Error::DimensionOverflow { d, m };
    let mut total: usize = 0;
    let mut power: usize = 1;
    for k in 0..=m {
        total = total.checked_add(power).ok_or_else(overflow)?;
        if k < m {
            power = power.checked_mul(d).ok_or_else(overflow)?;
        }
    }
    Ok(total)
}

/// Length-first lexicographic indexing of the words of length at most `m`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BasisOrder {
    d: usize,
    m: usize,
    n: usize,
}

impl BasisOrder {
    pub fn new(d: usize, m: usize) -> Result<Self> {
        let n = dim_truncated(d, m)?;
        Ok(BasisOrder { d, m, n })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Global index of the first word of length `k`.
    pub fn level_offset(&self, k: usize) -> usize {
        debug_assert!(k <= self.m + 1);
        if self.d == 1 {
            k
        } else {
            (self.d.pow(k as u32) - 1) / (self.d - 1)
        }
    }

    /// Number of words of length exactly `k`.
    pub fn level_size(&self, k: usize) -> usize {
        self.d.pow(k as u32)
    }

    pub fn level_range(&self, k: usize) -> std::ops::Range<usize> {
        let start = self.level_offset(k);
        start..start + self.level_size(k)
    }

    /// Number of words of length strictly below `m`; these are the columns on
    /// which the letter-appending maps act nontrivially.
    pub fn n_below_top(&self) -> usize {
        self.level_offset(self.m)
    }

    pub fn level_of(&self, index: usize) -> usize {
        (0..=self.m)
            .find(|&k| index < self.level_offset(k + 1))
            .expect("index within the truncated basis")
    }

    pub fn word_to_index(&self, word: &Word) -> Result<usize> {
        if word.len() > self.m {
            return Err(Error::WordTooLong { len: word.len(), m: self.m });
        }
        word.validate(self.d)?;
        Ok(word
            .letters()
            .fold(0usize, |index, letter| 1 + self.d * index + (letter - 1)))
    }

    pub fn index_to_word(&self, index: usize) -> Result<Word> {
        if index >= self.n {
            return Err(Error::InvalidArgument(format!(
                "index {index} outside basis of dimension {}",
                self.n
            )));
        }
        let mut letters = Vec::new();
        let mut rest = index;
        while rest > 0 {
            let letter = (rest - 1) % self.d + 1;
            letters.push(letter);
            rest = (rest - 1) / self.d;
        }
        letters.reverse();
        Ok(Word::new(letters))
    }

    /// Index of `word(index) · letter`, or `None` when that word is longer
    /// than `m`.
    pub fn append_letter(&self, index: usize, letter: usize) -> Option<usize> {
        debug_assert!((1..=self.d).contains(&letter));
        if index < self.n_below_top() {
            Some(1 + self.d * index + (letter - 1))
        } else {
            None
        }
    }

    pub fn words(&self) -> impl Iterator<Item = Word> + '_ {
        (0..self.n).map(move |i| self.index_to_word(i).expect("index in range"))
    }
}

/// Sparse linear combination of words, `ℓ = Σ_j γ_j w_j`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinearFunctional {
    terms: BTreeMap<Word, f64>,
}

impl LinearFunctional {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_word(word: Word) -> Self {
        let mut f = Self::new();
        f.add_term(word, 1.0);
        f
    }

    pub fn from_terms<I: IntoIterator<Item = (Word, f64)>>(terms: I) -> Self {
        let mut f = Self::new();
        for (w, c) in terms {
            f.add_term(w, c);
        }
        f
    }

    /// Adds `coefficient · word`; terms that cancel to exactly zero are dropped.
    pub fn add_term(&mut self, word: Word, coefficient: f64) {
        match self.terms.entry(word) {
            Entry::Vacant(slot) => {
                if coefficient != 0.0 {
                    slot.insert(coefficient);
                }
            }
            Entry::Occupied(mut slot) => {
                *slot.get_mut() += coefficient;
                if *slot.get() == 0.0 {
                    slot.remove();
                }
            }
        }
    }

    pub fn coefficient(&self, word: &Word) -> f64 {
        self.terms.get(word).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Word, f64)> {
        self.terms.iter().map(|(w, &c)| (w, c))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Largest word length with a nonzero coefficient (0 for the zero functional).
    pub fn degree(&self) -> usize {
        self.terms.keys().map(Word::len).max().unwrap_or(0)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        LinearFunctional::from_terms(self.terms().map(|(w, c)| (w.clone(), c * factor)))
    }

    /// Bilinear extension of the word shuffle.
    pub fn shuffle(&self, other: &LinearFunctional) -> LinearFunctional {
        let mut out = LinearFunctional::new();
        for (u, a) in self.terms() {
            for (v, b) in other.terms() {
                for (w, count) in shuffle_counts(u, v) {
                    out.add_term(w, a * b * count as f64);
                }
            }
        }
        out
    }

    /// `⟨ℓ, a⟩ = Σ_j γ_j a[w_j]`.
    pub fn apply(&self, tensor: &TruncatedTensor) -> Result<f64> {
        apply_functional(self, tensor)
    }

    /// Dense coefficient row in the coordinates of `order`.
    pub fn to_dense(&self, order: &BasisOrder) -> Result<Vec<f64>> {
        let mut row = vec![0.0; order.n()];
        for (w, c) in self.terms() {
            row[order.word_to_index(w)?] = c;
        }
        Ok(row)
    }

    pub fn from_dense(order: &BasisOrder, row: &[f64]) -> Result<Self> {
        if row.len() != order.n() {
            return Err(Error::Shape(format!(
                "coefficient row of length {} for basis of dimension {}",
                row.len(),
                order.n()
            )));
        }
        Ok(LinearFunctional::from_terms(
            row.iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(i, &c)| (order.index_to_word(i).expect("index in range"), c)),
        ))
    }
}

impl fmt::Display for LinearFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self
            .terms
            .keys()
            .flat_map(|w| w.letters())
            .max()
            .unwrap_or(1);
        let parts: Vec<String> = self
            .terms()
            .map(|(w, c)| format!("{c}·{}", w.label(d)))
            .collect();
        if parts.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", parts.join(" + "))
        }
    }
}

/// All interleavings of `u` and `v` that preserve the internal order of each,
/// with integer multiplicities.
pub fn shuffle_counts(u: &Word, v: &Word) -> BTreeMap<Word, u64> {
    let (p, q) = (u.len(), v.len());
    // table[i][j] holds the shuffle of the prefixes u[..i] and v[..j]
    let mut table: Vec<Vec<BTreeMap<Word, u64>>> = vec![vec![BTreeMap::new(); q + 1]; p + 1];
    table[0][0].insert(Word::empty(), 1);
    for i in 0..=p {
        for j in 0..=q {
            if i == 0 && j == 0 {
                continue;
            }
            let mut cell = BTreeMap::new();
            if i > 0 {
                let letter = u.0[i - 1] as usize;
                for (w, c) in &table[i - 1][j] {
                    let mut w = w.clone();
                    w.push(letter);
                    *cell.entry(w).or_insert(0) += c;
                }
            }
            if j > 0 {
                let letter = v.0[j - 1] as usize;
                for (w, c) in &table[i][j - 1] {
                    let mut w = w.clone();
                    w.push(letter);
                    *cell.entry(w).or_insert(0) += c;
                }
            }
            table[i][j] = cell;
        }
    }
    std::mem::take(&mut table[p][q])
}

/// Shuffle product `u ⧢ v` as a functional.
pub fn shuffle(u: &Word, v: &Word) -> LinearFunctional {
    LinearFunctional::from_terms(
        shuffle_counts(u, v)
            .into_iter()
            .map(|(w, c)| (w, c as f64)),
    )
}

pub fn apply_functional(functional: &LinearFunctional, tensor: &TruncatedTensor) -> Result<f64> {
    let order = tensor.order();
    if functional.degree() > order.m() {
        return Err(Error::TruncationMismatch {
            degree: functional.degree(),
            m: order.m(),
        });
    }
    let coeffs = tensor.coeffs();
    functional.terms().try_fold(0.0, |acc, (w, c)| {
        Ok(acc + c * coeffs[order.word_to_index(w)?])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binomial(n: usize, k: usize) -> u64 {
        (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
    }

    /// Enumerates every word of length <= m in length-first lex order by brute force.
    fn enumerate_words(d: usize, m: usize) -> Vec<Word> {
        let mut out = vec![Word::empty()];
        let mut level = vec![Word::empty()];
        for _ in 0..m {
            let mut next = Vec::new();
            for w in &level {
                for letter in 1..=d {
                    let mut w = w.clone();
                    w.push(letter);
                    next.push(w);
                }
            }
            out.extend(next.iter().cloned());
            level = next;
        }
        out
    }

    #[test]
    fn dimensions() {
        assert_eq!(dim_truncated(4, 5).unwrap(), 1365);
        assert_eq!(dim_truncated(3, 7).unwrap(), 3280);
        assert_eq!(dim_truncated(7, 0).unwrap(), 1);
        assert_eq!(dim_truncated(1, 6).unwrap(), 7);
        assert!(matches!(
            dim_truncated(10, 40),
            Err(Error::DimensionOverflow { .. })
        ));
    }

    #[test]
    fn indices_match_enumeration() {
        for (d, m) in [(1, 4), (2, 2), (2, 4), (3, 3), (4, 2)] {
            let order = BasisOrder::new(d, m).unwrap();
            let words = enumerate_words(d, m);
            assert_eq!(words.len(), order.n());
            for (rank, w) in words.iter().enumerate() {
                assert_eq!(order.word_to_index(w).unwrap(), rank);
                assert_eq!(&order.index_to_word(rank).unwrap(), w);
            }
        }
        let order = BasisOrder::new(2, 2).unwrap();
        assert_eq!(order.word_to_index(&Word::empty()).unwrap(), 0);
        assert_eq!(order.word_to_index(&Word::from([1])).unwrap(), 1);
        assert_eq!(order.word_to_index(&Word::from([2])).unwrap(), 2);
        assert_eq!(order.word_to_index(&Word::from([1, 1])).unwrap(), 3);
    }

    #[test]
    fn index_errors() {
        let order = BasisOrder::new(2, 2).unwrap();
        assert!(matches!(
            order.word_to_index(&Word::from([3])),
            Err(Error::LetterOutOfRange { letter: 3, d: 2 })
        ));
        assert!(matches!(
            order.word_to_index(&Word::from([1, 1, 1])),
            Err(Error::WordTooLong { len: 3, m: 2 })
        ));
        assert!(order.index_to_word(7).is_err());
    }

    #[test]
    fn append_letter_is_affine() {
        let order = BasisOrder::new(3, 3).unwrap();
        for index in 0..order.n() {
            let word = order.index_to_word(index).unwrap();
            for letter in 1..=3 {
                let expected = if word.len() < 3 {
                    let mut w = word.clone();
                    w.push(letter);
                    Some(order.word_to_index(&w).unwrap())
                } else {
                    None
                };
                assert_eq!(order.append_letter(index, letter), expected);
            }
        }
    }

    #[test]
    fn shuffle_examples() {
        let s = shuffle(&Word::from([1]), &Word::from([2]));
        assert_eq!(s.coefficient(&Word::from([1, 2])), 1.0);
        assert_eq!(s.coefficient(&Word::from([2, 1])), 1.0);
        assert_eq!(s.len(), 2);

        let w = Word::from([2, 1, 2]);
        assert_eq!(shuffle(&Word::empty(), &w), LinearFunctional::from_word(w));

        let s = shuffle_counts(&Word::from([1]), &Word::from([1, 2]));
        assert_eq!(s.get(&Word::from([1, 1, 2])), Some(&2));
        assert_eq!(s.get(&Word::from([1, 2, 1])), Some(&1));
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn labels_round_trip() {
        let w = Word::from([1, 2, 1]);
        assert_eq!(w.label(4), "121");
        assert_eq!(Word::parse_label("121", 4).unwrap(), w);
        let w = Word::from([1, 12, 3]);
        assert_eq!(w.label(12), "1,12,3");
        assert_eq!(Word::parse_label("1,12,3", 12).unwrap(), w);
        assert_eq!(Word::empty().label(3), EMPTY_WORD_LABEL);
        assert_eq!(Word::parse_label(EMPTY_WORD_LABEL, 3).unwrap(), Word::empty());
        assert!(Word::parse_label("14", 3).is_err());
    }

    #[test]
    fn functional_bookkeeping() {
        let mut f = LinearFunctional::new();
        f.add_term(Word::from([1, 2]), 2.0);
        f.add_term(Word::from([1]), 1.0);
        f.add_term(Word::from([1, 2]), -2.0);
        assert_eq!(f.len(), 1);
        assert_eq!(f.degree(), 1);
        let order = BasisOrder::new(2, 2).unwrap();
        let row = f.to_dense(&order).unwrap();
        assert_eq!(row, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(LinearFunctional::from_dense(&order, &row).unwrap(), f);
    }

    fn word_strategy(d: usize, max_len: usize) -> impl Strategy<Value = Word> {
        proptest::collection::vec(1..=d, 0..=max_len).prop_map(Word::new)
    }

    proptest! {
        #[test]
        fn index_round_trip(k in 0usize..1365) {
            let order = BasisOrder::new(4, 5).unwrap();
            let w = order.index_to_word(k).unwrap();
            prop_assert_eq!(order.word_to_index(&w).unwrap(), k);
        }

        #[test]
        fn shuffle_commutes_and_has_binomial_mass(u in word_strategy(3, 4), v in word_strategy(3, 4)) {
            let uv = shuffle_counts(&u, &v);
            let vu = shuffle_counts(&v, &u);
            prop_assert_eq!(&uv, &vu);
            let mass: u64 = uv.values().sum();
            prop_assert_eq!(mass, binomial(u.len() + v.len(), u.len()));
            for w in uv.keys() {
                prop_assert_eq!(w.len(), u.len() + v.len());
            }
        }
    }
}
