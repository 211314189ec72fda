//! Sliding-window Levenshtein similarity and the diversity score built on it.
//!
//! The shorter string (the pattern) slides over the longer one with a window
//! of exactly its own length. Every window is scored as
//! `(1 - D(pattern, window) / |pattern|) * 100` where `D` is the Levenshtein
//! distance, and the best window wins. Diversity is `100 - best`.
//!
//! Strings are compared as sequences of Unicode scalar values. No case or
//! whitespace normalization happens here.
//!
//! Each window distance is computed with a blocked bit-parallel edit distance
//! (Myers / Hyyrö) over a pattern bitmap built once per call. The result is an
//! exact integer distance, so scores are identical to evaluating every window
//! with the textbook dynamic program.

use std::collections::HashMap;
use std::fmt;

use crate::scalar::Scalar;

/// Best-window similarity on the 0..=100 scale.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct SimilarityScore<F = f64>(F);

impl<F: Scalar> SimilarityScore<F> {
    pub fn value(self) -> F {
        self.0
    }

    /// True when the shorter input occurs verbatim inside the longer one.
    pub fn is_exact(self) -> bool {
        self.0 == F::hundred()
    }

    fn from_distance(distance: usize, pattern_len: usize) -> Self {
        let d = F::from_count(distance as u64);
        let m = F::from_count(pattern_len as u64);
        SimilarityScore((F::one() - d / m) * F::hundred())
    }
}

impl<F: Scalar> fmt::Display for SimilarityScore<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.0)
    }
}

/// `100 - similarity`, 0 for identical or nested outputs.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct DiversityScore<F = f64>(F);

impl<F: Scalar> DiversityScore<F> {
    pub fn value(self) -> F {
        self.0
    }
}

impl<F: Scalar> From<SimilarityScore<F>> for DiversityScore<F> {
    fn from(sim: SimilarityScore<F>) -> Self {
        DiversityScore(F::hundred() - sim.0)
    }
}

impl<F: Scalar> fmt::Display for DiversityScore<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.0)
    }
}

/// Levenshtein distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (pattern, text) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    if pattern.is_empty() {
        return text.len();
    }
    let bits = BitPattern::new(pattern);
    let codes = bits.encode(text);
    bits.distance(&codes, &mut Vec::new())
}

/// Sliding-window similarity in `f64`.
pub fn partial_similarity(a: &str, b: &str) -> SimilarityScore<f64> {
    partial_similarity_in(a, b)
}

/// Sliding-window similarity in any [`Scalar`].
///
/// Arguments are swapped when `a` is longer than `b`, so the result is
/// symmetric. An empty pattern needs zero edits and scores 100.
pub fn partial_similarity_in<F: Scalar>(a: &str, b: &str) -> SimilarityScore<F> {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let (pattern, text) = if a.len() <= b.len() { (&a, &b) } else { (&b, &a) };
    if pattern.is_empty() {
        return SimilarityScore(F::hundred());
    }
    let best = min_window_distance(pattern, text);
    SimilarityScore::from_distance(best, pattern.len())
}

/// Diversity in `f64`.
pub fn diversity(a: &str, b: &str) -> DiversityScore<f64> {
    diversity_in(a, b)
}

pub fn diversity_in<F: Scalar>(a: &str, b: &str) -> DiversityScore<F> {
    partial_similarity_in::<F>(a, b).into()
}

/// Smallest Levenshtein distance between `pattern` and any window of `text`
/// of the same length. Requires `0 < pattern.len() <= text.len()`.
fn min_window_distance(pattern: &[char], text: &[char]) -> usize {
    debug_assert!(!pattern.is_empty() && pattern.len() <= text.len());
    let m = pattern.len();
    let bits = BitPattern::new(pattern);
    let codes = bits.encode(text);
    let mut scratch = Vec::with_capacity(bits.words);
    let mut best = usize::MAX;
    for window in codes.windows(m) {
        let d = bits.distance(window, &mut scratch);
        if d < best {
            best = d;
            if best == 0 {
                break;
            }
        }
    }
    best
}

/// Per-character match bitmaps of a pattern, split into 64-bit blocks.
struct BitPattern {
    len: usize,
    words: usize,
    last: u64,
    codes: HashMap<char, u32>,
    // row `code` spans masks[code * words .. (code + 1) * words]; row 0 is the
    // all-zero row for characters absent from the pattern
    masks: Vec<u64>,
}

impl BitPattern {
    fn new(pattern: &[char]) -> Self {
        let len = pattern.len();
        let words = len.div_ceil(64).max(1);
        let mut codes: HashMap<char, u32> = HashMap::new();
        for &c in pattern {
            let next = codes.len() as u32 + 1;
            codes.entry(c).or_insert(next);
        }
        let mut masks = vec![0u64; (codes.len() + 1) * words];
        for (i, c) in pattern.iter().enumerate() {
            let code = codes[c] as usize;
            masks[code * words + i / 64] |= 1u64 << (i % 64);
        }
        let last = 1u64 << ((len.max(1) - 1) % 64);
        BitPattern { len, words, last, codes, masks }
    }

    fn encode(&self, text: &[char]) -> Vec<u32> {
        text.iter().map(|c| self.codes.get(c).copied().unwrap_or(0)).collect()
    }

    /// Global edit distance between the pattern and `text`.
    fn distance(&self, text: &[u32], state: &mut Vec<(u64, u64)>) -> usize {
        let words = self.words;
        state.clear();
        state.resize(words, (!0u64, 0u64));
        let mut score = self.len as isize;
        for &code in text {
            let row = &self.masks[code as usize * words..(code as usize + 1) * words];
            // top boundary row of the DP grows by one per text character
            let mut hp_carry = 1u64;
            let mut hn_carry = 0u64;
            for (w, (vp, vn)) in state.iter_mut().enumerate() {
                let x = row[w] | hn_carry;
                let d0 = ((x & *vp).wrapping_add(*vp) ^ *vp) | x | *vn;
                let hp = *vn | !(d0 | *vp);
                let hn = d0 & *vp;
                let (hp_out, hn_out) = if w + 1 < words {
                    (hp >> 63, hn >> 63)
                } else {
                    (u64::from(hp & self.last != 0), u64::from(hn & self.last != 0))
                };
                let hp = (hp << 1) | hp_carry;
                let hn = (hn << 1) | hn_carry;
                *vp = hn | !(d0 | hp);
                *vn = hp & d0;
                hp_carry = hp_out;
                hn_carry = hn_out;
            }
            score += hp_carry as isize - hn_carry as isize;
        }
        score as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dp(a: &str, b: &str) -> usize {
        let a: Vec<char> = a.chars().collect();
        let b: Vec<char> = b.chars().collect();
        let mut prev: Vec<usize> = (0..=b.len()).collect();
        for (i, ca) in a.iter().enumerate() {
            let mut cur = vec![i + 1; b.len() + 1];
            for (j, cb) in b.iter().enumerate() {
                let sub = prev[j] + usize::from(ca != cb);
                cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
            }
            prev = cur;
        }
        prev[b.len()]
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", ""), 3);
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        assert_eq!(levenshtein("", ""), 0);
    }

    #[test]
    fn levenshtein_crosses_block_boundaries() {
        let a: String = "abcdefghij".repeat(20);
        let mut b = a.clone();
        b.replace_range(63..66, "xyz");
        b.push_str("tail");
        assert_eq!(levenshtein(&a, &b), dp(&a, &b));
        let c: String = "ab".repeat(100);
        let d: String = "ba".repeat(70);
        assert_eq!(levenshtein(&c, &d), dp(&c, &d));
    }

    #[test]
    fn partial_similarity_examples() {
        assert_eq!(partial_similarity("abc", "abc").value(), 100.0);
        assert_eq!(partial_similarity("abc", "xxabcxx").value(), 100.0);
        // best window "abc", one substitution
        let s = partial_similarity("abd", "xxabcxx").value();
        assert_eq!(s, (1.0 - 1.0 / 3.0) * 100.0);
        assert!((s - 66.666_666_666).abs() < 1e-6);
    }

    #[test]
    fn swapped_arguments_agree() {
        assert_eq!(partial_similarity("xxabcxx", "abd"), partial_similarity("abd", "xxabcxx"));
    }

    #[test]
    fn diversity_examples() {
        assert_eq!(diversity("same", "same").value(), 0.0);
        assert_eq!(diversity("aaa", "bbb").value(), 100.0);
        let d = diversity("abd", "xxabcxx").value();
        assert!((d - 33.333_333_333).abs() < 1e-6);
    }

    #[test]
    fn empty_pattern_is_a_perfect_match() {
        assert_eq!(partial_similarity("", "anything").value(), 100.0);
        assert_eq!(partial_similarity("", "").value(), 100.0);
        assert_eq!(diversity("", "x").value(), 0.0);
    }

    #[test]
    fn compares_code_points_not_bytes() {
        // é is two bytes in UTF-8 but a single substitution here
        assert_eq!(levenshtein("café", "cafe"), 1);
        assert_eq!(partial_similarity("ü", "xüx").value(), 100.0);
        assert_eq!(partial_similarity("éa", "xéb").value(), 50.0);
    }

    #[test]
    fn f32_instantiation() {
        let s: SimilarityScore<f32> = partial_similarity_in("abd", "xxabcxx");
        assert!((s.value() - 66.666_67).abs() < 1e-3);
        assert_eq!(format!("{}", partial_similarity("abd", "xxabcxx")), "66.67");
    }
}
