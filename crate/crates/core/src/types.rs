//! Domain types shared by every module: tokens, sentence pairs, soft score
//! matrices and hard alignments.

use std::collections::BTreeSet;
use std::fmt;

use crate::error::{AlignError, Result};

/// Reserved unknown-word sentinel understood by every scorer backend.
pub const UNK: &str = "<unk>";

/// Reserved name of the virtual NULL source position in lexicon files.
pub const NULL: &str = "<null>";

/// Floor used in log-space matrices in place of `-inf`.
pub const LOG_ZERO: f64 = -1e9;

/// Segmentation markers ignored when checking that subwords spell a token.
const SUBWORD_MARKERS: [&str; 2] = ["@@", "\u{2581}"];

/// Removes subword segmentation markers (`@@`, `▁`) from a piece.
pub fn strip_markers(piece: &str) -> String {
    let mut out = piece.to_owned();
    for m in SUBWORD_MARKERS {
        out = out.replace(m, "");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    text: String,
    subwords: Option<Vec<String>>,
}

impl Token {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(AlignError::malformed("empty token"));
        }
        if text.chars().any(char::is_whitespace) {
            return Err(AlignError::malformed(format!("token {text:?} contains whitespace")));
        }
        if text == UNK || text == NULL {
            return Err(AlignError::malformed(format!("token {text:?} is reserved")));
        }
        Ok(Token { text, subwords: None })
    }

    /// Builds a token with a subword segmentation. The pieces, with markers
    /// removed, must concatenate to the token text.
    pub fn with_subwords(text: impl Into<String>, subwords: Vec<String>) -> Result<Self> {
        let mut tok = Token::new(text)?;
        tok.set_subwords(subwords)?;
        Ok(tok)
    }

    pub fn set_subwords(&mut self, subwords: Vec<String>) -> Result<()> {
        if subwords.is_empty() {
            return Err(AlignError::malformed(format!("token {:?} has no subwords", self.text)));
        }
        let joined: String = subwords.iter().map(|s| strip_markers(s)).collect();
        if joined != self.text {
            return Err(AlignError::malformed(format!(
                "subwords {subwords:?} do not spell token {:?}",
                self.text
            )));
        }
        self.subwords = Some(subwords);
        Ok(())
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn subwords(&self) -> Option<&[String]> {
        self.subwords.as_deref()
    }

    /// Number of characters (not bytes).
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentencePair {
    pub id: usize,
    pub src: Vec<Token>,
    pub tgt: Vec<Token>,
}

impl SentencePair {
    pub fn new(id: usize, src: Vec<Token>, tgt: Vec<Token>) -> Result<Self> {
        if src.is_empty() || tgt.is_empty() {
            return Err(AlignError::malformed(format!("sentence {id}: empty side")));
        }
        Ok(SentencePair { id, src, tgt })
    }

    /// Whitespace-tokenizes both sides.
    pub fn from_text(id: usize, src: &str, tgt: &str) -> Result<Self> {
        let tok = |s: &str| s.split_whitespace().map(Token::new).collect::<Result<Vec<_>>>();
        SentencePair::new(id, tok(src)?, tok(tgt)?)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.src.len(), self.tgt.len())
    }

    pub fn has_subwords(&self) -> bool {
        self.src.iter().chain(&self.tgt).all(|t| t.subwords().is_some())
    }

    /// The same pair with source and target swapped.
    pub fn reversed(&self) -> SentencePair {
        SentencePair {
            id: self.id,
            src: self.tgt.clone(),
            tgt: self.src.clone(),
        }
    }
}

/// Domain of the numbers stored in a [`SoftAlignment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScoreSpace {
    /// Natural-log probabilities.
    Log,
    /// Differences of log probabilities; unbounded in both directions.
    LogitDiff,
    /// Values in `[0, 1]`.
    Probability,
}

impl ScoreSpace {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreSpace::Log => "log",
            ScoreSpace::LogitDiff => "logit-diff",
            ScoreSpace::Probability => "probability",
        }
    }
}

impl std::str::FromStr for ScoreSpace {
    type Err = AlignError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(ScoreSpace::Log),
            "logit-diff" => Ok(ScoreSpace::LogitDiff),
            "probability" => Ok(ScoreSpace::Probability),
            other => Err(AlignError::malformed(format!("unknown score space {other:?}"))),
        }
    }
}

/// Dense `|S| x |T|` score matrix, row-major with source-indexed rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAlignment {
    rows: usize,
    cols: usize,
    scores: Vec<f64>,
    space: ScoreSpace,
}

impl SoftAlignment {
    /// Validates and normalizes a score matrix. Infinite values in log-like
    /// spaces are clamped to `±1e9`; NaN is always rejected.
    pub fn new(rows: usize, cols: usize, mut scores: Vec<f64>, space: ScoreSpace) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(AlignError::malformed("score matrix has a zero dimension"));
        }
        if scores.len() != rows * cols {
            return Err(AlignError::malformed(format!(
                "score matrix {rows}x{cols} has {} entries",
                scores.len()
            )));
        }
        for v in scores.iter_mut() {
            if v.is_nan() {
                return Err(AlignError::malformed("score matrix contains NaN"));
            }
            match space {
                ScoreSpace::Probability => {
                    if !(0.0..=1.0).contains(v) {
                        return Err(AlignError::malformed(format!(
                            "probability score {v} outside [0, 1]"
                        )));
                    }
                }
                ScoreSpace::Log | ScoreSpace::LogitDiff => {
                    if v.is_infinite() {
                        *v = if *v < 0.0 { LOG_ZERO } else { -LOG_ZERO };
                    }
                }
            }
        }
        Ok(SoftAlignment { rows, cols, scores, space })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, space: ScoreSpace) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(AlignError::malformed("ragged score matrix"));
        }
        SoftAlignment::new(n, m, rows.into_iter().flatten().collect(), space)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn space(&self) -> ScoreSpace {
        self.space
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.scores[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |i| self.get(i, j))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> SoftAlignment {
        let mut scores = Vec::with_capacity(self.scores.len());
        for j in 0..self.cols {
            scores.extend(self.column(j));
        }
        SoftAlignment {
            rows: self.cols,
            cols: self.rows,
            scores,
            space: self.space,
        }
    }

    pub fn max(&self) -> f64 {
        self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.scores.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// A set of `(source, target)` links within a `rows x cols` sentence pair.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HardAlignment {
    rows: usize,
    cols: usize,
    pairs: BTreeSet<(usize, usize)>,
}

impl HardAlignment {
    pub fn new(rows: usize, cols: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let pairs: BTreeSet<_> = pairs.into_iter().collect();
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= rows || j >= cols) {
            return Err(AlignError::malformed(format!(
                "link {i}-{j} outside a {rows}x{cols} sentence pair"
            )));
        }
        Ok(HardAlignment { rows, cols, pairs })
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        HardAlignment { rows, cols, pairs: BTreeSet::new() }
    }

    /// Every link of the Cartesian product.
    pub fn full(rows: usize, cols: usize) -> Self {
        let pairs = (0..rows).flat_map(|i| (0..cols).map(move |j| (i, j))).collect();
        HardAlignment { rows, cols, pairs }
    }

    pub(crate) fn from_set_unchecked(rows: usize, cols: usize, pairs: BTreeSet<(usize, usize)>) -> Self {
        HardAlignment { rows, cols, pairs }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.pairs.contains(&(i, j))
    }

    /// Links in `(i, j)` order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn pairs(&self) -> &BTreeSet<(usize, usize)> {
        &self.pairs
    }

    pub fn transpose(&self) -> HardAlignment {
        HardAlignment {
            rows: self.cols,
            cols: self.rows,
            pairs: self.pairs.iter().map(|&(i, j)| (j, i)).collect(),
        }
    }
}

/// Gold annotation with sure links `S` and possible links `P`, `S ⊆ P`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldAlignment {
    rows: usize,
    cols: usize,
    sure: BTreeSet<(usize, usize)>,
    possible: BTreeSet<(usize, usize)>,
}

impl GoldAlignment {
    /// Sure links are added to the possible set automatically.
    pub fn new(
        rows: usize,
        cols: usize,
        sure: impl IntoIterator<Item = (usize, usize)>,
        possible: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let sure = HardAlignment::new(rows, cols, sure)?.pairs;
        let mut possible = HardAlignment::new(rows, cols, possible)?.pairs;
        possible.extend(sure.iter().copied());
        Ok(GoldAlignment { rows, cols, sure, possible })
    }

    /// Gold where every link is sure.
    pub fn sure_only(hard: &HardAlignment) -> Self {
        GoldAlignment {
            rows: hard.rows,
            cols: hard.cols,
            sure: hard.pairs.clone(),
            possible: hard.pairs.clone(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn sure(&self) -> &BTreeSet<(usize, usize)> {
        &self.sure
    }

    pub fn possible(&self) -> &BTreeSet<(usize, usize)> {
        &self.possible
    }

    pub fn is_sure(&self, i: usize, j: usize) -> bool {
        self.sure.contains(&(i, j))
    }

    pub fn is_possible(&self, i: usize, j: usize) -> bool {
        self.possible.contains(&(i, j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_rejects_reserved_and_empty() {
        assert!(Token::new("").is_err());
        assert!(Token::new(UNK).is_err());
        assert!(Token::new("a b").is_err());
        assert!(Token::new("Prague").is_ok());
    }

    #[test]
    fn subwords_must_spell_the_token() {
        assert!(Token::with_subwords("hello", vec!["hel@@".into(), "lo".into()]).is_ok());
        assert!(Token::with_subwords("hello", vec!["\u{2581}hel".into(), "lo".into()]).is_ok());
        assert!(Token::with_subwords("hello", vec!["hel".into(), "p".into()]).is_err());
        assert!(Token::with_subwords("hello", vec![]).is_err());
    }

    #[test]
    fn soft_alignment_clamps_and_validates() {
        let m = SoftAlignment::new(1, 2, vec![f64::NEG_INFINITY, -1.0], ScoreSpace::Log).unwrap();
        assert_eq!(m.get(0, 0), LOG_ZERO);
        assert!(SoftAlignment::new(1, 1, vec![f64::NAN], ScoreSpace::Log).is_err());
        assert!(SoftAlignment::new(1, 1, vec![1.5], ScoreSpace::Probability).is_err());
        assert!(SoftAlignment::new(1, 2, vec![0.1], ScoreSpace::Probability).is_err());
    }

    #[test]
    fn soft_transpose() {
        let m = SoftAlignment::from_rows(vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]], ScoreSpace::Log)
            .unwrap();
        let t = m.transpose();
        assert_eq!(t.dims(), (3, 2));
        assert_eq!(t.to_rows(), vec![vec![1.0, 4.0], vec![2.0, 5.0], vec![3.0, 6.0]]);
        assert_eq!(t.transpose(), m);
    }

    #[test]
    fn hard_alignment_bounds() {
        assert!(HardAlignment::new(2, 2, [(2, 0)]).is_err());
        let a = HardAlignment::new(2, 3, [(0, 2), (0, 2)]).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a.transpose().dims(), (3, 2));
        assert!(a.transpose().contains(2, 0));
    }

    #[test]
    fn gold_sure_is_subset_of_possible() {
        let g = GoldAlignment::new(3, 3, [(0, 0)], [(1, 1)]).unwrap();
        assert!(g.is_possible(0, 0));
        assert!(g.is_possible(1, 1));
        assert!(!g.is_sure(1, 1));
    }
}
