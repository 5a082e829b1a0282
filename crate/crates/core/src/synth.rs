//! Seeded synthetic bitext with known alignments.
//!
//! A bijective dictionary maps source word types to target word types whose
//! spelling is related (some identical, some with a small edit, some
//! unrelated). Each sentence uses distinct word types, and the target side
//! is the word-by-word translation with a few adjacent swaps.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{AlignError, Result};
use crate::types::{GoldAlignment, ScoreSpace, SentencePair, SoftAlignment, Token};

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Chance of swapping a target word with its right neighbour.
    pub swap_prob: f64,
    /// Characters per subword piece.
    pub subword_chars: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 26,
            sentences: 500,
            min_len: 3,
            max_len: 8,
            swap_prob: 0.25,
            subword_chars: 3,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    /// `(source, target)` word pairs, in source-word order.
    pub dictionary: Vec<(String, String)>,
    /// Sentence pairs with subword segmentation on both sides.
    pub pairs: Vec<SentencePair>,
    /// The generating alignment of each pair, all links sure.
    pub golds: Vec<GoldAlignment>,
}

/// Splits `word` into pieces of `n` characters, marking all but the last
/// with a trailing `@@`.
pub fn segment(word: &str, n: usize) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let chunks: Vec<String> = chars.chunks(n.max(1)).map(|c| c.iter().collect()).collect();
    let last = chunks.len() - 1;
    chunks
        .into_iter()
        .enumerate()
        .map(|(k, c)| if k < last { format!("{c}@@") } else { c })
        .collect()
}

fn random_word(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(3..=9);
    (0..len).map(|_| LETTERS[rng.random_range(0..LETTERS.len())] as char).collect()
}

fn edited(word: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    let pos = rng.random_range(0..chars.len());
    let letter = LETTERS[rng.random_range(0..LETTERS.len())] as char;
    match rng.random_range(0..3) {
        0 => chars[pos] = letter,
        1 => chars.insert(pos, letter),
        _ if chars.len() > 3 => {
            chars.remove(pos);
        }
        _ => chars.push(letter),
    }
    chars.into_iter().collect()
}

fn dictionary(size: usize, rng: &mut ChaCha8Rng) -> Vec<(String, String)> {
    let mut sources = BTreeSet::new();
    while sources.len() < size {
        sources.insert(random_word(rng));
    }
    let mut sources: Vec<String> = sources.into_iter().collect();
    sources.shuffle(rng);
    let mut used = BTreeSet::new();
    let mut out = Vec::with_capacity(size);
    for s in sources {
        let roll: f64 = rng.random();
        let mut t = if roll < 0.3 {
            s.clone()
        } else if roll < 0.7 {
            edited(&s, rng)
        } else {
            random_word(rng)
        };
        while used.contains(&t) {
            t = random_word(rng);
        }
        used.insert(t.clone());
        out.push((s, t));
    }
    out
}

fn token(word: &str, n: usize) -> Result<Token> {
    Token::with_subwords(word, segment(word, n))
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    if config.min_len == 0 || config.min_len > config.max_len {
        return Err(AlignError::malformed(format!(
            "sentence lengths {}..={} are empty or inverted",
            config.min_len, config.max_len
        )));
    }
    if config.max_len > config.vocab_size {
        return Err(AlignError::malformed(format!(
            "sentences of {} distinct words need at least that many word types, got {}",
            config.max_len, config.vocab_size
        )));
    }
    if !(0.0..=1.0).contains(&config.swap_prob) {
        return Err(AlignError::malformed(format!("swap probability {} outside [0, 1]", config.swap_prob)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dict = dictionary(config.vocab_size, &mut rng);
    let mut pairs = Vec::with_capacity(config.sentences);
    let mut golds = Vec::with_capacity(config.sentences);
    let types: Vec<usize> = (0..dict.len()).collect();
    for id in 0..config.sentences {
        let len = rng.random_range(config.min_len..=config.max_len);
        let words: Vec<usize> = types.choose_multiple(&mut rng, len).copied().collect();
        // order[j] is the source position translated at target position j.
        let mut order: Vec<usize> = (0..len).collect();
        let mut j = 0;
        while j + 1 < len {
            if rng.random_bool(config.swap_prob) {
                order.swap(j, j + 1);
                j += 2;
            } else {
                j += 1;
            }
        }
        let src = words
            .iter()
            .map(|&w| token(&dict[w].0, config.subword_chars))
            .collect::<Result<Vec<_>>>()?;
        let tgt = order
            .iter()
            .map(|&i| token(&dict[words[i]].1, config.subword_chars))
            .collect::<Result<Vec<_>>>()?;
        let links: Vec<(usize, usize)> = order.iter().enumerate().map(|(j, &i)| (i, j)).collect();
        golds.push(GoldAlignment::new(len, len, links, [])?);
        pairs.push(SentencePair::new(id, src, tgt)?);
    }
    Ok(SynthCorpus { dictionary: dict, pairs, golds })
}

/// Score channel that sees the gold alignment through Gaussian noise:
/// `signal·[link is sure] + N(0, sigma²)`, in logit-difference space.
pub fn noisy_channel(gold: &GoldAlignment, signal: f64, sigma: f64, rng: &mut ChaCha8Rng) -> Result<SoftAlignment> {
    let noise = Normal::new(0.0, sigma).map_err(|e| AlignError::malformed(format!("noise level {sigma}: {e}")))?;
    let (rows, cols) = gold.dims();
    let mut scores = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            let base = if gold.is_sure(i, j) { signal } else { 0.0 };
            scores.push(base + noise.sample(rng));
        }
    }
    SoftAlignment::new(rows, cols, scores, ScoreSpace::LogitDiff)
}
