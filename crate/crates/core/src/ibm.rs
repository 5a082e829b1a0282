//! Lexical translation model trained with EM.
//!
//! With `diagonal_tension == 0` this is IBM Model 1 with a NULL source word.
//! A positive tension switches on a fixed positional prior that favours links
//! near the diagonal, weighting source position `i` for target position `j`
//! by `exp(-λ·|i/|S| − j/|T||)`, renormalized so the total source mass matches
//! Model 1. NULL always keeps Model 1's weight.
//!
//! The translation table is sparse: only word pairs that co-occur in the
//! training corpus get an entry, initialized uniformly.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rayon::prelude::*;

use crate::error::{AlignError, Result};
use crate::types::{HardAlignment, ScoreSpace, SentencePair, SoftAlignment, Token, NULL, UNK};

/// Probability floor applied before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

const MODEL_MAGIC: &str = "ALIGNKIT-IBM v1";
const SRC_NULL: u32 = 0;
const SRC_UNK: u32 = 1;
const TGT_UNK: u32 = 0;
/// Upper bound on per-worker count accumulators in one E-step.
const E_STEP_SHARDS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
struct Vocab {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn with_reserved(reserved: &[&str]) -> Self {
        let mut v = Vocab { words: Vec::new(), index: HashMap::new() };
        for w in reserved {
            v.intern(w);
        }
        v
    }

    fn intern(&mut self, word: &str) -> u32 {
        if let Some(&id) = self.index.get(word) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(word.to_owned());
        self.index.insert(word.to_owned(), id);
        id
    }

    fn lookup(&self, word: &str, unk: u32) -> u32 {
        self.index.get(word).copied().unwrap_or(unk)
    }

    fn len(&self) -> usize {
        self.words.len()
    }
}

/// Sparse translation table `t(target | source)` stored row-compressed by
/// source word.
#[derive(Debug, Clone, PartialEq)]
struct Table {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    probs: Vec<f64>,
}

impl Table {
    fn from_rows(rows: &[BTreeMap<u32, f64>]) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut targets = Vec::new();
        let mut probs = Vec::new();
        offsets.push(0);
        for row in rows {
            for (&t, &p) in row {
                targets.push(t);
                probs.push(p);
            }
            offsets.push(targets.len());
        }
        Table { offsets, targets, probs }
    }

    fn position(&self, src: u32, tgt: u32) -> Option<usize> {
        let s = src as usize;
        if s + 1 >= self.offsets.len() {
            return None;
        }
        let (lo, hi) = (self.offsets[s], self.offsets[s + 1]);
        self.targets[lo..hi].binary_search(&tgt).ok().map(|k| lo + k)
    }

    fn get(&self, src: u32, tgt: u32) -> f64 {
        self.position(src, tgt).map_or(0.0, |k| self.probs[k])
    }

    fn row(&self, src: usize) -> std::ops::Range<usize> {
        self.offsets[src]..self.offsets[src + 1]
    }

    fn n_rows(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Trained lexical translation model.
#[derive(Debug, Clone, PartialEq)]
pub struct LexiconModel {
    src_vocab: Vocab,
    tgt_vocab: Vocab,
    table: Table,
    diagonal_tension: f64,
}

/// Sentence pair mapped to vocabulary ids. Source ids exclude NULL.
struct Encoded {
    src: Vec<u32>,
    tgt: Vec<u32>,
}

/// Unnormalized alignment prior weights `w[j][i]`, `i = 0` being NULL.
/// Source weights average to one per target position, so NULL's share is
/// always `1 / (|S| + 1)` and a zero tension gives all-ones weights.
fn prior_weights(src_len: usize, tgt_len: usize, tension: f64) -> Vec<Vec<f64>> {
    let n = src_len as f64;
    let m = tgt_len as f64;
    (0..tgt_len)
        .map(|j| {
            let mut w = Vec::with_capacity(src_len + 1);
            w.push(1.0);
            let raw: Vec<f64> = (0..src_len)
                .map(|i| (-tension * (i as f64 / n - j as f64 / m).abs()).exp())
                .collect();
            let z: f64 = raw.iter().sum();
            w.extend(raw.iter().map(|e| n * e / z));
            w
        })
        .collect()
}

impl LexiconModel {
    /// Builds a model from explicit `(source, target, probability)` entries.
    /// Use [`NULL`] as the source word for NULL-generated targets. Entries are
    /// not renormalized.
    pub fn from_entries<'a>(
        entries: impl IntoIterator<Item = (&'a str, &'a str, f64)>,
        diagonal_tension: f64,
    ) -> Result<Self> {
        check_tension(diagonal_tension)?;
        let mut src_vocab = Vocab::with_reserved(&[NULL, UNK]);
        let mut tgt_vocab = Vocab::with_reserved(&[UNK]);
        let mut collected: Vec<(String, String, f64)> = Vec::new();
        for (s, t, p) in entries {
            if !(p.is_finite() && p >= 0.0) {
                return Err(AlignError::malformed(format!("t({t}|{s}) = {p} is not a probability")));
            }
            collected.push((s.to_owned(), t.to_owned(), p));
        }
        // Deterministic ids regardless of entry order.
        collected.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
        for (s, t, _) in &collected {
            src_vocab.intern(s);
            tgt_vocab.intern(t);
        }
        let mut rows = vec![BTreeMap::new(); src_vocab.len()];
        for (s, t, p) in &collected {
            let sid = src_vocab.lookup(s, SRC_UNK) as usize;
            let tid = tgt_vocab.lookup(t, TGT_UNK);
            if rows[sid].insert(tid, *p).is_some() {
                return Err(AlignError::malformed(format!("duplicate entry t({t}|{s})")));
            }
        }
        Ok(LexiconModel {
            src_vocab,
            tgt_vocab,
            table: Table::from_rows(&rows),
            diagonal_tension,
        })
    }

    pub fn diagonal_tension(&self) -> f64 {
        self.diagonal_tension
    }

    /// `t(target | source)`; use [`NULL`] for the NULL source. Unknown words
    /// map to the UNK entries, which carry no probability mass.
    pub fn prob(&self, source: &str, target: &str) -> f64 {
        self.table.get(self.src_id(source), self.tgt_id(target))
    }

    /// Largest deviation from one of any non-empty per-source distribution.
    pub fn max_normalization_error(&self) -> f64 {
        (0..self.table.n_rows())
            .map(|s| self.table.row(s))
            .filter(|r| !r.is_empty())
            .map(|r| (self.table.probs[r].iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// All entries as `(source, target, probability)`, sorted by words.
    pub fn entries(&self) -> Vec<(&str, &str, f64)> {
        let mut out = Vec::with_capacity(self.table.probs.len());
        for s in 0..self.table.n_rows() {
            for k in self.table.row(s) {
                out.push((
                    self.src_vocab.words[s].as_str(),
                    self.tgt_vocab.words[self.table.targets[k] as usize].as_str(),
                    self.table.probs[k],
                ));
            }
        }
        out.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        out
    }

    fn src_id(&self, word: &str) -> u32 {
        if word == NULL {
            SRC_NULL
        } else {
            self.src_vocab.lookup(word, SRC_UNK)
        }
    }

    fn tgt_id(&self, word: &str) -> u32 {
        self.tgt_vocab.lookup(word, TGT_UNK)
    }

    fn encode_words<S: AsRef<str>>(&self, src: &[S], tgt: &[S]) -> Encoded {
        Encoded {
            src: src.iter().map(|w| self.src_id(w.as_ref())).collect(),
            tgt: tgt.iter().map(|w| self.tgt_id(w.as_ref())).collect(),
        }
    }

    fn encode(&self, pair: &SentencePair) -> Encoded {
        let src: Vec<&str> = pair.src.iter().map(Token::text).collect();
        let tgt: Vec<&str> = pair.tgt.iter().map(Token::text).collect();
        self.encode_words(&src, &tgt)
    }

    /// Posterior over `[NULL, s_0, .., s_{n-1}]` for each target position,
    /// with each `t` floored at [`PROB_FLOOR`] so fully unknown columns fall
    /// back to the prior.
    fn posteriors(&self, enc: &Encoded) -> Vec<Vec<f64>> {
        let weights = prior_weights(enc.src.len(), enc.tgt.len(), self.diagonal_tension);
        enc.tgt
            .iter()
            .zip(&weights)
            .map(|(&t, w)| {
                let mut col: Vec<f64> = std::iter::once(SRC_NULL)
                    .chain(enc.src.iter().copied())
                    .zip(w)
                    .map(|(s, wi)| wi * self.table.get(s, t).max(PROB_FLOOR))
                    .collect();
                let z: f64 = col.iter().sum();
                col.iter_mut().for_each(|p| *p /= z);
                col
            })
            .collect()
    }

    /// Alignment posteriors as a probability-space matrix. NULL mass is left
    /// out of the matrix, so columns sum to at most one.
    pub fn posterior_matrix(&self, pair: &SentencePair) -> SoftAlignment {
        let post = self.posteriors(&self.encode(pair));
        let (n, m) = pair.dims();
        let mut scores = vec![0.0; n * m];
        for (j, col) in post.iter().enumerate() {
            for i in 0..n {
                scores[i * m + j] = col[i + 1];
            }
        }
        SoftAlignment::new(n, m, scores, ScoreSpace::Probability)
            .expect("posteriors are probabilities")
    }

    /// Posterior of the NULL source for each target token.
    pub fn null_posteriors(&self, pair: &SentencePair) -> Vec<f64> {
        self.posteriors(&self.encode(pair)).iter().map(|c| c[0]).collect()
    }

    /// Links every target token to its most probable source token, unless
    /// NULL is strictly more probable. Ties go to the smallest source index.
    pub fn viterbi_align(&self, pair: &SentencePair) -> HardAlignment {
        let post = self.posteriors(&self.encode(pair));
        let (n, m) = pair.dims();
        let mut links = Vec::with_capacity(m);
        for (j, col) in post.iter().enumerate() {
            let mut best = 1;
            for i in 2..=n {
                if col[i] > col[best] {
                    best = i;
                }
            }
            if col[best] >= col[0] {
                links.push((best - 1, j));
            }
        }
        HardAlignment::new(n, m, links).expect("viterbi links are in range")
    }

    fn token_logprobs_enc(&self, enc: &Encoded) -> Vec<f64> {
        let weights = prior_weights(enc.src.len(), enc.tgt.len(), self.diagonal_tension);
        let norm = (enc.src.len() + 1) as f64;
        enc.tgt
            .iter()
            .zip(&weights)
            .map(|(&t, w)| {
                let mass: f64 = std::iter::once(SRC_NULL)
                    .chain(enc.src.iter().copied())
                    .zip(w)
                    .map(|(s, wi)| wi * self.table.get(s, t))
                    .sum();
                (mass / norm).max(PROB_FLOOR).ln()
            })
            .collect()
    }

    /// Log-probability of each target word given the source words.
    pub fn token_logprobs_words<S: AsRef<str>>(&self, src: &[S], tgt: &[S]) -> Vec<f64> {
        self.token_logprobs_enc(&self.encode_words(src, tgt))
    }

    /// Sentence log-probability and its per-target-token terms.
    pub fn sentence_logprob(&self, src: &[Token], tgt: &[Token]) -> (f64, Vec<f64>) {
        let s: Vec<&str> = src.iter().map(Token::text).collect();
        let t: Vec<&str> = tgt.iter().map(Token::text).collect();
        let tokens = self.token_logprobs_words(&s, &t);
        (tokens.iter().sum(), tokens)
    }

    /// Writes the model in the versioned flat text format.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        let mut buf = String::new();
        writeln!(buf, "{MODEL_MAGIC} lambda={}", self.diagonal_tension).unwrap();
        for (s, t, p) in self.entries() {
            writeln!(buf, "{s}\t{t}\t{p:.16e}").unwrap();
        }
        out.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| AlignError::malformed("empty model file"))??;
        let tension = header
            .strip_prefix(MODEL_MAGIC)
            .and_then(|rest| rest.strip_prefix(" lambda="))
            .ok_or_else(|| AlignError::malformed(format!("bad model header {header:?}")))?
            .parse::<f64>()
            .map_err(|e| AlignError::malformed(format!("bad lambda in model header: {e}")))?;
        let mut entries = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            let mut parts = line.split('\t');
            let (Some(s), Some(t), Some(p), None) = (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(AlignError::malformed(format!("model line {}: {line:?}", k + 2)));
            };
            let p: f64 = p
                .parse()
                .map_err(|e| AlignError::malformed(format!("model line {}: {e}", k + 2)))?;
            entries.push((s.to_owned(), t.to_owned(), p));
        }
        LexiconModel::from_entries(entries.iter().map(|(s, t, p)| (s.as_str(), t.as_str(), *p)), tension)
    }
}

fn check_tension(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(AlignError::malformed(format!("diagonal tension {t} must be finite and non-negative")))
    }
}

/// Result of [`train_em_logged`]: the model plus one corpus log-likelihood per
/// iteration, each measured with the parameters entering that iteration.
#[derive(Debug, Clone)]
pub struct EmRun {
    pub model: LexiconModel,
    pub log_likelihood: Vec<f64>,
}

pub fn train_em(corpus: &[SentencePair], iterations: usize, diagonal_tension: f64) -> Result<LexiconModel> {
    Ok(train_em_logged(corpus, iterations, diagonal_tension)?.model)
}

/// EM training. The E-step runs over a fixed sharding of the corpus and the
/// shard accumulators are merged in shard order, so results do not depend on
/// the thread count.
pub fn train_em_logged(corpus: &[SentencePair], iterations: usize, diagonal_tension: f64) -> Result<EmRun> {
    if corpus.is_empty() {
        return Err(AlignError::malformed("cannot train on an empty corpus"));
    }
    if iterations == 0 {
        return Err(AlignError::malformed("iterations must be at least 1"));
    }
    check_tension(diagonal_tension)?;

    let mut src_vocab = Vocab::with_reserved(&[NULL, UNK]);
    let mut tgt_vocab = Vocab::with_reserved(&[UNK]);
    // Intern in sorted order so ids do not depend on corpus order.
    let mut src_words = BTreeSet::new();
    let mut tgt_words = BTreeSet::new();
    for p in corpus {
        src_words.extend(p.src.iter().map(Token::text));
        tgt_words.extend(p.tgt.iter().map(Token::text));
    }
    src_words.iter().for_each(|w| {
        src_vocab.intern(w);
    });
    tgt_words.iter().for_each(|w| {
        tgt_vocab.intern(w);
    });

    let encoded: Vec<Encoded> = corpus
        .iter()
        .map(|p| Encoded {
            src: p.src.iter().map(|t| src_vocab.lookup(t.text(), SRC_UNK)).collect(),
            tgt: p.tgt.iter().map(|t| tgt_vocab.lookup(t.text(), TGT_UNK)).collect(),
        })
        .collect();

    let mut cooc: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); src_vocab.len()];
    for e in &encoded {
        for &s in std::iter::once(&SRC_NULL).chain(&e.src) {
            cooc[s as usize].extend(e.tgt.iter().copied());
        }
    }
    let rows: Vec<BTreeMap<u32, f64>> = cooc
        .iter()
        .map(|set| {
            let u = 1.0 / set.len().max(1) as f64;
            set.iter().map(|&t| (t, u)).collect()
        })
        .collect();

    let mut model = LexiconModel {
        src_vocab,
        tgt_vocab,
        table: Table::from_rows(&rows),
        diagonal_tension,
    };

    let shard = encoded.len().div_ceil(E_STEP_SHARDS);
    let mut log_likelihood = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let partials: Vec<(Vec<f64>, f64)> = encoded
            .par_chunks(shard)
            .map(|chunk| e_step(&model, chunk))
            .collect();
        let mut counts = vec![0.0; model.table.probs.len()];
        let mut ll = 0.0;
        for (c, l) in partials {
            counts.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
            ll += l;
        }
        log_likelihood.push(ll);
        // M-step: renormalize expected counts per source word.
        for s in 0..model.table.n_rows() {
            let range = model.table.row(s);
            let total: f64 = counts[range.clone()].iter().sum();
            if total > 0.0 {
                for k in range {
                    model.table.probs[k] = counts[k] / total;
                }
            }
        }
    }
    Ok(EmRun { model, log_likelihood })
}

fn e_step(model: &LexiconModel, chunk: &[Encoded]) -> (Vec<f64>, f64) {
    let mut counts = vec![0.0; model.table.probs.len()];
    let mut ll = 0.0;
    for enc in chunk {
        let weights = prior_weights(enc.src.len(), enc.tgt.len(), model.diagonal_tension);
        let norm = (enc.src.len() + 1) as f64;
        let mut slots = Vec::with_capacity(enc.src.len() + 1);
        let mut mass = Vec::with_capacity(enc.src.len() + 1);
        for (&t, w) in enc.tgt.iter().zip(&weights) {
            slots.clear();
            mass.clear();
            for (s, wi) in std::iter::once(SRC_NULL).chain(enc.src.iter().copied()).zip(w) {
                let k = model.table.position(s, t);
                slots.push(k);
                mass.push(wi * k.map_or(0.0, |k| model.table.probs[k]));
            }
            let z: f64 = mass.iter().sum();
            ll += (z / norm).max(PROB_FLOOR).ln();
            if z > 0.0 {
                for (k, p) in slots.iter().zip(&mass) {
                    if let Some(k) = k {
                        counts[*k] += p / z;
                    }
                }
            }
        }
    }
    (counts, ll)
}
