//! Per-link feature assembly and a small feed-forward scorer trained on
//! gold alignments.
//!
//! Each (sentence, i, j) link becomes one row of [`INPUT_WIDTH`] values: the
//! thirteen features in [`FEATURE_NAMES`] order, followed by one presence bit
//! per feature group in [`GROUP_NAMES`] order. Absent groups are zero-filled.

mod mlp;

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use mlp::{logistic, loss_and_grad, mlp_forward, Batch, DropoutMasks, Layer, Mlp, DROPOUT_RATE, HIDDEN_WIDTHS};

use crate::error::{AlignError, Result};
use crate::extract::{ensemble_chain, extract_chain, ExtractorSpec, SetOp};
use crate::metrics::corpus_eval;
use crate::types::{strip_markers, GoldAlignment, HardAlignment, ScoreSpace, SentencePair, SoftAlignment, Token};

pub const FEATURE_NAMES: [&str; 13] = [
    "m1",
    "m2b",
    "m3aa",
    "m3bb",
    "attention_avg",
    "fastalign_binary",
    "m1_reverse",
    "pos_diff",
    "len_diff",
    "subword_count_diff",
    "levenshtein_norm",
    "subword_overlap",
    "string_equal",
];

/// Optional feature groups. `subwords` covers `subword_count_diff` and
/// `subword_overlap`; the other four manual features are always present.
pub const GROUP_NAMES: [&str; 8] =
    ["m1", "m2b", "m3aa", "m3bb", "attention_avg", "fastalign_binary", "m1_reverse", "subwords"];

pub const INPUT_WIDTH: usize = FEATURE_NAMES.len() + GROUP_NAMES.len();

const MODEL_HEADER: &str = "ALIGNKIT-MLP v1";

/// Which optional groups a table or model was built with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FeatureSet {
    pub present: [bool; 8],
}

impl FeatureSet {
    pub fn names(&self) -> Vec<&'static str> {
        GROUP_NAMES.iter().zip(self.present).filter(|(_, p)| *p).map(|(n, _)| *n).collect()
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut set = FeatureSet::default();
        for n in names {
            let k = GROUP_NAMES
                .iter()
                .position(|g| *g == n.as_ref())
                .ok_or_else(|| AlignError::malformed(format!("unknown feature group {:?}", n.as_ref())))?;
            set.present[k] = true;
        }
        Ok(set)
    }

    pub fn has_subwords(&self) -> bool {
        self.present[7]
    }
}

/// The six hand-crafted features of one token pair, in
/// `pos_diff, len_diff, subword_count_diff, levenshtein_norm,
/// subword_overlap, string_equal` order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManualFeatures {
    pub pos_diff: f64,
    pub len_diff: f64,
    pub subword_count_diff: f64,
    pub levenshtein_norm: f64,
    pub subword_overlap: f64,
    pub string_equal: f64,
}

impl ManualFeatures {
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.pos_diff,
            self.len_diff,
            self.subword_count_diff,
            self.levenshtein_norm,
            self.subword_overlap,
            self.string_equal,
        ]
    }
}

fn pieces(tok: &Token, side: &str, k: usize, id: usize) -> Result<BTreeSet<String>> {
    tok.subwords()
        .map(|p| p.iter().map(|s| strip_markers(s)).collect())
        .ok_or_else(|| AlignError::malformed(format!("sentence {id}: {side} token {k} ({tok}) has no subword segmentation")))
}

/// With `subwords` false the two subword features are left at zero.
pub fn manual_features(pair: &SentencePair, i: usize, j: usize, subwords: bool) -> Result<ManualFeatures> {
    let (n, m) = pair.dims();
    if i >= n || j >= m {
        return Err(AlignError::malformed(format!("sentence {}: link ({i}, {j}) outside {n}x{m}", pair.id)));
    }
    let (s, t) = (&pair.src[i], &pair.tgt[j]);
    let (sl, tl) = (s.text().to_lowercase(), t.text().to_lowercase());
    let longest = sl.chars().count().max(tl.chars().count()) as f64;
    let (count_diff, overlap) = if subwords {
        let a = s.subwords().map_or(0, <[String]>::len);
        let b = t.subwords().map_or(0, <[String]>::len);
        let shared = pieces(s, "source", i, pair.id)?.intersection(&pieces(t, "target", j, pair.id)?).count();
        ((a as f64 - b as f64).abs(), shared as f64)
    } else {
        (0.0, 0.0)
    };
    Ok(ManualFeatures {
        pos_diff: (i as f64 / n as f64 - j as f64 / m as f64).abs(),
        len_diff: (s.char_len() as f64 - t.char_len() as f64).abs(),
        subword_count_diff: count_diff,
        levenshtein_norm: strsim::levenshtein(&sl, &tl) as f64 / longest,
        subword_overlap: overlap,
        string_equal: if sl == tl { 1.0 } else { 0.0 },
    })
}

/// Per-sentence score matrices for the optional groups. `m1_reverse` holds
/// target-to-source matrices (`|T| x |S|`).
#[derive(Debug, Clone, Default)]
pub struct ScoreSources {
    pub m1: Option<Vec<SoftAlignment>>,
    pub m2b: Option<Vec<SoftAlignment>>,
    pub m3aa: Option<Vec<SoftAlignment>>,
    pub m3bb: Option<Vec<SoftAlignment>>,
    pub attention_avg: Option<Vec<SoftAlignment>>,
    pub fastalign: Option<Vec<HardAlignment>>,
    pub m1_reverse: Option<Vec<SoftAlignment>>,
}

impl ScoreSources {
    fn soft(&self) -> [Option<&Vec<SoftAlignment>>; 4] {
        [self.m1.as_ref(), self.m2b.as_ref(), self.m3aa.as_ref(), self.m3bb.as_ref()]
    }

    pub fn feature_set(&self, subwords: bool) -> FeatureSet {
        let s = self.soft();
        FeatureSet {
            present: [
                s[0].is_some(),
                s[1].is_some(),
                s[2].is_some(),
                s[3].is_some(),
                self.attention_avg.is_some(),
                self.fastalign.is_some(),
                self.m1_reverse.is_some(),
                subwords,
            ],
        }
    }

    fn check(&self, pairs: &[SentencePair]) -> Result<()> {
        let n = pairs.len();
        let lens = [
            ("m1", self.m1.as_ref().map(Vec::len)),
            ("m2b", self.m2b.as_ref().map(Vec::len)),
            ("m3aa", self.m3aa.as_ref().map(Vec::len)),
            ("m3bb", self.m3bb.as_ref().map(Vec::len)),
            ("attention_avg", self.attention_avg.as_ref().map(Vec::len)),
            ("fastalign_binary", self.fastalign.as_ref().map(Vec::len)),
            ("m1_reverse", self.m1_reverse.as_ref().map(Vec::len)),
        ];
        for (name, len) in lens {
            if let Some(len) = len.filter(|&l| l != n) {
                return Err(AlignError::malformed(format!("{name} has {len} sentences, the corpus {n}")));
            }
        }
        Ok(())
    }
}

/// Location of one sentence's rows in a [`FeatureTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub id: usize,
    pub rows: usize,
    pub cols: usize,
    /// Index of the sentence's first row.
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Raw (unnormalized) feature rows, sentence by sentence, source-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    set: FeatureSet,
    blocks: Vec<Block>,
    values: Vec<f64>,
    golds: Option<Vec<GoldAlignment>>,
}

impl FeatureTable {
    pub fn from_parts(
        set: FeatureSet,
        blocks: Vec<Block>,
        values: Vec<f64>,
        golds: Option<Vec<GoldAlignment>>,
    ) -> Result<Self> {
        let mut expect = 0;
        for b in &blocks {
            if b.offset != expect || b.rows == 0 || b.cols == 0 {
                return Err(AlignError::malformed(format!("sentence {}: rows are not contiguous", b.id)));
            }
            expect += b.len();
        }
        if values.len() != expect * INPUT_WIDTH {
            return Err(AlignError::malformed(format!(
                "{} values for {expect} rows of width {INPUT_WIDTH}",
                values.len()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(AlignError::malformed(format!("non-finite feature at row {}", k / INPUT_WIDTH)));
        }
        if let Some(g) = &golds {
            if g.len() != blocks.len() {
                return Err(AlignError::malformed(format!("{} gold alignments for {} sentences", g.len(), blocks.len())));
            }
            if let Some((b, _)) = blocks.iter().zip(g).find(|(b, g)| (b.rows, b.cols) != g.dims()) {
                return Err(AlignError::malformed(format!("sentence {}: gold dimensions differ", b.id)));
            }
        }
        Ok(FeatureTable { set, blocks, values, golds })
    }

    pub fn feature_set(&self) -> FeatureSet {
        self.set
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn golds(&self) -> Option<&[GoldAlignment]> {
        self.golds.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len() / INPUT_WIDTH
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * INPUT_WIDTH..(k + 1) * INPUT_WIDTH]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Rows of `blocks` in order, as one row-major buffer.
    fn gather(&self, sentences: &[usize]) -> Vec<f64> {
        sentences
            .iter()
            .flat_map(|&s| {
                let b = self.blocks[s];
                self.values[b.offset * INPUT_WIDTH..(b.offset + b.len()) * INPUT_WIDTH].iter().copied()
            })
            .collect()
    }

    fn labels_of(&self, sentence: usize, policy: LabelPolicy) -> Result<Vec<f64>> {
        let golds = self.golds.as_ref().ok_or_else(|| AlignError::malformed("feature table has no gold alignments"))?;
        let (b, g) = (self.blocks[sentence], &golds[sentence]);
        Ok((0..b.rows)
            .flat_map(|i| (0..b.cols).map(move |j| (i, j)))
            .map(|(i, j)| {
                let pos = match policy {
                    LabelPolicy::SureOnly => g.is_sure(i, j),
                    LabelPolicy::SureOrPossible => g.is_possible(i, j),
                };
                if pos {
                    1.0
                } else {
                    0.0
                }
            })
            .collect())
    }
}

fn source_value(m: &SoftAlignment, name: &str, id: usize, dims: (usize, usize), i: usize, j: usize) -> Result<f64> {
    if m.dims() != dims {
        return Err(AlignError::malformed(format!(
            "sentence {id}: {name} matrix is {:?}, the sentence pair {:?}",
            m.dims(),
            dims
        )));
    }
    Ok(m.get(i, j))
}

fn sentence_rows(
    k: usize,
    pair: &SentencePair,
    sources: &ScoreSources,
    set: FeatureSet,
) -> Result<Vec<f64>> {
    let (n, m) = pair.dims();
    let id = pair.id;
    let soft = sources.soft();
    let mask: Vec<f64> = set.present.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect();
    if let Some(f) = sources.fastalign.as_ref().map(|f| &f[k]).filter(|f| f.dims() != (n, m)) {
        return Err(AlignError::malformed(format!("sentence {id}: fastalign alignment is {:?}", f.dims())));
    }
    let mut out = Vec::with_capacity(n * m * INPUT_WIDTH);
    for i in 0..n {
        for j in 0..m {
            for (name, src) in ["m1", "m2b", "m3aa", "m3bb"].iter().zip(soft) {
                out.push(match src {
                    Some(v) => source_value(&v[k], name, id, (n, m), i, j)?,
                    None => 0.0,
                });
            }
            out.push(match &sources.attention_avg {
                Some(v) => source_value(&v[k], "attention_avg", id, (n, m), i, j)?,
                None => 0.0,
            });
            out.push(match &sources.fastalign {
                Some(v) if v[k].contains(i, j) => 1.0,
                _ => 0.0,
            });
            out.push(match &sources.m1_reverse {
                Some(v) => source_value(&v[k], "m1_reverse", id, (m, n), j, i)?,
                None => 0.0,
            });
            out.extend(manual_features(pair, i, j, set.has_subwords())?.to_array());
            out.extend(&mask);
        }
    }
    Ok(out)
}

/// Builds one row per (sentence, i, j). With `subwords`, every token must
/// carry a segmentation.
pub fn assemble_features(
    pairs: &[SentencePair],
    sources: &ScoreSources,
    golds: Option<&[GoldAlignment]>,
    subwords: bool,
) -> Result<FeatureTable> {
    sources.check(pairs)?;
    if let Some(g) = golds.filter(|g| g.len() != pairs.len()) {
        return Err(AlignError::malformed(format!("{} gold alignments for {} sentences", g.len(), pairs.len())));
    }
    if let Some((k, g)) = golds.and_then(|g| g.iter().enumerate().find(|(k, g)| g.dims() != pairs[*k].dims())) {
        return Err(AlignError::malformed(format!(
            "sentence {}: gold alignment is {:?}, the sentence pair {:?}",
            pairs[k].id,
            g.dims(),
            pairs[k].dims()
        )));
    }
    let set = sources.feature_set(subwords);
    let chunks: Vec<Vec<f64>> = pairs
        .par_iter()
        .enumerate()
        .map(|(k, p)| sentence_rows(k, p, sources, set))
        .collect::<Result<_>>()?;
    let mut blocks = Vec::with_capacity(pairs.len());
    let mut offset = 0;
    for p in pairs {
        let (rows, cols) = p.dims();
        blocks.push(Block { id: p.id, rows, cols, offset });
        offset += rows * cols;
    }
    FeatureTable::from_parts(set, blocks, chunks.concat(), golds.map(<[GoldAlignment]>::to_vec))
}

/// Per-column z-scoring; constant columns are only centred.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(width: usize) -> Self {
        Normalizer { mean: vec![0.0; width], std: vec![1.0; width] }
    }

    /// Statistics of row-major `rows` with `width` columns.
    pub fn fit(rows: &[f64], width: usize) -> Self {
        let n = (rows.len() / width).max(1) as f64;
        let mut mean = vec![0.0; width];
        for r in rows.chunks(width) {
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for r in rows.chunks(width) {
            var.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m));
        }
        let std = var.iter().map(|s| (s / n).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Normalizer { mean, std }
    }

    pub fn apply_in_place(&self, rows: &mut [f64]) {
        let w = self.mean.len();
        for r in rows.chunks_mut(w) {
            r.iter_mut().zip(&self.mean).zip(&self.std).for_each(|((v, m), s)| *v = (*v - m) / s);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LabelPolicy {
    SureOnly,
    #[default]
    SureOrPossible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Share of sentences held out for epoch selection.
    pub validation_fraction: f64,
    pub labels: LabelPolicy,
    /// Extractors intersected to turn validation scores into alignments.
    pub extractors: Vec<ExtractorSpec>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 0.01,
            batch_size: 256,
            seed: 0,
            validation_fraction: 0.1,
            labels: LabelPolicy::SureOrPossible,
            extractors: ensemble_chain().to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub mlp: Mlp,
    pub normalizer: Normalizer,
    pub features: FeatureSet,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_aer: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EnsembleModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    /// Sentence indices (into the table) used for validation.
    pub validation: Vec<usize>,
}

fn validation_split(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(AlignError::Training { epoch: None, message: format!("validation fraction {fraction} outside (0, 1)") });
    }
    if n < 2 {
        return Err(AlignError::Training { epoch: None, message: "need at least two sentences to hold one out".into() });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let mut val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

fn score_blocks(model: &EnsembleModel, table: &FeatureTable, sentences: &[usize]) -> Result<Vec<SoftAlignment>> {
    sentences
        .par_iter()
        .map(|&s| {
            let b = table.blocks[s];
            let mut rows = table.gather(&[s]);
            model.normalizer.apply_in_place(&mut rows);
            let scores = rows
                .chunks(INPUT_WIDTH)
                .map(|x| mlp_forward(&model.mlp, x))
                .collect::<Result<Vec<_>>>()?;
            SoftAlignment::new(b.rows, b.cols, scores, ScoreSpace::Probability)
        })
        .collect()
}

fn chain_aer(
    model: &EnsembleModel,
    table: &FeatureTable,
    sentences: &[usize],
    golds: &[GoldAlignment],
    extractors: &[ExtractorSpec],
) -> Result<f64> {
    let scores = score_blocks(model, table, sentences)?;
    let hyps = scores
        .iter()
        .map(|s| extract_chain(s, extractors, SetOp::Intersect))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<GoldAlignment> = sentences.iter().map(|&s| golds[s].clone()).collect();
    Ok(corpus_eval(&hyps, &gold)?.aer)
}

/// Minibatch gradient descent on weighted cross-entropy. After each epoch
/// the validation sentences are aligned with `config.extractors`; the
/// parameters of the epoch with the lowest AER are returned.
pub fn mlp_train(table: &FeatureTable, config: &TrainConfig) -> Result<TrainOutcome> {
    let fail = |message: String| AlignError::Training { epoch: None, message };
    if config.epochs == 0 || config.batch_size == 0 || !config.learning_rate.is_finite() || config.learning_rate <= 0.0 {
        return Err(fail("epochs, batch size and learning rate must be positive".into()));
    }
    if config.extractors.is_empty() {
        return Err(fail("no extractor configured for validation".into()));
    }
    let golds = table.golds().ok_or_else(|| fail("training needs gold alignments".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (train, validation) = validation_split(table.blocks.len(), config.validation_fraction, &mut rng)?;

    let mut inputs = table.gather(&train);
    let labels: Vec<f64> = train
        .iter()
        .map(|&s| table.labels_of(s, config.labels))
        .collect::<Result<Vec<_>>>()?
        .concat();
    let pos = labels.iter().filter(|&&y| y == 1.0).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(fail(format!("training split has {pos} positive and {neg} negative links; both classes are needed")));
    }
    let pos_weight = neg as f64 / pos as f64;
    let weights: Vec<f64> = labels.iter().map(|&y| if y == 1.0 { pos_weight } else { 1.0 }).collect();
    let normalizer = Normalizer::fit(&inputs, INPUT_WIDTH);
    normalizer.apply_in_place(&mut inputs);

    let mut model = EnsembleModel {
        mlp: Mlp::init(INPUT_WIDTH, &mut rng),
        normalizer,
        features: table.set,
        seed: config.seed,
    };
    let mut best: Option<(f64, usize, Mlp)> = None;
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let (mut bx, mut by, mut bw) = (Vec::new(), Vec::new(), Vec::new());
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            bx.clear();
            by.clear();
            bw.clear();
            for &r in chunk {
                bx.extend_from_slice(&inputs[r * INPUT_WIDTH..(r + 1) * INPUT_WIDTH]);
                by.push(labels[r]);
                bw.push(weights[r]);
            }
            let masks = DropoutMasks::sample(&mut rng, chunk.len());
            let batch = Batch { inputs: &bx, labels: &by, weights: &bw };
            let (loss, grad) = loss_and_grad(&model.mlp, &batch, Some(&masks))?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(AlignError::Training { epoch: Some(epoch), message: "loss diverged".into() });
            }
            total += loss * chunk.len() as f64;
            let mut params = model.mlp.parameters();
            params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= config.learning_rate * g);
            model.mlp.set_parameters(&params)?;
        }
        let aer = chain_aer(&model, table, &validation, golds, &config.extractors)?;
        log.push(EpochLog { epoch, train_loss: total / labels.len() as f64, validation_aer: aer });
        if best.as_ref().is_none_or(|b| aer < b.0) {
            best = Some((aer, epoch, model.mlp.clone()));
        }
    }
    let (_, best_epoch, mlp) = best.expect("at least one epoch ran");
    model.mlp = mlp;
    Ok(TrainOutcome { model, log, best_epoch, validation })
}

/// Soft `|S| x |T|` probability matrices for every sentence of `table`.
pub fn score_table(model: &EnsembleModel, table: &FeatureTable) -> Result<Vec<SoftAlignment>> {
    if table.set != model.features {
        return Err(AlignError::malformed(format!(
            "features [{}] do not match the model's [{}]",
            table.set.names().join(" "),
            model.features.names().join(" ")
        )));
    }
    let all: Vec<usize> = (0..table.blocks.len()).collect();
    score_blocks(model, table, &all)
}

/// Scores with the model, then extracts with `A2^0.001 ∩ A3^1 ∩ A4^1`.
pub fn align_table(model: &EnsembleModel, table: &FeatureTable) -> Result<Vec<HardAlignment>> {
    score_table(model, table)?
        .iter()
        .map(|s| extract_chain(s, &ensemble_chain(), SetOp::Intersect))
        .collect()
}

pub fn ensemble_align(model: &EnsembleModel, pairs: &[SentencePair], sources: &ScoreSources) -> Result<Vec<HardAlignment>> {
    let table = assemble_features(pairs, sources, None, model.features.has_subwords())?;
    align_table(model, &table)
}

fn fmt_values(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(" ")
}

impl EnsembleModel {
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        let groups = self.features.names();
        writeln!(out, "{MODEL_HEADER}")?;
        writeln!(out, "seed {}", self.seed)?;
        writeln!(out, "features {}", if groups.is_empty() { "-".to_owned() } else { groups.join(" ") })?;
        let widths: Vec<String> = self.mlp.widths().iter().map(usize::to_string).collect();
        writeln!(out, "widths {}", widths.join(" "))?;
        writeln!(out, "mean {}", fmt_values(&self.normalizer.mean))?;
        writeln!(out, "std {}", fmt_values(&self.normalizer.std))?;
        for (k, l) in self.mlp.layers().iter().enumerate() {
            writeln!(out, "weights {k} {}", fmt_values(&l.weights))?;
            writeln!(out, "bias {k} {}", fmt_values(&l.bias))?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self> {
        let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
        let bad = |k: usize, what: &str| AlignError::malformed(format!("model line {}: {what}", k + 1));
        if lines.first().map(String::as_str) != Some(MODEL_HEADER) {
            return Err(bad(0, &format!("expected header {MODEL_HEADER:?}")));
        }
        let field = |k: usize, key: &str| -> Result<Vec<&str>> {
            let line = lines.get(k).ok_or_else(|| bad(k, "missing"))?;
            let mut parts = line.split(' ');
            if parts.next() != Some(key) {
                return Err(bad(k, &format!("expected {key:?}")));
            }
            Ok(parts.collect())
        };
        let floats = |k: usize, parts: &[&str]| -> Result<Vec<f64>> {
            parts.iter().map(|p| p.parse::<f64>().map_err(|_| bad(k, &format!("bad number {p:?}")))).collect()
        };
        let seed = match field(1, "seed")?.as_slice() {
            [s] => s.parse::<u64>().map_err(|_| bad(1, "bad seed"))?,
            _ => return Err(bad(1, "bad seed")),
        };
        let groups = field(2, "features")?;
        let features = match groups.as_slice() {
            ["-"] => FeatureSet::default(),
            g => FeatureSet::from_names(g)?,
        };
        let widths = field(3, "widths")?
            .iter()
            .map(|w| w.parse::<usize>().map_err(|_| bad(3, "bad width")))
            .collect::<Result<Vec<_>>>()?;
        if widths.first() != Some(&INPUT_WIDTH) || widths != Mlp::standard_widths(INPUT_WIDTH) {
            return Err(bad(3, &format!("unsupported widths {widths:?}")));
        }
        let mean = floats(4, &field(4, "mean")?)?;
        let std = floats(5, &field(5, "std")?)?;
        if mean.len() != INPUT_WIDTH || std.len() != INPUT_WIDTH {
            return Err(bad(4, "normalization vectors have the wrong length"));
        }
        let mut layers = Vec::new();
        for (k, w) in widths.windows(2).enumerate() {
            let line = 6 + 2 * k;
            let index = k.to_string();
            let wl = field(line, "weights")?;
            let bl = field(line + 1, "bias")?;
            if wl.first() != Some(&index.as_str()) || bl.first() != Some(&index.as_str()) {
                return Err(bad(line, &format!("expected layer {k}")));
            }
            layers.push(Layer {
                inputs: w[0],
                outputs: w[1],
                weights: floats(line, &wl[1..])?,
                bias: floats(line + 1, &bl[1..])?,
            });
        }
        if lines.len() != 6 + 2 * layers.len() {
            return Err(bad(lines.len() - 1, "trailing content"));
        }
        let mlp = Mlp::from_layers(layers)?;
        Ok(EnsembleModel { mlp, normalizer: Normalizer { mean, std }, features, seed })
    }
}
