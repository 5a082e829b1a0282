//! Soft alignment scores derived from a forced-scoring backend.
//!
//! * [`m1_scores`]: score every source token against every target token as
//!   a one-word sentence pair.
//! * [`m2_scores`]: how much the log-probability of each target token drops
//!   when one source token is obscured.
//! * [`m3_scores`]: sentence log-probability with one source token and one
//!   target token obscured at the same time.
//! * [`attention_scores`]: word-level aggregation of subword attention.
//!
//! Obscuring either deletes the token or replaces it with [`UNK`].

use std::ops::Range;

use crate::error::{AlignError, Result};
use crate::scorer::{AttentionPayload, Needs, ScoreRequest, ScoreResponse, Scorer};
use crate::types::{strip_markers, ScoreSpace, SentencePair, SoftAlignment, Token, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObscureMode {
    Delete,
    Substitute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionAggregation {
    Max,
    Avg,
}

fn words(tokens: &[Token]) -> Vec<String> {
    tokens.iter().map(|t| t.text().to_owned()).collect()
}

/// Copy of `words` with position `k` deleted or replaced by `<unk>`.
pub fn obscure(words: &[String], k: usize, mode: ObscureMode) -> Vec<String> {
    let mut out = words.to_vec();
    match mode {
        ObscureMode::Delete => {
            out.remove(k);
        }
        ObscureMode::Substitute => out[k] = UNK.to_owned(),
    }
    out
}

fn require_deletable(len: usize, mode: ObscureMode, side: &str, id: usize) -> Result<()> {
    if mode == ObscureMode::Delete && len < 2 {
        return Err(AlignError::malformed(format!(
            "sentence {id}: deleting the only {side} token leaves an empty sentence"
        )));
    }
    Ok(())
}

fn in_sentence(id: usize, err: AlignError) -> AlignError {
    match err {
        AlignError::Backend { message, line } => AlignError::Backend { message: format!("sentence {id}: {message}"), line },
        AlignError::MalformedInput(m) => AlignError::MalformedInput(format!("sentence {id}: {m}")),
        AlignError::Capability(m) => AlignError::Capability(format!("sentence {id}: {m}")),
        other => other,
    }
}

fn run<S: Scorer + ?Sized>(backend: &S, id: usize, requests: Vec<ScoreRequest>) -> Result<Vec<ScoreResponse>> {
    backend.score_batch(&requests).map_err(|e| in_sentence(id, e))
}

fn request(id: u64, src: Vec<String>, tgt: Vec<String>, need: Needs) -> ScoreRequest {
    ScoreRequest { id, src, tgt, need }
}

/// One-token translation scores: `p(s_i, t_j) = m({s_i}, {t_j})`.
/// Issues `|S|·|T|` requests; log space.
pub fn m1_scores<S: Scorer + ?Sized>(backend: &S, pair: &SentencePair) -> Result<SoftAlignment> {
    let (n, m) = pair.dims();
    let mut requests = Vec::with_capacity(n * m);
    for s in &pair.src {
        for t in &pair.tgt {
            let id = requests.len() as u64;
            requests.push(request(id, vec![s.text().to_owned()], vec![t.text().to_owned()], Needs::SENTENCE));
        }
    }
    let scores = run(backend, pair.id, requests)?
        .iter()
        .map(ScoreResponse::sentence)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| in_sentence(pair.id, e))?;
    SoftAlignment::new(n, m, scores, ScoreSpace::Log)
}

/// Source-dropout scores: `p(s_i, t_j) = m_j(S, T) − m_j(S_i, T)` where
/// `S_i` has token `i` obscured. Issues `|S| + 1` requests; logit-diff space.
pub fn m2_scores<S: Scorer + ?Sized>(backend: &S, pair: &SentencePair, mode: ObscureMode) -> Result<SoftAlignment> {
    let (n, m) = pair.dims();
    require_deletable(n, mode, "source", pair.id)?;
    let src = words(&pair.src);
    let tgt = words(&pair.tgt);
    let mut requests = vec![request(0, src.clone(), tgt.clone(), Needs::TOKENS)];
    for i in 0..n {
        requests.push(request(i as u64 + 1, obscure(&src, i, mode), tgt.clone(), Needs::TOKENS));
    }
    let replies = run(backend, pair.id, requests)?;
    let lookup = |k: usize| -> Result<&[f64]> {
        let toks = replies[k].tokens().map_err(|e| in_sentence(pair.id, e))?;
        if toks.len() != m {
            return Err(in_sentence(
                pair.id,
                AlignError::backend(format!("{} token scores for {m} target tokens", toks.len()), None),
            ));
        }
        Ok(toks)
    };
    let base = lookup(0)?;
    let mut scores = Vec::with_capacity(n * m);
    for i in 0..n {
        let obscured = lookup(i + 1)?;
        scores.extend(base.iter().zip(obscured).map(|(b, o)| b - o));
    }
    SoftAlignment::new(n, m, scores, ScoreSpace::LogitDiff)
}

/// Source-and-target dropout scores: `p(s_i, t_j) = m(S_i, T_j)`.
/// Issues `|S|·|T|` requests; log space.
pub fn m3_scores<S: Scorer + ?Sized>(
    backend: &S,
    pair: &SentencePair,
    src_mode: ObscureMode,
    tgt_mode: ObscureMode,
) -> Result<SoftAlignment> {
    let (n, m) = pair.dims();
    require_deletable(n, src_mode, "source", pair.id)?;
    require_deletable(m, tgt_mode, "target", pair.id)?;
    let src = words(&pair.src);
    let tgt = words(&pair.tgt);
    let obscured_tgt: Vec<Vec<String>> = (0..m).map(|j| obscure(&tgt, j, tgt_mode)).collect();
    let mut requests = Vec::with_capacity(n * m);
    for i in 0..n {
        let s = obscure(&src, i, src_mode);
        for t in &obscured_tgt {
            let id = requests.len() as u64;
            requests.push(request(id, s.clone(), t.clone(), Needs::SENTENCE));
        }
    }
    let scores = run(backend, pair.id, requests)?
        .iter()
        .map(ScoreResponse::sentence)
        .collect::<Result<Vec<_>>>()
        .map_err(|e| in_sentence(pair.id, e))?;
    SoftAlignment::new(n, m, scores, ScoreSpace::Log)
}

/// Maps each token to the range of its subwords within the flattened
/// subword sequence, checking the pieces against `payload`.
fn subword_ranges(tokens: &[Token], payload: &[String], side: &str, id: usize) -> Result<Vec<Range<usize>>> {
    let mut ranges = Vec::with_capacity(tokens.len());
    let mut pos = 0;
    for (k, tok) in tokens.iter().enumerate() {
        let pieces = tok.subwords().ok_or_else(|| {
            AlignError::malformed(format!("sentence {id}: {side} token {k} ({tok}) has no subword segmentation"))
        })?;
        for (off, piece) in pieces.iter().enumerate() {
            let matches = payload.get(pos + off).is_some_and(|p| strip_markers(p) == strip_markers(piece));
            if !matches {
                return Err(AlignError::malformed(format!(
                    "sentence {id}: {side} token {k} ({tok}) does not match the attention subwords"
                )));
            }
        }
        ranges.push(pos..pos + pieces.len());
        pos += pieces.len();
    }
    if pos != payload.len() {
        return Err(AlignError::malformed(format!(
            "sentence {id}: attention has {} {side} subwords but the tokens have {pos}",
            payload.len()
        )));
    }
    Ok(ranges)
}

/// Aggregates subword attention (rows = target subwords) into a token-level
/// `|S| x |T|` probability matrix by taking the max or mean of each block.
pub fn attention_scores(
    payload: &AttentionPayload,
    pair: &SentencePair,
    agg: AttentionAggregation,
) -> Result<SoftAlignment> {
    payload.validate().map_err(|e| in_sentence(pair.id, e))?;
    let src_ranges = subword_ranges(&pair.src, &payload.src_subwords, "source", pair.id)?;
    let tgt_ranges = subword_ranges(&pair.tgt, &payload.tgt_subwords, "target", pair.id)?;
    let (n, m) = pair.dims();
    let mut scores = Vec::with_capacity(n * m);
    for sr in &src_ranges {
        for tr in &tgt_ranges {
            let block = tr.clone().flat_map(|t| payload.matrix[t][sr.clone()].iter().copied());
            let v = match agg {
                AttentionAggregation::Max => block.fold(0.0, f64::max),
                AttentionAggregation::Avg => block.sum::<f64>() / (sr.len() * tr.len()) as f64,
            };
            scores.push(v.clamp(0.0, 1.0));
        }
    }
    SoftAlignment::new(n, m, scores, ScoreSpace::Probability)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ibm::LexiconModel;
    use crate::scorer::{CountingScorer, LexiconScorer};
    use crate::types::NULL;

    fn pair(s: &str, t: &str) -> SentencePair {
        SentencePair::from_text(0, s, t).unwrap()
    }

    fn lexicon(entries: &[(&str, &str, f64)]) -> LexiconScorer {
        LexiconScorer::new(LexiconModel::from_entries(entries.iter().copied(), 0.0).unwrap())
    }

    #[test]
    fn m1_single_pair() {
        let s = lexicon(&[("a", "b", 1.0), (NULL, "b", 0.0)]);
        let m = m1_scores(&s, &pair("a", "b")).unwrap();
        assert_eq!(m.to_rows(), vec![vec![0.5f64.ln()]]);
        assert_eq!(m.space(), ScoreSpace::Log);
    }

    #[test]
    fn m1_repeated_source_gives_identical_rows() {
        let s = lexicon(&[("a", "x", 0.6), ("a", "y", 0.4), ("b", "y", 1.0)]);
        let m = m1_scores(&s, &pair("a b a", "x y")).unwrap();
        assert_eq!(m.row(0), m.row(2));
    }

    #[test]
    fn m1_matches_independent_calls() {
        let s = lexicon(&[("a", "x", 0.6), ("a", "y", 0.4), ("b", "y", 1.0)]);
        let p = pair("a b", "x y");
        let m = m1_scores(&s, &p).unwrap();
        for (i, sw) in ["a", "b"].iter().enumerate() {
            for (j, tw) in ["x", "y"].iter().enumerate() {
                let r = ScoreRequest::new(0, vec![sw.to_string()], vec![tw.to_string()], Needs::SENTENCE).unwrap();
                assert_eq!(m.get(i, j), s.score(&r).unwrap().sentence_logprob.unwrap());
            }
        }
    }

    #[test]
    fn m2_ignored_token_row_is_zero() {
        // "c" and <unk> both contribute nothing, so substituting "c" changes nothing.
        let s = lexicon(&[("a", "b", 1.0)]);
        let m = m2_scores(&s, &pair("a c", "b"), ObscureMode::Substitute).unwrap();
        assert_eq!(m.row(1), &[0.0]);
        assert!(m.get(0, 0) > 0.0);
    }

    #[test]
    fn m2_delete_signs() {
        // base: log(1/3 · (1 + 0 + 0)); without a: floor; without c: log(1/2)
        let s = lexicon(&[("a", "b", 1.0), ("c", "b", 0.0), (NULL, "b", 0.0)]);
        let m = m2_scores(&s, &pair("a c", "b"), ObscureMode::Delete).unwrap();
        assert!(m.get(0, 0) > 0.0);
        assert!(m.get(1, 0) < 0.0);
        assert_eq!(m.get(1, 0), (1.0f64 / 3.0).ln() - 0.5f64.ln());
        assert_eq!(m.space(), ScoreSpace::LogitDiff);
    }

    #[test]
    fn m2_delete_needs_two_source_tokens() {
        let s = lexicon(&[("a", "b", 1.0)]);
        assert!(m2_scores(&s, &pair("a", "b"), ObscureMode::Substitute).is_ok());
        assert!(matches!(
            m2_scores(&s, &pair("a", "b"), ObscureMode::Delete),
            Err(AlignError::MalformedInput(_))
        ));
    }

    #[test]
    fn m3_substitute_single_pair() {
        let s = lexicon(&[("a", "b", 1.0), (NULL, "b", 0.5)]);
        let m = m3_scores(&s, &pair("a", "b"), ObscureMode::Substitute, ObscureMode::Substitute).unwrap();
        let r = ScoreRequest::new(0, vec![UNK.into()], vec![UNK.into()], Needs::SENTENCE).unwrap();
        assert_eq!(m.get(0, 0), s.score(&r).unwrap().sentence_logprob.unwrap());
    }

    #[test]
    fn m3_delete_delete_on_dictionary() {
        let s = lexicon(&[("a", "x", 1.0), ("b", "y", 1.0)]);
        let m = m3_scores(&s, &pair("a b", "x y"), ObscureMode::Delete, ObscureMode::Delete).unwrap();
        assert_eq!(m.get(0, 0), 0.5f64.ln());
        assert!(m.get(0, 0) > m.get(0, 1));
        assert!(m3_scores(&s, &pair("a b", "x"), ObscureMode::Delete, ObscureMode::Delete).is_err());
        assert!(m3_scores(&s, &pair("a b", "x"), ObscureMode::Delete, ObscureMode::Substitute).is_ok());
    }

    #[test]
    fn m3_transpose_symmetry() {
        // A lexicon that is its own inverse scores a palindromic pair the
        // same in both directions.
        let entries = [("a", "b", 0.5), ("a", "a", 0.5), ("b", "a", 0.5), ("b", "b", 0.5)];
        let s = lexicon(&entries);
        let p = pair("a b a", "a b a");
        let fwd = m3_scores(&s, &p, ObscureMode::Substitute, ObscureMode::Substitute).unwrap();
        let rev = m3_scores(&s, &p.reversed(), ObscureMode::Substitute, ObscureMode::Substitute).unwrap();
        assert_eq!(fwd, rev.transpose());
    }

    #[test]
    fn call_counts() {
        let s = CountingScorer::new(lexicon(&[("a", "x", 1.0)]));
        let p = pair("a b c", "x y");
        m1_scores(&s, &p).unwrap();
        assert_eq!(s.requests(), 6);
        s.reset();
        m2_scores(&s, &p, ObscureMode::Delete).unwrap();
        assert_eq!(s.requests(), 4);
        s.reset();
        m3_scores(&s, &p, ObscureMode::Substitute, ObscureMode::Delete).unwrap();
        assert_eq!(s.requests(), 6);
    }

    fn seg(text: &str, pieces: &[&str]) -> Token {
        Token::with_subwords(text, pieces.iter().map(|p| p.to_string()).collect()).unwrap()
    }

    #[test]
    fn attention_identity_blocks_transpose() {
        let p = SentencePair::new(0, vec![seg("a", &["a"]), seg("b", &["b"])], vec![seg("x", &["x"]), seg("y", &["y"]), seg("z", &["z"])])
            .unwrap();
        let payload = AttentionPayload {
            src_subwords: vec!["a".into(), "b".into()],
            tgt_subwords: vec!["x".into(), "y".into(), "z".into()],
            matrix: vec![vec![0.9, 0.1], vec![0.3, 0.7], vec![0.5, 0.5]],
        };
        for agg in [AttentionAggregation::Max, AttentionAggregation::Avg] {
            let m = attention_scores(&payload, &p, agg).unwrap();
            assert_eq!(m.to_rows(), vec![vec![0.9, 0.3, 0.5], vec![0.1, 0.7, 0.5]]);
        }
    }

    #[test]
    fn attention_block_reduction() {
        let p = SentencePair::new(0, vec![seg("abcd", &["ab@@", "cd"]), seg("e", &["e"])], vec![seg("x", &["\u{2581}x"])])
            .unwrap();
        let payload = AttentionPayload {
            src_subwords: vec!["\u{2581}ab".into(), "cd".into(), "e".into()],
            tgt_subwords: vec!["\u{2581}x".into()],
            matrix: vec![vec![0.2, 0.4, 0.4]],
        };
        let max = attention_scores(&payload, &p, AttentionAggregation::Max).unwrap();
        let avg = attention_scores(&payload, &p, AttentionAggregation::Avg).unwrap();
        assert_eq!(max.get(0, 0), 0.4);
        assert!((avg.get(0, 0) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn attention_uniform_stays_uniform() {
        let p = SentencePair::new(0, vec![seg("ab", &["a@@", "b"]), seg("c", &["c"])], vec![seg("xy", &["x@@", "y"])])
            .unwrap();
        let payload = AttentionPayload {
            src_subwords: vec!["a@@".into(), "b".into(), "c".into()],
            tgt_subwords: vec!["x@@".into(), "y".into()],
            matrix: vec![vec![1.0 / 3.0; 3]; 2],
        };
        for agg in [AttentionAggregation::Max, AttentionAggregation::Avg] {
            let m = attention_scores(&payload, &p, agg).unwrap();
            assert!(m.as_slice().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn attention_mismatch_names_the_token() {
        let p = SentencePair::new(0, vec![seg("ab", &["a@@", "b"]), seg("c", &["c"])], vec![seg("x", &["x"])]).unwrap();
        let payload = AttentionPayload {
            src_subwords: vec!["a@@".into(), "b".into(), "d".into()],
            tgt_subwords: vec!["x".into()],
            matrix: vec![vec![0.2, 0.4, 0.4]],
        };
        let err = attention_scores(&payload, &p, AttentionAggregation::Max).unwrap_err();
        assert!(err.to_string().contains("source token 1 (c)"), "{err}");
        let bare = pair("ab c", "x");
        assert!(attention_scores(&payload, &bare, AttentionAggregation::Max).is_err());
    }
}
