//! Forced-scoring backends.
//!
//! A [`Scorer`] answers "how likely is this target given this source" for
//! whole sentences and for each target token, and can optionally return
//! subword attention. The builtin backend wraps a [`LexiconModel`]; the
//! external backend talks to a child process over a line protocol, which is
//! how a neural translation model plugs in.
//!
//! [`LexiconModel`]: crate::ibm::LexiconModel

mod builtin;
mod cache;
mod external;
pub mod protocol;

use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};

pub use builtin::LexiconScorer;
pub use cache::CachedScorer;
pub use external::{ExternalConfig, ExternalScorer};
pub use protocol::serve;

use crate::error::{AlignError, Result};
use crate::types::LOG_ZERO;

/// Tolerance for `sum(token_logprobs) == sentence_logprob` in replies.
pub const ADDITIVITY_TOLERANCE: f64 = 1e-4;
/// Tolerance for attention rows summing to one.
pub const ATTENTION_ROW_TOLERANCE: f64 = 1e-3;

/// The set of items a request asks for (or a backend can provide).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct Needs {
    pub sentence_logprob: bool,
    pub token_logprobs: bool,
    pub attention: bool,
}

impl Needs {
    pub const SENTENCE: Needs = Needs { sentence_logprob: true, token_logprobs: false, attention: false };
    pub const TOKENS: Needs = Needs { sentence_logprob: false, token_logprobs: true, attention: false };
    pub const ATTENTION: Needs = Needs { sentence_logprob: false, token_logprobs: false, attention: true };
    pub const ALL: Needs = Needs { sentence_logprob: true, token_logprobs: true, attention: true };

    pub fn union(self, other: Needs) -> Needs {
        Needs {
            sentence_logprob: self.sentence_logprob || other.sentence_logprob,
            token_logprobs: self.token_logprobs || other.token_logprobs,
            attention: self.attention || other.attention,
        }
    }

    /// True if every item in `other` is also in `self`.
    pub fn covers(self, other: Needs) -> bool {
        (self.sentence_logprob || !other.sentence_logprob)
            && (self.token_logprobs || !other.token_logprobs)
            && (self.attention || !other.attention)
    }

    pub fn is_empty(self) -> bool {
        self == Needs::default()
    }

    /// Wire names in canonical order.
    pub fn names(self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.sentence_logprob {
            out.push("sentence_logprob");
        }
        if self.token_logprobs {
            out.push("token_logprobs");
        }
        if self.attention {
            out.push("attention");
        }
        out
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Needs> {
        let mut n = Needs::default();
        for name in names {
            match name.as_ref() {
                "sentence_logprob" => n.sentence_logprob = true,
                "token_logprobs" => n.token_logprobs = true,
                "attention" => n.attention = true,
                other => return Err(AlignError::malformed(format!("unknown need {other:?}"))),
            }
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ScoreRequest {
    pub id: u64,
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub need: Needs,
}

impl ScoreRequest {
    pub fn new(id: u64, src: Vec<String>, tgt: Vec<String>, need: Needs) -> Result<Self> {
        if src.is_empty() || tgt.is_empty() {
            return Err(AlignError::malformed(format!("request {id}: empty source or target")));
        }
        if need.is_empty() {
            return Err(AlignError::malformed(format!("request {id}: nothing requested")));
        }
        Ok(ScoreRequest { id, src, tgt, need })
    }
}

/// Attention between subword units; `matrix` has one row per target subword
/// and one column per source subword.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPayload {
    pub src_subwords: Vec<String>,
    pub tgt_subwords: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
}

impl AttentionPayload {
    pub fn validate(&self) -> Result<()> {
        if self.matrix.len() != self.tgt_subwords.len() {
            return Err(AlignError::malformed(format!(
                "attention has {} rows for {} target subwords",
                self.matrix.len(),
                self.tgt_subwords.len()
            )));
        }
        for (r, row) in self.matrix.iter().enumerate() {
            if row.len() != self.src_subwords.len() {
                return Err(AlignError::malformed(format!(
                    "attention row {r} has {} columns for {} source subwords",
                    row.len(),
                    self.src_subwords.len()
                )));
            }
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(AlignError::malformed(format!("attention row {r} has values outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ATTENTION_ROW_TOLERANCE {
                return Err(AlignError::malformed(format!("attention row {r} sums to {sum}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreResponse {
    pub id: u64,
    pub sentence_logprob: Option<f64>,
    pub token_logprobs: Option<Vec<f64>>,
    pub attention: Option<AttentionPayload>,
}

impl ScoreResponse {
    pub fn empty(id: u64) -> Self {
        ScoreResponse { id, sentence_logprob: None, token_logprobs: None, attention: None }
    }

    pub fn sentence(&self) -> Result<f64> {
        self.sentence_logprob
            .ok_or_else(|| AlignError::backend(format!("response {} lacks sentence_logprob", self.id), None))
    }

    pub fn tokens(&self) -> Result<&[f64]> {
        self.token_logprobs
            .as_deref()
            .ok_or_else(|| AlignError::backend(format!("response {} lacks token_logprobs", self.id), None))
    }
}

/// Anything that can force-score a target sentence given a source sentence.
pub trait Scorer: Send + Sync {
    /// Items this backend can produce.
    fn supports(&self) -> Needs;

    /// Scores a batch. Responses come back in request order.
    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>>;

    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse> {
        let mut out = self.score_batch(std::slice::from_ref(request))?;
        out.pop()
            .ok_or_else(|| AlignError::backend(format!("no response for request {}", request.id), None))
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn supports(&self) -> Needs {
        (**self).supports()
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>> {
        (**self).score_batch(requests)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn supports(&self) -> Needs {
        (**self).supports()
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>> {
        (**self).score_batch(requests)
    }
}

impl<S: Scorer + ?Sized> Scorer for std::sync::Arc<S> {
    fn supports(&self) -> Needs {
        (**self).supports()
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>> {
        (**self).score_batch(requests)
    }
}

/// Rejects duplicate ids and items the backend cannot provide.
pub fn check_batch(requests: &[ScoreRequest], supports: Needs) -> Result<()> {
    let mut seen = HashSet::with_capacity(requests.len());
    for r in requests {
        if !seen.insert(r.id) {
            return Err(AlignError::malformed(format!("duplicate request id {}", r.id)));
        }
        if !supports.covers(r.need) {
            let missing: Vec<_> = r
                .need
                .names()
                .into_iter()
                .filter(|n| !supports.names().contains(n))
                .collect();
            return Err(AlignError::Capability(format!("{} unsupported by this scorer", missing.join(", "))));
        }
    }
    Ok(())
}

/// Checks that a response carries everything the request asked for and that
/// its parts are mutually consistent. Clamps a positive sentence score to 0.
pub fn check_response(request: &ScoreRequest, response: &mut ScoreResponse) -> Result<()> {
    let fail = |msg: String| Err(AlignError::backend(format!("response {}: {msg}", request.id), None));
    if request.need.sentence_logprob && response.sentence_logprob.is_none() {
        return fail("missing sentence_logprob".into());
    }
    if request.need.token_logprobs && response.token_logprobs.is_none() {
        return fail("missing token_logprobs".into());
    }
    if request.need.attention && response.attention.is_none() {
        return fail("missing attention".into());
    }
    if let Some(s) = response.sentence_logprob.as_mut() {
        if !s.is_finite() {
            *s = LOG_ZERO;
        }
        *s = s.min(0.0);
    }
    if let Some(toks) = &response.token_logprobs {
        if toks.len() != request.tgt.len() {
            return fail(format!("{} token_logprobs for {} target tokens", toks.len(), request.tgt.len()));
        }
        if let Some(s) = response.sentence_logprob {
            let sum: f64 = toks.iter().sum();
            if (sum - s).abs() > ADDITIVITY_TOLERANCE * s.abs().max(1.0) {
                return fail(format!("token_logprobs sum to {sum} but sentence_logprob is {s}"));
            }
        }
    }
    if let Some(att) = &response.attention {
        att.validate()
            .map_err(|e| AlignError::backend(format!("response {}: {e}", request.id), None))?;
    }
    Ok(())
}

/// Wraps a backend and counts the requests and batches passed through it.
pub struct CountingScorer<S> {
    inner: S,
    requests: AtomicUsize,
    batches: AtomicUsize,
}

impl<S: Scorer> CountingScorer<S> {
    pub fn new(inner: S) -> Self {
        CountingScorer { inner, requests: AtomicUsize::new(0), batches: AtomicUsize::new(0) }
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn batches(&self) -> usize {
        self.batches.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.requests.store(0, Ordering::SeqCst);
        self.batches.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

impl<S: Scorer> Scorer for CountingScorer<S> {
    fn supports(&self) -> Needs {
        self.inner.supports()
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>> {
        self.requests.fetch_add(requests.len(), Ordering::SeqCst);
        self.batches.fetch_add(1, Ordering::SeqCst);
        self.inner.score_batch(requests)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn needs_names_round_trip() {
        for n in [Needs::SENTENCE, Needs::TOKENS, Needs::ATTENTION, Needs::ALL] {
            assert_eq!(Needs::from_names(&n.names()).unwrap(), n);
        }
        assert!(Needs::from_names(&["bogus"]).is_err());
        assert!(Needs::ALL.covers(Needs::TOKENS));
        assert!(!Needs::SENTENCE.covers(Needs::TOKENS.union(Needs::SENTENCE)));
    }

    #[test]
    fn request_validation() {
        assert!(ScoreRequest::new(0, vec![], vec!["x".into()], Needs::SENTENCE).is_err());
        assert!(ScoreRequest::new(0, vec!["a".into()], vec!["x".into()], Needs::default()).is_err());
    }

    #[test]
    fn batch_checks() {
        let r = |id| ScoreRequest::new(id, vec!["a".into()], vec!["x".into()], Needs::SENTENCE).unwrap();
        assert!(check_batch(&[r(1), r(2)], Needs::SENTENCE).is_ok());
        assert!(check_batch(&[r(1), r(1)], Needs::SENTENCE).is_err());
        assert!(matches!(check_batch(&[r(1)], Needs::TOKENS), Err(AlignError::Capability(_))));
    }

    #[test]
    fn response_checks() {
        let req = ScoreRequest::new(3, vec!["a".into()], vec!["x".into(), "y".into()], Needs::ALL.union(Needs::default()))
            .unwrap();
        let mut resp = ScoreResponse {
            id: 3,
            sentence_logprob: Some(-1.5),
            token_logprobs: Some(vec![-1.0, -0.5]),
            attention: Some(AttentionPayload {
                src_subwords: vec!["a".into()],
                tgt_subwords: vec!["x".into(), "y".into()],
                matrix: vec![vec![1.0], vec![1.0]],
            }),
        };
        check_response(&req, &mut resp).unwrap();
        let mut bad = resp.clone();
        bad.token_logprobs = Some(vec![-1.0]);
        assert!(check_response(&req, &mut bad).is_err());
        let mut bad = resp.clone();
        bad.sentence_logprob = Some(-3.0);
        assert!(check_response(&req, &mut bad).is_err());
        let mut bad = resp.clone();
        bad.attention.as_mut().unwrap().matrix[0][0] = 0.5;
        assert!(check_response(&req, &mut bad).is_err());
        let mut bad = resp;
        bad.attention = None;
        assert!(check_response(&req, &mut bad).is_err());
    }
}
