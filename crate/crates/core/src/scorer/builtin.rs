use std::sync::Arc;

use rayon::prelude::*;

use super::{check_batch, Needs, ScoreRequest, ScoreResponse, Scorer};
use crate::error::{AlignError, Result};
use crate::ibm::LexiconModel;

/// In-process scorer backed by a lexical translation model.
#[derive(Debug, Clone)]
pub struct LexiconScorer {
    model: Arc<LexiconModel>,
}

impl LexiconScorer {
    pub fn new(model: LexiconModel) -> Self {
        LexiconScorer { model: Arc::new(model) }
    }

    pub fn model(&self) -> &LexiconModel {
        &self.model
    }

    fn answer(&self, req: &ScoreRequest) -> ScoreResponse {
        let tokens = self.model.token_logprobs_words(&req.src, &req.tgt);
        ScoreResponse {
            id: req.id,
            sentence_logprob: req.need.sentence_logprob.then(|| tokens.iter().sum()),
            token_logprobs: req.need.token_logprobs.then_some(tokens),
            attention: None,
        }
    }
}

impl Scorer for LexiconScorer {
    fn supports(&self) -> Needs {
        Needs { sentence_logprob: true, token_logprobs: true, attention: false }
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>> {
        if requests.iter().any(|r| r.need.attention) {
            return Err(AlignError::Capability("attention unsupported by the lexicon scorer".into()));
        }
        check_batch(requests, self.supports())?;
        Ok(requests.par_iter().map(|r| self.answer(r)).collect())
    }
}
