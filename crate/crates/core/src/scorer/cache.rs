use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{Needs, ScoreRequest, ScoreResponse, Scorer};
use crate::error::Result;

type Key = (Vec<String>, Vec<String>, Needs);

/// Exact-match response cache keyed on `(src, tgt, need)`.
///
/// Identical requests inside one batch are forwarded once. Cached responses
/// are returned with the caller's request id.
pub struct CachedScorer<S> {
    inner: S,
    entries: Mutex<HashMap<Key, ScoreResponse>>,
    hits: AtomicUsize,
}

impl<S: Scorer> CachedScorer<S> {
    pub fn new(inner: S) -> Self {
        CachedScorer { inner, entries: Mutex::new(HashMap::new()), hits: AtomicUsize::new(0) }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }
}

fn key(r: &ScoreRequest) -> Key {
    (r.src.clone(), r.tgt.clone(), r.need)
}

impl<S: Scorer> Scorer for CachedScorer<S> {
    fn supports(&self) -> Needs {
        self.inner.supports()
    }

    fn score_batch(&self, requests: &[ScoreRequest]) -> Result<Vec<ScoreResponse>> {
        let mut misses: Vec<ScoreRequest> = Vec::new();
        let mut pending: HashSet<Key> = HashSet::new();
        {
            let entries = self.entries.lock().unwrap();
            for r in requests {
                let k = key(r);
                if entries.contains_key(&k) || !pending.insert(k) {
                    self.hits.fetch_add(1, Ordering::SeqCst);
                } else {
                    misses.push(r.clone());
                }
            }
        }
        let fresh = if misses.is_empty() { Vec::new() } else { self.inner.score_batch(&misses)? };

        let mut entries = self.entries.lock().unwrap();
        for (req, resp) in misses.iter().zip(fresh) {
            entries.insert(key(req), resp);
        }
        Ok(requests
            .iter()
            .map(|r| {
                let mut resp = entries[&key(r)].clone();
                resp.id = r.id;
                resp
            })
            .collect())
    }
}
