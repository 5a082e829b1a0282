//! Word alignment toolkit: soft alignment scores from arbitrary sentence-pair
//! scorers, hard-alignment extractors, AER evaluation and a small
//! feed-forward ensemble over all score sources.

pub mod ensemble;
pub mod error;
pub mod extract;
pub mod ibm;
pub mod metrics;
pub mod nmt_scores;
pub mod scorer;
pub mod synth;
pub mod types;

pub use error::{AlignError, Result};
pub use types::{GoldAlignment, HardAlignment, ScoreSpace, SentencePair, SoftAlignment, Token};
