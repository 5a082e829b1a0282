use alignkit_core::extract::{extract_a1, symmetrize_hard};
use alignkit_core::ibm::train_em_logged;
use alignkit_core::metrics::corpus_eval;
use alignkit_core::nmt_scores::m1_scores;
use alignkit_core::scorer::LexiconScorer;
use alignkit_core::synth::{generate, SynthConfig};
use alignkit_core::{HardAlignment, SentencePair};

fn reversed(pairs: &[SentencePair]) -> Vec<SentencePair> {
    pairs.iter().map(SentencePair::reversed).collect()
}

#[test]
fn em_recovers_the_generating_alignment() {
    let corpus = generate(&SynthConfig::default()).unwrap();
    let run = train_em_logged(&corpus.pairs, 10, 0.0).unwrap();
    assert!(run.log_likelihood.windows(2).all(|w| w[1] >= w[0]), "{:?}", run.log_likelihood);
    let hyps: Vec<HardAlignment> = corpus.pairs.iter().map(|p| run.model.viterbi_align(p)).collect();
    let m = corpus_eval(&hyps, &corpus.golds).unwrap();
    assert_eq!(m.aer, 0.0, "{m:?}");
}

#[test]
fn m1_argmax_and_intersection() {
    let corpus = generate(&SynthConfig::default()).unwrap();
    let fwd = LexiconScorer::new(train_em_logged(&corpus.pairs, 10, 0.0).unwrap().model);
    let rev_pairs = reversed(&corpus.pairs);
    let rev = LexiconScorer::new(train_em_logged(&rev_pairs, 10, 0.0).unwrap().model);

    let mut hits = 0;
    let mut tokens = 0;
    let mut forward = Vec::new();
    let mut both = Vec::new();
    for ((p, rp), g) in corpus.pairs.iter().zip(&rev_pairs).zip(&corpus.golds) {
        let a = extract_a1(&m1_scores(&fwd, p).unwrap());
        let b = extract_a1(&m1_scores(&rev, rp).unwrap());
        for i in 0..p.src.len() {
            tokens += 1;
            let row: Vec<_> = a.iter().filter(|l| l.0 == i).collect();
            if row.len() == 1 && g.is_sure(row[0].0, row[0].1) {
                hits += 1;
            }
        }
        both.push(symmetrize_hard(&a, &b).unwrap());
        forward.push(a);
    }
    assert!(hits as f64 >= 0.95 * tokens as f64, "{hits}/{tokens}");
    let f = corpus_eval(&forward, &corpus.golds).unwrap();
    let i = corpus_eval(&both, &corpus.golds).unwrap();
    assert!(i.aer <= 0.05, "{i:?}");
    assert!(i.aer <= f.aer, "{i:?} vs {f:?}");
}
