//! Precision, recall and alignment error rate, plus Pearson correlation.
//!
//! Corpus-level numbers are micro-averaged: link counts are summed over all
//! sentences before the ratios are taken.

use std::ops::{Add, AddAssign};

use crate::error::{AlignError, Result};
use crate::types::{GoldAlignment, HardAlignment};

/// Link counts needed for all three alignment metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AlignmentCounts {
    /// `|A|`
    pub hyp: usize,
    /// `|S|`
    pub sure: usize,
    /// `|A ∩ S|`
    pub hyp_sure: usize,
    /// `|A ∩ P|`
    pub hyp_possible: usize,
}

impl AlignmentCounts {
    pub fn of(hyp: &HardAlignment, gold: &GoldAlignment) -> Result<Self> {
        if hyp.dims() != gold.dims() {
            return Err(AlignError::malformed(format!(
                "hypothesis is {:?} but gold is {:?}",
                hyp.dims(),
                gold.dims()
            )));
        }
        let mut counts = AlignmentCounts {
            hyp: hyp.len(),
            sure: gold.sure().len(),
            ..Default::default()
        };
        for (i, j) in hyp.iter() {
            if gold.is_sure(i, j) {
                counts.hyp_sure += 1;
            }
            if gold.is_possible(i, j) {
                counts.hyp_possible += 1;
            }
        }
        Ok(counts)
    }

    /// `|A ∩ P| / |A|`, or 1.0 for an empty hypothesis.
    pub fn precision(&self) -> f64 {
        if self.hyp == 0 {
            1.0
        } else {
            self.hyp_possible as f64 / self.hyp as f64
        }
    }

    pub fn recall(&self) -> Result<f64> {
        self.require_sure()?;
        Ok(self.hyp_sure as f64 / self.sure as f64)
    }

    pub fn aer(&self) -> Result<f64> {
        self.require_sure()?;
        let agree = (self.hyp_sure + self.hyp_possible) as f64;
        Ok(1.0 - agree / (self.sure + self.hyp) as f64)
    }

    pub fn metrics(&self) -> Result<Metrics> {
        Ok(Metrics {
            precision: self.precision(),
            recall: self.recall()?,
            aer: self.aer()?,
        })
    }

    fn require_sure(&self) -> Result<()> {
        if self.sure == 0 {
            Err(AlignError::UndefinedMetric("gold has no sure links".into()))
        } else {
            Ok(())
        }
    }
}

impl Add for AlignmentCounts {
    type Output = AlignmentCounts;

    fn add(self, rhs: Self) -> Self {
        AlignmentCounts {
            hyp: self.hyp + rhs.hyp,
            sure: self.sure + rhs.sure,
            hyp_sure: self.hyp_sure + rhs.hyp_sure,
            hyp_possible: self.hyp_possible + rhs.hyp_possible,
        }
    }
}

impl AddAssign for AlignmentCounts {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for AlignmentCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(AlignmentCounts::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub aer: f64,
}

pub fn precision(hyp: &HardAlignment, gold: &GoldAlignment) -> Result<f64> {
    Ok(AlignmentCounts::of(hyp, gold)?.precision())
}

pub fn recall(hyp: &HardAlignment, gold: &GoldAlignment) -> Result<f64> {
    AlignmentCounts::of(hyp, gold)?.recall()
}

pub fn aer(hyp: &HardAlignment, gold: &GoldAlignment) -> Result<f64> {
    AlignmentCounts::of(hyp, gold)?.aer()
}

/// Summed link counts over a corpus.
pub fn corpus_counts(hyps: &[HardAlignment], golds: &[GoldAlignment]) -> Result<AlignmentCounts> {
    if hyps.len() != golds.len() {
        return Err(AlignError::malformed(format!(
            "{} hypotheses but {} gold alignments",
            hyps.len(),
            golds.len()
        )));
    }
    hyps.iter()
        .zip(golds)
        .enumerate()
        .map(|(k, (h, g))| {
            AlignmentCounts::of(h, g).map_err(|e| AlignError::malformed(format!("sentence {k}: {e}")))
        })
        .sum()
}

/// Micro-averaged corpus metrics.
pub fn corpus_eval(hyps: &[HardAlignment], golds: &[GoldAlignment]) -> Result<Metrics> {
    corpus_counts(hyps, golds)?.metrics()
}

/// Per-sentence metrics averaged with equal sentence weight.
pub fn corpus_eval_macro(hyps: &[HardAlignment], golds: &[GoldAlignment]) -> Result<Metrics> {
    if hyps.len() != golds.len() || hyps.is_empty() {
        return Err(AlignError::malformed("macro average needs equal, non-empty corpora"));
    }
    let mut acc = Metrics { precision: 0.0, recall: 0.0, aer: 0.0 };
    for (h, g) in hyps.iter().zip(golds) {
        let m = AlignmentCounts::of(h, g)?.metrics()?;
        acc.precision += m.precision;
        acc.recall += m.recall;
        acc.aer += m.aer;
    }
    let n = hyps.len() as f64;
    Ok(Metrics {
        precision: acc.precision / n,
        recall: acc.recall / n,
        aer: acc.aer / n,
    })
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(AlignError::malformed(format!(
            "pearson needs two equal-length series of at least 2 values (got {} and {})",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AlignError::UndefinedMetric("pearson of a zero-variance series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hard(pairs: &[(usize, usize)]) -> HardAlignment {
        HardAlignment::new(3, 3, pairs.iter().copied()).unwrap()
    }

    fn gold(sure: &[(usize, usize)], possible: &[(usize, usize)]) -> GoldAlignment {
        GoldAlignment::new(3, 3, sure.iter().copied(), possible.iter().copied()).unwrap()
    }

    #[test]
    fn exact_match() {
        let h = hard(&[(0, 0)]);
        let g = gold(&[(0, 0)], &[(0, 0)]);
        assert_eq!(precision(&h, &g).unwrap(), 1.0);
        assert_eq!(recall(&h, &g).unwrap(), 1.0);
        assert_eq!(aer(&h, &g).unwrap(), 0.0);
    }

    #[test]
    fn sure_and_possible_mix() {
        // |A∩P| = 3, |A| = 3, |A∩S| = 1, |S| = 2
        let h = hard(&[(0, 0), (1, 1), (2, 2)]);
        let g = gold(&[(0, 0), (1, 2)], &[(1, 1), (2, 2)]);
        assert_eq!(precision(&h, &g).unwrap(), 1.0);
        assert_eq!(recall(&h, &g).unwrap(), 0.5);
        assert!((aer(&h, &g).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn disjoint_and_empty() {
        let g = gold(&[(0, 0)], &[]);
        let wrong = hard(&[(0, 1)]);
        assert_eq!(precision(&wrong, &g).unwrap(), 0.0);
        assert_eq!(aer(&wrong, &g).unwrap(), 1.0);
        let empty = hard(&[]);
        assert_eq!(precision(&empty, &g).unwrap(), 1.0);
        assert_eq!(recall(&empty, &g).unwrap(), 0.0);
    }

    #[test]
    fn empty_sure_is_undefined() {
        let g = gold(&[], &[(0, 0)]);
        let h = hard(&[(0, 0)]);
        assert!(matches!(recall(&h, &g), Err(AlignError::UndefinedMetric(_))));
        assert!(matches!(aer(&h, &g), Err(AlignError::UndefinedMetric(_))));
    }

    #[test]
    fn dimension_mismatch_is_malformed() {
        let g = GoldAlignment::new(2, 2, [(0, 0)], []).unwrap();
        assert!(matches!(precision(&hard(&[(0, 0)]), &g), Err(AlignError::MalformedInput(_))));
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn corpus_of_one_and_duplicates() {
        let h = hard(&[(0, 0), (1, 1), (2, 2)]);
        let g = gold(&[(0, 0), (1, 2)], &[(1, 1), (2, 2)]);
        let single = AlignmentCounts::of(&h, &g).unwrap().metrics().unwrap();
        assert_eq!(corpus_eval(&[h.clone()], &[g.clone()]).unwrap(), single);
        assert_eq!(corpus_eval(&[h.clone(), h.clone()], &[g.clone(), g.clone()]).unwrap(), single);
        assert!(corpus_eval(&[h], &[]).is_err());
    }

    fn nested_sets() -> impl Strategy<Value = (Vec<(usize, usize)>, Vec<(usize, usize)>, Vec<(usize, usize)>, Vec<(usize, usize)>)> {
        let link = (0usize..4, 0usize..4);
        (
            proptest::collection::vec(link.clone(), 1..8),
            proptest::collection::vec(link.clone(), 0..8),
            proptest::collection::vec(link.clone(), 0..8),
            proptest::collection::vec(link, 0..8),
        )
    }

    proptest! {
        #[test]
        fn aer_in_unit_interval((sure, extra, hyp, more) in nested_sets()) {
            let g = GoldAlignment::new(4, 4, sure, extra).unwrap();
            let small = HardAlignment::new(4, 4, hyp.clone()).unwrap();
            let big = HardAlignment::new(4, 4, hyp.into_iter().chain(more)).unwrap();
            let a = aer(&big, &g).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!(recall(&big, &g).unwrap() >= recall(&small, &g).unwrap());
        }

        #[test]
        fn sure_equals_possible_identity((sure, _e, hyp, _m) in nested_sets()) {
            let g = GoldAlignment::new(4, 4, sure.clone(), sure).unwrap();
            let h = HardAlignment::new(4, 4, hyp).unwrap();
            let c = AlignmentCounts::of(&h, &g).unwrap();
            let expected = 1.0 - 2.0 * c.hyp_sure as f64 / (c.sure + c.hyp) as f64;
            prop_assert!((c.aer().unwrap() - expected).abs() < 1e-12);
            let perfect = c.precision() == 1.0 && c.recall().unwrap() == 1.0;
            prop_assert_eq!(perfect, c.aer().unwrap() == 0.0);
        }

        #[test]
        fn pearson_of_affine_map(x in proptest::collection::vec(-100.0f64..100.0, 2..20), a in 0.1f64..10.0, b in -10.0f64..10.0) {
            let spread = x.iter().cloned().fold(f64::MIN, f64::max) - x.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-3);
            let up: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let down: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
            prop_assert!((pearson(&x, &up).unwrap() - 1.0).abs() < 1e-9);
            prop_assert!((pearson(&x, &down).unwrap() + 1.0).abs() < 1e-9);
        }
    }
}
