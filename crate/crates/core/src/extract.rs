//! Hard-alignment extraction from soft scores, set algebra on alignments,
//! symmetrization, and α sweeps.
//!
//! Extractors, for a score matrix `p` over source rows and target columns:
//!
//! | kind | keeps `(s, t)` when |
//! |------|---------------------|
//! | A1   | `p(s,t)` equals the row maximum |
//! | A2^α | `p(s,t) ≥ α` |
//! | A3^α | `p(s,t) ≥ min(rowmax·α, rowmax/α)` |
//! | A4^α | `p(s,t) ≥ min(colmax·α, colmax/α)` |
//!
//! The `min(·α, ·/α)` form keeps A3/A4 meaningful for negative scores, and
//! `A3^1` is exactly A1. Thresholds are inclusive.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{AlignError, Result};
use crate::metrics::{AlignmentCounts, Metrics};
use crate::types::{GoldAlignment, HardAlignment, ScoreSpace, SoftAlignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExtractorKind {
    A1,
    A2,
    A3,
    A4,
}

impl ExtractorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExtractorKind::A1 => "a1",
            ExtractorKind::A2 => "a2",
            ExtractorKind::A3 => "a3",
            ExtractorKind::A4 => "a4",
        }
    }

    /// Whether `alpha` is legal for this extractor.
    pub fn accepts(self, alpha: f64) -> bool {
        match self {
            ExtractorKind::A1 => true,
            ExtractorKind::A2 => !alpha.is_nan(),
            ExtractorKind::A3 | ExtractorKind::A4 => alpha > 0.0 && alpha <= 1.0,
        }
    }
}

impl FromStr for ExtractorKind {
    type Err = AlignError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "a1" => Ok(ExtractorKind::A1),
            "a2" => Ok(ExtractorKind::A2),
            "a3" => Ok(ExtractorKind::A3),
            "a4" => Ok(ExtractorKind::A4),
            _ => Err(AlignError::malformed(format!("unknown extractor {s:?}"))),
        }
    }
}

/// An extractor with its parameter, e.g. `a3:0.9`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractorSpec {
    kind: ExtractorKind,
    alpha: f64,
}

impl ExtractorSpec {
    pub fn new(kind: ExtractorKind, alpha: f64) -> Result<Self> {
        if !kind.accepts(alpha) {
            return Err(AlignError::malformed(format!(
                "alpha {alpha} is outside the domain of {}",
                kind.as_str()
            )));
        }
        Ok(ExtractorSpec { kind, alpha })
    }

    pub fn a1() -> Self {
        ExtractorSpec { kind: ExtractorKind::A1, alpha: 1.0 }
    }

    pub fn kind(&self) -> ExtractorKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn apply(&self, scores: &SoftAlignment) -> HardAlignment {
        match self.kind {
            ExtractorKind::A1 => extract_a1(scores),
            ExtractorKind::A2 => extract_a2(scores, self.alpha),
            ExtractorKind::A3 => relative_rows(scores, self.alpha),
            ExtractorKind::A4 => relative_rows(&scores.transpose(), self.alpha).transpose(),
        }
    }
}

impl FromStr for ExtractorSpec {
    type Err = AlignError;

    /// Parses `a1`, `a2:<α>`, `a3:<α>` or `a4:<α>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, alpha) = match s.split_once(':') {
            Some((k, a)) => {
                let alpha = a
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| AlignError::malformed(format!("bad alpha in {s:?}: {e}")))?;
                (k.trim().parse::<ExtractorKind>()?, Some(alpha))
            }
            None => (s.trim().parse::<ExtractorKind>()?, None),
        };
        match (kind, alpha) {
            (ExtractorKind::A1, None) => Ok(ExtractorSpec::a1()),
            (ExtractorKind::A1, Some(_)) => Err(AlignError::malformed("a1 takes no alpha")),
            (k, Some(a)) => ExtractorSpec::new(k, a),
            (k, None) => Err(AlignError::malformed(format!("{} needs an alpha, e.g. {}:0.5", k.as_str(), k.as_str()))),
        }
    }
}

impl fmt::Display for ExtractorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ExtractorKind::A1 => f.write_str("a1"),
            k => write!(f, "{}:{}", k.as_str(), self.alpha),
        }
    }
}

/// Every target attaining its row's maximum.
pub fn extract_a1(scores: &SoftAlignment) -> HardAlignment {
    let mut links = BTreeSet::new();
    for i in 0..scores.rows() {
        let row = scores.row(i);
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        links.extend(row.iter().enumerate().filter(|(_, &v)| v == best).map(|(j, _)| (i, j)));
    }
    HardAlignment::from_set_unchecked(scores.rows(), scores.cols(), links)
}

/// Every link scoring at least `alpha`, in the matrix's own score space.
pub fn extract_a2(scores: &SoftAlignment, alpha: f64) -> HardAlignment {
    let cols = scores.cols();
    let links = scores
        .as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= alpha)
        .map(|(k, _)| (k / cols, k % cols))
        .collect();
    HardAlignment::from_set_unchecked(scores.rows(), cols, links)
}

fn relative_threshold(best: f64, alpha: f64) -> f64 {
    (best * alpha).min(best / alpha)
}

fn relative_rows(scores: &SoftAlignment, alpha: f64) -> HardAlignment {
    let mut links = BTreeSet::new();
    for i in 0..scores.rows() {
        let row = scores.row(i);
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let cut = relative_threshold(best, alpha);
        links.extend(row.iter().enumerate().filter(|(_, &v)| v >= cut).map(|(j, _)| (i, j)));
    }
    HardAlignment::from_set_unchecked(scores.rows(), scores.cols(), links)
}

fn check_alpha(kind: ExtractorKind, alpha: f64) -> Result<()> {
    ExtractorSpec::new(kind, alpha).map(|_| ())
}

/// Per source row, every target within factor `alpha` of the row's best.
pub fn extract_a3(scores: &SoftAlignment, alpha: f64) -> Result<HardAlignment> {
    check_alpha(ExtractorKind::A3, alpha)?;
    Ok(relative_rows(scores, alpha))
}

/// Per target column, every source within factor `alpha` of the column's best.
pub fn extract_a4(scores: &SoftAlignment, alpha: f64) -> Result<HardAlignment> {
    check_alpha(ExtractorKind::A4, alpha)?;
    Ok(relative_rows(&scores.transpose(), alpha).transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetOp {
    Union,
    Intersect,
}

impl FromStr for SetOp {
    type Err = AlignError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "union" => Ok(SetOp::Union),
            "intersect" => Ok(SetOp::Intersect),
            _ => Err(AlignError::malformed(format!("unknown set operation {s:?}"))),
        }
    }
}

pub fn combine(sets: &[HardAlignment], op: SetOp) -> Result<HardAlignment> {
    let first = sets
        .first()
        .ok_or_else(|| AlignError::malformed("nothing to combine"))?;
    let dims = first.dims();
    if let Some(bad) = sets.iter().find(|s| s.dims() != dims) {
        return Err(AlignError::malformed(format!(
            "cannot combine a {:?} alignment with a {:?} one",
            dims,
            bad.dims()
        )));
    }
    let mut acc = first.pairs().clone();
    for s in &sets[1..] {
        match op {
            SetOp::Union => acc.extend(s.iter()),
            SetOp::Intersect => acc.retain(|p| s.pairs().contains(p)),
        }
    }
    Ok(HardAlignment::from_set_unchecked(dims.0, dims.1, acc))
}

/// Applies several extractors to one matrix and combines the results.
pub fn extract_chain(scores: &SoftAlignment, chain: &[ExtractorSpec], op: SetOp) -> Result<HardAlignment> {
    let sets: Vec<_> = chain.iter().map(|e| e.apply(scores)).collect();
    combine(&sets, op)
}

/// The extractor chain used on ensemble outputs: `A2^0.001 ∩ A3^1 ∩ A4^1`.
pub fn ensemble_chain() -> [ExtractorSpec; 3] {
    [
        ExtractorSpec { kind: ExtractorKind::A2, alpha: 0.001 },
        ExtractorSpec { kind: ExtractorKind::A3, alpha: 1.0 },
        ExtractorSpec { kind: ExtractorKind::A4, alpha: 1.0 },
    ]
}

pub fn transpose_alignment(a: &HardAlignment) -> HardAlignment {
    a.transpose()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymMethod {
    /// Use the transposed reverse-direction scores only.
    Reverse,
    /// `fwd + revᵀ`, for log-like spaces.
    Add,
    /// `fwd · revᵀ`, for probabilities.
    Multiply,
    /// Intersect hard alignments of both directions.
    Intersect,
    /// `β0·fwd + β1·revᵀ + β2·fwd·revᵀ`.
    Linear,
}

impl FromStr for SymMethod {
    type Err = AlignError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reverse" => Ok(SymMethod::Reverse),
            "add" => Ok(SymMethod::Add),
            "multiply" => Ok(SymMethod::Multiply),
            "intersect" => Ok(SymMethod::Intersect),
            "linear" => Ok(SymMethod::Linear),
            _ => Err(AlignError::malformed(format!("unknown symmetrization {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymSpec {
    pub method: SymMethod,
    pub betas: [f64; 3],
}

impl SymSpec {
    pub fn new(method: SymMethod) -> Self {
        SymSpec { method, betas: [1.0, 0.0, 0.0] }
    }

    pub fn linear(betas: [f64; 3]) -> Self {
        SymSpec { method: SymMethod::Linear, betas }
    }
}

/// Combines forward scores (`|S| x |T|`) with reverse-direction scores
/// (`|T| x |S|`) element-wise.
pub fn symmetrize_scores(fwd: &SoftAlignment, rev: &SoftAlignment, spec: &SymSpec) -> Result<SoftAlignment> {
    if rev.dims() != (fwd.cols(), fwd.rows()) {
        return Err(AlignError::malformed(format!(
            "reverse scores are {:?}, expected {:?}",
            rev.dims(),
            (fwd.cols(), fwd.rows())
        )));
    }
    let rev_t = rev.transpose();
    let zip = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        fwd.as_slice().iter().zip(rev_t.as_slice()).map(|(&a, &b)| f(a, b)).collect()
    };
    let same_space = || {
        if fwd.space() != rev.space() {
            Err(AlignError::malformed(format!(
                "cannot combine {} scores with {} scores",
                fwd.space().as_str(),
                rev.space().as_str()
            )))
        } else {
            Ok(())
        }
    };
    let (rows, cols) = fwd.dims();
    match spec.method {
        SymMethod::Reverse => Ok(rev_t),
        SymMethod::Add => {
            same_space()?;
            if fwd.space() == ScoreSpace::Probability {
                return Err(AlignError::malformed("add is for log-space scores; use multiply for probabilities"));
            }
            SoftAlignment::new(rows, cols, zip(&|a, b| a + b), fwd.space())
        }
        SymMethod::Multiply => {
            same_space()?;
            if fwd.space() != ScoreSpace::Probability {
                return Err(AlignError::malformed("multiply is for probabilities; use add for log-space scores"));
            }
            SoftAlignment::new(rows, cols, zip(&|a, b| a * b), ScoreSpace::Probability)
        }
        SymMethod::Linear => {
            same_space()?;
            let [b0, b1, b2] = spec.betas;
            let values = zip(&|a, b| b0 * a + b1 * b + b2 * a * b);
            let space = match fwd.space() {
                ScoreSpace::Probability if values.iter().any(|v| !(0.0..=1.0).contains(v)) => ScoreSpace::LogitDiff,
                s => s,
            };
            SoftAlignment::new(rows, cols, values, space)
        }
        SymMethod::Intersect => Err(AlignError::malformed(
            "intersect works on hard alignments; extract both directions and use symmetrize_hard",
        )),
    }
}

/// `fwd ∩ revᵀ` where `rev` is a target-to-source alignment.
pub fn symmetrize_hard(fwd: &HardAlignment, rev: &HardAlignment) -> Result<HardAlignment> {
    combine(&[fwd.clone(), rev.transpose()], SetOp::Intersect)
}

/// Least-squares fit of `label ≈ β0·p + β1·pʳ + β2·p·pʳ` (no intercept) over
/// `(p, pʳ, label)` samples. Solved by QR so the conditioning is that of the
/// design matrix itself.
pub fn fit_linear_sym(samples: &[(f64, f64, f64)]) -> Result<[f64; 3]> {
    if samples.len() < 3 {
        return Err(AlignError::Fit(format!("need at least 3 samples, got {}", samples.len())));
    }
    let mut cols: [Vec<f64>; 3] = [
        samples.iter().map(|s| s.0).collect(),
        samples.iter().map(|s| s.1).collect(),
        samples.iter().map(|s| s.0 * s.1).collect(),
    ];
    let y: Vec<f64> = samples.iter().map(|s| s.2).collect();
    if cols.iter().flatten().chain(&y).any(|v| !v.is_finite()) {
        return Err(AlignError::Fit("non-finite sample".into()));
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    // Modified Gram-Schmidt: cols become Q, r holds R.
    let mut r = [[0.0; 3]; 3];
    for k in 0..3 {
        let original = dot(&cols[k], &cols[k]).sqrt();
        for p in 0..k {
            let proj = dot(&cols[p], &cols[k]);
            r[p][k] = proj;
            let (done, rest) = cols.split_at_mut(k);
            rest[0].iter_mut().zip(&done[p]).for_each(|(c, q)| *c -= proj * q);
        }
        let norm = dot(&cols[k], &cols[k]).sqrt();
        if original == 0.0 || norm <= 1e-10 * original {
            return Err(AlignError::Fit("design matrix is rank deficient".into()));
        }
        r[k][k] = norm;
        cols[k].iter_mut().for_each(|c| *c /= norm);
    }
    let qty = [dot(&cols[0], &y), dot(&cols[1], &y), dot(&cols[2], &y)];
    let mut beta = [0.0; 3];
    for k in (0..3).rev() {
        let tail: f64 = (k + 1..3).map(|p| r[k][p] * beta[p]).sum();
        beta[k] = (qty[k] - tail) / r[k][k];
    }
    Ok(beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub precision: f64,
    pub recall: f64,
    pub aer: f64,
    /// Total number of hypothesis links over the corpus.
    pub links: usize,
}

/// Corpus metrics for one extractor kind over a list of α values.
pub fn alpha_sweep(
    scores: &[SoftAlignment],
    golds: &[GoldAlignment],
    kind: ExtractorKind,
    alphas: &[f64],
) -> Result<Vec<SweepRow>> {
    if scores.len() != golds.len() {
        return Err(AlignError::malformed(format!(
            "{} score matrices but {} gold alignments",
            scores.len(),
            golds.len()
        )));
    }
    alphas
        .iter()
        .map(|&alpha| {
            let spec = if kind == ExtractorKind::A1 { ExtractorSpec::a1() } else { ExtractorSpec::new(kind, alpha)? };
            let per_sentence: Vec<AlignmentCounts> = scores
                .par_iter()
                .zip(golds)
                .enumerate()
                .map(|(k, (s, g))| {
                    AlignmentCounts::of(&spec.apply(s), g)
                        .map_err(|e| AlignError::malformed(format!("sentence {k}: {e}")))
                })
                .collect::<Result<_>>()?;
            let counts: AlignmentCounts = per_sentence.into_iter().sum();
            let Metrics { precision, recall, aer } = counts.metrics()?;
            Ok(SweepRow { alpha, precision, recall, aer, links: counts.hyp })
        })
        .collect()
}

/// CSV with header `alpha,precision,recall,aer`, six decimals per value.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("alpha,precision,recall,aer\n");
    for r in rows {
        out.push_str(&format!("{:.6},{:.6},{:.6},{:.6}\n", r.alpha, r.precision, r.recall, r.aer));
    }
    out
}
