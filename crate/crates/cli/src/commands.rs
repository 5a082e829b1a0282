use std::fs::File;
use std::io::{self, BufRead, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use alignkit_core::ensemble::{
    align_table, assemble_features, mlp_train, EnsembleModel, LabelPolicy, ScoreSources, TrainConfig,
};
use alignkit_core::extract::{
    alpha_sweep, combine, fit_linear_sym, symmetrize_hard, symmetrize_scores, sweep_csv, ExtractorKind,
    ExtractorSpec, SetOp, SymMethod, SymSpec,
};
use alignkit_core::ibm::{train_em_logged, LexiconModel};
use alignkit_core::metrics::{corpus_counts, corpus_eval_macro, AlignmentCounts};
use alignkit_core::nmt_scores::{attention_scores, m1_scores, m2_scores, m3_scores, AttentionAggregation, ObscureMode};
use alignkit_core::scorer::{
    serve, AttentionPayload, ExternalConfig, ExternalScorer, LexiconScorer, Needs, ScoreRequest, Scorer,
};
use alignkit_core::synth::{generate, SynthConfig};
use alignkit_core::{AlignError, GoldAlignment, HardAlignment, SentencePair, SoftAlignment};
use rayon::prelude::*;

use crate::error::CliError;
use crate::formats::{
    check_dims, check_line_counts, emit_gold, emit_hard, emit_score, load_corpus, open, parse_gold, parse_hard,
    parse_pharaoh_items, parse_score, read_attention_file, read_features, read_gold_file, read_hard_file,
    read_lines, read_score_file, write_features, write_lines, CorpusFiles, ScoreRecord,
};
use crate::{Cmd, CorpusArgs, DimsArgs, EnsembleCmd};

type Result<T> = std::result::Result<T, CliError>;

/// Sentences scored per chunk before records are written.
const CHUNK: usize = 256;

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Input(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", path.display())))
}

fn corpus_files(c: &CorpusArgs) -> CorpusFiles {
    CorpusFiles {
        src: c.src.clone(),
        tgt: c.tgt.clone(),
        subwords_src: c.subwords_src.clone(),
        subwords_tgt: c.subwords_tgt.clone(),
        separator: c.separator.clone(),
    }
}

fn in_file(path: &Path, e: AlignError) -> CliError {
    match e {
        AlignError::MalformedInput(m) => CliError::Input(format!("{}: {m}", path.display())),
        other => other.into(),
    }
}

pub fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::TrainIbm { src, tgt, out, iters, lambda } => train_ibm(&src, &tgt, &out, iters, lambda),
        Cmd::AlignIbm { src, tgt, model, out } => align_ibm(&src, &tgt, &model, out.as_deref()),
        Cmd::Score { corpus, method, scorer, attention, timeout, window, out } => {
            score(&corpus, &method, scorer.as_deref(), attention.as_deref(), timeout, window, out.as_deref())
        }
        Cmd::Extract { scores, extractors, combine, out } => extract(&scores, &extractors, &combine, out.as_deref()),
        Cmd::Symmetrize { fwd, rev, method, betas, fit_gold, extractor, hard, dims, out } => {
            symmetrize(&fwd, &rev, &method, betas, fit_gold.as_deref(), &extractor, hard, &dims, out.as_deref())
        }
        Cmd::Eval { hyp, gold, macro_average, dims } => eval(&hyp, &gold, macro_average, &dims),
        Cmd::Sweep { scores, gold, extractor, alphas, csv } => sweep(&scores, &gold, &extractor, &alphas, csv.as_deref()),
        Cmd::Ensemble(e) => ensemble(e),
        Cmd::Generate { out_dir, sentences, vocab, min_len, max_len, seed } => {
            let config = SynthConfig { vocab_size: vocab, sentences, min_len, max_len, seed, ..SynthConfig::default() };
            write_synthetic(&out_dir, &config)
        }
        Cmd::Serve { model } => {
            let scorer = LexiconScorer::new(load_model(&model)?);
            serve(&scorer, io::stdin().lock(), io::stdout().lock())?;
            Ok(())
        }
    }
}

fn load_model(path: &Path) -> Result<LexiconModel> {
    LexiconModel::load(open(path)?).map_err(|e| in_file(path, e))
}

fn train_ibm(src: &Path, tgt: &Path, out: &Path, iters: usize, lambda: f64) -> Result<()> {
    let files = CorpusFiles { src: src.into(), tgt: tgt.into(), separator: "@@".into(), ..CorpusFiles::default() };
    let pairs = load_corpus(&files)?;
    let run = train_em_logged(&pairs, iters, lambda).map_err(|e| match e {
        AlignError::MalformedInput(m) => CliError::Input(m),
        other => other.into(),
    })?;
    let mut stdout = io::stdout().lock();
    for (k, ll) in run.log_likelihood.iter().enumerate() {
        writeln!(stdout, "iteration {}\tlog-likelihood {ll:.6}", k + 1)?;
    }
    let mut f = create(out)?;
    run.model.save(&mut f)?;
    f.flush()?;
    Ok(())
}

fn align_ibm(src: &Path, tgt: &Path, model: &Path, out: Option<&Path>) -> Result<()> {
    let files = CorpusFiles { src: src.into(), tgt: tgt.into(), separator: "@@".into(), ..CorpusFiles::default() };
    let pairs = load_corpus(&files)?;
    let model = load_model(model)?;
    let hyps: Vec<String> = pairs.par_iter().map(|p| emit_hard(&model.viterbi_align(p))).collect();
    write_lines(output(out)?, hyps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Method {
    M1,
    M2(ObscureMode),
    M3(ObscureMode, ObscureMode),
    Attention(AttentionAggregation),
    Posterior,
}

fn parse_method(s: &str) -> Result<Method> {
    use ObscureMode::{Delete as A, Substitute as B};
    Ok(match s {
        "m1" => Method::M1,
        "m2a" => Method::M2(A),
        "m2b" => Method::M2(B),
        "m3aa" => Method::M3(A, A),
        "m3ab" => Method::M3(A, B),
        "m3ba" => Method::M3(B, A),
        "m3bb" => Method::M3(B, B),
        "attn-max" => Method::Attention(AttentionAggregation::Max),
        "attn-avg" => Method::Attention(AttentionAggregation::Avg),
        "ibm-posterior" => Method::Posterior,
        other => return Err(CliError::Input(format!("unknown scoring method {other:?}"))),
    })
}

enum Backend {
    Builtin(LexiconScorer),
    External(ExternalScorer),
}

impl Backend {
    fn scorer(&self) -> &dyn Scorer {
        match self {
            Backend::Builtin(s) => s,
            Backend::External(s) => s,
        }
    }
}

fn make_backend(spec: &str, timeout: f64, window: usize) -> Result<Backend> {
    match spec.split_once(':') {
        Some(("builtin", path)) => Ok(Backend::Builtin(LexiconScorer::new(load_model(Path::new(path))?))),
        Some(("external", command)) => {
            if !(timeout.is_finite() && timeout > 0.0) || window == 0 {
                return Err(CliError::Config("timeout and window must be positive".into()));
            }
            let config = ExternalConfig { timeout: Duration::from_secs_f64(timeout), window };
            Ok(Backend::External(ExternalScorer::spawn(command, config)?))
        }
        _ => Err(CliError::Config(format!("scorer {spec:?} is neither builtin:<model> nor external:<command>"))),
    }
}

fn words(pair: &SentencePair) -> (Vec<String>, Vec<String>) {
    (
        pair.src.iter().map(|t| t.text().to_owned()).collect(),
        pair.tgt.iter().map(|t| t.text().to_owned()).collect(),
    )
}

fn score_one(
    method: Method,
    backend: Option<&Backend>,
    attention: Option<&AttentionPayload>,
    pair: &SentencePair,
) -> Result<SoftAlignment> {
    let need_backend = || backend.ok_or_else(|| CliError::Config("this method needs --scorer".into()));
    Ok(match method {
        Method::M1 => m1_scores(need_backend()?.scorer(), pair)?,
        Method::M2(mode) => m2_scores(need_backend()?.scorer(), pair, mode)?,
        Method::M3(a, b) => m3_scores(need_backend()?.scorer(), pair, a, b)?,
        Method::Posterior => match need_backend()? {
            Backend::Builtin(s) => s.model().posterior_matrix(pair),
            Backend::External(_) => {
                return Err(CliError::Config("ibm-posterior needs a builtin:<model> scorer".into()))
            }
        },
        Method::Attention(agg) => match attention {
            Some(payload) => attention_scores(payload, pair, agg)?,
            None => {
                let (src, tgt) = words(pair);
                let req = ScoreRequest::new(0, src, tgt, Needs::ATTENTION)?;
                let resp = need_backend()?.scorer().score(&req)?;
                let payload = resp
                    .attention
                    .ok_or_else(|| CliError::Runtime(format!("sentence {}: scorer sent no attention", pair.id)))?;
                attention_scores(&payload, pair, agg)?
            }
        },
    })
}

fn score(
    corpus: &CorpusArgs,
    method: &str,
    scorer: Option<&str>,
    attention: Option<&Path>,
    timeout: f64,
    window: usize,
    out: Option<&Path>,
) -> Result<()> {
    let method = parse_method(method)?;
    if matches!(method, Method::Attention(_)) && (corpus.subwords_src.is_none() || corpus.subwords_tgt.is_none()) {
        return Err(CliError::Input("attention methods need --subwords-src and --subwords-tgt".into()));
    }
    let pairs = load_corpus(&corpus_files(corpus))?;
    let payloads = match attention {
        Some(p) if matches!(method, Method::Attention(_)) => {
            let a = read_attention_file(p)?;
            if a.len() != pairs.len() {
                return Err(CliError::Input(format!("{} has {} records, the corpus {}", p.display(), a.len(), pairs.len())));
            }
            Some(a)
        }
        Some(_) => return Err(CliError::Input("--attention only applies to attn-max and attn-avg".into())),
        None => None,
    };
    let backend = match scorer {
        Some(spec) if payloads.is_none() => Some(make_backend(spec, timeout, window)?),
        _ => None,
    };
    if backend.is_none() && payloads.is_none() {
        return Err(CliError::Config("no scorer given; use --scorer builtin:<model> or external:<command>".into()));
    }
    let parallel = !matches!(backend, Some(Backend::External(_)));
    let mut w = output(out)?;
    for chunk in pairs.chunks(CHUNK) {
        let run = |p: &SentencePair| score_one(method, backend.as_ref(), payloads.as_ref().map(|a| &a[p.id]), p);
        let scored: Vec<SoftAlignment> = if parallel {
            chunk.par_iter().map(run).collect::<Result<_>>()?
        } else {
            chunk.iter().map(run).collect::<Result<_>>()?
        };
        for (p, s) in chunk.iter().zip(scored) {
            writeln!(w, "{}", emit_score(&ScoreRecord { id: p.id, scores: s }))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Streams the records of a score file, checking that ids run 0, 1, 2, ...
struct ScoreReader {
    path: PathBuf,
    lines: Lines<io::BufReader<File>>,
    next: usize,
}

impl ScoreReader {
    fn open(path: &Path) -> Result<Self> {
        Ok(ScoreReader { path: path.to_owned(), lines: open(path)?.lines(), next: 0 })
    }
}

impl Iterator for ScoreReader {
    type Item = Result<SoftAlignment>;

    fn next(&mut self) -> Option<Self::Item> {
        let k = self.next;
        let line = match self.lines.next()? {
            Ok(l) => l,
            Err(e) => return Some(Err(CliError::Input(format!("cannot read {}: {e}", self.path.display())))),
        };
        self.next += 1;
        let here = |m: String| CliError::Input(format!("{}:{}: {m}", self.path.display(), k + 1));
        Some(match parse_score(&line) {
            Ok(r) if r.id == k => Ok(r.scores),
            Ok(r) => Err(here(format!("record id {} where {k} was expected", r.id))),
            Err(e) => Err(here(e)),
        })
    }
}

fn parse_extractor(s: &str) -> Result<ExtractorSpec> {
    s.parse().map_err(|e: AlignError| CliError::Input(format!("--extractor {s}: {e}")))
}

fn parse_set_op(s: &str) -> Result<SetOp> {
    s.parse().map_err(|e: AlignError| CliError::Input(e.to_string()))
}

/// Next record of every reader, or `None` once all are exhausted together.
fn next_records(readers: &mut [ScoreReader], k: usize) -> Result<Option<Vec<SoftAlignment>>> {
    let got: Vec<Option<Result<SoftAlignment>>> = readers.iter_mut().map(Iterator::next).collect();
    if got.iter().all(Option::is_none) {
        return Ok(None);
    }
    let mut out = Vec::with_capacity(got.len());
    for (r, g) in readers.iter().zip(got) {
        match g {
            Some(s) => out.push(s?),
            None => return Err(CliError::Input(format!("{} has no record with id {k}", r.path.display()))),
        }
    }
    Ok(Some(out))
}

fn extract(scores: &[PathBuf], extractors: &[String], combine_with: &str, out: Option<&Path>) -> Result<()> {
    let specs = extractors.iter().map(|s| parse_extractor(s)).collect::<Result<Vec<_>>>()?;
    let op = parse_set_op(combine_with)?;
    // Which score file each extractor reads.
    let jobs: Vec<(usize, ExtractorSpec)> = if scores.len() == 1 {
        specs.iter().map(|&s| (0, s)).collect()
    } else if specs.len() == 1 {
        (0..scores.len()).map(|f| (f, specs[0])).collect()
    } else if specs.len() == scores.len() {
        specs.iter().enumerate().map(|(f, &s)| (f, s)).collect()
    } else {
        return Err(CliError::Input(format!(
            "{} score files and {} extractors; give one of either, or equally many",
            scores.len(),
            specs.len()
        )));
    };
    let mut readers = scores.iter().map(|p| ScoreReader::open(p)).collect::<Result<Vec<_>>>()?;
    let mut w = output(out)?;
    let mut k = 0;
    while let Some(records) = next_records(&mut readers, k)? {
        if let Some((f, r)) = records.iter().enumerate().find(|(_, r)| r.dims() != records[0].dims()) {
            return Err(CliError::Input(format!(
                "record {k}: {} is {:?} but {} is {:?}",
                scores[f].display(),
                r.dims(),
                scores[0].display(),
                records[0].dims()
            )));
        }
        let sets: Vec<HardAlignment> = jobs.iter().map(|(f, s)| s.apply(&records[*f])).collect();
        writeln!(w, "{}", emit_hard(&combine(&sets, op)?))?;
        k += 1;
    }
    w.flush()?;
    Ok(())
}

fn corpus_dims(dims: &DimsArgs) -> Result<Option<Vec<(usize, usize)>>> {
    let (Some(src), Some(tgt)) = (&dims.src, &dims.tgt) else {
        return Ok(None);
    };
    let s = read_lines(src)?;
    let t = read_lines(tgt)?;
    check_line_counts(&[(src, &s), (tgt, &t)])?;
    Ok(Some(s.iter().zip(&t).map(|(a, b)| (a.split_whitespace().count(), b.split_whitespace().count())).collect()))
}

#[allow(clippy::too_many_arguments)]
fn symmetrize(
    fwd: &Path,
    rev: &Path,
    method: &str,
    betas: Option<Vec<f64>>,
    fit_gold: Option<&Path>,
    extractor: &str,
    hard: bool,
    dims: &DimsArgs,
    out: Option<&Path>,
) -> Result<()> {
    let method: SymMethod = method.parse().map_err(|e: AlignError| CliError::Input(e.to_string()))?;
    if hard {
        if method != SymMethod::Intersect {
            return Err(CliError::Input("--hard inputs can only be intersected".into()));
        }
        return intersect_pharaoh(fwd, rev, dims, out);
    }
    let spec = match method {
        SymMethod::Linear => match (betas, fit_gold) {
            (Some(b), None) => match b.as_slice() {
                &[b0, b1, b2] => SymSpec::linear([b0, b1, b2]),
                _ => return Err(CliError::Input(format!("--betas takes three values, got {}", b.len()))),
            },
            (None, Some(gold)) => {
                let b = fit_betas(fwd, rev, gold)?;
                eprintln!("betas {} {} {}", b[0], b[1], b[2]);
                SymSpec::linear(b)
            }
            _ => return Err(CliError::Input("linear needs exactly one of --betas and --fit-gold".into())),
        },
        m => SymSpec::new(m),
    };
    let per_direction = parse_extractor(extractor)?;
    let mut readers = vec![ScoreReader::open(fwd)?, ScoreReader::open(rev)?];
    let mut w = output(out)?;
    let mut k = 0;
    while let Some(r) = next_records(&mut readers, k)? {
        let line = if method == SymMethod::Intersect {
            let both = symmetrize_hard(&per_direction.apply(&r[0]), &per_direction.apply(&r[1]))
                .map_err(|e| CliError::Input(format!("record {k}: {e}")))?;
            emit_hard(&both)
        } else {
            let s = symmetrize_scores(&r[0], &r[1], &spec).map_err(|e| CliError::Input(format!("record {k}: {e}")))?;
            emit_score(&ScoreRecord { id: k, scores: s })
        };
        writeln!(w, "{line}")?;
        k += 1;
    }
    w.flush()?;
    Ok(())
}

fn fit_betas(fwd: &Path, rev: &Path, gold: &Path) -> Result<[f64; 3]> {
    let f = read_score_file(fwd)?;
    let r = read_score_file(rev)?;
    let dims: Vec<_> = f.iter().map(SoftAlignment::dims).collect();
    let transposed: Vec<_> = dims.iter().map(|&(a, b)| (b, a)).collect();
    check_dims(rev, &r, &transposed)?;
    let golds = read_gold_file(gold, &dims)?;
    let mut samples = Vec::new();
    for ((a, b), g) in f.iter().zip(&r).zip(&golds) {
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                samples.push((a.get(i, j), b.get(j, i), if g.is_possible(i, j) { 1.0 } else { 0.0 }));
            }
        }
    }
    Ok(fit_linear_sym(&samples)?)
}

fn intersect_pharaoh(fwd: &Path, rev: &Path, dims: &DimsArgs, out: Option<&Path>) -> Result<()> {
    let f = read_lines(fwd)?;
    let r = read_lines(rev)?;
    check_line_counts(&[(fwd, &f), (rev, &r)])?;
    let known = corpus_dims(dims)?;
    if let Some(d) = known.as_ref().filter(|d| d.len() != f.len()) {
        return Err(CliError::Input(format!("{} has {} lines, the corpus {}", fwd.display(), f.len(), d.len())));
    }
    let mut lines = Vec::with_capacity(f.len());
    for k in 0..f.len() {
        let bad = |p: &Path, e: String| CliError::Input(format!("{}:{}: {e}", p.display(), k + 1));
        let (rows, cols) = match &known {
            Some(d) => d[k],
            None => {
                let a = parse_pharaoh_items(&f[k]).map_err(|e| bad(fwd, e))?;
                let b = parse_pharaoh_items(&r[k]).map_err(|e| bad(rev, e))?;
                a.iter()
                    .map(|x| (x.0, x.1))
                    .chain(b.iter().map(|x| (x.1, x.0)))
                    .fold((1, 1), |(m, n), (i, j)| (m.max(i + 1), n.max(j + 1)))
            }
        };
        let a = parse_hard(&f[k], rows, cols).map_err(|e| bad(fwd, e))?;
        let b = parse_hard(&r[k], cols, rows).map_err(|e| bad(rev, e))?;
        lines.push(emit_hard(&symmetrize_hard(&a, &b)?));
    }
    write_lines(output(out)?, lines)
}

fn eval(hyp: &Path, gold: &Path, macro_average: bool, dims: &DimsArgs) -> Result<()> {
    let h = read_lines(hyp)?;
    let g = read_lines(gold)?;
    check_line_counts(&[(hyp, &h), (gold, &g)])?;
    let known = corpus_dims(dims)?;
    if let Some(d) = known.as_ref().filter(|d| d.len() != h.len()) {
        return Err(CliError::Input(format!("{} has {} lines, the corpus {}", hyp.display(), h.len(), d.len())));
    }
    let mut hyps = Vec::with_capacity(h.len());
    let mut golds = Vec::with_capacity(g.len());
    for k in 0..h.len() {
        let bad = |p: &Path, e: String| CliError::Input(format!("{}:{}: {e}", p.display(), k + 1));
        let (rows, cols) = match &known {
            Some(d) => d[k],
            None => {
                let mut items = parse_pharaoh_items(&h[k]).map_err(|e| bad(hyp, e))?;
                items.extend(parse_pharaoh_items(&g[k]).map_err(|e| bad(gold, e))?);
                crate::formats::pharaoh_extent(&items)
            }
        };
        hyps.push(parse_hard(&h[k], rows, cols).map_err(|e| bad(hyp, e))?);
        golds.push(parse_gold(&g[k], rows, cols).map_err(|e| bad(gold, e))?);
    }
    let m = if macro_average {
        corpus_eval_macro(&hyps, &golds)?
    } else {
        let c: AlignmentCounts = corpus_counts(&hyps, &golds)?;
        c.metrics()?
    };
    println!("{:.4} {:.4} {:.4}", m.precision, m.recall, m.aer);
    Ok(())
}

fn sweep(scores: &Path, gold: &Path, extractor: &str, alphas: &[f64], csv: Option<&Path>) -> Result<()> {
    let kind: ExtractorKind = extractor.parse().map_err(|e: AlignError| CliError::Input(e.to_string()))?;
    let s = read_score_file(scores)?;
    let dims: Vec<_> = s.iter().map(SoftAlignment::dims).collect();
    let g = read_gold_file(gold, &dims)?;
    let rows = alpha_sweep(&s, &g, kind, alphas).map_err(|e| match e {
        AlignError::MalformedInput(m) => CliError::Input(m),
        other => other.into(),
    })?;
    let mut w = output(csv)?;
    w.write_all(sweep_csv(&rows).as_bytes())?;
    w.flush()?;
    Ok(())
}

fn read_checked(path: &Option<PathBuf>, dims: &[(usize, usize)]) -> Result<Option<Vec<SoftAlignment>>> {
    path.as_ref()
        .map(|p| {
            let s = read_score_file(p)?;
            check_dims(p, &s, dims)?;
            Ok(s)
        })
        .transpose()
}

fn labels(s: &str) -> Result<LabelPolicy> {
    match s {
        "sure" => Ok(LabelPolicy::SureOnly),
        "sure-possible" => Ok(LabelPolicy::SureOrPossible),
        other => Err(CliError::Input(format!("--labels {other:?} is neither sure nor sure-possible"))),
    }
}

fn ensemble(cmd: EnsembleCmd) -> Result<()> {
    match cmd {
        EnsembleCmd::Features { corpus, gold, m1, m2b, m3aa, m3bb, attention_avg, fastalign, m1_reverse, out } => {
            let subwords = match (&corpus.subwords_src, &corpus.subwords_tgt) {
                (Some(_), Some(_)) => true,
                (None, None) => false,
                _ => return Err(CliError::Input("give both subword files or neither".into())),
            };
            let pairs = load_corpus(&corpus_files(&corpus))?;
            let dims: Vec<_> = pairs.iter().map(SentencePair::dims).collect();
            let reverse: Vec<_> = dims.iter().map(|&(a, b)| (b, a)).collect();
            let sources = ScoreSources {
                m1: read_checked(&m1, &dims)?,
                m2b: read_checked(&m2b, &dims)?,
                m3aa: read_checked(&m3aa, &dims)?,
                m3bb: read_checked(&m3bb, &dims)?,
                attention_avg: read_checked(&attention_avg, &dims)?,
                fastalign: fastalign.as_deref().map(|p| read_hard_file(p, Some(&dims))).transpose()?,
                m1_reverse: read_checked(&m1_reverse, &reverse)?,
            };
            let golds: Option<Vec<GoldAlignment>> = gold.as_deref().map(|p| read_gold_file(p, &dims)).transpose()?;
            let table = assemble_features(&pairs, &sources, golds.as_deref(), subwords)?;
            write_features(&table, output(out.as_deref())?)
        }
        EnsembleCmd::Train { features, out, epochs, learning_rate, batch_size, seed, validation_fraction, labels: l } => {
            let table = read_features(&features)?;
            let config = TrainConfig {
                epochs,
                learning_rate,
                batch_size,
                seed,
                validation_fraction,
                labels: labels(&l)?,
                ..TrainConfig::default()
            };
            let outcome = mlp_train(&table, &config)?;
            let mut stdout = io::stdout().lock();
            for e in &outcome.log {
                let mark = if e.epoch == outcome.best_epoch { "\t*" } else { "" };
                writeln!(stdout, "epoch {}\tloss {:.6}\tvalidation-aer {:.4}{mark}", e.epoch, e.train_loss, e.validation_aer)?;
            }
            writeln!(stdout, "selected epoch {}", outcome.best_epoch)?;
            let mut f = create(&out)?;
            outcome.model.save(&mut f)?;
            f.flush()?;
            Ok(())
        }
        EnsembleCmd::Apply { model, features, out } => {
            let m = EnsembleModel::load(open(&model)?).map_err(|e| in_file(&model, e))?;
            let table = read_features(&features)?;
            let hyps = align_table(&m, &table)?;
            write_lines(output(out.as_deref())?, hyps.iter().map(emit_hard))
        }
    }
}

fn write_synthetic(dir: &Path, config: &SynthConfig) -> Result<()> {
    let corpus = generate(config).map_err(|e| match e {
        AlignError::MalformedInput(m) => CliError::Input(m),
        other => other.into(),
    })?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    let side = |tokens: &[alignkit_core::Token]| tokens.iter().map(|t| t.text()).collect::<Vec<_>>().join(" ");
    let pieces = |tokens: &[alignkit_core::Token]| {
        tokens.iter().flat_map(|t| t.subwords().unwrap_or_default().iter().cloned()).collect::<Vec<_>>().join(" ")
    };
    let files: [(&str, Vec<String>); 6] = [
        ("src.txt", corpus.pairs.iter().map(|p| side(&p.src)).collect()),
        ("tgt.txt", corpus.pairs.iter().map(|p| side(&p.tgt)).collect()),
        ("src.sub", corpus.pairs.iter().map(|p| pieces(&p.src)).collect()),
        ("tgt.sub", corpus.pairs.iter().map(|p| pieces(&p.tgt)).collect()),
        ("gold.txt", corpus.golds.iter().map(emit_gold).collect()),
        ("dict.tsv", corpus.dictionary.iter().map(|(s, t)| format!("{s}\t{t}")).collect()),
    ];
    for (name, lines) in files {
        write_lines(create(&dir.join(name))?, lines)?;
    }
    Ok(())
}
