//! On-disk formats: corpora, Pharaoh alignments, score records, attention
//! records and feature tables.
//!
//! Pharaoh lines hold space-separated `i-j` (sure) and `i?j` (possible-only)
//! items, 0-indexed. Score records are one JSON object per line:
//!
//! ```text
//! {"id": 3, "rows": 2, "cols": 2, "space": "log", "scores": [[-0.7,-2.3],[-1.9,-0.4]]}
//! ```

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use alignkit_core::ensemble::{Block, FeatureSet, FeatureTable, FEATURE_NAMES, GROUP_NAMES, INPUT_WIDTH};
use alignkit_core::scorer::protocol::{fmt_num, parse_attention};
use alignkit_core::scorer::AttentionPayload;
use alignkit_core::{GoldAlignment, HardAlignment, ScoreSpace, SentencePair, SoftAlignment, Token};
use serde_json::Value;

use crate::error::CliError;

pub type Result<T> = std::result::Result<T, CliError>;

fn input_error(path: &Path, line: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}:{}: {msg}", path.display(), line + 1))
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))
}

pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    open(path)?
        .lines()
        .collect::<io::Result<Vec<_>>>()
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))
}

/// Fails unless every file has the same number of lines.
pub fn check_line_counts(files: &[(&Path, &[String])]) -> Result<()> {
    if let Some(((first, a), (other, b))) = files
        .first()
        .and_then(|f| files.iter().find(|g| g.1.len() != f.1.len()).map(|g| (f, g)))
        .map(|(f, g)| ((f.0, f.1.len()), (g.0, g.1.len())))
    {
        return Err(CliError::Input(format!(
            "{} has {a} lines but {} has {b}",
            first.display(),
            other.display()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct CorpusFiles {
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub subwords_src: Option<PathBuf>,
    pub subwords_tgt: Option<PathBuf>,
    /// Continuation marker in subword files.
    pub separator: String,
}

/// Groups subword pieces into words: a piece ending in `separator`
/// continues into the next one. Pieces are rewritten to the `@@` marker.
pub fn group_subwords(line: &str, separator: &str) -> Vec<Vec<String>> {
    let mut words = Vec::new();
    let mut current = Vec::new();
    for piece in line.split_whitespace() {
        match piece.strip_suffix(separator).filter(|_| !separator.is_empty()) {
            Some(stem) => current.push(format!("{stem}@@")),
            None => {
                current.push(piece.to_owned());
                words.push(std::mem::take(&mut current));
            }
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

fn tokens(path: &Path, k: usize, line: &str, subwords: Option<(&Path, &str)>, separator: &str) -> Result<Vec<Token>> {
    let words: Vec<&str> = line.split_whitespace().collect();
    let Some((sw_path, sw_line)) = subwords else {
        return words.iter().map(|w| Token::new(*w).map_err(|e| input_error(path, k, e))).collect();
    };
    let groups = group_subwords(sw_line, separator);
    if groups.len() != words.len() {
        return Err(input_error(
            sw_path,
            k,
            format!("{} subword groups for {} tokens", groups.len(), words.len()),
        ));
    }
    words
        .iter()
        .zip(groups)
        .map(|(w, g)| Token::with_subwords(*w, g).map_err(|e| input_error(sw_path, k, e)))
        .collect()
}

pub fn load_corpus(files: &CorpusFiles) -> Result<Vec<SentencePair>> {
    let src = read_lines(&files.src)?;
    let tgt = read_lines(&files.tgt)?;
    let sw_src = files.subwords_src.as_deref().map(read_lines).transpose()?;
    let sw_tgt = files.subwords_tgt.as_deref().map(read_lines).transpose()?;
    let mut all: Vec<(&Path, &[String])> = vec![(&files.src, &src), (&files.tgt, &tgt)];
    if let (Some(p), Some(l)) = (&files.subwords_src, &sw_src) {
        all.push((p, l));
    }
    if let (Some(p), Some(l)) = (&files.subwords_tgt, &sw_tgt) {
        all.push((p, l));
    }
    check_line_counts(&all)?;
    (0..src.len())
        .map(|k| {
            let s = tokens(
                &files.src,
                k,
                &src[k],
                files.subwords_src.as_deref().zip(sw_src.as_ref().map(|l| l[k].as_str())),
                &files.separator,
            )?;
            let t = tokens(
                &files.tgt,
                k,
                &tgt[k],
                files.subwords_tgt.as_deref().zip(sw_tgt.as_ref().map(|l| l[k].as_str())),
                &files.separator,
            )?;
            SentencePair::new(k, s, t).map_err(|e| input_error(&files.src, k, e))
        })
        .collect()
}

fn parse_index(s: &str, item: &str) -> std::result::Result<usize, String> {
    s.parse::<usize>().map_err(|_| format!("bad index in {item:?}"))
}

/// Splits a Pharaoh line into `(i, j, sure)` items.
pub fn parse_pharaoh_items(line: &str) -> std::result::Result<Vec<(usize, usize, bool)>, String> {
    line.split_whitespace()
        .map(|item| {
            let (sep, sure) = if item.contains('-') { ('-', true) } else { ('?', false) };
            let (i, j) = item.split_once(sep).ok_or_else(|| format!("bad alignment item {item:?}"))?;
            Ok((parse_index(i, item)?, parse_index(j, item)?, sure))
        })
        .collect()
}

/// Smallest dimensions that hold every item, at least 1x1.
pub fn pharaoh_extent(items: &[(usize, usize, bool)]) -> (usize, usize) {
    items.iter().fold((1, 1), |(r, c), &(i, j, _)| (r.max(i + 1), c.max(j + 1)))
}

pub fn parse_hard(line: &str, rows: usize, cols: usize) -> std::result::Result<HardAlignment, String> {
    let items = parse_pharaoh_items(line)?;
    if items.iter().any(|it| !it.2) {
        return Err("possible-only items are not allowed in a hypothesis".into());
    }
    HardAlignment::new(rows, cols, items.into_iter().map(|(i, j, _)| (i, j))).map_err(|e| e.to_string())
}

pub fn parse_gold(line: &str, rows: usize, cols: usize) -> std::result::Result<GoldAlignment, String> {
    let items = parse_pharaoh_items(line)?;
    let sure: Vec<_> = items.iter().filter(|it| it.2).map(|it| (it.0, it.1)).collect();
    let possible: Vec<_> = items.iter().map(|it| (it.0, it.1)).collect();
    GoldAlignment::new(rows, cols, sure, possible).map_err(|e| e.to_string())
}

/// Sorted `i-j` items, single spaces.
pub fn emit_hard(a: &HardAlignment) -> String {
    a.iter().map(|(i, j)| format!("{i}-{j}")).collect::<Vec<_>>().join(" ")
}

/// Sure links as `i-j`, possible-only links as `i?j`, sorted by position.
pub fn emit_gold(g: &GoldAlignment) -> String {
    g.possible()
        .iter()
        .map(|&(i, j)| if g.is_sure(i, j) { format!("{i}-{j}") } else { format!("{i}?{j}") })
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn read_hard_file(path: &Path, dims: Option<&[(usize, usize)]>) -> Result<Vec<HardAlignment>> {
    let lines = read_lines(path)?;
    if let Some(d) = dims.filter(|d| d.len() != lines.len()) {
        return Err(CliError::Input(format!("{} has {} lines, the corpus {}", path.display(), lines.len(), d.len())));
    }
    lines
        .iter()
        .enumerate()
        .map(|(k, l)| {
            let (r, c) = match dims {
                Some(d) => d[k],
                None => pharaoh_extent(&parse_pharaoh_items(l).map_err(|e| input_error(path, k, e))?),
            };
            parse_hard(l, r, c).map_err(|e| input_error(path, k, e))
        })
        .collect()
}

pub fn read_gold_file(path: &Path, dims: &[(usize, usize)]) -> Result<Vec<GoldAlignment>> {
    let lines = read_lines(path)?;
    if lines.len() != dims.len() {
        return Err(CliError::Input(format!("{} has {} lines, the corpus {}", path.display(), lines.len(), dims.len())));
    }
    lines
        .iter()
        .zip(dims)
        .enumerate()
        .map(|(k, (l, &(r, c)))| parse_gold(l, r, c).map_err(|e| input_error(path, k, e)))
        .collect()
}

pub fn write_lines<W: Write>(mut out: W, lines: impl IntoIterator<Item = String>) -> Result<()> {
    for l in lines {
        writeln!(out, "{l}")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub id: usize,
    pub scores: SoftAlignment,
}

pub fn emit_score(r: &ScoreRecord) -> String {
    let rows: Vec<String> = r
        .scores
        .to_rows()
        .iter()
        .map(|row| format!("[{}]", row.iter().map(|&x| fmt_num(x)).collect::<Vec<_>>().join(",")))
        .collect();
    format!(
        "{{\"id\": {}, \"rows\": {}, \"cols\": {}, \"space\": \"{}\", \"scores\": [{}]}}",
        r.id,
        r.scores.rows(),
        r.scores.cols(),
        r.scores.space().as_str(),
        rows.join(",")
    )
}

pub fn parse_score(line: &str) -> std::result::Result<ScoreRecord, String> {
    let v: Value = serde_json::from_str(line).map_err(|e| format!("not JSON: {e}"))?;
    let m = v.as_object().ok_or("record is not an object")?;
    let uint = |key: &str| -> std::result::Result<usize, String> {
        m.get(key)
            .and_then(Value::as_u64)
            .map(|x| x as usize)
            .ok_or_else(|| format!("{key:?} is missing or not a count"))
    };
    let (id, rows, cols) = (uint("id")?, uint("rows")?, uint("cols")?);
    let space: ScoreSpace = m
        .get("space")
        .and_then(Value::as_str)
        .ok_or("\"space\" is missing")?
        .parse()
        .map_err(|e: alignkit_core::AlignError| e.to_string())?;
    let matrix = m.get("scores").and_then(Value::as_array).ok_or("\"scores\" is missing")?;
    if matrix.len() != rows {
        return Err(format!("{} score rows, header says {rows}", matrix.len()));
    }
    let mut values = Vec::with_capacity(rows * cols);
    for row in matrix {
        let row = row.as_array().ok_or("score row is not a list")?;
        if row.len() != cols {
            return Err(format!("score row of length {}, header says {cols}", row.len()));
        }
        for x in row {
            values.push(x.as_f64().ok_or_else(|| format!("non-numeric score {x}"))?);
        }
    }
    let scores = SoftAlignment::new(rows, cols, values, space).map_err(|e| e.to_string())?;
    Ok(ScoreRecord { id, scores })
}

/// Reads a score file whose ids run 0, 1, 2, ...
pub fn read_score_file(path: &Path) -> Result<Vec<SoftAlignment>> {
    let mut out = Vec::new();
    for (k, line) in read_lines(path)?.iter().enumerate() {
        let r = parse_score(line).map_err(|e| input_error(path, k, e))?;
        if r.id != k {
            return Err(input_error(path, k, format!("record id {} where {k} was expected", r.id)));
        }
        out.push(r.scores);
    }
    Ok(out)
}

/// Checks that each matrix has the given dimensions.
pub fn check_dims(path: &Path, scores: &[SoftAlignment], dims: &[(usize, usize)]) -> Result<()> {
    if scores.len() != dims.len() {
        return Err(CliError::Input(format!("{} has {} records, the corpus {}", path.display(), scores.len(), dims.len())));
    }
    for (k, (s, d)) in scores.iter().zip(dims).enumerate() {
        if s.dims() != *d {
            return Err(input_error(path, k, format!("matrix is {:?}, the sentence pair {:?}", s.dims(), d)));
        }
    }
    Ok(())
}

/// Attention file: one record per sentence pair,
/// `{"id": k, "src_subwords": [...], "tgt_subwords": [...], "matrix": [[...]]}`.
pub fn read_attention_file(path: &Path) -> Result<Vec<AttentionPayload>> {
    let mut out = Vec::new();
    for (k, line) in read_lines(path)?.iter().enumerate() {
        let v: Value = serde_json::from_str(line).map_err(|e| input_error(path, k, format!("not JSON: {e}")))?;
        let id = v.get("id").and_then(Value::as_u64);
        if id != Some(k as u64) {
            return Err(input_error(path, k, format!("record id {id:?} where {k} was expected")));
        }
        out.push(parse_attention(line, &v).map_err(|e| input_error(path, k, e))?);
    }
    Ok(out)
}

fn feature_header() -> Vec<String> {
    ["sentence", "rows", "cols", "i", "j", "gold"]
        .iter()
        .map(|s| s.to_string())
        .chain(FEATURE_NAMES.iter().map(|s| s.to_string()))
        .chain(GROUP_NAMES.iter().map(|g| format!("has_{g}")))
        .collect()
}

/// CSV with one row per link; `gold` is `S`, `P`, `-`, or empty when the
/// table carries no gold alignment.
pub fn write_features<W: Write>(table: &FeatureTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(feature_header())?;
    for (s, b) in table.blocks().iter().enumerate() {
        let gold = table.golds().map(|g| &g[s]);
        for i in 0..b.rows {
            for j in 0..b.cols {
                let mark = match gold {
                    None => "",
                    Some(g) if g.is_sure(i, j) => "S",
                    Some(g) if g.is_possible(i, j) => "P",
                    Some(_) => "-",
                };
                let mut rec = vec![b.id.to_string(), b.rows.to_string(), b.cols.to_string(), i.to_string(), j.to_string()];
                rec.push(mark.to_owned());
                rec.extend(table.row(b.offset + i * b.cols + j).iter().map(|v| format!("{v}")));
                w.write_record(rec)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<FeatureTable> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != feature_header() {
        return Err(CliError::Input(format!("{}: unexpected feature header", path.display())));
    }
    let mut blocks: Vec<Block> = Vec::new();
    let mut values = Vec::new();
    let mut marks: Vec<Vec<(usize, usize, char)>> = Vec::new();
    let mut has_gold = None;
    let mut set: Option<FeatureSet> = None;
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |msg: String| input_error(path, k + 1, msg);
        let int = |c: usize| rec[c].parse::<usize>().map_err(|_| bad(format!("bad integer {:?}", &rec[c])));
        let (id, rows, cols, i, j) = (int(0)?, int(1)?, int(2)?, int(3)?, int(4)?);
        let new_block = blocks.last().is_none_or(|b| b.id != id);
        if new_block {
            if let Some(b) = blocks.last() {
                if values.len() / INPUT_WIDTH != b.offset + b.len() {
                    return Err(bad(format!("sentence {} is incomplete", b.id)));
                }
            }
            blocks.push(Block { id, rows, cols, offset: values.len() / INPUT_WIDTH });
            marks.push(Vec::new());
        }
        let b = *blocks.last().expect("pushed above");
        let pos = values.len() / INPUT_WIDTH - b.offset;
        if (b.rows, b.cols) != (rows, cols) || pos >= b.len() || (i, j) != (pos / cols, pos % cols) {
            return Err(bad(format!("row out of order for sentence {id}")));
        }
        let mark = &rec[5];
        match (has_gold, mark.is_empty()) {
            (None, e) => has_gold = Some(!e),
            (Some(g), e) if g == e => return Err(bad("gold column is only partly filled".into())),
            _ => {}
        }
        match mark {
            "S" => marks.last_mut().expect("pushed").push((i, j, 'S')),
            "P" => marks.last_mut().expect("pushed").push((i, j, 'P')),
            "-" | "" => {}
            other => return Err(bad(format!("bad gold mark {other:?}"))),
        }
        let row = (6..6 + INPUT_WIDTH)
            .map(|c| rec[c].parse::<f64>().map_err(|_| bad(format!("bad number {:?}", &rec[c]))))
            .collect::<Result<Vec<_>>>()?;
        let present: Vec<bool> = row[FEATURE_NAMES.len()..].iter().map(|&v| v == 1.0).collect();
        let this = FeatureSet { present: present.try_into().expect("eight mask columns") };
        match set {
            None => set = Some(this),
            Some(s) if s != this => return Err(bad("feature presence changes between rows".into())),
            _ => {}
        }
        values.extend(row);
    }
    let golds = if has_gold == Some(true) {
        Some(
            blocks
                .iter()
                .zip(&marks)
                .map(|(b, m)| {
                    GoldAlignment::new(
                        b.rows,
                        b.cols,
                        m.iter().filter(|x| x.2 == 'S').map(|x| (x.0, x.1)),
                        m.iter().map(|x| (x.0, x.1)),
                    )
                })
                .collect::<std::result::Result<Vec<_>, _>>()?,
        )
    } else {
        None
    };
    FeatureTable::from_parts(set.unwrap_or_default(), blocks, values, golds)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pharaoh_round_trip() {
        let line = "0-0 0?2 1-1 2?0";
        let g = parse_gold(line, 3, 3).unwrap();
        assert_eq!(emit_gold(&g), line);
        assert_eq!(g.sure().len(), 2);
        assert_eq!(g.possible().len(), 4);
        let h = parse_hard("1-1 0-0", 2, 2).unwrap();
        assert_eq!(emit_hard(&h), "0-0 1-1");
        assert_eq!(emit_hard(&parse_hard("", 2, 2).unwrap()), "");
    }

    #[test]
    fn pharaoh_errors() {
        assert!(parse_hard("0-5", 2, 2).is_err());
        assert!(parse_hard("0?1", 2, 2).is_err());
        assert!(parse_hard("a-1", 2, 2).is_err());
        assert!(parse_hard("01", 2, 2).is_err());
        assert_eq!(pharaoh_extent(&parse_pharaoh_items("0-3 2?1").unwrap()), (3, 4));
    }

    #[test]
    fn score_record_round_trip() {
        let line = r#"{"id": 3, "rows": 2, "cols": 2, "space": "log", "scores": [[-0.7,-2.3],[-1.9,-0.4]]}"#;
        let r = parse_score(line).unwrap();
        assert_eq!(r.id, 3);
        assert_eq!(r.scores.get(1, 0), -1.9);
        assert_eq!(emit_score(&r), line);
    }

    #[test]
    fn score_record_errors() {
        assert!(parse_score(r#"{"id": 0, "rows": 1, "cols": 2, "space": "log", "scores": [[-1]]}"#).is_err());
        assert!(parse_score(r#"{"id": 0, "rows": 1, "cols": 1, "space": "probability", "scores": [[2]]}"#).is_err());
        assert!(parse_score(r#"{"id": 0, "rows": 1, "cols": 1, "space": "odd", "scores": [[0]]}"#).is_err());
        assert!(parse_score("nope").is_err());
    }

    #[test]
    fn subword_grouping() {
        assert_eq!(
            group_subwords("pra@@ gue is", "@@"),
            vec![vec!["pra@@".to_string(), "gue".into()], vec!["is".into()]]
        );
        assert_eq!(group_subwords("pra## gue", "##"), vec![vec!["pra@@".to_string(), "gue".into()]]);
    }
}
