//! Wire protocol v1: one JSON record per line over a child process's
//! stdin/stdout.
//!
//! ```text
//! <- {"alignkit_scorer": 1, "supports": ["sentence_logprob","token_logprobs"]}
//! -> {"id": 7, "src": ["Choose","the","option"], "tgt": ["Wählen","Sie"], "need": ["token_logprobs"]}
//! <- {"id": 7, "token_logprobs": [-1.2, -0.3]}
//! ```
//!
//! The first line from the backend is the handshake. Replies may arrive in
//! any order and are matched by id. A backend reports a per-request failure
//! as `{"id": 7, "error": "..."}`.

use std::io::{BufRead, Write};

use serde_json::{Map, Value};

use super::{AttentionPayload, Needs, ScoreRequest, ScoreResponse, Scorer};
use crate::error::{AlignError, Result};
use crate::types::LOG_ZERO;

pub const PROTOCOL_VERSION: u64 = 1;

/// A parsed backend reply.
#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Scores(ScoreResponse),
    Error { id: Option<u64>, message: String },
}

/// Decimal literal for a float; non-finite values are clamped.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x > 0.0 {
        format!("{}", -LOG_ZERO)
    } else {
        format!("{LOG_ZERO}")
    }
}

fn fmt_nums(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|&x| fmt_num(x)).collect();
    format!("[{}]", parts.join(", "))
}

fn fmt_strs<S: AsRef<str>>(xs: &[S]) -> String {
    let v: Vec<&str> = xs.iter().map(AsRef::as_ref).collect();
    serde_json::to_string(&v).expect("string lists serialize")
}

pub fn handshake_line(supports: Needs) -> String {
    format!(
        "{{\"alignkit_scorer\": {PROTOCOL_VERSION}, \"supports\": {}}}",
        fmt_strs(&supports.names())
    )
}

pub fn request_line(req: &ScoreRequest) -> String {
    format!(
        "{{\"id\": {}, \"src\": {}, \"tgt\": {}, \"need\": {}}}",
        req.id,
        fmt_strs(&req.src),
        fmt_strs(&req.tgt),
        fmt_strs(&req.need.names())
    )
}

pub fn attention_json(att: &AttentionPayload) -> String {
    let rows: Vec<String> = att.matrix.iter().map(|r| fmt_nums(r)).collect();
    format!(
        "{{\"src_subwords\": {}, \"tgt_subwords\": {}, \"matrix\": [{}]}}",
        fmt_strs(&att.src_subwords),
        fmt_strs(&att.tgt_subwords),
        rows.join(", ")
    )
}

pub fn response_line(resp: &ScoreResponse) -> String {
    let mut out = format!("{{\"id\": {}", resp.id);
    if let Some(s) = resp.sentence_logprob {
        out.push_str(&format!(", \"sentence_logprob\": {}", fmt_num(s)));
    }
    if let Some(t) = &resp.token_logprobs {
        out.push_str(&format!(", \"token_logprobs\": {}", fmt_nums(t)));
    }
    if let Some(a) = &resp.attention {
        out.push_str(&format!(", \"attention\": {}", attention_json(a)));
    }
    out.push('}');
    out
}

pub fn error_line(id: Option<u64>, message: &str) -> String {
    let id = id.map_or_else(|| "null".to_owned(), |i| i.to_string());
    format!("{{\"id\": {id}, \"error\": {}}}", serde_json::to_string(message).unwrap())
}

fn bad(line: &str, what: impl std::fmt::Display) -> AlignError {
    AlignError::backend(format!("malformed protocol record: {what}"), Some(line))
}

fn object(line: &str) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(bad(line, "not a JSON object")),
        Err(e) => Err(bad(line, e)),
    }
}

fn number(line: &str, field: &str, v: &Value) -> Result<f64> {
    v.as_f64().ok_or_else(|| bad(line, format!("{field} is not numeric")))
}

fn numbers(line: &str, field: &str, v: &Value) -> Result<Vec<f64>> {
    v.as_array()
        .ok_or_else(|| bad(line, format!("{field} is not a list")))?
        .iter()
        .map(|x| number(line, field, x))
        .collect()
}

fn strings(line: &str, field: &str, v: Option<&Value>) -> Result<Vec<String>> {
    v.and_then(Value::as_array)
        .ok_or_else(|| bad(line, format!("{field} is missing or not a list")))?
        .iter()
        .map(|x| x.as_str().map(str::to_owned).ok_or_else(|| bad(line, format!("{field} holds a non-string"))))
        .collect()
}

fn id_of(line: &str, m: &Map<String, Value>) -> Result<u64> {
    m.get("id")
        .and_then(Value::as_u64)
        .ok_or_else(|| bad(line, "missing or non-integer id"))
}

pub fn parse_handshake(line: &str) -> Result<Needs> {
    let m = object(line)?;
    match m.get("alignkit_scorer").and_then(Value::as_u64) {
        Some(PROTOCOL_VERSION) => {}
        Some(v) => return Err(bad(line, format!("unsupported protocol version {v}"))),
        None => return Err(bad(line, "not a handshake")),
    }
    let names = strings(line, "supports", m.get("supports"))?;
    Needs::from_names(&names).map_err(|e| bad(line, e))
}

pub fn parse_attention(line: &str, v: &Value) -> Result<AttentionPayload> {
    let m = v.as_object().ok_or_else(|| bad(line, "attention is not an object"))?;
    let matrix = m
        .get("matrix")
        .and_then(Value::as_array)
        .ok_or_else(|| bad(line, "attention matrix is missing"))?
        .iter()
        .map(|row| numbers(line, "attention matrix", row))
        .collect::<Result<Vec<_>>>()?;
    Ok(AttentionPayload {
        src_subwords: strings(line, "src_subwords", m.get("src_subwords"))?,
        tgt_subwords: strings(line, "tgt_subwords", m.get("tgt_subwords"))?,
        matrix,
    })
}

pub fn parse_response(line: &str) -> Result<Reply> {
    let m = object(line)?;
    if let Some(err) = m.get("error") {
        let message = err.as_str().map_or_else(|| err.to_string(), str::to_owned);
        return Ok(Reply::Error { id: m.get("id").and_then(Value::as_u64), message });
    }
    let mut resp = ScoreResponse::empty(id_of(line, &m)?);
    if let Some(v) = m.get("sentence_logprob") {
        resp.sentence_logprob = Some(number(line, "sentence_logprob", v)?);
    }
    if let Some(v) = m.get("token_logprobs") {
        resp.token_logprobs = Some(numbers(line, "token_logprobs", v)?);
    }
    if let Some(v) = m.get("attention") {
        resp.attention = Some(parse_attention(line, v)?);
    }
    Ok(Reply::Scores(resp))
}

pub fn parse_request(line: &str) -> Result<ScoreRequest> {
    let m = object(line)?;
    let id = id_of(line, &m)?;
    let need = Needs::from_names(&strings(line, "need", m.get("need"))?).map_err(|e| bad(line, e))?;
    ScoreRequest::new(id, strings(line, "src", m.get("src"))?, strings(line, "tgt", m.get("tgt"))?, need)
}

/// Runs the backend side of the protocol over `input`/`output` until input
/// is exhausted: handshake first, then one reply line per request line.
/// Bad requests get an error record; the loop keeps going.
pub fn serve<S: Scorer + ?Sized, R: BufRead, W: Write>(scorer: &S, input: R, mut output: W) -> Result<()> {
    writeln!(output, "{}", handshake_line(scorer.supports()))?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match parse_request(&line) {
            Ok(req) => match scorer.score(&req) {
                Ok(resp) => response_line(&resp),
                Err(e) => error_line(Some(req.id), &e.to_string()),
            },
            Err(e) => {
                let id = serde_json::from_str::<Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(Value::as_u64));
                error_line(id, &e.to_string())
            }
        };
        writeln!(output, "{reply}")?;
        output.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ibm::LexiconModel;
    use crate::scorer::LexiconScorer;

    #[test]
    fn wire_format_is_exact() {
        assert_eq!(
            handshake_line(Needs::ALL),
            r#"{"alignkit_scorer": 1, "supports": ["sentence_logprob","token_logprobs","attention"]}"#
        );
        let req = ScoreRequest::new(
            7,
            vec!["Choose".into(), "the".into(), "option".into()],
            vec!["Wählen".into(), "Sie".into()],
            Needs::TOKENS,
        )
        .unwrap();
        assert_eq!(
            request_line(&req),
            r#"{"id": 7, "src": ["Choose","the","option"], "tgt": ["Wählen","Sie"], "need": ["token_logprobs"]}"#
        );
        let resp = ScoreResponse { token_logprobs: Some(vec![-1.2, -0.3]), ..ScoreResponse::empty(7) };
        assert_eq!(response_line(&resp), r#"{"id": 7, "token_logprobs": [-1.2, -0.3]}"#);
    }

    #[test]
    fn records_round_trip() {
        let req = ScoreRequest::new(3, vec!["a\"b".into()], vec!["ü".into()], Needs::ALL).unwrap();
        assert_eq!(parse_request(&request_line(&req)).unwrap(), req);
        let resp = ScoreResponse {
            id: 4,
            sentence_logprob: Some(-0.1 - 0.2),
            token_logprobs: Some(vec![-0.1, -0.2]),
            attention: Some(AttentionPayload {
                src_subwords: vec!["a@@".into(), "b".into()],
                tgt_subwords: vec!["x".into()],
                matrix: vec![vec![0.25, 0.75]],
            }),
        };
        assert_eq!(parse_response(&response_line(&resp)).unwrap(), Reply::Scores(resp));
        assert_eq!(parse_handshake(&handshake_line(Needs::SENTENCE)).unwrap(), Needs::SENTENCE);
    }

    #[test]
    fn malformed_replies_are_rejected_with_the_line() {
        for line in [
            r#"{"id": 1, "token_logprobs": ["x"]}"#,
            r#"{"id": 1, "sentence_logprob": "abc"}"#,
            r#"{"token_logprobs": [-1]}"#,
            r#"not json"#,
            r#"[1,2]"#,
        ] {
            match parse_response(line) {
                Err(AlignError::Backend { line: Some(l), .. }) => assert_eq!(l, line),
                other => panic!("{line}: {other:?}"),
            }
        }
        assert_eq!(
            parse_response(r#"{"id": 2, "error": "boom"}"#).unwrap(),
            Reply::Error { id: Some(2), message: "boom".into() }
        );
        assert!(parse_handshake(r#"{"alignkit_scorer": 2, "supports": []}"#).is_err());
    }

    #[test]
    fn serve_answers_every_line() {
        let scorer = LexiconScorer::new(LexiconModel::from_entries([("a", "b", 1.0)], 0.0).unwrap());
        let input = "{\"id\": 0, \"src\": [\"a\"], \"tgt\": [\"b\"], \"need\": [\"sentence_logprob\"]}\n\
                     garbage\n\
                     {\"id\": 5, \"src\": [\"a\"], \"tgt\": [\"b\"], \"need\": [\"attention\"]}\n";
        let mut out = Vec::new();
        serve(&scorer, input.as_bytes(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(parse_handshake(lines[0]).unwrap(), scorer.supports());
        assert_eq!(lines[1], format!("{{\"id\": 0, \"sentence_logprob\": {}}}", 0.5f64.ln()));
        assert!(matches!(parse_response(lines[2]).unwrap(), Reply::Error { id: None, .. }));
        assert!(matches!(parse_response(lines[3]).unwrap(), Reply::Error { id: Some(5), .. }));
    }
}
