//! Wire protocol transcripts against scripted `sh` backends.

use std::time::Duration;

use alignkit_core::ibm::LexiconModel;
use alignkit_core::nmt_scores::m1_scores;
use alignkit_core::scorer::{serve, ExternalConfig, ExternalScorer, LexiconScorer, Needs, ScoreRequest, Scorer};
use alignkit_core::types::NULL;
use alignkit_core::{AlignError, SentencePair};

const HANDSHAKE: &str = r#"{"alignkit_scorer": 1, "supports": ["sentence_logprob","token_logprobs"]}"#;

fn config(timeout_ms: u64) -> ExternalConfig {
    ExternalConfig { timeout: Duration::from_millis(timeout_ms), window: 256 }
}

/// Script that prints the handshake, then runs `body`.
fn mock(body: &str) -> String {
    format!("printf '%s\\n' '{HANDSHAKE}'; {body}")
}

/// Replies to every request with its own id and `sentence_logprob` -1.5.
const ECHO: &str = r#"while IFS= read -r line; do id=$(printf '%s' "$line" | sed 's/^{"id": \([0-9]*\).*/\1/'); printf '{"id": %s, "sentence_logprob": -1.5}\n' "$id"; done"#;

fn req(id: u64, need: Needs) -> ScoreRequest {
    ScoreRequest::new(id, vec!["a".into(), "b".into()], vec!["x".into()], need).unwrap()
}

fn backend_line(e: &AlignError) -> Option<String> {
    match e {
        AlignError::Backend { line, .. } => line.clone(),
        _ => None,
    }
}

#[test]
fn handshake_is_read_first() {
    let s = ExternalScorer::spawn(&mock(ECHO), config(5000)).unwrap();
    assert_eq!(s.supports(), Needs { sentence_logprob: true, token_logprobs: true, attention: false });
}

#[test]
fn requests_are_written_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("requests.log");
    let body = format!(
        r#"while IFS= read -r line; do printf '%s\n' "$line" >> '{}'; id=$(printf '%s' "$line" | sed 's/^{{"id": \([0-9]*\).*/\1/'); printf '{{"id": %s, "sentence_logprob": -1.5}}\n' "$id"; done"#,
        log.display()
    );
    let s = ExternalScorer::spawn(&mock(&body), config(5000)).unwrap();
    let batch = vec![req(0, Needs::SENTENCE), ScoreRequest::new(1, vec!["Wählen".into()], vec!["<unk>".into()], Needs::SENTENCE).unwrap()];
    s.score_batch(&batch).unwrap();
    drop(s);
    let written = std::fs::read_to_string(&log).unwrap();
    assert_eq!(
        written,
        concat!(
            r#"{"id": 0, "src": ["a","b"], "tgt": ["x"], "need": ["sentence_logprob"]}"#,
            "\n",
            r#"{"id": 1, "src": ["Wählen"], "tgt": ["<unk>"], "need": ["sentence_logprob"]}"#,
            "\n"
        )
    );
}

#[test]
fn shuffled_replies_are_matched_by_id() {
    let body = r#"read a; read b; read c; printf '%s\n' '{"id": 2, "sentence_logprob": -3}' '{"id": 0, "sentence_logprob": -1}' '{"id": 1, "sentence_logprob": -2}'; cat > /dev/null"#;
    let s = ExternalScorer::spawn(&mock(body), config(5000)).unwrap();
    let out = s.score_batch(&[req(0, Needs::SENTENCE), req(1, Needs::SENTENCE), req(2, Needs::SENTENCE)]).unwrap();
    let got: Vec<(u64, f64)> = out.iter().map(|r| (r.id, r.sentence_logprob.unwrap())).collect();
    assert_eq!(got, vec![(0, -1.0), (1, -2.0), (2, -3.0)]);
}

#[test]
fn many_requests_through_a_small_window() {
    let s = ExternalScorer::spawn(&mock(ECHO), ExternalConfig { timeout: Duration::from_secs(5), window: 2 }).unwrap();
    let batch: Vec<_> = (0..7).map(|k| req(k, Needs::SENTENCE)).collect();
    let out = s.score_batch(&batch).unwrap();
    assert_eq!(out.iter().map(|r| r.id).collect::<Vec<_>>(), (0..7).collect::<Vec<_>>());
    // A second batch reuses the same process.
    assert_eq!(s.score_batch(&batch[..1]).unwrap()[0].sentence_logprob, Some(-1.5));
}

fn single_reply_failure(reply: &str) -> AlignError {
    let body = format!("read a; printf '%s\\n' '{reply}'; cat > /dev/null");
    let s = ExternalScorer::spawn(&mock(&body), config(5000)).unwrap();
    s.score_batch(&[req(0, Needs::SENTENCE)]).unwrap_err()
}

#[test]
fn unknown_id_is_rejected() {
    let e = single_reply_failure(r#"{"id": 9, "sentence_logprob": -1}"#);
    assert!(e.to_string().contains("unknown id 9"), "{e}");
    assert_eq!(backend_line(&e).as_deref(), Some(r#"{"id": 9, "sentence_logprob": -1}"#));
}

#[test]
fn duplicate_id_is_rejected() {
    let body = r#"read a; read b; printf '%s\n' '{"id": 0, "sentence_logprob": -1}' '{"id": 0, "sentence_logprob": -1}'; cat > /dev/null"#;
    let s = ExternalScorer::spawn(&mock(body), config(5000)).unwrap();
    let e = s.score_batch(&[req(0, Needs::SENTENCE), req(1, Needs::SENTENCE)]).unwrap_err();
    assert!(e.to_string().contains("duplicate id 0"), "{e}");
}

#[test]
fn non_numeric_score_is_rejected() {
    let e = single_reply_failure(r#"{"id": 0, "sentence_logprob": "low"}"#);
    assert!(matches!(e, AlignError::Backend { .. }), "{e}");
    assert_eq!(backend_line(&e).as_deref(), Some(r#"{"id": 0, "sentence_logprob": "low"}"#));
}

#[test]
fn error_record_is_reported() {
    let e = single_reply_failure(r#"{"id": 0, "error": "model exploded"}"#);
    assert!(e.to_string().contains("model exploded"), "{e}");
}

#[test]
fn missing_field_is_rejected() {
    let e = single_reply_failure(r#"{"id": 0}"#);
    assert!(matches!(e, AlignError::Backend { .. }), "{e}");
}

#[test]
fn token_scores_must_add_up() {
    let body = r#"read a; printf '%s\n' '{"id": 0, "sentence_logprob": -3, "token_logprobs": [-1]}'; cat > /dev/null"#;
    let s = ExternalScorer::spawn(&mock(body), config(5000)).unwrap();
    let e = s.score_batch(&[req(0, Needs::SENTENCE.union(Needs::TOKENS))]).unwrap_err();
    assert!(matches!(e, AlignError::Backend { .. }), "{e}");
}

#[test]
fn silent_backend_times_out() {
    let s = ExternalScorer::spawn(&mock("read a; sleep 5"), config(200)).unwrap();
    let e = s.score_batch(&[req(0, Needs::SENTENCE)]).unwrap_err();
    assert!(matches!(e, AlignError::Timeout(_)), "{e}");
    // The channel is unusable afterwards.
    let again = s.score_batch(&[req(1, Needs::SENTENCE)]).unwrap_err();
    assert!(again.to_string().contains("earlier failure"), "{again}");
}

#[test]
fn dying_backend_reports_last_line() {
    let body = r#"read a; read b; printf '%s\n' '{"id": 0, "sentence_logprob": -1}'; exit 3"#;
    let s = ExternalScorer::spawn(&mock(body), config(5000)).unwrap();
    let e = s.score_batch(&[req(0, Needs::SENTENCE), req(1, Needs::SENTENCE)]).unwrap_err();
    assert!(e.to_string().contains("exited") || e.to_string().contains("closed"), "{e}");
    assert_eq!(backend_line(&e).as_deref(), Some(r#"{"id": 0, "sentence_logprob": -1}"#));
}

#[test]
fn bad_handshake_is_rejected() {
    let r = ExternalScorer::spawn(r#"printf '%s\n' '{"alignkit_scorer": 2, "supports": []}'; cat > /dev/null"#, config(5000));
    assert!(r.is_err());
    let r = ExternalScorer::spawn("true", config(5000));
    assert!(r.is_err());
}

#[test]
fn unsupported_need_never_reaches_the_backend() {
    let s = ExternalScorer::spawn(&mock(ECHO), config(5000)).unwrap();
    let e = s.score_batch(&[req(0, Needs::ATTENTION)]).unwrap_err();
    assert!(matches!(e, AlignError::Capability(_)), "{e}");
    // Still usable: the request was never written.
    assert!(s.score_batch(&[req(1, Needs::SENTENCE)]).is_ok());
}

fn lexicon() -> LexiconModel {
    LexiconModel::from_entries([("a", "x", 0.5), ("a", "y", 0.5), (NULL, "x", 0.5), (NULL, "y", 0.5)], 0.0).unwrap()
}

#[test]
fn serve_transcript() {
    let input = concat!(
        r#"{"id": 4, "src": ["a"], "tgt": ["x"], "need": ["sentence_logprob","token_logprobs"]}"#,
        "\n",
        "\n",
        "not json\n",
        r#"{"id": 5, "src": ["a"], "tgt": ["x"], "need": ["attention"]}"#,
        "\n",
        r#"{"id": 6, "src": [], "tgt": ["x"], "need": ["sentence_logprob"]}"#,
        "\n",
        r#"{"id": 7, "src": ["a"], "tgt": ["y","x"], "need": ["sentence_logprob"]}"#,
        "\n",
    );
    let mut out = Vec::new();
    serve(&LexiconScorer::new(lexicon()), input.as_bytes(), &mut out).unwrap();
    let lines: Vec<&str> = std::str::from_utf8(&out).unwrap().lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0], HANDSHAKE);
    assert_eq!(lines[1], r#"{"id": 4, "sentence_logprob": -0.6931471805599453, "token_logprobs": [-0.6931471805599453]}"#);
    assert!(lines[2].starts_with(r#"{"id": null, "error": "#), "{}", lines[2]);
    assert!(lines[3].starts_with(r#"{"id": 5, "error": "#), "{}", lines[3]);
    assert!(lines[4].starts_with(r#"{"id": 6, "error": "#), "{}", lines[4]);
    assert_eq!(lines[5], r#"{"id": 7, "sentence_logprob": -1.3862943611198906}"#);
}

#[test]
fn external_serve_matches_in_process_scores() {
    // Replays what the in-process server answered through a real child.
    let model = lexicon();
    let scorer = LexiconScorer::new(model);
    let pair = SentencePair::from_text(0, "a a", "x y").unwrap();
    let direct = m1_scores(&scorer, &pair).unwrap();

    let requests: Vec<ScoreRequest> = (0..4)
        .map(|k| {
            let (i, j) = (k / 2, k % 2);
            let src = vec![pair.src[i].text().to_owned()];
            let tgt = vec![pair.tgt[j].text().to_owned()];
            ScoreRequest::new(k as u64, src, tgt, Needs::SENTENCE).unwrap()
        })
        .collect();
    let mut transcript = Vec::new();
    let input: String = requests.iter().map(|r| format!("{}\n", alignkit_core::scorer::protocol::request_line(r))).collect();
    serve(&scorer, input.as_bytes(), &mut transcript).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let replay = dir.path().join("replay.txt");
    std::fs::write(&replay, &transcript).unwrap();
    // Emit the recorded transcript after consuming the requests.
    let script = format!("head -n 1 '{0}'; read a; read b; read c; read d; tail -n +2 '{0}'; cat > /dev/null", replay.display());
    let ext = ExternalScorer::spawn(&script, config(5000)).unwrap();
    let via_protocol = m1_scores(&ext, &pair).unwrap();
    assert_eq!(via_protocol, direct);
}
