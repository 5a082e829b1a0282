//! Helpers for driving the `alignkit` binary.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_alignkit");

/// Command with every `ALIGNKIT_*` variable removed from the environment.
pub fn alignkit() -> Command {
    let mut c = Command::new(BIN);
    for (k, _) in std::env::vars_os() {
        if k.to_string_lossy().starts_with("ALIGNKIT_") {
            c.env_remove(k);
        }
    }
    c
}

pub fn run(args: &[&str]) -> Output {
    alignkit().args(args).output().expect("binary runs")
}

/// Runs and insists on exit code 0; returns stdout.
pub fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "alignkit {args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 output")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

pub fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

pub fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

/// Synthetic corpus in `dir` plus a lexical model trained on it.
pub struct Fixture {
    pub dir: PathBuf,
    pub src: PathBuf,
    pub tgt: PathBuf,
    pub src_sub: PathBuf,
    pub tgt_sub: PathBuf,
    pub gold: PathBuf,
    pub model: PathBuf,
    pub model_rev: PathBuf,
}

pub fn fixture(dir: &Path, sentences: usize, seed: u64) -> Fixture {
    let n = sentences.to_string();
    let seed = seed.to_string();
    ok(&["generate", "--out-dir", s(dir), "--sentences", &n, "--seed", &seed]);
    let f = Fixture {
        dir: dir.to_owned(),
        src: dir.join("src.txt"),
        tgt: dir.join("tgt.txt"),
        src_sub: dir.join("src.sub"),
        tgt_sub: dir.join("tgt.sub"),
        gold: dir.join("gold.txt"),
        model: dir.join("model.ibm"),
        model_rev: dir.join("model_rev.ibm"),
    };
    ok(&["train-ibm", "--src", s(&f.src), "--tgt", s(&f.tgt), "--out", s(&f.model), "--iters", "5"]);
    ok(&["train-ibm", "--src", s(&f.tgt), "--tgt", s(&f.src), "--out", s(&f.model_rev), "--iters", "5"]);
    f
}

impl Fixture {
    /// Scores the corpus with the builtin model and returns the file written.
    pub fn score(&self, method: &str) -> PathBuf {
        let out = self.dir.join(format!("{method}.jsonl"));
        let scorer = format!("builtin:{}", s(&self.model));
        ok(&[
            "score", "--src", s(&self.src), "--tgt", s(&self.tgt), "--method", method, "--scorer", &scorer, "--out", s(&out),
        ]);
        out
    }

    pub fn score_reverse(&self, method: &str) -> PathBuf {
        let out = self.dir.join(format!("{method}_rev.jsonl"));
        let scorer = format!("builtin:{}", s(&self.model_rev));
        ok(&[
            "score", "--src", s(&self.tgt), "--tgt", s(&self.src), "--method", method, "--scorer", &scorer, "--out", s(&out),
        ]);
        out
    }
}

/// `precision recall aer` as printed by `eval`.
pub fn metrics(line: &str) -> [f64; 3] {
    let v: Vec<f64> = line.split_whitespace().map(|x| x.parse().unwrap()).collect();
    [v[0], v[1], v[2]]
}
