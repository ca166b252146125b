#![allow(dead_code)]

use std::path::Path;
use std::process::Command;

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the command-line binary with `args`.
pub fn cli(args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_lai-fusion"))
        .args(args)
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().expect("exited normally"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

/// Like [`cli`] but panics with the captured output unless the exit code is 0.
pub fn cli_ok(args: &[&str]) -> Run {
    let r = cli(args);
    assert_eq!(
        r.code, 0,
        "{args:?}\nstdout:\n{}\nstderr:\n{}",
        r.stdout, r.stderr
    );
    r
}

pub fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// A training config small enough for a few seconds of CPU time.
pub const TINY_TRAIN_TOML: &str = "\
epochs = 2
batch_size = 4

[model]
encoder_depth = 1
encoder_base = 4
decoder_depth = 1
decoder_base = 4
features = 4
";
