#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dmf_core::synthetic::LowRank;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Writes a synthetic matrix as `user::item::rating::0` lines with ids
/// `u<row>` and `i<col>`.
pub fn write_synthetic(dir: &Path, spec: &LowRank) -> PathBuf {
    let m = spec.generate().unwrap();
    let mut text = String::new();
    for e in m.entries() {
        writeln!(text, "u{}::i{}::{}::0", e.row, e.col, e.value).unwrap();
    }
    let path = dir.join("ratings.dat");
    std::fs::write(&path, text).unwrap();
    path
}

/// Config file pointing at `data`, with `body` appended verbatim.
pub fn write_config(dir: &Path, data: &Path, body: &str) -> PathBuf {
    let text = format!(
        "seed = 5\noutput_dir = \"out\"\n\n[data]\npath = {:?}\nformat = \"movielens\"\n\n{}",
        data.to_str().unwrap(),
        body
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub const SMALL_MODEL: &str = "[model]\nhidden = [16]\nlatent_dim = 6\nactivation = \"selu\"\n\n";

pub fn dmf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmf")).args(args).output().unwrap()
}

pub fn dmf_ok(args: &[&str]) -> Output {
    let out = dmf(args);
    assert!(
        out.status.success(),
        "dmf {:?} failed ({:?}): {}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {}", path.as_ref().display(), e))
}
