#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ppi_affinity::ingest::Dataset;
use ppi_affinity::regressor::EmbeddingTable;

pub const BIN: &str = env!("CARGO_BIN_EXE_ppi-affinity");

pub fn write_dataset(dataset: &Dataset, path: &Path) {
    let mut text = String::from("id,chains,pkd,kd_molar,pmid\n");
    for c in &dataset.complexes {
        let _ = writeln!(text, "{},{},{},,{}", c.id, c.chains.join(";"), c.pkd, c.pmid);
    }
    fs::write(path, text).unwrap();
}

pub fn write_table(table: &EmbeddingTable, path: &Path) {
    table.write_binary(path).unwrap();
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

/// Run and require exit code 0, echoing stderr on failure.
pub fn ok(args: &[&str]) -> Output {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every regular file under `dir`, relative path and bytes, sorted.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}
