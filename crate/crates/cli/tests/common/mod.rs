//! Shared fixtures for driving the `tresafe` binary.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

use tresafe::dataset::generators::{generate, Regime, SyntheticSpec};
use tresafe::dataset::{write_dataset, Dataset};

pub const RULES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/rules.json");

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tresafe"))
}

/// Runs the binary and returns its exit code.
pub fn run(args: &[&str]) -> i32 {
    let out = bin().args(args).output().expect("binary runs");
    out.status.code().expect("exited normally")
}

/// Runs the binary and returns its exit code and stderr.
pub fn run_verbose(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().expect("binary runs");
    (out.status.code().expect("exited normally"), String::from_utf8_lossy(&out.stderr).into_owned())
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// A training set, a holdout and their dictionary written into `dir`.
pub struct DataFiles {
    pub train: PathBuf,
    pub holdout: PathBuf,
    pub dict: PathBuf,
    pub all: PathBuf,
}

pub fn write_data(dir: &Path, regime: Regime, n_train: usize, n_holdout: usize, seed: u64) -> DataFiles {
    let ds = generate(&SyntheticSpec::new(regime, n_train + n_holdout, seed)).unwrap();
    let train = ds.subset(&(0..n_train).collect::<Vec<_>>()).unwrap();
    let holdout = ds.subset(&(n_train..n_train + n_holdout).collect::<Vec<_>>()).unwrap();
    let files = DataFiles {
        train: dir.join("train.csv"),
        holdout: dir.join("holdout.csv"),
        dict: dir.join("dict.json"),
        all: dir.join("all.csv"),
    };
    std::fs::write(&files.train, write_dataset(&train)).unwrap();
    std::fs::write(&files.holdout, write_dataset(&holdout)).unwrap();
    std::fs::write(&files.all, write_dataset(&ds)).unwrap();
    std::fs::write(&files.dict, ds.dictionary().to_json()).unwrap();
    files
}

pub fn dataset(ds_path: &Path, dict: &Path) -> Dataset {
    let d = tresafe::dataset::parse_data_dictionary(&std::fs::read(dict).unwrap()).unwrap();
    tresafe::dataset::load_dataset(&std::fs::read(ds_path).unwrap(), &d).unwrap()
}

pub fn write_spec(path: &Path, json: &str) -> PathBuf {
    std::fs::write(path, json).unwrap();
    path.to_path_buf()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}
