#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use radnet::data::{synthetic, Label};
use radnet::Tensor;

pub fn radnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radnet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn radnet")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Value of `key=` in a whitespace-separated summary line.
pub fn field<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.split_whitespace()
        .find_map(|tok| tok.strip_prefix(key).and_then(|rest| rest.strip_prefix('=')))
}

pub fn write_textures(root: &Path, n: usize, seed: u64) -> Vec<PathBuf> {
    synthetic::write_dataset(root, &synthetic::textures(n, 32, seed), "png").unwrap()
}

/// Planted-quadrant training set with blank label-balanced controls.
pub fn write_planted(root: &Path, n: usize, controls: usize, seed: u64) -> Vec<PathBuf> {
    let mut samples = synthetic::planted_quadrant(n, 32, seed);
    samples.extend(synthetic::planted_controls(controls, 32, seed));
    synthetic::write_dataset(root, &samples, "png").unwrap()
}

/// Constant-intensity images: dark for NORMAL, bright for PNEUMONIA.
pub fn write_intensity(root: &Path, n: usize) -> Vec<PathBuf> {
    let samples: Vec<(Tensor, Label)> = (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Normal } else { Label::Pneumonia };
            let v = if label == Label::Normal { 0.1 } else { 0.9 };
            (Tensor::full([1, 32, 32], v).unwrap(), label)
        })
        .collect();
    synthetic::write_dataset(root, &samples, "pgm").unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
