//! Composite oracle suites shared by the `selftest` command and the tests.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::gradcheck;
use crate::data::{split, DatasetManifest, Label, ManifestRow, Split, SplitRatios};
use crate::error::{Error, Result};
use crate::metrics::{auc_pair_oracle, roc};
use crate::models::build_densenet121;
use crate::ops::conv2d;
use crate::oracle::naive_conv2d;
use crate::tensor::Tensor;

pub const CONV_TOLERANCE: f32 = 1e-5;
pub const AUC_TOLERANCE: f64 = 1e-9;

/// Names of the suites in the order they run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Gradcheck,
    ConvOracle,
    AucOracle,
    LayerCount,
    SplitCount,
}

impl Check {
    pub const ALL: [Check; 5] = [
        Check::Gradcheck,
        Check::ConvOracle,
        Check::AucOracle,
        Check::LayerCount,
        Check::SplitCount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Check::Gradcheck => "gradcheck",
            Check::ConvOracle => "conv-oracle",
            Check::AucOracle => "auc-oracle",
            Check::LayerCount => "layer-count",
            Check::SplitCount => "split-count",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown check `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub check: Check,
    pub passed: bool,
    pub detail: String,
}

/// Largest |fast − naive| over `cases` random small convolutions.
/// `bias_fault` is added to the fast path's output to exercise failure reporting.
pub fn conv_oracle_max_error(cases: usize, seed: u64, bias_fault: f32) -> Result<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f32;
    for _ in 0..cases {
        let n = rng.random_range(1..=3);
        let cin = rng.random_range(1..=4);
        let cout = rng.random_range(1..=5);
        let k: usize = [1, 2, 3, 5][rng.random_range(0..4)];
        let stride = rng.random_range(1..=3);
        let pad = rng.random_range(0..=k / 2);
        let h = rng.random_range(k.max(1)..=9);
        let w = rng.random_range(k.max(1)..=9);
        let x = Tensor::<f32>::from_fn([n, cin, h, w], |_| rng.random_range(-1.0..1.0))?;
        let wt = Tensor::<f32>::from_fn([cout, cin, k, k], |_| rng.random_range(-1.0..1.0))?;
        let b = Tensor::<f32>::from_fn([cout], |_| rng.random_range(-1.0..1.0))?;
        let fast = conv2d(&x, &wt, Some(&b), stride, pad)?.map(|v| v + bias_fault);
        let slow = naive_conv2d(&x, &wt, Some(&b), stride, pad)?;
        worst = worst.max(fast.max_abs_diff(&slow)?);
    }
    Ok(worst)
}

/// Largest |trapezoid − pair oracle| over `sets` random score sets of at
/// most 64 samples each (both classes always present, ties common).
pub fn auc_oracle_max_error(sets: usize, seed: u64, fault: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..sets {
        let n = rng.random_range(2..=64);
        let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let levels = rng.random_range(2..=20);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let trap = roc(&scores, &labels)?.auc() + fault;
        worst = worst.max((trap - auc_pair_oracle(&scores, &labels)?).abs());
    }
    Ok(worst)
}

/// `n` synthetic rows, the first `positives` labelled PNEUMONIA.
pub fn synthetic_manifest(n: usize, positives: usize) -> DatasetManifest {
    DatasetManifest {
        rows: (0..n)
            .map(|i| ManifestRow {
                path: PathBuf::from(format!("img{i:05}.png")),
                label: if i < positives { Label::Pneumonia } else { Label::Normal },
                split: None,
            })
            .collect(),
        seed: None,
        skipped: 0,
    }
}

/// Split counts of one assignment and whether every per-label count lies
/// within one sample of its proportional share.
pub fn split_summary(m: &DatasetManifest, ratios: SplitRatios) -> ([usize; 3], bool) {
    let counts = Split::ALL.map(|s| m.count(s));
    let r = ratios.as_array();
    let stratified = Label::ALL.iter().all(|&l| {
        let n = m.label_count(None, l) as f64;
        Split::ALL
            .iter()
            .zip(r)
            .all(|(&s, ratio)| (m.label_count(Some(s), l) as f64 - n * ratio).abs() <= 1.0)
    });
    (counts, stratified)
}

fn run_check(check: Check, fault: bool) -> Result<CheckOutcome> {
    let (passed, detail) = match check {
        Check::Gradcheck => {
            let mut results = gradcheck::run_suite(7)?;
            if fault {
                results[0].max_rel_error = 1.0;
            }
            let failed: Vec<String> = results
                .iter()
                .filter(|r| !r.passed())
                .map(|r| r.op.to_string())
                .collect();
            let worst = results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
            (
                failed.is_empty(),
                format!(
                    "ops={} worst_rel_error={worst:.3e} failed=[{}]",
                    results.len(),
                    failed.join(";")
                ),
            )
        }
        Check::ConvOracle => {
            let err = conv_oracle_max_error(200, 1, if fault { 1e-3 } else { 0.0 })?;
            (err < CONV_TOLERANCE, format!("cases=200 max_abs_error={err:.3e}"))
        }
        Check::AucOracle => {
            let err = auc_oracle_max_error(100, 2, if fault { 1e-6 } else { 0.0 })?;
            let example = roc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1])?.auc();
            (
                err < AUC_TOLERANCE && example == 0.75,
                format!("sets=100 max_abs_error={err:.3e} example_auc={example}"),
            )
        }
        Check::LayerCount => {
            let m = build_densenet121(0)?;
            let layers = m.count_layers() + usize::from(fault);
            let channels: Vec<usize> = m.dense_blocks().iter().map(|b| b.out_channels).collect();
            (
                layers == 121 && channels == [256, 512, 1024, 1024],
                format!("layers={layers} block_channels={channels:?}"),
            )
        }
        Check::SplitCount => {
            let ratios = SplitRatios::default();
            let m = synthetic_manifest(5824 + usize::from(fault), 4241);
            let (counts, stratified) = split_summary(&split(&m, ratios, 0)?, ratios);
            (
                counts == [5125, 466, 233] && stratified,
                format!(
                    "train={} val={} test={} stratified={stratified}",
                    counts[0], counts[1], counts[2]
                ),
            )
        }
    };
    Ok(CheckOutcome { check, passed, detail })
}

/// Runs `checks` in order; `fault` names one check to sabotage.
pub fn run(checks: &[Check], fault: Option<Check>) -> Result<Vec<CheckOutcome>> {
    checks.iter().map(|&c| run_check(c, fault == Some(c))).collect()
}
