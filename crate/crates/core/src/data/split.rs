//! Stratified train/val/test assignment.
//!
//! Global split sizes come from largest-remainder rounding of `N · ratio`.
//! Per-label counts are then chosen so that every label's row sums and every
//! split's column sums are exact, minimizing the worst deviation from
//! `n_label · ratio`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetManifest, Label, Split};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.88,
            val: 0.08,
            test: 0.04,
        }
    }
}

impl SplitRatios {
    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.as_array();
        if r.iter().any(|&x| !x.is_finite() || x <= 0.0) {
            return Err(Error::invalid(format!("split ratios must be positive, got {r:?}")));
        }
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split ratios must sum to 1, got {sum}")));
        }
        Ok(())
    }
}

/// Integer shares of `total` proportional to `weights` (which sum to 1).
/// Floors first, then one extra unit to the largest fractional parts; ties
/// go to the earlier index.
pub fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = weights.iter().map(|w| w * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

struct Search<'a> {
    label_sizes: &'a [usize],
    ratios: [f64; 3],
    targets: [usize; 3],
    best: Option<(f64, f64, Vec<[usize; 3]>)>,
}

impl Search<'_> {
    fn candidates(&self, n: usize, s: usize) -> std::ops::RangeInclusive<usize> {
        let ideal = n as f64 * self.ratios[s];
        let lo = (ideal.floor() as usize).saturating_sub(1);
        let hi = (ideal.ceil() as usize + 1).min(n);
        lo..=hi
    }

    fn recurse(&mut self, l: usize, used: [usize; 3], acc: &mut Vec<[usize; 3]>) {
        if l == self.label_sizes.len() {
            if used != self.targets {
                return;
            }
            let mut worst = 0.0f64;
            let mut sq = 0.0;
            for (row, &n) in acc.iter().zip(self.label_sizes) {
                for (&count, &ratio) in row.iter().zip(&self.ratios) {
                    let d = (count as f64 - n as f64 * ratio).abs();
                    worst = worst.max(d);
                    sq += d * d;
                }
            }
            let better = match &self.best {
                None => true,
                Some((w, q, _)) => (worst, sq) < (*w, *q),
            };
            if better {
                self.best = Some((worst, sq, acc.clone()));
            }
            return;
        }
        let n = self.label_sizes[l];
        for a in self.candidates(n, 0) {
            for b in self.candidates(n, 1) {
                if a + b > n {
                    continue;
                }
                let row = [a, b, n - a - b];
                let next = [used[0] + row[0], used[1] + row[1], used[2] + row[2]];
                if (0..3).any(|s| next[s] > self.targets[s]) {
                    continue;
                }
                acc.push(row);
                self.recurse(l + 1, next, acc);
                acc.pop();
            }
        }
    }
}

/// Per-label split counts whose columns sum to `targets`.
fn stratify(label_sizes: &[usize], ratios: [f64; 3], targets: [usize; 3]) -> Result<Vec<[usize; 3]>> {
    let mut search = Search {
        label_sizes,
        ratios,
        targets,
        best: None,
    };
    search.recurse(0, [0; 3], &mut Vec::new());
    search
        .best
        .map(|(_, _, rows)| rows)
        .ok_or_else(|| Error::Dataset("no stratified assignment matches the split sizes".into()))
}

/// Assigns every row a split. Row order is preserved; which rows land in
/// which split is a seeded shuffle within each label.
pub fn split(manifest: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<DatasetManifest> {
    ratios.validate()?;
    let n = manifest.len();
    if n < 3 {
        return Err(Error::Dataset(format!("need at least 3 rows to split, got {n}")));
    }
    let r = ratios.as_array();
    let t = largest_remainder(n, &r);
    let targets = [t[0], t[1], t[2]];

    let by_label: Vec<Vec<usize>> = Label::ALL
        .iter()
        .map(|&l| (0..n).filter(|&i| manifest.rows[i].label == l).collect())
        .collect();
    let sizes: Vec<usize> = by_label.iter().map(Vec::len).collect();
    let counts = stratify(&sizes, r, targets)?;

    let mut out = manifest.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (members, row_counts) in by_label.iter().zip(&counts) {
        let mut order = members.clone();
        order.shuffle(&mut rng);
        let mut it = order.into_iter();
        for (s, &c) in Split::ALL.iter().zip(row_counts) {
            for i in it.by_ref().take(c) {
                out.rows[i].split = Some(*s);
            }
        }
    }
    out.seed = Some(seed);
    Ok(out)
}
