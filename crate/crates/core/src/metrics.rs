//! Two-class confusion matrices, ROC curves and AUC.

use std::fmt;
use std::path::Path;

use crate::data::Label;
use crate::error::{Error, Result};

/// Rows are true labels, columns predicted labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 2]; 2],
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    /// Each row divided by its sum; empty rows stay zero.
    pub fn normalized(&self) -> [[f64; 2]; 2] {
        self.counts.map(|row| {
            let n: usize = row.iter().sum();
            if n == 0 {
                [0.0; 2]
            } else {
                row.map(|c| c as f64 / n as f64)
            }
        })
    }

    pub fn accuracy(&self) -> f64 {
        let t = self.total();
        if t == 0 {
            return 0.0;
        }
        (self.counts[0][0] + self.counts[1][1]) as f64 / t as f64
    }

    /// Fraction of true `class` samples predicted as `class`.
    pub fn recall(&self, class: usize) -> f64 {
        self.normalized()[class][class]
    }

    /// `kind,true_label,pred_NORMAL,pred_PNEUMONIA` with count rows followed
    /// by normalized rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,true_label,pred_NORMAL,pred_PNEUMONIA\n");
        for l in Label::ALL {
            let r = self.counts[l.index()];
            s += &format!("count,{l},{},{}\n", r[0], r[1]);
        }
        let n = self.normalized();
        for l in Label::ALL {
            let r = n[l.index()];
            s += &format!("normalized,{l},{:.6},{:.6}\n", r[0], r[1]);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::persistence::write_atomic(path, self.to_csv().as_bytes())
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = self.normalized();
        writeln!(f, "{:>10} {:>10} {:>10}", "", "NORMAL", "PNEUMONIA")?;
        for l in Label::ALL {
            let i = l.index();
            writeln!(
                f,
                "{:>10} {:>5} {:.2} {:>5} {:.2}",
                l.as_str(),
                self.counts[i][0],
                n[i][0],
                self.counts[i][1],
                n[i][1]
            )?;
        }
        Ok(())
    }
}

fn check_labels(labels: &[usize], what: &str) -> Result<()> {
    match labels.iter().find(|&&l| l > 1) {
        Some(l) => Err(Error::invalid(format!("{what} label {l} is not 0 or 1"))),
        None => Ok(()),
    }
}

pub fn confusion(truth: &[usize], predicted: &[usize]) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "{} true labels but {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("confusion matrix needs at least one sample"));
    }
    check_labels(truth, "true")?;
    check_labels(predicted, "predicted")?;
    let mut m = ConfusionMatrix::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        m.counts[t][p] += 1;
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// (FPR, TPR), from (0, 0) to (1, 1) with FPR nondecreasing.
    pub points: Vec<(f64, f64)>,
    /// Decision threshold of each point: predict positive when score ≥ threshold.
    /// The first is +∞.
    pub thresholds: Vec<f64>,
}

impl RocCurve {
    pub fn auc(&self) -> f64 {
        auc(self)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("fpr,tpr\n");
        for (x, y) in &self.points {
            s += &format!("{x:.6},{y:.6}\n");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::persistence::write_atomic(path, self.to_csv().as_bytes())
    }
}

fn check_scores(scores: &[f64], labels: &[usize]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("score {s} is not finite")));
    }
    check_labels(labels, "true")?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid(
            "ROC needs both classes present (TPR or FPR is undefined otherwise)",
        ));
    }
    Ok((pos, neg))
}

/// Sweeps the threshold down through every distinct score. Samples with tied
/// scores switch together, giving one point per distinct score.
pub fn roc(scores: &[f64], labels: &[usize]) -> Result<RocCurve> {
    let (pos, neg) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        thresholds.push(s);
    }
    Ok(RocCurve { points, thresholds })
}

/// Trapezoidal area under the (FPR, TPR) polyline.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Fraction of positive/negative pairs ordered correctly, ties counting half.
pub fn auc_pair_oracle(scores: &[f64], labels: &[usize]) -> Result<f64> {
    let (pos, neg) = check_scores(scores, labels)?;
    let mut credit = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            credit += match si.partial_cmp(&sj) {
                Some(std::cmp::Ordering::Greater) => 1.0,
                Some(std::cmp::Ordering::Equal) => 0.5,
                _ => 0.0,
            };
        }
    }
    Ok(credit / (pos * neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AucBand {
    Bad,
    Moderate,
    Excellent,
}

impl fmt::Display for AucBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AucBand::Bad => "bad",
            AucBand::Moderate => "moderate",
            AucBand::Excellent => "excellent",
        })
    }
}

/// Below 0.5 is bad, 0.9 and above is excellent.
pub fn classify_auc_band(auc: f64) -> AucBand {
    if auc < 0.5 {
        AucBand::Bad
    } else if auc >= 0.9 {
        AucBand::Excellent
    } else {
        AucBand::Moderate
    }
}
