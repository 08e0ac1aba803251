use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[t][p]`: samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::invalid("confusion", "rows must form a square matrix"));
        }
        Ok(ConfusionMatrix {
            classes: k,
            counts: rows.concat(),
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for label in [truth, predicted] {
            if label >= self.classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: self.classes,
                });
            }
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    /// Element-wise sum, e.g. across split repetitions.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape(
                "confusion",
                format!("{} vs {} classes", self.classes, other.classes),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes].iter().sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, predicted)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    /// Relabels classes: class `i` becomes `perm[i]` on both axes.
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.classes];
        if perm.len() != self.classes || !perm.iter().all(|&p| p < self.classes && !std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("confusion", format!("{perm:?} is not a permutation")));
        }
        let mut out = ConfusionMatrix::new(self.classes);
        for t in 0..self.classes {
            for p in 0..self.classes {
                out.counts[perm[t] * self.classes + perm[p]] = self.get(t, p);
            }
        }
        Ok(out)
    }

    /// The largest off-diagonal cell, merging `(a, b)` and `(b, a)`.
    pub fn most_confused_pair(&self) -> Option<((usize, usize), u64)> {
        let mut best = None;
        for a in 0..self.classes {
            for b in a + 1..self.classes {
                let n = self.get(a, b) + self.get(b, a);
                if n > 0 && best.is_none_or(|(_, m)| n > m) {
                    best = Some(((a, b), n));
                }
            }
        }
        best
    }

    /// CSV with a header row of predicted class names and one row per true class.
    pub fn to_csv(&self, names: &[String]) -> String {
        let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| i.to_string());
        let mut out = String::from("true\\predicted");
        for p in 0..self.classes {
            out.push(',');
            out.push_str(&name(p));
        }
        out.push('\n');
        for t in 0..self.classes {
            out.push_str(&name(t));
            for p in 0..self.classes {
                out.push_str(&format!(",{}", self.get(t, p)));
            }
            out.push('\n');
        }
        out
    }
}

/// Builds a confusion matrix from paired labels.
pub fn confusion(truth: &[usize], predicted: &[usize], classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::shape(
            "confusion",
            format!("{} true labels, {} predictions", truth.len(), predicted.len()),
        ));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&t, &p) in truth.iter().zip(predicted) {
        cm.add(t, p)?;
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// The class was never predicted, so its precision is reported as 0.
    pub never_predicted: bool,
}

/// Support-weighted aggregate metrics plus the per-class breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Each per-class value is a count ratio `num / den` (F1 is `2tp / (row + col)`).
/// The support weight multiplies the numerator before dividing, so counts stay
/// exact integers and weighted recall reduces to `trace / total` bit for bit.
fn weighted(terms: impl Iterator<Item = (u64, u64, u64)>, total: u64) -> f64 {
    terms
        .map(|(w, num, den)| if den == 0 { 0.0 } else { (w * num) as f64 / den as f64 })
        .sum::<f64>()
        / total as f64
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Empty("confusion matrix"));
    }
    let k = cm.classes();
    let tp: Vec<u64> = (0..k).map(|c| cm.get(c, c)).collect();
    let row: Vec<u64> = (0..k).map(|c| cm.row_sum(c)).collect();
    let col: Vec<u64> = (0..k).map(|c| cm.col_sum(c)).collect();
    let per_class = (0..k)
        .map(|c| ClassMetrics {
            precision: ratio(tp[c], col[c]),
            recall: ratio(tp[c], row[c]),
            f1: ratio(2 * tp[c], row[c] + col[c]),
            support: row[c],
            never_predicted: col[c] == 0,
        })
        .collect();
    let terms = |num: &dyn Fn(usize) -> (u64, u64)| (0..k).map(|c| (row[c], num(c).0, num(c).1)).collect::<Vec<_>>();
    Ok(MetricsReport {
        accuracy: ratio(cm.trace(), total),
        precision: weighted(terms(&|c| (tp[c], col[c])).into_iter(), total),
        recall: weighted(terms(&|c| (tp[c], row[c])).into_iter(), total),
        f1: weighted(terms(&|c| (2 * tp[c], row[c] + col[c])).into_iter(), total),
        per_class,
    })
}
