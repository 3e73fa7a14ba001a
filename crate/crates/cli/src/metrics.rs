//! Classification metrics and the line-delimited step log.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use aqcf_core::training::StepMetrics;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    /// Macro averages over all classes.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub per_class: Vec<ClassScore>,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Metrics from predicted and true labels. A class with no predictions or no
/// examples scores 0 on the undefined ratios; its index is returned in the
/// warning list.
pub fn classification(pred: &[usize], truth: &[usize], num_classes: usize) -> (ClassMetrics, Vec<String>) {
    assert_eq!(pred.len(), truth.len());
    let mut cm = vec![vec![0usize; num_classes]; num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        cm[t][p] += 1;
    }
    let mut warnings = Vec::new();
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let tp = cm[c][c] as f64;
        let support: usize = cm[c].iter().sum();
        let predicted: usize = (0..num_classes).map(|t| cm[t][c]).sum();
        if support == 0 {
            warnings.push(format!("class {c} absent from the evaluation set; its metrics are reported as 0"));
        }
        let precision = if predicted > 0 { tp / predicted as f64 } else { 0.0 };
        let recall = if support > 0 { tp / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        per_class.push(ClassScore {
            precision,
            recall,
            f1,
            support,
        });
    }
    let k = num_classes as f64;
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    let m = ClassMetrics {
        accuracy: if pred.is_empty() { 0.0 } else { correct as f64 / pred.len() as f64 },
        precision: per_class.iter().map(|c| c.precision).sum::<f64>() / k,
        recall: per_class.iter().map(|c| c.recall).sum::<f64>() / k,
        f1: per_class.iter().map(|c| c.f1).sum::<f64>() / k,
        per_class,
        n: pred.len(),
    };
    (m, warnings)
}

/// Appends one JSON object per training step, flushed line by line.
pub struct MetricsLog {
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let f = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        Ok(Self { out: BufWriter::new(f) })
    }

    pub fn write(&mut self, m: &StepMetrics) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, m)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }
}

pub fn read_log(path: &Path) -> std::io::Result<Vec<StepMetrics>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(std::io::Error::other))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let (m, w) = classification(&[0, 1, 1, 0], &[0, 1, 1, 0], 2);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.f1, 1.0);
        assert!(w.is_empty());
    }

    #[test]
    fn constant_predictor_on_balanced_set() {
        let (m, _) = classification(&[0, 0, 0, 0], &[0, 1, 0, 1], 2);
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.recall, 0.5);
        assert_eq!(m.per_class[1].precision, 0.0);
    }

    #[test]
    fn absent_class_warns() {
        let (m, w) = classification(&[1, 1, 0], &[1, 1, 1], 2);
        assert_eq!(m.per_class[1].recall, 2.0 / 3.0);
        assert_eq!(m.per_class[0].recall, 0.0);
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("class 0"));
    }
}
