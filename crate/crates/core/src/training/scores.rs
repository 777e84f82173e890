//! Per-sample class scores, the `SKS1` score file and multi-stream fusion.
//!
//! `SKS1` layout, little-endian:
//!
//! ```text
//! "SKS1" | rows u32 | classes u32 | rows × (label u32 | classes × f32)
//! ```

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::{Error, Result};

pub const SCORES_MAGIC: &[u8; 4] = b"SKS1";

/// Class scores of one stream over an evaluation split.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub num_classes: usize,
    pub labels: Vec<usize>,
    /// Row-major `[rows][num_classes]`.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub top1: f64,
    pub mean_class_acc: f64,
    pub samples: usize,
    /// Classes present in the split (the denominator of `mean_class_acc`).
    pub classes_evaluated: usize,
}

impl ScoreTable {
    pub fn new(num_classes: usize, labels: Vec<usize>, scores: Vec<f64>) -> Result<Self> {
        if num_classes == 0 || scores.len() != labels.len() * num_classes {
            return Err(Error::Shape(format!(
                "{} scores for {} rows of {num_classes} classes",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Label {
                label: bad,
                num_classes,
            });
        }
        Ok(Self {
            num_classes,
            labels,
            scores,
        })
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.num_classes..][..self.num_classes]
    }

    /// Index of the largest score per row; ties go to the lowest class.
    pub fn predictions(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|i| {
                let r = self.row(i);
                let mut best = 0;
                for (j, &s) in r.iter().enumerate() {
                    if s > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn metrics(&self) -> Metrics {
        compute_metrics(&self.predictions(), &self.labels, self.num_classes)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.rows() * (4 + 4 * self.num_classes));
        out.extend_from_slice(SCORES_MAGIC);
        out.extend_from_slice(&(self.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_classes as u32).to_le_bytes());
        for i in 0..self.rows() {
            out.extend_from_slice(&(self.labels[i] as u32).to_le_bytes());
            for &s in self.row(i) {
                out.extend_from_slice(&(s as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != SCORES_MAGIC {
            return Err(Error::Format("not an SKS1 score file".into()));
        }
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (rows, classes) = (word(4), word(8));
        let expected = rows
            .checked_mul(4 + 4 * classes)
            .and_then(|n| n.checked_add(12))
            .ok_or_else(|| Error::Format("score file header overflows".into()))?;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "score file has {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let mut labels = Vec::with_capacity(rows);
        let mut scores = Vec::with_capacity(rows * classes);
        let mut o = 12;
        for _ in 0..rows {
            labels.push(word(o));
            o += 4;
            for _ in 0..classes {
                scores.push(f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64);
                o += 4;
            }
        }
        Self::new(classes, labels, scores).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    /// Rounds every score to single precision, as stored on disk.
    pub fn quantized(mut self) -> Self {
        self.scores.iter_mut().for_each(|s| *s = *s as f32 as f64);
        self
    }
}

/// Top-1 accuracy and the unweighted mean of per-class accuracies. Classes
/// with no samples are left out of the mean, with a warning.
pub fn compute_metrics(predictions: &[usize], labels: &[usize], num_classes: usize) -> Metrics {
    let mut hits = vec![0usize; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        counts[l] += 1;
        if p == l {
            hits[l] += 1;
        }
    }
    let correct: usize = hits.iter().sum();
    let present: Vec<usize> = (0..num_classes).filter(|&c| counts[c] > 0).collect();
    if present.len() < num_classes {
        log::warn!(
            "{} of {num_classes} classes have no samples; excluded from mean class accuracy",
            num_classes - present.len()
        );
    }
    let mean_class_acc = if present.is_empty() {
        0.0
    } else {
        present
            .iter()
            .map(|&c| hits[c] as f64 / counts[c] as f64)
            .sum::<f64>()
            / present.len() as f64
    };
    Metrics {
        top1: if labels.is_empty() {
            0.0
        } else {
            correct as f64 / labels.len() as f64
        },
        mean_class_acc,
        samples: labels.len(),
        classes_evaluated: present.len(),
    }
}

/// Default stream weights: `(1, 1)` for two streams, `(2, 2, 1, 1)` for
/// joint, bone, joint-motion and bone-motion; otherwise uniform.
pub fn default_fusion_weights(streams: usize) -> Vec<f64> {
    match streams {
        2 => vec![1.0, 1.0],
        4 => vec![2.0, 2.0, 1.0, 1.0],
        n => vec![1.0; n],
    }
}

/// Weighted sum of score tables over the same samples.
pub fn fuse_scores(tables: &[ScoreTable], weights: &[f64]) -> Result<(ScoreTable, Metrics)> {
    let first = tables
        .first()
        .ok_or_else(|| Error::Shape("nothing to fuse".into()))?;
    if weights.len() != tables.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} tables",
            weights.len(),
            tables.len()
        )));
    }
    for t in &tables[1..] {
        if t.num_classes != first.num_classes || t.rows() != first.rows() {
            return Err(Error::Shape(format!(
                "score tables differ: {}x{} vs {}x{}",
                t.rows(),
                t.num_classes,
                first.rows(),
                first.num_classes
            )));
        }
        if t.labels != first.labels {
            return Err(Error::Shape("score tables cover different samples".into()));
        }
    }
    let mut fused = vec![0.0; first.scores.len()];
    for (t, &w) in tables.iter().zip(weights) {
        for (f, &s) in fused.iter_mut().zip(&t.scores) {
            *f += w * s;
        }
    }
    let table = ScoreTable::new(first.num_classes, first.labels.clone(), fused)?;
    let metrics = table.metrics();
    Ok((table, metrics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_scores_are_perfect() {
        let labels = vec![0, 2, 1];
        let mut s = vec![0.0; 9];
        for (i, &l) in labels.iter().enumerate() {
            s[i * 3 + l] = 1.0;
        }
        let m = ScoreTable::new(3, labels, s).unwrap().metrics();
        assert_eq!(m.top1, 1.0);
        assert_eq!(m.mean_class_acc, 1.0);
    }

    #[test]
    fn imbalanced_arithmetic() {
        // class 0: 10 samples all right; class 1: 2 samples, one right
        let mut labels = vec![0; 10];
        labels.extend([1, 1]);
        let mut preds = vec![0; 10];
        preds.extend([1, 0]);
        let m = compute_metrics(&preds, &labels, 2);
        assert!((m.top1 - 11.0 / 12.0).abs() < 1e-15);
        assert!((m.mean_class_acc - 0.75).abs() < 1e-15);
    }

    #[test]
    fn absent_class_excluded() {
        let m = compute_metrics(&[0, 0], &[0, 0], 3);
        assert_eq!(m.classes_evaluated, 1);
        assert_eq!(m.mean_class_acc, 1.0);
    }

    #[test]
    fn sks1_round_trip_and_truncation() {
        let t = ScoreTable::new(2, vec![1, 0], vec![0.25, 0.75, 0.5, 0.125]).unwrap();
        let bytes = t.encode();
        assert_eq!(ScoreTable::decode(&bytes).unwrap(), t);
        assert!(matches!(
            ScoreTable::decode(&bytes[..bytes.len() - 1]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            ScoreTable::decode(b"SKL1xxxxxxxx"),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn mismatched_fusion_is_shape_error() {
        let a = ScoreTable::new(2, vec![0], vec![1.0, 0.0]).unwrap();
        let b = ScoreTable::new(3, vec![0], vec![1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            fuse_scores(&[a.clone(), b], &[1.0, 1.0]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            fuse_scores(&[a], &[1.0, 1.0]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn fusion_flips_argmax() {
        // brute-force oracle over three samples
        let a = ScoreTable::new(2, vec![0, 1, 1], vec![0.6, 0.4, 0.7, 0.3, 0.2, 0.8]).unwrap();
        let b = ScoreTable::new(2, vec![0, 1, 1], vec![0.3, 0.7, 0.1, 0.9, 0.4, 0.6]).unwrap();
        let (_, m) = fuse_scores(&[a, b], &[1.0, 1.0]).unwrap();
        // fused: (0.9,1.1)->1 wrong, (0.8,1.2)->1 right, (0.6,1.4)->1 right
        assert!((m.top1 - 2.0 / 3.0).abs() < 1e-15);
    }
}
