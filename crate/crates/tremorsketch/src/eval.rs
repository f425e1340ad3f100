//! Confusion matrices, classification metrics, and the hard-voting ensemble
//! over the spiral and wave branches.
//!
//! Class coding: 0 = healthy, 1 = parkinson. Metric reports carry per-class
//! precision/recall/F1 plus support-weighted averages; weighted recall is
//! computed so that it equals accuracy bit-for-bit (each term
//! `support * (diag/support)` is evaluated as `(support*diag)/support`).

use std::fmt;

use crate::nn::{Model, NnError};
use crate::train::Sample;

#[derive(Debug)]
pub enum EvalError {
    LengthMismatch { truths: usize, predictions: usize },
    LabelOutOfRange { label: usize, classes: usize },
    EmptyMatrix,
    EmptyVote,
    /// Voter confidence vectors disagree on the class count.
    InconsistentClassCount { expected: usize, got: usize },
    /// Paired evaluation needs equally sized, identically labeled test sets.
    MissingPairing { detail: String },
    Model(NnError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::LengthMismatch { truths, predictions } => {
                write!(f, "{truths} true labels vs {predictions} predictions")
            }
            EvalError::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            EvalError::EmptyMatrix => write!(f, "confusion matrix has no samples"),
            EvalError::EmptyVote => write!(f, "hard vote needs at least one voter"),
            EvalError::InconsistentClassCount { expected, got } => {
                write!(f, "confidence vector has {got} classes, expected {expected}")
            }
            EvalError::MissingPairing { detail } => write!(f, "missing pairing: {detail}"),
            EvalError::Model(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for EvalError {}

impl From<NnError> for EvalError {
    fn from(e: NnError) -> Self {
        EvalError::Model(e)
    }
}

/// K x K counts; rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Self {
        assert_eq!(counts.len(), classes * classes);
        ConfusionMatrix { classes, counts }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    pub fn row_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|j| self.get(k, j)).sum()
    }

    pub fn col_sum(&self, k: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, k)).sum()
    }

    /// Elementwise sum of two matrices over the same classes.
    pub fn merged(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        assert_eq!(self.classes, other.classes);
        ConfusionMatrix {
            classes: self.classes,
            counts: self
                .counts
                .iter()
                .zip(other.counts.iter())
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Binary PGM (P5) heatmap; brighter cells hold larger counts.
    pub fn to_pgm(&self, cell_px: usize) -> Vec<u8> {
        let side = self.classes * cell_px;
        let max = self.counts.iter().copied().max().unwrap_or(0).max(1);
        let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
        for y in 0..side {
            for x in 0..side {
                let value = self.get(y / cell_px, x / cell_px);
                out.push((value * 255 / max) as u8);
            }
        }
        out
    }
}

/// Count predictions into a K x K confusion matrix.
pub fn confusion_matrix(
    true_labels: &[usize],
    predicted_labels: &[usize],
    classes: usize,
) -> Result<ConfusionMatrix, EvalError> {
    if true_labels.len() != predicted_labels.len() {
        return Err(EvalError::LengthMismatch {
            truths: true_labels.len(),
            predictions: predicted_labels.len(),
        });
    }
    let mut counts = vec![0u64; classes * classes];
    for (&t, &p) in true_labels.iter().zip(predicted_labels.iter()) {
        if t >= classes {
            return Err(EvalError::LabelOutOfRange { label: t, classes });
        }
        if p >= classes {
            return Err(EvalError::LabelOutOfRange { label: p, classes });
        }
        counts[t * classes + p] += 1;
    }
    Ok(ConfusionMatrix { classes, counts })
}

/// Per-class precision/recall/F1 plus the class support (true count).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Full evaluation summary for one prediction set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub accuracy: f64,
}

/// Derive the metric report from a confusion matrix. Undefined ratios
/// (empty column or row) fall back to zero; weighted averages use the class
/// supports as weights.
pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<EvaluationReport, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let mut per_class = Vec::with_capacity(cm.classes);
    let mut weighted_precision_sum = 0.0;
    let mut weighted_recall_sum = 0.0;
    let mut weighted_f1_sum = 0.0;
    for k in 0..cm.classes {
        let diag = cm.get(k, k);
        let col = cm.col_sum(k);
        let row = cm.row_sum(k);
        let precision = if col == 0 { 0.0 } else { diag as f64 / col as f64 };
        let recall = if row == 0 { 0.0 } else { diag as f64 / row as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics {
            precision,
            recall,
            f1,
            support: row,
        });
        // (support*num)/den keeps support*(num/den) exact for the recall
        // terms, making weighted recall identical to accuracy.
        if col != 0 {
            weighted_precision_sum += (row * diag) as f64 / col as f64;
        }
        if row != 0 {
            weighted_recall_sum += (row * diag) as f64 / row as f64;
        }
        weighted_f1_sum += row as f64 * f1;
    }
    Ok(EvaluationReport {
        confusion: cm.clone(),
        per_class,
        weighted_precision: weighted_precision_sum / total as f64,
        weighted_recall: weighted_recall_sum / total as f64,
        weighted_f1: weighted_f1_sum / total as f64,
        accuracy: cm.trace() as f64 / total as f64,
    })
}

impl EvaluationReport {
    /// Human-readable summary, metrics rounded to four decimals.
    pub fn to_text(&self, title: &str) -> String {
        let mut out = format!("== {title} ==\n");
        out.push_str(&format!("accuracy: {:.4}\n", self.accuracy));
        for (k, m) in self.per_class.iter().enumerate() {
            out.push_str(&format!(
                "class {k}: precision {:.4}  recall {:.4}  f1 {:.4}  support {}\n",
                m.precision, m.recall, m.f1, m.support
            ));
        }
        out.push_str(&format!(
            "weighted: precision {:.4}  recall {:.4}  f1 {:.4}\n",
            self.weighted_precision, self.weighted_recall, self.weighted_f1
        ));
        out.push_str("confusion (rows=true, cols=predicted):\n");
        for i in 0..self.confusion.classes() {
            let row: Vec<String> = (0..self.confusion.classes())
                .map(|j| format!("{:>6}", self.confusion.get(i, j)))
                .collect();
            out.push_str(&format!("{}\n", row.join(" ")));
        }
        out
    }

    /// Flat machine-readable `key = value` lines at full precision.
    pub fn to_key_values(&self, prefix: &str) -> String {
        let mut out = String::new();
        out.push_str(&format!("{prefix}accuracy = {}\n", self.accuracy));
        for (k, m) in self.per_class.iter().enumerate() {
            out.push_str(&format!("{prefix}precision_{k} = {}\n", m.precision));
            out.push_str(&format!("{prefix}recall_{k} = {}\n", m.recall));
            out.push_str(&format!("{prefix}f1_{k} = {}\n", m.f1));
            out.push_str(&format!("{prefix}support_{k} = {}\n", m.support));
        }
        out.push_str(&format!(
            "{prefix}weighted_precision = {}\n",
            self.weighted_precision
        ));
        out.push_str(&format!("{prefix}weighted_recall = {}\n", self.weighted_recall));
        out.push_str(&format!("{prefix}weighted_f1 = {}\n", self.weighted_f1));
        for i in 0..self.confusion.classes() {
            for j in 0..self.confusion.classes() {
                out.push_str(&format!(
                    "{prefix}confusion_{i}_{j} = {}\n",
                    self.confusion.get(i, j)
                ));
            }
        }
        out
    }
}

/// Round a ratio to a percentage with the given number of decimals.
pub fn percent(value: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (value * 100.0 * scale).round() / scale
}

/// Majority vote over per-voter predicted labels. Ties are broken by the
/// largest summed confidence for the tied label across all voters, then by
/// the lowest label index.
pub fn hard_vote(predictions: &[usize], confidences: &[Vec<f64>]) -> Result<usize, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::EmptyVote);
    }
    if predictions.len() != confidences.len() {
        return Err(EvalError::LengthMismatch {
            truths: predictions.len(),
            predictions: confidences.len(),
        });
    }
    let classes = confidences[0].len();
    for c in confidences {
        if c.len() != classes {
            return Err(EvalError::InconsistentClassCount {
                expected: classes,
                got: c.len(),
            });
        }
    }
    for &p in predictions {
        if p >= classes {
            return Err(EvalError::LabelOutOfRange { label: p, classes });
        }
    }
    let mut votes = vec![0usize; classes];
    for &p in predictions {
        votes[p] += 1;
    }
    let top = *votes.iter().max().unwrap();
    let mut winner = None;
    let mut winner_confidence = f64::NEG_INFINITY;
    for (label, &count) in votes.iter().enumerate() {
        if count != top {
            continue;
        }
        let summed: f64 = confidences.iter().map(|c| c[label]).sum();
        if summed > winner_confidence {
            winner_confidence = summed;
            winner = Some(label);
        }
    }
    Ok(winner.expect("at least one label reached the top count"))
}

/// Predictions of one branch over an ordered sample set.
#[derive(Clone, Debug)]
pub struct BranchPredictions {
    pub labels: Vec<usize>,
    pub confidences: Vec<Vec<f64>>,
}

/// Run a model over a sample list, collecting labels and softmax outputs.
pub fn predict_set(model: &Model<f32>, samples: &[Sample]) -> Result<BranchPredictions, EvalError> {
    let mut labels = Vec::with_capacity(samples.len());
    let mut confidences = Vec::with_capacity(samples.len());
    for sample in samples {
        let (label, probs) = model.predict(&sample.image)?;
        labels.push(label);
        confidences.push(probs);
    }
    Ok(BranchPredictions {
        labels,
        confidences,
    })
}

/// One subject's paired test images.
#[derive(Clone, Debug)]
pub struct PairedSample {
    pub spiral: Sample,
    pub wave: Sample,
    pub label: usize,
}

/// Reports for the combined decision plus each standalone branch.
#[derive(Clone, Debug)]
pub struct EnsembleReport {
    pub ensemble: EvaluationReport,
    pub spiral: EvaluationReport,
    pub wave: EvaluationReport,
}

/// Paired-mode ensemble: each branch classifies its own modality per subject
/// and a two-voter hard vote combines them.
pub fn ensemble_evaluate(
    spiral_model: &Model<f32>,
    wave_model: &Model<f32>,
    pairs: &[PairedSample],
) -> Result<EnsembleReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::MissingPairing {
            detail: "paired test set is empty".into(),
        });
    }
    let spiral_samples: Vec<Sample> = pairs.iter().map(|p| p.spiral.clone()).collect();
    let wave_samples: Vec<Sample> = pairs.iter().map(|p| p.wave.clone()).collect();
    let labels: Vec<usize> = pairs.iter().map(|p| p.label).collect();
    let spiral_preds = predict_set(spiral_model, &spiral_samples)?;
    let wave_preds = predict_set(wave_model, &wave_samples)?;
    vote_and_report(&spiral_preds, &wave_preds, &labels, &labels)
}

/// Combine precomputed branch predictions by hard voting (paired mode).
pub fn vote_and_report(
    spiral_preds: &BranchPredictions,
    wave_preds: &BranchPredictions,
    spiral_labels: &[usize],
    wave_labels: &[usize],
) -> Result<EnsembleReport, EvalError> {
    if spiral_labels != wave_labels || spiral_preds.labels.len() != wave_preds.labels.len() {
        return Err(EvalError::MissingPairing {
            detail: format!(
                "spiral has {} samples, wave has {}",
                spiral_preds.labels.len(),
                wave_preds.labels.len()
            ),
        });
    }
    let classes = spiral_labels.iter().chain(wave_labels).max().map_or(2, |&m| (m + 1).max(2));
    let mut combined = Vec::with_capacity(spiral_labels.len());
    for i in 0..spiral_labels.len() {
        let vote = hard_vote(
            &[spiral_preds.labels[i], wave_preds.labels[i]],
            &[
                spiral_preds.confidences[i].clone(),
                wave_preds.confidences[i].clone(),
            ],
        )?;
        combined.push(vote);
    }
    Ok(EnsembleReport {
        ensemble: classification_metrics(&confusion_matrix(spiral_labels, &combined, classes)?)?,
        spiral: classification_metrics(&confusion_matrix(
            spiral_labels,
            &spiral_preds.labels,
            classes,
        )?)?,
        wave: classification_metrics(&confusion_matrix(wave_labels, &wave_preds.labels, classes)?)?,
    })
}

/// Pooled-mode ensemble: both branches' predictions are evaluated as one
/// concatenated sample set, so per-class supports are the sums of the two
/// branch supports.
pub fn pooled_report(
    spiral_preds: &BranchPredictions,
    wave_preds: &BranchPredictions,
    spiral_labels: &[usize],
    wave_labels: &[usize],
) -> Result<EnsembleReport, EvalError> {
    if spiral_preds.labels.len() != spiral_labels.len()
        || wave_preds.labels.len() != wave_labels.len()
    {
        return Err(EvalError::LengthMismatch {
            truths: spiral_labels.len() + wave_labels.len(),
            predictions: spiral_preds.labels.len() + wave_preds.labels.len(),
        });
    }
    let classes = spiral_labels
        .iter()
        .chain(wave_labels)
        .max()
        .map_or(2, |&m| (m + 1).max(2));
    let mut pooled_true = spiral_labels.to_vec();
    pooled_true.extend_from_slice(wave_labels);
    let mut pooled_pred = spiral_preds.labels.clone();
    pooled_pred.extend_from_slice(&wave_preds.labels);
    Ok(EnsembleReport {
        ensemble: classification_metrics(&confusion_matrix(&pooled_true, &pooled_pred, classes)?)?,
        spiral: classification_metrics(&confusion_matrix(
            spiral_labels,
            &spiral_preds.labels,
            classes,
        )?)?,
        wave: classification_metrics(&confusion_matrix(wave_labels, &wave_preds.labels, classes)?)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Build true/predicted label lists that realize a 2x2 confusion matrix.
    fn replay(matrix: [[u64; 2]; 2]) -> (Vec<usize>, Vec<usize>) {
        let mut truths = Vec::new();
        let mut preds = Vec::new();
        for (t, row) in matrix.iter().enumerate() {
            for (p, &count) in row.iter().enumerate() {
                for _ in 0..count {
                    truths.push(t);
                    preds.push(p);
                }
            }
        }
        (truths, preds)
    }

    #[test]
    fn perfect_predictions_fill_the_diagonal() {
        let cm = confusion_matrix(&[0, 1, 0, 1], &[0, 1, 0, 1], 2).unwrap();
        assert_eq!(cm.get(0, 0), 2);
        assert_eq!(cm.get(1, 1), 2);
        assert_eq!(cm.get(0, 1), 0);
        assert_eq!(cm.get(1, 0), 0);
    }

    #[test]
    fn reconstructed_spiral_counts() {
        let (truths, preds) = replay([[14, 1], [2, 13]]);
        let cm = confusion_matrix(&truths, &preds, 2).unwrap();
        assert_eq!(cm.get(0, 0), 14);
        assert_eq!(cm.get(0, 1), 1);
        assert_eq!(cm.get(1, 0), 2);
        assert_eq!(cm.get(1, 1), 13);
        assert_eq!(cm.total(), 30);
    }

    #[test]
    fn empty_input_gives_zero_matrix() {
        let cm = confusion_matrix(&[], &[], 2).unwrap();
        assert_eq!(cm.total(), 0);
        assert!(matches!(
            classification_metrics(&cm).unwrap_err(),
            EvalError::EmptyMatrix
        ));
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(matches!(
            confusion_matrix(&[0, 1], &[0], 2).unwrap_err(),
            EvalError::LengthMismatch { .. }
        ));
    }

    #[test]
    fn out_of_range_label_rejected() {
        assert!(matches!(
            confusion_matrix(&[0, 2], &[0, 1], 2).unwrap_err(),
            EvalError::LabelOutOfRange { label: 2, .. }
        ));
    }

    #[test]
    fn spiral_branch_metrics_match_hand_arithmetic() {
        let cm = ConfusionMatrix::from_counts(2, vec![14, 1, 2, 13]);
        let report = classification_metrics(&cm).unwrap();
        assert!((report.accuracy - 0.9).abs() < 1e-12);
        assert!((report.per_class[0].precision - 14.0 / 16.0).abs() < 1e-12);
        assert!((report.per_class[1].precision - 13.0 / 14.0).abs() < 1e-12);
        assert!((report.per_class[0].recall - 14.0 / 15.0).abs() < 1e-12);
        assert!((report.per_class[1].recall - 13.0 / 15.0).abs() < 1e-12);
        assert!((report.per_class[0].f1 - 0.9032258064516129).abs() < 1e-12);
        assert!((report.per_class[1].f1 - 0.896551724137931).abs() < 1e-12);
        // Rounded to whole percent: accuracy 90, precision 88/93,
        // recall 93/87, F1 90/90.
        assert_eq!(percent(report.accuracy, 0), 90.0);
        assert_eq!(percent(report.per_class[0].precision, 0), 88.0);
        assert_eq!(percent(report.per_class[1].precision, 0), 93.0);
        assert_eq!(percent(report.per_class[0].recall, 0), 93.0);
        assert_eq!(percent(report.per_class[1].recall, 0), 87.0);
        assert_eq!(percent(report.per_class[0].f1, 0), 90.0);
        assert_eq!(percent(report.per_class[1].f1, 0), 90.0);
        assert_eq!(percent(report.weighted_precision, 0), 90.0);
        assert_eq!(percent(report.weighted_recall, 0), 90.0);
        assert_eq!(percent(report.weighted_f1, 0), 90.0);
    }

    #[test]
    fn wave_branch_metrics_match_hand_arithmetic() {
        let cm = ConfusionMatrix::from_counts(2, vec![15, 0, 1, 14]);
        let report = classification_metrics(&cm).unwrap();
        assert!((report.accuracy - 29.0 / 30.0).abs() < 1e-12);
        assert!((report.per_class[0].precision - 0.9375).abs() < 1e-12);
        assert_eq!(report.per_class[1].precision, 1.0);
        assert_eq!(report.per_class[0].recall, 1.0);
        assert!((report.per_class[1].recall - 14.0 / 15.0).abs() < 1e-12);
        assert_eq!(percent(report.accuracy, 2), 96.67);
        assert_eq!(percent(report.per_class[0].precision, 0), 94.0);
        assert_eq!(percent(report.per_class[1].precision, 0), 100.0);
        assert_eq!(percent(report.per_class[0].recall, 0), 100.0);
        assert_eq!(percent(report.per_class[1].recall, 0), 93.0);
        assert_eq!(percent(report.per_class[0].f1, 0), 97.0);
        assert_eq!(percent(report.per_class[1].f1, 0), 97.0);
    }

    #[test]
    fn merged_branch_metrics_match_hand_arithmetic() {
        let cm = ConfusionMatrix::from_counts(2, vec![29, 1, 3, 27]);
        let report = classification_metrics(&cm).unwrap();
        assert!((report.accuracy - 56.0 / 60.0).abs() < 1e-12);
        assert!((report.per_class[0].precision - 29.0 / 32.0).abs() < 1e-12);
        assert!((report.per_class[1].precision - 27.0 / 28.0).abs() < 1e-12);
        assert!((report.per_class[0].recall - 29.0 / 30.0).abs() < 1e-12);
        assert!((report.per_class[1].recall - 0.9).abs() < 1e-12);
        assert_eq!(percent(report.accuracy, 1), 93.3);
        assert_eq!(percent(report.per_class[0].precision, 0), 91.0);
        assert_eq!(percent(report.per_class[1].precision, 0), 96.0);
        assert_eq!(percent(report.per_class[0].recall, 0), 97.0);
        assert_eq!(percent(report.per_class[1].recall, 0), 90.0);
    }

    #[test]
    fn metrics_are_order_independent() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let (truths, preds) = replay([[14, 1], [2, 13]]);
        let base = classification_metrics(&confusion_matrix(&truths, &preds, 2).unwrap()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let mut order: Vec<usize> = (0..truths.len()).collect();
        for _ in 0..10 {
            order.shuffle(&mut rng);
            let t: Vec<usize> = order.iter().map(|&i| truths[i]).collect();
            let p: Vec<usize> = order.iter().map(|&i| preds[i]).collect();
            let report = classification_metrics(&confusion_matrix(&t, &p, 2).unwrap()).unwrap();
            assert_eq!(report, base);
        }
    }

    #[test]
    fn accuracy_equals_weighted_recall_exactly() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let counts: Vec<u64> = (0..9).map(|_| rng.gen_range(0..50)).collect();
            let cm = ConfusionMatrix::from_counts(3, counts);
            if cm.total() == 0 {
                continue;
            }
            let report = classification_metrics(&cm).unwrap();
            assert_eq!(report.accuracy.to_bits(), report.weighted_recall.to_bits());
        }
    }

    #[test]
    fn unanimous_votes_return_the_unanimous_label() {
        // Exhaustive over class counts K <= 4 and voter counts <= 4.
        for classes in 2..=4usize {
            for voters in 1..=4usize {
                for label in 0..classes {
                    let predictions = vec![label; voters];
                    let mut confidence = vec![0.1; classes];
                    confidence[label] = 0.9;
                    let confidences = vec![confidence; voters];
                    assert_eq!(hard_vote(&predictions, &confidences).unwrap(), label);
                }
            }
        }
    }

    #[test]
    fn majority_beats_minority() {
        let confidences = vec![vec![0.9, 0.1], vec![0.8, 0.2], vec![0.1, 0.9]];
        assert_eq!(hard_vote(&[0, 0, 1], &confidences).unwrap(), 0);
    }

    #[test]
    fn two_voter_tie_follows_summed_confidence() {
        let confidences = vec![vec![0.6, 0.4], vec![0.1, 0.9]];
        assert_eq!(hard_vote(&[0, 1], &confidences).unwrap(), 1);
        let confidences = vec![vec![0.95, 0.05], vec![0.4, 0.6]];
        assert_eq!(hard_vote(&[0, 1], &confidences).unwrap(), 0);
    }

    #[test]
    fn residual_tie_takes_lowest_label() {
        let confidences = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        assert_eq!(hard_vote(&[0, 1], &confidences).unwrap(), 0);
    }

    #[test]
    fn empty_vote_rejected() {
        assert!(matches!(
            hard_vote(&[], &[]).unwrap_err(),
            EvalError::EmptyVote
        ));
    }

    /// Literal restatement of the voting rule, evaluated by brute force:
    /// used as an independent oracle across enumerated small cases.
    fn vote_oracle(predictions: &[usize], confidences: &[Vec<f64>], classes: usize) -> usize {
        let tally = |label: usize| predictions.iter().filter(|&&p| p == label).count();
        let max_count = (0..classes).map(tally).max().unwrap();
        let mut best_label = usize::MAX;
        let mut best_conf = f64::NEG_INFINITY;
        for label in 0..classes {
            if tally(label) != max_count {
                continue;
            }
            let conf: f64 = confidences.iter().map(|c| c[label]).sum();
            // Strictly-greater keeps the lowest label on exact confidence ties.
            if conf > best_conf {
                best_conf = conf;
                best_label = label;
            }
        }
        best_label
    }

    #[test]
    fn hard_vote_matches_exhaustive_oracle_for_small_cases() {
        let grid = [0.1, 0.5, 0.9];
        for voters in 1..=3usize {
            let mut label_cases = vec![vec![]];
            for _ in 0..voters {
                let mut next = Vec::new();
                for case in &label_cases {
                    for l in 0..2usize {
                        let mut c: Vec<usize> = case.clone();
                        c.push(l);
                        next.push(c);
                    }
                }
                label_cases = next;
            }
            for labels in &label_cases {
                let mut conf_cases = vec![vec![]];
                for _ in 0..voters {
                    let mut next = Vec::new();
                    for case in &conf_cases {
                        for &g in &grid {
                            let mut c: Vec<Vec<f64>> = case.clone();
                            c.push(vec![g, 1.0 - g]);
                            next.push(c);
                        }
                    }
                    conf_cases = next;
                }
                for confs in &conf_cases {
                    assert_eq!(
                        hard_vote(labels, confs).unwrap(),
                        vote_oracle(labels, confs, 2),
                        "labels {labels:?}, confidences {confs:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn scripted_branch_replay_reproduces_merged_figures() {
        // Replaying the two branch matrices and pooling them must land on the
        // merged 60-sample matrix and its 93.3% accuracy.
        let (spiral_true, spiral_pred) = replay([[14, 1], [2, 13]]);
        let (wave_true, wave_pred) = replay([[15, 0], [1, 14]]);
        let spiral = BranchPredictions {
            labels: spiral_pred,
            confidences: vec![vec![0.5, 0.5]; 30],
        };
        let wave = BranchPredictions {
            labels: wave_pred,
            confidences: vec![vec![0.5, 0.5]; 30],
        };
        let report = pooled_report(&spiral, &wave, &spiral_true, &wave_true).unwrap();
        assert_eq!(report.ensemble.confusion.get(0, 0), 29);
        assert_eq!(report.ensemble.confusion.get(0, 1), 1);
        assert_eq!(report.ensemble.confusion.get(1, 0), 3);
        assert_eq!(report.ensemble.confusion.get(1, 1), 27);
        assert_eq!(percent(report.ensemble.accuracy, 1), 93.3);
        assert_eq!(percent(report.spiral.accuracy, 0), 90.0);
        assert_eq!(percent(report.wave.accuracy, 2), 96.67);
    }

    #[test]
    fn scripted_disagreement_defers_to_the_confident_branch() {
        let n = 10;
        let truths: Vec<usize> = (0..n).map(|i| i % 2).collect();
        // Spiral is always right and always more confident; wave always wrong.
        let spiral = BranchPredictions {
            labels: truths.clone(),
            confidences: truths
                .iter()
                .map(|&t| {
                    let mut c = vec![0.05, 0.05];
                    c[t] = 0.95;
                    c
                })
                .collect(),
        };
        let wave = BranchPredictions {
            labels: truths.iter().map(|&t| 1 - t).collect(),
            confidences: truths
                .iter()
                .map(|&t| {
                    let mut c = vec![0.4, 0.4];
                    c[1 - t] = 0.6;
                    c
                })
                .collect(),
        };
        let report = vote_and_report(&spiral, &wave, &truths, &truths).unwrap();
        assert_eq!(report.ensemble.accuracy, 1.0);
        assert_eq!(report.ensemble.confusion.total(), n as u64);
    }

    #[test]
    fn ensemble_accuracy_bounded_below_for_disjoint_errors() {
        // Branches err on disjoint samples and the erring branch is always
        // the less confident one, so every vote resolves to the correct side.
        let truths = vec![0, 0, 1, 1, 0, 1];
        let mut spiral_labels = truths.clone();
        spiral_labels[0] = 1; // spiral errs on sample 0
        let mut wave_labels = truths.clone();
        wave_labels[3] = 0; // wave errs on sample 3
        let confident = |label: usize, p: f64| {
            let mut c = vec![1.0 - p, 1.0 - p];
            c[label] = p;
            c
        };
        let spiral = BranchPredictions {
            confidences: spiral_labels
                .iter()
                .enumerate()
                .map(|(i, &l)| confident(l, if i == 0 { 0.55 } else { 0.95 }))
                .collect(),
            labels: spiral_labels,
        };
        let wave = BranchPredictions {
            confidences: wave_labels
                .iter()
                .enumerate()
                .map(|(i, &l)| confident(l, if i == 3 { 0.55 } else { 0.95 }))
                .collect(),
            labels: wave_labels,
        };
        let report = vote_and_report(&spiral, &wave, &truths, &truths).unwrap();
        let spiral_acc = report.spiral.accuracy;
        let wave_acc = report.wave.accuracy;
        assert!(report.ensemble.accuracy >= spiral_acc.min(wave_acc));
        assert_eq!(report.ensemble.accuracy, 1.0);
    }

    #[test]
    fn pgm_heatmap_has_valid_header_and_size() {
        let cm = ConfusionMatrix::from_counts(2, vec![29, 1, 3, 27]);
        let pgm = cm.to_pgm(8);
        assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
        let header_len = b"P5\n16 16\n255\n".len();
        assert_eq!(pgm.len(), header_len + 16 * 16);
        assert_eq!(pgm[header_len], 255); // top-left cell holds the max count
    }

    #[test]
    fn report_text_and_key_values_render() {
        let cm = ConfusionMatrix::from_counts(2, vec![14, 1, 2, 13]);
        let report = classification_metrics(&cm).unwrap();
        let text = report.to_text("spiral");
        assert!(text.contains("accuracy: 0.9000"));
        assert!(text.contains("class 0: precision 0.8750"));
        let kv = report.to_key_values("spiral.");
        assert!(kv.contains("spiral.accuracy = 0.9"));
        assert!(kv.contains("spiral.confusion_0_0 = 14"));
    }
}
