//! Bag-level decisions and evaluation metrics.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Fraction of cancerous cells at or above which a patient is called cancerous.
pub const DEFAULT_PATIENT_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Diagnosis {
    Cancerous,
    NonCancerous,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientDecision {
    pub patient_id: u64,
    pub cancer_fraction: f64,
    pub decision: Diagnosis,
}

/// A patient is non-cancerous iff fewer than `threshold` of its cells are
/// cancerous; exactly at the threshold counts as cancerous.
pub fn patient_threshold(patient_id: u64, cancerous: &[bool], threshold: f64) -> Result<PatientDecision> {
    if cancerous.is_empty() {
        return Err(Error::EmptyBag(patient_id));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config("threshold", format!("{threshold} is outside [0, 1]")));
    }
    let hits = cancerous.iter().filter(|&&c| c).count();
    let cancer_fraction = hits as f64 / cancerous.len() as f64;
    let decision = if cancer_fraction < threshold {
        Diagnosis::NonCancerous
    } else {
        Diagnosis::Cancerous
    };
    Ok(PatientDecision {
        patient_id,
        cancer_fraction,
        decision,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteRule {
    /// Most votes; ties go to the higher mean probability, then the lower index.
    #[default]
    Count,
    /// Highest mean probability; ties go to the lower index.
    MeanProbability,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BagVote {
    pub patient_id: u64,
    pub vote_counts: Vec<usize>,
    pub mean_probs: Vec<f64>,
    pub predicted_class: usize,
}

/// Aggregates per-cell predicted classes and probability rows into one call.
pub fn majority_vote(
    patient_id: u64,
    classes: &[usize],
    probabilities: &[&[f64]],
    rule: VoteRule,
) -> Result<BagVote> {
    if classes.is_empty() {
        return Err(Error::EmptyBag(patient_id));
    }
    if classes.len() != probabilities.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predicted classes but {} probability rows",
            classes.len(),
            probabilities.len()
        )));
    }
    let k = probabilities[0].len();
    if probabilities.iter().any(|p| p.len() != k) {
        return Err(Error::LengthMismatch("probability rows differ in length".into()));
    }
    let mut vote_counts = vec![0usize; k];
    for &c in classes {
        if c >= k {
            return Err(Error::LabelOutOfRange { label: c, classes: k });
        }
        vote_counts[c] += 1;
    }
    let mut mean_probs = vec![0.0; k];
    for row in probabilities {
        for (m, p) in mean_probs.iter_mut().zip(*row) {
            *m += p;
        }
    }
    for m in &mut mean_probs {
        *m /= classes.len() as f64;
    }
    let mut best = 0;
    for c in 1..k {
        let better = match rule {
            VoteRule::Count => {
                vote_counts[c] > vote_counts[best]
                    || (vote_counts[c] == vote_counts[best] && mean_probs[c] > mean_probs[best])
            }
            VoteRule::MeanProbability => mean_probs[c] > mean_probs[best],
        };
        if better {
            best = c;
        }
    }
    Ok(BagVote {
        patient_id,
        vote_counts,
        mean_probs,
        predicted_class: best,
    })
}

/// `counts[i][j]`: samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn zeros(k: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

pub fn confusion_matrix(truth: &[usize], predicted: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != predicted.len() {
        return Err(Error::LengthMismatch(format!(
            "{} true labels, {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(k);
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= k || p >= k {
            return Err(Error::LabelOutOfRange {
                label: t.max(p),
                classes: k,
            });
        }
        cm.counts[t][p] += 1;
    }
    Ok(cm)
}

fn round6<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((v * 1e6).round() / 1e6)
}

fn round6_vec<S: Serializer>(v: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&((x * 1e6).round() / 1e6))?;
    }
    seq.end()
}

/// Confusion matrix with the rates derived from it. Rates whose denominator
/// is zero are reported as 0 and listed in the matching `undefined_*` field.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub samples: u64,
    #[serde(serialize_with = "round6")]
    pub accuracy: f64,
    #[serde(serialize_with = "round6_vec")]
    pub precision: Vec<f64>,
    #[serde(serialize_with = "round6_vec")]
    pub recall: Vec<f64>,
    #[serde(serialize_with = "round6_vec")]
    pub f1: Vec<f64>,
    #[serde(serialize_with = "round6")]
    pub macro_f1: f64,
    /// Classes never predicted.
    pub undefined_precision: Vec<usize>,
    /// Classes absent from the ground truth.
    pub undefined_recall: Vec<usize>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<EvalReport> {
    let k = cm.num_classes();
    if cm.counts.iter().any(|r| r.len() != k) {
        return Err(Error::Shape("confusion matrix is not square".into()));
    }
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let trace: u64 = (0..k).map(|i| cm.counts[i][i]).sum();
    let mut report = EvalReport {
        confusion: cm.clone(),
        samples: total,
        accuracy: trace as f64 / total as f64,
        precision: vec![0.0; k],
        recall: vec![0.0; k],
        f1: vec![0.0; k],
        macro_f1: 0.0,
        undefined_precision: Vec::new(),
        undefined_recall: Vec::new(),
    };
    for c in 0..k {
        let tp = cm.counts[c][c] as f64;
        let predicted: u64 = cm.counts.iter().map(|r| r[c]).sum();
        let actual: u64 = cm.counts[c].iter().sum();
        if predicted == 0 {
            report.undefined_precision.push(c);
        } else {
            report.precision[c] = tp / predicted as f64;
        }
        if actual == 0 {
            report.undefined_recall.push(c);
        } else {
            report.recall[c] = tp / actual as f64;
        }
        let (p, r) = (report.precision[c], report.recall[c]);
        report.f1[c] = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    report.macro_f1 = report.f1.iter().sum::<f64>() / k as f64;
    Ok(report)
}

/// Shorthand for `compute_metrics(confusion_matrix(..))`.
pub fn evaluate_labels(truth: &[usize], predicted: &[usize], k: usize) -> Result<EvalReport> {
    compute_metrics(&confusion_matrix(truth, predicted, k)?)
}
