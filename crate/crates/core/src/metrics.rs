//! Evaluation metrics: accuracy, macro precision/recall/F1, one-vs-rest
//! macro AUC, and report rendering.
//!
//! AUC is the Mann-Whitney statistic computed from average ranks, which is
//! exactly the fraction of (positive, negative) pairs ranked concordantly
//! with ties counted as one half. Degenerate cells follow the 0/0 -> 0 rule.

use crate::error::{Error, Result};

/// Per-sample ground truth, predicted label, and class probabilities.
#[derive(Debug, Clone)]
pub struct PredictionSet {
    num_classes: usize,
    labels: Vec<usize>,
    predicted: Vec<usize>,
    /// Row-major `[n, K]`.
    probs: Vec<f32>,
}

impl PredictionSet {
    /// Build from labels and probability rows; the predicted label is the
    /// argmax (lowest index on ties). Rows must sum to 1 within 1e-5.
    pub fn new(num_classes: usize, labels: Vec<usize>, probs: Vec<f32>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Metric("need at least 2 classes".into()));
        }
        if labels.is_empty() {
            return Err(Error::Metric("empty prediction set".into()));
        }
        if probs.len() != labels.len() * num_classes {
            return Err(Error::Metric(format!(
                "{} probabilities for {} samples x {num_classes} classes",
                probs.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Metric(format!("label {bad} out of range")));
        }
        let mut predicted = Vec::with_capacity(labels.len());
        for row in probs.chunks_exact(num_classes) {
            let sum: f64 = row.iter().map(|&p| p as f64).sum();
            if (sum - 1.0).abs() > 1e-5 || row.iter().any(|&p| p < 0.0) {
                return Err(Error::Metric(format!("probability row sums to {sum}")));
            }
            let mut best = 0usize;
            for (k, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = k;
                }
            }
            predicted.push(best);
        }
        Ok(PredictionSet { num_classes, labels, predicted, probs })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn predicted(&self) -> &[usize] {
        &self.predicted
    }

    pub fn class_probs(&self, k: usize) -> impl Iterator<Item = f32> + '_ {
        self.probs.chunks_exact(self.num_classes).map(move |row| row[k])
    }
}

/// Entry (i, j): count of true class i predicted as class j.
pub fn confusion_matrix(preds: &PredictionSet) -> Vec<Vec<usize>> {
    let k = preds.num_classes();
    let mut cm = vec![vec![0usize; k]; k];
    for (&t, &p) in preds.labels().iter().zip(preds.predicted()) {
        cm[t][p] += 1;
    }
    cm
}

/// Macro precision, recall, F1 (unweighted class means, 0/0 -> 0) plus
/// accuracy, all in `[0,1]`.
pub fn prf1_macro(cm: &[Vec<usize>]) -> (f64, f64, f64, f64) {
    let k = cm.len();
    let total: usize = cm.iter().map(|row| row.iter().sum::<usize>()).sum();
    let trace: usize = (0..k).map(|i| cm[i][i]).sum();
    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };

    let (mut psum, mut rsum, mut fsum) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let tp = cm[c][c] as f64;
        let fp: f64 = (0..k).filter(|&i| i != c).map(|i| cm[i][c] as f64).sum();
        let fn_: f64 = (0..k).filter(|&j| j != c).map(|j| cm[c][j] as f64).sum();
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        psum += p;
        rsum += r;
        fsum += ratio(2.0 * p * r, p + r);
    }
    let kf = k as f64;
    (psum / kf, rsum / kf, fsum / kf, trace as f64 / total as f64)
}

/// One-vs-rest macro AUC via average ranks. Classes without both a positive
/// and a negative sample are excluded; their indices are returned alongside.
/// Errors if every class is excluded.
pub fn auc_ovr_macro(preds: &PredictionSet) -> Result<(f64, Vec<usize>)> {
    let k = preds.num_classes();
    let n = preds.len();
    let mut total = 0.0f64;
    let mut included = 0usize;
    let mut excluded = Vec::new();
    for c in 0..k {
        let pos_count = preds.labels().iter().filter(|&&l| l == c).count();
        if pos_count == 0 || pos_count == n {
            excluded.push(c);
            continue;
        }
        // Sort sample indices by the class-c score; average ranks over ties.
        let scores: Vec<f32> = preds.class_probs(c).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).expect("finite probabilities"));
        let mut rank_sum_pos = 0.0f64;
        let mut i = 0usize;
        while i < n {
            let mut j = i;
            while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
                j += 1;
            }
            // 1-based ranks i+1 ..= j+1 averaged over the tie group.
            let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
            for &s in &order[i..=j] {
                if preds.labels()[s] == c {
                    rank_sum_pos += avg_rank;
                }
            }
            i = j + 1;
        }
        let npos = pos_count as f64;
        let nneg = (n - pos_count) as f64;
        let u = rank_sum_pos - npos * (npos + 1.0) / 2.0;
        total += u / (npos * nneg);
        included += 1;
    }
    if included == 0 {
        return Err(Error::Metric("no class has both positives and negatives".into()));
    }
    Ok((total / included as f64, excluded))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Evaluation summary. Percent-scaled metrics except AUC, which stays in
/// `[0,1]`; field order follows the report column order F1, Accuracy, AUC,
/// Recall, Precision.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub f1: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub recall: f64,
    pub precision: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<usize>>,
    pub auc_excluded_classes: Vec<usize>,
}

impl EvalReport {
    pub fn from_predictions(preds: &PredictionSet) -> Result<Self> {
        let cm = confusion_matrix(preds);
        let (precision, recall, f1, accuracy) = prf1_macro(&cm);
        let (auc, auc_excluded_classes) = auc_ovr_macro(preds)?;
        let k = preds.num_classes();
        let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
        let per_class = (0..k)
            .map(|c| {
                let tp = cm[c][c] as f64;
                let fp: f64 = (0..k).filter(|&i| i != c).map(|i| cm[i][c] as f64).sum();
                let fn_: f64 = (0..k).filter(|&j| j != c).map(|j| cm[c][j] as f64).sum();
                let p = ratio(tp, tp + fp);
                let r = ratio(tp, tp + fn_);
                ClassMetrics {
                    precision: p,
                    recall: r,
                    f1: ratio(2.0 * p * r, p + r),
                    support: cm[c].iter().sum(),
                }
            })
            .collect();
        Ok(EvalReport {
            f1: f1 * 100.0,
            accuracy: accuracy * 100.0,
            auc,
            recall: recall * 100.0,
            precision: precision * 100.0,
            per_class,
            confusion: cm,
            auc_excluded_classes,
        })
    }

    /// The five headline values formatted as rendered: percents to two
    /// decimals, AUC to three.
    pub fn formatted_row(&self) -> [String; 5] {
        [
            format!("{:.2}", self.f1),
            format!("{:.2}", self.accuracy),
            format!("{:.3}", self.auc),
            format!("{:.2}", self.recall),
            format!("{:.2}", self.precision),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!("unknown report format '{other}'"))),
        }
    }
}

pub const CSV_HEADER: &str = "f1,accuracy,auc,recall,precision";

/// Render a report. Text and CSV columns follow the order F1-score,
/// Accuracy, AUC, Recall, Precision; JSON mirrors the same keys and numeric
/// values plus the per-class breakdown.
pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    let row = report.formatted_row();
    match format {
        ReportFormat::Text => {
            let mut out = String::new();
            out.push_str("F1-score Accuracy AUC Recall Precision\n");
            out.push_str(&row.join(" "));
            out.push('\n');
            out.push_str("\nper-class (precision recall f1 support):\n");
            for (c, m) in report.per_class.iter().enumerate() {
                out.push_str(&format!(
                    "  class {c}: {:.4} {:.4} {:.4} {}\n",
                    m.precision, m.recall, m.f1, m.support
                ));
            }
            out
        }
        ReportFormat::Csv => format!("{CSV_HEADER}\n{}\n", row.join(",")),
        ReportFormat::Json => {
            // Parse the formatted strings back so JSON and CSV carry
            // identical numeric values.
            let as_num = |s: &str| s.parse::<f64>().expect("formatted float");
            let obj = serde_json::json!({
                "f1": as_num(&row[0]),
                "accuracy": as_num(&row[1]),
                "auc": as_num(&row[2]),
                "recall": as_num(&row[3]),
                "precision": as_num(&row[4]),
                "per_class": report.per_class.iter().map(|m| serde_json::json!({
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "support": m.support,
                })).collect::<Vec<_>>(),
                "confusion_matrix": report.confusion,
                "auc_excluded_classes": report.auc_excluded_classes,
            });
            serde_json::to_string_pretty(&obj).expect("json encodes") + "\n"
        }
    }
}
