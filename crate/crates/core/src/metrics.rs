//! Classification metrics and report rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("length mismatch: {pred} predictions, {truth} labels")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("metrics need at least one sample")]
    Empty,
    #[error("label {label} is not below {num_classes}")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("AUC needs both classes present")]
    SingleClassInput,
    #[error("{0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

fn check(pred: &[usize], truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(MetricsError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// `K×K` counts, rows indexed by true class and columns by prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<Self> {
        check(pred, truth)?;
        let mut counts = vec![vec![0; num_classes]; num_classes];
        for (&p, &t) in pred.iter().zip(truth) {
            let label = p.max(t);
            if label >= num_classes {
                return Err(MetricsError::LabelOutOfRange { label, num_classes });
            }
            counts[t][p] += 1;
        }
        Ok(Self { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|k| self.counts[k][k]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        self.trace() as f64 / self.total() as f64
    }

    /// Per-class `2PR/(P+R)`, written as `2TP/(2TP+FP+FN)`; a class with no
    /// true positives scores 0.
    pub fn per_class_f1(&self) -> Vec<f64> {
        let k = self.counts.len();
        (0..k)
            .map(|c| {
                let tp = self.counts[c][c];
                let fn_: u64 = self.counts[c].iter().sum::<u64>() - tp;
                let fp: u64 = (0..k).map(|r| self.counts[r][c]).sum::<u64>() - tp;
                if tp == 0 {
                    0.0
                } else {
                    (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
                }
            })
            .collect()
    }

    /// Number of true samples per class.
    pub fn support(&self) -> Vec<u64> {
        self.counts.iter().map(|row| row.iter().sum()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Average {
    /// Unweighted mean over classes.
    #[default]
    Macro,
    /// Mean weighted by true-class support.
    Weighted,
}

pub fn f1_score(
    pred: &[usize],
    truth: &[usize],
    num_classes: usize,
    average: F1Average,
) -> Result<f64> {
    let cm = ConfusionMatrix::new(pred, truth, num_classes)?;
    let f1 = cm.per_class_f1();
    Ok(match average {
        F1Average::Macro => f1.iter().sum::<f64>() / num_classes as f64,
        F1Average::Weighted => {
            let support = cm.support();
            let total = cm.total() as f64;
            f1.iter()
                .zip(&support)
                .map(|(f, &s)| f * s as f64)
                .sum::<f64>()
                / total
        }
    })
}

pub fn macro_f1(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<f64> {
    f1_score(pred, truth, num_classes, F1Average::Macro)
}

fn binary_counts(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            pred: scores.len(),
            truth: labels.len(),
        });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricsError::SingleClassInput);
    }
    Ok((pos, neg))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Counted exactly as `2·wins + ties` over `2·P·N`.
pub fn auc_mann_whitney(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = binary_counts(scores, labels)?;
    let mut negs: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| !l)
        .map(|(&s, _)| s)
        .collect();
    negs.sort_by(f64::total_cmp);
    let mut doubled: u128 = 0;
    for (&s, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        let below = negs.partition_point(|&n| n < s);
        let not_above = negs.partition_point(|&n| n <= s);
        doubled += (2 * below + (not_above - below)) as u128;
    }
    Ok(doubled as f64 / (2 * pos * neg) as f64)
}

/// Trapezoidal area under the ROC curve traced by descending thresholds;
/// tied scores form one diagonal step.
pub fn auc_trapezoid(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = binary_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut area = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / pos as f64;
        let fpr = fp as f64 / neg as f64;
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    Ok(area)
}

pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    auc_mann_whitney(scores, labels)
}

/// Evaluation of one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub model: String,
    pub accuracy: f64,
    pub f1: f64,
    pub f1_average: F1Average,
    /// Present for binary tasks only.
    pub auc: Option<f64>,
    pub confusion: ConfusionMatrix,
}

impl MetricsReport {
    /// `scores` are positive-class probabilities, used for AUC when
    /// `num_classes == 2`.
    pub fn compute(
        dataset: impl Into<String>,
        model: impl Into<String>,
        pred: &[usize],
        truth: &[usize],
        num_classes: usize,
        scores: Option<&[f64]>,
        f1_average: F1Average,
    ) -> Result<Self> {
        let confusion = ConfusionMatrix::new(pred, truth, num_classes)?;
        let auc = match scores {
            Some(s) if num_classes == 2 => {
                let labels: Vec<bool> = truth.iter().map(|&t| t == 1).collect();
                match auc_roc(s, &labels) {
                    Ok(a) => Some(a),
                    Err(MetricsError::SingleClassInput) => None,
                    Err(e) => return Err(e),
                }
            }
            _ => None,
        };
        Ok(Self {
            dataset: dataset.into(),
            model: model.into(),
            accuracy: confusion.accuracy(),
            f1: f1_score(pred, truth, num_classes, f1_average)?,
            f1_average,
            auc,
            confusion,
        })
    }
}

pub const CSV_HEADER: [&str; 5] = ["dataset", "model", "acc", "f1", "auc"];

/// Reports as CSV with header `dataset,model,acc,f1,auc`; AUC is empty for
/// multi-class rows.
pub fn reports_to_csv(reports: &[MetricsReport]) -> Result<String> {
    let err = |e: csv::Error| MetricsError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(err)?;
    for r in reports {
        let auc = r.auc.map(|a| format!("{a:.6}")).unwrap_or_default();
        w.write_record([
            r.dataset.as_str(),
            r.model.as_str(),
            &format!("{:.6}", r.accuracy),
            &format!("{:.6}", r.f1),
            &auc,
        ])
        .map_err(err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| MetricsError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Row models of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TableModel {
    AutoencoderKNN,
    AutoencoderRF,
    FourCNN,
    GRUNetwork,
}

impl TableModel {
    pub const ALL: [TableModel; 4] = [
        Self::AutoencoderKNN,
        Self::AutoencoderRF,
        Self::FourCNN,
        Self::GRUNetwork,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AutoencoderKNN => "AutoencoderKNN",
            Self::AutoencoderRF => "AutoencoderRF",
            Self::FourCNN => "FourCNN",
            Self::GRUNetwork => "GRUNetwork",
        }
    }
}

impl std::fmt::Display for TableModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

const REFERENCE_DATASETS: [&str; 6] = ["ERN", "SMR", "BMNIST", "BMNIST_2", "SEED", "ThoughtViz"];

/// Published `(acc, f1)` per model, in `REFERENCE_DATASETS` order.
const REFERENCE: [[(f64, f64); 6]; 4] = [
    [
        (0.665, 0.515),
        (0.260, 0.210),
        (0.276, 0.056),
        (0.846, 0.785),
        (0.393, 0.381),
        (0.419, 0.424),
    ],
    [
        (0.630, 0.529),
        (0.243, 0.137),
        (0.275, 0.042),
        (0.857, 0.817),
        (0.365, 0.305),
        (0.651, 0.702),
    ],
    [
        (0.711, 0.420),
        (0.385, 0.383),
        (0.352, 0.152),
        (0.994, 0.993),
        (0.648, 0.644),
        (0.740, 0.740),
    ],
    [
        (0.714, 0.433),
        (0.333, 0.296),
        (0.338, 0.160),
        (0.993, 0.991),
        (0.744, 0.744),
        (0.774, 0.774),
    ],
];

/// Published `(acc, f1)` for a model on a dataset of exactly that name.
pub fn reference_score(model: TableModel, dataset: &str) -> Option<(f64, f64)> {
    let col = REFERENCE_DATASETS
        .iter()
        .position(|d| d.eq_ignore_ascii_case(dataset))?;
    let row = TableModel::ALL.iter().position(|&m| m == model)?;
    Some(REFERENCE[row][col])
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Score { acc: f64, f1: f64 },
    Error(String),
    Missing,
}

/// Models × datasets grid of accuracy and F1.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub datasets: Vec<String>,
    pub rows: Vec<(TableModel, Vec<Cell>)>,
}

impl ResultTable {
    pub fn new(datasets: Vec<String>) -> Self {
        Self {
            datasets,
            rows: Vec::new(),
        }
    }

    pub fn set(&mut self, model: TableModel, dataset: &str, cell: Cell) {
        let Some(col) = self.datasets.iter().position(|d| d == dataset) else {
            return;
        };
        let idx = match self.rows.iter().position(|(m, _)| *m == model) {
            Some(i) => i,
            None => {
                self.rows
                    .push((model, vec![Cell::Missing; self.datasets.len()]));
                self.rows.sort_by_key(|(m, _)| *m);
                self.rows
                    .iter()
                    .position(|(m, _)| *m == model)
                    .expect("row just inserted")
            }
        };
        self.rows[idx].1[col] = cell;
    }

    /// Fixed-width text: per dataset an `acc` and `f1` column followed by the
    /// published reference pair (`-` when the dataset name has none).
    pub fn render(&self) -> String {
        let mut header = vec!["model".to_string()];
        for d in &self.datasets {
            header.extend([
                format!("{d} acc"),
                format!("{d} f1"),
                format!("{d} ref acc"),
                format!("{d} ref f1"),
            ]);
        }
        let mut lines = vec![header];
        for (model, cells) in &self.rows {
            let mut line = vec![model.to_string()];
            for (d, cell) in self.datasets.iter().zip(cells) {
                match cell {
                    Cell::Score { acc, f1 } => {
                        line.extend([format!("{acc:.3}"), format!("{f1:.3}")])
                    }
                    Cell::Error(_) => line.extend(["ERROR".to_string(), "ERROR".to_string()]),
                    Cell::Missing => line.extend(["-".to_string(), "-".to_string()]),
                }
                match reference_score(*model, d) {
                    Some((a, f)) => line.extend([format!("{a:.3}"), format!("{f:.3}")]),
                    None => line.extend(["-".to_string(), "-".to_string()]),
                }
            }
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for l in &lines {
            let row: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:<w$}"))
                .collect();
            let _ = writeln!(out, "{}", row.join("  ").trim_end());
        }
        out
    }
}
