//! Verification metrics: AUC, threshold selection, precision/recall/F1, per-device-pair
//! accuracy, and report files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::PairSample;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scores contain a single class; both labels are required")]
    SingleClass,
    #[error("{0} scores for {1} labels")]
    LengthMismatch(usize, usize),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok((pos, neg))
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties counting one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// `(TPR, TNR)` when predicting 1 for `score >= threshold`.
pub fn rates(scores: &[f64], labels: &[u8], threshold: f64) -> (f64, f64) {
    let (mut tp, mut tn, mut p, mut n) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        if l == 1 {
            p += 1;
            tp += usize::from(s >= threshold);
        } else {
            n += 1;
            tn += usize::from(s < threshold);
        }
    }
    (ratio(tp, p), ratio(tn, n))
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Threshold maximizing TPR + TNR over the midpoints between consecutive distinct
/// scores; ties go to the larger threshold. With a single distinct score, that score.
pub fn choose_threshold(scores: &[f64], labels: &[u8]) -> Result<f64, EvalError> {
    check(scores, labels)?;
    let mut uniq = scores.to_vec();
    uniq.sort_by(f64::total_cmp);
    uniq.dedup();
    if uniq.len() == 1 {
        return Ok(uniq[0]);
    }
    let mut best = (f64::NEG_INFINITY, uniq[0]);
    for w in uniq.windows(2) {
        let t = (w[0] + w[1]) / 2.0;
        let (tpr, tnr) = rates(scores, labels, t);
        if tpr + tnr >= best.0 {
            best = (tpr + tnr, t);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(tp: usize, fp: usize, fneg: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fneg);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }

    fn mix(a: &Prf, wa: f64, b: &Prf, wb: f64) -> Self {
        let t = wa + wb;
        let f = |x: f64, y: f64| if t == 0.0 { 0.0 } else { (wa * x + wb * y) / t };
        Self {
            precision: f(a.precision, b.precision),
            recall: f(a.recall, b.recall),
            f1: f(a.f1, b.f1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrfReport {
    /// Class 0 (different devices) treated as the positive class.
    pub class0: Prf,
    pub class1: Prf,
    /// Unweighted mean of the two classes.
    #[serde(rename = "macro")]
    pub macro_avg: Prf,
    /// Support-weighted mean of the two classes.
    pub overall: Prf,
    pub accuracy: f64,
    /// `[#0, #1]`.
    pub support: [usize; 2],
}

/// Predicts 1 for `score >= threshold` and scores both classes.
pub fn prf(scores: &[f64], labels: &[u8], threshold: f64) -> PrfReport {
    let mut c = [[0usize; 2]; 2]; // c[truth][prediction]
    for (&s, &l) in scores.iter().zip(labels) {
        c[usize::from(l == 1)][usize::from(s >= threshold)] += 1;
    }
    let class1 = Prf::from_counts(c[1][1], c[0][1], c[1][0]);
    let class0 = Prf::from_counts(c[0][0], c[1][0], c[0][1]);
    let support = [c[0][0] + c[0][1], c[1][0] + c[1][1]];
    PrfReport {
        macro_avg: Prf::mix(&class0, 1.0, &class1, 1.0),
        overall: Prf::mix(&class0, support[0] as f64, &class1, support[1] as f64),
        accuracy: ratio(c[0][0] + c[1][1], scores.len()),
        class0,
        class1,
        support,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

/// Accuracy per unordered device pair; rows and columns are the sorted device IDs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub devices: Vec<String>,
    /// `cells[i][j]`, `None` where no pair was evaluated.
    pub cells: Vec<Vec<Option<MatrixCell>>>,
}

pub fn accuracy_matrix(pairs: &[PairSample], scores: &[f64], threshold: f64) -> AccuracyMatrix {
    let mut tally: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    for (p, &s) in pairs.iter().zip(scores) {
        let (a, b) = if p.a.device <= p.b.device {
            (&p.a.device, &p.b.device)
        } else {
            (&p.b.device, &p.a.device)
        };
        let e = tally.entry((a.clone(), b.clone())).or_default();
        e.0 += usize::from(u8::from(s >= threshold) == p.label);
        e.1 += 1;
    }
    let mut devices: Vec<String> = tally.keys().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
    devices.sort();
    devices.dedup();
    let idx: BTreeMap<&String, usize> = devices.iter().enumerate().map(|(i, d)| (d, i)).collect();
    let mut cells = vec![vec![None; devices.len()]; devices.len()];
    for ((a, b), (correct, total)) in &tally {
        let cell = Some(MatrixCell {
            accuracy: ratio(*correct, *total),
            correct: *correct,
            total: *total,
        });
        let (i, j) = (idx[a], idx[b]);
        cells[i][j] = cell;
        cells[j][i] = cell;
    }
    AccuracyMatrix { devices, cells }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub threshold: f64,
    /// Which split the threshold was selected on.
    pub threshold_source: String,
    pub n_pairs: usize,
    pub metrics: PrfReport,
    pub accuracy_matrix: AccuracyMatrix,
}

/// Full evaluation at a given threshold.
pub fn evaluate(
    pairs: &[PairSample],
    scores: &[f64],
    threshold: f64,
    threshold_source: &str,
) -> Result<MetricsReport, EvalError> {
    let labels: Vec<u8> = pairs.iter().map(|p| p.label).collect();
    Ok(MetricsReport {
        auc: auc(scores, &labels)?,
        threshold,
        threshold_source: threshold_source.to_string(),
        n_pairs: pairs.len(),
        metrics: prf(scores, &labels, threshold),
        accuracy_matrix: accuracy_matrix(pairs, scores, threshold),
    })
}

pub const REPORT_JSON: &str = "report.json";
pub const MATRIX_CSV: &str = "accuracy_matrix.csv";
pub const HEATMAP_DAT: &str = "accuracy_heatmap.dat";
pub const TABLE_CSV: &str = "metrics_table.csv";

pub const TABLE_COLUMNS: [&str; 10] = [
    "Class 0 Pre.",
    "Class 0 Rec.",
    "Class 0 F1",
    "Class 1 Pre.",
    "Class 1 Rec.",
    "Class 1 F1",
    "All Pre.",
    "All Rec.",
    "All F1",
    "AUC",
];

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

pub fn matrix_csv(m: &AccuracyMatrix) -> String {
    let mut s = String::from("device");
    for d in &m.devices {
        s.push(',');
        s.push_str(d);
    }
    s.push('\n');
    for (d, row) in m.devices.iter().zip(&m.cells) {
        s.push_str(d);
        for c in row {
            s.push(',');
            if let Some(c) = c {
                s.push_str(&f4(c.accuracy));
            }
        }
        s.push('\n');
    }
    s
}

/// Whitespace-separated `row col accuracy count` lines with a blank line after each row,
/// as gnuplot's `plot ... with image` and similar heatmap tools expect. Absent cells are
/// written as `NaN`.
pub fn heatmap_data(m: &AccuracyMatrix) -> String {
    let mut s = String::from("# row col accuracy count\n# devices:");
    for d in &m.devices {
        s.push(' ');
        s.push_str(d);
    }
    s.push('\n');
    for (i, row) in m.cells.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            match c {
                Some(c) => s.push_str(&format!("{i} {j} {:.6} {}\n", c.accuracy, c.total)),
                None => s.push_str(&format!("{i} {j} NaN 0\n")),
            }
        }
        s.push('\n');
    }
    s
}

pub fn table_csv(r: &MetricsReport) -> String {
    let m = &r.metrics;
    let values = [
        m.class0.precision,
        m.class0.recall,
        m.class0.f1,
        m.class1.precision,
        m.class1.recall,
        m.class1.f1,
        m.overall.precision,
        m.overall.recall,
        m.overall.f1,
        r.auc,
    ];
    format!(
        "{}\n{}\n",
        TABLE_COLUMNS.join(","),
        values.iter().map(|&v| f4(v)).collect::<Vec<_>>().join(",")
    )
}

/// Writes the JSON report (full precision), matrix CSV, heatmap data and the metrics
/// table CSV into `dir`. Returns the written paths.
pub fn emit_report(report: &MetricsReport, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| EvalError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let files = [
        (REPORT_JSON, serde_json::to_string_pretty(report).expect("report serializes") + "\n"),
        (MATRIX_CSV, matrix_csv(&report.accuracy_matrix)),
        (HEATMAP_DAT, heatmap_data(&report.accuracy_matrix)),
        (TABLE_CSV, table_csv(report)),
    ];
    let mut out = Vec::new();
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text).map_err(io(&path))?;
        out.push(path);
    }
    Ok(out)
}
