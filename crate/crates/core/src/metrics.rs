//! Confusion matrices, accuracy, per-class precision/recall and
//! one-vs-all ROC analysis, plus CSV/JSON report export.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::NUM_CLASSES;
use crate::train::{history_csv, EpochRecord};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{preds} predictions but {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("no samples to evaluate")]
    Empty,
    #[error("class {0} is outside 0..{NUM_CLASSES}")]
    ClassOutOfRange(usize),
    #[error(
        "class {class} has {positives} positive and {negatives} negative samples; ROC needs both"
    )]
    ClassAbsent {
        class: usize,
        positives: usize,
        negatives: usize,
    },
    #[error("score vector {index} has {len} entries")]
    BadScores { index: usize, len: usize },
    #[error("failed to write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Rows are actual classes, columns predicted classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        Self { counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_CLASSES).map(|k| self.counts[k][k]).sum()
    }

    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn column_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    /// Ten lines of ten comma-separated counts.
    pub fn to_csv(&self) -> String {
        self.counts
            .iter()
            .map(|row| {
                let cells: Vec<String> = row.iter().map(u64::to_string).collect();
                cells.join(",") + "\n"
            })
            .collect()
    }
}

pub fn confusion(preds: &[usize], labels: &[usize]) -> Result<ConfusionMatrix, MetricsError> {
    if preds.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &a) in preds.iter().zip(labels) {
        if p >= NUM_CLASSES || a >= NUM_CLASSES {
            return Err(MetricsError::ClassOutOfRange(p.max(a)));
        }
        cm.counts[a][p] += 1;
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    match cm.total() {
        0 => Err(MetricsError::Empty),
        total => Ok(cm.trace() as f64 / total as f64),
    }
}

/// Precision is 0 for a class that was never predicted; recall is 0 for a
/// class with no samples.
pub fn precision_recall(cm: &ConfusionMatrix, class: usize) -> Result<(f64, f64), MetricsError> {
    if class >= NUM_CLASSES {
        return Err(MetricsError::ClassOutOfRange(class));
    }
    if cm.total() == 0 {
        return Err(MetricsError::Empty);
    }
    let tp = cm.counts[class][class] as f64;
    let ratio = |den: u64| if den == 0 { 0.0 } else { tp / den as f64 };
    Ok((ratio(cm.column_sum(class)), ratio(cm.row_sum(class))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` pairs from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (f, t) in &self.points {
            out.push_str(&format!("{f},{t}\n"));
        }
        out
    }
}

/// Binary ROC: thresholds sweep the distinct scores from high to low, each
/// sample with `score ≥ threshold` counted positive; area by trapezoids.
pub fn roc_curve(
    scores: &[f64],
    positive: &[bool],
    class: usize,
) -> Result<RocCurve, MetricsError> {
    if scores.len() != positive.len() {
        return Err(MetricsError::LengthMismatch {
            preds: scores.len(),
            labels: positive.len(),
        });
    }
    let p = positive.iter().filter(|&&b| b).count();
    let n = positive.len() - p;
    if p == 0 || n == 0 {
        return Err(MetricsError::ClassAbsent {
            class,
            positives: p,
            negatives: n,
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if positive[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n as f64, tp as f64 / p as f64));
    }
    let auc = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum();
    Ok(RocCurve { points, auc })
}

/// One-vs-all ROC for `class`, scoring each sample by its probability for
/// that class.
pub fn roc_one_vs_all<S: AsRef<[f64]>>(
    scores: &[S],
    labels: &[usize],
    class: usize,
) -> Result<RocCurve, MetricsError> {
    if class >= NUM_CLASSES {
        return Err(MetricsError::ClassOutOfRange(class));
    }
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            preds: scores.len(),
            labels: labels.len(),
        });
    }
    let mut column = Vec::with_capacity(scores.len());
    for (index, s) in scores.iter().enumerate() {
        let s = s.as_ref();
        if s.len() != NUM_CLASSES {
            return Err(MetricsError::BadScores {
                index,
                len: s.len(),
            });
        }
        column.push(s[class]);
    }
    let positive: Vec<bool> = labels.iter().map(|&l| l == class).collect();
    roc_curve(&column, &positive, class)
}

/// Machine-readable evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub accuracy: f64,
    pub samples: u64,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    /// `None` where the class had no positive or no negative samples.
    pub auc: Vec<Option<f64>>,
}

pub fn summarize(
    cm: &ConfusionMatrix,
    curves: &[Option<RocCurve>],
) -> Result<ReportSummary, MetricsError> {
    let mut precision = Vec::with_capacity(NUM_CLASSES);
    let mut recall = Vec::with_capacity(NUM_CLASSES);
    for k in 0..NUM_CLASSES {
        let (p, r) = precision_recall(cm, k)?;
        precision.push(p);
        recall.push(r);
    }
    Ok(ReportSummary {
        accuracy: accuracy(cm)?,
        samples: cm.total(),
        precision,
        recall,
        auc: (0..NUM_CLASSES)
            .map(|k| curves.get(k).and_then(|c| c.as_ref()).map(|c| c.auc))
            .collect(),
    })
}

/// Writes `confusion.csv`, `roc_class_<k>.csv` for every available curve,
/// `history.csv` when a history is given, and `summary.json` into `dir`.
pub fn export_report(
    dir: &Path,
    cm: &ConfusionMatrix,
    curves: &[Option<RocCurve>],
    history: Option<&[EpochRecord]>,
) -> Result<ReportSummary, MetricsError> {
    let write = |name: &str, contents: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|source| MetricsError::Io { path, source })
    };
    fs::create_dir_all(dir).map_err(|source| MetricsError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let summary = summarize(cm, curves)?;
    write("confusion.csv", cm.to_csv().as_bytes())?;
    for (k, curve) in curves.iter().enumerate() {
        if let Some(curve) = curve {
            write(&format!("roc_class_{k}.csv"), curve.to_csv().as_bytes())?;
        }
    }
    if let Some(history) = history {
        write("history.csv", history_csv(history).as_bytes())?;
    }
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write("summary.json", json.as_bytes())?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn confusion_examples() {
        let labels: Vec<usize> = (0..30).map(|i| i % 10).collect();
        let cm = confusion(&labels, &labels).unwrap();
        for a in 0..10 {
            for p in 0..10 {
                assert_eq!(cm.counts[a][p], if a == p { 3 } else { 0 });
            }
        }
        let threes = vec![3; 30];
        let cm = confusion(&threes, &labels).unwrap();
        assert_eq!(cm.column_sum(3), 30);
        assert_eq!(cm.total(), 30);
        assert!(matches!(
            confusion(&[1], &[1, 2]),
            Err(MetricsError::LengthMismatch { .. })
        ));
        assert!(matches!(confusion(&[], &[]), Err(MetricsError::Empty)));
        assert!(matches!(
            confusion(&[10], &[1]),
            Err(MetricsError::ClassOutOfRange(10))
        ));
    }

    #[test]
    fn accuracy_and_rates() {
        let labels: Vec<usize> = (0..20).map(|i| i % 10).collect();
        let cm = confusion(&labels, &labels).unwrap();
        assert_eq!(accuracy(&cm).unwrap(), 1.0);
        for k in 0..10 {
            assert_eq!(precision_recall(&cm, k).unwrap(), (1.0, 1.0));
        }
        assert!(matches!(
            accuracy(&ConfusionMatrix::default()),
            Err(MetricsError::Empty)
        ));

        let cm = confusion(&[0, 0, 1], &[0, 1, 1]).unwrap();
        assert_eq!(precision_recall(&cm, 0).unwrap(), (0.5, 1.0));
        assert_eq!(precision_recall(&cm, 1).unwrap(), (1.0, 0.5));
        assert_eq!(precision_recall(&cm, 5).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn roc_examples() {
        let curve = roc_curve(&[0.9, 0.8, 0.4, 0.3], &[true, false, true, false], 0).unwrap();
        assert_eq!(
            curve.points,
            vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]
        );
        assert_eq!(curve.auc, 0.75);

        let flat = roc_curve(&[0.4; 6], &[true, false, true, false, false, true], 0).unwrap();
        assert_eq!(flat.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(flat.auc, 0.5);

        let sep = roc_curve(&[0.9, 0.8, 0.2, 0.1], &[true, true, false, false], 0).unwrap();
        assert_eq!(sep.auc, 1.0);

        assert!(matches!(
            roc_curve(&[0.1, 0.2], &[true, true], 4),
            Err(MetricsError::ClassAbsent {
                class: 4,
                positives: 2,
                negatives: 0
            })
        ));
    }

    #[test]
    fn one_vs_all_uses_class_column() {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for class in 0..10 {
            let mut s = vec![0.01; 10];
            s[class] = 0.91;
            scores.push(s);
            labels.push(class);
        }
        for k in 0..10 {
            assert_eq!(roc_one_vs_all(&scores, &labels, k).unwrap().auc, 1.0);
        }
        assert!(matches!(
            roc_one_vs_all(&[vec![0.5; 3]], &[0], 0),
            Err(MetricsError::BadScores { index: 0, len: 3 })
        ));
    }

    #[test]
    fn export_is_deterministic() {
        let labels: Vec<usize> = (0..40).map(|i| i % 10).collect();
        let preds: Vec<usize> = labels.iter().map(|&l| if l == 3 { 4 } else { l }).collect();
        let scores: Vec<Vec<f64>> = preds
            .iter()
            .map(|&p| {
                (0..10)
                    .map(|k| if k == p { 0.9 } else { 0.1 / 9.0 })
                    .collect()
            })
            .collect();
        let cm = confusion(&preds, &labels).unwrap();
        let curves: Vec<_> = (0..10)
            .map(|k| roc_one_vs_all(&scores, &labels, k).ok())
            .collect();
        let history = [EpochRecord {
            epoch: 1,
            train_loss: 1.0,
            train_accuracy: 0.5,
            val_loss: 1.5,
            val_accuracy: 0.25,
        }];

        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let summary = export_report(a.path(), &cm, &curves, Some(&history)).unwrap();
        export_report(b.path(), &cm, &curves, Some(&history)).unwrap();
        for name in [
            "confusion.csv",
            "summary.json",
            "history.csv",
            "roc_class_3.csv",
        ] {
            assert_eq!(
                fs::read(a.path().join(name)).unwrap(),
                fs::read(b.path().join(name)).unwrap()
            );
        }
        let csv = fs::read_to_string(a.path().join("confusion.csv")).unwrap();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows.len(), 10);
        assert!(rows
            .iter()
            .all(|r| r.split(',').count() == 10 && r.split(',').all(|c| c.parse::<u64>().is_ok())));

        let parsed: ReportSummary =
            serde_json::from_slice(&fs::read(a.path().join("summary.json")).unwrap()).unwrap();
        assert_eq!(parsed.accuracy, accuracy(&cm).unwrap());
        assert_eq!(parsed, summary);
        assert_eq!(summary.recall[3], 0.0);
    }

    fn arb_pairs() -> impl Strategy<Value = Vec<(usize, usize)>> {
        proptest::collection::vec((0usize..10, 0usize..10), 1..200)
    }

    proptest! {
        #[test]
        fn accuracy_is_recall_weighted(pairs in arb_pairs()) {
            let (preds, labels): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let cm = confusion(&preds, &labels).unwrap();
            let acc = accuracy(&cm).unwrap();
            prop_assert!((0.0..=1.0).contains(&acc));
            let weighted: f64 = (0..10)
                .map(|k| precision_recall(&cm, k).unwrap().1 * cm.row_sum(k) as f64)
                .sum::<f64>() / cm.total() as f64;
            prop_assert!((acc - weighted).abs() < 1e-12);
        }

        #[test]
        fn confusion_ignores_order(pairs in arb_pairs(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let (p1, l1): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            let (p2, l2): (Vec<_>, Vec<_>) = shuffled.into_iter().unzip();
            prop_assert_eq!(confusion(&p1, &l1).unwrap(), confusion(&p2, &l2).unwrap());
        }

        #[test]
        fn roc_monotone_and_negation_complements(
            raw in proptest::collection::hash_set(0u32..1_000_000, 4..60),
            flags in proptest::collection::vec(any::<bool>(), 60),
        ) {
            let scores: Vec<f64> = raw.into_iter().map(|v| v as f64 / 1e6).collect();
            let positive: Vec<bool> = flags[..scores.len()].to_vec();
            prop_assume!(positive.iter().any(|&b| b) && positive.iter().any(|&b| !b));
            let curve = roc_curve(&scores, &positive, 0).unwrap();
            prop_assert_eq!(curve.points.first(), Some(&(0.0, 0.0)));
            prop_assert_eq!(curve.points.last(), Some(&(1.0, 1.0)));
            prop_assert!(curve.points.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1));
            prop_assert!((0.0..=1.0).contains(&curve.auc));
            let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
            let flipped = roc_curve(&negated, &positive, 0).unwrap();
            prop_assert!((curve.auc + flipped.auc - 1.0).abs() < 1e-12);
        }
    }
}
