use serde::Serialize;

use super::{Emotion, Record, Split};

/// Published per-split label percentages (train, dev, test) for the full
/// 8000/1000/1000 corpus.
pub const REFERENCE_DISTRIBUTION: [(Emotion, [f64; 3]); 12] = [
    (Emotion::Optimism, [16.24, 16.20, 16.30]),
    (Emotion::Anxiety, [13.74, 13.30, 13.40]),
    (Emotion::Excitement, [13.65, 14.80, 14.60]),
    (Emotion::Disgust, [12.96, 12.10, 12.10]),
    (Emotion::Belief, [9.10, 9.10, 8.90]),
    (Emotion::Ambiguous, [8.72, 8.60, 8.70]),
    (Emotion::Amusement, [8.15, 8.30, 8.30]),
    (Emotion::Confusion, [6.11, 6.00, 6.00]),
    (Emotion::Anger, [3.86, 3.90, 3.80]),
    (Emotion::Panic, [3.00, 3.30, 3.10]),
    (Emotion::Surprise, [2.39, 2.40, 2.90]),
    (Emotion::Depression, [2.08, 2.00, 1.90]),
];

pub const REFERENCE_SIZES: [usize; 3] = [8000, 1000, 1000];
pub const REFERENCE_TOLERANCE: f64 = 0.01;

#[derive(Clone, Debug, Serialize)]
pub struct LabelShare {
    pub label: Emotion,
    pub count: usize,
    pub percent: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SplitStats {
    pub split: Split,
    pub count: usize,
    pub labels: Vec<LabelShare>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Flag {
    pub split: Split,
    pub label: Emotion,
    pub observed: f64,
    pub expected: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DistributionReport {
    pub total: usize,
    pub splits: Vec<SplitStats>,
    /// Whether split sizes matched the published corpus, enabling the checks.
    pub reference_checked: bool,
    pub flags: Vec<Flag>,
}

impl DistributionReport {
    pub fn percent(&self, split: Split, label: Emotion) -> f64 {
        self.splits[split as usize].labels[label.index()].percent
    }
}

pub fn validate_distribution(records: &[Record]) -> DistributionReport {
    let mut counts = [[0usize; 12]; 3];
    for r in records {
        counts[r.split as usize][r.emotion.index()] += 1;
    }
    let splits: Vec<SplitStats> = Split::ALL
        .iter()
        .map(|&split| {
            let row = counts[split as usize];
            let total: usize = row.iter().sum();
            SplitStats {
                split,
                count: total,
                labels: Emotion::ALL
                    .iter()
                    .map(|&label| {
                        let count = row[label.index()];
                        let percent = if total == 0 {
                            0.0
                        } else {
                            100.0 * count as f64 / total as f64
                        };
                        LabelShare {
                            label,
                            count,
                            percent,
                        }
                    })
                    .collect(),
            }
        })
        .collect();

    let reference_checked = splits
        .iter()
        .zip(REFERENCE_SIZES)
        .all(|(s, n)| s.count == n);
    let mut flags = Vec::new();
    if reference_checked {
        for (si, stats) in splits.iter().enumerate() {
            for &(label, expected) in &REFERENCE_DISTRIBUTION {
                let observed = stats.labels[label.index()].percent;
                if (observed - expected[si]).abs() > REFERENCE_TOLERANCE {
                    flags.push(Flag {
                        split: stats.split,
                        label,
                        observed,
                        expected: expected[si],
                    });
                }
            }
        }
    }
    DistributionReport {
        total: records.len(),
        splits,
        reference_checked,
        flags,
    }
}
