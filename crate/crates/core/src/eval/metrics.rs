use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{emotion_names, Emotion, NUM_CLASSES};
use crate::error::{Error, Result};

/// One line of a prediction file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub gold: Emotion,
    pub pred: Emotion,
    #[serde(default)]
    pub logits: Vec<f64>,
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line).map_err(|e| Error::Schema {
            line: i + 1,
            field: "prediction".into(),
            msg: e.to_string(),
        })?;
        out.push(p);
    }
    Ok(out)
}

pub fn write_predictions<W: Write>(mut w: W, preds: &[Prediction]) -> Result<()> {
    for p in preds {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io("<predictions>", e))?;
    }
    Ok(())
}

/// Rows are gold labels, columns predictions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.labels.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassScore {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    pub in_macro: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct F1Report {
    pub n: u64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub classes: Vec<ClassScore>,
    pub confusion: ConfusionMatrix,
}

impl F1Report {
    pub fn class(&self, label: &str) -> Option<&ClassScore> {
        self.classes.iter().find(|c| c.label == label)
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<14}{:>10}{:>10}{:>10}{:>9}\n", "label", "precision", "recall", "f1", "support");
        for c in &self.classes {
            let mark = if c.in_macro || c.support == 0 { "" } else { " *" };
            s.push_str(&format!(
                "{:<14}{:>10.2}{:>10.2}{:>10.2}{:>9}{mark}\n",
                c.label, c.precision, c.recall, c.f1, c.support
            ));
        }
        s.push_str(&format!("accuracy {:.2}  macro-F1 {:.2}  n={}\n", self.accuracy, self.macro_f1, self.n));
        s
    }
}

/// Per-class scores on a 0-100 scale over label indices into `labels`.
pub fn f1_report(labels: &[String], gold: &[usize], pred: &[usize]) -> Result<F1Report> {
    f1_report_masked(labels, gold, pred, &vec![true; labels.len()])
}

/// As [`f1_report`]; classes with `scored[c] == false` are left out of the macro mean.
pub fn f1_report_masked(labels: &[String], gold: &[usize], pred: &[usize], scored: &[bool]) -> Result<F1Report> {
    if gold.len() != pred.len() {
        return Err(Error::dim("f1_report", &[gold.len()], &[pred.len()]));
    }
    if gold.is_empty() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    let c = labels.len();
    let mut counts = vec![vec![0u64; c]; c];
    for (&g, &p) in gold.iter().zip(pred) {
        if let Some(&bad) = [g, p].iter().find(|&&i| i >= c) {
            return Err(Error::LabelOutOfRange { index: bad, classes: c });
        }
        counts[g][p] += 1;
    }
    let confusion = ConfusionMatrix {
        labels: labels.to_vec(),
        counts,
    };
    let rows = confusion.row_sums();
    let cols = confusion.col_sums();
    let mut classes = Vec::with_capacity(c);
    let mut macro_sum = 0.0;
    let mut macro_n = 0usize;
    let mut correct = 0u64;
    for k in 0..c {
        let tp = confusion.counts[k][k];
        correct += tp;
        let precision = ratio(tp, cols[k]);
        let recall = ratio(tp, rows[k]);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let in_macro = scored[k] && rows[k] > 0;
        if in_macro {
            macro_sum += f1;
            macro_n += 1;
        }
        classes.push(ClassScore {
            label: labels[k].clone(),
            precision: 100.0 * precision,
            recall: 100.0 * recall,
            f1: 100.0 * f1,
            support: rows[k],
            in_macro,
        });
    }
    let n = gold.len() as u64;
    Ok(F1Report {
        n,
        accuracy: 100.0 * correct as f64 / n as f64,
        macro_f1: if macro_n == 0 { 0.0 } else { 100.0 * macro_sum / macro_n as f64 },
        classes,
        confusion,
    })
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// The 12-way report of a prediction file.
pub fn report_predictions(preds: &[Prediction]) -> Result<F1Report> {
    let gold: Vec<usize> = preds.iter().map(|p| p.gold.index()).collect();
    let pred: Vec<usize> = preds.iter().map(|p| p.pred.index()).collect();
    debug_assert_eq!(emotion_names().len(), NUM_CLASSES);
    f1_report(&emotion_names(), &gold, &pred)
}

/// Plot-ready CSV: `taxonomy,label,precision,recall,f1,support`.
pub fn write_f1_csv<W: Write>(w: W, reports: &[(&str, &F1Report)]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["taxonomy", "label", "precision", "recall", "f1", "support"])?;
    for (name, report) in reports {
        for c in &report.classes {
            out.write_record([
                name.to_string(),
                c.label.clone(),
                format!("{:.4}", c.precision),
                format!("{:.4}", c.recall),
                format!("{:.4}", c.f1),
                c.support.to_string(),
            ])?;
        }
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}
