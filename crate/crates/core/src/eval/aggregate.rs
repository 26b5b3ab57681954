use serde::{Deserialize, Serialize};

use crate::dataset::{Emotion, LabelMap};
use crate::error::Result;

use super::metrics::{f1_report_masked, F1Report, Prediction};

/// Pseudo-group for labels a map leaves out.
pub const EXCLUDED_GROUP: &str = "<excluded>";

/// What happens to records whose gold label the map excludes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExclusionPolicy {
    /// Kept under [`EXCLUDED_GROUP`], which is not part of the macro mean; the
    /// predictions made on them still count against the other groups.
    #[default]
    Holdout,
    /// Removed before scoring.
    Drop,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateReport {
    pub map: String,
    pub policy: ExclusionPolicy,
    pub dropped: usize,
    pub report: F1Report,
}

/// Group names in order of first appearance along the label order.
pub fn group_order(map: &LabelMap) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for e in Emotion::ALL {
        if let Some(g) = map.group(e) {
            if !out.iter().any(|x| x == g) {
                out.push(g.to_string());
            }
        }
    }
    out
}

pub fn aggregate(preds: &[Prediction], map: &LabelMap, policy: ExclusionPolicy) -> Result<AggregateReport> {
    let mut labels = group_order(map);
    let has_excluded = map.excluded().next().is_some();
    let groups = labels.len();
    if has_excluded {
        labels.push(EXCLUDED_GROUP.to_string());
    }
    let index = |e: Emotion| match map.group(e) {
        Some(g) => labels.iter().position(|l| l == g).expect("group listed"),
        None => groups,
    };
    let mut gold = Vec::with_capacity(preds.len());
    let mut pred = Vec::with_capacity(preds.len());
    let mut dropped = 0;
    for p in preds {
        if policy == ExclusionPolicy::Drop && map.is_excluded(p.gold) {
            dropped += 1;
            continue;
        }
        gold.push(index(p.gold));
        pred.push(index(p.pred));
    }
    let mut scored = vec![true; groups];
    if has_excluded {
        scored.push(false);
    }
    Ok(AggregateReport {
        map: map.name.clone(),
        policy,
        dropped,
        report: f1_report_masked(&labels, &gold, &pred, &scored)?,
    })
}
