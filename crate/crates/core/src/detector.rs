//! Shared detector output and the count-based flagging rule.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DetectorKind {
    IsolationForest,
    Dbscan,
    PcaReconstruction,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] = [
        DetectorKind::IsolationForest,
        DetectorKind::Dbscan,
        DetectorKind::PcaReconstruction,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            DetectorKind::IsolationForest => "IF",
            DetectorKind::Dbscan => "DBSCAN",
            DetectorKind::PcaReconstruction => "PCA",
        }
    }
}

/// Per-sample anomaly flags and scores from one detector. Scores are
/// oriented so that larger means more anomalous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorResult {
    pub detector: DetectorKind,
    pub row_ids: Vec<String>,
    pub scores: Vec<f64>,
    pub is_anomaly: Vec<bool>,
    pub params_used: String,
}

impl DetectorResult {
    pub fn n_flagged(&self) -> usize {
        self.is_anomaly.iter().filter(|&&f| f).count()
    }
}

/// ⌈fraction·n⌉, guarded against products such as 0.15·20 landing a few
/// ulps above an integer.
pub fn count_for_fraction(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let k = (raw - 1e-9 * raw.abs().max(1.0)).ceil();
    (k.max(0.0) as usize).min(n)
}

/// Flags the `k` largest scores. Equal scores are taken in row order.
pub fn flag_top_k(scores: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut flags = vec![false; scores.len()];
    for &i in order.iter().take(k) {
        flags[i] = true;
    }
    flags
}
