//! Isolation Forest: random axis-aligned partition trees grown on
//! subsamples, path-length normalization and contamination-based labels.
//!
//! Scores follow the canonical orientation `s = 2^(-E[h(x)] / c(ψ))`, so a
//! higher score means a more anomalous sample (scikit-learn reports the
//! negation). Labels only depend on the ranking.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{count_for_fraction, flag_top_k, DetectorKind, DetectorResult};
use crate::error::{Error, Result};
use crate::geodata::FeatureMatrix;

const EULER_MASCHERONI: f64 = 0.577_215_664_901_532_9;
const DEFAULT_MAX_SUBSAMPLE: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub contamination: f64,
    /// ψ; `None` means min(256, n).
    pub subsample: Option<usize>,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 200,
            contamination: 0.15,
            subsample: None,
            seed: 42,
        }
    }
}

impl ForestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::invalid("iforest", "n_trees must be >= 1"));
        }
        if !(self.contamination > 0.0 && self.contamination <= 0.5) {
            return Err(Error::invalid(
                "iforest",
                format!("contamination must be in (0, 0.5], got {}", self.contamination),
            ));
        }
        if matches!(self.subsample, Some(s) if s < 2) {
            return Err(Error::invalid("iforest", "subsample must be >= 2"));
        }
        Ok(())
    }
}

/// c(n): average path length of an unsuccessful search in a binary search
/// tree of n points.
pub fn expected_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = (n - 1) as f64;
            2.0 * (m.ln() + EULER_MASCHERONI) - 2.0 * m / n as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Internal {
        feature: usize,
        split: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
        depth: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    /// Arena; the root is node 0.
    pub nodes: Vec<Node>,
    pub height_limit: usize,
}

impl IsolationTree {
    fn grow(data: &FeatureMatrix, rows: Vec<usize>, height_limit: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut tree = IsolationTree {
            nodes: Vec::new(),
            height_limit,
        };
        tree.grow_node(data, rows, 0, rng);
        tree
    }

    fn grow_node(&mut self, data: &FeatureMatrix, rows: Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            size: rows.len(),
            depth,
        });
        if depth >= self.height_limit || rows.len() <= 1 {
            return id;
        }
        // features that still vary inside this node
        let spans: Vec<(usize, f64, f64)> = (0..data.n_cols())
            .filter_map(|j| {
                let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    let v = data.get(r, j);
                    (lo.min(v), hi.max(v))
                });
                (lo < hi).then_some((j, lo, hi))
            })
            .collect();
        if spans.is_empty() {
            return id;
        }
        let (feature, lo, hi) = spans[rng.random_range(0..spans.len())];
        let split = loop {
            let v = lo + rng.random::<f64>() * (hi - lo);
            if v > lo && v < hi {
                break v;
            }
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.into_iter().partition(|&r| data.get(r, feature) < split);
        let left = self.grow_node(data, left_rows, depth + 1, rng);
        let right = self.grow_node(data, right_rows, depth + 1, rng);
        self.nodes[id] = Node::Internal {
            feature,
            split,
            left,
            right,
        };
        id
    }

    /// Depth at which `x` lands, plus c(size) for a non-singleton leaf.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                Node::Internal {
                    feature,
                    split,
                    left,
                    right,
                } => id = if x[*feature] < *split { *left } else { *right },
                Node::Leaf { size, depth } => return *depth as f64 + expected_path_length(*size),
            }
        }
    }

    pub fn max_leaf_depth(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { depth, .. } => Some(*depth),
                Node::Internal { .. } => None,
            })
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<IsolationTree>,
    pub subsample_size: usize,
    pub columns: Vec<String>,
    pub warnings: Vec<String>,
}

/// Grows `cfg.n_trees` trees, each on a fresh subsample drawn without
/// replacement. Tree `t` draws from ChaCha stream `t` of the master seed,
/// so the forest is identical however the work is scheduled.
pub fn fit_forest(m: &FeatureMatrix, cfg: &ForestConfig) -> Result<Forest> {
    cfg.validate()?;
    let n = m.n_rows();
    if n < 2 {
        return Err(Error::invalid("iforest", format!("need at least 2 samples, got {n}")));
    }
    let mut warnings = Vec::new();
    let requested = cfg.subsample.unwrap_or(DEFAULT_MAX_SUBSAMPLE);
    let psi = if requested > n {
        if cfg.subsample.is_some() {
            let w = format!("subsample {requested} exceeds n = {n}; clamped to {n}");
            log::warn!("{w}");
            warnings.push(w);
        }
        n
    } else {
        requested
    };
    let height_limit = (psi as f64).log2().ceil() as usize;

    let trees = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(t as u64);
            let rows = sample(&mut rng, n, psi).into_vec();
            IsolationTree::grow(m, rows, height_limit, &mut rng)
        })
        .collect();

    Ok(Forest {
        trees,
        subsample_size: psi,
        columns: m.columns.clone(),
        warnings,
    })
}

/// Anomaly score in (0, 1) per row; higher is more anomalous.
pub fn score_samples(f: &Forest, m: &FeatureMatrix) -> Result<Vec<f64>> {
    if m.columns != f.columns {
        return Err(Error::invalid(
            "iforest",
            format!(
                "column mismatch: forest trained on {:?}, got {:?}",
                f.columns, m.columns
            ),
        ));
    }
    let norm = expected_path_length(f.subsample_size);
    let n_trees = f.trees.len() as f64;
    Ok(m.rows()
        .map(|x| {
            let mean_depth = f.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / n_trees;
            2f64.powf(-mean_depth / norm)
        })
        .collect())
}

/// Flags exactly ⌈contamination·n⌉ samples with the largest scores.
pub fn label_anomalies(scores: &[f64], contamination: f64) -> Vec<bool> {
    flag_top_k(scores, count_for_fraction(contamination, scores.len()))
}

pub fn detect(m: &FeatureMatrix, cfg: &ForestConfig) -> Result<(Forest, DetectorResult)> {
    let forest = fit_forest(m, cfg)?;
    let scores = score_samples(&forest, m)?;
    let is_anomaly = label_anomalies(&scores, cfg.contamination);
    let result = DetectorResult {
        detector: DetectorKind::IsolationForest,
        row_ids: m.row_ids.clone(),
        scores,
        is_anomaly,
        params_used: format!(
            "n_trees={} contamination={} subsample={} seed={}",
            cfg.n_trees, cfg.contamination, forest.subsample_size, cfg.seed
        ),
    };
    Ok((forest, result))
}
