//! DBSCAN over standardized metal space and the k-distance profile used to
//! pick its neighbourhood radius.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{DetectorKind, DetectorResult};
use crate::error::{Error, Result};
use crate::geodata::FeatureMatrix;

pub const NOISE: i64 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DbscanConfig {
    pub eps: f64,
    pub min_samples: usize,
}

impl Default for DbscanConfig {
    fn default() -> Self {
        DbscanConfig {
            eps: 1.5,
            min_samples: 5,
        }
    }
}

impl DbscanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::invalid("dbscan", format!("eps must be > 0, got {}", self.eps)));
        }
        if self.min_samples == 0 {
            return Err(Error::invalid("dbscan", "min_samples must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterLabels {
    /// −1 for noise, 0..n_clusters otherwise.
    pub labels: Vec<i64>,
    pub n_clusters: usize,
    pub core: Vec<bool>,
}

impl ClusterLabels {
    pub fn n_noise(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance from each row to its k-th nearest other row, sorted ascending.
fn kth_neighbor_distances(m: &FeatureMatrix, k: usize) -> Vec<f64> {
    let n = m.n_rows();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| euclidean(m.row(i), m.row(j)))
                .collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect()
}

/// Sorted distances to each sample's k-th nearest neighbour (self excluded).
pub fn k_distance_profile(m: &FeatureMatrix, k: usize) -> Result<Vec<f64>> {
    if k == 0 || k >= m.n_rows() {
        return Err(Error::invalid(
            "dbscan",
            format!("k must satisfy 1 <= k < n (k = {k}, n = {})", m.n_rows()),
        ));
    }
    let mut d = kth_neighbor_distances(m, k);
    d.sort_by(f64::total_cmp);
    Ok(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsSuggestion {
    pub eps: f64,
    /// Position of the knee in the sorted profile.
    pub rank: usize,
    pub warning: Option<String>,
}

/// Knee of a sorted k-distance profile: the point farthest from the chord
/// joining its first and last points.
pub fn suggest_eps(profile: &[f64]) -> Result<EpsSuggestion> {
    let n = profile.len();
    if n < 3 {
        return Err(Error::invalid("dbscan", "profile needs at least 3 points"));
    }
    let (first, last) = (profile[0], profile[n - 1]);
    if profile.iter().all(|&p| p == first) {
        let w = "k-distance profile is constant".to_string();
        log::warn!("{w}");
        return Ok(EpsSuggestion {
            eps: first,
            rank: 0,
            warning: Some(w),
        });
    }
    let slope = (last - first) / (n - 1) as f64;
    let norm = (1.0 + slope * slope).sqrt();
    let dist = |i: usize| (first + slope * i as f64 - profile[i]).abs() / norm;
    let (rank, best) = (1..n - 1)
        .map(|i| (i, dist(i)))
        .fold((0, 0.0), |acc, (i, d)| if d > acc.1 { (i, d) } else { acc });
    let scale = profile.iter().fold(0.0f64, |a, p| a.max(p.abs()));
    if best <= 1e-12 * scale.max(1.0) {
        let w = "no clear knee in k-distance profile".to_string();
        log::warn!("{w}");
        let mid = n / 2;
        return Ok(EpsSuggestion {
            eps: profile[mid],
            rank: mid,
            warning: Some(w),
        });
    }
    Ok(EpsSuggestion {
        eps: profile[rank],
        rank,
        warning: None,
    })
}

/// Neighbours within `eps` (inclusive, self included), ascending by row.
fn neighborhoods(m: &FeatureMatrix, eps: f64) -> Vec<Vec<usize>> {
    let n = m.n_rows();
    (0..n)
        .into_par_iter()
        .map(|i| (0..n).filter(|&j| euclidean(m.row(i), m.row(j)) <= eps).collect())
        .collect()
}

/// Density-based clustering. Clusters are seeded from core points in row
/// order and expanded breadth-first; a border point keeps the first cluster
/// that reaches it.
pub fn cluster(m: &FeatureMatrix, cfg: &DbscanConfig) -> Result<ClusterLabels> {
    cfg.validate()?;
    let n = m.n_rows();
    let hoods = neighborhoods(m, cfg.eps);
    let core: Vec<bool> = hoods.iter().map(|h| h.len() >= cfg.min_samples).collect();
    let mut labels: Vec<Option<i64>> = vec![None; n];
    let mut next = 0i64;
    for seed in 0..n {
        if labels[seed].is_some() || !core[seed] {
            continue;
        }
        labels[seed] = Some(next);
        let mut queue: VecDeque<usize> = hoods[seed].iter().copied().collect();
        while let Some(j) = queue.pop_front() {
            if labels[j].is_some() {
                continue;
            }
            labels[j] = Some(next);
            if core[j] {
                queue.extend(hoods[j].iter().copied().filter(|&q| labels[q].is_none()));
            }
        }
        next += 1;
    }
    Ok(ClusterLabels {
        labels: labels.into_iter().map(|l| l.unwrap_or(NOISE)).collect(),
        n_clusters: next as usize,
        core,
    })
}

/// Runs DBSCAN as an anomaly detector: noise points are anomalies, and the
/// score is the distance to the (min_samples − 1)-th nearest neighbour.
pub fn detect(m: &FeatureMatrix, cfg: &DbscanConfig) -> Result<(ClusterLabels, DetectorResult)> {
    let labels = cluster(m, cfg)?;
    let k = cfg.min_samples.saturating_sub(1);
    let scores = if k == 0 || k >= m.n_rows() {
        vec![0.0; m.n_rows()]
    } else {
        kth_neighbor_distances(m, k)
    };
    let result = DetectorResult {
        detector: DetectorKind::Dbscan,
        row_ids: m.row_ids.clone(),
        scores,
        is_anomaly: labels.labels.iter().map(|&l| l == NOISE).collect(),
        params_used: format!("eps={} min_samples={}", cfg.eps, cfg.min_samples),
    };
    Ok((labels, result))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_unnamed_rows(rows).unwrap()
    }

    #[test]
    fn collinear_k1_profile() {
        let m = matrix(&[vec![0.0], vec![1.0], vec![2.0]]);
        assert_eq!(k_distance_profile(&m, 1).unwrap(), vec![1.0, 1.0, 1.0]);
        assert!(k_distance_profile(&m, 3).is_err());
        assert!(k_distance_profile(&m, 0).is_err());
    }

    #[test]
    fn far_outlier_appends_one_large_distance() {
        let mut rows: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.1, 0.0]).collect();
        rows.extend((0..5).map(|i| vec![10.0 + i as f64 * 0.1, 0.0]));
        let base = k_distance_profile(&matrix(&rows), 1).unwrap();
        assert!(base.iter().all(|&d| (d - 0.1).abs() < 1e-9));
        rows.push(vec![100.0, 100.0]);
        let with = k_distance_profile(&matrix(&rows), 1).unwrap();
        assert_eq!(with.len(), 11);
        assert!(with[..10].iter().all(|&d| (d - 0.1).abs() < 1e-9));
        // nearest blob point is (10.4, 0)
        let expect = ((100.0f64 - 10.4).powi(2) + 100.0f64.powi(2)).sqrt();
        assert!((with[10] - expect).abs() < 1e-9);
    }

    #[test]
    fn knee_before_jump() {
        let s = suggest_eps(&[1.0, 1.0, 1.0, 1.0, 10.0]).unwrap();
        assert_eq!(s.eps, 1.0);
        assert_eq!(s.rank, 3);
        assert!(s.warning.is_none());
    }

    #[test]
    fn linear_and_constant_profiles_warn() {
        let lin: Vec<f64> = (0..9).map(|i| i as f64 * 0.5).collect();
        let s = suggest_eps(&lin).unwrap();
        assert_eq!(s.eps, lin[4]);
        assert!(s.warning.unwrap().contains("no clear knee"));

        let s = suggest_eps(&[2.0; 6]).unwrap();
        assert_eq!(s.eps, 2.0);
        assert!(s.warning.is_some());
        assert!(suggest_eps(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn one_tight_cluster() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.01, 0.0]).collect();
        let c = cluster(
            &matrix(&rows),
            &DbscanConfig {
                eps: 0.5,
                min_samples: 5,
            },
        )
        .unwrap();
        assert_eq!(c.n_clusters, 1);
        assert_eq!(c.n_noise(), 0);
    }

    #[test]
    fn blob_plus_far_point() {
        let mut rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![(i % 3) as f64 * 0.1, (i / 3) as f64 * 0.1])
            .collect();
        rows.push(vec![100.0, 0.0]);
        let c = cluster(
            &matrix(&rows),
            &DbscanConfig {
                eps: 0.5,
                min_samples: 5,
            },
        )
        .unwrap();
        assert_eq!(c.n_clusters, 1);
        assert_eq!(c.labels[10], NOISE);
        assert_eq!(c.n_noise(), 1);
    }

    #[test]
    fn self_counts_toward_min_samples() {
        // each point has exactly one neighbour besides itself
        let m = matrix(&[vec![0.0], vec![1.0], vec![10.0], vec![11.0]]);
        let c = cluster(
            &m,
            &DbscanConfig {
                eps: 1.0,
                min_samples: 2,
            },
        )
        .unwrap();
        assert_eq!(c.labels, vec![0, 0, 1, 1]);
        let c = cluster(
            &m,
            &DbscanConfig {
                eps: 1.0,
                min_samples: 3,
            },
        )
        .unwrap();
        assert_eq!(c.n_noise(), 4);
    }

    #[test]
    fn border_goes_to_first_cluster() {
        // row 4 is a border point reachable from both clusters
        let m = matrix(&[
            vec![0.0, 0.0],
            vec![-0.1, 0.0],
            vec![0.0, 0.1],
            vec![0.0, -0.1],
            vec![1.0, 0.0],
            vec![2.0, 0.0],
            vec![2.1, 0.0],
            vec![2.0, 0.1],
            vec![2.0, -0.1],
        ]);
        let c = cluster(
            &m,
            &DbscanConfig {
                eps: 1.0,
                min_samples: 4,
            },
        )
        .unwrap();
        assert!(!c.core[4]);
        assert_eq!(c.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn invalid_config() {
        assert!(DbscanConfig {
            eps: 0.0,
            min_samples: 5
        }
        .validate()
        .is_err());
        assert!(DbscanConfig {
            eps: 1.0,
            min_samples: 0
        }
        .validate()
        .is_err());
    }
}
