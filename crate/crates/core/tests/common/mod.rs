//! Reference implementations and generators shared by the integration
//! tests. Nothing here calls into the code under test except for building
//! inputs.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use soilscan::FeatureMatrix;

pub fn fixture_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/fixture_seed42.csv")
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// n×d Gaussian matrix with a random scale and offset per column.
pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    let scale: Vec<f64> = (0..d).map(|_| 10f64.powf(rng.random_range(-2.0..3.0))).collect();
    let shift: Vec<f64> = (0..d).map(|_| rng.random_range(-100.0..100.0)).collect();
    (0..n)
        .map(|_| {
            (0..d)
                .map(|j| {
                    let z: f64 = rng.sample(StandardNormal);
                    shift[j] + scale[j] * z
                })
                .collect()
        })
        .collect()
}

pub fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
    FeatureMatrix::from_unnamed_rows(rows).unwrap()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += (a[k] - b[k]).powi(2);
    }
    s.sqrt()
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Checks DBSCAN labels against the definition: core points are those with
/// at least `min_samples` points (self included) within `eps`; clusters are
/// the connected components of core points; a non-core point within `eps`
/// of a core point joins one of those cores' clusters; all else is noise.
/// Cluster ids are compared up to renumbering.
pub fn check_dbscan(rows: &[Vec<f64>], eps: f64, min_samples: usize, labels: &[i64]) -> Result<(), String> {
    let n = rows.len();
    let near: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| dist(&rows[i], &rows[j]) <= eps).collect())
        .collect();
    let core: Vec<bool> = near.iter().map(|v| v.len() >= min_samples).collect();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        if !core[i] {
            continue;
        }
        for &j in &near[i] {
            if core[j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut comp_to_label = std::collections::HashMap::new();
    let mut label_to_comp = std::collections::HashMap::new();
    for i in 0..n {
        let expect_noise = !core[i] && !near[i].iter().any(|&j| core[j]);
        if expect_noise != (labels[i] == -1) {
            return Err(format!("row {i}: noise expected {expect_noise}, label {}", labels[i]));
        }
        if core[i] {
            let c = find(&mut parent, i);
            if *comp_to_label.entry(c).or_insert(labels[i]) != labels[i]
                || *label_to_comp.entry(labels[i]).or_insert(c) != c
            {
                return Err(format!("row {i}: core cluster mismatch"));
            }
        }
    }
    for i in 0..n {
        if !core[i] && labels[i] != -1 {
            let ok = near[i]
                .iter()
                .any(|&j| core[j] && comp_to_label[&find(&mut parent, j)] == labels[i]);
            if !ok {
                return Err(format!(
                    "row {i}: border label {} not adjacent to that cluster",
                    labels[i]
                ));
            }
        }
    }
    let distinct: std::collections::HashSet<i64> = labels.iter().copied().filter(|&l| l != -1).collect();
    if distinct.len() != label_to_comp.len() {
        return Err("cluster count mismatch".into());
    }
    Ok(())
}

/// Sample covariance (n−1) computed directly from rows.
pub fn covariance(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let mut c = vec![vec![0.0; d]; d];
    for r in rows {
        for a in 0..d {
            for b in 0..d {
                c[a][b] += (r[a] - mean[a]) * (r[b] - mean[b]);
            }
        }
    }
    for row in c.iter_mut() {
        for v in row.iter_mut() {
            *v /= (n - 1) as f64;
        }
    }
    c
}

/// Eigenvalues of a symmetric PSD matrix, largest first, by power
/// iteration with deflation.
pub fn power_eigenvalues(a: &[Vec<f64>]) -> Vec<f64> {
    let d = a.len();
    let mut m: Vec<Vec<f64>> = a.to_vec();
    let mut out = Vec::new();
    for k in 0..d {
        let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.1 * ((i + k) as f64).sin()).collect();
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let w: Vec<f64> = (0..d).map(|i| (0..d).map(|j| m[i][j] * v[j]).sum()).collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                lambda = 0.0;
                break;
            }
            let next: Vec<f64> = w.iter().map(|x| x / norm).collect();
            let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            v = next;
            lambda = norm;
            if delta < 1e-14 {
                break;
            }
        }
        out.push(lambda);
        for i in 0..d {
            for j in 0..d {
                m[i][j] -= lambda * v[i] * v[j];
            }
        }
    }
    out
}
