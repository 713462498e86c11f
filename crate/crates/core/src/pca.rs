//! PCA by cyclic Jacobi eigendecomposition of the sample covariance, and
//! reconstruction-error anomaly scoring.
//!
//! Covariance uses the n−1 denominator. On population-standardized input it
//! is the correlation matrix scaled by n/(n−1): eigenvalues carry that factor,
//! components do not.

use serde::{Deserialize, Serialize};

use crate::detector::{count_for_fraction, flag_top_k, DetectorKind, DetectorResult};
use crate::error::{Error, Result};
use crate::geodata::FeatureMatrix;

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaConfig {
    pub k: usize,
    pub quantile: f64,
}

impl Default for PcaConfig {
    fn default() -> Self {
        PcaConfig { k: 2, quantile: 0.85 }
    }
}

impl PcaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::invalid("pca", "k must be >= 1"));
        }
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::invalid(
                "pca",
                format!("quantile must be in (0, 1), got {}", self.quantile),
            ));
        }
        Ok(())
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending, eigenvectors
/// as rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
    pub sweeps: usize,
}

fn off_diagonal_norm(a: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for (i, row) in a.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            if i != j {
                s += v * v;
            }
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
/// 1e-12 (relative to ‖A‖_F when that exceeds 1).
///
/// Output is deterministic: eigenvalues sorted descending with ties kept in
/// diagonal order, and each eigenvector's largest-magnitude entry positive.
pub fn jacobi_eigen(matrix: &[Vec<f64>]) -> Result<SymmetricEigen> {
    let d = matrix.len();
    if matrix.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("pca", "matrix is not square"));
    }
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let frob = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let tol = OFF_DIAGONAL_TOL * frob.max(1.0);

    let mut sweeps = 0;
    while off_diagonal_norm(&a) >= tol {
        if sweeps == MAX_SWEEPS {
            return Err(Error::invalid(
                "pca",
                format!("Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps"),
            ));
        }
        sweeps += 1;
        for p in 0..d {
            for q in (p + 1)..d {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order
        .iter()
        .map(|&i| {
            let mut col: Vec<f64> = v.iter().map(|row| row[i]).collect();
            let lead = col
                .iter()
                .enumerate()
                .fold(0, |best, (k, x)| if x.abs() > col[best].abs() { k } else { best });
            if col[lead] < 0.0 {
                col.iter_mut().for_each(|x| *x = -*x);
            }
            col
        })
        .collect();
    Ok(SymmetricEigen {
        values,
        vectors,
        sweeps,
    })
}

/// d×d sample covariance (n−1 denominator) and the column means.
pub fn covariance(m: &FeatureMatrix) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = m.n_rows();
    if n < 2 {
        return Err(Error::invalid("pca", format!("need at least 2 samples, got {n}")));
    }
    let d = m.n_cols();
    let mean: Vec<f64> = (0..d).map(|j| m.rows().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in m.rows() {
        for i in 0..d {
            let di = r[i] - mean[i];
            for j in i..d {
                cov[i][j] += di * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }
    Ok((mean, cov))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    /// k×d, rows are orthonormal principal axes.
    pub components: Vec<Vec<f64>>,
    /// Top-k eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// All d eigenvalues.
    pub spectrum: Vec<f64>,
    pub total_variance: f64,
}

impl PcaModel {
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .map(|l| {
                if self.total_variance > 0.0 {
                    l / self.total_variance
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn check_columns(&self, m: &FeatureMatrix) -> Result<()> {
        if m.columns != self.columns {
            return Err(Error::invalid(
                "pca",
                format!(
                    "column mismatch: model fitted on {:?}, got {:?}",
                    self.columns, m.columns
                ),
            ));
        }
        Ok(())
    }

    fn centered(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).map(|(a, b)| a - b).collect()
    }

    /// Principal-component scores, one k-vector per row.
    pub fn transform(&self, m: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        self.check_columns(m)?;
        Ok(m.rows()
            .map(|x| {
                let c = self.centered(x);
                self.components.iter().map(|pc| dot(pc, &c)).collect()
            })
            .collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn fit_pca(m: &FeatureMatrix, k: usize) -> Result<PcaModel> {
    let d = m.n_cols();
    if k == 0 || k > d {
        return Err(Error::invalid("pca", format!("k must satisfy 1 <= k <= {d}, got {k}")));
    }
    let (mean, cov) = covariance(m)?;
    let total_variance = (0..d).map(|i| cov[i][i]).sum();
    let eig = jacobi_eigen(&cov)?;
    let spectrum: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
    Ok(PcaModel {
        columns: m.columns.clone(),
        mean,
        components: eig.vectors.into_iter().take(k).collect(),
        eigenvalues: spectrum[..k].to_vec(),
        spectrum,
        total_variance,
    })
}

/// ‖x − reconstruct(x)‖₂ for every row, reconstructing from the model's
/// components.
pub fn reconstruction_errors(model: &PcaModel, m: &FeatureMatrix) -> Result<Vec<f64>> {
    model.check_columns(m)?;
    Ok(m.rows()
        .map(|x| {
            let c = model.centered(x);
            let mut resid = c.clone();
            for pc in &model.components {
                let s = dot(pc, &c);
                for (r, v) in resid.iter_mut().zip(pc) {
                    *r -= s * v;
                }
            }
            resid.iter().map(|r| r * r).sum::<f64>().sqrt()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdLabels {
    pub is_anomaly: Vec<bool>,
    /// Smallest flagged error.
    pub threshold: f64,
}

/// Flags the ⌈(1−q)·n⌉ largest errors (ties by lower row index).
pub fn threshold_labels(errors: &[f64], quantile: f64) -> Result<ThresholdLabels> {
    if errors.is_empty() {
        return Err(Error::NoData);
    }
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(Error::invalid(
            "pca",
            format!("quantile must be in (0, 1), got {quantile}"),
        ));
    }
    let k = count_for_fraction(1.0 - quantile, errors.len());
    let is_anomaly = flag_top_k(errors, k);
    let threshold = errors
        .iter()
        .zip(&is_anomaly)
        .filter(|(_, &f)| f)
        .map(|(e, _)| *e)
        .fold(f64::INFINITY, f64::min);
    Ok(ThresholdLabels { is_anomaly, threshold })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconResult {
    pub errors: Vec<f64>,
    pub threshold: f64,
    pub is_anomaly: Vec<bool>,
    pub explained_variance_ratio: Vec<f64>,
    pub scores: Vec<Vec<f64>>,
}

pub fn detect(m: &FeatureMatrix, cfg: &PcaConfig) -> Result<(PcaModel, ReconResult, DetectorResult)> {
    cfg.validate()?;
    let model = fit_pca(m, cfg.k)?;
    let errors = reconstruction_errors(&model, m)?;
    let labels = threshold_labels(&errors, cfg.quantile)?;
    let recon = ReconResult {
        errors: errors.clone(),
        threshold: labels.threshold,
        is_anomaly: labels.is_anomaly.clone(),
        explained_variance_ratio: model.explained_variance_ratio(),
        scores: model.transform(m)?,
    };
    let result = DetectorResult {
        detector: DetectorKind::PcaReconstruction,
        row_ids: m.row_ids.clone(),
        scores: errors,
        is_anomaly: labels.is_anomaly,
        params_used: format!("k={} quantile={}", cfg.k, cfg.quantile),
    };
    Ok((model, recon, result))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_unnamed_rows(rows).unwrap()
    }

    #[test]
    fn points_on_diagonal_line() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, i as f64]).collect();
        let model = fit_pca(&matrix(&rows), 2).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((model.components[0][0] - h).abs() < 1e-12);
        assert!((model.components[0][1] - h).abs() < 1e-12);
        assert!(model.eigenvalues[1].abs() < 1e-12);
    }

    #[test]
    fn identity_covariance_is_deterministic() {
        let eig = jacobi_eigen(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        assert_eq!(eig.values, vec![1.0, 1.0, 1.0]);
        assert_eq!(eig.vectors[0], vec![1.0, 0.0, 0.0]);
        assert_eq!(eig.vectors[2], vec![0.0, 0.0, 1.0]);
        assert_eq!(eig.sweeps, 0);
    }

    #[test]
    fn two_by_two_closed_form() {
        // [[2,1],[1,2]] has eigenpairs 3 ↦ (1,1)/√2 and 1 ↦ (1,−1)/√2
        let eig = jacobi_eigen(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        assert!((eig.values[0] - 3.0).abs() < 1e-14);
        assert!((eig.values[1] - 1.0).abs() < 1e-14);
        let v = &eig.vectors[1];
        assert!((v[0].abs() - v[1].abs()).abs() < 1e-14 && v[0] * v[1] < 0.0);
    }

    #[test]
    fn hand_computed_three_point_residuals() {
        // points (0,0),(1,1),(4,0): mean (5/3,1/3), covariance [[13/3,-1/3],[-1/3,1/3]]
        let m = matrix(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![4.0, 0.0]]);
        let model = fit_pca(&m, 1).unwrap();
        let (a, b, c): (f64, f64, f64) = (13.0 / 3.0, -1.0 / 3.0, 1.0 / 3.0);
        let l1 = (a + c) / 2.0 + (((a - c) / 2.0).powi(2) + b * b).sqrt();
        assert!((model.eigenvalues[0] - l1).abs() < 1e-12);
        // eigenvector (b, l1 − a), normalised; residual = |x·u⊥|
        let norm = (b * b + (l1 - a).powi(2)).sqrt();
        let u = [b / norm, (l1 - a) / norm];
        let perp = [-u[1], u[0]];
        let mean = [5.0 / 3.0, 1.0 / 3.0];
        let expect: Vec<f64> = [[0.0, 0.0], [1.0, 1.0], [4.0, 0.0]]
            .iter()
            .map(|p| ((p[0] - mean[0]) * perp[0] + (p[1] - mean[1]) * perp[1]).abs())
            .collect();
        let got = reconstruction_errors(&model, &m).unwrap();
        for (g, e) in got.iter().zip(expect) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn full_rank_reconstructs_exactly() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos(), i as f64 * 0.1])
            .collect();
        let m = matrix(&rows);
        let model = fit_pca(&m, 3).unwrap();
        assert!(reconstruction_errors(&model, &m).unwrap().iter().all(|&e| e <= 1e-9));
    }

    #[test]
    fn in_span_sample_has_zero_error() {
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos(), i as f64 * 0.1])
            .collect();
        let model = fit_pca(&matrix(&rows), 2).unwrap();
        let mut x = model.mean.clone();
        for (xi, (a, b)) in x.iter_mut().zip(model.components[0].iter().zip(&model.components[1])) {
            *xi += 1.7 * a - 0.4 * b;
        }
        let probe = matrix(&[x]);
        assert!(reconstruction_errors(&model, &probe).unwrap()[0] <= 1e-9);
    }

    #[test]
    fn threshold_counts_and_ties() {
        let errs: Vec<f64> = (0..78).map(|i| ((i * 37) % 78) as f64).collect();
        let t = threshold_labels(&errs, 0.85).unwrap();
        assert_eq!(t.is_anomaly.iter().filter(|&&f| f).count(), 12);
        assert_eq!(t.threshold, 66.0);

        let t = threshold_labels(&[0.3], 0.85).unwrap();
        assert_eq!(t.is_anomaly, vec![true]);

        let t = threshold_labels(&[1.0; 10], 0.85).unwrap();
        let flagged: Vec<usize> = (0..10).filter(|&i| t.is_anomaly[i]).collect();
        assert_eq!(flagged, vec![0, 1]);
    }

    #[test]
    fn invalid_inputs() {
        let m = matrix(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(fit_pca(&m, 3).is_err());
        assert!(fit_pca(&m, 0).is_err());
        assert!(fit_pca(&matrix(&[vec![1.0, 2.0]]), 1).is_err());
        let model = fit_pca(&m, 1).unwrap();
        assert!(reconstruction_errors(&model, &matrix(&[vec![1.0, 2.0, 3.0]])).is_err());
        assert!(threshold_labels(&[], 0.85).is_err());
    }
}
