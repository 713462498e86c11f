mod common;

use rand::Rng;

use soilscan::dbscan::{self, DbscanConfig};
use soilscan::geodata::standardize;
use soilscan::iforest::{self, ForestConfig};
use soilscan::pca;

#[test]
fn jacobi_matches_power_iteration() {
    let mut rng = common::rng(21);
    for _ in 0..40 {
        let d = rng.random_range(2..=6);
        let n = rng.random_range(d + 2..=30);
        let rows = common::random_rows(&mut rng, n, d);
        let z = standardize(&common::matrix(&rows)).unwrap();
        let cov = common::covariance(&z.to_rows());
        let model = pca::fit_pca(&z, d).unwrap();
        let reference = common::power_eigenvalues(&cov);
        let scale = reference[0].max(1.0);
        for (a, b) in model.spectrum.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-6 * scale, "{:?} vs {:?}", model.spectrum, reference);
        }
    }
}

#[test]
fn jacobi_eigenpairs_satisfy_definition() {
    let mut rng = common::rng(22);
    for _ in 0..40 {
        let d = rng.random_range(1..=8);
        let rows = common::random_rows(&mut rng, d + 5, d);
        let cov = common::covariance(&rows);
        let eig = pca::jacobi_eigen(&cov).unwrap();
        let norm: f64 = cov.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
        for (lambda, v) in eig.values.iter().zip(&eig.vectors) {
            for i in 0..d {
                let av: f64 = (0..d).map(|j| cov[i][j] * v[j]).sum();
                assert!((av - lambda * v[i]).abs() < 1e-9 * norm.max(1.0));
            }
        }
        assert!(eig.values.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn identical_rows_score_one_half() {
    let rows = vec![vec![1.0, 2.0, 3.0]; 20];
    let (_, r) = iforest::detect(&common::matrix(&rows), &ForestConfig::default()).unwrap();
    for s in r.scores {
        assert!((s - 0.5).abs() < 1e-12, "{s}");
    }
}

#[test]
fn dbscan_on_far_apart_blobs() {
    // three tight blobs of 6 plus 2 isolated points
    let mut rows = Vec::new();
    for c in 0..3 {
        for i in 0..6 {
            rows.push(vec![c as f64 * 50.0 + (i % 3) as f64 * 0.1, (i / 3) as f64 * 0.1]);
        }
    }
    rows.push(vec![500.0, 500.0]);
    rows.push(vec![-500.0, 500.0]);
    let c = dbscan::cluster(
        &common::matrix(&rows),
        &DbscanConfig {
            eps: 1.0,
            min_samples: 5,
        },
    )
    .unwrap();
    assert_eq!(c.n_clusters, 3);
    assert_eq!(c.n_noise(), 2);
    common::check_dbscan(&rows, 1.0, 5, &c.labels).unwrap();
}

#[test]
fn tiny_eps_makes_everything_noise() {
    let mut rng = common::rng(23);
    let rows = common::random_rows(&mut rng, 40, 3);
    let c = dbscan::cluster(
        &common::matrix(&rows),
        &DbscanConfig {
            eps: 1e-9,
            min_samples: 2,
        },
    )
    .unwrap();
    assert_eq!(c.n_noise(), 40);
    common::check_dbscan(&rows, 1e-9, 2, &c.labels).unwrap();
}
