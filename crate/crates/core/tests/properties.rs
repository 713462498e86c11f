#![allow(clippy::needless_range_loop)]

mod common;

use proptest::prelude::*;

use soilscan::consensus::{characterize_anomaly, vote};
use soilscan::dbscan::{self, DbscanConfig};
use soilscan::detector::{count_for_fraction, DetectorKind, DetectorResult};
use soilscan::geodata::{pearson, pearson_matrix, standardize, FeatureMatrix, SampleRecord, N_METALS};
use soilscan::iforest::{self, expected_path_length, ForestConfig};
use soilscan::pca;
use soilscan::risk::{sample_risk, RiskConfig};

fn rows_strategy(max_n: usize, max_d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2..=max_n, 1..=max_d).prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-1e3..1e3f64, d), n))
}

fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
    FeatureMatrix::from_unnamed_rows(rows).unwrap()
}

fn result(kind: DetectorKind, flags: &[bool]) -> DetectorResult {
    DetectorResult {
        detector: kind,
        row_ids: (0..flags.len()).map(|i| format!("s{i}")).collect(),
        scores: vec![0.0; flags.len()],
        is_anomaly: flags.to_vec(),
        params_used: String::new(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn standardized_columns_are_centred(rows in rows_strategy(30, 6)) {
        let m = matrix(&rows);
        let z = standardize(&m).unwrap();
        let stds = z.col_stds.clone().unwrap();
        for j in 0..z.n_cols() {
            let col = z.column(j);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            prop_assert!(mean.abs() < 1e-12);
            if stds[j] > 0.0 {
                let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / col.len() as f64;
                prop_assert!((var.sqrt() - 1.0).abs() < 1e-12);
            } else {
                prop_assert!(col.iter().all(|&x| x == 0.0));
            }
        }
    }

    #[test]
    fn pearson_is_symmetric_and_bounded(rows in rows_strategy(25, 5)) {
        let c = pearson_matrix(&matrix(&rows)).unwrap();
        let d = c.columns.len();
        for a in 0..d {
            prop_assert_eq!(c.values[a][a], 1.0);
            for b in 0..d {
                prop_assert!(c.values[a][b].abs() <= 1.0);
                prop_assert_eq!(c.values[a][b], c.values[b][a]);
            }
        }
    }

    #[test]
    fn iforest_scores_in_unit_interval(rows in rows_strategy(40, 4), seed in 0u64..1000) {
        let cfg = ForestConfig { n_trees: 25, seed, ..ForestConfig::default() };
        let (forest, r) = iforest::detect(&matrix(&rows), &cfg).unwrap();
        prop_assert!(r.scores.iter().all(|&s| s > 0.0 && s < 1.0));
        prop_assert_eq!(r.n_flagged(), count_for_fraction(0.15, rows.len()));
        let limit = (forest.subsample_size as f64).log2().ceil() as usize;
        prop_assert!(forest.trees.iter().all(|t| t.max_leaf_depth() <= limit));
    }

    #[test]
    fn iforest_is_seed_deterministic(rows in rows_strategy(30, 3), seed in 0u64..1000) {
        let cfg = ForestConfig { n_trees: 20, seed, ..ForestConfig::default() };
        let m = matrix(&rows);
        let a = iforest::detect(&m, &cfg).unwrap().1;
        let b = iforest::detect(&m, &cfg).unwrap().1;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn dbscan_matches_reference(rows in rows_strategy(30, 4), eps in 1.0..800.0f64, min_samples in 1usize..6) {
        let c = dbscan::cluster(&matrix(&rows), &DbscanConfig { eps, min_samples }).unwrap();
        prop_assert_eq!(common::check_dbscan(&rows, eps, min_samples, &c.labels), Ok(()));
    }

    #[test]
    fn k_distance_profile_is_sorted(rows in rows_strategy(30, 4), k in 1usize..5) {
        prop_assume!(k < rows.len());
        let p = dbscan::k_distance_profile(&matrix(&rows), k).unwrap();
        prop_assert_eq!(p.len(), rows.len());
        prop_assert!(p.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn pca_errors_non_increasing_in_k(rows in rows_strategy(25, 5)) {
        prop_assume!(rows.len() > rows[0].len());
        let z = standardize(&matrix(&rows)).unwrap();
        let d = z.n_cols();
        let mut prev = vec![f64::INFINITY; z.n_rows()];
        for k in 1..=d {
            let m = pca::fit_pca(&z, k).unwrap();
            let e = pca::reconstruction_errors(&m, &z).unwrap();
            for (a, b) in e.iter().zip(&prev) {
                prop_assert!(*a <= b + 1e-9);
            }
            prev = e;
        }
        prop_assert!(prev.iter().all(|&e| e < 1e-8));
    }

    #[test]
    fn pca_flags_requested_fraction(errors in prop::collection::vec(0.0..10.0f64, 1..100), q in 0.5..0.99f64) {
        let t = pca::threshold_labels(&errors, q).unwrap();
        let k = count_for_fraction(1.0 - q, errors.len());
        prop_assert_eq!(t.is_anomaly.iter().filter(|&&f| f).count(), k);
        for (e, f) in errors.iter().zip(&t.is_anomaly) {
            if *f { prop_assert!(*e >= t.threshold); }
        }
    }

    #[test]
    fn vote_invariants(flags in prop::collection::vec((any::<bool>(), any::<bool>(), any::<bool>(), 0usize..4), 1..60)) {
        let a: Vec<bool> = flags.iter().map(|f| f.0).collect();
        let b: Vec<bool> = flags.iter().map(|f| f.1).collect();
        let c: Vec<bool> = flags.iter().map(|f| f.2).collect();
        let sites: Vec<String> = flags.iter().map(|f| format!("S{}", f.3 + 1)).collect();
        let ra = result(DetectorKind::IsolationForest, &a);
        let rb = result(DetectorKind::Dbscan, &b);
        let rc = result(DetectorKind::PcaReconstruction, &c);
        let two = vote(&[&ra, &rb, &rc], &sites, 2).unwrap();
        let permuted = vote(&[&rc, &ra, &rb], &sites, 2).unwrap();
        prop_assert_eq!(&two, &permuted);
        let three = vote(&[&ra, &rb, &rc], &sites, 3).unwrap();
        for i in 0..a.len() {
            prop_assert_eq!(two.consensus[i], two.votes[i] >= 2);
            if two.consensus[i] { prop_assert!(a[i] || b[i] || c[i]); }
            if three.consensus[i] { prop_assert!(two.consensus[i]); }
        }
        let totals = two.count_matrix.column_totals();
        prop_assert_eq!(&totals[..3], &two.detector_totals[..]);
        prop_assert_eq!(totals[3], two.consensus_total);
        for row in &two.count_matrix.counts {
            prop_assert!(row[0] + row[1] + row[2] >= row[3]);
        }
    }

    #[test]
    fn characterization_sorted_by_magnitude(z in prop::array::uniform8(-5.0..5.0f64)) {
        let ranked = characterize_anomaly(&z);
        prop_assert!(ranked.windows(2).all(|w| w[0].z.abs() >= w[1].z.abs()));
        for d in &ranked {
            prop_assert_eq!(d.z, z[d.metal.index()]);
        }
    }

    #[test]
    fn risk_scales_linearly(conc in prop::array::uniform8(0.0..1000.0f64), alpha in 0.001..1000.0f64) {
        let cfg = RiskConfig::default();
        let s = SampleRecord {
            sample_id: "p".into(),
            site: "S1".into(),
            is_control: false,
            conc,
            risk_given: None,
        };
        prop_assume!(conc.iter().any(|&c| c > 0.0));
        let a = sample_risk(&s, &cfg).unwrap();
        let b = sample_risk(&s.scaled(alpha), &cfg).unwrap();
        for (x, y) in [(a.child.hazard.hi, b.child.hazard.hi), (a.adult.cancer.ilcr, b.adult.cancer.ilcr)] {
            prop_assert!((y - alpha * x).abs() <= 1e-12 * (alpha * x).abs());
        }
        let sum: f64 = a.child.hazard.hq.iter().sum();
        prop_assert!((sum - a.child.hazard.hi).abs() <= 1e-12 * a.child.hazard.hi);
    }

    #[test]
    fn hazard_index_is_additive_over_metals(conc in prop::array::uniform8(0.0..1000.0f64)) {
        let cfg = RiskConfig::default();
        let s = SampleRecord {
            sample_id: "p".into(),
            site: "S1".into(),
            is_control: false,
            conc,
            risk_given: None,
        };
        let whole = sample_risk(&s, &cfg).unwrap().child.hazard.hi;
        let parts: f64 = soilscan::Metal::ALL
            .iter()
            .map(|&m| sample_risk(&s.single_metal(m), &cfg).unwrap().child.hazard.hi)
            .sum();
        prop_assert!((whole - parts).abs() <= 1e-12 * whole.max(1e-300));
    }
}

#[test]
fn path_length_normaliser_matches_harmonic_form() {
    // c(n) = 2 H(n−1) − 2(n−1)/n with exact harmonic numbers
    for n in 2..300usize {
        let h: f64 = (1..n).map(|i| 1.0 / i as f64).sum();
        let exact = 2.0 * h - 2.0 * (n - 1) as f64 / n as f64;
        let approx = expected_path_length(n);
        // ln m + γ undershoots H(m) by about 1/(2m)
        let tol = 1.0 / (n - 1) as f64;
        assert!((approx - exact).abs() < tol, "n={n}: {approx} vs {exact}");
    }
    assert_eq!(expected_path_length(2), 1.0);
    assert_eq!(expected_path_length(1), 0.0);
    assert_eq!(expected_path_length(0), 0.0);
}

#[test]
fn pearson_agrees_with_validation_r() {
    let d = soilscan::geodata::load_dataset(common::fixture_path()).unwrap();
    let cfg = soilscan::config::PipelineConfig::defaults();
    let r = soilscan::report::run_on_dataset(&d, &cfg).unwrap();
    let hi: Vec<f64> = r.risk.iter().map(|x| x.hi_child).collect();
    let direct = pearson(&r.pca.errors, &hi).unwrap();
    let reported = r
        .validation
        .receptor(soilscan::risk::Receptor::Child)
        .recon_error_hi_r
        .unwrap();
    assert!((direct - reported).abs() <= 1e-12);
    assert_eq!(N_METALS, 8);
}
