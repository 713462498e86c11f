//! Majority voting across the three detectors, the site × method count
//! matrix, and validation of the consensus set against risk indices and
//! control samples.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::detector::{DetectorKind, DetectorResult};
use crate::error::{Error, Result};
use crate::geodata::{pearson, quantile_sorted, Dataset, FeatureMatrix, Metal, RiskGiven, N_METALS};
use crate::risk::Receptor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsensusConfig {
    pub min_votes: u8,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig { min_votes: 2 }
    }
}

impl ConsensusConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.min_votes) {
            return Err(Error::invalid(
                "consensus",
                format!("min_votes must be in 1..=3, got {}", self.min_votes),
            ));
        }
        Ok(())
    }
}

/// Per-site flag counts. Columns are IF, DBSCAN, PCA, Consensus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountMatrix {
    pub sites: Vec<String>,
    pub columns: Vec<String>,
    pub counts: Vec<[usize; 4]>,
    /// Number of samples at each site.
    pub site_sizes: Vec<usize>,
}

impl CountMatrix {
    pub fn row(&self, site: &str) -> Option<&[usize; 4]> {
        self.sites.iter().position(|s| s == site).map(|i| &self.counts[i])
    }

    pub fn column_totals(&self) -> [usize; 4] {
        let mut t = [0; 4];
        for row in &self.counts {
            for (a, b) in t.iter_mut().zip(row) {
                *a += b;
            }
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusReport {
    pub row_ids: Vec<String>,
    pub sites: Vec<String>,
    pub min_votes: u8,
    /// Flags per detector, ordered IF, DBSCAN, PCA.
    pub flags: [Vec<bool>; 3],
    pub votes: Vec<u8>,
    pub consensus: Vec<bool>,
    pub detector_totals: [usize; 3],
    pub consensus_total: usize,
    pub count_matrix: CountMatrix,
}

impl ConsensusReport {
    pub fn flags_for(&self, kind: DetectorKind) -> &[bool] {
        &self.flags[kind_slot(kind)]
    }

    pub fn consensus_indices(&self) -> Vec<usize> {
        (0..self.consensus.len()).filter(|&i| self.consensus[i]).collect()
    }
}

fn kind_slot(kind: DetectorKind) -> usize {
    DetectorKind::ALL.iter().position(|&k| k == kind).unwrap()
}

/// Orders site labels as prefix then numeric suffix, so S2 precedes S10.
/// Labels without a numeric suffix sort after the numbered ones.
pub fn site_order(a: &str, b: &str) -> Ordering {
    fn key(s: &str) -> (bool, &str, u64) {
        let cut = s.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        match s[cut..].parse::<u64>() {
            Ok(n) if cut > 0 => (false, &s[..cut], n),
            _ => (true, s, 0),
        }
    }
    key(a).cmp(&key(b)).then_with(|| a.cmp(b))
}

/// Counts votes per sample from one result per detector. The order of
/// `results` does not matter.
pub fn vote(results: &[&DetectorResult], sites: &[String], min_votes: u8) -> Result<ConsensusReport> {
    ConsensusConfig { min_votes }.validate()?;
    if results.len() != 3 {
        return Err(Error::invalid(
            "consensus",
            format!("expected 3 detector results, got {}", results.len()),
        ));
    }
    let mut slots: [Option<&DetectorResult>; 3] = [None; 3];
    for r in results {
        let slot = &mut slots[kind_slot(r.detector)];
        if slot.is_some() {
            return Err(Error::invalid(
                "consensus",
                format!("duplicate {} result", r.detector.short_name()),
            ));
        }
        *slot = Some(r);
    }
    let ordered: Vec<&DetectorResult> = slots.iter().map(|s| s.unwrap()).collect();
    let n = sites.len();
    let ids = &ordered[0].row_ids;
    for r in &ordered {
        if r.is_anomaly.len() != n || r.row_ids.len() != n {
            return Err(Error::invalid(
                "consensus",
                format!(
                    "{} covers {} samples, expected {n}",
                    r.detector.short_name(),
                    r.is_anomaly.len()
                ),
            ));
        }
        if &r.row_ids != ids {
            return Err(Error::invalid(
                "consensus",
                format!("{} sample order differs", r.detector.short_name()),
            ));
        }
    }

    let flags = [
        ordered[0].is_anomaly.clone(),
        ordered[1].is_anomaly.clone(),
        ordered[2].is_anomaly.clone(),
    ];
    let votes: Vec<u8> = (0..n).map(|i| flags.iter().filter(|f| f[i]).count() as u8).collect();
    let consensus: Vec<bool> = votes.iter().map(|&v| v >= min_votes).collect();
    let detector_totals = [0, 1, 2].map(|k| flags[k].iter().filter(|&&f| f).count());

    let mut site_names: Vec<String> = sites.to_vec();
    site_names.sort_by(|a, b| site_order(a, b));
    site_names.dedup();
    let mut counts = vec![[0usize; 4]; site_names.len()];
    let mut site_sizes = vec![0usize; site_names.len()];
    for i in 0..n {
        let s = site_names.binary_search_by(|x| site_order(x, &sites[i])).unwrap();
        site_sizes[s] += 1;
        for k in 0..3 {
            counts[s][k] += flags[k][i] as usize;
        }
        counts[s][3] += consensus[i] as usize;
    }
    let columns = DetectorKind::ALL
        .iter()
        .map(|k| k.short_name().to_string())
        .chain(["Consensus".to_string()])
        .collect();

    Ok(ConsensusReport {
        row_ids: ids.clone(),
        sites: sites.to_vec(),
        min_votes,
        consensus_total: consensus.iter().filter(|&&c| c).count(),
        flags,
        votes,
        consensus,
        detector_totals,
        count_matrix: CountMatrix {
            sites: site_names,
            columns,
            counts,
            site_sizes,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetalDeviation {
    pub metal: Metal,
    pub z: f64,
}

/// Metals ranked by |z| descending, sign kept. Exact zeros are dropped.
pub fn characterize_anomaly(z: &[f64; N_METALS]) -> Vec<MetalDeviation> {
    let mut out: Vec<MetalDeviation> = Metal::ALL
        .iter()
        .zip(z)
        .filter(|(_, z)| **z != 0.0)
        .map(|(&metal, &z)| MetalDeviation { metal, z })
        .collect();
    out.sort_by(|a, b| b.z.abs().total_cmp(&a.z.abs()).then(a.metal.cmp(&b.metal)));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Archetype {
    Neutral,
    /// Dominant metal at least 2 SD above the mean; `extreme` from 3 SD.
    Enrichment {
        metal: Metal,
        z: f64,
        extreme: bool,
    },
    /// Dominant metal at least 2 SD below the mean.
    Depletion {
        metal: Metal,
        z: f64,
    },
    /// No single dominant deviation but two or more metals at least 1 SD high.
    MultiMetal {
        metals: Vec<Metal>,
    },
}

impl Archetype {
    pub fn classify(ranked: &[MetalDeviation]) -> Archetype {
        if let Some(top) = ranked.first() {
            if top.z >= 2.0 {
                return Archetype::Enrichment {
                    metal: top.metal,
                    z: top.z,
                    extreme: top.z >= 3.0,
                };
            }
            if top.z <= -2.0 {
                return Archetype::Depletion {
                    metal: top.metal,
                    z: top.z,
                };
            }
        }
        let high: Vec<Metal> = ranked.iter().filter(|d| d.z >= 1.0).map(|d| d.metal).collect();
        if high.len() >= 2 {
            return Archetype::MultiMetal { metals: high };
        }
        Archetype::Neutral
    }

    pub fn label(&self) -> String {
        match self {
            Archetype::Neutral => "neutral".into(),
            Archetype::Enrichment { metal, extreme, .. } => {
                format!("{}{metal} enrichment", if *extreme { "extreme " } else { "" })
            }
            Archetype::Depletion { metal, .. } => format!("low {metal}"),
            Archetype::MultiMetal { metals } => {
                let names: Vec<&str> = metals.iter().map(|m| m.name()).collect();
                format!("{} co-elevation", names.join("-"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyProfile {
    pub sample_id: String,
    pub site: String,
    pub votes: u8,
    pub consensus: bool,
    pub deviations: Vec<MetalDeviation>,
    pub archetype: Archetype,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub hi_mean: Option<f64>,
    pub hi_median: Option<f64>,
    pub ilcr_mean: Option<f64>,
    pub ilcr_median: Option<f64>,
    pub n_hi_above_one: usize,
    pub n_ilcr_above_1e4: usize,
}

impl GroupStats {
    fn of(hi: &[f64], ilcr: &[f64]) -> GroupStats {
        let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        let median = |v: &[f64]| {
            (!v.is_empty()).then(|| {
                let mut s = v.to_vec();
                s.sort_by(f64::total_cmp);
                quantile_sorted(&s, 0.5)
            })
        };
        GroupStats {
            n: hi.len(),
            hi_mean: mean(hi),
            hi_median: median(hi),
            ilcr_mean: mean(ilcr),
            ilcr_median: median(ilcr),
            n_hi_above_one: hi.iter().filter(|&&h| h > 1.0).count(),
            n_ilcr_above_1e4: ilcr.iter().filter(|&&c| c > 1e-4).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub anomalous: GroupStats,
    pub normal: GroupStats,
    /// Mean HI of the anomalous group over the normal group; `None` when
    /// either group is empty or the normal mean is 0.
    pub hi_ratio: Option<f64>,
}

impl GroupComparison {
    fn split(flags: &[bool], hi: &[f64], ilcr: &[f64]) -> GroupComparison {
        let pick = |want: bool, v: &[f64]| -> Vec<f64> {
            v.iter()
                .zip(flags)
                .filter(|(_, &f)| f == want)
                .map(|(x, _)| *x)
                .collect()
        };
        let anomalous = GroupStats::of(&pick(true, hi), &pick(true, ilcr));
        let normal = GroupStats::of(&pick(false, hi), &pick(false, ilcr));
        let hi_ratio = match (anomalous.hi_mean, normal.hi_mean) {
            (Some(a), Some(b)) if b != 0.0 => Some(a / b),
            _ => None,
        };
        GroupComparison {
            anomalous,
            normal,
            hi_ratio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceptorValidation {
    pub receptor: Receptor,
    pub consensus: GroupComparison,
    /// Same comparison using each detector's own flags, keyed IF/DBSCAN/PCA.
    pub by_detector: BTreeMap<String, GroupComparison>,
    /// Pearson r between PCA reconstruction error and HI.
    pub recon_error_hi_r: Option<f64>,
    /// Whether every consensus anomaly has HI > 1 (false when there are none).
    pub all_consensus_hi_above_one: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub receptors: Vec<ReceptorValidation>,
    pub n_controls: usize,
    pub control_consensus: usize,
    /// Consensus anomalies per site, in site order, zero counts omitted.
    pub consensus_sites: Vec<(String, usize)>,
    pub anomalies: Vec<AnomalyProfile>,
    pub warnings: Vec<String>,
}

impl ValidationSummary {
    pub fn receptor(&self, r: Receptor) -> &ReceptorValidation {
        self.receptors.iter().find(|v| v.receptor == r).unwrap()
    }
}

/// Compares the consensus set with the risk indices, checks controls, and
/// characterizes every sample flagged by at least one detector.
///
/// `z` must be the standardized metal matrix of `d`, and `recon_errors` the
/// PCA reconstruction error per sample.
pub fn validate(
    report: &ConsensusReport,
    risks: &[RiskGiven],
    recon_errors: &[f64],
    z: &FeatureMatrix,
    d: &Dataset,
) -> Result<ValidationSummary> {
    let n = report.consensus.len();
    if risks.len() != n || recon_errors.len() != n || d.len() != n || z.n_rows() != n {
        return Err(Error::invalid(
            "consensus",
            format!(
                "length mismatch: report {n}, risks {}, errors {}, dataset {}, z {}",
                risks.len(),
                recon_errors.len(),
                d.len(),
                z.n_rows()
            ),
        ));
    }
    if z.n_cols() != N_METALS {
        return Err(Error::invalid("consensus", "z matrix must have one column per metal"));
    }
    if d.samples.iter().zip(&report.row_ids).any(|(s, id)| &s.sample_id != id) {
        return Err(Error::invalid("consensus", "dataset and report sample order differ"));
    }

    let mut warnings = Vec::new();
    let mut receptors = Vec::new();
    for receptor in Receptor::ALL {
        let (hi, ilcr): (Vec<f64>, Vec<f64>) = risks
            .iter()
            .map(|r| match receptor {
                Receptor::Adult => (r.hi_adult, r.ilcr_adult),
                Receptor::Child => (r.hi_child, r.ilcr_child),
            })
            .unzip();
        let consensus = GroupComparison::split(&report.consensus, &hi, &ilcr);
        if consensus.hi_ratio.is_none() {
            warnings.push(format!("{}: HI ratio undefined (empty group)", receptor.name()));
        }
        let by_detector = DetectorKind::ALL
            .iter()
            .map(|&k| {
                (
                    k.short_name().to_string(),
                    GroupComparison::split(report.flags_for(k), &hi, &ilcr),
                )
            })
            .collect();
        let flagged: Vec<usize> = report.consensus_indices();
        receptors.push(ReceptorValidation {
            receptor,
            recon_error_hi_r: pearson(recon_errors, &hi),
            all_consensus_hi_above_one: !flagged.is_empty() && flagged.iter().all(|&i| hi[i] > 1.0),
            consensus,
            by_detector,
        });
    }

    let controls: Vec<usize> = (0..n).filter(|&i| d.samples[i].is_control).collect();
    let control_consensus = controls.iter().filter(|&&i| report.consensus[i]).count();

    let consensus_sites = report
        .count_matrix
        .sites
        .iter()
        .zip(&report.count_matrix.counts)
        .filter(|(_, c)| c[3] > 0)
        .map(|(s, c)| (s.clone(), c[3]))
        .collect();

    let anomalies = (0..n)
        .filter(|&i| report.votes[i] > 0)
        .map(|i| {
            let mut zi = [0.0; N_METALS];
            zi.copy_from_slice(z.row(i));
            let deviations = characterize_anomaly(&zi);
            AnomalyProfile {
                sample_id: report.row_ids[i].clone(),
                site: report.sites[i].clone(),
                votes: report.votes[i],
                consensus: report.consensus[i],
                archetype: Archetype::classify(&deviations),
                deviations,
            }
        })
        .collect();

    Ok(ValidationSummary {
        receptors,
        n_controls: controls.len(),
        control_consensus,
        consensus_sites,
        anomalies,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(kind: DetectorKind, flags: &[bool]) -> DetectorResult {
        DetectorResult {
            detector: kind,
            row_ids: (0..flags.len()).map(|i| format!("r{i}")).collect(),
            scores: vec![0.0; flags.len()],
            is_anomaly: flags.to_vec(),
            params_used: String::new(),
        }
    }

    fn three(a: &[bool], b: &[bool], c: &[bool]) -> [DetectorResult; 3] {
        [
            result(DetectorKind::IsolationForest, a),
            result(DetectorKind::Dbscan, b),
            result(DetectorKind::PcaReconstruction, c),
        ]
    }

    #[test]
    fn two_of_three() {
        let r = three(&[true, true], &[false, false], &[true, false]);
        let sites = vec!["S1".to_string(), "S1".to_string()];
        let rep = vote(&[&r[0], &r[1], &r[2]], &sites, 2).unwrap();
        assert_eq!(rep.votes, vec![2, 1]);
        assert_eq!(rep.consensus, vec![true, false]);
        assert_eq!(rep.count_matrix.row("S1").unwrap(), &[2, 0, 1, 1]);
    }

    #[test]
    fn twelve_zero_twelve_with_six_shared() {
        let n = 78;
        let a: Vec<bool> = (0..n).map(|i| i < 12).collect();
        let c: Vec<bool> = (0..n).map(|i| (6..18).contains(&i)).collect();
        let r = three(&a, &vec![false; n], &c);
        let sites: Vec<String> = (0..n).map(|i| format!("S{}", i / 6 + 1)).collect();
        let rep = vote(&[&r[2], &r[0], &r[1]], &sites, 2).unwrap();
        assert_eq!(rep.detector_totals, [12, 0, 12]);
        assert_eq!(rep.consensus_total, 6);
        assert_eq!(rep.count_matrix.column_totals(), [12, 0, 12, 6]);
        assert_eq!(rep.count_matrix.sites[1], "S2");
        assert_eq!(rep.count_matrix.sites[9], "S10");
    }

    #[test]
    fn mismatches_are_errors() {
        let r = three(&[true, false], &[false, false], &[true]);
        let sites = vec!["S1".to_string(); 2];
        assert!(vote(&[&r[0], &r[1], &r[2]], &sites, 2).is_err());
        let mut r = three(&[true, false], &[false, false], &[true, false]);
        r[1].row_ids.swap(0, 1);
        assert!(vote(&[&r[0], &r[1], &r[2]], &sites, 2).is_err());
        let r = three(&[true, false], &[false, false], &[true, false]);
        assert!(vote(&[&r[0], &r[0], &r[2]], &sites, 2).is_err());
    }

    #[test]
    fn site_ordering() {
        let mut s = vec!["Residential", "S10", "S2", "S1", "S12"];
        s.sort_by(|a, b| site_order(a, b));
        assert_eq!(s, vec!["S1", "S2", "S10", "S12", "Residential"]);
    }

    #[test]
    fn characterization() {
        let mut z = [0.0; N_METALS];
        z[Metal::Cu.index()] = 4.1;
        z[Metal::Zn.index()] = -0.5;
        let ranked = characterize_anomaly(&z);
        assert_eq!(
            ranked[0],
            MetalDeviation {
                metal: Metal::Cu,
                z: 4.1
            }
        );
        assert_eq!(ranked.len(), 2);
        assert_eq!(Archetype::classify(&ranked).label(), "extreme Cu enrichment");

        let mut z = [0.3; N_METALS];
        z[Metal::Ni.index()] = -2.5;
        let ranked = characterize_anomaly(&z);
        assert!(matches!(
            Archetype::classify(&ranked),
            Archetype::Depletion { metal: Metal::Ni, .. }
        ));

        let mut z = [0.0; N_METALS];
        z[Metal::Pb.index()] = 1.4;
        z[Metal::Zn.index()] = 1.6;
        assert_eq!(
            Archetype::classify(&characterize_anomaly(&z)),
            Archetype::MultiMetal {
                metals: vec![Metal::Zn, Metal::Pb]
            }
        );

        assert!(characterize_anomaly(&[0.0; N_METALS]).is_empty());
        assert_eq!(Archetype::classify(&[]), Archetype::Neutral);
    }

    #[test]
    fn group_stats_handle_empty_groups() {
        let g = GroupComparison::split(&[false, false], &[1.0, 3.0], &[0.0, 0.0]);
        assert_eq!(g.anomalous.n, 0);
        assert_eq!(g.anomalous.hi_mean, None);
        assert_eq!(g.hi_ratio, None);
        assert_eq!(g.normal.hi_median, Some(2.0));
    }
}
