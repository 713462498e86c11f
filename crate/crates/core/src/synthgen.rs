//! Deterministic synthetic survey: twelve waste-site locations plus
//! residential controls, tuned to published summary statistics of a
//! peri-urban dumpsite survey.
//!
//! Site groups share a mean profile. S3 carries a Cu spike (lognormal), S4
//! and S5 are depleted in Ni, S9 to S12 are Zn-rich, and the controls are
//! low in Cd, Cr and Hg. Two latent factors add within-site covariation:
//! one on Cd, Cr and Hg, one on As and Pb against Zn.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::consensus::vote;
use crate::dbscan::{self, DbscanConfig};
use crate::error::{Error, Result};
use crate::geodata::{pearson, standardize, Dataset, Metal, RiskGiven, SampleRecord, CONTROL_SITE, N_METALS};
use crate::iforest::{self, ForestConfig};
use crate::pca::{self, PcaConfig};
use crate::risk::{sample_risk, RiskConfig};

/// Reference per-metal means (mg/kg) the generator is calibrated against.
pub const TARGET_MEANS: [f64; N_METALS] = [6.48, 3.35, 83.88, 108.65, 2.44, 25.03, 25.65, 67.43];
/// Reference Cu maximum (mg/kg).
pub const TARGET_CU_MAX: f64 = 611.76;

const BASE_SD: [f64; N_METALS] = [0.3, 0.12, 2.5, 1.5, 0.12, 1.0, 2.0, 5.0];
const FLOOR: f64 = 0.01;

const MEAN_A: [f64; N_METALS] = [7.75, 4.22, 84.81, 51.69, 2.67, 24.3, 33.55, 46.35];
const MEAN_ZN: [f64; N_METALS] = [4.01, 3.33, 96.19, 86.9, 2.61, 29.88, 6.02, 112.43];
const MEAN_S3: [f64; N_METALS] = [13.32, 3.23, 100.07, 546.31, 2.46, 34.6, 49.37, 27.53];
const MEAN_CONTROL: [f64; N_METALS] = [6.06, 0.24, 3.99, 69.18, 0.31, 22.74, 18.15, 43.06];
const NI_DEPLETED: f64 = 2.5;
const S3_CU_LOG_SD: f64 = 0.045;

/// Loadings of (f1, f2) per metal, in units of the metal's scale.
const LOADINGS: [[f64; 2]; N_METALS] = [
    [0.0, 0.5],  // As
    [0.5, 0.0],  // Cd
    [0.5, 0.0],  // Cr
    [0.0, 0.0],  // Cu
    [0.5, 0.0],  // Hg
    [0.0, 0.0],  // Ni
    [0.0, 0.5],  // Pb
    [0.0, -0.5], // Zn
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetalModel {
    /// Mean, or median when `lognormal`.
    pub location: f64,
    /// Standard deviation, or log-scale sigma when `lognormal`.
    pub scale: f64,
    pub lognormal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteModel {
    pub site: String,
    pub metals: [MetalModel; N_METALS],
    pub loadings: [[f64; 2]; N_METALS],
}

impl SiteModel {
    fn normal(site: &str, means: [f64; N_METALS]) -> SiteModel {
        let metals = std::array::from_fn(|j| {
            let shrink = if means[j] < 0.3 * TARGET_MEANS[j] { 0.3 } else { 1.0 };
            MetalModel {
                location: means[j],
                scale: BASE_SD[j] * shrink,
                lognormal: false,
            }
        });
        SiteModel {
            site: site.to_string(),
            metals,
            loadings: LOADINGS,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> [f64; N_METALS] {
        let f: [f64; 2] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        std::array::from_fn(|j| {
            let [a, b] = self.loadings[j];
            let e: f64 = rng.sample(StandardNormal);
            let u = (e + a * f[0] + b * f[1]) / (1.0 + a * a + b * b).sqrt();
            let mm = self.metals[j];
            let x = if mm.lognormal {
                mm.location * (mm.scale * u).exp()
            } else {
                mm.location + mm.scale * u
            };
            (x.max(FLOOR) * 100.0).round() / 100.0
        })
    }
}

/// Site models S1 to S12 followed by the residential controls.
pub fn site_models() -> Vec<SiteModel> {
    let mut depleted = MEAN_A;
    depleted[Metal::Ni.index()] = NI_DEPLETED;
    let mut out: Vec<SiteModel> = (1..=12)
        .map(|k| {
            let name = format!("S{k}");
            match k {
                3 => {
                    let mut m = SiteModel::normal(&name, MEAN_S3);
                    m.metals[Metal::Cu.index()] = MetalModel {
                        location: MEAN_S3[Metal::Cu.index()],
                        scale: S3_CU_LOG_SD,
                        lognormal: true,
                    };
                    m
                }
                4 | 5 => SiteModel::normal(&name, depleted),
                9..=12 => SiteModel::normal(&name, MEAN_ZN),
                _ => SiteModel::normal(&name, MEAN_A),
            }
        })
        .collect();
    out.push(SiteModel::normal(CONTROL_SITE, MEAN_CONTROL));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_sites: usize,
    pub samples_per_site: usize,
    pub n_controls: usize,
    /// Attempts before giving up on calibration.
    pub max_retries: u32,
    /// Reject draws that miss the calibration targets.
    pub calibrate: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 42,
            n_sites: 12,
            samples_per_site: 6,
            n_controls: 6,
            max_retries: 64,
            calibrate: true,
        }
    }
}

impl GeneratorConfig {
    pub fn n_samples(&self) -> usize {
        self.n_sites * self.samples_per_site + self.n_controls
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites != 12 {
            return Err(Error::invalid(
                "synthgen",
                "site models are defined for exactly 12 sites",
            ));
        }
        if self.samples_per_site == 0 || self.n_controls == 0 {
            return Err(Error::invalid(
                "synthgen",
                "samples_per_site and n_controls must be >= 1",
            ));
        }
        if self.max_retries == 0 {
            return Err(Error::invalid("synthgen", "max_retries must be >= 1"));
        }
        Ok(())
    }
}

/// Outcome of one calibration check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub dataset: Dataset,
    /// Zero-based attempt that passed (0 when calibration is off).
    pub attempt: u32,
    pub checks: Vec<Check>,
}

fn draw_dataset(cfg: &GeneratorConfig, attempt: u32, risk: &RiskConfig) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(attempt as u64);
    let mut samples = Vec::with_capacity(cfg.n_samples());
    for model in site_models() {
        let control = model.site == CONTROL_SITE;
        let count = if control { cfg.n_controls } else { cfg.samples_per_site };
        for k in 1..=count {
            let sample_id = if control {
                format!("R{k}")
            } else {
                format!("{}-{k}", model.site)
            };
            let mut s = SampleRecord {
                sample_id,
                site: model.site.clone(),
                is_control: control,
                conc: model.draw(&mut rng),
                risk_given: None,
            };
            let r = sample_risk(&s, risk)?;
            s.risk_given = Some(r.indices());
            samples.push(s);
        }
    }
    Dataset::new(samples)
}

/// Data-level and pipeline-level calibration checks on a generated survey,
/// using default detector and risk parameters.
pub fn calibration_checks(d: &Dataset) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut push = |name: String, value: f64, pass: bool| out.push(Check { name, value, pass });
    let m = d.feature_matrix();
    for metal in Metal::ALL {
        let col = m.column(metal.index());
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let rel = mean / TARGET_MEANS[metal.index()] - 1.0;
        push(format!("mean {metal} rel. dev."), rel, rel.abs() <= 0.15);
    }
    let cu_max = m.column(Metal::Cu.index()).into_iter().fold(f64::MIN, f64::max);
    push("Cu max".into(), cu_max, (550.0..=650.0).contains(&cu_max));
    let r = |a: Metal, b: Metal| pearson(&m.column(a.index()), &m.column(b.index())).unwrap_or(0.0);
    for (a, b) in [(Metal::Cr, Metal::Hg), (Metal::Cd, Metal::Cr), (Metal::As, Metal::Pb)] {
        let v = r(a, b);
        push(format!("r({a},{b})"), v, v >= 0.6);
    }
    for (a, b) in [(Metal::Zn, Metal::As), (Metal::Zn, Metal::Pb)] {
        let v = r(a, b);
        push(format!("r({a},{b})"), v, v <= 0.0);
    }

    let z = standardize(&m)?;
    let (_, fr) = iforest::detect(&z, &ForestConfig::default())?;
    let (labels, dr) = dbscan::detect(&z, &DbscanConfig::default())?;
    let (_, recon, pr) = pca::detect(&z, &PcaConfig::default())?;
    push("DBSCAN noise".into(), labels.n_noise() as f64, labels.n_noise() == 0);
    push(
        "DBSCAN clusters".into(),
        labels.n_clusters as f64,
        (3..=7).contains(&labels.n_clusters),
    );
    let rep = vote(&[&fr, &dr, &pr], &d.sites(), 2)?;
    let idx = rep.consensus_indices();
    let all_s3 = idx.iter().all(|&i| d.samples[i].site == "S3");
    push("consensus size".into(), idx.len() as f64, idx.len() == 6 && all_s3);
    let controls = idx.iter().filter(|&&i| d.samples[i].is_control).count();
    push("control consensus".into(), controls as f64, controls == 0);

    let hi: Vec<f64> = d
        .samples
        .iter()
        .map(|s| s.risk_given.map_or(f64::NAN, |r: RiskGiven| r.hi_child))
        .collect();
    let mean_of = |want: bool| {
        let v: Vec<f64> = (0..hi.len())
            .filter(|&i| rep.consensus[i] == want)
            .map(|i| hi[i])
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let ratio = mean_of(true) / mean_of(false);
    push("HI ratio".into(), ratio, (1.5..=2.0).contains(&ratio));
    let rr = pearson(&recon.errors, &hi).unwrap_or(f64::NAN);
    push("r(recon error, HI)".into(), rr, rr >= 0.6);
    let min_hi = idx.iter().map(|&i| hi[i]).fold(f64::INFINITY, f64::min);
    push("min consensus HI".into(), min_hi, min_hi > 1.0);
    Ok(out)
}

/// Generates the survey, retrying on calibration failure. Attempts are
/// separate streams of the seeded generator, so output depends only on
/// `cfg`.
pub fn generate(cfg: &GeneratorConfig) -> Result<Generated> {
    cfg.validate()?;
    let risk = RiskConfig::default();
    if !cfg.calibrate {
        return Ok(Generated {
            dataset: draw_dataset(cfg, 0, &risk)?,
            attempt: 0,
            checks: Vec::new(),
        });
    }
    for attempt in 0..cfg.max_retries {
        let dataset = draw_dataset(cfg, attempt, &risk)?;
        let checks = calibration_checks(&dataset)?;
        if checks.iter().all(|c| c.pass) {
            return Ok(Generated {
                dataset,
                attempt,
                checks,
            });
        }
        let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        log::debug!("attempt {attempt} failed: {}", failed.join(", "));
    }
    Err(Error::invalid(
        "synthgen",
        format!(
            "calibration failed after {} attempts with seed {}; try another seed",
            cfg.max_retries, cfg.seed
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let cfg = GeneratorConfig {
            calibrate: false,
            ..GeneratorConfig::default()
        };
        let a = generate(&cfg).unwrap().dataset;
        let b = generate(&cfg).unwrap().dataset;
        assert_eq!(a, b);
        assert_eq!(a.len(), 78);
        assert_eq!(a.samples.iter().filter(|s| s.is_control).count(), 6);
        assert!(a.samples.iter().all(|s| s.conc.iter().all(|&c| c >= 0.0)));
    }

    #[test]
    fn only_twelve_sites() {
        let cfg = GeneratorConfig {
            n_sites: 10,
            ..GeneratorConfig::default()
        };
        assert!(generate(&cfg).is_err());
    }

    #[test]
    fn models_are_positive() {
        for m in site_models() {
            assert!(m.metals.iter().all(|x| x.location > 0.0 && x.scale > 0.0));
        }
    }
}
