//! Chronic daily intake, hazard quotients, Hazard Index and Incremental
//! Lifetime Cancer Risk for adult and child receptors.
//!
//! Intake per pathway (C in mg/kg, CF = 1e-6 kg/mg):
//!
//! ```text
//! ingestion   C · IngR · EF · ED · CF        / (BW · AT)
//! dermal      C · SA · AF · ABS · EF · ED · CF / (BW · AT)
//! inhalation  C · InhR · EF · ED             / (PEF · BW · AT)
//! ```
//!
//! AT is `averaging_time_nc` for hazard quotients and `averaging_time_ca`
//! for cancer risk. Defaults are residential-soil values; every one of them
//! can be overridden from the config file.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{Dataset, Metal, RiskGiven, SampleRecord, N_METALS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Receptor {
    Adult,
    Child,
}

impl Receptor {
    pub const ALL: [Receptor; 2] = [Receptor::Adult, Receptor::Child];

    pub fn name(self) -> &'static str {
        match self {
            Receptor::Adult => "adult",
            Receptor::Child => "child",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pathway {
    Ingestion,
    Dermal,
    Inhalation,
}

impl Pathway {
    pub const ALL: [Pathway; 3] = [Pathway::Ingestion, Pathway::Dermal, Pathway::Inhalation];

    pub fn name(self) -> &'static str {
        match self {
            Pathway::Ingestion => "ingestion",
            Pathway::Dermal => "dermal",
            Pathway::Inhalation => "inhalation",
        }
    }
}

/// Which averaging time an intake is computed against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntakeBasis {
    NonCancer,
    Cancer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceptorParams {
    /// mg/day
    pub ingestion_rate: f64,
    /// m³/day
    pub inhalation_rate: f64,
    /// cm²
    pub skin_area: f64,
    /// mg/cm²·day
    pub adherence_factor: f64,
    /// days/yr
    pub exposure_frequency: f64,
    /// yr
    pub exposure_duration: f64,
    /// kg
    pub body_weight: f64,
    /// days
    pub averaging_time_nc: f64,
    /// days
    pub averaging_time_ca: f64,
    /// m³/kg
    pub particulate_emission_factor: f64,
}

impl ReceptorParams {
    pub fn child_default() -> Self {
        ReceptorParams {
            ingestion_rate: 200.0,
            inhalation_rate: 7.6,
            skin_area: 2800.0,
            adherence_factor: 0.2,
            exposure_frequency: 350.0,
            exposure_duration: 6.0,
            body_weight: 15.0,
            averaging_time_nc: 6.0 * 365.0,
            averaging_time_ca: 70.0 * 365.0,
            particulate_emission_factor: 1.36e9,
        }
    }

    pub fn adult_default() -> Self {
        ReceptorParams {
            ingestion_rate: 100.0,
            inhalation_rate: 20.0,
            skin_area: 5700.0,
            adherence_factor: 0.07,
            exposure_frequency: 350.0,
            exposure_duration: 24.0,
            body_weight: 70.0,
            averaging_time_nc: 24.0 * 365.0,
            averaging_time_ca: 70.0 * 365.0,
            particulate_emission_factor: 1.36e9,
        }
    }

    fn fields(&self) -> [(&'static str, f64); 10] {
        [
            ("ingestion_rate", self.ingestion_rate),
            ("inhalation_rate", self.inhalation_rate),
            ("skin_area", self.skin_area),
            ("adherence_factor", self.adherence_factor),
            ("exposure_frequency", self.exposure_frequency),
            ("exposure_duration", self.exposure_duration),
            ("body_weight", self.body_weight),
            ("averaging_time_nc", self.averaging_time_nc),
            ("averaging_time_ca", self.averaging_time_ca),
            ("particulate_emission_factor", self.particulate_emission_factor),
        ]
    }

    fn validate(&self, receptor: Receptor) -> Result<()> {
        for (name, v) in self.fields() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(
                    "risk",
                    format!("{}.{name} must be > 0, got {v}", receptor.name()),
                ));
            }
        }
        let expect = self.exposure_duration * 365.0;
        if (self.averaging_time_nc - expect).abs() > 1e-9 * expect {
            return Err(Error::invalid(
                "risk",
                format!(
                    "{}.averaging_time_nc must equal exposure_duration·365 = {expect}, got {}",
                    receptor.name(),
                    self.averaging_time_nc
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExposureParams {
    pub adult: ReceptorParams,
    pub child: ReceptorParams,
    /// Dermal absorption fraction ABS per metal.
    pub dermal_absorption: BTreeMap<Metal, f64>,
    /// kg/mg
    pub conversion_factor: f64,
}

impl Default for ExposureParams {
    fn default() -> Self {
        let dermal_absorption = Metal::ALL
            .iter()
            .map(|&m| (m, if m == Metal::As { 0.03 } else { 0.001 }))
            .collect();
        ExposureParams {
            adult: ReceptorParams::adult_default(),
            child: ReceptorParams::child_default(),
            dermal_absorption,
            conversion_factor: 1e-6,
        }
    }
}

impl ExposureParams {
    pub fn receptor(&self, r: Receptor) -> &ReceptorParams {
        match r {
            Receptor::Adult => &self.adult,
            Receptor::Child => &self.child,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adult.validate(Receptor::Adult)?;
        self.child.validate(Receptor::Child)?;
        if self.conversion_factor.is_nan() || self.conversion_factor <= 0.0 {
            return Err(Error::invalid("risk", "conversion_factor must be > 0"));
        }
        for (m, abs) in &self.dermal_absorption {
            if !(*abs > 0.0 && *abs <= 1.0) {
                return Err(Error::invalid(
                    "risk",
                    format!("dermal_absorption.{m} must be in (0, 1], got {abs}"),
                ));
            }
        }
        Ok(())
    }

    fn absorption(&self, metal: Metal) -> Result<f64> {
        self.dermal_absorption
            .get(&metal)
            .copied()
            .ok_or_else(|| Error::MissingParameter(format!("dermal_absorption.{metal}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToxicityEntry {
    pub rfd_ing: Option<f64>,
    /// When absent, derived as `rfd_ing · gi_abs`.
    pub rfd_derm: Option<f64>,
    pub rfd_inh: Option<f64>,
    /// Gastrointestinal absorption fraction.
    pub gi_abs: Option<f64>,
    pub sf_ing: Option<f64>,
    pub sf_derm: Option<f64>,
    pub sf_inh: Option<f64>,
    pub carcinogen: bool,
}

impl ToxicityEntry {
    pub fn reference_dose(&self, pathway: Pathway) -> Option<f64> {
        match pathway {
            Pathway::Ingestion => self.rfd_ing,
            Pathway::Dermal => self.rfd_derm.or_else(|| Some(self.rfd_ing? * self.gi_abs?)),
            Pathway::Inhalation => self.rfd_inh,
        }
    }

    pub fn slope_factor(&self, pathway: Pathway) -> Option<f64> {
        match pathway {
            Pathway::Ingestion => self.sf_ing,
            Pathway::Dermal => self.sf_derm,
            Pathway::Inhalation => self.sf_inh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToxicityTable(pub BTreeMap<Metal, ToxicityEntry>);

impl Default for ToxicityTable {
    fn default() -> Self {
        let entry = |rfd_ing: f64, rfd_inh: f64, gi_abs: f64, sf_ing: Option<f64>| ToxicityEntry {
            rfd_ing: Some(rfd_ing),
            rfd_derm: None,
            rfd_inh: Some(rfd_inh),
            gi_abs: Some(gi_abs),
            sf_ing,
            sf_derm: None,
            sf_inh: None,
            carcinogen: sf_ing.is_some(),
        };
        ToxicityTable(BTreeMap::from([
            (Metal::As, entry(3.0e-4, 3.01e-4, 1.0, Some(1.5))),
            (Metal::Cd, entry(1.0e-3, 1.0e-3, 0.025, Some(0.38))),
            (Metal::Cr, entry(3.0e-3, 2.86e-5, 0.025, Some(0.5))),
            (Metal::Cu, entry(4.0e-2, 4.02e-2, 1.0, None)),
            (Metal::Hg, entry(3.0e-4, 8.57e-5, 0.07, None)),
            (Metal::Ni, entry(2.0e-2, 2.06e-2, 0.04, Some(1.7))),
            (Metal::Pb, entry(3.5e-3, 3.52e-3, 1.0, Some(0.0085))),
            (Metal::Zn, entry(3.0e-1, 3.0e-1, 1.0, None)),
        ]))
    }
}

impl ToxicityTable {
    pub fn entry(&self, metal: Metal) -> Result<&ToxicityEntry> {
        self.0
            .get(&metal)
            .ok_or_else(|| Error::MissingParameter(format!("toxicity.{metal}")))
    }

    pub fn validate(&self) -> Result<()> {
        for (m, e) in &self.0 {
            for p in Pathway::ALL {
                if matches!(e.reference_dose(p), Some(v) if v.is_nan() || v <= 0.0) {
                    return Err(Error::invalid("risk", format!("{m}: {} RfD must be > 0", p.name())));
                }
                if matches!(e.slope_factor(p), Some(v) if v.is_nan() || v < 0.0) {
                    return Err(Error::invalid("risk", format!("{m}: {} SF must be >= 0", p.name())));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub exposure: ExposureParams,
    pub toxicity: ToxicityTable,
}

impl RiskConfig {
    pub fn validate(&self) -> Result<()> {
        self.exposure.validate()?;
        self.toxicity.validate()
    }
}

/// Chronic daily intake in mg/kg·day.
pub fn cdi(
    conc: f64,
    metal: Metal,
    pathway: Pathway,
    p: &ExposureParams,
    receptor: Receptor,
    basis: IntakeBasis,
) -> Result<f64> {
    if conc.is_nan() || conc < 0.0 {
        return Err(Error::invalid(
            "risk",
            format!("concentration must be >= 0, got {conc}"),
        ));
    }
    let r = p.receptor(receptor);
    let at = match basis {
        IntakeBasis::NonCancer => r.averaging_time_nc,
        IntakeBasis::Cancer => r.averaging_time_ca,
    };
    let exposure = r.exposure_frequency * r.exposure_duration / (r.body_weight * at);
    let factor = match pathway {
        Pathway::Ingestion => r.ingestion_rate * p.conversion_factor * exposure,
        Pathway::Dermal => r.skin_area * r.adherence_factor * p.absorption(metal)? * p.conversion_factor * exposure,
        Pathway::Inhalation => r.inhalation_rate / r.particulate_emission_factor * exposure,
    };
    Ok(conc * factor)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardResult {
    /// Non-cancer intake, indexed `[metal][pathway]`.
    pub cdi: [[f64; 3]; N_METALS],
    pub hq: [f64; N_METALS],
    pub hi: f64,
    pub warnings: Vec<String>,
}

impl HazardResult {
    /// HI > 1 marks a potential non-carcinogenic concern.
    pub fn is_concern(&self) -> bool {
        self.hi > 1.0
    }
}

/// HQ per metal (summed over pathways with a reference dose) and their sum.
pub fn hazard_index(
    sample: &SampleRecord,
    t: &ToxicityTable,
    p: &ExposureParams,
    receptor: Receptor,
) -> Result<HazardResult> {
    let mut cdis = [[0.0; 3]; N_METALS];
    let mut hq = [0.0; N_METALS];
    let mut warnings = Vec::new();
    for m in Metal::ALL {
        let entry = t.entry(m)?;
        for (k, path) in Pathway::ALL.into_iter().enumerate() {
            let intake = cdi(sample.conc(m), m, path, p, receptor, IntakeBasis::NonCancer)?;
            cdis[m.index()][k] = intake;
            match entry.reference_dose(path) {
                Some(rfd) => hq[m.index()] += intake / rfd,
                None => warnings.push(format!("{m}: no {} reference dose, pathway skipped", path.name())),
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(HazardResult {
        cdi: cdis,
        hq,
        hi: hq.iter().sum(),
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CancerRiskBand {
    /// below 1e-6
    Negligible,
    /// 1e-6 to 1e-4
    Acceptable,
    /// above 1e-4
    Unacceptable,
}

impl CancerRiskBand {
    pub fn of(ilcr: f64) -> Self {
        if ilcr < 1e-6 {
            CancerRiskBand::Negligible
        } else if ilcr <= 1e-4 {
            CancerRiskBand::Acceptable
        } else {
            CancerRiskBand::Unacceptable
        }
    }
}

impl fmt::Display for CancerRiskBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CancerRiskBand::Negligible => "negligible",
            CancerRiskBand::Acceptable => "acceptable",
            CancerRiskBand::Unacceptable => "unacceptable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CancerRisk {
    pub ilcr: f64,
    pub band: CancerRiskBand,
    /// Per-metal contribution.
    pub by_metal: [f64; N_METALS],
    pub warnings: Vec<String>,
}

/// Σ CDI_ca · SF over carcinogens and pathways with a slope factor.
pub fn ilcr(sample: &SampleRecord, t: &ToxicityTable, p: &ExposureParams, receptor: Receptor) -> Result<CancerRisk> {
    let mut by_metal = [0.0; N_METALS];
    let mut warnings = Vec::new();
    let mut any = false;
    for m in Metal::ALL {
        let entry = t.entry(m)?;
        if !entry.carcinogen {
            continue;
        }
        any = true;
        for path in Pathway::ALL {
            if let Some(sf) = entry.slope_factor(path) {
                by_metal[m.index()] += cdi(sample.conc(m), m, path, p, receptor, IntakeBasis::Cancer)? * sf;
            }
        }
    }
    if !any {
        let w = "no carcinogens configured; ILCR is 0".to_string();
        log::warn!("{w}");
        warnings.push(w);
    }
    let total = by_metal.iter().sum();
    Ok(CancerRisk {
        ilcr: total,
        band: CancerRiskBand::of(total),
        by_metal,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceptorRisk {
    pub hazard: HazardResult,
    pub cancer: CancerRisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRisk {
    pub sample_id: String,
    pub adult: ReceptorRisk,
    pub child: ReceptorRisk,
}

impl SampleRisk {
    pub fn receptor(&self, r: Receptor) -> &ReceptorRisk {
        match r {
            Receptor::Adult => &self.adult,
            Receptor::Child => &self.child,
        }
    }

    pub fn indices(&self) -> RiskGiven {
        RiskGiven {
            hi_adult: self.adult.hazard.hi,
            hi_child: self.child.hazard.hi,
            ilcr_adult: self.adult.cancer.ilcr,
            ilcr_child: self.child.cancer.ilcr,
        }
    }
}

pub fn sample_risk(sample: &SampleRecord, cfg: &RiskConfig) -> Result<SampleRisk> {
    let one = |r| -> Result<ReceptorRisk> {
        Ok(ReceptorRisk {
            hazard: hazard_index(sample, &cfg.toxicity, &cfg.exposure, r)?,
            cancer: ilcr(sample, &cfg.toxicity, &cfg.exposure, r)?,
        })
    };
    Ok(SampleRisk {
        sample_id: sample.sample_id.clone(),
        adult: one(Receptor::Adult)?,
        child: one(Receptor::Child)?,
    })
}

pub fn dataset_risk(d: &Dataset, cfg: &RiskConfig) -> Result<Vec<SampleRisk>> {
    cfg.validate()?;
    d.samples.iter().map(|s| sample_risk(s, cfg)).collect()
}

/// Risk indices used downstream: the CSV's own columns unless `recompute`
/// is set or some sample lacks them.
pub fn resolve_indices(d: &Dataset, cfg: &RiskConfig, recompute: bool) -> Result<(Vec<RiskGiven>, bool)> {
    if !recompute && d.has_risk_columns() {
        return Ok((d.samples.iter().map(|s| s.risk_given.unwrap()).collect(), false));
    }
    Ok((dataset_risk(d, cfg)?.iter().map(SampleRisk::indices).collect(), true))
}
