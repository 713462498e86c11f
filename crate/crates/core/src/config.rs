//! Pipeline configuration: a TOML file whose keys mirror the module
//! configs (`iforest.n_trees`, `dbscan.eps`, `pca.quantile`, ...), plus
//! dotted `key=value` overrides and a content digest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::consensus::ConsensusConfig;
use crate::dbscan::DbscanConfig;
use crate::error::{Error, Result};
use crate::iforest::ForestConfig;
use crate::pca::PcaConfig;
use crate::risk::RiskConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Recompute HI/ILCR from concentrations even when the input has them.
    pub recompute_risk: bool,
    /// Write the CSV files used for plotting (k-distance, PCA scatter).
    pub emit_plot_data: bool,
    pub iforest: ForestConfig,
    pub dbscan: DbscanConfig,
    pub pca: PcaConfig,
    pub consensus: ConsensusConfig,
    pub risk: RiskConfig,
}

impl PipelineConfig {
    pub fn defaults() -> Self {
        PipelineConfig {
            emit_plot_data: true,
            ..PipelineConfig::default()
        }
    }

    /// Parses TOML; keys not present keep their defaults.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let mut base = toml::Table::try_from(PipelineConfig::defaults()).map_err(|e| Error::Config(e.to_string()))?;
        let user: toml::Table = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, user);
        let cfg: PipelineConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.iforest.validate()?;
        self.dbscan.validate()?;
        self.pca.validate()?;
        self.consensus.validate()?;
        self.risk.validate()
    }

    /// Sets one dotted key, e.g. `("dbscan.eps", "0.8")`. The key must
    /// already exist; the value is parsed as a TOML literal and falls back to
    /// a plain string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parsed = parse_literal(value);
        let parts: Vec<&str> = key.split('.').collect();
        let mut cur = &mut table;
        for (i, part) in parts.iter().enumerate() {
            let last = i + 1 == parts.len();
            let known = cur.contains_key(*part) || optional_leaf(key);
            if !known {
                return Err(Error::Config(format!("unknown key `{key}`")));
            }
            if last {
                cur.insert(part.to_string(), parsed.clone());
            } else {
                cur = match cur.get_mut(*part) {
                    Some(toml::Value::Table(t)) => t,
                    _ => return Err(Error::Config(format!("unknown key `{key}`"))),
                };
            }
        }
        let cfg: PipelineConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("`{key}` = {value}: {e}")))?;
        cfg.validate()?;
        *self = cfg;
        Ok(())
    }

    /// Applies `key=value` pairs in order.
    pub fn apply_overrides<'a>(&mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for pair in pairs {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{pair}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form (sorted keys) of everything that
    /// affects results. The input and output paths are excluded.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.input = None;
        c.output = None;
        let v = serde_json::to_value(&c).expect("config serializes");
        let bytes = serde_json::to_vec(&v).expect("json value serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Keys that may be absent from the serialized form because their default
/// is `None`.
fn optional_leaf(key: &str) -> bool {
    matches!(key, "input" | "output" | "iforest.subsample")
        || (key.starts_with("risk.toxicity.") && key.split('.').count() == 4)
}

fn parse_literal(value: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig::defaults();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(PipelineConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn dotted_keys_and_sections_agree() {
        let a = PipelineConfig::from_toml_str("dbscan.eps = 0.8\npca.k = 3\n").unwrap();
        let b = PipelineConfig::from_toml_str("[pca]\nk = 3\n[dbscan]\neps = 0.8\n").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dbscan.eps, 0.8);
        assert_eq!(a.dbscan.min_samples, 5);
        assert_eq!(a.digest(), b.digest());
    }

    #[test]
    fn overrides() {
        let mut cfg = PipelineConfig::defaults();
        cfg.apply_overrides(["dbscan.eps=0.1", "iforest.n_trees = 50", "iforest.subsample=64"])
            .unwrap();
        assert_eq!(cfg.dbscan.eps, 0.1);
        assert_eq!(cfg.iforest.n_trees, 50);
        assert_eq!(cfg.iforest.subsample, Some(64));
        cfg.set("risk.exposure.child.body_weight", "16").unwrap();
        assert_eq!(cfg.risk.exposure.child.body_weight, 16.0);
        cfg.set("risk.toxicity.Cu.sf_ing", "0.1").unwrap();
        assert_eq!(cfg.risk.toxicity.0[&crate::geodata::Metal::Cu].sf_ing, Some(0.1));

        assert!(cfg.set("dbscan.epsilon", "1").is_err());
        assert!(cfg.set("dbscan.eps", "\"wide\"").is_err());
        assert!(cfg.set("pca.quantile", "1.5").is_err());
        assert!(cfg.apply_overrides(["pca.k"]).is_err());
    }

    #[test]
    fn unknown_file_keys_rejected() {
        assert!(PipelineConfig::from_toml_str("iforest.trees = 10").is_err());
    }

    #[test]
    fn digest_tracks_parameters_only() {
        let a = PipelineConfig::defaults();
        let mut b = a.clone();
        b.output = Some("elsewhere".into());
        assert_eq!(a.digest(), b.digest());
        b.iforest.seed = 7;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
