//! End-to-end pipeline run and report files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::consensus::{validate, vote, ConsensusReport, ValidationSummary};
use crate::dbscan::{self, ClusterLabels, EpsSuggestion};
use crate::detector::DetectorResult;
use crate::error::{Error, Result};
use crate::geodata::{
    describe_matrix, load_dataset, pearson_matrix, standardize, CorrelationMatrix, Dataset, DescriptiveStats, RiskGiven,
};
use crate::iforest;
use crate::pca;
use crate::risk::resolve_indices;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    /// RFC 3339, UTC. The only field that differs between identical runs.
    pub timestamp: String,
    pub seed: u64,
    pub config_digest: String,
    pub input: Option<String>,
    /// "given" when the input's risk columns were used, else "recomputed".
    pub risk_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KDistance {
    pub k: usize,
    pub profile: Vec<f64>,
    pub suggestion: Option<EpsSuggestion>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub threshold: f64,
    pub errors: Vec<f64>,
    /// First two principal-component scores per sample.
    pub scatter: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleInfo {
    pub sample_id: String,
    pub site: String,
    pub is_control: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub metadata: RunMetadata,
    pub config: PipelineConfig,
    pub samples: Vec<SampleInfo>,
    pub stats: DescriptiveStats,
    pub correlation: CorrelationMatrix,
    /// IF, DBSCAN, PCA.
    pub detectors: Vec<DetectorResult>,
    pub clusters: ClusterLabels,
    pub kdistance: KDistance,
    pub pca: PcaSummary,
    pub consensus: ConsensusReport,
    pub risk: Vec<RiskGiven>,
    pub validation: ValidationSummary,
    pub warnings: Vec<String>,
}

/// Loads `cfg.input` and runs [`run_on_dataset`].
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunReport> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input file given".into()))?;
    let d = load_dataset(input).map_err(|e| e.in_stage("load"))?;
    run_on_dataset(&d, cfg)
}

/// Standardize, run the three detectors, vote, resolve risk indices and
/// validate. Errors carry the name of the stage that raised them.
pub fn run_on_dataset(d: &Dataset, cfg: &PipelineConfig) -> Result<RunReport> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let raw = d.feature_matrix();
    let stats = describe_matrix(&raw).map_err(|e| e.in_stage("stats"))?;
    let z = standardize(&raw).map_err(|e| e.in_stage("standardize"))?;
    let correlation = pearson_matrix(&raw).map_err(|e| e.in_stage("correlate"))?;

    let (if_out, (db_out, pca_out)) = rayon::join(
        || iforest::detect(&z, &cfg.iforest).map_err(|e| e.in_stage("iforest")),
        || {
            rayon::join(
                || dbscan::detect(&z, &cfg.dbscan).map_err(|e| e.in_stage("dbscan")),
                || pca::detect(&z, &cfg.pca).map_err(|e| e.in_stage("pca")),
            )
        },
    );
    let (forest, if_res) = if_out?;
    let (clusters, db_res) = db_out?;
    let (model, recon, pca_res) = pca_out?;

    let mut warnings = forest.warnings.clone();
    let k = cfg.dbscan.min_samples.saturating_sub(1).max(1);
    let kdistance = if k < z.n_rows() {
        let profile = dbscan::k_distance_profile(&z, k).map_err(|e| e.in_stage("kdist"))?;
        let suggestion = dbscan::suggest_eps(&profile).ok();
        if let Some(w) = suggestion.as_ref().and_then(|s| s.warning.clone()) {
            warnings.push(w);
        }
        KDistance { k, profile, suggestion }
    } else {
        KDistance {
            k,
            profile: Vec::new(),
            suggestion: None,
        }
    };

    let scatter_model = if model.components.len() >= 2 || z.n_cols() < 2 {
        model.clone()
    } else {
        pca::fit_pca(&z, 2).map_err(|e| e.in_stage("pca"))?
    };
    let scatter = scatter_model
        .transform(&z)
        .map_err(|e| e.in_stage("pca"))?
        .into_iter()
        .map(|s| [s.first().copied().unwrap_or(0.0), s.get(1).copied().unwrap_or(0.0)])
        .collect();

    let consensus =
        vote(&[&if_res, &db_res, &pca_res], &d.sites(), cfg.consensus.min_votes).map_err(|e| e.in_stage("vote"))?;
    let (risk, recomputed) = resolve_indices(d, &cfg.risk, cfg.recompute_risk).map_err(|e| e.in_stage("risk"))?;
    let validation = validate(&consensus, &risk, &recon.errors, &z, d).map_err(|e| e.in_stage("validate"))?;
    warnings.extend(validation.warnings.iter().cloned());

    Ok(RunReport {
        metadata: RunMetadata {
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            seed: cfg.iforest.seed,
            config_digest: cfg.digest(),
            input: cfg.input.as_ref().map(|p| p.display().to_string()),
            risk_source: if recomputed { "recomputed" } else { "given" }.to_string(),
        },
        config: cfg.clone(),
        samples: d
            .samples
            .iter()
            .map(|s| SampleInfo {
                sample_id: s.sample_id.clone(),
                site: s.site.clone(),
                is_control: s.is_control,
            })
            .collect(),
        stats,
        correlation,
        detectors: vec![if_res, db_res, pca_res],
        clusters,
        kdistance,
        pca: PcaSummary {
            eigenvalues: model.eigenvalues.clone(),
            explained_variance_ratio: recon.explained_variance_ratio.clone(),
            components: model.components.clone(),
            threshold: recon.threshold,
            errors: recon.errors.clone(),
            scatter,
        },
        consensus,
        risk,
        validation,
        warnings,
    })
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok((path, BufWriter::new(f)))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

pub fn write_stats_csv<W: Write>(stats: &DescriptiveStats, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metal", "count", "mean", "std", "min", "p25", "median", "p75", "max"])?;
    for c in &stats.columns {
        out.write_record([
            c.name.clone(),
            c.count.to_string(),
            c.mean.to_string(),
            c.std.to_string(),
            c.min.to_string(),
            c.p25.to_string(),
            c.median.to_string(),
            c.p75.to_string(),
            c.max.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::Csv(e.into()))
}

pub fn write_kdistance_csv<W: Write>(profile: &[f64], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rank", "distance"])?;
    for (i, d) in profile.iter().enumerate() {
        out.write_record([(i + 1).to_string(), d.to_string()])?;
    }
    out.flush().map_err(|e| Error::Csv(e.into()))
}

/// Site rows in site order, then a `Total` row.
pub fn write_count_matrix_csv<W: Write>(c: &ConsensusReport, w: W) -> Result<()> {
    let m = &c.count_matrix;
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["site".to_string(), "n".to_string()];
    header.extend(m.columns.iter().cloned());
    out.write_record(&header)?;
    for ((site, n), row) in m.sites.iter().zip(&m.site_sizes).zip(&m.counts) {
        let mut rec = vec![site.clone(), n.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        out.write_record(&rec)?;
    }
    let mut total = vec!["Total".to_string(), m.site_sizes.iter().sum::<usize>().to_string()];
    total.extend(m.column_totals().iter().map(|v| v.to_string()));
    out.write_record(&total)?;
    out.flush().map_err(|e| Error::Csv(e.into()))
}

pub const ANOMALY_COLUMNS: [&str; 16] = [
    "sample_id",
    "site",
    "is_control",
    "if_score",
    "if_flag",
    "dbscan_label",
    "dbscan_score",
    "dbscan_flag",
    "pca_error",
    "pca_flag",
    "votes",
    "consensus",
    "hi_adult",
    "hi_child",
    "ilcr_adult",
    "ilcr_child",
];

/// One row per sample with detector scores and flags (0/1), votes and risk
/// indices.
pub fn write_anomalies_csv<W: Write>(r: &RunReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(ANOMALY_COLUMNS)?;
    let c = &r.consensus;
    let [ifr, dbr, pcr] = [&r.detectors[0], &r.detectors[1], &r.detectors[2]];
    for (i, s) in r.samples.iter().enumerate() {
        let risk = &r.risk[i];
        out.write_record([
            s.sample_id.clone(),
            s.site.clone(),
            flag(s.is_control).to_string(),
            ifr.scores[i].to_string(),
            flag(ifr.is_anomaly[i]).to_string(),
            r.clusters.labels[i].to_string(),
            dbr.scores[i].to_string(),
            flag(dbr.is_anomaly[i]).to_string(),
            pcr.scores[i].to_string(),
            flag(pcr.is_anomaly[i]).to_string(),
            c.votes[i].to_string(),
            flag(c.consensus[i]).to_string(),
            risk.hi_adult.to_string(),
            risk.hi_child.to_string(),
            risk.ilcr_adult.to_string(),
            risk.ilcr_child.to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::Csv(e.into()))
}

pub fn write_pca_scatter_csv<W: Write>(r: &RunReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "sample_id",
        "site",
        "pc1",
        "pc2",
        "if_flag",
        "dbscan_flag",
        "pca_flag",
        "consensus",
    ])?;
    let c = &r.consensus;
    for (i, s) in r.samples.iter().enumerate() {
        let [p1, p2] = r.pca.scatter[i];
        out.write_record([
            s.sample_id.clone(),
            s.site.clone(),
            p1.to_string(),
            p2.to_string(),
            flag(c.flags[0][i]).to_string(),
            flag(c.flags[1][i]).to_string(),
            flag(c.flags[2][i]).to_string(),
            flag(c.consensus[i]).to_string(),
        ])?;
    }
    out.flush().map_err(|e| Error::Csv(e.into()))
}

/// Writes the report files into `dir`, creating it if needed. Returns the
/// paths written.
pub fn emit_report(r: &RunReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let (p, mut w) = create(dir, "summary.json")?;
    serde_json::to_writer_pretty(&mut w, r)?;
    w.write_all(b"\n").map_err(|e| Error::io(&p, e))?;
    finish(&p, w)?;
    written.push(p);

    type Writer = fn(&RunReport, &mut BufWriter<File>) -> Result<()>;
    let mut files: Vec<(&str, Writer)> = vec![
        ("anomalies.csv", |r, w| write_anomalies_csv(r, w)),
        ("count_matrix.csv", |r, w| write_count_matrix_csv(&r.consensus, w)),
        ("stats.csv", |r, w| write_stats_csv(&r.stats, w)),
    ];
    if r.config.emit_plot_data {
        files.push(("kdistance.csv", |r, w| write_kdistance_csv(&r.kdistance.profile, w)));
        files.push(("pca_scatter.csv", |r, w| write_pca_scatter_csv(r, w)));
    }
    for (name, f) in files {
        let (p, mut w) = create(dir, name)?;
        f(r, &mut w).map_err(|e| match e {
            Error::Csv(c) => Error::io(&p, std::io::Error::other(c.to_string())),
            other => other,
        })?;
        finish(&p, w)?;
        written.push(p);
    }
    Ok(written)
}
