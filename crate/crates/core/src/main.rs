use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use soilscan::config::PipelineConfig;
use soilscan::consensus::vote;
use soilscan::error::{Error, Result};
use soilscan::geodata::{describe_matrix, load_dataset, pearson_matrix, standardize, write_dataset, Dataset};
use soilscan::report::{
    emit_report, run_on_dataset, write_anomalies_csv, write_count_matrix_csv, write_kdistance_csv, write_stats_csv,
};
use soilscan::risk::dataset_risk;
use soilscan::synthgen::{generate, GeneratorConfig};
use soilscan::{dbscan, iforest, pca};

#[derive(Parser)]
#[command(
    name = "soilscan",
    version,
    about = "Consensus anomaly screening for soil heavy-metal surveys"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Isolation Forest seed; for `synth`, the generator seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (`synth`: output CSV file).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Recompute HI/ILCR instead of using the input's risk columns.
    #[arg(long, global = true)]
    recompute_risk: bool,
    /// Override any config key, e.g. `--set risk.exposure.child.body_weight=16`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[arg(long = "iforest.n_trees", global = true, value_name = "N")]
    iforest_n_trees: Option<String>,
    #[arg(long = "iforest.contamination", global = true, value_name = "F")]
    iforest_contamination: Option<String>,
    #[arg(long = "iforest.subsample", global = true, value_name = "N")]
    iforest_subsample: Option<String>,
    #[arg(long = "iforest.seed", global = true, value_name = "N")]
    iforest_seed: Option<String>,
    #[arg(long = "dbscan.eps", global = true, value_name = "F")]
    dbscan_eps: Option<String>,
    #[arg(long = "dbscan.min_samples", global = true, value_name = "N")]
    dbscan_min_samples: Option<String>,
    #[arg(long = "pca.k", global = true, value_name = "N")]
    pca_k: Option<String>,
    #[arg(long = "pca.quantile", global = true, value_name = "F")]
    pca_quantile: Option<String>,
    #[arg(long = "consensus.min_votes", global = true, value_name = "N")]
    consensus_min_votes: Option<String>,
}

impl GlobalArgs {
    fn dotted(&self) -> Vec<String> {
        let pairs = [
            ("iforest.n_trees", &self.iforest_n_trees),
            ("iforest.contamination", &self.iforest_contamination),
            ("iforest.subsample", &self.iforest_subsample),
            ("iforest.seed", &self.iforest_seed),
            ("dbscan.eps", &self.dbscan_eps),
            ("dbscan.min_samples", &self.dbscan_min_samples),
            ("pca.k", &self.pca_k),
            ("pca.quantile", &self.pca_quantile),
            ("consensus.min_votes", &self.consensus_min_votes),
        ];
        pairs
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| format!("{k}={v}")))
            .chain(self.set.iter().cloned())
            .collect()
    }

    fn pipeline_config(&self, input: Option<&Path>) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::defaults(),
        };
        if let Some(seed) = self.seed {
            cfg.iforest.seed = seed;
        }
        cfg.apply_overrides(self.dotted().iter().map(String::as_str))?;
        if self.recompute_risk {
            cfg.recompute_risk = true;
        }
        if let Some(p) = input {
            cfg.input = Some(p.to_path_buf());
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Per-metal descriptive statistics.
    Stats(InputArg),
    /// Pearson correlation matrix of the metal concentrations.
    Correlate(InputArg),
    /// Sorted k-distance profile and suggested DBSCAN eps.
    Kdist {
        input: Option<PathBuf>,
        /// Neighbour rank; defaults to dbscan.min_samples − 1.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Run the three detectors and the consensus vote.
    Detect(InputArg),
    /// Hazard Index and cancer risk per sample.
    Risk(InputArg),
    /// Generate the synthetic survey CSV.
    Synth {
        /// Return the first draw without calibration checks.
        #[arg(long)]
        no_calibrate: bool,
    },
    /// Full pipeline with all report files.
    Report(InputArg),
}

#[derive(Args)]
struct InputArg {
    /// Input CSV; falls back to `input` in the config file.
    input: Option<PathBuf>,
}

fn load_input(cfg: &PipelineConfig) -> Result<Dataset> {
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| Error::Config("no input file given".into()))?;
    load_dataset(path)
}

fn out_file(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
    Ok((path, BufWriter::new(f)))
}

fn fmt_row(label: &str, values: impl IntoIterator<Item = String>) -> String {
    let mut s = format!("{label:<8}");
    for v in values {
        s.push_str(&format!("{v:>10}"));
    }
    s
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let input = match &cli.command {
        Command::Stats(a) | Command::Correlate(a) | Command::Detect(a) | Command::Risk(a) | Command::Report(a) => {
            a.input.as_deref()
        }
        Command::Kdist { input, .. } => input.as_deref(),
        Command::Synth { .. } => None,
    };
    let cfg = g.pipeline_config(input)?;
    if g.print_config {
        if let Command::Synth { no_calibrate } = cli.command {
            let gen = GeneratorConfig {
                seed: g.seed.unwrap_or(42),
                calibrate: !no_calibrate,
                ..GeneratorConfig::default()
            };
            print!(
                "{}",
                toml::to_string_pretty(&gen).map_err(|e| Error::Config(e.to_string()))?
            );
        } else {
            print!("{}", cfg.to_toml_string()?);
        }
        return Ok(());
    }
    let stdout = io::stdout();

    match cli.command {
        Command::Stats(_) => {
            let d = load_input(&cfg)?;
            let stats = describe_matrix(&d.feature_matrix())?;
            write_stats_csv(&stats, stdout.lock())?;
            if let Some(dir) = &g.out {
                let (_, w) = out_file(dir, "stats.csv")?;
                write_stats_csv(&stats, w)?;
            }
        }
        Command::Correlate(_) => {
            let d = load_input(&cfg)?;
            let c = pearson_matrix(&d.feature_matrix())?;
            println!("{}", fmt_row("", c.columns.iter().cloned()));
            for (name, row) in c.columns.iter().zip(&c.values) {
                println!("{}", fmt_row(name, row.iter().map(|v| format!("{v:.3}"))));
            }
            if let Some(dir) = &g.out {
                let (_, w) = out_file(dir, "correlation.csv")?;
                let mut out = csv::Writer::from_writer(w);
                let mut header = vec!["metal".to_string()];
                header.extend(c.columns.iter().cloned());
                out.write_record(&header)?;
                for (name, row) in c.columns.iter().zip(&c.values) {
                    let mut rec = vec![name.clone()];
                    rec.extend(row.iter().map(|v| v.to_string()));
                    out.write_record(&rec)?;
                }
                out.flush().map_err(|e| Error::Csv(e.into()))?;
            }
        }
        Command::Kdist { k, .. } => {
            let d = load_input(&cfg)?;
            let z = standardize(&d.feature_matrix())?;
            let k = k.unwrap_or(cfg.dbscan.min_samples.saturating_sub(1).max(1));
            let profile = dbscan::k_distance_profile(&z, k)?;
            let s = dbscan::suggest_eps(&profile)?;
            write_kdistance_csv(&profile, stdout.lock())?;
            eprintln!("k = {k}; suggested eps = {:.4} (rank {})", s.eps, s.rank + 1);
            if let Some(w) = s.warning {
                eprintln!("warning: {w}");
            }
            if let Some(dir) = &g.out {
                let (_, w) = out_file(dir, "kdistance.csv")?;
                write_kdistance_csv(&profile, w)?;
            }
        }
        Command::Detect(_) => {
            let d = load_input(&cfg)?;
            let z = standardize(&d.feature_matrix())?;
            let (_, fr) = iforest::detect(&z, &cfg.iforest)?;
            let (labels, dr) = dbscan::detect(&z, &cfg.dbscan)?;
            let (_, _, pr) = pca::detect(&z, &cfg.pca)?;
            let rep = vote(&[&fr, &dr, &pr], &d.sites(), cfg.consensus.min_votes)?;
            println!(
                "IF {}  DBSCAN noise {} ({} clusters)  PCA {}  consensus {}",
                fr.n_flagged(),
                dr.n_flagged(),
                labels.n_clusters,
                pr.n_flagged(),
                rep.consensus_total
            );
            write_count_matrix_csv(&rep, stdout.lock())?;
            for i in rep.consensus_indices() {
                println!(
                    "consensus: {} ({}) votes={}",
                    rep.row_ids[i], rep.sites[i], rep.votes[i]
                );
            }
            if let Some(dir) = &g.out {
                let r = run_on_dataset(&d, &cfg)?;
                let (_, w) = out_file(dir, "anomalies.csv")?;
                write_anomalies_csv(&r, w)?;
                let (_, w) = out_file(dir, "count_matrix.csv")?;
                write_count_matrix_csv(&r.consensus, w)?;
            }
        }
        Command::Risk(_) => {
            let d = load_input(&cfg)?;
            let risks = dataset_risk(&d, &cfg.risk)?;
            let mut out = csv::Writer::from_writer(stdout.lock());
            let header = [
                "sample_id",
                "site",
                "hi_adult",
                "hi_child",
                "ilcr_adult",
                "ilcr_child",
                "band_adult",
                "band_child",
            ];
            out.write_record(header)?;
            let mut rows = Vec::new();
            for (s, r) in d.samples.iter().zip(&risks) {
                let rec = vec![
                    s.sample_id.clone(),
                    s.site.clone(),
                    r.adult.hazard.hi.to_string(),
                    r.child.hazard.hi.to_string(),
                    r.adult.cancer.ilcr.to_string(),
                    r.child.cancer.ilcr.to_string(),
                    r.adult.cancer.band.to_string(),
                    r.child.cancer.band.to_string(),
                ];
                out.write_record(&rec)?;
                rows.push(rec);
            }
            out.flush().map_err(|e| Error::Csv(e.into()))?;
            if let Some(dir) = &g.out {
                let (_, w) = out_file(dir, "risk.csv")?;
                let mut out = csv::Writer::from_writer(w);
                out.write_record(header)?;
                for r in rows {
                    out.write_record(&r)?;
                }
                out.flush().map_err(|e| Error::Csv(e.into()))?;
            }
        }
        Command::Synth { no_calibrate } => {
            let gen = GeneratorConfig {
                seed: g.seed.unwrap_or(42),
                calibrate: !no_calibrate,
                ..GeneratorConfig::default()
            };
            let res = generate(&gen)?;
            log::info!("seed {} accepted on attempt {}", gen.seed, res.attempt);
            match &g.out {
                Some(path) => {
                    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
                    }
                    let f = File::create(path).map_err(|e| Error::io(path, e))?;
                    write_dataset(&res.dataset, BufWriter::new(f))?;
                    eprintln!("wrote {} samples to {}", res.dataset.len(), path.display());
                }
                None => write_dataset(&res.dataset, stdout.lock())?,
            }
        }
        Command::Report(_) => {
            let d = load_input(&cfg)?;
            let r = run_on_dataset(&d, &cfg)?;
            let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("soilscan-out"));
            let written = emit_report(&r, &dir)?;
            let c = &r.consensus;
            println!(
                "IF {}  DBSCAN {}  PCA {}  consensus {}  (controls flagged: {})",
                c.detector_totals[0],
                c.detector_totals[1],
                c.detector_totals[2],
                c.consensus_total,
                r.validation.control_consensus
            );
            for v in &r.validation.receptors {
                let ratio = v.consensus.hi_ratio.map_or("undefined".into(), |x| format!("{x:.3}"));
                let corr = v.recon_error_hi_r.map_or("undefined".into(), |x| format!("{x:.3}"));
                println!("{:>5}: HI ratio {ratio}  r(recon error, HI) {corr}", v.receptor.name());
            }
            for p in written {
                println!("wrote {}", p.display());
            }
        }
    }
    io::stdout().flush().ok();
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                let text = s.to_string();
                if !msg.contains(&text) {
                    msg.push_str(&format!("\n  caused by: {text}"));
                }
                src = s.source();
            }
            eprintln!("{msg}");
            ExitCode::FAILURE
        }
    }
}
