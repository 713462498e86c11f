//! Python module `soilscan`: dataset loading and generation, the three
//! detectors, risk indices and the full pipeline. Matrices are passed as
//! lists of rows; structured results come back as dicts.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use soilscan::config::PipelineConfig;
use soilscan::geodata::{self, Dataset, FeatureMatrix, Metal, SampleRecord, N_METALS};
use soilscan::report::{emit_report, run_on_dataset};
use soilscan::risk::{sample_risk as risk_of, RiskConfig};
use soilscan::synthgen::{generate, GeneratorConfig};
use soilscan::{dbscan, iforest, pca, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_dict<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<FeatureMatrix> {
    FeatureMatrix::from_unnamed_rows(&rows).map_err(py_err)
}

fn standardized(rows: Vec<Vec<f64>>) -> PyResult<FeatureMatrix> {
    geodata::standardize(&matrix(rows)?).map_err(py_err)
}

fn pipeline_config(config_toml: Option<&str>, overrides: Option<Vec<String>>) -> PyResult<PipelineConfig> {
    let mut cfg = match config_toml {
        Some(text) => PipelineConfig::from_toml_str(text).map_err(py_err)?,
        None => PipelineConfig::defaults(),
    };
    cfg.apply_overrides(overrides.iter().flatten().map(String::as_str))
        .map_err(py_err)?;
    Ok(cfg)
}

/// A validated survey: one row per sample, eight metal concentrations.
#[pyclass(name = "Dataset", module = "soilscan", frozen)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: geodata::load_dataset(path).map_err(py_err)?,
        })
    }

    /// The calibrated synthetic survey for `seed`.
    #[staticmethod]
    #[pyo3(signature = (seed = 42))]
    fn synthetic(seed: u64) -> PyResult<Self> {
        let cfg = GeneratorConfig {
            seed,
            ..GeneratorConfig::default()
        };
        Ok(PyDataset {
            inner: generate(&cfg).map_err(py_err)?.dataset,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let f = std::fs::File::create(&path).map_err(|e| py_err(Error::io(&path, e)))?;
        geodata::write_dataset(&self.inner, std::io::BufWriter::new(f)).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(n={}, controls={}, risk_columns={})",
            self.inner.len(),
            self.inner.samples.iter().filter(|s| s.is_control).count(),
            self.inner.has_risk_columns()
        )
    }

    #[getter]
    fn sample_ids(&self) -> Vec<String> {
        self.inner.sample_ids()
    }

    #[getter]
    fn sites(&self) -> Vec<String> {
        self.inner.sites()
    }

    #[getter]
    fn is_control(&self) -> Vec<bool> {
        self.inner.samples.iter().map(|s| s.is_control).collect()
    }

    /// Concentrations in mg/kg, columns in `METALS` order.
    fn concentrations(&self) -> Vec<Vec<f64>> {
        self.inner.samples.iter().map(|s| s.conc.to_vec()).collect()
    }

    /// `[hi_adult, hi_child, ilcr_adult, ilcr_child]` per sample, or None.
    fn risk_columns(&self) -> Option<Vec<[f64; 4]>> {
        self.inner
            .samples
            .iter()
            .map(|s| {
                s.risk_given
                    .map(|r| [r.hi_adult, r.hi_child, r.ilcr_adult, r.ilcr_child])
            })
            .collect()
    }

    fn describe(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_dict(py, &geodata::descriptive_stats(&self.inner).map_err(py_err)?)
    }

    fn correlation(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_dict(
            py,
            &geodata::pearson_matrix(&self.inner.feature_matrix()).map_err(py_err)?,
        )
    }
}

/// Column z-scores with population standard deviation.
#[pyfunction]
fn standardize(rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(standardized(rows)?.to_rows())
}

/// Returns `(scores, flags)` on the standardized rows.
#[pyfunction]
#[pyo3(signature = (rows, n_trees = 200, contamination = 0.15, subsample = None, seed = 42))]
fn isolation_forest(
    rows: Vec<Vec<f64>>,
    n_trees: usize,
    contamination: f64,
    subsample: Option<usize>,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<bool>)> {
    let cfg = iforest::ForestConfig {
        n_trees,
        contamination,
        subsample,
        seed,
    };
    let (_, r) = iforest::detect(&standardized(rows)?, &cfg).map_err(py_err)?;
    Ok((r.scores, r.is_anomaly))
}

/// Cluster labels on the standardized rows; -1 is noise.
#[pyfunction]
#[pyo3(signature = (rows, eps = 1.5, min_samples = 5))]
fn dbscan_labels(rows: Vec<Vec<f64>>, eps: f64, min_samples: usize) -> PyResult<Vec<i64>> {
    let c = dbscan::cluster(&standardized(rows)?, &dbscan::DbscanConfig { eps, min_samples }).map_err(py_err)?;
    Ok(c.labels)
}

/// Sorted k-distance profile of the standardized rows and the knee eps.
#[pyfunction]
#[pyo3(signature = (rows, k = 4))]
fn k_distance(rows: Vec<Vec<f64>>, k: usize) -> PyResult<(Vec<f64>, f64)> {
    let profile = dbscan::k_distance_profile(&standardized(rows)?, k).map_err(py_err)?;
    let eps = dbscan::suggest_eps(&profile).map_err(py_err)?.eps;
    Ok((profile, eps))
}

/// Returns `(errors, flags, threshold)` on the standardized rows.
#[pyfunction]
#[pyo3(signature = (rows, k = 2, quantile = 0.85))]
fn pca_reconstruction(rows: Vec<Vec<f64>>, k: usize, quantile: f64) -> PyResult<(Vec<f64>, Vec<bool>, f64)> {
    let (_, r, _) = pca::detect(&standardized(rows)?, &pca::PcaConfig { k, quantile }).map_err(py_err)?;
    Ok((r.errors, r.is_anomaly, r.threshold))
}

/// HI and ILCR for adult and child from eight concentrations (mg/kg).
#[pyfunction]
fn sample_risk(py: Python<'_>, conc: Vec<f64>) -> PyResult<Py<PyAny>> {
    let conc: [f64; N_METALS] = conc
        .try_into()
        .map_err(|_| PyValueError::new_err("expected 8 concentrations"))?;
    let s = SampleRecord {
        sample_id: "sample".into(),
        site: "".into(),
        is_control: false,
        conc,
        risk_given: None,
    };
    let r = risk_of(&s, &RiskConfig::default()).map_err(py_err)?;
    to_dict(py, &r.indices())
}

/// Default configuration as TOML text.
#[pyfunction]
fn default_config() -> PyResult<String> {
    PipelineConfig::defaults().to_toml_string().map_err(py_err)
}

/// Full pipeline; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (dataset, config_toml = None, overrides = None))]
fn run_pipeline(
    py: Python<'_>,
    dataset: &PyDataset,
    config_toml: Option<&str>,
    overrides: Option<Vec<String>>,
) -> PyResult<Py<PyAny>> {
    let cfg = pipeline_config(config_toml, overrides)?;
    let report = py.detach(|| run_on_dataset(&dataset.inner, &cfg)).map_err(py_err)?;
    to_dict(py, &report)
}

/// Full pipeline with report files written to `out_dir`; returns the paths.
#[pyfunction]
#[pyo3(signature = (dataset, out_dir, config_toml = None, overrides = None))]
fn write_report(
    dataset: &PyDataset,
    out_dir: PathBuf,
    config_toml: Option<&str>,
    overrides: Option<Vec<String>>,
) -> PyResult<Vec<PathBuf>> {
    let cfg = pipeline_config(config_toml, overrides)?;
    let report = run_on_dataset(&dataset.inner, &cfg).map_err(py_err)?;
    emit_report(&report, out_dir).map_err(py_err)
}

#[pymodule]
#[pyo3(name = "soilscan")]
fn soilscan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("METALS", Metal::ALL.map(|x| x.name()).to_vec())?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(standardize, m)?)?;
    m.add_function(wrap_pyfunction!(isolation_forest, m)?)?;
    m.add_function(wrap_pyfunction!(dbscan_labels, m)?)?;
    m.add_function(wrap_pyfunction!(k_distance, m)?)?;
    m.add_function(wrap_pyfunction!(pca_reconstruction, m)?)?;
    m.add_function(wrap_pyfunction!(sample_risk, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(write_report, m)?)?;
    Ok(())
}
