//! Sample records, CSV ingestion, descriptive statistics, Pearson
//! correlation and z-score standardization of the eight-metal feature set.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The eight analysed metals, in the fixed column order used by every
/// derived matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metal {
    As,
    Cd,
    Cr,
    Cu,
    Hg,
    Ni,
    Pb,
    Zn,
}

pub const N_METALS: usize = 8;

impl Metal {
    pub const ALL: [Metal; N_METALS] = [
        Metal::As,
        Metal::Cd,
        Metal::Cr,
        Metal::Cu,
        Metal::Hg,
        Metal::Ni,
        Metal::Pb,
        Metal::Zn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metal::As => "As",
            Metal::Cd => "Cd",
            Metal::Cr => "Cr",
            Metal::Cu => "Cu",
            Metal::Hg => "Hg",
            Metal::Ni => "Ni",
            Metal::Pb => "Pb",
            Metal::Zn => "Zn",
        }
    }

    /// Column position in `Metal::ALL`.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Metal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metal::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid("geodata", format!("unknown metal `{s}`")))
    }
}

pub const CONTROL_SITE: &str = "Residential";

/// Risk indices shipped alongside the concentrations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskGiven {
    pub hi_adult: f64,
    pub hi_child: f64,
    pub ilcr_adult: f64,
    pub ilcr_child: f64,
}

/// One soil sample. Concentrations are mg/kg, indexed by [`Metal::index`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub site: String,
    pub is_control: bool,
    pub conc: [f64; N_METALS],
    pub risk_given: Option<RiskGiven>,
}

impl SampleRecord {
    pub fn conc(&self, metal: Metal) -> f64 {
        self.conc[metal.index()]
    }

    /// Copy of this sample with every concentration zeroed except `metal`.
    pub fn single_metal(&self, metal: Metal) -> SampleRecord {
        let mut out = self.clone();
        out.conc = [0.0; N_METALS];
        out.conc[metal.index()] = self.conc(metal);
        out.risk_given = None;
        out
    }

    pub fn scaled(&self, alpha: f64) -> SampleRecord {
        let mut out = self.clone();
        for c in out.conc.iter_mut() {
            *c *= alpha;
        }
        out.risk_given = None;
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<SampleRecord>,
}

impl Dataset {
    /// Validates the record invariants: unique ids, non-negative finite
    /// concentrations, and `is_control` exactly for the residential site.
    pub fn new(samples: Vec<SampleRecord>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::NoData);
        }
        let mut seen = HashSet::new();
        for (i, s) in samples.iter().enumerate() {
            let row = i + 1;
            if !seen.insert(s.sample_id.as_str()) {
                return Err(Error::DuplicateSample {
                    row,
                    id: s.sample_id.clone(),
                });
            }
            for m in Metal::ALL {
                let c = s.conc(m);
                if !c.is_finite() || c < 0.0 {
                    return Err(Error::Parse {
                        row,
                        column: m.name().to_string(),
                        message: format!("concentration must be finite and >= 0, got {c}"),
                    });
                }
            }
            if s.is_control != (s.site == CONTROL_SITE) {
                return Err(Error::Parse {
                    row,
                    column: "is_control".into(),
                    message: format!("is_control={} inconsistent with site `{}`", s.is_control, s.site),
                });
            }
        }
        Ok(Dataset { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn metal_order(&self) -> &'static [Metal; N_METALS] {
        &Metal::ALL
    }

    pub fn sample_ids(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.sample_id.clone()).collect()
    }

    pub fn sites(&self) -> Vec<String> {
        self.samples.iter().map(|s| s.site.clone()).collect()
    }

    pub fn has_risk_columns(&self) -> bool {
        self.samples.iter().all(|s| s.risk_given.is_some())
    }

    /// Raw n×8 concentration matrix.
    pub fn feature_matrix(&self) -> FeatureMatrix {
        let mut values = Vec::with_capacity(self.len() * N_METALS);
        for s in &self.samples {
            values.extend_from_slice(&s.conc);
        }
        FeatureMatrix {
            values,
            n_rows: self.len(),
            columns: Metal::ALL.iter().map(|m| m.name().to_string()).collect(),
            row_ids: self.sample_ids(),
            standardized: false,
            col_means: None,
            col_stds: None,
        }
    }
}

const ID_COL: &str = "sample_id";
const SITE_COL: &str = "site";
const CONTROL_COL: &str = "is_control";
const RISK_COLS: [&str; 4] = ["hi_adult", "hi_child", "ilcr_adult", "ilcr_child"];

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(file)
}

/// Parses the sample CSV. Risk columns are optional but must appear as a
/// complete set of four.
pub fn read_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .has_headers(false)
        .from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h?,
        None => return Err(Error::NoData),
    };
    let find = |name: &str| header.iter().position(|h| h == name);
    let col = |name: &str| find(name).ok_or_else(|| Error::MissingColumn(name.to_string()));

    let id_idx = col(ID_COL)?;
    let site_idx = col(SITE_COL)?;
    let control_idx = col(CONTROL_COL)?;
    let mut metal_idx = [0usize; N_METALS];
    for m in Metal::ALL {
        metal_idx[m.index()] = col(m.name())?;
    }
    let risk_present: Vec<Option<usize>> = RISK_COLS.iter().map(|c| find(c)).collect();
    let risk_idx = if risk_present.iter().all(Option::is_some) {
        Some(risk_present.iter().map(|i| i.unwrap()).collect::<Vec<_>>())
    } else if let Some(k) = risk_present.iter().position(Option::is_some) {
        let missing = RISK_COLS
            .iter()
            .zip(&risk_present)
            .find(|(_, p)| p.is_none())
            .map(|(c, _)| *c)
            .unwrap_or(RISK_COLS[k]);
        return Err(Error::MissingColumn(missing.to_string()));
    } else {
        None
    };

    let mut samples = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 1;
        let rec = rec?;
        let field = |idx: usize, name: &str| -> Result<&str> {
            match rec.get(idx) {
                Some(v) if !v.is_empty() => Ok(v),
                _ => Err(Error::Parse {
                    row,
                    column: name.to_string(),
                    message: "missing value".into(),
                }),
            }
        };
        let number = |idx: usize, name: &str| -> Result<f64> {
            let raw = field(idx, name)?;
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: name.to_string(),
                    message: format!("not a number: `{raw}`"),
                })
        };

        let sample_id = field(id_idx, ID_COL)?.to_string();
        let site = field(site_idx, SITE_COL)?.to_string();
        let is_control = match field(control_idx, CONTROL_COL)?.to_ascii_lowercase().as_str() {
            "true" | "1" => true,
            "false" | "0" => false,
            other => {
                return Err(Error::Parse {
                    row,
                    column: CONTROL_COL.into(),
                    message: format!("expected true/false/0/1, got `{other}`"),
                })
            }
        };
        let mut conc = [0.0; N_METALS];
        for m in Metal::ALL {
            let v = number(metal_idx[m.index()], m.name())?;
            if v < 0.0 {
                return Err(Error::Parse {
                    row,
                    column: m.name().to_string(),
                    message: format!("negative concentration {v}"),
                });
            }
            conc[m.index()] = v;
        }
        let risk_given = match &risk_idx {
            Some(idx) => Some(RiskGiven {
                hi_adult: number(idx[0], RISK_COLS[0])?,
                hi_child: number(idx[1], RISK_COLS[1])?,
                ilcr_adult: number(idx[2], RISK_COLS[2])?,
                ilcr_child: number(idx[3], RISK_COLS[3])?,
            }),
            None => None,
        };
        samples.push(SampleRecord {
            sample_id,
            site,
            is_control,
            conc,
            risk_given,
        });
    }
    Dataset::new(samples)
}

/// Writes the dataset in the same CSV layout `read_dataset` accepts.
/// Concentrations are written with two decimals; risk values with full
/// round-trip precision.
pub fn write_dataset<W: Write>(d: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let with_risk = d.has_risk_columns();
    let mut header: Vec<&str> = vec![ID_COL, SITE_COL, CONTROL_COL];
    header.extend(Metal::ALL.iter().map(|m| m.name()));
    if with_risk {
        header.extend(RISK_COLS);
    }
    w.write_record(&header)?;
    for s in &d.samples {
        let mut rec = vec![s.sample_id.clone(), s.site.clone(), s.is_control.to_string()];
        rec.extend(s.conc.iter().map(|c| format!("{c:.2}")));
        if let (true, Some(r)) = (with_risk, s.risk_given) {
            rec.extend(
                [r.hi_adult, r.hi_child, r.ilcr_adult, r.ilcr_child]
                    .iter()
                    .map(|v| v.to_string()),
            );
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Dense row-major n×d matrix with column names and row → sample mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    n_rows: usize,
    pub columns: Vec<String>,
    pub row_ids: Vec<String>,
    pub standardized: bool,
    pub col_means: Option<Vec<f64>>,
    pub col_stds: Option<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn from_rows(columns: Vec<String>, row_ids: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let d = columns.len();
        if rows.len() != row_ids.len() {
            return Err(Error::invalid(
                "geodata",
                format!("{} rows but {} row ids", rows.len(), row_ids.len()),
            ));
        }
        let mut values = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::invalid(
                    "geodata",
                    format!("row {} has {} values, expected {d}", i + 1, r.len()),
                ));
            }
            values.extend_from_slice(r);
        }
        Ok(FeatureMatrix {
            values,
            n_rows: rows.len(),
            columns,
            row_ids,
            standardized: false,
            col_means: None,
            col_stds: None,
        })
    }

    /// Anonymous matrix with generated column (`x0`, `x1`, ...) and row ids.
    pub fn from_unnamed_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let columns = (0..d).map(|j| format!("x{j}")).collect();
        let row_ids = (0..rows.len()).map(|i| format!("r{i}")).collect();
        Self::from_rows(columns, row_ids, rows)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_cols();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n_rows).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Undoes standardization (z·std + mean).
    pub fn inverse_transform(&self) -> Result<FeatureMatrix> {
        let (Some(means), Some(stds)) = (&self.col_means, &self.col_stds) else {
            return Err(Error::invalid(
                "geodata",
                "matrix carries no standardization parameters",
            ));
        };
        let d = self.n_cols();
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(k, z)| z * stds[k % d] + means[k % d])
            .collect();
        Ok(FeatureMatrix {
            values,
            n_rows: self.n_rows,
            columns: self.columns.clone(),
            row_ids: self.row_ids.clone(),
            standardized: false,
            col_means: None,
            col_stds: None,
        })
    }

    /// Indices of columns recorded with zero standard deviation.
    pub fn zero_variance_columns(&self) -> Vec<usize> {
        self.col_stds
            .as_ref()
            .map(|s| (0..s.len()).filter(|&j| s[j] == 0.0).collect())
            .unwrap_or_default()
    }
}

fn mean(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    // second pass removes most of the rounding error of the first
    m + xs.iter().map(|x| x - m).sum::<f64>() / n
}

/// Population (n-denominator) standard deviation.
fn population_std(xs: &[f64], m: f64) -> f64 {
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Per-column z-scores with population standard deviation. Zero-variance
/// columns become all zeros (with a logged warning) and keep std = 0 in
/// `col_stds`.
pub fn standardize(m: &FeatureMatrix) -> Result<FeatureMatrix> {
    if m.standardized {
        return Err(Error::invalid("geodata", "matrix is already standardized"));
    }
    if m.n_rows() < 2 {
        return Err(Error::invalid(
            "geodata",
            format!("standardization needs at least 2 samples, got {}", m.n_rows()),
        ));
    }
    let d = m.n_cols();
    let mut means = vec![0.0; d];
    let mut stds = vec![0.0; d];
    for j in 0..d {
        let col = m.column(j);
        means[j] = mean(&col);
        let s = population_std(&col, means[j]);
        if s <= f64::EPSILON * means[j].abs() || s == 0.0 {
            log::warn!("column `{}` has zero variance; standardized to zeros", m.columns[j]);
            stds[j] = 0.0;
        } else {
            stds[j] = s;
        }
    }
    let values = m
        .values
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let j = k % d;
            if stds[j] == 0.0 {
                0.0
            } else {
                (x - means[j]) / stds[j]
            }
        })
        .collect();
    Ok(FeatureMatrix {
        values,
        n_rows: m.n_rows,
        columns: m.columns.clone(),
        row_ids: m.row_ids.clone(),
        standardized: true,
        col_means: Some(means),
        col_stds: Some(stds),
    })
}

/// Linear-interpolation quantile between order statistics ("type 7").
/// `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub name: String,
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation (n−1). Reported as 0 when `count < 2`.
    pub std: f64,
    pub std_defined: bool,
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveStats {
    pub columns: Vec<ColumnStats>,
    pub std_convention: String,
    pub quantile_rule: String,
}

impl DescriptiveStats {
    pub fn get(&self, name: &str) -> Option<&ColumnStats> {
        self.columns.iter().find(|c| c.name == name)
    }
}

pub fn describe_column(name: &str, values: &[f64]) -> Result<ColumnStats> {
    if values.is_empty() {
        return Err(Error::NoData);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = values.len();
    let mu = mean(values);
    let std_defined = n >= 2;
    let std = if std_defined {
        (values.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(ColumnStats {
        name: name.to_string(),
        count: n,
        mean: mu,
        std,
        std_defined,
        min: sorted[0],
        p25: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        p75: quantile_sorted(&sorted, 0.75),
        max: sorted[n - 1],
    })
}

pub fn describe_matrix(m: &FeatureMatrix) -> Result<DescriptiveStats> {
    let columns = (0..m.n_cols())
        .map(|j| describe_column(&m.columns[j], &m.column(j)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DescriptiveStats {
        columns,
        std_convention: "sample (n-1)".into(),
        quantile_rule: "linear interpolation (type 7)".into(),
    })
}

/// Per-metal count, mean, sample std, min, quartiles and max.
pub fn descriptive_stats(d: &Dataset) -> Result<DescriptiveStats> {
    if d.is_empty() {
        return Err(Error::NoData);
    }
    describe_matrix(&d.feature_matrix())
}

/// Pearson correlation of two equal-length series; `None` when either has
/// zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson: length mismatch");
    if x.len() < 2 {
        return None;
    }
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub columns: Vec<String>,
    pub values: Vec<Vec<f64>>,
    /// Columns with zero variance; their off-diagonal entries are 0.
    pub zero_variance: Vec<String>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.columns.iter().position(|c| c == a)?;
        let j = self.columns.iter().position(|c| c == b)?;
        Some(self.values[i][j])
    }
}

pub fn pearson_matrix(m: &FeatureMatrix) -> Result<CorrelationMatrix> {
    if m.n_rows() < 2 {
        return Err(Error::invalid("geodata", "correlation needs at least 2 samples"));
    }
    let d = m.n_cols();
    let cols: Vec<Vec<f64>> = (0..d).map(|j| m.column(j)).collect();
    let mut values = vec![vec![0.0; d]; d];
    let mut zero_variance = Vec::new();
    for i in 0..d {
        values[i][i] = 1.0;
        if cols[i].iter().all(|&v| v == cols[i][0]) {
            log::warn!("column `{}` has zero variance; correlations set to 0", m.columns[i]);
            zero_variance.push(m.columns[i].clone());
        }
        for j in (i + 1)..d {
            let r = pearson(&cols[i], &cols[j]).unwrap_or(0.0);
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        columns: m.columns.clone(),
        values,
        zero_variance,
    })
}
