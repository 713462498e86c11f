//! Multi-detector anomaly screening for soil heavy-metal surveys.
//!
//! Three unsupervised detectors (Isolation Forest, DBSCAN and PCA
//! reconstruction error) run on z-scored concentrations of As, Cd, Cr, Cu,
//! Hg, Ni, Pb and Zn. Samples flagged by at least two of them form the
//! consensus set, which is then checked against Hazard Index and cancer-risk
//! estimates and against residential control samples.

#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod consensus;
pub mod dbscan;
pub mod detector;
pub mod error;
pub mod geodata;
pub mod iforest;
pub mod pca;
pub mod report;
pub mod risk;
pub mod synthgen;

pub use detector::{DetectorKind, DetectorResult};
pub use error::{Error, Result};
pub use geodata::{Dataset, FeatureMatrix, Metal, SampleRecord};
