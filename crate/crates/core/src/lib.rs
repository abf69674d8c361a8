//! Multivariate anomaly detection for networked sensor time series.
//!
//! Observations are whitened per temporal cluster and scored with
//! Hotelling's T^2; a hysteresis filter and penalised change-point
//! segmentation turn the score into anomaly intervals, which are then
//! pre-localised on the network graph by harmonic interpolation of
//! per-sensor z-scores.

pub mod changepoint;
pub mod detection;
pub mod error;
pub mod event;
pub mod io;
pub mod localization;
pub mod lossreg;
pub mod panel;
pub mod stats;
pub mod synthgen;
pub mod training;

pub use chrono::{Duration, NaiveDateTime};
pub use error::{Error, ErrorClass, Result};
