use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorRole {
    Pressure,
    Flow,
    Level,
}

impl fmt::Display for SensorRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SensorRole::Pressure => "pressure",
            SensorRole::Flow => "flow",
            SensorRole::Level => "level",
        })
    }
}

impl FromStr for SensorRole {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pressure" => Ok(SensorRole::Pressure),
            "flow" => Ok(SensorRole::Flow),
            "level" => Ok(SensorRole::Level),
            other => Err(format!("unknown sensor role '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorInfo {
    pub id: String,
    pub role: SensorRole,
    /// Network node the sensor is attached to, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
}

impl SensorInfo {
    pub fn pressure(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            role: SensorRole::Pressure,
            node: None,
        }
    }

    pub fn with_node(mut self, node: impl Into<String>) -> Self {
        self.node = Some(node.into());
        self
    }
}

/// Time-indexed readings for a fixed, named set of sensors.
///
/// Values are stored row-major: one row of `dim()` readings per timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorPanel {
    timestamps: Vec<NaiveDateTime>,
    sensors: Vec<SensorInfo>,
    values: Vec<f64>,
}

impl SensorPanel {
    pub fn new(timestamps: Vec<NaiveDateTime>, sensors: Vec<SensorInfo>, values: Vec<f64>) -> Result<Self> {
        let s = sensors.len();
        if s == 0 {
            return Err(Error::domain("panel has no sensors"));
        }
        if values.len() != timestamps.len() * s {
            return Err(Error::DimensionMismatch {
                expected: timestamps.len() * s,
                actual: values.len(),
            });
        }
        let mut seen = HashSet::new();
        for sensor in &sensors {
            if !seen.insert(sensor.id.as_str()) {
                return Err(Error::domain(format!("duplicate sensor id '{}'", sensor.id)));
            }
        }
        if let Some(i) = timestamps.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::domain(format!(
                "timestamps must be strictly increasing ({} follows {})",
                timestamps[i + 1], timestamps[i]
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite reading for sensor '{}' at {}",
                sensors[k % s].id,
                timestamps[k / s]
            )));
        }
        Ok(Self {
            timestamps,
            sensors,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.sensors.len()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn sensors(&self) -> &[SensorInfo] {
        &self.sensors
    }

    pub fn sensor_ids(&self) -> impl Iterator<Item = &str> {
        self.sensors.iter().map(|s| s.id.as_str())
    }

    pub fn sensor_index(&self, id: &str) -> Option<usize> {
        self.sensors.iter().position(|s| s.id == id)
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let s = self.dim();
        &self.values[t * s..(t + 1) * s]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Step between consecutive timestamps, if the panel has at least two rows.
    pub fn step(&self) -> Option<chrono::Duration> {
        if self.timestamps.len() < 2 {
            None
        } else {
            Some(self.timestamps[1] - self.timestamps[0])
        }
    }

    /// Reorders (and subsets) columns to match `ids`, binding by name.
    pub fn select(&self, ids: &[&str]) -> Result<SensorPanel> {
        let lookup: HashMap<&str, usize> = self.sensors.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
        let cols = ids
            .iter()
            .map(|id| lookup.get(id).copied().ok_or_else(|| Error::UnknownSensor((*id).to_string())))
            .collect::<Result<Vec<_>>>()?;
        let mut values = Vec::with_capacity(self.len() * cols.len());
        for row in self.rows() {
            values.extend(cols.iter().map(|&c| row[c]));
        }
        Ok(SensorPanel {
            timestamps: self.timestamps.clone(),
            sensors: cols.iter().map(|&c| self.sensors[c].clone()).collect(),
            values,
        })
    }

    /// Keeps rows whose timestamp satisfies `keep`.
    pub fn filter_rows(&self, mut keep: impl FnMut(NaiveDateTime) -> bool) -> SensorPanel {
        let mut timestamps = Vec::new();
        let mut values = Vec::new();
        for (t, row) in self.timestamps.iter().zip(self.rows()) {
            if keep(*t) {
                timestamps.push(*t);
                values.extend_from_slice(row);
            }
        }
        SensorPanel {
            timestamps,
            sensors: self.sensors.clone(),
            values,
        }
    }

    /// Rows in the half-open index range.
    pub fn slice(&self, range: std::ops::Range<usize>) -> SensorPanel {
        let s = self.dim();
        SensorPanel {
            timestamps: self.timestamps[range.clone()].to_vec(),
            sensors: self.sensors.clone(),
            values: self.values[range.start * s..range.end * s].to_vec(),
        }
    }

    /// Replaces sensor metadata (roles, node bindings) keeping the same ids.
    pub fn with_sensor_info(mut self, info: &[SensorInfo]) -> Result<SensorPanel> {
        for sensor in &mut self.sensors {
            if let Some(src) = info.iter().find(|i| i.id == sensor.id) {
                *sensor = src.clone();
            }
        }
        Ok(self)
    }
}
