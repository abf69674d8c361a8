use std::fmt;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// Outflow steps straight to its maximum.
    Abrupt,
    /// Outflow ramps up to a plateau.
    Incipient,
    /// Constant offset on a single sensor.
    SensorBias,
    /// Detected anomaly whose type has not been determined.
    Unclassified,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Abrupt => "abrupt",
            EventKind::Incipient => "incipient",
            EventKind::SensorBias => "sensor-bias",
            EventKind::Unclassified => "unclassified",
        })
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "abrupt" | "yes" | "true" => Ok(EventKind::Abrupt),
            "incipient" | "no" | "false" => Ok(EventKind::Incipient),
            "sensor-bias" | "bias" => Ok(EventKind::SensorBias),
            "unclassified" | "" => Ok(EventKind::Unclassified),
            other => Err(format!("unknown event kind '{other}'")),
        }
    }
}

/// Where an event happened: a graph node id or planar coordinates in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Location {
    Node(String),
    Point { x: f64, y: f64 },
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Node(id) => f.write_str(id),
            Location::Point { x, y } => write!(f, "@{x}:{y}"),
        }
    }
}

impl FromStr for Location {
    type Err = String;

    /// `node_id`, or `@x:y` for coordinates.
    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix('@') {
            let (x, y) = rest.split_once(':').ok_or_else(|| format!("bad point location '{s}'"))?;
            let x = x.parse().map_err(|_| format!("bad x coordinate in '{s}'"))?;
            let y = y.parse().map_err(|_| format!("bad y coordinate in '{s}'"))?;
            Ok(Location::Point { x, y })
        } else if s.is_empty() {
            Err("empty location".into())
        } else {
            Ok(Location::Node(s.to_string()))
        }
    }
}

/// A ground-truth or detected anomaly interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub id: String,
    pub kind: EventKind,
    pub start: NaiveDateTime,
    /// Inclusive end; `None` for events still open at the end of the record.
    pub end: Option<NaiveDateTime>,
    pub location: Option<Location>,
    /// Peak outflow in m^3/h (leaks) or offset (sensor bias).
    pub magnitude: Option<f64>,
    pub area: Option<String>,
    pub detected: Option<NaiveDateTime>,
}

impl EventRecord {
    pub fn new(id: impl Into<String>, kind: EventKind, start: NaiveDateTime, end: Option<NaiveDateTime>) -> Self {
        Self {
            id: id.into(),
            kind,
            start,
            end,
            location: None,
            magnitude: None,
            area: None,
            detected: None,
        }
    }

    pub fn with_location(mut self, location: Location) -> Self {
        self.location = Some(location);
        self
    }

    /// Whether `t` lies in `[start, end]` (open-ended events stay active).
    pub fn is_active(&self, t: NaiveDateTime) -> bool {
        t >= self.start && self.end.is_none_or(|e| t <= e)
    }
}
