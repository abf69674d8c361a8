//! File formats: wide panel CSV, roles sidecar, graph CSVs, event tables,
//! model JSON and result CSVs.
//!
//! Every reader reports failures with the file path and, where it applies,
//! the 1-based line number of the offending record.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::changepoint::Classification;
use crate::detection::{StatisticSeries, StatusSeries};
use crate::error::{Error, Result};
use crate::event::{EventKind, EventRecord, Location};
use crate::localization::{Edge, NetworkGraph, Node, NodeField, Provenance};
use crate::lossreg::LossRow;
use crate::panel::{SensorInfo, SensorPanel, SensorRole};
use crate::stats::{MomentEstimate, RidgePolicy};
use crate::training::{ClusterScheme, TrainedModel};

const TIMESTAMP_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M",
];

/// Parses an ISO-8601 local timestamp; a bare date means midnight.
/// A two-digit leading year (`18-01-08 13:30`) is read as 20xx.
pub fn parse_timestamp(s: &str) -> std::result::Result<NaiveDateTime, String> {
    let s = s.trim();
    if s.split('-').next().is_some_and(|y| y.len() == 2) {
        for f in ["%y-%m-%d %H:%M:%S", "%y-%m-%d %H:%M"] {
            if let Ok(t) = NaiveDateTime::parse_from_str(s, f) {
                return Ok(t);
            }
        }
        return Err(format!("unparseable timestamp '{s}'"));
    }
    for f in TIMESTAMP_FORMATS {
        if let Ok(t) = NaiveDateTime::parse_from_str(s, f) {
            return Ok(t);
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).unwrap())
        .map_err(|_| format!("unparseable timestamp '{s}'"))
}

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format("%Y-%m-%dT%H:%M:%S").to_string()
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(io_err(path))?;
    Ok(csv::Writer::from_writer(file))
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map_or(0, |p| p.line() as usize)
}

/// Header positions for named columns; `required` ones must exist.
struct Columns {
    index: BTreeMap<String, usize>,
}

impl Columns {
    fn new(path: &Path, headers: &csv::StringRecord, required: &[&str]) -> Result<Self> {
        let index: BTreeMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_ascii_lowercase(), i))
            .collect();
        for r in required {
            if !index.contains_key(*r) {
                return Err(Error::schema(path, 1, format!("missing column '{r}'")));
            }
        }
        Ok(Self { index })
    }

    /// Trimmed cell text; empty cells and absent columns give `None`.
    fn get<'r>(&self, rec: &'r csv::StringRecord, name: &str) -> Option<&'r str> {
        self.index
            .get(name)
            .and_then(|&i| rec.get(i))
            .map(str::trim)
            .filter(|s| !s.is_empty())
    }
}

fn need<'r>(path: &Path, cols: &Columns, rec: &'r csv::StringRecord, name: &str) -> Result<&'r str> {
    cols.get(rec, name)
        .ok_or_else(|| Error::schema(path, line_of(rec), format!("empty '{name}'")))
}

fn number(path: &Path, rec: &csv::StringRecord, name: &str, text: &str) -> Result<f64> {
    text.parse::<f64>()
        .map_err(|_| Error::schema(path, line_of(rec), format!("'{name}' value '{text}' is not a number")))
}

fn timestamp(path: &Path, rec: &csv::StringRecord, text: &str) -> Result<NaiveDateTime> {
    parse_timestamp(text).map_err(|m| Error::schema(path, line_of(rec), m))
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.to_ascii_lowercase().as_str(), "" | "na" | "nan" | "null")
}

/// What ingestion does with missing readings and missing rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Any missing value or skipped step is an error.
    #[default]
    Reject,
    /// Carry the last reading forward over gaps of at most `limit` steps.
    ForwardFill { limit: usize },
}

impl MissingPolicy {
    pub const DEFAULT_GAP_LIMIT: usize = 3;
}

/// Sidecar holding sensor roles and node bindings for a panel file.
pub fn roles_path(panel: &Path) -> PathBuf {
    let stem = panel.file_stem().and_then(|s| s.to_str()).unwrap_or("panel");
    panel.with_file_name(format!("{stem}.roles.csv"))
}

fn read_roles(path: &Path) -> Result<BTreeMap<String, (SensorRole, Option<String>)>> {
    let mut rdr = csv_reader(path)?;
    let cols = Columns::new(path, rdr.headers().map_err(csv_err(path))?, &["sensor_id", "role"])?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let id = need(path, &cols, &rec, "sensor_id")?;
        let role: SensorRole = need(path, &cols, &rec, "role")?
            .parse()
            .map_err(|m: String| Error::schema(path, line_of(&rec), m))?;
        let node = cols.get(&rec, "node_id").map(str::to_string);
        if out.insert(id.to_string(), (role, node)).is_some() {
            return Err(Error::schema(path, line_of(&rec), format!("sensor '{id}' listed twice")));
        }
    }
    Ok(out)
}

/// Reads a wide panel CSV (`timestamp,<sensor>,...`) and its roles sidecar
/// when present; sensors without a sidecar entry are pressure sensors.
pub fn load_panel(path: &Path, policy: MissingPolicy) -> Result<SensorPanel> {
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    if headers.get(0).map(|h| h.trim().to_ascii_lowercase()) != Some("timestamp".into()) {
        return Err(Error::schema(path, 1, "first column must be 'timestamp'"));
    }
    let ids: Vec<String> = headers.iter().skip(1).map(|h| h.trim().to_string()).collect();
    if ids.is_empty() {
        return Err(Error::schema(path, 1, "no sensor columns"));
    }
    for (j, id) in ids.iter().enumerate() {
        if id.is_empty() {
            return Err(Error::schema(path, 1, format!("column {} has an empty sensor id", j + 2)));
        }
        if ids[..j].contains(id) {
            return Err(Error::schema(path, 1, format!("duplicate sensor id '{id}'")));
        }
    }
    let s = ids.len();

    let mut times = Vec::new();
    let mut lines = Vec::new();
    let mut cells: Vec<Option<f64>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != s + 1 {
            return Err(Error::schema(
                path,
                line_of(&rec),
                format!("expected {} fields, found {}", s + 1, rec.len()),
            ));
        }
        times.push(timestamp(path, &rec, &rec[0])?);
        lines.push(line_of(&rec));
        for (j, cell) in rec.iter().skip(1).enumerate() {
            if is_missing(cell) {
                cells.push(None);
            } else {
                let v = number(path, &rec, &ids[j], cell)?;
                if !v.is_finite() {
                    return Err(Error::schema(path, line_of(&rec), format!("non-finite value for '{}'", ids[j])));
                }
                cells.push(Some(v));
            }
        }
    }
    if times.len() < 2 {
        return Err(Error::schema(path, 2, "panel needs at least two rows"));
    }

    // the step is the smallest spacing; every other spacing must be a multiple
    let mut step = None;
    for (w, l) in times.windows(2).zip(&lines[1..]) {
        let d = w[1] - w[0];
        if d <= chrono::Duration::zero() {
            return Err(Error::schema(path, *l, "timestamps are not strictly increasing"));
        }
        step = Some(step.map_or(d, |s: chrono::Duration| s.min(d)));
    }
    let step = step.unwrap();
    let mut grid = vec![times[0]];
    let mut rows: Vec<Vec<Option<f64>>> = vec![cells[..s].to_vec()];
    for t in 1..times.len() {
        let d = times[t] - times[t - 1];
        let (k, rem) = (
            d.num_milliseconds() / step.num_milliseconds(),
            d.num_milliseconds() % step.num_milliseconds(),
        );
        if rem != 0 {
            return Err(Error::schema(path, lines[t], format!("irregular time step before {}", format_timestamp(times[t]))));
        }
        for m in 1..k {
            grid.push(times[t - 1] + step * m as i32);
            rows.push(vec![None; s]);
        }
        grid.push(times[t]);
        rows.push(cells[t * s..(t + 1) * s].to_vec());
    }

    let mut values = Vec::with_capacity(grid.len() * s);
    let mut last: Vec<Option<f64>> = vec![None; s];
    let mut run = vec![0usize; s];
    for (t, row) in rows.iter().enumerate() {
        for j in 0..s {
            let v = match (row[j], policy) {
                (Some(v), _) => {
                    run[j] = 0;
                    last[j] = Some(v);
                    v
                }
                (None, MissingPolicy::Reject) => {
                    return Err(gap_error(path, &ids[j], &grid, t, &rows, j));
                }
                (None, MissingPolicy::ForwardFill { limit }) => {
                    run[j] += 1;
                    match last[j] {
                        Some(v) if run[j] <= limit => v,
                        _ => return Err(gap_error(path, &ids[j], &grid, t, &rows, j)),
                    }
                }
            };
            values.push(v);
        }
    }

    let roles_file = roles_path(path);
    let roles = if roles_file.exists() {
        read_roles(&roles_file)?
    } else {
        BTreeMap::new()
    };
    if let Some(extra) = roles.keys().find(|k| !ids.contains(k)) {
        return Err(Error::Gap {
            path: roles_file,
            message: format!("sensor '{extra}' is not a column of {}", path.display()),
        });
    }
    let sensors = ids
        .iter()
        .map(|id| match roles.get(id) {
            Some((role, node)) => SensorInfo {
                id: id.clone(),
                role: *role,
                node: node.clone(),
            },
            None => SensorInfo::pressure(id.clone()),
        })
        .collect();
    SensorPanel::new(grid, sensors, values)
}

/// Error for a run of missing values in column `j` that includes step `t`.
fn gap_error(path: &Path, id: &str, grid: &[NaiveDateTime], t: usize, rows: &[Vec<Option<f64>>], j: usize) -> Error {
    let mut a = t;
    while a > 0 && rows[a - 1][j].is_none() {
        a -= 1;
    }
    let mut b = t;
    while b + 1 < rows.len() && rows[b + 1][j].is_none() {
        b += 1;
    }
    Error::Gap {
        path: path.to_path_buf(),
        message: format!(
            "sensor '{id}' has a gap of {} steps from {} to {}",
            b - a + 1,
            format_timestamp(grid[a]),
            format_timestamp(grid[b])
        ),
    }
}

/// Writes the panel as wide CSV plus the roles sidecar.
pub fn save_panel(path: &Path, panel: &SensorPanel) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["timestamp".to_string()];
    header.extend(panel.sensor_ids().map(str::to_string));
    w.write_record(&header).map_err(csv_err(path))?;
    for (t, ts) in panel.timestamps().iter().enumerate() {
        let mut rec = vec![format_timestamp(*ts)];
        rec.extend(panel.row(t).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))?;

    let roles = roles_path(path);
    let mut w = csv_writer(&roles)?;
    w.write_record(["sensor_id", "role", "node_id"]).map_err(csv_err(&roles))?;
    for s in panel.sensors() {
        w.write_record([s.id.as_str(), &s.role.to_string(), s.node.as_deref().unwrap_or("")])
            .map_err(csv_err(&roles))?;
    }
    w.flush().map_err(io_err(&roles))
}

/// Reads `nodes.csv` (id,x,y) and `edges.csv` (id,u,v,length_m) from a
/// directory, plus `sensors.csv` (sensor_id,node_id) when present.
pub fn load_graph(dir: &Path) -> Result<NetworkGraph> {
    let np = dir.join("nodes.csv");
    let mut rdr = csv_reader(&np)?;
    let cols = Columns::new(&np, rdr.headers().map_err(csv_err(&np))?, &["id", "x", "y"])?;
    let mut nodes = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(&np))?;
        nodes.push(Node {
            id: need(&np, &cols, &rec, "id")?.to_string(),
            x: number(&np, &rec, "x", need(&np, &cols, &rec, "x")?)?,
            y: number(&np, &rec, "y", need(&np, &cols, &rec, "y")?)?,
        });
    }

    let ep = dir.join("edges.csv");
    let mut rdr = csv_reader(&ep)?;
    let cols = Columns::new(&ep, rdr.headers().map_err(csv_err(&ep))?, &["id", "u", "v", "length_m"])?;
    let mut edges = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(&ep))?;
        edges.push(Edge {
            id: need(&ep, &cols, &rec, "id")?.to_string(),
            u: need(&ep, &cols, &rec, "u")?.to_string(),
            v: need(&ep, &cols, &rec, "v")?.to_string(),
            length: number(&ep, &rec, "length_m", need(&ep, &cols, &rec, "length_m")?)?,
        });
    }
    let mut graph = NetworkGraph::new(nodes, edges).map_err(|e| Error::Graph(format!("{}: {e}", dir.display())))?;

    let sp = dir.join("sensors.csv");
    if sp.exists() {
        let mut rdr = csv_reader(&sp)?;
        let cols = Columns::new(&sp, rdr.headers().map_err(csv_err(&sp))?, &["sensor_id", "node_id"])?;
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err(&sp))?;
            let sensor = need(&sp, &cols, &rec, "sensor_id")?;
            let node = need(&sp, &cols, &rec, "node_id")?;
            graph
                .bind_sensor(sensor, node)
                .map_err(|e| Error::schema(&sp, line_of(&rec), e.to_string()))?;
        }
    }
    Ok(graph)
}

/// Binds every panel sensor that names a node; an unknown node is an
/// error naming the sensor.
pub fn bind_panel_sensors(graph: &mut NetworkGraph, sensors: &[SensorInfo]) -> Result<()> {
    for s in sensors {
        if let Some(node) = &s.node {
            graph.bind_sensor(s.id.clone(), node)?;
        }
    }
    Ok(())
}

/// Writes `nodes.csv`, `edges.csv` and `sensors.csv` into `dir`.
pub fn save_graph(dir: &Path, graph: &NetworkGraph) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let np = dir.join("nodes.csv");
    let mut w = csv_writer(&np)?;
    w.write_record(["id", "x", "y"]).map_err(csv_err(&np))?;
    for n in graph.nodes() {
        w.write_record([n.id.clone(), n.x.to_string(), n.y.to_string()])
            .map_err(csv_err(&np))?;
    }
    w.flush().map_err(io_err(&np))?;

    let ep = dir.join("edges.csv");
    let mut w = csv_writer(&ep)?;
    w.write_record(["id", "u", "v", "length_m"]).map_err(csv_err(&ep))?;
    for e in graph.edges() {
        w.write_record([e.id.clone(), e.u.clone(), e.v.clone(), e.length.to_string()])
            .map_err(csv_err(&ep))?;
    }
    w.flush().map_err(io_err(&ep))?;

    let sp = dir.join("sensors.csv");
    let mut w = csv_writer(&sp)?;
    w.write_record(["sensor_id", "node_id"]).map_err(csv_err(&sp))?;
    for (s, &i) in graph.sensor_bindings() {
        w.write_record([s.as_str(), graph.node(i).id.as_str()]).map_err(csv_err(&sp))?;
    }
    w.flush().map_err(io_err(&sp))
}

const EVENT_HEADER: [&str; 9] = [
    "id",
    "area",
    "abrupt",
    "max_size_m3h",
    "start",
    "end",
    "location",
    "detection_time",
    "kind",
];

/// Reads an event table. `id` names the pipe or node; `location` overrides
/// it (`@x:y` for coordinates). `kind` overrides the `abrupt` flag.
pub fn load_events(path: &Path) -> Result<Vec<EventRecord>> {
    let mut rdr = csv_reader(path)?;
    let cols = Columns::new(path, rdr.headers().map_err(csv_err(path))?, &["id", "start"])?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let line = line_of(&rec);
        let id = need(path, &cols, &rec, "id")?;
        let kind: EventKind = match (cols.get(&rec, "kind"), cols.get(&rec, "abrupt")) {
            (Some(k), _) | (None, Some(k)) => k.parse().map_err(|m: String| Error::schema(path, line, m))?,
            (None, None) => EventKind::Unclassified,
        };
        let start = timestamp(path, &rec, need(path, &cols, &rec, "start")?)?;
        let end = cols.get(&rec, "end").map(|s| timestamp(path, &rec, s)).transpose()?;
        if end.is_some_and(|e| e < start) {
            return Err(Error::schema(path, line, format!("event '{id}' ends before it starts")));
        }
        let mut ev = EventRecord::new(id, kind, start, end);
        ev.area = cols.get(&rec, "area").map(str::to_string);
        ev.magnitude = cols
            .get(&rec, "max_size_m3h")
            .map(|s| number(path, &rec, "max_size_m3h", s))
            .transpose()?;
        if kind != EventKind::SensorBias && ev.magnitude.is_some_and(|m| !(m > 0.0)) {
            return Err(Error::schema(path, line, format!("event '{id}' has a non-positive size")));
        }
        ev.location = Some(match cols.get(&rec, "location") {
            Some(l) => l.parse().map_err(|m: String| Error::schema(path, line, m))?,
            None => Location::Node(id.to_string()),
        });
        ev.detected = match cols.get(&rec, "detection_time") {
            Some("-") | None => None,
            Some(s) => Some(timestamp(path, &rec, s)?),
        };
        out.push(ev);
    }
    Ok(out)
}

pub fn save_events(path: &Path, events: &[EventRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(EVENT_HEADER).map_err(csv_err(path))?;
    for e in events {
        let abrupt = match e.kind {
            EventKind::Abrupt => "yes",
            EventKind::Incipient => "no",
            _ => "",
        };
        let ts = |t: Option<NaiveDateTime>| t.map(format_timestamp).unwrap_or_default();
        w.write_record([
            e.id.clone(),
            e.area.clone().unwrap_or_default(),
            abrupt.to_string(),
            e.magnitude.map(|m| m.to_string()).unwrap_or_default(),
            format_timestamp(e.start),
            ts(e.end),
            e.location.as_ref().map(|l| l.to_string()).unwrap_or_default(),
            ts(e.detected),
            e.kind.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub const MODEL_FORMAT: &str = "leakstat-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    version: u32,
    scheme: ClusterScheme,
    sensors: Vec<SensorInfo>,
    clusters: Vec<ClusterDoc>,
}

#[derive(Serialize, Deserialize)]
struct ClusterDoc {
    id: usize,
    n: usize,
    mean: Vec<f64>,
    /// Row-major.
    cov: Vec<f64>,
}

/// Writes the model as versioned JSON. Floats use shortest round-trip
/// decimal form, so reloading restores every bit.
pub fn save_model(path: &Path, model: &TrainedModel) -> Result<()> {
    let doc = ModelDoc {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        scheme: model.scheme().clone(),
        sensors: model.sensors().to_vec(),
        clusters: model
            .clusters()
            .iter()
            .map(|c| ClusterDoc {
                id: c.id,
                n: c.moments.n,
                mean: c.moments.mean.iter().copied().collect(),
                cov: c.moments.cov.transpose().iter().copied().collect(),
            })
            .collect(),
    };
    write_json(path, &doc)
}

/// Loads a model saved by [`save_model`] and rebuilds its whitening operators.
pub fn load_model(path: &Path, ridge: RidgePolicy) -> Result<TrainedModel> {
    let file = File::open(path).map_err(io_err(path))?;
    let doc: ModelDoc = serde_json::from_reader(BufReader::new(file)).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |m: String| Error::Schema {
        path: path.to_path_buf(),
        line: 0,
        message: m,
    };
    if doc.format != MODEL_FORMAT || doc.version != MODEL_VERSION {
        return Err(bad(format!(
            "unsupported model document '{}' version {}",
            doc.format, doc.version
        )));
    }
    let s = doc.sensors.len();
    let mut moments = Vec::with_capacity(doc.clusters.len());
    for (k, c) in doc.clusters.into_iter().enumerate() {
        if c.id != k {
            return Err(bad(format!("cluster {} listed at position {k}", c.id)));
        }
        if c.mean.len() != s || c.cov.len() != s * s {
            return Err(bad(format!("cluster {k} does not match {s} sensors")));
        }
        moments.push(MomentEstimate {
            mean: DVector::from_vec(c.mean),
            cov: DMatrix::from_row_slice(s, s, &c.cov),
            n: c.n,
        });
    }
    TrainedModel::from_moments(doc.scheme, doc.sensors, moments, ridge)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(io_err(path))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Statistic series with optional alarm status, one row per step.
pub fn save_stats(path: &Path, stats: &StatisticSeries, status: Option<&StatusSeries>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["timestamp", "cluster", "t2", "t2f", "ma", "wh", "status"])
        .map_err(csv_err(path))?;
    for t in 0..stats.timestamps.len() {
        w.write_record([
            format_timestamp(stats.timestamps[t]),
            stats.clusters[t].to_string(),
            stats.t2[t].to_string(),
            stats.t2f[t].to_string(),
            opt(stats.ma[t]),
            stats.wh[t].to_string(),
            status.map(|s| u8::from(s.status[t]).to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a statistics CSV back. The window is recovered from the number of
/// leading steps without a moving average.
pub fn load_stats(path: &Path) -> Result<(StatisticSeries, Option<StatusSeries>)> {
    let mut rdr = csv_reader(path)?;
    let cols = Columns::new(
        path,
        rdr.headers().map_err(csv_err(path))?,
        &["timestamp", "cluster", "t2", "t2f", "ma", "wh"],
    )?;
    let mut s = StatisticSeries {
        timestamps: Vec::new(),
        clusters: Vec::new(),
        t2: Vec::new(),
        t2f: Vec::new(),
        ma: Vec::new(),
        wh: Vec::new(),
        window: 1,
    };
    let mut status = Vec::new();
    let mut has_status = true;
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        let num = |name: &str| -> Result<f64> { number(path, &rec, name, need(path, &cols, &rec, name)?) };
        s.timestamps.push(timestamp(path, &rec, need(path, &cols, &rec, "timestamp")?)?);
        let k = need(path, &cols, &rec, "cluster")?;
        s.clusters.push(
            k.parse()
                .map_err(|_| Error::schema(path, line_of(&rec), format!("bad cluster '{k}'")))?,
        );
        s.t2.push(num("t2")?);
        s.t2f.push(num("t2f")?);
        s.ma.push(cols.get(&rec, "ma").map(|v| number(path, &rec, "ma", v)).transpose()?);
        s.wh.push(num("wh")?);
        match cols.get(&rec, "status") {
            Some("1") => status.push(true),
            Some("0") => status.push(false),
            Some(o) => return Err(Error::schema(path, line_of(&rec), format!("bad status '{o}'"))),
            None => has_status = false,
        }
    }
    s.window = s.ma.iter().take_while(|m| m.is_none()).count() + 1;
    let status = has_status.then(|| StatusSeries {
        timestamps: s.timestamps.clone(),
        status,
    });
    Ok((s, status))
}

/// Labeled change points, including removed ones (label `removed`).
pub fn save_scps(path: &Path, c: &Classification, timestamps: &[NaiveDateTime]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["index", "timestamp", "label", "p_value"]).map_err(csv_err(path))?;
    let mut rows: Vec<(usize, String, String)> = c
        .scps
        .iter()
        .map(|s| {
            let label = s.label.map(|l| l.to_string()).unwrap_or_else(|| "none".into());
            (s.index, label, s.p_value.to_string())
        })
        .collect();
    rows.extend(c.removed.iter().map(|&i| (i, "removed".to_string(), String::new())));
    rows.sort_by_key(|r| r.0);
    for (i, label, p) in rows {
        let ts = timestamps.get(i).copied().map(format_timestamp).unwrap_or_default();
        w.write_record([i.to_string(), ts, label, p]).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn save_field(path: &Path, graph: &NetworkGraph, field: &NodeField) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["node_id", "value", "provenance"]).map_err(csv_err(path))?;
    for (i, (v, p)) in field.values.iter().zip(&field.provenance).enumerate() {
        let p = match p {
            Provenance::Fixed => "fixed",
            Provenance::Interpolated => "interpolated",
        };
        w.write_record([graph.node(i).id.as_str(), &v.to_string(), p])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn save_loss(path: &Path, rows: &[LossRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["timestamp", "f", "predicted_loss", "actual_loss", "residual"])
        .map_err(csv_err(path))?;
    for r in rows {
        w.write_record([
            format_timestamp(r.timestamp),
            r.f.to_string(),
            r.predicted.to_string(),
            opt(r.actual),
            opt(r.residual),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Two-column `timestamp,<name>` series.
pub fn save_series(path: &Path, name: &str, timestamps: &[NaiveDateTime], values: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["timestamp", name]).map_err(csv_err(path))?;
    for (t, v) in timestamps.iter().zip(values) {
        w.write_record([format_timestamp(*t), v.to_string()]).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads column `name` of a CSV keyed by `timestamp`.
pub fn load_series(path: &Path, name: &str) -> Result<(Vec<NaiveDateTime>, Vec<f64>)> {
    let mut rdr = csv_reader(path)?;
    let cols = Columns::new(path, rdr.headers().map_err(csv_err(path))?, &["timestamp", name])?;
    let (mut ts, mut vs) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err(path))?;
        ts.push(timestamp(path, &rec, need(path, &cols, &rec, "timestamp")?)?);
        vs.push(number(path, &rec, name, need(path, &cols, &rec, name)?)?);
    }
    Ok((ts, vs))
}

/// Machine-readable summary written next to every command's outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub metrics: serde_json::Map<String, serde_json::Value>,
}

impl RunReport {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            tool: "leakstat".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed: None,
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            metrics: serde_json::Map::new(),
        }
    }

    pub fn input(&mut self, key: &str, path: &Path) {
        self.inputs.insert(key.into(), path.display().to_string());
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self.metrics.insert(key.into(), v);
    }
}
