use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::array::Array;
use crate::error::{Error, Result};

pub const STEP_SECONDS: i64 = 300;
pub const SECONDS_PER_DAY: i64 = 86_400;
pub const STEPS_PER_DAY: usize = 288;

pub const METRIC: usize = 0;
pub const TIME_OF_DAY: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Speed,
    Flow,
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MetricKind::Speed => "speed",
            MetricKind::Flow => "flow",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub distance: f64,
}

/// Multichannel sensor readings over a fixed 5-minute timeline.
///
/// `values` is `[channels, N, K]`: channel 0 is the traffic metric (NaN marks
/// a missing reading), channel 1 is the time-of-day fraction, and any further
/// channels are auxiliary series named in `channel_names`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrafficDataset {
    pub values: Array,
    pub channel_names: Vec<String>,
    pub timestamps: Vec<i64>,
    pub edges: Vec<Edge>,
    pub sensor_ids: Vec<String>,
    pub metric_kind: MetricKind,
    pub coords: Option<Vec<(f64, f64)>>,
    /// Added to epoch seconds before computing the local time of day.
    pub utc_offset_seconds: i64,
    /// Position of the first timestep in the timeline this view was cut from.
    pub offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    metric_kind: MetricKind,
    start_timestamp: i64,
    step_seconds: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coords: Option<BTreeMap<String, [f64; 2]>>,
    #[serde(default, skip_serializing_if = "is_zero")]
    utc_offset_seconds: i64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    extra_channels: Vec<String>,
}

fn is_zero(v: &i64) -> bool {
    *v == 0
}

/// Local time of day in `[0, 1)`.
pub fn time_of_day(timestamp: i64, utc_offset_seconds: i64) -> f64 {
    (timestamp + utc_offset_seconds).rem_euclid(SECONDS_PER_DAY) as f64 / SECONDS_PER_DAY as f64
}

/// 5-minute slot of the local day, `0..288`.
pub fn day_slot(timestamp: i64, utc_offset_seconds: i64) -> usize {
    ((timestamp + utc_offset_seconds).rem_euclid(SECONDS_PER_DAY) / STEP_SECONDS) as usize
}

/// True for local Saturdays and Sundays. 1970-01-01 was a Thursday.
pub fn is_weekend(timestamp: i64, utc_offset_seconds: i64) -> bool {
    let day = (timestamp + utc_offset_seconds).div_euclid(SECONDS_PER_DAY);
    let weekday = (day + 4).rem_euclid(7); // 0 = Sunday
    weekday == 0 || weekday == 6
}

impl TrafficDataset {
    /// Builds a dataset from metric readings `[N][K]`, deriving time of day.
    pub fn from_metric(
        metric: &[Vec<f64>],
        sensor_ids: Vec<String>,
        start_timestamp: i64,
        metric_kind: MetricKind,
        edges: Vec<Edge>,
    ) -> Result<Self> {
        let n = metric.len();
        if n != sensor_ids.len() {
            return Err(Error::Param(format!(
                "{n} series but {} sensor ids",
                sensor_ids.len()
            )));
        }
        let k = metric.first().map_or(0, Vec::len);
        if metric.iter().any(|s| s.len() != k) {
            return Err(Error::Param("sensor series differ in length".into()));
        }
        let timestamps: Vec<i64> = (0..k as i64).map(|i| start_timestamp + i * STEP_SECONDS).collect();
        let mut data = Vec::with_capacity(2 * n * k);
        for s in metric {
            data.extend_from_slice(s);
        }
        for _ in 0..n {
            data.extend(timestamps.iter().map(|&t| time_of_day(t, 0)));
        }
        let ds = Self {
            values: Array::new(&[2, n, k], data)?,
            channel_names: vec!["metric".into(), "time_of_day".into()],
            timestamps,
            edges,
            sensor_ids,
            metric_kind,
            coords: None,
            utc_offset_seconds: 0,
            offset: 0,
        };
        ds.check_edges()?;
        Ok(ds)
    }

    pub fn n_sensors(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn n_timesteps(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn n_channels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn get(&self, channel: usize, sensor: usize, t: usize) -> f64 {
        let (n, k) = (self.n_sensors(), self.n_timesteps());
        self.values.data()[(channel * n + sensor) * k + t]
    }

    pub fn set(&mut self, channel: usize, sensor: usize, t: usize, v: f64) {
        let (n, k) = (self.n_sensors(), self.n_timesteps());
        self.values.data_mut()[(channel * n + sensor) * k + t] = v;
    }

    /// Contiguous slice of one sensor's series on one channel.
    pub fn series(&self, channel: usize, sensor: usize) -> &[f64] {
        let (n, k) = (self.n_sensors(), self.n_timesteps());
        &self.values.data()[(channel * n + sensor) * k..(channel * n + sensor + 1) * k]
    }

    pub fn sensor_index(&self, id: &str) -> Option<usize> {
        self.sensor_ids.iter().position(|s| s == id)
    }

    /// Edges as `(src index, dst index, distance)`.
    pub fn edge_indices(&self) -> Result<Vec<(usize, usize, f64)>> {
        let index: HashMap<&str, usize> = self
            .sensor_ids
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        self.edges
            .iter()
            .map(|e| {
                let src = index.get(e.src.as_str()).copied();
                let dst = index.get(e.dst.as_str()).copied();
                match (src, dst) {
                    (Some(a), Some(b)) => Ok((a, b, e.distance)),
                    _ => Err(Error::Param(format!("edge {}→{} names an unknown sensor", e.src, e.dst))),
                }
            })
            .collect()
    }

    fn check_edges(&self) -> Result<()> {
        self.edge_indices().map(|_| ())
    }

    /// Timesteps `[start, start+len)` as a new dataset.
    pub fn slice_time(&self, start: usize, len: usize) -> Result<Self> {
        let (c, n, k) = (self.n_channels(), self.n_sensors(), self.n_timesteps());
        if start + len > k {
            return Err(Error::Param(format!("time slice {start}..{} exceeds {k}", start + len)));
        }
        let mut data = Vec::with_capacity(c * n * len);
        for row in self.values.data().chunks(k) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Ok(Self {
            values: Array::new(&[c, n, len], data)?,
            timestamps: self.timestamps[start..start + len].to_vec(),
            offset: self.offset + start,
            ..self.clone_meta()
        })
    }

    fn clone_meta(&self) -> Self {
        Self {
            values: Array::zeros(&[0]),
            channel_names: self.channel_names.clone(),
            timestamps: Vec::new(),
            edges: self.edges.clone(),
            sensor_ids: self.sensor_ids.clone(),
            metric_kind: self.metric_kind,
            coords: self.coords.clone(),
            utc_offset_seconds: self.utc_offset_seconds,
            offset: self.offset,
        }
    }

    /// Appends an auxiliary channel given as `[N][K]`.
    pub fn push_channel(&mut self, name: &str, series: &[Vec<f64>]) -> Result<()> {
        let (c, n, k) = (self.n_channels(), self.n_sensors(), self.n_timesteps());
        if series.len() != n || series.iter().any(|s| s.len() != k) {
            return Err(Error::Param(format!("channel {name} does not match [{n}, {k}]")));
        }
        let mut data = self.values.data().to_vec();
        for s in series {
            data.extend_from_slice(s);
        }
        self.values = Array::new(&[c + 1, n, k], data)?;
        self.channel_names.push(name.to_string());
        Ok(())
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|c| c == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub sensors: usize,
    pub edges: usize,
    pub timesteps: usize,
    pub mean: f64,
    pub std: f64,
    pub entries: usize,
    pub missing: usize,
}

/// Sensor/edge/timestep counts and population moments of the present metric
/// readings.
pub fn summarize(d: &TrafficDataset) -> Summary {
    // Welford
    let (mut count, mut mean, mut m2) = (0usize, 0.0, 0.0);
    let n = d.n_sensors();
    for s in 0..n {
        for &v in d.series(METRIC, s) {
            if v.is_nan() {
                continue;
            }
            count += 1;
            let delta = v - mean;
            mean += delta / count as f64;
            m2 += delta * (v - mean);
        }
    }
    let std = if count > 0 { (m2 / count as f64).sqrt() } else { f64::NAN };
    let entries = n * d.n_timesteps();
    Summary {
        sensors: n,
        edges: d.edges.len(),
        timesteps: d.n_timesteps(),
        mean: if count > 0 { mean } else { f64::NAN },
        std,
        entries,
        missing: entries - count,
    }
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_cell(path: &Path, line: usize, cell: &str) -> Result<f64> {
    let cell = cell.trim();
    if cell.is_empty() || cell.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    cell.parse::<f64>()
        .map_err(|_| format_err(path, line, format!("cannot parse {cell:?} as a number")))
}

/// Reads a `K × N` grid whose header row lists sensor ids. Returns the ids and
/// per-sensor series.
fn read_grid(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let ids: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if ids.is_empty() || ids.iter().any(String::is_empty) {
        return Err(format_err(path, 1, "header must list sensor ids"));
    }
    let mut series = vec![Vec::new(); ids.len()];
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != ids.len() {
            return Err(format_err(
                path,
                line,
                format!("expected {} cells, found {}", ids.len(), record.len()),
            ));
        }
        for (s, cell) in record.iter().enumerate() {
            series[s].push(parse_cell(path, line, cell)?);
        }
    }
    Ok((ids, series))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    format_err(path, line, e.to_string())
}

/// Loads a dataset directory holding `values.csv`, `edges.csv` and
/// `meta.json` (plus one CSV per auxiliary channel listed in the meta).
pub fn load_dataset(dir: &Path) -> Result<TrafficDataset> {
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&meta_text)
        .map_err(|e| format_err(&meta_path, e.line(), e.to_string()))?;
    if meta.step_seconds != STEP_SECONDS {
        let line = meta_text
            .lines()
            .position(|l| l.contains("step_seconds"))
            .map_or(1, |i| i + 1);
        return Err(format_err(
            &meta_path,
            line,
            format!("step_seconds must be {STEP_SECONDS}, got {}", meta.step_seconds),
        ));
    }

    let values_path = dir.join("values.csv");
    let (ids, metric) = read_grid(&values_path)?;
    let k = metric[0].len();

    let edges_path = dir.join("edges.csv");
    let edges = read_edges(&edges_path, &ids)?;

    let timestamps: Vec<i64> = (0..k as i64)
        .map(|i| meta.start_timestamp + i * STEP_SECONDS)
        .collect();
    let n = ids.len();
    let mut data = Vec::with_capacity((2 + meta.extra_channels.len()) * n * k);
    for s in &metric {
        data.extend_from_slice(s);
    }
    for _ in 0..n {
        data.extend(timestamps.iter().map(|&t| time_of_day(t, meta.utc_offset_seconds)));
    }
    let mut channel_names = vec!["metric".to_string(), "time_of_day".to_string()];
    for name in &meta.extra_channels {
        let path = dir.join(format!("{name}.csv"));
        let (extra_ids, extra) = read_grid(&path)?;
        if extra_ids != ids {
            return Err(format_err(&path, 1, "header differs from values.csv"));
        }
        if extra[0].len() != k {
            return Err(format_err(&path, k + 2, format!("expected {k} data rows")));
        }
        for s in &extra {
            data.extend_from_slice(s);
        }
        channel_names.push(name.clone());
    }

    let coords = match meta.coords {
        None => None,
        Some(map) => {
            let mut out = Vec::with_capacity(n);
            for id in &ids {
                let [lon, lat] = map.get(id).ok_or_else(|| {
                    format_err(&meta_path, 1, format!("coords missing sensor {id:?}"))
                })?;
                out.push((*lon, *lat));
            }
            Some(out)
        }
    };

    Ok(TrafficDataset {
        values: Array::new(&[channel_names.len(), n, k], data)?,
        channel_names,
        timestamps,
        edges,
        sensor_ids: ids,
        metric_kind: meta.metric_kind,
        coords,
        utc_offset_seconds: meta.utc_offset_seconds,
        offset: 0,
    })
}

fn read_edges(path: &Path, ids: &[String]) -> Result<Vec<Edge>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if header != ["src", "dst", "distance"] {
        return Err(format_err(path, 1, "header must be src,dst,distance"));
    }
    let mut edges = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 3 {
            return Err(format_err(path, line, format!("expected 3 cells, found {}", record.len())));
        }
        let src = record[0].trim().to_string();
        let dst = record[1].trim().to_string();
        for id in [&src, &dst] {
            if !ids.contains(id) {
                return Err(format_err(path, line, format!("unknown sensor {id:?}")));
            }
        }
        let distance = parse_cell(path, line, &record[2])?;
        if !(distance >= 0.0) {
            return Err(format_err(path, line, "distance must be a nonnegative number"));
        }
        edges.push(Edge { src, dst, distance });
    }
    Ok(edges)
}

fn fmt_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        // Display prints the shortest string that parses back to the same bits.
        format!("{v}")
    }
}

fn write_grid(path: &Path, ids: &[String], d: &TrafficDataset, channel: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(ids).map_err(|e| csv_err(path, e))?;
    for t in 0..d.n_timesteps() {
        let row: Vec<String> = (0..d.n_sensors()).map(|s| fmt_cell(d.get(channel, s, t))).collect();
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `d` in the directory format read by [`load_dataset`].
pub fn write_dataset(d: &TrafficDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_grid(&dir.join("values.csv"), &d.sensor_ids, d, METRIC)?;
    for (c, name) in d.channel_names.iter().enumerate().skip(2) {
        write_grid(&dir.join(format!("{name}.csv")), &d.sensor_ids, d, c)?;
    }

    let edges_path = dir.join("edges.csv");
    let mut w = csv::Writer::from_path(&edges_path).map_err(|e| csv_err(&edges_path, e))?;
    w.write_record(["src", "dst", "distance"])
        .map_err(|e| csv_err(&edges_path, e))?;
    for e in &d.edges {
        w.write_record([e.src.as_str(), e.dst.as_str(), &fmt_cell(e.distance)])
            .map_err(|er| csv_err(&edges_path, er))?;
    }
    w.flush().map_err(|e| Error::io(&edges_path, e))?;

    let meta = Meta {
        metric_kind: d.metric_kind,
        start_timestamp: d.timestamps.first().copied().unwrap_or(0),
        step_seconds: STEP_SECONDS,
        coords: d.coords.as_ref().map(|c| {
            d.sensor_ids
                .iter()
                .cloned()
                .zip(c.iter().map(|&(lon, lat)| [lon, lat]))
                .collect()
        }),
        utc_offset_seconds: d.utc_offset_seconds,
        extra_channels: d.channel_names.iter().skip(2).cloned().collect(),
    };
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dir(values: &str, edges: &str, meta: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("values.csv"), values).unwrap();
        fs::write(dir.path().join("edges.csv"), edges).unwrap();
        fs::write(dir.path().join("meta.json"), meta).unwrap();
        dir
    }

    const META: &str = r#"{"metric_kind":"speed","start_timestamp":0,"step_seconds":300}"#;

    #[test]
    fn loads_toy_shape_and_missing_cells() {
        let dir = toy_dir(
            "a,b\n1,2\n3,\n5,NaN\n7,8\n",
            "src,dst,distance\na,b,10\n",
            META,
        );
        let d = load_dataset(dir.path()).unwrap();
        assert_eq!(d.values.shape(), &[2, 2, 4]);
        assert!(d.get(0, 1, 1).is_nan() && d.get(0, 1, 2).is_nan());
        assert_eq!(d.get(1, 0, 1), 300.0 / 86400.0);
        assert_eq!(d.timestamps, vec![0, 300, 600, 900]);
    }

    #[test]
    fn unknown_sensor_in_edges_reports_line() {
        let dir = toy_dir("a,b\n1,2\n", "src,dst,distance\na,b,1\na,zz,3\n", META);
        match load_dataset(dir.path()) {
            Err(Error::Format { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("zz"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ragged_row_reports_line() {
        let dir = toy_dir("a,b\n1,2\n3\n", "src,dst,distance\n", META);
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format { line: 3, .. })));
    }

    #[test]
    fn bad_step_is_rejected() {
        for step in ["0", "-300", "600"] {
            let meta = format!(r#"{{"metric_kind":"flow","start_timestamp":0,"step_seconds":{step}}}"#);
            let dir = toy_dir("a\n1\n", "src,dst,distance\n", &meta);
            assert!(matches!(load_dataset(dir.path()), Err(Error::Format { .. })), "{step}");
        }
    }

    #[test]
    fn summarize_examples() {
        let d = TrafficDataset::from_metric(
            &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]],
            vec!["a".into(), "b".into()],
            0,
            MetricKind::Speed,
            vec![],
        )
        .unwrap();
        let s = summarize(&d);
        assert_eq!(s.entries, 6);
        assert!((s.mean - 3.5).abs() < 1e-12);
        // sqrt(35/12)
        assert!((s.std - (35.0f64 / 12.0).sqrt()).abs() < 1e-12);
        assert!((s.std - 1.7078).abs() < 1e-4);

        let c = TrafficDataset::from_metric(&[vec![5.0; 7]], vec!["a".into()], 0, MetricKind::Flow, vec![]).unwrap();
        let s = summarize(&c);
        assert_eq!((s.mean, s.std), (5.0, 0.0));
    }

    #[test]
    fn calendar_helpers() {
        // 2024-01-06 was a Saturday; 2024-01-08 a Monday.
        let saturday = 1_704_499_200;
        assert!(is_weekend(saturday, 0));
        assert!(is_weekend(saturday + 86_400, 0));
        assert!(!is_weekend(saturday + 2 * 86_400, 0));
        assert_eq!(day_slot(saturday + 3600, 0), 12);
        assert_eq!(time_of_day(saturday + 43_200, 0), 0.5);
    }
}
