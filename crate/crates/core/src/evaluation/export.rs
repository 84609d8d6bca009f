use std::ops::Range;
use std::path::Path;

use crate::array::Array;
use crate::data::{is_weekend, TrafficDataset};
use crate::error::{Error, Result};

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

fn check_sensor(d: &TrafficDataset, s: usize) -> Result<()> {
    if s >= d.n_sensors() {
        return Err(Error::Param(format!("sensor {s} out of range for {} sensors", d.n_sensors())));
    }
    Ok(())
}

/// `timestamp,x,y` for one sensor, one row per timestep.
pub fn export_scatter(d: &TrafficDataset, sensor: usize, channel_x: &str, channel_y: &str, out: &Path) -> Result<usize> {
    check_sensor(d, sensor)?;
    let find = |name: &str| {
        d.channel_index(name)
            .ok_or_else(|| Error::Param(format!("dataset has no channel {name:?} (have {:?})", d.channel_names)))
    };
    let (cx, cy) = (find(channel_x)?, find(channel_y)?);
    let mut w = writer(out)?;
    w.write_record(["timestamp", "x", "y"]).map_err(csv_err(out))?;
    for (t, ts) in d.timestamps.iter().enumerate() {
        w.write_record([ts.to_string(), d.get(cx, sensor, t).to_string(), d.get(cy, sensor, t).to_string()])
            .map_err(csv_err(out))?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(d.n_timesteps())
}

/// `timestamp,value_i,value_j,day_class` over a range of timesteps.
pub fn export_pair_association(
    d: &TrafficDataset,
    sensor_i: usize,
    sensor_j: usize,
    range: Range<usize>,
    out: &Path,
) -> Result<usize> {
    check_sensor(d, sensor_i)?;
    check_sensor(d, sensor_j)?;
    if range.end > d.n_timesteps() {
        return Err(Error::Param(format!(
            "range {range:?} exceeds {} timesteps",
            d.n_timesteps()
        )));
    }
    let mut w = writer(out)?;
    w.write_record(["timestamp", "value_i", "value_j", "day_class"]).map_err(csv_err(out))?;
    let mut rows = 0;
    for t in range {
        let ts = d.timestamps[t];
        let class = if is_weekend(ts, d.utc_offset_seconds) { "weekend" } else { "weekday" };
        w.write_record([
            ts.to_string(),
            d.get(0, sensor_i, t).to_string(),
            d.get(0, sensor_j, t).to_string(),
            class.to_string(),
        ])
        .map_err(csv_err(out))?;
        rows += 1;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(rows)
}

/// Square matrix as CSV with sensor ids as header and first column.
pub fn export_matrix(a: &Array, ids: &[String], out: &Path) -> Result<()> {
    let n = ids.len();
    if a.shape() != [n, n] {
        return Err(Error::shape("export_matrix", a.shape(), &[n, n]));
    }
    let mut w = writer(out)?;
    let mut header = vec![String::from("sensor")];
    header.extend(ids.iter().cloned());
    w.write_record(&header).map_err(csv_err(out))?;
    for (i, id) in ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend((0..n).map(|j| a.get(&[i, j]).to_string()));
        w.write_record(&row).map_err(csv_err(out))?;
    }
    w.flush().map_err(|e| Error::io(out, e))
}
