//! Seeded generator of small traffic networks whose sensors each follow
//! their own daily rhythm, feed lagged deviations to their neighbours and
//! shift regime at weekends.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{day_slot, is_weekend, Edge, MetricKind, TrafficDataset, STEPS_PER_DAY, STEP_SECONDS};
use crate::error::{Error, Result};
use crate::seed::rng_for;

const MAX_GRAPH_DRAWS: u64 = 100;
const MINUTES_PER_DAY: f64 = 1440.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Topology {
    Ring,
    Grid,
    /// Each ordered pair is an edge with this probability.
    Random(f64),
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Ring => write!(f, "ring"),
            Topology::Grid => write!(f, "grid"),
            Topology::Random(p) => write!(f, "random({p})"),
        }
    }
}

impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ring" => Ok(Topology::Ring),
            "grid" => Ok(Topology::Grid),
            _ => {
                let p = s
                    .strip_prefix("random(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|p| p.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown topology {s:?}; expected ring, grid or random(p)")))?;
                if !(p > 0.0 && p <= 1.0) {
                    return Err(Error::Config(format!("random topology needs p in (0,1], got {p}")));
                }
                Ok(Topology::Random(p))
            }
        }
    }
}

impl TryFrom<String> for Topology {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Topology> for String {
    fn from(t: Topology) -> Self {
        t.to_string()
    }
}

/// Two daily peaks, as Gaussians over the minute of day.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DailyShape {
    pub morning_hour: f64,
    pub evening_hour: f64,
    pub width_minutes: f64,
    /// Height of the evening peak relative to the morning one.
    pub evening_weight: f64,
}

impl Default for DailyShape {
    fn default() -> Self {
        Self {
            morning_hour: 8.0,
            evening_hour: 17.5,
            width_minutes: 75.0,
            evening_weight: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_sensors: usize,
    pub days: usize,
    pub topology: Topology,
    pub metric_kind: MetricKind,
    pub base_level: f64,
    /// Peak-hour swing. Speed drops by it, flow rises by it.
    pub amplitude: f64,
    pub shape: DailyShape,
    /// Largest per-sensor offset of the daily peaks, minutes.
    pub phase_spread: f64,
    pub lag_min: usize,
    pub lag_max: usize,
    pub gain_min: f64,
    pub gain_max: f64,
    /// Amplitude multiplier on Saturdays and Sundays.
    pub weekend_factor: f64,
    pub noise_std: f64,
    /// Adds the other metric as an extra channel, inversely tied to the first.
    pub companion: bool,
    pub companion_base: f64,
    pub companion_amplitude: f64,
    pub start_timestamp: i64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sensors: 8,
            days: 7,
            topology: Topology::Ring,
            metric_kind: MetricKind::Speed,
            base_level: 60.0,
            amplitude: 25.0,
            shape: DailyShape::default(),
            phase_spread: 0.0,
            lag_min: 1,
            lag_max: 6,
            gain_min: 0.0,
            gain_max: 0.0,
            weekend_factor: 1.0,
            noise_std: 0.0,
            companion: false,
            companion_base: 300.0,
            companion_amplitude: 250.0,
            // Monday 2024-01-01 00:00 UTC
            start_timestamp: 1_704_067_200,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_sensors < 2 {
            return bad(format!("synthetic data needs at least 2 sensors, got {}", self.n_sensors));
        }
        if self.days == 0 {
            return bad("synthetic data needs at least one day".into());
        }
        if !(self.noise_std >= 0.0) {
            return bad(format!("noise_std must be nonnegative, got {}", self.noise_std));
        }
        if !(self.phase_spread >= 0.0) || self.phase_spread >= MINUTES_PER_DAY {
            return bad(format!("phase_spread must be in [0, 1440) minutes, got {}", self.phase_spread));
        }
        if self.lag_min == 0 || self.lag_min > self.lag_max {
            return bad(format!("need 1 ≤ lag_min ≤ lag_max, got {}..{}", self.lag_min, self.lag_max));
        }
        if !(self.gain_min <= self.gain_max) {
            return bad("gain_min must not exceed gain_max".into());
        }
        if !(self.shape.width_minutes > 0.0) {
            return bad("shape.width_minutes must be positive".into());
        }
        if !(self.weekend_factor >= 0.0) {
            return bad("weekend_factor must be nonnegative".into());
        }
        Ok(())
    }

    pub fn n_timesteps(&self) -> usize {
        self.days * STEPS_PER_DAY
    }
}

fn strongly_connected(n: usize, edges: &[(usize, usize, f64)]) -> bool {
    let reach = |forward: bool| {
        let mut adj = vec![Vec::new(); n];
        for &(a, b, _) in edges {
            if forward {
                adj[a].push(b)
            } else {
                adj[b].push(a)
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

fn distance<R: Rng>(rng: &mut R) -> f64 {
    rng.random_range(200.0..=2000.0)
}

/// Directed edges `(src, dst, metres)`; ring and grid link neighbours both
/// ways. Random graphs are redrawn until strongly connected.
pub fn generate_graph(cfg: &SynthConfig) -> Result<Vec<(usize, usize, f64)>> {
    cfg.validate()?;
    let n = cfg.n_sensors;
    let mut rng = rng_for(cfg.seed, "graph", &[]);
    let mut edges = Vec::new();
    match cfg.topology {
        Topology::Ring => {
            let links = if n == 2 { 1 } else { n };
            for i in 0..links {
                let j = (i + 1) % n;
                edges.push((i, j, distance(&mut rng)));
                edges.push((j, i, distance(&mut rng)));
            }
        }
        Topology::Grid => {
            let cols = (n as f64).sqrt().ceil() as usize;
            for i in 0..n {
                let (r, c) = (i / cols, i % cols);
                for j in [(c + 1 < cols).then(|| i + 1), Some((r + 1) * cols + c)].into_iter().flatten() {
                    if j < n {
                        edges.push((i, j, distance(&mut rng)));
                        edges.push((j, i, distance(&mut rng)));
                    }
                }
            }
        }
        Topology::Random(p) => {
            for attempt in 0..MAX_GRAPH_DRAWS {
                let mut rng = rng_for(cfg.seed, "graph", &[attempt]);
                edges.clear();
                for i in 0..n {
                    for j in 0..n {
                        if i != j && rng.random_bool(p) {
                            edges.push((i, j, distance(&mut rng)));
                        }
                    }
                }
                if strongly_connected(n, &edges) {
                    return Ok(edges);
                }
            }
            return Err(Error::Config(format!(
                "random({p}) gave no strongly connected graph on {n} sensors in {MAX_GRAPH_DRAWS} draws"
            )));
        }
    }
    if !strongly_connected(n, &edges) {
        return Err(Error::Config(format!("{} topology on {n} sensors is not connected", cfg.topology)));
    }
    Ok(edges)
}

/// Per-sensor peak offsets in minutes: a shuffled even spacing over the
/// spread plus a jitter below a quarter of the spacing, so offsets differ by
/// at least three quarters of `spread / N`.
pub fn sensor_phases(cfg: &SynthConfig) -> Vec<f64> {
    let n = cfg.n_sensors;
    let mut rng = rng_for(cfg.seed, "phase", &[]);
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(&mut rng);
    let spacing = cfg.phase_spread / n as f64;
    ranks
        .into_iter()
        .map(|r| r as f64 * spacing + rng.random_range(0.0..1.0) * spacing * 0.25)
        .collect()
}

fn circular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(MINUTES_PER_DAY);
    d.min(MINUTES_PER_DAY - d)
}

/// One day of the zero-mean profile, one value per 5-minute slot, with the
/// peaks delayed by `phase` minutes.
pub fn daily_profile(shape: &DailyShape, phase: f64) -> Vec<f64> {
    let bump = |m: f64, hour: f64| {
        let z = circular_gap(m, hour * 60.0 + phase) / shape.width_minutes;
        (-0.5 * z * z).exp()
    };
    let raw: Vec<f64> = (0..STEPS_PER_DAY)
        .map(|slot| {
            let m = (slot as i64 * STEP_SECONDS) as f64 / 60.0;
            (bump(m, shape.morning_hour) + shape.evening_weight * bump(m, shape.evening_hour)).clamp(0.0, 1.0)
        })
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.into_iter().map(|v| v - mean).collect()
}

/// Lag and gain of every edge. Gains into one sensor are scaled so their
/// absolute sum stays below 0.9.
pub fn edge_coupling(cfg: &SynthConfig, edges: &[(usize, usize, f64)]) -> Vec<(usize, f64)> {
    let mut rng = rng_for(cfg.seed, "coupling", &[]);
    let mut out: Vec<(usize, f64)> = edges
        .iter()
        .map(|_| {
            let lag = rng.random_range(cfg.lag_min..=cfg.lag_max);
            let gain = if cfg.gain_max > cfg.gain_min {
                rng.random_range(cfg.gain_min..cfg.gain_max)
            } else {
                cfg.gain_min
            };
            (lag, gain)
        })
        .collect();
    let mut inflow = vec![0.0; cfg.n_sensors];
    for (e, &(_, g)) in edges.iter().zip(&out) {
        inflow[e.1] += g.abs();
    }
    for (e, c) in edges.iter().zip(out.iter_mut()) {
        if inflow[e.1] >= 0.9 {
            c.1 *= 0.9 / inflow[e.1] * 0.999;
        }
    }
    out
}

fn coords(cfg: &SynthConfig) -> Vec<(f64, f64)> {
    let n = cfg.n_sensors;
    let (lon0, lat0) = (-118.25, 34.05);
    match cfg.topology {
        Topology::Ring => (0..n)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / n as f64;
                (lon0 + 0.05 * a.cos(), lat0 + 0.05 * a.sin())
            })
            .collect(),
        Topology::Grid => {
            let cols = (n as f64).sqrt().ceil() as usize;
            (0..n)
                .map(|i| (lon0 + 0.01 * (i % cols) as f64, lat0 + 0.01 * (i / cols) as f64))
                .collect()
        }
        Topology::Random(_) => {
            let mut rng = rng_for(cfg.seed, "coords", &[]);
            (0..n)
                .map(|_| (lon0 + rng.random_range(-0.1..0.1), lat0 + rng.random_range(-0.1..0.1)))
                .collect()
        }
    }
}

/// `x_s(t) = base + dev_s(t)` floored at 0, with
/// `dev_s(t) = ±A·w(t)·profile_s(t) + Σ_{u→s} gain·dev_u(t − lag) + noise`,
/// where `w` is the weekend factor on weekend days and 1 otherwise.
pub fn generate_traffic(cfg: &SynthConfig, edges: &[(usize, usize, f64)]) -> Result<TrafficDataset> {
    cfg.validate()?;
    let n = cfg.n_sensors;
    let k = cfg.n_timesteps();
    let sign = match cfg.metric_kind {
        MetricKind::Speed => -1.0,
        MetricKind::Flow => 1.0,
    };
    let profiles: Vec<Vec<f64>> = sensor_phases(cfg).iter().map(|&p| daily_profile(&cfg.shape, p)).collect();
    let coupling = edge_coupling(cfg, edges);
    let mut incoming: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); n];
    for (&(src, dst, _), &(lag, gain)) in edges.iter().zip(&coupling) {
        if src >= n || dst >= n {
            return Err(Error::Param(format!("edge ({src},{dst}) outside {n} sensors")));
        }
        incoming[dst].push((src, lag, gain));
    }
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(format!("noise_std: {e}")))?;
    let mut rng = rng_for(cfg.seed, "noise", &[]);
    let timestamps: Vec<i64> = (0..k as i64).map(|i| cfg.start_timestamp + i * STEP_SECONDS).collect();
    let mut dev = vec![vec![0.0; k]; n];
    for t in 0..k {
        let ts = timestamps[t];
        let slot = day_slot(ts, 0);
        let w = if is_weekend(ts, 0) { cfg.weekend_factor } else { 1.0 };
        for s in 0..n {
            let mut v = sign * cfg.amplitude * w * profiles[s][slot];
            for &(u, lag, gain) in &incoming[s] {
                if gain != 0.0 && t >= lag {
                    v += gain * dev[u][t - lag];
                }
            }
            if cfg.noise_std > 0.0 {
                v += noise.sample(&mut rng);
            }
            dev[s][t] = v;
        }
    }
    let metric: Vec<Vec<f64>> = dev
        .iter()
        .map(|d| d.iter().map(|v| (cfg.base_level + v).max(0.0)).collect())
        .collect();
    let ids: Vec<String> = (0..n).map(|i| format!("s{i:03}")).collect();
    let edge_list = edges
        .iter()
        .map(|&(a, b, d)| Edge {
            src: ids[a].clone(),
            dst: ids[b].clone(),
            distance: d,
        })
        .collect();
    let mut d = TrafficDataset::from_metric(&metric, ids, cfg.start_timestamp, cfg.metric_kind, edge_list)?;
    d.coords = Some(coords(cfg));
    if cfg.companion {
        // per-sensor slope: a unique fundamental diagram for every sensor
        let mut srng = rng_for(cfg.seed, "companion", &[]);
        let name = match cfg.metric_kind {
            MetricKind::Speed => "flow",
            MetricKind::Flow => "speed",
        };
        let series: Vec<Vec<f64>> = metric
            .iter()
            .map(|m| {
                let slope = srng.random_range(0.6..1.4);
                m.iter()
                    .map(|&v| {
                        let congestion = sign * (v - cfg.base_level) / cfg.amplitude.max(f64::MIN_POSITIVE);
                        (cfg.companion_base - slope * cfg.companion_amplitude * congestion * sign).max(0.0)
                    })
                    .collect()
            })
            .collect();
        d.push_channel(name, &series)?;
    }
    Ok(d)
}

/// Graph and traffic in one call.
pub fn generate(cfg: &SynthConfig) -> Result<TrafficDataset> {
    let edges = generate_graph(cfg)?;
    generate_traffic(cfg, &edges)
}

/// Slot of the largest reading on the first day, per sensor.
pub fn peak_slots(d: &TrafficDataset, metric_kind: MetricKind) -> Vec<usize> {
    (0..d.n_sensors())
        .map(|s| {
            let day = &d.series(0, s)[..STEPS_PER_DAY.min(d.n_timesteps())];
            let key = |v: f64| if metric_kind == MetricKind::Speed { -v } else { v };
            (0..day.len()).max_by(|&a, &b| key(day[a]).total_cmp(&key(day[b]))).unwrap_or(0)
        })
        .collect()
}
